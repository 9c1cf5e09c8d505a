"""
Noise densities of the IMU and ranging models, and Gaussian-mixture calibration.

All densities accept scalars or numpy arrays and return the same shape (a float for
scalar input). Gaussian CDF differences are evaluated through ``scipy.special.erf`` (or
``erfc`` when both bounds sit in one tail) and clamped at zero.
"""

import logging
import math
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
from pydantic import ConfigDict, Field, model_validator
from pydantic import ValidationError as PydanticValidationError
from scipy.special import erf, erfc
from scipy.stats import norm

from slat_bp.exceptions import ValidationError
from slat_bp.geometry import CellId, CellMap, cell_distance
from slat_bp.models import JsonModel

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)

GM_SIGMA_FLOOR = 0.05
KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-6


class ImuModel(JsonModel):
    """
    Velocity measurement model: Gaussian noise plus uniform quantization noise.

    Args:
        sigma_u: Standard deviation of the IMU measurement noise (m/s)
        D: Quantization length of the cell map (m)
        Ts: Sampling interval (s)
    """

    model_config = ConfigDict(frozen=True)

    sigma_u: float = Field(gt=0, allow_inf_nan=False)
    D: float = Field(ge=0, allow_inf_nan=False)
    Ts: float = Field(gt=0, allow_inf_nan=False)


class GmComponent(JsonModel):
    """One component of the NLOS Gaussian mixture."""

    model_config = ConfigDict(frozen=True)

    weight: float = Field(ge=0, allow_inf_nan=False)
    mean: float = Field(allow_inf_nan=False)
    sigma: float = Field(gt=0, allow_inf_nan=False)


class RangingNoiseModel(JsonModel):
    """
    Ranging error model: LOS Gaussian, NLOS Gaussian mixture and uniform obstacle bias,
    each convolved with the ``Unif(0, D*sqrt(3))`` quantization noise.

    Args:
        p_los: Probability of line of sight
        p_nlos: Probability of NLOS caused by the walls
        p_obs: Probability of NLOS caused by transient obstacles
        sigma_w0: Standard deviation of the LOS error (m)
        gm: NLOS Gaussian-mixture components
        d_max: Maximum obstacle-induced distance error (m)
        D: Quantization length (m)
    """

    model_config = ConfigDict(frozen=True)

    p_los: float = Field(ge=0, le=1)
    p_nlos: float = Field(ge=0, le=1)
    p_obs: float = Field(ge=0, le=1)
    sigma_w0: float = Field(gt=0, allow_inf_nan=False)
    gm: List[GmComponent] = Field(default_factory=list)
    d_max: float = Field(gt=0, allow_inf_nan=False)
    D: float = Field(gt=0, allow_inf_nan=False)

    @model_validator(mode='after')
    def _check_consistency(self) -> 'RangingNoiseModel':
        total = self.p_los + self.p_nlos + self.p_obs
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"p_los + p_nlos + p_obs must be 1, got {total!r}")
        if self.gm:
            gm_total = sum(c.weight for c in self.gm)
            if abs(gm_total - 1.0) > 1e-9:
                raise ValueError(f"GM weights must sum to 1, got {gm_total!r}")
        elif self.p_nlos > 0:
            raise ValueError("p_nlos > 0 requires at least one GM component")
        if not self.d_max > self.D * SQRT3:
            raise ValueError(
                f"d_max ({self.d_max}) must exceed D*sqrt(3) ({self.D * SQRT3:.6f})"
            )
        return self

    @classmethod
    def from_probabilities(
        cls,
        p_nlos: float,
        p_obs: float,
        sigma_w0: float,
        gm: Sequence[GmComponent],
        d_max: float,
        D: float,
    ) -> 'RangingNoiseModel':
        """
        Build a model with ``p_los = 1 - p_nlos - p_obs``.

        Raises:
            ValidationError: If the parameters do not give a valid model
        """
        p_los = max(0.0, 1.0 - p_nlos - p_obs)
        try:
            return cls(
                p_los=p_los,
                p_nlos=p_nlos,
                p_obs=p_obs,
                sigma_w0=sigma_w0,
                gm=list(gm),
                d_max=d_max,
                D=D,
            )
        except PydanticValidationError as e:
            raise ValidationError(f"Invalid {cls.__name__}: {e}") from e

    @classmethod
    def from_samples(
        cls,
        samples: Sequence[float],
        n_components: int,
        p_nlos: float,
        p_obs: float,
        sigma_w0: float,
        d_max: float,
        D: float,
    ) -> 'RangingNoiseModel':
        """Calibrate the NLOS mixture on ``samples`` and build the full model."""
        return cls.from_probabilities(
            p_nlos, p_obs, sigma_w0, fit_gm(samples, n_components), d_max, D
        )

    @property
    def obstacle_plateau(self) -> float:
        """Density of the obstacle term on its plateau, ``p_obs / d_max``."""
        return self.p_obs / self.d_max


def _result(values: np.ndarray, scalar: bool) -> Union[float, np.ndarray]:
    return float(values) if scalar else values


def _cdf_diff(hi: np.ndarray, lo: np.ndarray, mean: float, sigma: float) -> np.ndarray:
    """
    Phi(hi) - Phi(lo) for N(mean, sigma^2), never negative.

    When both bounds lie in the same tail the difference is taken between complementary
    error functions, so far tails keep their magnitude instead of cancelling to zero.
    """
    scale = sigma * SQRT2
    a = (hi - mean) / scale
    b = (lo - mean) / scale
    with np.errstate(over='ignore', invalid='ignore'):
        diff = np.where(
            b > 0,
            0.5 * (erfc(b) - erfc(a)),
            np.where(a < 0, 0.5 * (erfc(-a) - erfc(-b)), 0.5 * (erf(a) - erf(b))),
        )
    return np.maximum(diff, 0.0)


def imu_total_noise_pdf(model: ImuModel, u: ArrayLike) -> Union[float, np.ndarray]:
    """
    Unnormalized density of the total IMU noise ``Phi(u + D/Ts) - Phi(u - D/Ts)``.

    Integrates to ``2*D/Ts``. With ``D = 0`` the quantization term vanishes and the
    Gaussian density of the measurement noise is returned instead.
    """
    scalar = np.ndim(u) == 0
    values = np.asarray(u, dtype=np.float64)
    if model.D == 0:
        return _result(norm.pdf(values, scale=model.sigma_u), scalar)
    half_width = model.D / model.Ts
    density = _cdf_diff(values + half_width, values - half_width, 0.0, model.sigma_u)
    return _result(density, scalar)


def dynamic_weight(
    model: ImuModel,
    v: Sequence[float],
    x_t: Sequence[float],
    x_prev: Sequence[float],
) -> float:
    """
    Transition weight of moving from ``x_prev`` to ``x_t`` given the measured velocity.

    Product over the three dimensions of the IMU noise density at the velocity residual.
    """
    residual = (
        np.asarray(v, dtype=np.float64)
        - (np.asarray(x_t, dtype=np.float64) - np.asarray(x_prev, dtype=np.float64)) / model.Ts
    )
    return float(np.prod(imu_total_noise_pdf(model, residual)))


def transition_matrix(model: ImuModel, cell_map: CellMap, v: Sequence[float]) -> np.ndarray:
    """
    Transition weights for every cell pair.

    Returns:
        Array ``T`` of shape (N_c, N_c) with ``T[x, x_prev] = dynamic_weight(v, x, x_prev)``
    """
    centers = cell_map.centers
    displacement = (centers[:, None, :] - centers[None, :, :]) / model.Ts
    residual = np.asarray(v, dtype=np.float64) - displacement
    return np.prod(imu_total_noise_pdf(model, residual), axis=-1)


def obstacle_trapezoid_pdf(D: float, d_max: float, w: ArrayLike) -> Union[float, np.ndarray]:
    """
    Density of the obstacle bias ``Unif(0, d_max)`` convolved with ``Unif(0, D*sqrt(3))``.

    Raises:
        ValidationError: Unless ``d_max > D*sqrt(3) > 0``
    """
    ramp = D * SQRT3
    if not (ramp > 0 and d_max > ramp):
        raise ValidationError(
            f"Trapezoid requires d_max > D*sqrt(3) > 0, got D={D}, d_max={d_max}"
        )
    scalar = np.ndim(w) == 0
    values = np.asarray(w, dtype=np.float64)
    top = 1.0 / d_max
    end = ramp + d_max
    density = np.where(
        (values > 0) & (values < ramp),
        values / (d_max * ramp),
        np.where(
            (values >= ramp) & (values <= d_max),
            top,
            np.where((values > d_max) & (values < end), (end - values) / (d_max * ramp), 0.0),
        ),
    )
    return _result(density, scalar)


def ranging_total_noise_pdf(model: RangingNoiseModel, w: ArrayLike) -> Union[float, np.ndarray]:
    """
    Density of the total ranging error (measurement noise plus quantization noise).

    Sum of the LOS CDF-difference term, the NLOS mixture CDF-difference terms and the
    obstacle trapezoid weighted by ``p_obs``.
    """
    scalar = np.ndim(w) == 0
    values = np.asarray(w, dtype=np.float64)
    ramp = model.D * SQRT3
    lower = values - ramp

    density = (model.p_los / ramp) * _cdf_diff(values, lower, 0.0, model.sigma_w0)
    if model.p_nlos > 0:
        mixture = np.zeros_like(values)
        for component in model.gm:
            mixture = mixture + component.weight * _cdf_diff(
                values, lower, component.mean, component.sigma
            )
        density = density + (model.p_nlos / ramp) * mixture
    if model.p_obs > 0:
        density = density + model.p_obs * obstacle_trapezoid_pdf(model.D, model.d_max, values)
    return _result(density, scalar)


def _floored(density: np.ndarray, w: np.ndarray, tail_floor: float) -> np.ndarray:
    if tail_floor <= 0:
        return density
    return np.where(w > 0, np.maximum(density, tail_floor), density)


def likelihood(
    model: RangingNoiseModel,
    cell_map: CellMap,
    d: float,
    x_cell: CellId,
    z_cell: CellId,
    tail_floor: float = 0.0,
) -> float:
    """
    Likelihood of the measured distance ``d`` for target cell ``x_cell`` and sensor cell
    ``z_cell``.

    Args:
        tail_floor: Lowest likelihood of a positive distance error (1/m); 0 gives the
            plain ranging density

    Raises:
        ValidationError: If ``d`` is not finite or ``tail_floor`` is negative
        CellNotFoundError: If either cell is invalid
    """
    _check_range(d, tail_floor)
    w = np.asarray(d - cell_distance(cell_map, x_cell, z_cell))
    return float(_floored(ranging_total_noise_pdf(model, w), w, tail_floor))


def likelihood_matrix(
    model: RangingNoiseModel,
    cell_map: CellMap,
    d: float,
    tail_floor: float = 0.0,
) -> np.ndarray:
    """
    Likelihood of ``d`` for every (target cell, sensor cell) pair, shape (N_c, N_c).

    With a positive ``tail_floor`` a range longer than a cell distance never weighs less
    than the floor, however far beyond the support of the ranging density it lies.
    """
    _check_range(d, tail_floor)
    w = d - cell_map.distances
    return _floored(ranging_total_noise_pdf(model, w), w, tail_floor)


def _check_range(d: float, tail_floor: float) -> None:
    if not math.isfinite(d):
        raise ValidationError(f"Measured distance must be finite, got {d}")
    if not (math.isfinite(tail_floor) and tail_floor >= 0):
        raise ValidationError(f"tail_floor must be finite and nonnegative, got {tail_floor}")


def _farthest_point_seeds(samples: np.ndarray, n_components: int) -> np.ndarray:
    first = samples[np.argmin(np.abs(samples - samples.mean()))]
    seeds = [first]
    nearest = (samples - first) ** 2
    for _ in range(1, n_components):
        candidate = samples[np.argmax(nearest)]
        seeds.append(candidate)
        nearest = np.minimum(nearest, (samples - candidate) ** 2)
    return np.array(seeds, dtype=np.float64)


def fit_gm(
    samples: Sequence[float],
    n_components: int,
    sigma_floor: float = GM_SIGMA_FLOOR,
    max_iter: int = KMEANS_MAX_ITER,
    tol: float = KMEANS_TOL,
) -> List[GmComponent]:
    """
    Fit a one-dimensional Gaussian mixture with k-means.

    Seeds are chosen deterministically by farthest-point selection starting from the
    sample closest to the mean. Each cluster becomes one component with the cluster
    fraction as weight, the cluster mean and the cluster sample standard deviation
    (floored at ``sigma_floor``).

    Args:
        samples: Distance-error samples in meters
        n_components: Number of mixture components
        sigma_floor: Lower bound for every component sigma
        max_iter: Maximum number of Lloyd iterations
        tol: Relative change of the within-cluster sum of squares that stops iterating

    Returns:
        Components sorted by mean; weights sum to 1

    Raises:
        ValidationError: On empty/non-finite samples or an impossible component count
    """
    data = np.asarray(samples, dtype=np.float64).ravel()
    if data.size == 0:
        raise ValidationError("Cannot fit a Gaussian mixture to an empty sample set")
    if not np.all(np.isfinite(data)):
        raise ValidationError("Samples must be finite")
    if not isinstance(n_components, (int, np.integer)) or n_components < 1:
        raise ValidationError(f"n_components must be a positive integer, got {n_components!r}")
    if n_components > data.size:
        raise ValidationError(
            f"n_components ({n_components}) exceeds the number of samples ({data.size})"
        )
    if n_components > np.unique(data).size:
        raise ValidationError(
            f"n_components ({n_components}) exceeds the number of distinct samples"
        )

    centers = _farthest_point_seeds(data, n_components)
    previous = math.inf
    iteration, inertia = 0, math.nan
    for iteration in range(max_iter):
        labels = np.argmin(np.abs(data[:, None] - centers[None, :]), axis=1)
        inertia = float(np.sum((data - centers[labels]) ** 2))
        counts = np.bincount(labels, minlength=n_components)
        sums = np.bincount(labels, weights=data, minlength=n_components)
        occupied = counts > 0
        centers = np.where(occupied, sums / np.maximum(counts, 1), centers)
        if previous == 0.0 or (
            math.isfinite(previous) and abs(previous - inertia) <= tol * previous
        ):
            break
        previous = inertia
    logger.debug("k-means stopped after %d iterations (inertia %.6g)", iteration + 1, inertia)

    labels = np.argmin(np.abs(data[:, None] - centers[None, :]), axis=1)
    components = []
    for j in range(n_components):
        members = data[labels == j]
        if members.size == 0:
            components.append(GmComponent(weight=0.0, mean=float(centers[j]), sigma=sigma_floor))
            continue
        sigma = float(members.std(ddof=1)) if members.size > 1 else 0.0
        components.append(
            GmComponent(
                weight=members.size / data.size,
                mean=float(members.mean()),
                sigma=max(sigma, sigma_floor),
            )
        )
    return sorted(components, key=lambda c: c.mean)


def load_samples(path: Union[str, Path]) -> np.ndarray:
    """
    Read a sample database: plain text, one distance-error sample (m) per line.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValidationError: If a line is not a finite number
    """
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"Sample database not found: {path}")
    try:
        samples = np.loadtxt(file_path, dtype=np.float64, ndmin=1)
    except ValueError as e:
        raise ValidationError(f"{path}: invalid sample database: {e}") from e
    if not np.all(np.isfinite(samples)):
        raise ValidationError(f"{path}: samples must be finite")
    logger.info("Loaded %d samples from %s", samples.size, path)
    return samples


def save_samples(path: Union[str, Path], samples: Sequence[float]) -> None:
    """Write samples one per line."""
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(file_path, np.asarray(samples, dtype=np.float64), fmt='%.9g')
    logger.info("Wrote %d samples to %s", len(samples), path)
