"""
Scenario configuration and synthetic scenario generation.

A scenario is a corridor of cells, a target walking down and back along it, static
sensors deployed in random cells and the velocity and range measurements they produce.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ConfigDict, Field, model_validator
from pydantic import ValidationError as PydanticValidationError

from slat_bp.engine import Mode, RangeMeasurement, SlotInput
from slat_bp.exceptions import ConfigurationError, ValidationError
from slat_bp.geometry import CellId, CellMap
from slat_bp.models import JsonModel
from slat_bp.noise import (
    SQRT3,
    GmComponent,
    ImuModel,
    RangingNoiseModel,
    fit_gm,
    load_samples,
)
from slat_bp.pmf import Pmf

logger = logging.getLogger(__name__)

START_CELL = 0

# generating mixture of the synthesized NLOS database: positive multipath biases of a
# few meters, rarely above 15 m
DEFAULT_NLOS_GM = (
    GmComponent(weight=0.35, mean=0.8, sigma=0.3),
    GmComponent(weight=0.25, mean=2.0, sigma=0.6),
    GmComponent(weight=0.20, mean=3.8, sigma=1.0),
    GmComponent(weight=0.12, mean=6.5, sigma=1.5),
    GmComponent(weight=0.08, mean=10.5, sigma=2.5),
)
NLOS_DB_SIZE = 1164
MAX_REJECTION_ROUNDS = 100


class ScenarioConfig(JsonModel):
    """
    Parameters of a simulated scenario and of the engines run on it.

    Fields accept their symbol names (``N_c``, ``N_s``, ``sigma_S``, ...) as aliases.
    Defaults reproduce the reference tunnel setup.

    Args:
        n_cells: Number of corridor cells (ignored when ``map_path`` is set)
        n_sensors: Number of sensors
        n_slots: Number of time slots
        Ts: Sampling interval (s)
        sigma_s: Spread of the sensor position priors (m)
        report_sigma: Spread of the reported sensor locations around the true cell
            centers (m); None uses ``sigma_s``, 0 reports the true centers
        p_nlos: Probability of wall-induced NLOS per link and slot
        p_obs: Probability of obstacle-induced NLOS per link and slot
        sigma_u: IMU noise standard deviation (m/s)
        sigma_w0: LOS ranging noise standard deviation (m)
        d_th: Sensing radius (m)
        d_max: Maximum obstacle-induced error (m); defaults to ``d_th``
        D: Quantization length (m); defaults to the map's
        k: kNN parameter of the estimates
        epsilon_m: Belief threshold of message pruning
        tail_floor: Least likelihood of a range longer than a cell distance; None uses the
            obstacle plateau ``p_obs / d_max`` of the fitted ranging model, 0 disables it
        n_mc: Number of Monte-Carlo runs
        seed: Root seed; see ``cli.resolve_seed`` for the fallbacks
        modes: Engine modes compared in a batch
        p_outlier: Probability that a range is contaminated by an outlier
        d_outlier: Distance added by an outlier (m)
        map_path: Cell map file used instead of the generated corridor
        nlos_db_path: NLOS error sample file used instead of a synthesized one
        nlos_gm: Mixture the NLOS database is synthesized from
        nlos_db_size: Number of synthesized NLOS samples
        gm_components: Number of mixture components fitted to the NLOS database
        pitch: Corridor cell pitch (m)
        jitter: Maximum lateral offset of corridor cells (m)
        threads: Worker threads of a batch; None uses the machine's parallelism
    """

    model_config = ConfigDict(frozen=True)

    n_cells: int = Field(default=44, ge=1, alias='N_c')
    n_sensors: int = Field(default=25, ge=0, alias='N_s')
    n_slots: int = Field(default=40, ge=1, alias='N_T')
    Ts: float = Field(default=1.0, gt=0, allow_inf_nan=False)
    sigma_s: float = Field(default=6.0, gt=0, allow_inf_nan=False, alias='sigma_S')
    report_sigma: Optional[float] = Field(default=None, ge=0, allow_inf_nan=False)
    p_nlos: float = Field(default=0.17, ge=0, le=1)
    p_obs: float = Field(default=0.03, ge=0, le=1)
    sigma_u: float = Field(default=0.5, ge=0, allow_inf_nan=False)
    sigma_w0: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    d_th: float = Field(default=30.0, gt=0, allow_inf_nan=False)
    d_max: Optional[float] = Field(default=None, gt=0, allow_inf_nan=False, alias='D_max')
    D: Optional[float] = Field(default=None, ge=0, allow_inf_nan=False)
    k: int = Field(default=2, ge=1)
    epsilon_m: float = Field(default=0.05, ge=0, lt=1, alias='epsilon_M')
    tail_floor: Optional[float] = Field(default=None, ge=0, allow_inf_nan=False)
    n_mc: int = Field(default=100, ge=1, alias='N_MC')
    seed: Optional[int] = Field(default=None, ge=0)
    modes: List[Mode] = Field(
        default_factory=lambda: [Mode.SLAT, Mode.TRACKING_ONLY, Mode.LOCALIZATION_ONLY],
        min_length=1,
    )
    p_outlier: float = Field(default=0.0, ge=0, le=1, alias='P_o')
    d_outlier: float = Field(default=30.0, ge=0, allow_inf_nan=False, alias='d_o')
    map_path: Optional[str] = None
    nlos_db_path: Optional[str] = None
    nlos_gm: Optional[List[GmComponent]] = None
    nlos_db_size: int = Field(default=NLOS_DB_SIZE, ge=1)
    gm_components: int = Field(default=5, ge=1, alias='N_M')
    pitch: float = Field(default=5.0, gt=0, allow_inf_nan=False)
    jitter: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    threads: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode='after')
    def _check_probabilities(self) -> 'ScenarioConfig':
        if self.p_nlos + self.p_obs > 1.0 + 1e-12:
            raise ValueError(
                f"p_nlos + p_obs must not exceed 1, got {self.p_nlos + self.p_obs!r}"
            )
        if len(set(self.modes)) != len(self.modes):
            raise ValueError("modes must not repeat")
        return self

    @property
    def p_los(self) -> float:
        return max(0.0, 1.0 - self.p_nlos - self.p_obs)

    @property
    def max_error(self) -> float:
        return self.d_th if self.d_max is None else self.d_max

    @property
    def placement_error(self) -> float:
        return self.sigma_s if self.report_sigma is None else self.report_sigma

    def likelihood_floor(self, ranging: RangingNoiseModel) -> float:
        """Configured ``tail_floor``, or the obstacle plateau of ``ranging``."""
        return ranging.obstacle_plateau if self.tail_floor is None else self.tail_floor

    def quantization(self, cell_map: CellMap) -> float:
        """Configured ``D``, or the map's when none is configured."""
        return cell_map.D if self.D is None else self.D

    def updated(self, **changes) -> 'ScenarioConfig':
        """
        Copy with some fields replaced and the result validated again.

        Raises:
            ValidationError: If the changed configuration is invalid
        """
        try:
            return type(self).model_validate({**self.model_dump(), **changes})
        except PydanticValidationError as e:
            raise ValidationError(f"Invalid configuration change {changes}: {e}") from e


class GroundTruth(JsonModel):
    """
    True cells of a scenario. The target starts in ``START_CELL`` at slot 0.

    Args:
        sensor_cells: Cell of every sensor
        target_cells: Cell of the target at slots ``1..N_T``
    """

    model_config = ConfigDict(frozen=True)

    sensor_cells: List[int]
    target_cells: List[int]


@dataclass(frozen=True)
class Environment:
    """Everything a batch of runs shares: the map, the NLOS database and the models."""

    cell_map: CellMap
    nlos_db: np.ndarray
    imu: ImuModel
    ranging: RangingNoiseModel


def generate_corridor_map(
    n_cells: int,
    pitch: float = 5.0,
    jitter: float = 1.0,
    rng: Optional[np.random.Generator] = None,
) -> CellMap:
    """
    Straight chain of cells along x with a random lateral offset per cell.

    Args:
        n_cells: Number of cells
        pitch: Distance between consecutive cells along x (m); also every cell extent
        jitter: Maximum absolute lateral offset (m)
        rng: Random generator for the offsets; a fresh unseeded one if None

    Raises:
        ValidationError: On a non-positive cell count or pitch, or a negative jitter
    """
    if n_cells < 1:
        raise ValidationError(f"Corridor needs at least one cell, got {n_cells}")
    if not pitch > 0:
        raise ValidationError(f"Pitch must be positive, got {pitch}")
    if not jitter >= 0:
        raise ValidationError(f"Jitter must be nonnegative, got {jitter}")
    rng = np.random.default_rng() if rng is None else rng

    centers = np.zeros((n_cells, 3))
    centers[:, 0] = np.arange(n_cells) * pitch
    centers[:, 1] = rng.uniform(-jitter, jitter, size=n_cells)
    return CellMap(centers, np.full((n_cells, 3), pitch))


def check_track_fits(n_cells: int, n_slots: int) -> None:
    """
    Raises:
        ConfigurationError: If the down-and-back track cannot be laid on ``n_cells``
    """
    turn = n_slots // 2 + 1
    if 2 * turn - 1 > n_cells - 1:
        raise ConfigurationError(
            f"{n_slots} slots need at least {2 * turn} cells for the outbound leg, "
            f"map has {n_cells}"
        )
    if n_cells - 1 - n_slots < 0:
        raise ConfigurationError(
            f"{n_slots} slots need at least {n_slots + 1} cells for the return leg, "
            f"map has {n_cells}"
        )


def generate_track(
    config: ScenarioConfig,
    cell_map: CellMap,
    rng: np.random.Generator,
    eta: Union[None, int, Sequence[int]] = None,
) -> List[CellId]:
    """
    Target cells for slots ``1..N_T``.

    Outbound the target is at index ``2t + eta``, after the turn slot ``N_T // 2 + 1``
    at ``2(N_c - 1 - t) + eta``, with ``eta`` drawn uniformly from {-1, 0, 1} per slot.
    Indices are clamped into the map.

    Args:
        config: Scenario configuration
        cell_map: Cells of the corridor, ordered along it
        rng: Random generator for ``eta``
        eta: Fixed offsets (one per slot, or one for all) instead of random ones

    Raises:
        ConfigurationError: If the map is too small for the number of slots
    """
    n_cells, n_slots = cell_map.n_cells, config.n_slots
    check_track_fits(n_cells, n_slots)
    if eta is None:
        offsets = rng.integers(-1, 2, size=n_slots)
    else:
        offsets = np.broadcast_to(np.asarray(eta, dtype=np.int64), (n_slots,))

    t = np.arange(1, n_slots + 1)
    turn = n_slots // 2 + 1
    index = np.where(t <= turn, 2 * t, 2 * (n_cells - 1 - t)) + offsets
    return [int(i) for i in np.clip(index, 0, n_cells - 1)]


def deploy_sensors(
    config: ScenarioConfig,
    cell_map: CellMap,
    rng: np.random.Generator,
) -> Tuple[List[CellId], List[Pmf]]:
    """
    Put each sensor in a distinct random cell and build its position prior.

    The prior is a Gaussian with spread ``sigma_s`` around the reported location. The
    report misses the center of the sensor's true cell by an isotropic Gaussian offset of
    spread ``placement_error``, so with ``report_sigma=0`` it is the true center.

    Returns:
        ``(sensor_cells, sensor_priors)``

    Raises:
        ConfigurationError: If there are more sensors than cells
    """
    if config.n_sensors > cell_map.n_cells:
        raise ConfigurationError(
            f"Cannot deploy {config.n_sensors} sensors in {cell_map.n_cells} cells"
        )
    cells = [int(c) for c in rng.choice(cell_map.n_cells, size=config.n_sensors, replace=False)]
    reported = cell_map.centers[cells] + rng.normal(
        0.0, config.placement_error, size=(len(cells), 3)
    )
    priors = [Pmf.gaussian(cell_map, location, config.sigma_s) for location in reported]
    return cells, priors


def synthesize_measurements(
    config: ScenarioConfig,
    truth: GroundTruth,
    cell_map: CellMap,
    nlos_db: Optional[Sequence[float]],
    rng: np.random.Generator,
    D: Optional[float] = None,
) -> List[SlotInput]:
    """
    Velocity and range measurements of every slot.

    The velocity is the true displacement over ``Ts`` plus ``Unif(-D/Ts, D/Ts)`` and
    ``N(0, sigma_u^2)`` per dimension. A sensor ranges iff its true distance is below
    ``d_th``; the range adds ``Unif(0, D*sqrt(3))`` and one of a LOS Gaussian error, a
    database NLOS error or a ``Unif(0, d_max)`` obstacle error, plus ``d_outlier`` with
    probability ``p_outlier``. Ranges are clamped at zero.

    Args:
        config: Scenario configuration
        truth: True sensor and target cells
        cell_map: Cell map of the truth
        nlos_db: NLOS error samples (m)
        rng: Random generator
        D: Quantization length; defaults to ``config.quantization(cell_map)``

    Raises:
        ConfigurationError: If ``p_nlos > 0`` and the NLOS database is empty
    """
    samples = np.asarray([] if nlos_db is None else nlos_db, dtype=np.float64)
    if config.p_nlos > 0 and samples.size == 0:
        raise ConfigurationError("p_nlos > 0 requires a non-empty NLOS database")
    D = config.quantization(cell_map) if D is None else D
    for cell in list(truth.sensor_cells) + list(truth.target_cells):
        cell_map.check_cell(cell)

    sensor_cells = np.asarray(truth.sensor_cells, dtype=np.intp)
    branch_p = [config.p_los, config.p_nlos, config.p_obs]
    branch_p = np.asarray(branch_p) / sum(branch_p)
    half_width = D / config.Ts

    slots = []
    previous = START_CELL
    for t, cell in enumerate(truth.target_cells, start=1):
        displacement = cell_map.centers[cell] - cell_map.centers[previous]
        velocity = (
            displacement / config.Ts
            + rng.uniform(-half_width, half_width, size=3)
            + rng.normal(0.0, config.sigma_u, size=3)
        )

        distances = cell_map.distances[cell, sensor_cells]
        ranges = []
        for sensor in np.flatnonzero(distances < config.d_th):
            d = distances[sensor] + rng.uniform(0.0, D * SQRT3)
            branch = rng.choice(3, p=branch_p)
            if branch == 0:
                d += rng.normal(0.0, config.sigma_w0)
            elif branch == 1:
                d += samples[rng.integers(samples.size)]
            else:
                d += rng.uniform(0.0, config.max_error)
            if rng.random() < config.p_outlier:
                d += config.d_outlier
            ranges.append(RangeMeasurement(sensor=int(sensor), d=max(0.0, float(d))))

        slots.append(SlotInput(t=t, velocity=tuple(float(v) for v in velocity), ranges=ranges))
        previous = cell
    return slots


def synthesize_nlos_db(
    gm: Sequence[GmComponent],
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Draw ``n`` nonnegative NLOS errors from a Gaussian mixture by rejection.

    Raises:
        ValidationError: On ``n < 1``, an empty or weightless mixture, or a mixture that
            yields too few nonnegative samples
    """
    if n < 1:
        raise ValidationError(f"NLOS database needs at least one sample, got {n}")
    weights = np.asarray([c.weight for c in gm], dtype=np.float64)
    if weights.size == 0 or not weights.sum() > 0:
        raise ValidationError("NLOS mixture has no weighted component")
    weights = weights / weights.sum()
    means = np.asarray([c.mean for c in gm])
    sigmas = np.asarray([c.sigma for c in gm])

    accepted = []
    remaining = n
    for _ in range(MAX_REJECTION_ROUNDS):
        component = rng.choice(weights.size, size=remaining, p=weights)
        draws = rng.normal(means[component], sigmas[component])
        kept = draws[draws >= 0]
        accepted.append(kept)
        remaining -= kept.size
        if remaining == 0:
            return np.concatenate(accepted)
    raise ValidationError(
        f"NLOS mixture produced only {n - remaining} nonnegative samples of {n} "
        f"after {MAX_REJECTION_ROUNDS} rounds"
    )


def build_cell_map(config: ScenarioConfig, rng: np.random.Generator) -> CellMap:
    """
    The configured map file, or a generated corridor.

    Raises:
        ConfigurationError: If the map file does not have ``n_cells`` cells
    """
    if config.map_path is None:
        return generate_corridor_map(config.n_cells, config.pitch, config.jitter, rng)
    cell_map = CellMap.from_file(config.map_path, default_extent=config.pitch)
    if cell_map.n_cells != config.n_cells:
        raise ConfigurationError(
            f"{config.map_path} has {cell_map.n_cells} cells, config says {config.n_cells}"
        )
    return cell_map


def build_nlos_db(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """The configured NLOS sample file, or a database synthesized from ``nlos_gm``."""
    if config.nlos_db_path is not None:
        return load_samples(config.nlos_db_path)
    gm = DEFAULT_NLOS_GM if config.nlos_gm is None else config.nlos_gm
    return synthesize_nlos_db(gm, config.nlos_db_size, rng)


def build_noise_models(
    config: ScenarioConfig,
    cell_map: CellMap,
    nlos_db: Sequence[float],
) -> Tuple[ImuModel, RangingNoiseModel]:
    """
    IMU and ranging models of the engines; the NLOS mixture is fitted to ``nlos_db``.

    Raises:
        ConfigurationError: If the configuration does not give valid models
    """
    D = config.quantization(cell_map)
    try:
        imu = ImuModel(sigma_u=config.sigma_u, D=D, Ts=config.Ts)
        gm = fit_gm(nlos_db, config.gm_components) if config.p_nlos > 0 else []
        ranging = RangingNoiseModel.from_probabilities(
            config.p_nlos, config.p_obs, config.sigma_w0, gm, config.max_error, D
        )
    except ValueError as e:
        raise ConfigurationError(f"Cannot build noise models: {e}") from e
    return imu, ranging


def build_environment(
    config: ScenarioConfig,
    map_rng: np.random.Generator,
    db_rng: np.random.Generator,
) -> Environment:
    """Map, NLOS database and fitted noise models shared by every run of a batch."""
    cell_map = build_cell_map(config, map_rng)
    nlos_db = build_nlos_db(config, db_rng)
    imu, ranging = build_noise_models(config, cell_map, nlos_db)
    logger.info(
        "Environment: %d cells (D=%.3f m), %d NLOS samples, %d mixture components",
        cell_map.n_cells,
        imu.D,
        nlos_db.size,
        len(ranging.gm),
    )
    return Environment(cell_map=cell_map, nlos_db=nlos_db, imu=imu, ranging=ranging)
