"""
Beliefs and messages over the cells of a map, with pruning and kNN estimation.
"""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from slat_bp.exceptions import ValidationError
from slat_bp.geometry import CellId, CellMap, Position3
from slat_bp.validators import RecordValidator


@dataclass(frozen=True, eq=False)
class Pmf:
    """
    Nonnegative weight per cell. Weights need not sum to one; ``normalized()`` gives the
    probability view.

    Args:
        weights: One weight per cell, finite and nonnegative
    """

    weights: np.ndarray

    def __post_init__(self):
        array = RecordValidator.weights(self.weights, 'Pmf').copy()
        array.setflags(write=False)
        object.__setattr__(self, 'weights', array)

    @property
    def n_cells(self) -> int:
        return self.weights.size

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def normalized(self) -> 'Pmf':
        """
        Probability view of this Pmf.

        Raises:
            ValidationError: If every weight is zero
        """
        total = self.total
        if not total > 0:
            raise ValidationError("Cannot normalize a Pmf without positive weight")
        return Pmf(self.weights / total)

    def to_list(self) -> List[float]:
        return self.weights.tolist()

    @classmethod
    def delta(cls, n_cells: int, cell: CellId) -> 'Pmf':
        """All mass on ``cell``."""
        if not 0 <= cell < n_cells:
            raise ValidationError(f"Cell {cell} outside 0..{n_cells - 1}")
        weights = np.zeros(n_cells)
        weights[cell] = 1.0
        return cls(weights)

    @classmethod
    def uniform(cls, n_cells: int) -> 'Pmf':
        if n_cells < 1:
            raise ValidationError("A Pmf needs at least one cell")
        return cls(np.full(n_cells, 1.0 / n_cells))

    @classmethod
    def gaussian(cls, cell_map: CellMap, mean: Sequence[float], sigma: float) -> 'Pmf':
        """
        Isotropic Gaussian ``N(mean, sigma^2 I)`` evaluated at the cell centers and
        normalized.

        Raises:
            ValidationError: If ``sigma`` is not positive
        """
        if not sigma > 0:
            raise ValidationError(f"Gaussian prior needs sigma > 0, got {sigma}")
        offset = cell_map.centers - np.asarray(mean, dtype=np.float64)
        log_weights = -np.sum(offset * offset, axis=1) / (2.0 * sigma * sigma)
        weights = np.exp(log_weights - log_weights.max())
        return cls(weights / weights.sum())


def active_cells(belief: Pmf, epsilon_m: float) -> np.ndarray:
    """
    Cells whose normalized belief is strictly above ``epsilon_m / N_c``.

    Args:
        belief: Source belief of a message sum
        epsilon_m: Belief threshold in ``[0, 1)``; 0 keeps every cell with positive weight

    Returns:
        Sorted array of cell ids
    """
    if not 0 <= epsilon_m < 1:
        raise ValidationError(f"epsilon_m must be in [0, 1), got {epsilon_m}")
    total = belief.total
    if not total > 0:
        return np.empty(0, dtype=np.intp)
    threshold = epsilon_m / belief.n_cells
    return np.flatnonzero(belief.weights / total > threshold)


def knn_estimate(belief: Pmf, cell_map: CellMap, k: int) -> Position3:
    """
    Belief-weighted mean of the centers of the ``k`` highest-belief cells.

    ``k = 1`` is the MAP cell center, ``k = N_c`` the MMSE estimate. Ties in the top-k
    selection go to the lower cell id.

    Raises:
        ValidationError: If ``k`` is outside ``[1, N_c]`` or the belief is all-zero
    """
    if belief.n_cells != cell_map.n_cells:
        raise ValidationError(
            f"Belief has {belief.n_cells} cells, map has {cell_map.n_cells}"
        )
    if not 1 <= k <= cell_map.n_cells:
        raise ValidationError(f"k must be in [1, {cell_map.n_cells}], got {k}")
    if not belief.total > 0:
        raise ValidationError("Cannot estimate a position from an all-zero belief")

    order = np.argsort(-belief.weights, kind='stable')[:k]
    weights = belief.weights[order]
    estimate = weights @ cell_map.centers[order] / weights.sum()
    return Position3(*(float(v) for v in estimate))


def estimate_cell(belief: Pmf, cell_map: CellMap, k: int) -> CellId:
    """Cell closest to the kNN estimate (lower id on ties)."""
    return cell_map.nearest_cell(knn_estimate(belief, cell_map, k))
