"""
Discretized environment: cells, their centers and extents, and the quantization length D.
"""

import json
import logging
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, TypeAdapter, field_validator
from pydantic import ValidationError as PydanticValidationError
from scipy.spatial.distance import cdist

from slat_bp.exceptions import CellNotFoundError, ValidationError
from slat_bp.validators import RecordValidator

logger = logging.getLogger(__name__)

CellId = int


class Position3(NamedTuple):
    """Cartesian position in meters."""

    x: float
    y: float
    z: float


class CellRecord(BaseModel):
    """One entry of a cell map file: ``{id, center: [x, y, z], extent: [dx, dy, dz]}``."""

    model_config = ConfigDict(extra='forbid')

    id: int
    center: List[float]
    extent: Optional[List[float]] = None

    @field_validator('center')
    @classmethod
    def _check_center(cls, value: List[float]) -> List[float]:
        return list(RecordValidator.finite_vector(value, 3, 'center'))

    @field_validator('extent')
    @classmethod
    def _check_extent(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is None:
            return value
        return list(RecordValidator.nonnegative_vector(value, 3, 'extent'))


_RECORDS_ADAPTER = TypeAdapter(List[CellRecord])


def compute_D(cell_map: 'CellMap') -> float:
    """
    Edge of the circumscribed cube bounding every cell: max over cells and dimensions.

    Args:
        cell_map: Cell map with per-cell extents

    Returns:
        D in meters

    Raises:
        ValidationError: If the map has no cells
    """
    extents = cell_map.extents
    if extents.size == 0:
        raise ValidationError("Cannot compute D of an empty cell map")
    return float(extents.max())


class CellMap:
    """
    Immutable set of cells with centers and per-dimension extents.

    Args:
        centers: (N_c, 3) cell centers in meters
        extents: (N_c, 3) maximum distance per dimension inside each cell, in meters

    Raises:
        ValidationError: If the arrays are empty, misshaped, non-finite or negative
    """

    def __init__(self, centers: Sequence[Sequence[float]], extents: Sequence[Sequence[float]]):
        centers_arr = np.array(centers, dtype=np.float64)
        extents_arr = np.array(extents, dtype=np.float64)
        if centers_arr.ndim != 2 or centers_arr.shape[1] != 3 or centers_arr.shape[0] < 1:
            raise ValidationError("Cell map needs at least one cell with a 3D center")
        if extents_arr.shape != centers_arr.shape:
            raise ValidationError("Cell extents must match centers in shape")
        if not np.all(np.isfinite(centers_arr)) or not np.all(np.isfinite(extents_arr)):
            raise ValidationError("Cell centers and extents must be finite")
        if np.any(extents_arr < 0):
            raise ValidationError("Cell extents must be nonnegative")

        distances = cdist(centers_arr, centers_arr)

        for array in (centers_arr, extents_arr, distances):
            array.setflags(write=False)
        self._centers = centers_arr
        self._extents = extents_arr
        self._distances = distances
        # recomputed from the extents, never taken from input
        self._D = compute_D(self)

    @property
    def n_cells(self) -> int:
        return self._centers.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return self._centers

    @property
    def extents(self) -> np.ndarray:
        return self._extents

    @property
    def distances(self) -> np.ndarray:
        """Pairwise center distances, shape (N_c, N_c)."""
        return self._distances

    @property
    def D(self) -> float:
        return self._D

    def __len__(self) -> int:
        return self.n_cells

    def check_cell(self, cell: CellId) -> CellId:
        """
        Validate a cell id.

        Raises:
            CellNotFoundError: If ``cell`` is not in ``[0, N_c)``
        """
        if isinstance(cell, (bool, np.bool_)) or not isinstance(cell, (int, np.integer)):
            raise CellNotFoundError(f"Cell id must be an integer, got {cell!r}")
        if not 0 <= cell < self.n_cells:
            raise CellNotFoundError(f"Cell {cell} not in map with {self.n_cells} cells")
        return int(cell)

    def center(self, cell: CellId) -> Position3:
        """Center of ``cell`` as a Position3."""
        return Position3(*(float(v) for v in self._centers[self.check_cell(cell)]))

    def nearest_cell(self, position: Sequence[float]) -> CellId:
        """Cell whose center is closest to ``position``; lower id wins ties."""
        point = np.asarray(position, dtype=np.float64)
        dist = np.sum((self._centers - point) ** 2, axis=1)
        return int(np.argmin(dist))

    @classmethod
    def from_records(
        cls,
        records: Sequence[CellRecord],
        default_extent: Optional[float] = None,
    ) -> 'CellMap':
        """
        Build a map from cell records.

        Args:
            records: Cell records; ids must be unique and cover ``0..N_c-1``
            default_extent: Extent used for every dimension of records without one

        Returns:
            CellMap ordered by cell id

        Raises:
            ValidationError: On duplicate/missing ids or missing extents without a default
        """
        if not records:
            raise ValidationError("Cell map has no cells")
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise ValidationError("Cell ids must be unique")
        if sorted(ids) != list(range(len(ids))):
            raise ValidationError(f"Cell ids must cover 0..{len(ids) - 1}")

        ordered = sorted(records, key=lambda r: r.id)
        extents = []
        for record in ordered:
            if record.extent is not None:
                extents.append(record.extent)
            elif default_extent is not None:
                extents.append([default_extent] * 3)
            else:
                raise ValidationError(
                    f"Cell {record.id} has no extent and no default extent is configured"
                )
        return cls([r.center for r in ordered], extents)

    @classmethod
    def from_file(
        cls, path: Union[str, Path], default_extent: Optional[float] = None
    ) -> 'CellMap':
        """
        Read a cell map JSON file (array of ``{id, center, extent}`` records).

        Raises:
            FileNotFoundError: If the file doesn't exist
            ValidationError: If a record or the map is invalid
        """
        file_path = Path(path)
        if not file_path.exists():
            raise FileNotFoundError(f"Cell map file not found: {path}")
        try:
            records = _RECORDS_ADAPTER.validate_json(file_path.read_text(encoding='utf-8'))
        except PydanticValidationError as e:
            raise ValidationError(f"{path}: invalid cell map: {e}") from e
        cell_map = cls.from_records(records, default_extent)
        logger.info(
            "Loaded cell map with %d cells (D=%.3f m) from %s", len(cell_map), cell_map.D, path
        )
        return cell_map

    def to_records(self) -> List[CellRecord]:
        return [
            CellRecord(id=i, center=center.tolist(), extent=extent.tolist())
            for i, (center, extent) in enumerate(zip(self._centers, self._extents))
        ]

    def to_file(self, path: Union[str, Path]) -> None:
        """Write the map as a UTF-8 JSON array of records."""
        file_path = Path(path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        payload = [record.model_dump() for record in self.to_records()]
        file_path.write_text(json.dumps(payload, indent=2), encoding='utf-8')
        logger.info("Wrote cell map with %d cells to %s", len(self), path)


def cell_distance(cell_map: CellMap, a: CellId, b: CellId) -> float:
    """
    Euclidean distance between the centers of two cells.

    Raises:
        CellNotFoundError: If either cell id is invalid
    """
    return float(cell_map.distances[cell_map.check_cell(a), cell_map.check_cell(b)])
