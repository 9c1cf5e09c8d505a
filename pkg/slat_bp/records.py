"""
JSON and JSON-lines records exchanged with other tools: belief snapshots and slot inputs.
"""

import logging
from pathlib import Path
from typing import Iterable, List, Tuple, Union

from pydantic import Field

from slat_bp.engine import EngineState, SlotInput
from slat_bp.exceptions import ValidationError
from slat_bp.models import JsonModel
from slat_bp.pmf import Pmf
from slat_bp.validators import RecordValidator

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class BeliefSnapshot(JsonModel):
    """
    Beliefs of the target and every sensor at slot ``t``.

    Args:
        t: Slot index
        target: Target belief, one weight per cell
        sensors: One belief per sensor, each with one weight per cell
    """

    t: int = Field(ge=0)
    target: List[float]
    sensors: List[List[float]] = Field(default_factory=list)

    @classmethod
    def from_state(cls, state: EngineState) -> 'BeliefSnapshot':
        return cls(
            t=state.t,
            target=state.target_belief.to_list(),
            sensors=[b.to_list() for b in state.sensor_beliefs],
        )

    def to_pmfs(self) -> Tuple[Pmf, List[Pmf]]:
        """
        Convert to ``(target belief, sensor beliefs)``.

        Raises:
            ValidationError: If a belief is not a finite nonnegative vector
        """
        target = Pmf(self.target)
        sensors = [Pmf(weights) for weights in self.sensors]
        for n, belief in enumerate(sensors):
            if belief.n_cells != target.n_cells:
                raise ValidationError(
                    f"Sensor {n} belief has {belief.n_cells} cells, target has {target.n_cells}"
                )
        return target, sensors


def _read_lines(path: PathLike, what: str) -> List[Tuple[int, str]]:
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"{what} file not found: {path}")
    lines = file_path.read_text(encoding='utf-8').splitlines()
    return [(number, line) for number, line in enumerate(lines, start=1) if line.strip()]


def read_slot_inputs(path: PathLike) -> List[SlotInput]:
    """
    Read measurement slots from a JSON-lines file, one ``SlotInput`` per line.

    Blank lines are skipped.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValidationError: If a line is not a valid slot; the message names the line
    """
    slots = []
    for number, line in _read_lines(path, 'Slot input'):
        slots.append(
            RecordValidator.validate_record(
                lambda line=line: SlotInput.model_validate_json(line), str(path), number
            )
        )
    logger.info("Loaded %d slots from %s", len(slots), path)
    return slots


def _write_lines(path: PathLike, records: Iterable[JsonModel]) -> int:
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with file_path.open('w', encoding='utf-8') as f:
        for record in records:
            f.write(record.model_dump_json())
            f.write('\n')
            count += 1
    return count


def write_slot_inputs(path: PathLike, slots: Iterable[SlotInput]) -> None:
    count = _write_lines(path, slots)
    logger.info("Wrote %d slots to %s", count, path)


def write_snapshots(path: PathLike, states: Iterable[EngineState]) -> None:
    """Write one ``BeliefSnapshot`` line per engine state."""
    count = _write_lines(path, (BeliefSnapshot.from_state(s) for s in states))
    logger.info("Wrote %d belief snapshots to %s", count, path)


def read_snapshots(path: PathLike) -> List[BeliefSnapshot]:
    """
    Read a JSON-lines file of belief snapshots.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValidationError: If a line is not a valid snapshot
    """
    snapshots = [
        RecordValidator.validate_record(
            lambda line=line: BeliefSnapshot.model_validate_json(line), str(path), number
        )
        for number, line in _read_lines(path, 'Belief snapshot')
    ]
    logger.info("Loaded %d belief snapshots from %s", len(snapshots), path)
    return snapshots
