"""
Real-time belief propagation for simultaneous sensor localization and target tracking.

The target cell ``x_t`` and the static sensor cells ``z_n`` are discrete variables over
the cells of a ``CellMap``. Each slot the engine

1. computes sensor-to-target messages from the range likelihoods and the sensors'
   previous beliefs, and the target-to-target message from the IMU velocity,
2. multiplies them into the new target belief,
3. sends each measuring sensor the product of all other incoming target messages
   (the cavity) weighted by its range likelihood,
4. multiplies that message into the sensor's belief.

Messages are never sent backward in time. Every sum runs over the active cells of
its source belief only (see ``active_cells``); ``epsilon_m = 0`` keeps all cells
with positive weight, which gives the exact sums.
"""

import dataclasses
import logging
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from slat_bp.exceptions import BeliefCollapseError, ValidationError
from slat_bp.geometry import CellMap, Position3
from slat_bp.models import JsonModel
from slat_bp.noise import ImuModel, RangingNoiseModel, likelihood_matrix, transition_matrix
from slat_bp.pmf import Pmf, active_cells, knn_estimate
from slat_bp.validators import RecordValidator

logger = logging.getLogger(__name__)

# below this the linear-domain product is recomputed in the log domain
UNDERFLOW_LIMIT = 1e-300


class Mode(str, Enum):
    """Which messages the engine exchanges."""

    SLAT = 'slat'
    TRACKING_ONLY = 'tracking'
    LOCALIZATION_ONLY = 'localization'
    DEAD_RECKONING = 'dead_reckoning'


class RangeMeasurement(BaseModel):
    """Bias-corrected distance (m) measured by one sensor."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    sensor: int = Field(ge=0)
    d: float = Field(ge=0, allow_inf_nan=False)


class SlotInput(JsonModel):
    """
    Evidence of one time slot.

    Args:
        t: Optional slot index (informational)
        velocity: IMU velocity (m/s), or None when the IMU did not report
        ranges: Distances from the sensors that measured the target in this slot
    """

    model_config = ConfigDict(frozen=True)

    t: Optional[int] = None
    velocity: Optional[Tuple[float, float, float]] = None
    ranges: List[RangeMeasurement] = Field(default_factory=list)

    @field_validator('velocity')
    @classmethod
    def _check_velocity(cls, value):
        if value is None:
            return value
        return tuple(RecordValidator.finite_vector(value, 3, 'velocity'))


@dataclasses.dataclass(frozen=True, eq=False)
class EngineState:
    """
    Beliefs after slot ``t`` plus everything needed to run the next slot.

    ``operations`` counts the (source cell, destination cell) pairs visited by all
    message sums so far. ``tail_floor`` bounds the range likelihood of positive distance
    errors from below (see ``likelihood_matrix``).
    """

    target_belief: Pmf
    sensor_beliefs: Tuple[Pmf, ...]
    t: int
    mode: Mode
    epsilon_m: float
    k: int
    imu: ImuModel
    ranging: RangingNoiseModel
    cell_map: CellMap
    operations: int = 0
    tail_floor: float = 0.0

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_beliefs)

    def target_estimate(self) -> Position3:
        return knn_estimate(self.target_belief, self.cell_map, self.k)

    def sensor_estimates(self) -> List[Position3]:
        return [knn_estimate(b, self.cell_map, self.k) for b in self.sensor_beliefs]


def _check_prior(prior: Pmf, cell_map: CellMap, name: str) -> Pmf:
    if prior.n_cells != cell_map.n_cells:
        raise ValidationError(
            f"{name} has {prior.n_cells} cells, map has {cell_map.n_cells}"
        )
    if not prior.total > 0:
        raise ValidationError(f"{name} sums to zero")
    return prior.normalized()


def init(
    cell_map: CellMap,
    imu: ImuModel,
    ranging: RangingNoiseModel,
    target_prior: Pmf,
    sensor_priors: Sequence[Pmf],
    mode: Mode = Mode.SLAT,
    epsilon_m: float = 0.05,
    k: int = 2,
    tail_floor: float = 0.0,
) -> EngineState:
    """
    Initialize the beliefs with the normalized priors at ``t = 0``.

    Raises:
        ValidationError: On priors that do not match the map or sum to zero, or on
            ``epsilon_m``, ``k`` or ``tail_floor`` outside their ranges
    """
    if not 0 <= epsilon_m < 1:
        raise ValidationError(f"epsilon_m must be in [0, 1), got {epsilon_m}")
    if not 1 <= k <= cell_map.n_cells:
        raise ValidationError(f"k must be in [1, {cell_map.n_cells}], got {k}")
    if not (np.isfinite(tail_floor) and tail_floor >= 0):
        raise ValidationError(f"tail_floor must be finite and nonnegative, got {tail_floor}")
    return EngineState(
        target_belief=_check_prior(target_prior, cell_map, 'target prior'),
        sensor_beliefs=tuple(
            _check_prior(p, cell_map, f"sensor {n} prior") for n, p in enumerate(sensor_priors)
        ),
        t=0,
        mode=Mode(mode),
        epsilon_m=epsilon_m,
        k=k,
        imu=imu,
        ranging=ranging,
        cell_map=cell_map,
        tail_floor=float(tail_floor),
    )


def _pruned_sum(potential: np.ndarray, source: Pmf, epsilon_m: float) -> Tuple[np.ndarray, int]:
    """``sum_s potential[:, s] * source(s)`` over the active cells of ``source``."""
    active = active_cells(source, epsilon_m)
    message = potential[:, active] @ source.weights[active]
    return message, active.size * potential.shape[0]


def _scaled(message: np.ndarray) -> np.ndarray:
    peak = message.max()
    return message / peak if peak > 0 else message


def _combine(factors: Iterable[np.ndarray], n_cells: int) -> np.ndarray:
    """Elementwise product of max-scaled factors, falling back to logs on underflow."""
    factors = list(factors)
    if not factors:
        return np.ones(n_cells)
    product = np.prod(factors, axis=0)
    if product.max() >= UNDERFLOW_LIMIT:
        return product / product.max()
    with np.errstate(divide='ignore'):
        log_product = np.sum(np.log(factors), axis=0)
    peak = log_product.max()
    if not np.isfinite(peak):
        return np.zeros(n_cells)
    logger.debug("Product of %d messages underflowed; recomputed in log domain", len(factors))
    return np.exp(log_product - peak)


def sensor_to_target_message(state: EngineState, sensor: int, d: float) -> Pmf:
    """
    Message from sensor ``sensor`` to the target for measured distance ``d``.

    ``m(x) = sum_z likelihood(d, x, z) * M_n(z)`` over the active cells of the sensor's
    current belief; returned max-scaled (all-zero if the range is impossible).
    """
    _check_sensor(state, sensor)
    potential = likelihood_matrix(state.ranging, state.cell_map, d, state.tail_floor)
    message, _ = _pruned_sum(potential, state.sensor_beliefs[sensor], state.epsilon_m)
    return Pmf(_scaled(message))


def target_transition_message(state: EngineState, velocity: Sequence[float]) -> Pmf:
    """
    Message from the previous target variable: ``m(x) = sum_x' T(v; x, x') * M(x')``
    over the active cells of the current target belief; returned max-scaled.
    """
    potential = transition_matrix(state.imu, state.cell_map, velocity)
    message, _ = _pruned_sum(potential, state.target_belief, state.epsilon_m)
    return Pmf(_scaled(message))


def _check_sensor(state: EngineState, sensor: int) -> None:
    if not 0 <= sensor < state.n_sensors:
        raise ValidationError(f"Sensor {sensor} not in 0..{state.n_sensors - 1}")


def _check_slot(state: EngineState, slot: SlotInput) -> List[Tuple[int, float]]:
    seen = set()
    for measurement in slot.ranges:
        _check_sensor(state, measurement.sensor)
        if measurement.sensor in seen:
            raise ValidationError(f"Sensor {measurement.sensor} reported twice in one slot")
        seen.add(measurement.sensor)
    return sorted((m.sensor, m.d) for m in slot.ranges)


def step(state: EngineState, slot: SlotInput) -> EngineState:
    """
    Advance the beliefs by one slot.

    Without a velocity the target-to-target message is uniform; without ranges only the
    transition message updates the target (dead reckoning). Tracking-only mode never
    updates the sensors; localization-only mode additionally ignores the velocity;
    dead-reckoning mode ignores all ranges.

    Args:
        state: Beliefs after slot ``t``
        slot: Evidence of slot ``t + 1``

    Returns:
        New state at ``t + 1``; ``state`` itself is never modified

    Raises:
        ValidationError: On unknown or repeated sensor ids
        BeliefCollapseError: If an updated belief has no positive weight
    """
    ranges = _check_slot(state, slot)
    t = state.t + 1
    n_cells = state.cell_map.n_cells
    mode = state.mode
    operations = 0

    if mode == Mode.DEAD_RECKONING:
        ranges = []

    if mode == Mode.LOCALIZATION_ONLY or slot.velocity is None:
        transition = np.ones(n_cells)
    else:
        potential = transition_matrix(state.imu, state.cell_map, slot.velocity)
        transition, count = _pruned_sum(potential, state.target_belief, state.epsilon_m)
        transition = _scaled(transition)
        operations += count
        if not transition.max() > 0:
            raise BeliefCollapseError('target', t, 'velocity inconsistent with the target belief')

    potentials = []
    messages = []
    for sensor, d in ranges:
        potential = likelihood_matrix(state.ranging, state.cell_map, d, state.tail_floor)
        message, count = _pruned_sum(potential, state.sensor_beliefs[sensor], state.epsilon_m)
        operations += count
        if not message.max() > 0:
            raise BeliefCollapseError(
                'target', t, f"range {d:.3f} m from sensor {sensor} has zero likelihood"
            )
        potentials.append(potential)
        messages.append(_scaled(message))

    target = _combine([transition] + messages, n_cells)
    if not target.max() > 0:
        raise BeliefCollapseError('target', t, 'incoming messages have disjoint support')
    target_belief = Pmf(target / target.sum())

    sensor_beliefs = list(state.sensor_beliefs)
    if mode == Mode.SLAT:
        for i, (sensor, _) in enumerate(ranges):
            cavity = _combine([transition] + messages[:i] + messages[i + 1:], n_cells)
            if not cavity.max() > 0:
                raise BeliefCollapseError(f"sensor {sensor}", t, 'cavity has no support')
            to_sensor, count = _pruned_sum(
                potentials[i].T, Pmf(cavity / cavity.sum()), state.epsilon_m
            )
            operations += count
            updated = state.sensor_beliefs[sensor].weights * _scaled(to_sensor)
            if not updated.max() > 0:
                raise BeliefCollapseError(
                    f"sensor {sensor}", t, 'target message has disjoint support'
                )
            sensor_beliefs[sensor] = Pmf(updated / updated.sum())

    logger.debug(
        "Slot %d: %d ranges, %d message operations (%s)", t, len(ranges), operations, mode.value
    )
    return dataclasses.replace(
        state,
        target_belief=target_belief,
        sensor_beliefs=tuple(sensor_beliefs),
        t=t,
        operations=state.operations + operations,
    )


def run_slots(state: EngineState, slots: Iterable[SlotInput]) -> List[EngineState]:
    """Apply ``step`` to every slot in order and return every intermediate state."""
    states = []
    for slot in slots:
        state = step(state, slot)
        states.append(state)
    return states
