"""
Tests for the belief propagation engine.
"""

import itertools

import numpy as np
import pytest
from scipy.special import logsumexp

from slat_bp import (
    BeliefCollapseError,
    CellMap,
    ImuModel,
    Mode,
    Pmf,
    RangeMeasurement,
    RangingNoiseModel,
    SlotInput,
    ValidationError,
    init,
    run_slots,
    sensor_to_target_message,
    step,
    target_transition_message,
)
from slat_bp.engine import UNDERFLOW_LIMIT, _combine
from slat_bp.noise import likelihood_matrix, transition_matrix
from tests.conftest import TUNNEL_GM


def slot(velocity=None, **ranges) -> SlotInput:
    """Build a slot from ``s<n>=d`` keyword ranges."""
    return SlotInput(
        velocity=velocity,
        ranges=[RangeMeasurement(sensor=int(k[1:]), d=d) for k, d in ranges.items()],
    )


def random_instance(rng: np.random.Generator, n_cells: int):
    """Random planar map with D = 2 and matching noise models."""
    centers = np.zeros((n_cells, 3))
    centers[:, :2] = rng.uniform(0.0, 20.0, size=(n_cells, 2))
    cell_map = CellMap(centers, np.full((n_cells, 3), 2.0))
    imu = ImuModel(sigma_u=1.0, D=2.0, Ts=1.0)
    ranging = RangingNoiseModel.from_probabilities(0.17, 0.03, 1.0, TUNNEL_GM, 30.0, 2.0)
    return cell_map, imu, ranging


def random_slots(rng: np.random.Generator, n_sensors: int, n_slots: int):
    slots = []
    for _ in range(n_slots):
        velocity = None if rng.random() < 0.2 else tuple(rng.uniform(-5.0, 5.0, 3))
        sensors = [n for n in range(n_sensors) if rng.random() < 0.7]
        ranges = [RangeMeasurement(sensor=n, d=float(rng.uniform(0.0, 20.0))) for n in sensors]
        slots.append(SlotInput(velocity=velocity, ranges=ranges))
    return slots


def log_weights(weights: np.ndarray) -> np.ndarray:
    with np.errstate(divide='ignore'):
        return np.log(weights)


def forward_filter(cell_map, imu, ranging, prior, sensor_cells, slots):
    """Grid-based HMM forward filter with known sensor cells, in the log domain."""
    log_alpha = log_weights(prior / prior.sum())
    beliefs = []
    for s in slots:
        if s.velocity is None:
            log_pred = np.zeros(cell_map.n_cells)
        else:
            log_t = log_weights(transition_matrix(imu, cell_map, s.velocity))
            log_pred = logsumexp(log_t + log_alpha[None, :], axis=1)
        for m in s.ranges:
            log_pred = log_pred + log_weights(
                likelihood_matrix(ranging, cell_map, m.d)[:, sensor_cells[m.sensor]]
            )
        log_alpha = log_pred - logsumexp(log_pred)
        beliefs.append(np.exp(log_alpha))
    return beliefs


@pytest.mark.parametrize("mode", [Mode.SLAT, Mode.TRACKING_ONLY])
def test_delta_sensor_priors_match_forward_filter(mode: Mode):
    """Test target beliefs against an HMM forward filter on random instances."""
    rng = np.random.default_rng(2024)
    for _ in range(25):
        n_cells = int(rng.integers(2, 9))
        n_sensors = int(rng.integers(1, 4))
        n_slots = int(rng.integers(1, 7))
        cell_map, imu, ranging = random_instance(rng, n_cells)
        sensor_cells = rng.integers(0, n_cells, size=n_sensors)
        prior = rng.uniform(0.1, 1.0, n_cells)
        slots = random_slots(rng, n_sensors, n_slots)

        state = init(
            cell_map,
            imu,
            ranging,
            Pmf(prior),
            [Pmf.delta(n_cells, int(c)) for c in sensor_cells],
            mode=mode,
            epsilon_m=0.0,
        )
        states = run_slots(state, slots)
        expected = forward_filter(cell_map, imu, ranging, prior, sensor_cells, slots)
        for got, want in zip(states, expected):
            assert np.max(np.abs(got.target_belief.weights - want)) < 1e-9
            for n, belief in enumerate(got.sensor_beliefs):
                assert belief.to_list() == Pmf.delta(n_cells, int(sensor_cells[n])).to_list()


def test_single_slot_matches_brute_force_marginals():
    """Test one slot against marginals of the full joint by enumeration."""
    rng = np.random.default_rng(99)
    n_cells, n_sensors = 4, 2
    for _ in range(10):
        cell_map, imu, ranging = random_instance(rng, n_cells)
        target_prior = rng.uniform(0.1, 1.0, n_cells)
        sensor_priors = rng.uniform(0.1, 1.0, (n_sensors, n_cells))
        s = SlotInput(
            velocity=tuple(rng.uniform(-5.0, 5.0, 3)),
            ranges=[
                RangeMeasurement(sensor=n, d=float(rng.uniform(0.0, 20.0))) for n in range(2)
            ],
        )

        log_t = log_weights(transition_matrix(imu, cell_map, s.velocity))
        log_l = [log_weights(likelihood_matrix(ranging, cell_map, m.d)) for m in s.ranges]
        log_joint = np.full((n_cells,) * 4, -np.inf)
        for x0, x1, z0, z1 in itertools.product(range(n_cells), repeat=4):
            log_joint[x0, x1, z0, z1] = (
                np.log(target_prior[x0])
                + np.log(sensor_priors[0, z0])
                + np.log(sensor_priors[1, z1])
                + log_t[x1, x0]
                + log_l[0][x1, z0]
                + log_l[1][x1, z1]
            )
        log_joint -= logsumexp(log_joint)
        marginal_x1 = np.exp(logsumexp(log_joint, axis=(0, 2, 3)))
        marginal_z0 = np.exp(logsumexp(log_joint, axis=(0, 1, 3)))
        marginal_z1 = np.exp(logsumexp(log_joint, axis=(0, 1, 2)))

        state = init(
            cell_map,
            imu,
            ranging,
            Pmf(target_prior),
            [Pmf(p) for p in sensor_priors],
            epsilon_m=0.0,
        )
        after = step(state, s)
        assert np.max(np.abs(after.target_belief.weights - marginal_x1)) < 1e-9
        assert np.max(np.abs(after.sensor_beliefs[0].weights - marginal_z0)) < 1e-9
        assert np.max(np.abs(after.sensor_beliefs[1].weights - marginal_z1)) < 1e-9


@pytest.fixture
def line_state(line_map: CellMap, tunnel_imu: ImuModel, tunnel_ranging: RangingNoiseModel):
    """Target known in cell 0, two sensors with Gaussian priors around cells 1 and 3."""
    return init(
        line_map,
        tunnel_imu,
        tunnel_ranging,
        Pmf.delta(5, 0),
        [
            Pmf.gaussian(line_map, line_map.centers[1], 6.0),
            Pmf.gaussian(line_map, line_map.centers[3], 6.0),
        ],
    )


def test_beliefs_stay_normalized(line_state):
    """Test that every belief sums to one after every step."""
    slots = [
        slot((5.0, 0.0, 0.0), s0=3.0),
        slot((5.0, 0.0, 0.0), s0=2.0, s1=9.0),
        slot(None, s1=4.0),
    ]
    for state in run_slots(line_state, slots):
        assert state.target_belief.total == pytest.approx(1.0, abs=1e-9)
        for belief in state.sensor_beliefs:
            assert belief.total == pytest.approx(1.0, abs=1e-9)
    assert [s.t for s in run_slots(line_state, slots)] == [1, 2, 3]


def test_step_does_not_modify_state(line_state):
    """Test that step returns a new state and leaves its input alone."""
    before = line_state.target_belief.to_list()
    after = step(line_state, slot((5.0, 0.0, 0.0), s0=3.0))
    assert after is not line_state
    assert line_state.t == 0
    assert line_state.target_belief.to_list() == before


def test_step_is_deterministic(line_state):
    """Test identical inputs give identical beliefs."""
    s = slot((4.0, 0.5, 0.0), s0=6.0, s1=12.0)
    first, second = step(line_state, s), step(line_state, s)
    assert first.target_belief.to_list() == second.target_belief.to_list()
    assert [b.to_list() for b in first.sensor_beliefs] == [
        b.to_list() for b in second.sensor_beliefs
    ]


def test_without_ranges_only_transition_updates(line_state):
    """Test dead reckoning through a slot without ranges."""
    velocity = (5.0, 0.0, 0.0)
    after = step(line_state, slot(velocity))
    expected = target_transition_message(line_state, velocity).normalized()
    assert np.allclose(after.target_belief.weights, expected.weights)
    for b_after, b_before in zip(after.sensor_beliefs, line_state.sensor_beliefs):
        assert b_after.to_list() == b_before.to_list()


def test_without_velocity_or_ranges_target_is_uniform(line_state):
    """Test an empty slot gives a uniform target belief."""
    after = step(line_state, slot())
    assert np.allclose(after.target_belief.weights, 0.2)


def test_tracking_only_keeps_sensor_priors(line_map, tunnel_imu, tunnel_ranging, line_state):
    """Test that tracking-only mode never updates the sensors."""
    state = init(
        line_map,
        tunnel_imu,
        tunnel_ranging,
        line_state.target_belief,
        line_state.sensor_beliefs,
        mode=Mode.TRACKING_ONLY,
    )
    after = run_slots(state, [slot((5.0, 0.0, 0.0), s0=3.0, s1=9.0)] * 3)[-1]
    for b_after, b_before in zip(after.sensor_beliefs, state.sensor_beliefs):
        assert b_after.to_list() == b_before.to_list()


def test_localization_only_ignores_velocity(line_map, tunnel_imu, tunnel_ranging, line_state):
    """Test that localization-only mode uses the ranges and ignores the velocity."""
    state = init(
        line_map,
        tunnel_imu,
        tunnel_ranging,
        line_state.target_belief,
        line_state.sensor_beliefs,
        mode=Mode.LOCALIZATION_ONLY,
        epsilon_m=0.0,
    )
    fast = step(state, slot((40.0, 0.0, 0.0), s0=3.0, s1=9.0))
    still = step(state, slot(None, s0=3.0, s1=9.0))
    assert np.allclose(fast.target_belief.weights, still.target_belief.weights)

    m0 = sensor_to_target_message(state, 0, 3.0).weights
    m1 = sensor_to_target_message(state, 1, 9.0).weights
    assert np.allclose(fast.target_belief.weights, m0 * m1 / np.sum(m0 * m1))
    assert fast.sensor_beliefs[0].to_list() == state.sensor_beliefs[0].to_list()


def test_dead_reckoning_ignores_ranges(line_map, tunnel_imu, tunnel_ranging, line_state):
    """Test that dead-reckoning mode only follows the IMU."""
    state = init(
        line_map,
        tunnel_imu,
        tunnel_ranging,
        line_state.target_belief,
        line_state.sensor_beliefs,
        mode=Mode.DEAD_RECKONING,
    )
    with_ranges = step(state, slot((5.0, 0.0, 0.0), s0=30.0, s1=1.0))
    without = step(state, slot((5.0, 0.0, 0.0)))
    assert with_ranges.target_belief.to_list() == without.target_belief.to_list()
    assert with_ranges.operations == without.operations


def test_sensor_to_target_message_with_delta_prior(line_map, tunnel_imu, tunnel_ranging):
    """Test that a sensor known in cell z sends the likelihood column of z."""
    state = init(line_map, tunnel_imu, tunnel_ranging, Pmf.uniform(5), [Pmf.delta(5, 2)])
    message = sensor_to_target_message(state, 0, 7.0).weights
    column = likelihood_matrix(tunnel_ranging, line_map, 7.0)[:, 2]
    assert np.allclose(message, column / column.max())
    assert message.max() == 1.0
    with pytest.raises(ValidationError):
        sensor_to_target_message(state, 1, 7.0)


def test_sensor_update_uses_cavity(line_map, tunnel_imu, tunnel_ranging):
    """Test the sensor belief against the product of the other incoming messages."""
    prior = Pmf.gaussian(line_map, line_map.centers[2], 6.0)
    state = init(
        line_map,
        tunnel_imu,
        tunnel_ranging,
        Pmf.delta(5, 0),
        [prior, Pmf.delta(5, 4)],
        epsilon_m=0.0,
    )
    velocity = (5.0, 0.0, 0.0)
    after = step(state, slot(velocity, s0=4.0, s1=14.0))

    cavity = (
        target_transition_message(state, velocity).weights
        * sensor_to_target_message(state, 1, 14.0).weights
    )
    potential = likelihood_matrix(tunnel_ranging, line_map, 4.0)
    expected = prior.weights * (potential.T @ (cavity / cavity.sum()))
    assert np.allclose(after.sensor_beliefs[0].weights, expected / expected.sum())
    assert after.sensor_beliefs[1].to_list() == [0.0, 0.0, 0.0, 0.0, 1.0]


def test_pruning_reduces_operations(line_map, tunnel_imu, tunnel_ranging):
    """Test that a belief threshold skips low-belief cells."""
    priors = [Pmf([0.9, 0.07, 0.01, 0.01, 0.01]), Pmf.uniform(5)]
    exact = init(line_map, tunnel_imu, tunnel_ranging, Pmf.uniform(5), priors, epsilon_m=0.0)
    pruned = init(line_map, tunnel_imu, tunnel_ranging, Pmf.uniform(5), priors, epsilon_m=0.3)
    s = slot((5.0, 0.0, 0.0), s0=6.0, s1=8.0)
    assert step(pruned, s).operations < step(exact, s).operations
    assert step(exact, s).operations > 0


def test_unknown_or_repeated_sensor_is_rejected(line_state):
    """Test that slot ranges must name distinct known sensors."""
    with pytest.raises(ValidationError):
        step(line_state, slot(None, s2=3.0))
    repeated = SlotInput(
        ranges=[RangeMeasurement(sensor=0, d=1.0), RangeMeasurement(sensor=0, d=2.0)]
    )
    with pytest.raises(ValidationError):
        step(line_state, repeated)


def test_impossible_velocity_collapses_target(line_state):
    """Test a velocity no cell transition can explain."""
    before = line_state.target_belief.to_list()
    with pytest.raises(BeliefCollapseError) as excinfo:
        step(line_state, slot((500.0, 0.0, 0.0)))
    assert excinfo.value.variable == "target"
    assert excinfo.value.t == 1
    assert line_state.target_belief.to_list() == before


def test_impossible_range_collapses_target(line_map, tunnel_imu):
    """Test a range with zero likelihood everywhere."""
    obstacles_only = RangingNoiseModel.from_probabilities(0.0, 1.0, 1.0, [], 30.0, 5.0)
    state = init(line_map, tunnel_imu, obstacles_only, Pmf.uniform(5), [Pmf.delta(5, 0)])
    with pytest.raises(BeliefCollapseError, match="slot 1"):
        step(state, slot(None, s0=0.0))


def test_init_validation(line_map, tunnel_imu, tunnel_ranging):
    """Test prior size, all-zero priors, epsilon and k checks."""
    ok = Pmf.uniform(5)
    with pytest.raises(ValidationError):
        init(line_map, tunnel_imu, tunnel_ranging, Pmf.uniform(4), [])
    with pytest.raises(ValidationError):
        init(line_map, tunnel_imu, tunnel_ranging, ok, [Pmf([0.0] * 5)])
    with pytest.raises(ValidationError):
        init(line_map, tunnel_imu, tunnel_ranging, ok, [], epsilon_m=1.0)
    with pytest.raises(ValidationError):
        init(line_map, tunnel_imu, tunnel_ranging, ok, [], k=6)

    state = init(line_map, tunnel_imu, tunnel_ranging, Pmf([2.0, 2.0, 0.0, 0.0, 0.0]), [])
    assert state.target_belief.to_list() == [0.5, 0.5, 0.0, 0.0, 0.0]
    assert state.t == 0 and state.n_sensors == 0


def test_combine_falls_back_to_log_domain():
    """Test that an underflowing product is rescaled instead of zeroed."""
    factors = [np.array([1.0, 1e-200]), np.array([1e-200, 1.0]), np.array([1e-200, 1e-200])]
    assert np.prod(factors, axis=0).max() < UNDERFLOW_LIMIT
    assert np.allclose(_combine(factors, 2), [1.0, 1.0])
    assert _combine([np.array([0.0, 0.0])], 2).tolist() == [0.0, 0.0]
    assert _combine([], 3).tolist() == [1.0, 1.0, 1.0]


def test_estimates(line_state):
    """Test kNN estimates of the target and the sensors."""
    assert line_state.target_estimate() == (0.0, 0.0, 0.0)
    estimates = line_state.sensor_estimates()
    assert len(estimates) == 2


def test_slot_input_json():
    """Test parsing a slot line."""
    s = SlotInput.model_validate_json(
        '{"t": 3, "velocity": [1, 0, 0], "ranges": [{"sensor": 1, "d": 4.5}]}'
    )
    assert s.velocity == (1.0, 0.0, 0.0)
    assert s.ranges[0].d == 4.5
    for bad in (
        '{"velocity": [1, 0]}',
        '{"ranges": [{"sensor": 0, "d": -1}]}',
        '{"velocity": null, "extra": 1}',
    ):
        with pytest.raises(ValueError):
            SlotInput.model_validate_json(bad)


def test_tail_floor_limits_a_far_outlier(line_map, tunnel_imu, tunnel_ranging):
    """Test that one range far beyond every cell distance only moves an unfloored sensor."""
    prior = Pmf.uniform(5)
    outlier = slot((0.0, 0.0, 0.0), s0=60.0)
    plain = init(line_map, tunnel_imu, tunnel_ranging, Pmf.delta(5, 0), [prior], epsilon_m=0.0)
    floored = init(
        line_map,
        tunnel_imu,
        tunnel_ranging,
        Pmf.delta(5, 0),
        [prior],
        epsilon_m=0.0,
        tail_floor=tunnel_ranging.obstacle_plateau,
    )
    assert floored.tail_floor == pytest.approx(0.001)

    moved = step(plain, outlier).sensor_beliefs[0].weights
    assert int(np.argmax(moved)) == 4
    assert moved.max() > 0.5
    assert np.allclose(step(floored, outlier).sensor_beliefs[0].weights, prior.weights)

    with pytest.raises(ValidationError):
        init(line_map, tunnel_imu, tunnel_ranging, prior, [], tail_floor=-1.0)
    with pytest.raises(ValidationError):
        init(line_map, tunnel_imu, tunnel_ranging, prior, [], tail_floor=float("nan"))


def test_localization_only_forgets_earlier_slots(line_map, tunnel_imu, tunnel_ranging, line_state):
    """Test that the localization-only belief at a slot ignores the order of earlier inputs."""
    state = init(
        line_map,
        tunnel_imu,
        tunnel_ranging,
        line_state.target_belief,
        line_state.sensor_beliefs,
        mode=Mode.LOCALIZATION_ONLY,
    )
    earlier = [
        slot((5.0, 0.0, 0.0), s0=3.0, s1=9.0),
        slot(None, s0=12.0),
        slot((-5.0, 0.0, 0.0), s1=2.0),
    ]
    last = slot((5.0, 0.0, 0.0), s0=7.0, s1=6.0)
    reference = run_slots(state, earlier + [last])[-1].target_belief.weights
    for order in itertools.permutations(earlier):
        final = run_slots(state, list(order) + [last])[-1].target_belief.weights
        assert np.allclose(final, reference, rtol=0.0, atol=1e-12)
