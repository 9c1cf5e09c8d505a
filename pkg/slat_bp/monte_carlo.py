"""
Monte-Carlo harness: independent scenario runs per engine mode, RMSE and error CDFs.

Random streams derive from one root ``numpy.random.SeedSequence``: its first child seeds
the corridor map, the second the NLOS database and the third spawns one child per run.
Results therefore do not depend on the number of worker threads.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import Field

from slat_bp.engine import EngineState, Mode, SlotInput, init, step
from slat_bp.exceptions import BeliefCollapseError, ValidationError
from slat_bp.geometry import cell_distance
from slat_bp.models import JsonModel
from slat_bp.pmf import Pmf, estimate_cell
from slat_bp.scenario import (
    START_CELL,
    Environment,
    GroundTruth,
    ScenarioConfig,
    build_environment,
    check_track_fits,
    deploy_sensors,
    generate_track,
    synthesize_measurements,
)

logger = logging.getLogger(__name__)

SWEEP_PARAMETERS = (
    'd_th',
    'n_sensors',
    'sigma_s',
    'report_sigma',
    'p_outlier',
    'd_outlier',
    'epsilon_m',
    'tail_floor',
)


class RunMetrics(JsonModel):
    """
    Errors of one engine mode on one scenario run.

    Errors are distances between the centers of the true and the estimated cell. A run
    whose belief collapsed keeps the errors up to the slot before the collapse and is
    left out of every aggregate.
    """

    run: int
    mode: Mode
    target_errors: List[float] = Field(default_factory=list)
    sensor_errors: List[List[float]] = Field(default_factory=list)
    operations: int = 0
    collapsed: bool = False
    collapse_slot: Optional[int] = None
    collapse_variable: Optional[str] = None


class ModeSummary(JsonModel):
    """Aggregate metrics of one mode over the runs that did not collapse."""

    mode: Mode
    runs: int
    collapses: int
    mean_target_rmse: Optional[float] = None
    mean_sensor_rmse: Optional[float] = None
    final_sensor_rmse: Optional[float] = None
    correct_cell_rate: Optional[float] = None
    p95_target_error: Optional[float] = None
    operations: int = 0


class BatchSummary(JsonModel):
    """Machine-readable summary of a Monte-Carlo batch."""

    seed: int
    n_mc: int
    modes: List[ModeSummary]


@dataclass(frozen=True)
class ScenarioRun:
    """One simulated scenario: ground truth, sensor priors and measurements."""

    truth: GroundTruth
    sensor_priors: List[Pmf]
    slots: List[SlotInput]


@dataclass
class RunTrace:
    """Engine states of one run, from the priors at slot 0 up to the last slot reached."""

    metrics: RunMetrics
    states: List[EngineState] = field(default_factory=list)


@dataclass
class MonteCarloResult:
    """
    Outcome of ``run_monte_carlo``.

    Args:
        seed: Root seed of the batch
        config: Configuration the batch ran with
        runs: Metrics of every run and mode, in run order then mode order
        summary: Aggregates per mode
        rmse: Per-slot RMSE table (slot, mode, target_rmse, sensor_rmse)
        cdf: Empirical error CDFs (mode, variable, error, cum_prob)
    """

    seed: int
    config: ScenarioConfig
    runs: List[RunMetrics]
    summary: BatchSummary
    rmse: pd.DataFrame
    cdf: pd.DataFrame

    @property
    def collapses(self) -> int:
        return sum(1 for r in self.runs if r.collapsed)

    def mode_summary(self, mode: Union[Mode, str]) -> ModeSummary:
        mode = Mode(mode)
        for summary in self.summary.modes:
            if summary.mode == mode:
                return summary
        raise KeyError(f"Mode {mode.value} was not run")


def simulate_scenario(
    config: ScenarioConfig,
    env: Environment,
    rng: np.random.Generator,
    eta: Union[None, int, Sequence[int]] = None,
) -> ScenarioRun:
    """Draw a track, a sensor deployment and the measurements of one run."""
    target_cells = generate_track(config, env.cell_map, rng, eta=eta)
    sensor_cells, sensor_priors = deploy_sensors(config, env.cell_map, rng)
    truth = GroundTruth(sensor_cells=sensor_cells, target_cells=target_cells)
    slots = synthesize_measurements(config, truth, env.cell_map, env.nlos_db, rng, D=env.imu.D)
    return ScenarioRun(truth=truth, sensor_priors=sensor_priors, slots=slots)


def run_engine(
    config: ScenarioConfig,
    env: Environment,
    mode: Union[Mode, str],
    target_prior: Pmf,
    sensor_priors: Sequence[Pmf],
    slots: Sequence[SlotInput],
) -> Tuple[List[EngineState], Optional[BeliefCollapseError]]:
    """
    Run one engine over ``slots``.

    Returns:
        States from slot 0 up to the last slot reached, and the collapse that stopped the
        run (None if every slot was processed)
    """
    state = init(
        env.cell_map,
        env.imu,
        env.ranging,
        target_prior,
        sensor_priors,
        mode=Mode(mode),
        epsilon_m=config.epsilon_m,
        k=config.k,
        tail_floor=config.likelihood_floor(env.ranging),
    )
    states = [state]
    for slot in slots:
        try:
            state = step(state, slot)
        except BeliefCollapseError as e:
            return states, e
        states.append(state)
    return states, None


def run_single(
    config: ScenarioConfig,
    env: Environment,
    scenario: ScenarioRun,
    mode: Union[Mode, str],
    run: int = 0,
) -> RunTrace:
    """
    Filter one simulated scenario with one engine mode and score every slot.

    The target prior is a delta on the start cell; the sensor priors are the
    scenario's.
    """
    mode = Mode(mode)
    cell_map = env.cell_map
    truth = scenario.truth
    target_prior = Pmf.delta(cell_map.n_cells, START_CELL)
    states, collapse = run_engine(
        config, env, mode, target_prior, scenario.sensor_priors, scenario.slots
    )

    target_errors = []
    sensor_errors = []
    for state in states[1:]:
        true_cell = truth.target_cells[state.t - 1]
        estimated = estimate_cell(state.target_belief, cell_map, state.k)
        target_errors.append(cell_distance(cell_map, true_cell, estimated))
        sensor_errors.append(
            [
                cell_distance(cell_map, true, estimate_cell(belief, cell_map, state.k))
                for true, belief in zip(truth.sensor_cells, state.sensor_beliefs)
            ]
        )

    metrics = RunMetrics(
        run=run,
        mode=mode,
        target_errors=target_errors,
        sensor_errors=sensor_errors,
        operations=states[-1].operations,
    )
    if collapse is not None:
        logger.warning("Run %d (%s): %s", run, mode.value, collapse)
        metrics = metrics.model_copy(
            update={
                'collapsed': True,
                'collapse_slot': collapse.t,
                'collapse_variable': collapse.variable,
            }
        )
    return RunTrace(metrics=metrics, states=states)


def _rmse(errors: np.ndarray, axes: Tuple[int, ...]) -> np.ndarray:
    if errors.size == 0:
        shape = [n for i, n in enumerate(errors.shape) if i not in axes]
        return np.full(shape, np.nan)
    return np.sqrt(np.mean(errors**2, axis=axes))


def _optional(value: float) -> Optional[float]:
    return None if np.isnan(value) else float(value)


def _cdf_rows(mode: Mode, variable: str, errors: np.ndarray) -> List[Dict[str, object]]:
    if errors.size == 0:
        return []
    values, counts = np.unique(errors, return_counts=True)
    cum_prob = np.cumsum(counts) / errors.size
    return [
        {'mode': mode.value, 'variable': variable, 'error': float(v), 'cum_prob': float(p)}
        for v, p in zip(values, cum_prob)
    ]


def aggregate(
    config: ScenarioConfig,
    runs: Sequence[RunMetrics],
    seed: int,
) -> MonteCarloResult:
    """
    Reduce per-run metrics, in run order, into per-slot RMSE, CDFs and mode summaries.

    RMSE at slot t is the root of the mean squared slot-t error over the runs that did
    not collapse; the sensor RMSE also averages over sensors.
    """
    n_slots, n_sensors = config.n_slots, config.n_sensors
    rmse_rows = []
    cdf_rows = []
    summaries = []
    for mode in config.modes:
        mode_runs = [r for r in runs if r.mode == mode]
        ok = [r for r in mode_runs if not r.collapsed]
        target = np.asarray([r.target_errors for r in ok], dtype=np.float64).reshape(
            len(ok), n_slots
        )
        sensor = np.asarray([r.sensor_errors for r in ok], dtype=np.float64).reshape(
            len(ok), n_slots, n_sensors
        )
        target_rmse = _rmse(target, (0,))
        sensor_rmse = _rmse(sensor, (0, 2)) if n_sensors else np.full(n_slots, np.nan)

        for t in range(n_slots):
            rmse_rows.append(
                {
                    'slot': t + 1,
                    'mode': mode.value,
                    'target_rmse': target_rmse[t],
                    'sensor_rmse': sensor_rmse[t],
                }
            )
        cdf_rows.extend(_cdf_rows(mode, 'target', target.ravel()))
        cdf_rows.extend(_cdf_rows(mode, 'sensor', sensor.ravel()))

        summaries.append(
            ModeSummary(
                mode=mode,
                runs=len(ok),
                collapses=len(mode_runs) - len(ok),
                mean_target_rmse=_optional(np.mean(target_rmse)),
                mean_sensor_rmse=_optional(np.mean(sensor_rmse)),
                final_sensor_rmse=_optional(sensor_rmse[-1]),
                correct_cell_rate=_optional(np.mean(target == 0) if target.size else np.nan),
                p95_target_error=_optional(
                    np.percentile(target, 95) if target.size else np.nan
                ),
                operations=sum(r.operations for r in ok),
            )
        )

    rmse = pd.DataFrame(rmse_rows, columns=['slot', 'mode', 'target_rmse', 'sensor_rmse'])
    cdf = pd.DataFrame(cdf_rows, columns=['mode', 'variable', 'error', 'cum_prob'])
    return MonteCarloResult(
        seed=seed,
        config=config,
        runs=list(runs),
        summary=BatchSummary(seed=seed, n_mc=config.n_mc, modes=summaries),
        rmse=rmse,
        cdf=cdf,
    )


def run_monte_carlo(
    config: ScenarioConfig,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
) -> MonteCarloResult:
    """
    Run ``n_mc`` independent scenarios and filter each with every configured mode.

    All modes see the same scenario within a run. Collapsed runs are counted and left out
    of the aggregates; they never abort the batch.

    Args:
        config: Scenario configuration
        seed: Root seed; falls back to ``config.seed``, then 0
        threads: Worker threads; falls back to ``config.threads``, then the executor default

    Raises:
        ConfigurationError: If the configuration cannot produce a scenario
    """
    seed = seed if seed is not None else (config.seed if config.seed is not None else 0)
    threads = threads if threads is not None else config.threads
    map_seq, db_seq, runs_seq = np.random.SeedSequence(seed).spawn(3)
    env = build_environment(config, np.random.default_rng(map_seq), np.random.default_rng(db_seq))
    check_track_fits(env.cell_map.n_cells, config.n_slots)
    run_seqs = runs_seq.spawn(config.n_mc)
    modes = ', '.join(m.value for m in config.modes)
    logger.info("Monte-Carlo batch: %d runs of %s (seed %d)", config.n_mc, modes, seed)

    def one_run(index: int) -> List[RunMetrics]:
        scenario = simulate_scenario(config, env, np.random.default_rng(run_seqs[index]))
        metrics = [
            run_single(config, env, scenario, mode, run=index).metrics for mode in config.modes
        ]
        logger.debug("Run %d finished", index)
        return metrics

    with ThreadPoolExecutor(max_workers=threads) as pool:
        per_run = list(pool.map(one_run, range(config.n_mc)))

    result = aggregate(config, [m for metrics in per_run for m in metrics], seed)
    for summary in result.summary.modes:
        logger.info(
            "%s: mean target RMSE %s m, mean sensor RMSE %s m, %d collapses",
            summary.mode.value,
            _format(summary.mean_target_rmse),
            _format(summary.mean_sensor_rmse),
            summary.collapses,
        )
    return result


def _format(value: Optional[float]) -> str:
    return 'n/a' if value is None else f"{value:.3f}"


def run_sweep(
    config: ScenarioConfig,
    parameter: str,
    values: Sequence[float],
    modes: Optional[Sequence[Union[Mode, str]]] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
) -> pd.DataFrame:
    """
    Repeat a Monte-Carlo batch for every value of one parameter.

    Every batch uses the same root seed, so the values are compared on common random
    numbers wherever the parameter leaves the draws unchanged.

    Args:
        config: Base configuration
        parameter: One of ``SWEEP_PARAMETERS``
        values: Parameter values
        modes: Modes to compare; defaults to the configured ones

    Returns:
        One row per (value, mode) with the mode summary metrics

    Raises:
        ValidationError: On an unknown parameter or an invalid value
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValidationError(
            f"Cannot sweep {parameter!r}; choose one of {', '.join(SWEEP_PARAMETERS)}"
        )
    if not values:
        raise ValidationError("Sweep needs at least one value")
    changes = {} if modes is None else {'modes': [Mode(m) for m in modes]}

    rows = []
    for value in values:
        if parameter == 'n_sensors':
            value = int(value)
        batch = run_monte_carlo(config.updated(**changes, **{parameter: value}), seed, threads)
        for summary in batch.summary.modes:
            rows.append(
                {
                    'parameter': parameter,
                    'value': value,
                    **summary.model_dump(mode='json'),
                }
            )
    return pd.DataFrame(rows)
