"""
Result files of the simulator: CSV tables, JSON summaries and per-run traces.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from slat_bp.engine import EngineState, SlotInput
from slat_bp.excel_io import write_results_workbook
from slat_bp.geometry import cell_distance
from slat_bp.monte_carlo import BatchSummary, MonteCarloResult
from slat_bp.pmf import estimate_cell
from slat_bp.records import write_slot_inputs, write_snapshots
from slat_bp.scenario import GroundTruth

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RMSE_FILE = 'rmse_time.csv'
CDF_FILE = 'cdf.csv'
RUNS_FILE = 'runs.jsonl'
SUMMARY_FILE = 'summary.json'
WORKBOOK_FILE = 'results.xlsx'
SWEEP_FILE = 'sweep.csv'

FLOAT_FORMAT = '%.6f'


def _out_dir(out_dir: PathLike) -> Path:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_results(
    result: MonteCarloResult, out_dir: PathLike, workbook: bool = True
) -> Dict[str, Path]:
    """
    Write every result file of a Monte-Carlo batch.

    Args:
        result: Batch result
        out_dir: Output directory; created if missing
        workbook: Also write the ``.xlsx`` workbook

    Returns:
        Paths of the written files keyed by file name
    """
    path = _out_dir(out_dir)
    written = {}

    result.rmse.to_csv(path / RMSE_FILE, index=False, float_format=FLOAT_FORMAT)
    written[RMSE_FILE] = path / RMSE_FILE
    result.cdf.to_csv(path / CDF_FILE, index=False, float_format=FLOAT_FORMAT)
    written[CDF_FILE] = path / CDF_FILE

    with (path / RUNS_FILE).open('w', encoding='utf-8') as f:
        for run in result.runs:
            f.write(run.model_dump_json())
            f.write('\n')
    written[RUNS_FILE] = path / RUNS_FILE

    result.summary.to_file(path / SUMMARY_FILE)
    written[SUMMARY_FILE] = path / SUMMARY_FILE

    if workbook:
        write_results_workbook(result, path / WORKBOOK_FILE)
        written[WORKBOOK_FILE] = path / WORKBOOK_FILE

    logger.info("Wrote %d result files to %s", len(written), path)
    return written


def write_sweep(rows: pd.DataFrame, out_dir: PathLike) -> Path:
    """Write a parameter sweep table as ``sweep.csv``."""
    path = _out_dir(out_dir) / SWEEP_FILE
    rows.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("Wrote sweep with %d rows to %s", len(rows), path)
    return path


def estimate_table(
    states: Sequence[EngineState], truth: Optional[GroundTruth] = None
) -> pd.DataFrame:
    """
    Per-slot target estimates of a run, with the errors when the truth is known.

    Columns: ``slot, x, y, z, cell`` and, with a truth, ``true_cell, error``.
    Slot 0 (the priors) is not listed.
    """
    rows: List[Dict[str, object]] = []
    for state in states:
        if state.t == 0:
            continue
        x, y, z = state.target_estimate()
        cell = estimate_cell(state.target_belief, state.cell_map, state.k)
        row = {'slot': state.t, 'x': x, 'y': y, 'z': z, 'cell': cell}
        if truth is not None:
            true_cell = truth.target_cells[state.t - 1]
            row['true_cell'] = true_cell
            row['error'] = cell_distance(state.cell_map, true_cell, cell)
        rows.append(row)
    columns = ['slot', 'x', 'y', 'z', 'cell']
    if truth is not None:
        columns += ['true_cell', 'error']
    return pd.DataFrame(rows, columns=columns)


def write_run(
    out_dir: PathLike,
    states: Sequence[EngineState],
    slots: Optional[Sequence[SlotInput]] = None,
    truth: Optional[GroundTruth] = None,
) -> Dict[str, Path]:
    """
    Write the trace of a single run: ``beliefs.jsonl`` and ``estimates.csv``, plus
    ``slots.jsonl`` and ``truth.json`` when given.
    """
    path = _out_dir(out_dir)
    written = {}
    if slots is not None:
        write_slot_inputs(path / 'slots.jsonl', slots)
        written['slots.jsonl'] = path / 'slots.jsonl'
    if truth is not None:
        truth.to_file(path / 'truth.json')
        written['truth.json'] = path / 'truth.json'
    write_snapshots(path / 'beliefs.jsonl', states)
    written['beliefs.jsonl'] = path / 'beliefs.jsonl'
    estimate_table(states, truth).to_csv(
        path / 'estimates.csv', index=False, float_format=FLOAT_FORMAT
    )
    written['estimates.csv'] = path / 'estimates.csv'
    return written


def read_summary(in_dir: PathLike) -> BatchSummary:
    """
    Read ``summary.json`` of a results directory.

    Raises:
        FileNotFoundError: If the directory has no summary
        ValidationError: If the summary is invalid
    """
    return BatchSummary.from_file(Path(in_dir) / SUMMARY_FILE)


def summary_table(summary: BatchSummary) -> pd.DataFrame:
    """One row per mode, indexed by mode name."""
    frame = pd.DataFrame([s.model_dump(mode='json') for s in summary.modes])
    return frame.set_index('mode')


def read_rmse(in_dir: PathLike) -> pd.DataFrame:
    """
    Per-slot RMSE with one column per mode and variable, indexed by slot.

    Raises:
        FileNotFoundError: If the directory has no ``rmse_time.csv``
    """
    path = Path(in_dir) / RMSE_FILE
    if not path.exists():
        raise FileNotFoundError(f"RMSE table not found: {path}")
    frame = pd.read_csv(path)
    wide = frame.pivot(index='slot', columns='mode', values=['target_rmse', 'sensor_rmse'])
    wide.columns = [f"{value}[{mode}]" for value, mode in wide.columns]
    return wide
