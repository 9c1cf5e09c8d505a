"""
Command-line front end of slat-bp.

Exit codes: 0 on success, 2 on bad usage or invalid input, 1 on a runtime failure
(including a Monte-Carlo batch in which any run collapsed).
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from pydantic import TypeAdapter
from pydantic import ValidationError as PydanticValidationError

from slat_bp import __version__
from slat_bp.engine import Mode
from slat_bp.exceptions import SlatError, ValidationError
from slat_bp.monte_carlo import (
    SWEEP_PARAMETERS,
    run_engine,
    run_monte_carlo,
    run_single,
    run_sweep,
    simulate_scenario,
)
from slat_bp.noise import GmComponent, RangingNoiseModel, fit_gm, load_samples, save_samples
from slat_bp.records import BeliefSnapshot, read_slot_inputs
from slat_bp.report import (
    read_rmse,
    read_summary,
    summary_table,
    write_results,
    write_run,
    write_sweep,
)
from slat_bp.scenario import (
    DEFAULT_NLOS_GM,
    NLOS_DB_SIZE,
    ScenarioConfig,
    build_environment,
    generate_corridor_map,
    synthesize_nlos_db,
)

logger = logging.getLogger(__name__)

SEED_ENV = 'SLATBP_SEED'

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_GM_ADAPTER = TypeAdapter(List[GmComponent])


def resolve_seed(flag: Optional[int], config: Optional[ScenarioConfig] = None) -> int:
    """
    Seed of a command: ``--seed``, then the config seed, then ``$SLATBP_SEED``, then 0.

    Raises:
        ValidationError: If ``$SLATBP_SEED`` is not a nonnegative integer
    """
    if flag is not None:
        return flag
    if config is not None and config.seed is not None:
        return config.seed
    value = os.environ.get(SEED_ENV)
    if value is None or value.strip() == '':
        return 0
    try:
        seed = int(value)
    except ValueError as e:
        raise ValidationError(f"{SEED_ENV} must be an integer, got {value!r}") from e
    if seed < 0:
        raise ValidationError(f"{SEED_ENV} must be nonnegative, got {seed}")
    return seed


def _modes(text: str) -> List[Mode]:
    try:
        return [Mode(name.strip()) for name in text.split(',') if name.strip()]
    except ValueError as e:
        choices = ', '.join(m.value for m in Mode)
        raise argparse.ArgumentTypeError(f"{e}; choose from {choices}") from e


def _values(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {e}") from e


def _load_config(path: Optional[str]) -> ScenarioConfig:
    return ScenarioConfig() if path is None else ScenarioConfig.from_file(path)


def cmd_gen_map(args: argparse.Namespace) -> int:
    seed = resolve_seed(args.seed)
    cell_map = generate_corridor_map(
        args.cells, args.pitch, args.jitter, np.random.default_rng(seed)
    )
    cell_map.to_file(args.out)
    print(f"{cell_map.n_cells} cells, D = {cell_map.D:g} m -> {args.out}")
    return EXIT_OK


def cmd_gen_nlos_db(args: argparse.Namespace) -> int:
    seed = resolve_seed(args.seed)
    gm = list(DEFAULT_NLOS_GM) if args.gm is None else _read_gm(args.gm)
    samples = synthesize_nlos_db(gm, args.n, np.random.default_rng(seed))
    save_samples(args.out, samples)
    print(f"{samples.size} samples (mean {samples.mean():.3f} m) -> {args.out}")
    return EXIT_OK


def _read_gm(path: str) -> List[GmComponent]:
    """A JSON file holding either a ranging model or a bare component list."""
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"Mixture file not found: {path}")
    text = file_path.read_text(encoding='utf-8')
    if not text.lstrip().startswith('['):
        return RangingNoiseModel.from_json_text(text, path).gm
    try:
        return _GM_ADAPTER.validate_json(text)
    except PydanticValidationError as e:
        raise ValidationError(f"{path}: invalid mixture: {e}") from e


def cmd_fit_noise(args: argparse.Namespace) -> int:
    samples = load_samples(args.samples)
    gm = fit_gm(samples, args.components)
    model = RangingNoiseModel.from_probabilities(
        args.p_nlos, args.p_obs, args.sigma_w0, gm, args.d_max, args.D
    )
    model.to_file(args.out)
    for component in gm:
        print(
            f"weight {component.weight:.4f}  mean {component.mean:8.3f} m  "
            f"sigma {component.sigma:.3f} m"
        )
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    seed = resolve_seed(args.seed, config)
    mode = args.mode
    if args.slots is None and args.priors is not None:
        raise ValidationError("--priors needs --slots")
    if args.slots is not None and args.priors is None:
        raise ValidationError("--slots needs --priors")
    map_seq, db_seq, run_seq = np.random.SeedSequence(seed).spawn(3)
    env = build_environment(
        config, np.random.default_rng(map_seq), np.random.default_rng(db_seq)
    )

    if args.slots is None:
        scenario = simulate_scenario(config, env, np.random.default_rng(run_seq))
        trace = run_single(config, env, scenario, mode)
        write_run(args.out, trace.states, scenario.slots, scenario.truth)
        metrics = trace.metrics
        if metrics.collapsed:
            print(f"Collapsed at slot {metrics.collapse_slot} ({metrics.collapse_variable})")
            return EXIT_FAILURE
        print(f"{mode.value}: mean target error {np.mean(metrics.target_errors):.3f} m")
        return EXIT_OK

    slots = read_slot_inputs(args.slots)
    target_prior, sensor_priors = BeliefSnapshot.from_file(args.priors).to_pmfs()
    states, collapse = run_engine(config, env, mode, target_prior, sensor_priors, slots)
    write_run(args.out, states)
    if collapse is not None:
        logger.error("%s", collapse)
        return EXIT_FAILURE
    print(f"{mode.value}: filtered {len(slots)} slots -> {args.out}")
    return EXIT_OK


def cmd_mc(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    if args.modes is not None:
        config = config.updated(modes=args.modes)
    if args.n_mc is not None:
        config = config.updated(n_mc=args.n_mc)
    seed = resolve_seed(args.seed, config)
    result = run_monte_carlo(config, seed=seed, threads=args.threads)
    write_results(result, args.out, workbook=not args.no_xlsx)
    print(summary_table(result.summary).to_string())
    if result.collapses:
        logger.error("%d runs collapsed", result.collapses)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    seed = resolve_seed(args.seed, config)
    rows = run_sweep(
        config, args.parameter, args.values, modes=args.modes, seed=seed, threads=args.threads
    )
    write_sweep(rows, args.out)
    print(rows.to_string(index=False))
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    print(summary_table(read_summary(args.input)).to_string())
    print()
    print(read_rmse(args.input).to_string())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='slatbp',
        description=(
            'Simultaneous sensor localization and target tracking with belief propagation'
        ),
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='log debug messages')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='log warnings only')
    sub = parser.add_subparsers(dest='command', required=True, metavar='command')

    p = sub.add_parser('gen-map', help='generate a corridor cell map')
    p.add_argument('--cells', type=int, required=True, help='number of cells')
    p.add_argument('--pitch', type=float, default=5.0, help='cell pitch in m (default 5)')
    p.add_argument('--jitter', type=float, default=1.0, help='max lateral offset in m (default 1)')
    p.add_argument('--seed', type=int, help=f"random seed (default ${SEED_ENV} or 0)")
    p.add_argument('--out', required=True, help='cell map JSON to write')
    p.set_defaults(handler=cmd_gen_map)

    p = sub.add_parser('gen-nlos-db', help='synthesize an NLOS error sample database')
    p.add_argument(
        '--gm', help='JSON mixture (component list or ranging model); default built-in'
    )
    p.add_argument(
        '--n', type=int, default=NLOS_DB_SIZE, help=f"samples (default {NLOS_DB_SIZE})"
    )
    p.add_argument('--seed', type=int, help=f"random seed (default ${SEED_ENV} or 0)")
    p.add_argument('--out', required=True, help='sample file to write, one value per line')
    p.set_defaults(handler=cmd_gen_nlos_db)

    p = sub.add_parser('fit-noise', help='fit the NLOS mixture and write a ranging model')
    p.add_argument('--samples', required=True, help='sample file, one value per line')
    p.add_argument('--components', type=int, default=5, help='mixture components (default 5)')
    p.add_argument('--p-nlos', type=float, default=0.17, help='wall NLOS probability')
    p.add_argument('--p-obs', type=float, default=0.03, help='obstacle NLOS probability')
    p.add_argument('--sigma-w0', type=float, default=1.0, help='LOS noise std in m')
    p.add_argument('--d-max', type=float, default=30.0, help='max obstacle error in m')
    p.add_argument('--D', type=float, default=5.0, help='quantization length in m')
    p.add_argument('--out', required=True, help='ranging model JSON to write')
    p.set_defaults(handler=cmd_fit_noise)

    p = sub.add_parser('run', help='run one engine on a simulated or recorded scenario')
    p.add_argument('--config', help='scenario config JSON (default built-in)')
    p.add_argument(
        '--mode',
        type=Mode,
        default=Mode.SLAT,
        help='slat, tracking, localization or dead_reckoning (default slat)',
    )
    p.add_argument('--slots', help='recorded slot inputs, JSON lines')
    p.add_argument('--priors', help='prior beliefs in snapshot format (with --slots)')
    p.add_argument('--seed', type=int, help=f"random seed (default config, ${SEED_ENV} or 0)")
    p.add_argument('--out', required=True, help='output directory')
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser('mc', help='run a Monte-Carlo batch')
    p.add_argument('--config', help='scenario config JSON (default built-in)')
    p.add_argument('--modes', type=_modes, help='comma-separated modes (default from config)')
    p.add_argument('--n-mc', type=int, help='number of runs (default from config)')
    p.add_argument('--threads', type=int, help='worker threads (default machine parallelism)')
    p.add_argument('--seed', type=int, help=f"random seed (default config, ${SEED_ENV} or 0)")
    p.add_argument('--no-xlsx', action='store_true', help='skip the Excel workbook')
    p.add_argument('--out', required=True, help='output directory')
    p.set_defaults(handler=cmd_mc)

    p = sub.add_parser('sweep', help='repeat a batch over the values of one parameter')
    p.add_argument('--config', help='scenario config JSON (default built-in)')
    p.add_argument('--parameter', required=True, choices=SWEEP_PARAMETERS)
    p.add_argument('--values', type=_values, required=True, help='comma-separated values')
    p.add_argument('--modes', type=_modes, help='comma-separated modes (default from config)')
    p.add_argument('--threads', type=int, help='worker threads (default machine parallelism)')
    p.add_argument('--seed', type=int, help=f"random seed (default config, ${SEED_ENV} or 0)")
    p.add_argument('--out', required=True, help='output directory')
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser('metrics', help='print the summary and RMSE tables of an mc run')
    p.add_argument('--in', dest='input', required=True, help='results directory of mc')
    p.set_defaults(handler=cmd_metrics)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')

    try:
        return args.handler(args)
    except (ValidationError, FileNotFoundError) as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except (SlatError, OSError) as e:
        logger.error("%s", e)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
