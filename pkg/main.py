#!/usr/bin/env python3
"""
Joint Association Tool - Main Entry Point

Command-line interface for the synthetic pose estimation experiments.
Usage:
  python main.py synth --out scenes --count 10
  python main.py train --scenes scenes --model-out model.json
  python main.py solve --scenes scenes --model model.json --out preds.json
  python main.py eval --predictions preds.json --scenes scenes
  python main.py sweep --scenes scenes --model model.json --parameter tau --grid 0,0.1,0.2
  python main.py bench --scenes scenes --model model.json --sizes 4,6,8,10
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Optional

from config import PipelineConfig, SOLVE_MODES, config_hash, load_config
from errors import ConfigError, DataError, JpaError
from logger import JpaLogger, log_performance, setup_logging
from pipeline import PipelineEngine
from reporting import (
    ACCURACY_COLUMNS, BENCH_COLUMNS, SWEEP_COLUMNS, ReportGenerator, accuracy_records, bench_records, csv_text,
    format_results_table, format_table, report_to_dict, sweep_records,
)
from utils import parse_grid

logger = logging.getLogger('jpa.main')

SWEEP_ALIASES = {'tau': 'tau', 'n_candidates': 'n_candidates', 'N': 'n_candidates'}


def _joint_names(text: Optional[str]) -> Optional[tuple]:
    if text is None:
        return None
    names = tuple(name.strip() for name in text.split(',') if name.strip())
    if not names:
        raise ConfigError("Empty joint list")
    return names


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per pipeline phase."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON configuration file; flags override it')
    common.add_argument('--seed', type=int, help='Seed for scene synthesis and training')
    common.add_argument('--json', action='store_true', help='Machine-readable output; errors as JSON on stderr')
    common.add_argument('--verbose', action='store_true', help='Enable verbose logging')
    common.add_argument('--log-file', help='Also write the log to this file')

    solve_flags = argparse.ArgumentParser(add_help=False)
    solve_flags.add_argument('--mode', choices=list(SOLVE_MODES), help='Inference mode (default ljpa)')
    solve_flags.add_argument('--tau', type=float, help='Detection threshold (default 0.2)')
    solve_flags.add_argument('--n-candidates', type=int, help='Candidates per joint (default 5)')
    solve_flags.add_argument('--workers', type=int, help='Worker processes (default 1)')
    solve_flags.add_argument('--joints', help='Comma-separated joint subset, e.g. head,neck')

    parser = argparse.ArgumentParser(
        description='Multi-person joint association on synthetic score maps',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py synth --out scenes --count 10 --preset occluded
  python main.py train --scenes scenes --model-out model.json
  python main.py solve --scenes scenes --model model.json --out preds.json --mode ljpa
  python main.py eval --predictions preds.json --scenes scenes
  python main.py sweep --scenes scenes --model model.json --parameter N --grid 1,3,5 --out sweep.csv
  python main.py bench --scenes scenes --model model.json --out bench.csv
        """
    )
    commands = parser.add_subparsers(dest='command', required=True)

    synth = commands.add_parser('synth', parents=[common], help='Generate a synthetic scene set')
    synth.add_argument('--out', required=True, help='Output directory for scene files')
    synth.add_argument('--count', type=int, default=10, help='Number of scenes')
    synth.add_argument('--preset', help='Scene preset: clean, occluded or crowded')
    synth.add_argument('--embed-maps', action='store_true', help='Store rendered score maps in scene files')

    train = commands.add_parser('train', parents=[common], help='Train the pairwise model')
    train.add_argument('--scenes', required=True, help='Scene directory')
    train.add_argument('--model-out', required=True, help='Model file to write')
    train.add_argument('--report-dir', help='Also write accuracy.csv here')

    solve = commands.add_parser('solve', parents=[common, solve_flags], help='Estimate poses per region')
    solve.add_argument('--scenes', required=True, help='Scene directory')
    solve.add_argument('--model', help='Model file (not needed for argmax)')
    solve.add_argument('--out', required=True, help='Predictions file to write')

    evaluate = commands.add_parser('eval', parents=[common], help='Score predictions')
    evaluate.add_argument('--predictions', required=True, help='Predictions file')
    evaluate.add_argument('--scenes', required=True, help='Scene directory the predictions were made on')
    evaluate.add_argument('--csv', help='Results CSV to write (default: next to the predictions)')

    sweep = commands.add_parser('sweep', parents=[common, solve_flags], help='Sweep tau or N')
    sweep.add_argument('--scenes', required=True, help='Scene directory')
    sweep.add_argument('--model', help='Model file')
    sweep.add_argument('--parameter', required=True, choices=sorted(SWEEP_ALIASES), help='Swept parameter')
    sweep.add_argument('--grid', required=True, help='Comma-separated values, e.g. 0,0.1,0.2')
    sweep.add_argument('--out', required=True, help='Sweep CSV to write')

    bench = commands.add_parser('bench', parents=[common], help='Time local versus global solver')
    bench.add_argument('--scenes', required=True, help='Scene directory')
    bench.add_argument('--model', required=True, help='Model file')
    bench.add_argument('--sizes', help='Comma-separated detection counts (default 4,6,8,10)')
    bench.add_argument('--trials', type=int, help='Timed repetitions per size (default 3)')
    bench.add_argument('--joints', help='Comma-separated joint subset of at most 4 joints')
    bench.add_argument('--out', required=True, help='Timing CSV to write')

    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file first, then command-line flags."""
    config = load_config(args.config)
    config = config.with_overrides(
        seed=args.seed,
        preset=getattr(args, 'preset', None),
        tau=getattr(args, 'tau', None),
        n_candidates=getattr(args, 'n_candidates', None),
        mode=getattr(args, 'mode', None),
        workers=getattr(args, 'workers', None),
        joints=_joint_names(getattr(args, 'joints', None)) if args.command != 'bench' else None,
    )
    if args.command == 'bench':
        updates: Dict[str, Any] = {}
        if args.sizes:
            updates['sizes'] = tuple(parse_grid(args.sizes, int))
        if args.trials is not None:
            updates['trials'] = args.trials
        if args.joints:
            updates['joints'] = _joint_names(args.joints)
        if updates:
            config = dataclasses.replace(config, bench=dataclasses.replace(config.bench, **updates))
    return config


def _emit(args: argparse.Namespace, payload: Dict[str, Any], text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=1, sort_keys=True))
    else:
        print(text)


@log_performance
def cmd_synth(args: argparse.Namespace, engine: PipelineEngine) -> None:
    manifest = engine.synth(args.out, args.count, embed_maps=args.embed_maps)
    _emit(args, manifest, f"Wrote {manifest['count']} scenes to {args.out} "
                          f"(config hash {config_hash(engine.config)[:12]}, "
                          f"scenes hash {manifest['scenes_hash'][:12]})")


@log_performance
def cmd_train(args: argparse.Namespace, engine: PipelineEngine) -> None:
    _, rows = engine.train(args.scenes, args.model_out)
    if args.report_dir:
        engine.reports(args.report_dir).write_accuracy(rows)
    records = accuracy_records(rows)
    _emit(args, {'model': args.model_out, 'accuracy': [dict(zip(ACCURACY_COLUMNS, r)) for r in records]},
          format_table(ACCURACY_COLUMNS, records, title='Held-out accuracy per joint pair'))


@log_performance
def cmd_solve(args: argparse.Namespace, engine: PipelineEngine) -> None:
    predictions, timing = engine.solve(args.scenes, args.model, args.out)
    summary = {
        'predictions': args.out,
        'poses': len(predictions),
        'skipped_regions': timing['skipped_regions'],
        'median_ms': timing['median_ms'],
    }
    _emit(args, summary, f"Wrote {len(predictions)} poses to {args.out} "
                         f"(skipped {timing['skipped_regions']}, median solve {timing['median_ms']} ms)")


@log_performance
def cmd_eval(args: argparse.Namespace, engine: PipelineEngine) -> None:
    row = engine.evaluate(args.predictions, args.scenes)
    csv_path = args.csv or os.path.splitext(args.predictions)[0] + '.results.csv'
    generator, name = ReportGenerator.for_file(csv_path)
    generator.write_results([row], name)
    payload = {'setting': row.setting, 'median_solve_ms': row.median_solve_ms, **report_to_dict(row.report)}
    _emit(args, payload, format_results_table([row]))


@log_performance
def cmd_sweep(args: argparse.Namespace, engine: PipelineEngine) -> None:
    parameter = SWEEP_ALIASES[args.parameter]
    grid = parse_grid(args.grid, float if parameter == 'tau' else int)
    rows = engine.sweep(args.scenes, args.model, parameter, grid)
    generator, name = ReportGenerator.for_file(args.out)
    generator.write_sweep(rows, name)
    records = sweep_records(rows)
    _emit(args, {'rows': [dict(zip(SWEEP_COLUMNS, r)) for r in records]}, csv_text(SWEEP_COLUMNS, records))


@log_performance
def cmd_bench(args: argparse.Namespace, engine: PipelineEngine) -> None:
    rows = engine.bench(args.scenes, args.model)
    generator, name = ReportGenerator.for_file(args.out)
    generator.write_bench(rows, name)
    records = bench_records(rows)
    _emit(args, {'rows': [dict(zip(BENCH_COLUMNS, r)) for r in records]},
          format_table(BENCH_COLUMNS, records, title='Median solve time per size (ms)'))


COMMANDS: Dict[str, Callable[[argparse.Namespace, PipelineEngine], None]] = {
    'synth': cmd_synth,
    'train': cmd_train,
    'solve': cmd_solve,
    'eval': cmd_eval,
    'sweep': cmd_sweep,
    'bench': cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(verbose=args.verbose, log_file=args.log_file)

    try:
        engine = PipelineEngine(resolve_config(args))
        COMMANDS[args.command](args, engine)
        return 0
    except (JpaError, OSError) as raised:
        e = raised if isinstance(raised, JpaError) else DataError(
            f"File system error: {raised.strerror or raised}", {'path': raised.filename})
        if args.json:
            print(json.dumps(e.to_dict(), sort_keys=True), file=sys.stderr)
        else:
            if e.context:
                JpaLogger('main').error_with_context(f"{args.command} failed: {e.message}", e.context)
            else:
                logger.error(f"{args.command} failed: {e.message}")
        return e.exit_code


if __name__ == '__main__':
    sys.exit(main())
