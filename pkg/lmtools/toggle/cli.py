"""
Command-line interface.

    toggle validate --config tiny
    toggle search --config tiny --out runs/tiny
    toggle evaluate --config tiny --kappa identity --out runs/identity
    toggle sensitivity --config tiny --out runs/sweep --exhaustive
    toggle plot-data runs/tiny/records.jsonl --config tiny --out runs/tiny/plot

Exit codes: 0 on success, 1 if the run configuration is invalid, 2 for any other failure.
"""
import os
import sys
import json
import argparse
import pandas as pd
from dataclasses import replace
from typing import List, Optional

from toggle.config import RunConfig, load_run_config, parse_seed_overrides, resolve_config_path
from toggle.evaluation.modes import (DEFAULT_MODES, format_mode_table, mode_preservation_bars, mode_report,
                                     select_modes)
from toggle.exceptions import RunConfigError
from toggle.model.compression import CompressionConfig
from toggle.search.optimizer import ConfigEvaluator, run_search
from toggle.search.pareto import pareto_front, pareto_table
from toggle.search.records import EvaluationRecord, load_records
from toggle.sensitivity import SensitivitySweep, format_sensitivity_table
from toggle.signals import write_trace
from toggle.stl.formulas import RobustnessThresholds, check_feasibility
from toggle.utils import atomic_write_csv, atomic_write_json, atomic_write_text, format_aligned

EXIT_OK = 0
EXIT_INVALID_CONFIG = 1
EXIT_FAILURE = 2

RECORD_LOG = 'records.jsonl'


def _load(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config)
    config = config.with_seeds(**parse_seed_overrides(args.seed_override))
    if getattr(args, 'budget', None) is not None:
        if args.budget < 2:
            raise RunConfigError([f"budget: must be >= 2, got {args.budget}"])
        config = config.with_budget(args.budget)
    return config


def _frame_records(df: pd.DataFrame) -> List[dict]:
    return df.astype(object).where(df.notna(), None).to_dict('records')


def cmd_validate(args: argparse.Namespace) -> int:
    config = _load(args)
    space = config.search_space()
    spec = config.parsed_spec()
    arch = config.arch
    print(f"Configuration {resolve_config_path(args.config)} is valid.")
    print(format_aligned([
        ('Architecture', f"{arch.style}, {arch.n_layers} layers, d={arch.hidden_dim}, {arch.n_heads} heads, "
                         f"vocab {arch.vocab_size}, T={arch.max_context}"),
        ('Seeds (model/corpus/search)', f"{config.architecture.seed}/{config.corpus.seed}/{config.search.seed}"),
        ('Prompts', f"{config.corpus.n_prompts} x {config.corpus.prompt_len} tokens, horizon {config.corpus.horizon}"),
        ('Properties', ', '.join(spec.properties)),
        ('Thresholds', ', '.join(f"{k}={v:g}" for k, v in spec.predicate_thresholds.to_dict().items())),
        ('Searched components', len(space.components)),
        ('Search space size', space.size),
        ('Budget', min(config.search.budget, space.size)),
        ('Modes', ', '.join(f"{k} ({v:g}%)" for k, v in config.modes.items())),
    ], width=30))
    return EXIT_OK


def write_search_outputs(config: RunConfig, evaluator: ConfigEvaluator, records: List[EvaluationRecord],
                         out_dir: str) -> pd.DataFrame:
    """
    Write Pareto table, mode report and baseline and per-mode traces of a finished search.

    Args:
        config (RunConfig): The run configuration.
        evaluator (ConfigEvaluator): Evaluator of the search, used to regenerate signals.
        records (List[EvaluationRecord]): All search records.
        out_dir (str): Output directory.

    Returns:
        pd.DataFrame: The mode report.
    """
    atomic_write_csv(os.path.join(out_dir, 'pareto.csv'), pareto_table(pareto_front(records)))

    modes = select_modes(records, config.modes)
    report = mode_report(records, config.modes)
    atomic_write_json(os.path.join(out_dir, 'modes.json'), {
        'modes': _frame_records(report),
        'preservation': _frame_records(mode_preservation_bars(modes)),
    })
    atomic_write_text(os.path.join(out_dir, 'modes.txt'), format_mode_table(report))

    traces = os.path.join(out_dir, 'traces')
    identity = CompressionConfig.identity(config.arch)
    write_trace(evaluator.signals(identity), os.path.join(traces, 'baseline.trace'))
    for mode in modes:
        if mode.selected is not None:
            write_trace(evaluator.signals(mode.selected.kappa), os.path.join(traces, f"{mode.name}.trace"))
    return report


def cmd_search(args: argparse.Namespace) -> int:
    config = _load(args)
    model = config.build_model()
    corpus = config.build_corpus(model)
    spec = config.parsed_spec()
    evaluator = ConfigEvaluator(model, corpus, spec, config.cost_params())
    s = config.search
    os.makedirs(args.out, exist_ok=True)
    records = run_search(config.search_space(), evaluator, list(spec.properties),
                         [spec.robustness_thresholds[name] for name in spec.properties], budget=s.budget,
                         n_init=s.n_init, seed=s.seed, record_log=os.path.join(args.out, RECORD_LOG),
                         pool_size=s.pool_size, refit_every=s.refit_every, verbose=not args.quiet)
    report = write_search_outputs(config, evaluator, records, args.out)
    if not args.quiet:
        print(format_mode_table(report))
        print(f"Results written to {args.out}")
    return EXIT_OK


def read_kappa(source: str, config: RunConfig) -> CompressionConfig:
    """Compression config from a JSON file, or the identity configuration for 'identity'."""
    if source == 'identity' and not os.path.exists(source):
        return CompressionConfig.identity(config.arch)
    with open(source, 'r', encoding='utf-8') as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Compression config {source} is not valid JSON: {e}") from None
    if isinstance(payload, dict) and 'kappa' in payload:
        payload = payload['kappa']
    kappa = CompressionConfig.from_dict(payload)
    kappa.check_coverage(config.arch)
    return kappa


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _load(args)
    kappa = read_kappa(args.kappa, config)
    model = config.build_model()
    corpus = config.build_corpus(model)
    evaluator = ConfigEvaluator(model, corpus, config.parsed_spec(), config.cost_params(),
                                cache_signals=True)
    bundle = evaluator.signals(kappa)
    record = evaluator(kappa)
    rep = record.cost_report
    print(format_aligned([
        ('Cost E (FLOPs)', f"{record.cost:.6g}"),
        ('Feasible', record.feasible),
        ('AvgPP (%)', f"{record.avg_pp:.4f}"),
        ('FR (x)', f"{rep['flops_reduction']:.4f}"),
        ('CR (%)', f"{rep['compression_ratio']:.4f}"),
        ('AvgBits', f"{kappa.avg_bits:.4f}"),
        ('AvgPrun (%)', f"{100.0 * kappa.avg_pruning:.4f}"),
    ] + [(f"rho_min[{name}]", f"{value:.6g}") for name, value in record.rho_min.items()]
      + [(f"PS[{name}]", f"{value:.6f}") for name, value in record.per_property_ps.items()]))
    if args.out:
        atomic_write_json(os.path.join(args.out, 'evaluation.json'), record.to_dict())
        write_trace(bundle, os.path.join(args.out, 'evaluation.trace'))
    return EXIT_OK


def cmd_sensitivity(args: argparse.Namespace) -> int:
    config = _load(args)
    if args.exhaustive:
        config = replace(config, sensitivity=replace(config.sensitivity, exhaustive=True))
    table = SensitivitySweep(config, verbose=not args.quiet).run()
    text = format_sensitivity_table(table)
    atomic_write_csv(os.path.join(args.out, 'sensitivity.csv'), table)
    atomic_write_text(os.path.join(args.out, 'sensitivity.txt'), text)
    if not args.quiet:
        print(text)
    return EXIT_OK


def plot_data(records: List[EvaluationRecord], rho_th: RobustnessThresholds, modes=None):
    """
    Scatter data of cost against overall robustness, and per-mode preservation bars.

    Feasibility is re-derived from each record's minimum robustness and `rho_th`.

    Returns:
        Tuple[pd.DataFrame, pd.DataFrame]: The scatter table and the mode bars.
    """
    if not records:
        raise ValueError("The record log is empty.")
    scatter = pd.DataFrame({
        'config_id': [r.config_id for r in records],
        'cost': [r.cost for r in records],
        'rho_overall': [r.rho_overall for r in records],
        'feasible': [check_feasibility(r.rho_min, rho_th) for r in records],
    }, columns=['config_id', 'cost', 'rho_overall', 'feasible'])
    bars = mode_preservation_bars(select_modes(records, modes or DEFAULT_MODES, rho_th))
    return scatter, bars


def cmd_plot_data(args: argparse.Namespace) -> int:
    records = load_records(args.records)
    if not records:
        raise ValueError(f"Record log {args.records} is empty.")
    if args.config:
        config = _load(args)
        rho_th = config.parsed_spec().robustness_thresholds
        modes = config.modes
    else:
        rho_th = RobustnessThresholds.uniform(records[0].rho_min, 0.0)
        modes = DEFAULT_MODES
    scatter, bars = plot_data(records, rho_th, modes)
    atomic_write_csv(f"{args.out}.scatter.csv", scatter)
    atomic_write_csv(f"{args.out}.modes.csv", bars)
    if not args.quiet:
        print(f"Wrote {len(scatter)} scatter rows to {args.out}.scatter.csv and {len(bars)} bars to "
              f"{args.out}.modes.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='toggle', description="Robustness-guided compression of transformer "
                                                                "models under temporal-logic constraints.")
    commands = parser.add_subparsers(dest='command', required=True)

    def add_common(sub: argparse.ArgumentParser, config_required: bool = True) -> None:
        sub.add_argument('--config', required=config_required, default=None,
                         help="Run configuration (TOML path or bundled name: default, tiny).")
        sub.add_argument('--seed-override', action='append', default=[], metavar='NAME=SEED',
                         help="Override the model, corpus or search seed, e.g. search=3. Repeatable.")
        sub.add_argument('--quiet', action='store_true', help="Do not print progress or tables.")

    sub = commands.add_parser('validate', help="Check a run configuration.")
    add_common(sub)
    sub.set_defaults(func=cmd_validate)

    sub = commands.add_parser('search', help="Run the constrained search.")
    add_common(sub)
    sub.add_argument('--out', required=True, help="Output directory; an existing record log is resumed.")
    sub.add_argument('--budget', type=int, default=None, help="Override the search budget.")
    sub.set_defaults(func=cmd_search)

    sub = commands.add_parser('evaluate', help="Evaluate one compression configuration.")
    add_common(sub)
    sub.add_argument('--kappa', required=True, help="Compression config JSON file, or 'identity'.")
    sub.add_argument('--out', default=None, help="Directory for the record and the signal trace.")
    sub.set_defaults(func=cmd_evaluate)

    sub = commands.add_parser('sensitivity', help="Sweep the predicate thresholds one at a time.")
    add_common(sub)
    sub.add_argument('--out', required=True, help="Output directory.")
    sub.add_argument('--budget', type=int, default=None, help="Search budget per threshold setting.")
    sub.add_argument('--exhaustive', action='store_true', help="Evaluate the whole space per setting.")
    sub.set_defaults(func=cmd_sensitivity)

    sub = commands.add_parser('plot-data', help="Emit plotting tables from a record log.")
    add_common(sub, config_required=False)
    sub.add_argument('records', help="Record log of a search.")
    sub.add_argument('--out', required=True, help="Output prefix.")
    sub.set_defaults(func=cmd_plot_data)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RunConfigError as e:
        print(str(e), file=sys.stderr)
        return EXIT_INVALID_CONFIG
    except (ValueError, KeyError, RuntimeError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
