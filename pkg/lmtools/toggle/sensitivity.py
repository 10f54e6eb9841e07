import sys
import numpy as np
import pandas as pd
from dataclasses import replace
from tqdm import tqdm
from typing import Dict, List, Optional, Tuple

from toggle.config import RunConfig, SpecConfig
from toggle.search.optimizer import ConfigEvaluator, run_search
from toggle.search.records import EvaluationRecord

THRESHOLD_NAMES = ('epsilon', 'delta', 'gamma', 'tau')
SWEEP_COLUMNS = ['varied', 'epsilon', 'delta', 'gamma', 'tau', 'fr', 'cr', 'best_cost', 'config_id',
                 'n_feasible', 'n_evaluated']

ThresholdKey = Tuple[float, float, float, float]


def sweep_settings(spec: SpecConfig, grids: Dict[str, Tuple[float, ...]]) -> List[Tuple[str, SpecConfig]]:
    """
    One-at-a-time threshold settings: each threshold runs through its grid while the others keep their values.

    Args:
        spec (SpecConfig): The baseline thresholds.
        grids (Dict[str, Tuple[float, ...]]): Values per threshold name.

    Returns:
        List[Tuple[str, SpecConfig]]: (varied threshold, spec) pairs in grid order.
    """
    settings = []
    for name in THRESHOLD_NAMES:
        for value in grids.get(name, ()):
            settings.append((name, replace(spec, **{name: float(value)})))
    return settings


def _key(spec: SpecConfig) -> ThresholdKey:
    return spec.epsilon, spec.delta, spec.gamma, spec.tau


def _best(records: List[EvaluationRecord]) -> Optional[EvaluationRecord]:
    feasible = [r for r in records if r.feasible]
    return min(feasible, key=lambda r: (r.cost, r.config_id)) if feasible else None


class SensitivitySweep:
    """
    Threshold sensitivity analysis: for every threshold setting, the FLOPs reduction and compression ratio of
    the cheapest feasible configuration found.

    Settings with identical thresholds are evaluated once, and signal bundles are cached across settings so
    every configuration runs through inference at most once.
    """

    def __init__(self, config: RunConfig, verbose: bool = False):
        """
        Attributes:
            config (RunConfig): The run configuration; its sensitivity block defines grids and budget.
            verbose (bool): Show a progress bar over settings.
            results (Dict[ThresholdKey, List[EvaluationRecord]]): Records per evaluated threshold setting.
        """
        self.config = config
        self.verbose = verbose
        self.results: Dict[ThresholdKey, List[EvaluationRecord]] = {}
        self._evaluator: Optional[ConfigEvaluator] = None

    @property
    def evaluator(self) -> ConfigEvaluator:
        if self._evaluator is None:
            model = self.config.build_model()
            corpus = self.config.build_corpus(model)
            self._evaluator = ConfigEvaluator(model, corpus, self.config.parsed_spec(), self.config.cost_params(),
                                              cache_signals=True)
            self._evaluator.base_passes
        return self._evaluator

    def evaluate_setting(self, spec: SpecConfig) -> List[EvaluationRecord]:
        key = _key(spec)
        if key in self.results:
            return self.results[key]
        parsed = self.config.parsed_spec(spec)
        evaluate = self.evaluator.with_spec(parsed)
        space = self.config.search_space()
        settings = self.config.sensitivity
        if settings.exhaustive:
            records = [evaluate(kappa, i) for i, kappa in enumerate(space.enumerate())]
        else:
            s = self.config.search
            n_init = None if s.n_init is None else min(s.n_init, settings.budget)
            records = run_search(space, evaluate, list(parsed.properties),
                                 [parsed.robustness_thresholds[name] for name in parsed.properties],
                                 budget=settings.budget, n_init=n_init, seed=s.seed, pool_size=s.pool_size,
                                 refit_every=s.refit_every)
        self.results[key] = records
        return records

    def run(self) -> pd.DataFrame:
        """
        Evaluate every setting of the sweep.

        Returns:
            pd.DataFrame: One row per setting with the four thresholds, FR and CR of the best feasible
                configuration (NaN if none is feasible), its cost and config id and the number of feasible
                and evaluated configurations.
        """
        settings = sweep_settings(self.config.spec, self.config.sensitivity.grids())
        rows = []
        for varied, spec in tqdm(settings, file=sys.stdout, colour='GREEN', bar_format='{l_bar}{bar:20}{r_bar}',
                                 disable=not self.verbose, desc='Sensitivity'):
            records = self.evaluate_setting(spec)
            best = _best(records)
            rows.append({
                'varied': varied,
                'epsilon': spec.epsilon,
                'delta': spec.delta,
                'gamma': spec.gamma,
                'tau': spec.tau,
                'fr': best.cost_report['flops_reduction'] if best else np.nan,
                'cr': best.cost_report['compression_ratio'] if best else np.nan,
                'best_cost': best.cost if best else np.nan,
                'config_id': best.config_id if best else -1,
                'n_feasible': sum(r.feasible for r in records),
                'n_evaluated': len(records),
            })
        return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def sensitivity_sweep(config: RunConfig, verbose: bool = False) -> pd.DataFrame:
    return SensitivitySweep(config, verbose).run()


def format_sensitivity_table(table: pd.DataFrame) -> str:
    """Aligned plain-text rendering of a sweep, one block per varied threshold."""
    header = f"{'epsilon':>8} {'delta':>8} {'gamma':>8} {'tau':>8} {'FR(x)':>8} {'CR(%)':>8}"
    lines = []
    for varied, group in table.groupby('varied', sort=False):
        lines += [f"Varying {varied}", header, '-' * len(header)]
        for _, row in group.iterrows():
            fr = f"{row['fr']:>8.2f}" if np.isfinite(row['fr']) else f"{'n/a':>8}"
            cr = f"{row['cr']:>8.2f}" if np.isfinite(row['cr']) else f"{'n/a':>8}"
            lines.append(f"{row['epsilon']:>8.2f} {row['delta']:>8.2f} {row['gamma']:>8.2f} {row['tau']:>8.2f} "
                         f"{fr} {cr}")
        lines.append('')
    return '\n'.join(lines)
