import numpy as np
import pandas as pd
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Union

from toggle.cost import CostParams, CostSubject, cost_report
from toggle.search.records import EvaluationRecord
from toggle.stl.formulas import BUILTIN_PROPERTIES, RobustnessThresholds, check_feasibility

DEFAULT_MODES: Dict[str, float] = {'Strict': 99.0, 'Optimal': 95.0, 'Relaxed': 85.0}
NO_SELECTION = 'no configuration meets target'

REPORT_COLUMNS = ['mode', 'target', 'config_id', 'avg_pp', 'avg_bits', 'avg_prun', 'cr', 'fr',
                  'bms_mb', 'cms_mb', 'base_gflops_per_token', 'comp_gflops_per_token', 'cost', 'status']


@dataclass(frozen=True)
class OperatingMode:
    """
    Operating mode: the cheapest feasible configuration whose AvgPP reaches a target.

    Attributes:
        name (str): Mode name, e.g. Strict, Optimal, Relaxed.
        target (float): AvgPP target in percent.
        selected (Optional[EvaluationRecord]): The selected record, None if no record qualifies.
    """
    name: str
    target: float
    selected: Optional[EvaluationRecord] = None

    @property
    def status(self) -> str:
        return 'selected' if self.selected is not None else NO_SELECTION


def select_mode(records: Sequence[EvaluationRecord], target: float, name: str = 'custom',
                rho_th: Optional[RobustnessThresholds] = None) -> OperatingMode:
    """
    Select the lowest-cost feasible record with avg_pp >= target.

    Ties on cost go to the higher AvgPP, then to the lower config id.

    Args:
        records (Sequence[EvaluationRecord]): Evaluated records.
        target (float): AvgPP target in percent.
        name (str): Name of the mode.
        rho_th (Optional[RobustnessThresholds]): If given, feasibility is re-derived from each record's
            minimum robustness instead of trusting its flag.

    Returns:
        OperatingMode: The mode, without selection if nothing qualifies.
    """
    def feasible(r: EvaluationRecord) -> bool:
        return check_feasibility(r.rho_min, rho_th) if rho_th is not None else r.feasible

    qualifying = [r for r in records if feasible(r) and r.avg_pp >= target]
    if not qualifying:
        return OperatingMode(name, float(target), None)
    best = min(qualifying, key=lambda r: (r.cost, -r.avg_pp, r.config_id))
    return OperatingMode(name, float(target), best)


def select_modes(records: Sequence[EvaluationRecord], modes: Optional[Mapping[str, float]] = None,
                 rho_th: Optional[RobustnessThresholds] = None) -> List[OperatingMode]:
    modes = DEFAULT_MODES if modes is None else modes
    return [select_mode(records, target, name, rho_th) for name, target in modes.items()]


def _report_of(record: EvaluationRecord, model: Optional[CostSubject], params: Optional[CostParams]) -> Dict:
    if record.cost_report:
        return record.cost_report
    if model is None or params is None:
        raise ValueError(f"Record {record.config_id} carries no cost report; pass model and params.")
    return cost_report(model, record.kappa, params).to_dict()


def mode_report(records: Sequence[EvaluationRecord],
                modes: Optional[Union[Mapping[str, float], Sequence[float]]] = None,
                model: Optional[CostSubject] = None, params: Optional[CostParams] = None,
                rho_th: Optional[RobustnessThresholds] = None) -> pd.DataFrame:
    """
    Summarize the configuration selected for each operating mode.

    Args:
        records (Sequence[EvaluationRecord]): Evaluated records.
        modes (Optional[Union[Mapping[str, float], Sequence[float]]]): Mode targets by name, or bare targets;
            Strict/Optimal/Relaxed (99/95/85) by default.
        model (Optional[CostSubject]): Model used to cost records that carry no cost report.
        params (Optional[CostParams]): Cost constants for `model`.
        rho_th (Optional[RobustnessThresholds]): Re-derive feasibility with these thresholds.

    Returns:
        pd.DataFrame: One row per mode with AvgBits, AvgPrun (%), CR (%), FR (x), baseline and compressed
            model sizes (MB) and GFLOPs per token.
    """
    if modes is None:
        modes = DEFAULT_MODES
    elif not isinstance(modes, Mapping):
        modes = {f"target_{t:g}": float(t) for t in modes}
    rows = []
    for mode in select_modes(records, modes, rho_th):
        r = mode.selected
        if r is None:
            rows.append({'mode': mode.name, 'target': mode.target, 'status': mode.status})
            continue
        rep = _report_of(r, model, params)
        rows.append({
            'mode': mode.name,
            'target': mode.target,
            'config_id': r.config_id,
            'avg_pp': r.avg_pp,
            'avg_bits': r.kappa.avg_bits,
            'avg_prun': 100.0 * r.kappa.avg_pruning,
            'cr': rep['compression_ratio'],
            'fr': rep['flops_reduction'],
            'bms_mb': rep['size_base_mb'],
            'cms_mb': rep['size_compressed_mb'],
            'base_gflops_per_token': rep['gflops_per_token_base'],
            'comp_gflops_per_token': rep['gflops_per_token_compressed'],
            'cost': r.cost,
            'status': mode.status,
        })
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def format_mode_table(report: pd.DataFrame) -> str:
    """Aligned plain-text rendering of a mode report."""
    header = (f"{'Mode':<10} {'Target':>7} {'AvgPP':>7} {'AvgBits':>8} {'AvgPrun':>8} {'CR(%)':>7} "
              f"{'FR(x)':>7} {'BMS(MB)':>10} {'CMS(MB)':>10} {'BF/T':>10} {'CF/T':>10}")
    lines = [header, '-' * len(header)]
    for _, row in report.iterrows():
        if row['status'] != 'selected':
            lines.append(f"{row['mode']:<10} {row['target']:>7.1f}  {row['status']}")
            continue
        lines.append(f"{row['mode']:<10} {row['target']:>7.1f} {row['avg_pp']:>7.2f} {row['avg_bits']:>8.2f} "
                     f"{row['avg_prun']:>8.2f} {row['cr']:>7.2f} {row['fr']:>7.2f} {row['bms_mb']:>10.4f} "
                     f"{row['cms_mb']:>10.4f} {row['base_gflops_per_token']:>10.4g} "
                     f"{row['comp_gflops_per_token']:>10.4g}")
    return '\n'.join(lines) + '\n'


def mode_preservation_bars(modes: Sequence[OperatingMode]) -> pd.DataFrame:
    """Per mode and built-in property, the mean preservation score in percent (NaN without selection)."""
    rows = []
    for mode in modes:
        for prop in BUILTIN_PROPERTIES:
            value = np.nan
            if mode.selected is not None and prop in mode.selected.per_property_ps:
                value = 100.0 * mode.selected.per_property_ps[prop]
            rows.append({'mode': mode.name, 'property': prop, 'preservation': value})
    return pd.DataFrame(rows, columns=['mode', 'property', 'preservation'])
