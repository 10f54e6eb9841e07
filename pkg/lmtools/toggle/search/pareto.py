import numpy as np
import pandas as pd
from dataclasses import dataclass
from typing import List, Sequence

from toggle.search.records import EvaluationRecord


@dataclass(frozen=True)
class ParetoPoint:
    """
    Non-dominated record in the (minimize cost, maximize overall robustness) plane.

    Attributes:
        record (EvaluationRecord): The record.
        rho_overall (float): Minimum over properties of the record's minimum robustness.
    """
    record: EvaluationRecord
    rho_overall: float


def pareto_front(records: Sequence[EvaluationRecord], feasible_only: bool = True) -> List[ParetoPoint]:
    """
    Records not dominated in cost (lower is better) and overall robustness (higher is better).

    A record is dominated if another one is at least as good in both objectives and strictly better in one.
    Records with identical objectives do not dominate each other and are all kept.

    Args:
        records (Sequence[EvaluationRecord]): Evaluated records.
        feasible_only (bool): Consider only feasible records.

    Returns:
        List[ParetoPoint]: The front sorted by cost, then config id.
    """
    candidates = [r for r in records if r.feasible or not feasible_only]
    if not candidates:
        return []
    cost = np.array([r.cost for r in candidates])
    rho = np.array([r.rho_overall for r in candidates])
    # dominated[i, j]: record j dominates record i
    no_worse = (cost[None, :] <= cost[:, None]) & (rho[None, :] >= rho[:, None])
    better = (cost[None, :] < cost[:, None]) | (rho[None, :] > rho[:, None])
    dominated = (no_worse & better).any(axis=1)
    front = [ParetoPoint(r, float(rho[i])) for i, r in enumerate(candidates) if not dominated[i]]
    return sorted(front, key=lambda p: (p.record.cost, p.record.config_id))


def pareto_table(front: Sequence[ParetoPoint]) -> pd.DataFrame:
    """Tabular form of a front: config id, cost, overall robustness and AvgPP."""
    return pd.DataFrame({
        'config_id': [p.record.config_id for p in front],
        'cost': [p.record.cost for p in front],
        'rho_overall': [p.rho_overall for p in front],
        'avg_pp': [p.record.avg_pp for p in front],
    }, columns=['config_id', 'cost', 'rho_overall', 'avg_pp'])
