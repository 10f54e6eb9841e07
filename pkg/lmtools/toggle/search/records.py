import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from toggle.exceptions import RecordLogError
from toggle.model.compression import CompressionConfig
from toggle.utils import append_json_line, read_json_lines


@dataclass(frozen=True)
class EvaluationRecord:
    """
    Outcome of evaluating one configuration.

    Attributes:
        config_id (int): Position of the evaluation in the search, starting at 0.
        kappa (CompressionConfig): The evaluated configuration.
        cost (float): Cost E, the compressed FLOPs.
        rho_min (Dict[str, float]): Minimum robustness over the dataset per property.
        feasible (bool): Whether every property reaches its robustness threshold.
        avg_pp (float): Average property preservation in percent.
        per_property_ps (Dict[str, float]): Mean preservation score per built-in property, in [0, 1].
        cost_report (Dict[str, float]): Sizes, FLOPs reduction and compression ratio of the configuration.
    """
    config_id: int
    kappa: CompressionConfig
    cost: float
    rho_min: Dict[str, float]
    feasible: bool
    avg_pp: float
    per_property_ps: Dict[str, float] = field(default_factory=dict)
    cost_report: Dict[str, float] = field(default_factory=dict)

    @property
    def rho_overall(self) -> float:
        return min(self.rho_min.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            'config_id': self.config_id,
            'kappa': self.kappa.to_dict(),
            'cost': self.cost,
            'rho_min': dict(self.rho_min),
            'feasible': bool(self.feasible),
            'avg_pp': self.avg_pp,
            'per_property_ps': dict(self.per_property_ps),
            'cost_report': dict(self.cost_report),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> 'EvaluationRecord':
        return cls(config_id=int(payload['config_id']),
                   kappa=CompressionConfig.from_dict(payload['kappa']),
                   cost=float(payload['cost']),
                   rho_min={k: float(v) for k, v in payload['rho_min'].items()},
                   feasible=bool(payload['feasible']),
                   avg_pp=float(payload['avg_pp']),
                   per_property_ps={k: float(v) for k, v in payload.get('per_property_ps', {}).items()},
                   cost_report={k: float(v) for k, v in payload.get('cost_report', {}).items()})

    def with_id(self, config_id: int) -> 'EvaluationRecord':
        return EvaluationRecord(config_id, self.kappa, self.cost, self.rho_min, self.feasible, self.avg_pp,
                                self.per_property_ps, self.cost_report)


class RecordLog:
    """
    Append-only JSON-lines log with one evaluation record per line.

    Each append is flushed to disk, so an interrupted search loses at most the evaluation in progress.
    """

    def __init__(self, path: str):
        self.path = path

    def exists(self) -> bool:
        return os.path.exists(self.path)

    def load(self, repair: bool = True) -> List[EvaluationRecord]:
        """
        Read all complete records.

        Args:
            repair (bool): Truncate a partially written final line so later appends start on a clean line.

        Returns:
            List[EvaluationRecord]: Records in log order.

        Raises:
            RecordLogError: For corrupt lines or non-consecutive config ids.
        """
        if not self.exists():
            return []
        try:
            payloads, valid_bytes = read_json_lines(self.path)
            records = [EvaluationRecord.from_dict(p) for p in payloads]
        except (ValueError, KeyError, TypeError) as e:
            raise RecordLogError(f"Cannot read record log {self.path}: {e}") from None
        if repair and os.path.getsize(self.path) != valid_bytes:
            with open(self.path, 'r+b') as f:
                f.truncate(valid_bytes)
        for i, record in enumerate(records):
            if record.config_id != i:
                raise RecordLogError(f"Record log {self.path} has config id {record.config_id} at position {i}.")
        return records

    def append(self, record: EvaluationRecord) -> None:
        directory = os.path.dirname(os.path.abspath(self.path))
        os.makedirs(directory, exist_ok=True)
        append_json_line(self.path, record.to_dict())


def load_records(path: str) -> List[EvaluationRecord]:
    """Read a record log without modifying it."""
    return RecordLog(path).load(repair=False)
