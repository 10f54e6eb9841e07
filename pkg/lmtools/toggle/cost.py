from dataclasses import dataclass, asdict
from typing import Dict, Optional, Union

from toggle.exceptions import CoverageError
from toggle.model.architecture import ModelArchitecture, ParameterInventory
from toggle.model.compression import CompressionConfig
from toggle.model.transformer import ReferenceModel

BYTES_PER_MB = 1e6

CostSubject = Union[ReferenceModel, ModelArchitecture, ParameterInventory]


@dataclass(frozen=True)
class CostParams:
    """
    Constants of the cost model.

    Attributes:
        seq_len (int): Sequence length S the FLOPs are counted for.
        b_ref (int): Reference bit-width of the uncompressed model.
        mac_factor (float): FLOPs per multiply-accumulate C.
    """
    seq_len: int
    b_ref: int = 16
    mac_factor: float = 2.0

    def __post_init__(self):
        if self.seq_len < 1:
            raise ValueError(f"seq_len must be >= 1, got {self.seq_len}.")
        if self.b_ref < 1:
            raise ValueError(f"b_ref must be >= 1, got {self.b_ref}.")
        if not self.mac_factor > 0:
            raise ValueError(f"mac_factor must be > 0, got {self.mac_factor}.")


@dataclass(frozen=True)
class CostReport:
    """
    Cost of a compressed model relative to its base model.

    Attributes:
        flops_base (float): FLOPs of the uncompressed model.
        flops_compressed (float): FLOPs of the compressed model, the search objective E.
        size_base_bytes (float): Uncompressed model size.
        size_compressed_bytes (float): Compressed model size.
        flops_reduction (float): flops_base / flops_compressed.
        compression_ratio (float): Size reduction in percent.
        seq_len (int): Sequence length the FLOPs refer to.
    """
    flops_base: float
    flops_compressed: float
    size_base_bytes: float
    size_compressed_bytes: float
    flops_reduction: float
    compression_ratio: float
    seq_len: int

    @property
    def size_base_mb(self) -> float:
        return self.size_base_bytes / BYTES_PER_MB

    @property
    def size_compressed_mb(self) -> float:
        return self.size_compressed_bytes / BYTES_PER_MB

    @property
    def gflops_per_token_base(self) -> float:
        return self.flops_base / (self.seq_len * 1e9)

    @property
    def gflops_per_token_compressed(self) -> float:
        return self.flops_compressed / (self.seq_len * 1e9)

    def to_dict(self) -> Dict[str, float]:
        out = asdict(self)
        out.update(size_base_mb=self.size_base_mb, size_compressed_mb=self.size_compressed_mb,
                   gflops_per_token_base=self.gflops_per_token_base,
                   gflops_per_token_compressed=self.gflops_per_token_compressed)
        return out


def as_inventory(model: CostSubject) -> ParameterInventory:
    return model if isinstance(model, ParameterInventory) else model.inventory()


def _assignments(inventory: ParameterInventory, kappa: Optional[CompressionConfig], b_ref: int):
    if kappa is None:
        return {lc: (b_ref, 0.0) for lc in inventory.component_counts}
    if set(kappa.assignments) != set(inventory.component_counts):
        missing = sorted(set(inventory.component_counts) - set(kappa.assignments))
        extra = sorted(set(kappa.assignments) - set(inventory.component_counts))
        raise CoverageError(f"Compression config does not match the model components "
                            f"(missing: {missing}, unknown: {extra}).")
    return kappa.assignments


def component_flops(count: int, bits: int, ratio: float, params: CostParams) -> float:
    """C * (1 - p) * |W| * S * b / b_ref for one component."""
    return params.mac_factor * (1.0 - ratio) * count * params.seq_len * bits / params.b_ref


def flops_base(model: CostSubject, params: CostParams) -> float:
    """
    FLOPs of the uncompressed model, C * sum(|W^{l,c}|) * S.

    Args:
        model (CostSubject): A model, an architecture or a parameter inventory.
        params (CostParams): Cost constants.

    Returns:
        float: The FLOPs.
    """
    inventory = as_inventory(model)
    return float(sum(component_flops(n, params.b_ref, 0.0, params) for n in inventory.component_counts.values()))


def flops_compressed(model: CostSubject, kappa: CompressionConfig, params: CostParams) -> float:
    """
    FLOPs of the compressed model, C * sum((1 - p) * |W^{l,c}| * S * b / b_ref).

    Embeddings and the output head contribute no term.
    """
    inventory = as_inventory(model)
    assignments = _assignments(inventory, kappa, params.b_ref)
    return float(sum(component_flops(n, *assignments[lc], params) for lc, n in inventory.component_counts.items()))


def model_size_bytes(model: CostSubject, kappa: Optional[CompressionConfig] = None, b_ref: int = 16) -> float:
    """
    Storage size in bytes: (1 - p) * |W| * b / 8 per component plus exempt parameters at b_ref bits.

    Args:
        model (CostSubject): A model, an architecture or a parameter inventory.
        kappa (Optional[CompressionConfig]): The configuration; None gives the uncompressed size.
        b_ref (int): Reference bit-width.

    Returns:
        float: Size in bytes (1 MB = 10^6 bytes).
    """
    inventory = as_inventory(model)
    assignments = _assignments(inventory, kappa, b_ref)
    compressible = sum((1.0 - assignments[lc][1]) * n * assignments[lc][0] / 8
                       for lc, n in inventory.component_counts.items())
    return float(compressible + inventory.exempt * b_ref / 8)


def cost_report(model: CostSubject, kappa: CompressionConfig, params: CostParams) -> CostReport:
    """
    Assemble FLOPs, sizes, FLOPs reduction and compression ratio of a configuration.

    Raises:
        ValueError: If the compressed FLOPs are zero.
    """
    inventory = as_inventory(model)
    f_base = flops_base(inventory, params)
    f_comp = flops_compressed(inventory, kappa, params)
    if f_comp == 0.0:
        raise ValueError("Compressed FLOPs are zero; the FLOPs reduction is undefined.")
    s_base = model_size_bytes(inventory, None, params.b_ref)
    s_comp = model_size_bytes(inventory, kappa, params.b_ref)
    cr = 100.0 * (1.0 - s_comp / s_base) if s_base > 0 else 0.0
    return CostReport(flops_base=f_base, flops_compressed=f_comp, size_base_bytes=s_base,
                      size_compressed_bytes=s_comp, flops_reduction=f_base / f_comp,
                      compression_ratio=cr, seq_len=params.seq_len)
