import numpy as np
from dataclasses import dataclass, replace
from typing import Dict, Iterator, List, Optional, Tuple, Union

from toggle.exceptions import BitWidthError, CoverageError, PruningRatioError
from toggle.model.architecture import LayerComponent, ModelArchitecture

MIN_BITS = 2
MAX_BITS = 16
P_MAX = 0.5
CALIBRATION_POINTS = 64
ELASTIC_LEVELS = np.array([-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0])


@dataclass(frozen=True, eq=False)
class CompressionConfig:
    """
    Bit-width and pruning ratio of every compressible (layer, component) pair.

    Attributes:
        assignments (Dict[Tuple[int, str], Tuple[int, float]]): (layer, component) -> (bits, pruning ratio),
            layers 1-based, stored in canonical (sorted) order.
    """
    assignments: Dict[LayerComponent, Tuple[int, float]]

    def __post_init__(self):
        canonical = {}
        for (layer, component), (bits, ratio) in sorted(self.assignments.items()):
            bits, ratio = int(bits), float(ratio)
            if not MIN_BITS <= bits <= MAX_BITS:
                raise BitWidthError(f"Bit-width {bits} of layer {layer} '{component}' is outside "
                                    f"[{MIN_BITS}, {MAX_BITS}].")
            if not 0.0 <= ratio <= P_MAX:
                raise PruningRatioError(f"Pruning ratio {ratio} of layer {layer} '{component}' is outside "
                                        f"[0, {P_MAX}].")
            canonical[(int(layer), str(component))] = (bits, ratio)
        object.__setattr__(self, 'assignments', canonical)

    @classmethod
    def identity(cls, arch: ModelArchitecture, b_ref: int = MAX_BITS) -> 'CompressionConfig':
        return cls.uniform(arch, b_ref, 0.0)

    @classmethod
    def uniform(cls, arch: ModelArchitecture, bits: int, ratio: float) -> 'CompressionConfig':
        return cls({lc: (bits, ratio) for lc in arch.layer_components()})

    def key(self) -> Tuple[Tuple[int, str, int, float], ...]:
        return tuple((l, c, b, p) for (l, c), (b, p) in self.assignments.items())

    def __eq__(self, other) -> bool:
        if not isinstance(other, CompressionConfig):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __len__(self) -> int:
        return len(self.assignments)

    def __iter__(self) -> Iterator[LayerComponent]:
        return iter(self.assignments)

    def __getitem__(self, layer_component: LayerComponent) -> Tuple[int, float]:
        return self.assignments[layer_component]

    def items(self):
        return self.assignments.items()

    def check_coverage(self, arch: ModelArchitecture) -> None:
        """
        Ensure the configuration assigns every (layer, component) of `arch` exactly once.

        Raises:
            CoverageError: Naming missing and unknown pairs.
        """
        expected = set(arch.layer_components())
        given = set(self.assignments)
        if expected != given:
            missing = sorted(expected - given)
            extra = sorted(given - expected)
            parts = []
            if missing:
                parts.append("missing " + ", ".join(f"layer {l} '{c}'" for l, c in missing))
            if extra:
                parts.append("unknown " + ", ".join(f"layer {l} '{c}'" for l, c in extra))
            raise CoverageError("Compression config does not cover the architecture: " + "; ".join(parts))

    @property
    def avg_bits(self) -> float:
        return float(np.mean([b for b, _ in self.assignments.values()])) if self.assignments else 0.0

    @property
    def avg_pruning(self) -> float:
        return float(np.mean([p for _, p in self.assignments.values()])) if self.assignments else 0.0

    def to_dict(self) -> Dict[str, List[Dict[str, Union[int, str, float]]]]:
        return {'assignments': [{'layer': l, 'component': c, 'bits': b, 'ratio': p}
                                for (l, c), (b, p) in self.assignments.items()]}

    @classmethod
    def from_dict(cls, payload: Dict) -> 'CompressionConfig':
        try:
            entries = payload['assignments']
            return cls({(int(e['layer']), str(e['component'])): (int(e['bits']), float(e['ratio']))
                        for e in entries})
        except (KeyError, TypeError) as e:
            raise ValueError(f"Malformed compression config: {e!r}") from None


def calibration_grid(weights: np.ndarray, bits: int, n_points: int = CALIBRATION_POINTS) -> np.ndarray:
    """
    Candidate scales for a tensor: a geometric grid over [max|w| / 2^bits, max|w|].

    Args:
        weights (np.ndarray): Tensor to calibrate.
        bits (int): Target bit-width.
        n_points (int): Number of grid points.

    Returns:
        np.ndarray: Increasing candidate scales, empty for an all-zero tensor.
    """
    w_max = float(np.max(np.abs(weights))) if weights.size else 0.0
    if w_max == 0.0:
        return np.empty(0)
    return np.geomspace(w_max / 2 ** bits, w_max, n_points)


def quantize_with_scale(weights: np.ndarray, bits: int, scale: float) -> np.ndarray:
    """
    Fake-quantize a tensor with a fixed scale.

    For bits >= 3 the scale is the step of a symmetric uniform grid with 2^bits - 1 levels. For 2 bits the
    scale is the outer level of the stretched-elastic grid {-1, -1/3, 1/3, 1} * scale.
    """
    if bits == 2:
        levels = ELASTIC_LEVELS * scale
        idx = np.argmin(np.abs(weights[..., None] - levels), axis=-1)
        return levels[idx]
    q_max = 2 ** (bits - 1) - 1
    return np.clip(np.round(weights / scale), -q_max, q_max) * scale


def calibrate_scale(weights: np.ndarray, bits: int) -> Optional[float]:
    """Grid scale with the lowest quantization MSE, earliest on ties; None for an all-zero tensor."""
    grid = calibration_grid(weights, bits)
    if grid.size == 0:
        return None
    mse = [np.mean((quantize_with_scale(weights, bits, s) - weights) ** 2) for s in grid]
    return float(grid[int(np.argmin(mse))])


def _check_bits(bits: int) -> int:
    if int(bits) != bits or not MIN_BITS <= bits <= MAX_BITS:
        raise BitWidthError(f"Bit-width must be an integer in [{MIN_BITS}, {MAX_BITS}], got {bits}.")
    return int(bits)


def quantize_component(weights: np.ndarray, bits: int, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Retraining-free quantization of one weight tensor.

    A step-size search stands in for learned step sizes: the scale is picked from the calibration grid by
    minimum mean squared error. 16 bits is the reference precision and leaves weights unchanged.

    Args:
        weights (np.ndarray): The weight tensor.
        bits (int): Bit-width in [2, 16].
        mask (Optional[np.ndarray]): Boolean mask of weights to quantize; masked-out entries are set to zero
            and excluded from calibration.

    Returns:
        np.ndarray: The quantized tensor, same shape as `weights`.
    """
    bits = _check_bits(bits)
    weights = np.asarray(weights, dtype=np.float64)
    if bits == MAX_BITS:
        return weights.copy() if mask is None else np.where(mask, weights, 0.0)
    if mask is None:
        scale = calibrate_scale(weights, bits)
        return np.zeros_like(weights) if scale is None else quantize_with_scale(weights, bits, scale)
    out = np.zeros_like(weights)
    kept = weights[mask]
    scale = calibrate_scale(kept, bits)
    if scale is not None:
        out[mask] = quantize_with_scale(kept, bits, scale)
    return out


def pruning_mask(weights: np.ndarray, ratio: float, max_ratio: float = P_MAX) -> np.ndarray:
    """
    Boolean mask of the weights kept by unstructured magnitude pruning.

    Exactly floor(ratio * size) weights with the smallest magnitude are dropped; among equal magnitudes the
    lower flat index is dropped first.
    """
    if not 0.0 <= ratio <= max_ratio:
        raise PruningRatioError(f"Pruning ratio must lie in [0, {max_ratio}], got {ratio}.")
    flat = np.abs(np.asarray(weights)).ravel()
    n_zero = int(np.floor(ratio * flat.size + 1e-9))
    keep = np.ones(flat.size, dtype=bool)
    if n_zero:
        keep[np.argsort(flat, kind='stable')[:n_zero]] = False
    return keep.reshape(np.shape(weights))


def prune_component(weights: np.ndarray, ratio: float, max_ratio: float = P_MAX) -> np.ndarray:
    """
    Zero the floor(ratio * |W|) smallest-magnitude weights of a tensor, leaving all others unchanged.

    Args:
        weights (np.ndarray): The weight tensor.
        ratio (float): Pruning ratio in [0, max_ratio].
        max_ratio (float): Largest admissible ratio.

    Returns:
        np.ndarray: The pruned tensor.
    """
    weights = np.asarray(weights, dtype=np.float64)
    return np.where(pruning_mask(weights, ratio, max_ratio), weights, 0.0)


def compress_component(weights: np.ndarray, bits: int, ratio: float) -> np.ndarray:
    """Prune, then quantize the surviving weights so pruned entries stay exactly zero."""
    if ratio == 0.0:
        return quantize_component(weights, bits)
    return quantize_component(weights, bits, mask=pruning_mask(weights, ratio))


def apply_config(model, kappa: CompressionConfig):
    """
    Compress a reference model according to a configuration.

    Each component is compressed independently of all others; the base model is not modified.

    Args:
        model (ReferenceModel): The base model.
        kappa (CompressionConfig): The configuration, covering every component of the model.

    Returns:
        ReferenceModel: The compressed model. Identity assignments share the base weights.
    """
    kappa.check_coverage(model.arch)
    weights = {}
    for lc, w in model.weights.items():
        bits, ratio = kappa[lc]
        if bits == MAX_BITS and ratio == 0.0:
            weights[lc] = w
        else:
            compressed = compress_component(w, bits, ratio)
            compressed.flags.writeable = False
            weights[lc] = compressed
    return replace(model, weights=weights)
