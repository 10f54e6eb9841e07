import itertools
import numpy as np
from dataclasses import dataclass
from scipy.stats import qmc
from typing import Iterator, List, Optional, Sequence, Tuple

from toggle.exceptions import SearchSpaceError
from toggle.model.architecture import LayerComponent, ModelArchitecture
from toggle.model.compression import MAX_BITS, MIN_BITS, P_MAX, CompressionConfig

DEFAULT_BITS = tuple(range(2, 17))
DEFAULT_RATIOS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)

GridIndex = Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class SearchSpace:
    """
    Discrete configuration space: one bit-width and one pruning ratio per searched component.

    Components that are not searched stay uncompressed, at MAX_BITS without pruning.

    Attributes:
        arch (ModelArchitecture): The architecture being compressed.
        bits (Tuple[int, ...]): Admissible bit-widths B.
        ratios (Tuple[float, ...]): Admissible pruning ratios P.
        components (Optional[Tuple[Tuple[int, str], ...]]): Searched (layer, component) pairs; all if None.
    """
    arch: ModelArchitecture
    bits: Tuple[int, ...] = DEFAULT_BITS
    ratios: Tuple[float, ...] = DEFAULT_RATIOS
    components: Optional[Tuple[LayerComponent, ...]] = None

    def __post_init__(self):
        bits = tuple(sorted({int(b) for b in self.bits}))
        ratios = tuple(sorted({float(p) for p in self.ratios}))
        if not bits or not ratios:
            raise SearchSpaceError("Bit-width and pruning-ratio sets must not be empty.")
        if bits[0] < MIN_BITS or bits[-1] > MAX_BITS:
            raise SearchSpaceError(f"Bit-widths must lie in [{MIN_BITS}, {MAX_BITS}], got {list(bits)}.")
        if ratios[0] < 0.0 or ratios[-1] > P_MAX:
            raise SearchSpaceError(f"Pruning ratios must lie in [0, {P_MAX}], got {list(ratios)}.")
        all_components = self.arch.layer_components()
        if self.components is None:
            components = tuple(all_components)
        else:
            components = tuple(sorted({(int(l), str(c)) for l, c in self.components}))
            unknown = [lc for lc in components if lc not in all_components]
            if unknown:
                raise SearchSpaceError(f"Searched components {unknown} do not exist in the architecture.")
        if not components:
            raise SearchSpaceError("At least one component has to be searched.")
        object.__setattr__(self, 'bits', bits)
        object.__setattr__(self, 'ratios', ratios)
        object.__setattr__(self, 'components', components)

    @property
    def n_dims(self) -> int:
        return 2 * len(self.components)

    @property
    def size(self) -> int:
        return (len(self.bits) * len(self.ratios)) ** len(self.components)

    def _fixed(self) -> dict:
        searched = set(self.components)
        return {lc: (MAX_BITS, 0.0) for lc in self.arch.layer_components() if lc not in searched}

    def from_indices(self, index: GridIndex) -> CompressionConfig:
        assignments = self._fixed()
        for lc, (bi, pi) in zip(self.components, index):
            assignments[lc] = (self.bits[bi], self.ratios[pi])
        return CompressionConfig(assignments)

    def to_indices(self, kappa: CompressionConfig) -> GridIndex:
        """Grid indices of a configuration; raises SearchSpaceError if it is not a grid point."""
        try:
            return tuple((self.bits.index(kappa[lc][0]), self.ratios.index(kappa[lc][1])) for lc in self.components)
        except (KeyError, ValueError):
            raise SearchSpaceError("Configuration is not a point of the search space.") from None

    def encode(self, kappa: CompressionConfig) -> np.ndarray:
        """
        Map a configuration to [0, 1]^(2 * components): (b - min B) / (max B - min B) and p / P_max.
        """
        b_lo, b_span = self.bits[0], self.bits[-1] - self.bits[0]
        p_max = self.ratios[-1]
        x = np.empty(self.n_dims)
        for i, lc in enumerate(self.components):
            b, p = kappa[lc]
            x[2 * i] = (b - b_lo) / b_span if b_span else 0.0
            x[2 * i + 1] = p / p_max if p_max else 0.0
        return x

    def encode_many(self, configs: Sequence[CompressionConfig]) -> np.ndarray:
        return np.array([self.encode(k) for k in configs]).reshape(len(configs), self.n_dims)

    def decode(self, x: np.ndarray) -> CompressionConfig:
        """Nearest grid point of an encoding, lower value on ties."""
        bits_enc = self.encode_axis(self.bits, self.bits[0], self.bits[-1] - self.bits[0])
        ratio_enc = self.encode_axis(self.ratios, 0.0, self.ratios[-1])
        index = tuple((int(np.argmin(np.abs(bits_enc - x[2 * i]))), int(np.argmin(np.abs(ratio_enc - x[2 * i + 1]))))
                      for i in range(len(self.components)))
        return self.from_indices(index)

    @staticmethod
    def encode_axis(values: Sequence[float], lo: float, span: float) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        return (values - lo) / span if span else np.zeros_like(values)

    def enumerate(self) -> Iterator[CompressionConfig]:
        """All configurations in lexicographic grid-index order."""
        per_component = list(itertools.product(range(len(self.bits)), range(len(self.ratios))))
        for index in itertools.product(per_component, repeat=len(self.components)):
            yield self.from_indices(index)

    def random_configs(self, rng: np.random.Generator, n: int) -> List[CompressionConfig]:
        bi = rng.integers(0, len(self.bits), size=(n, len(self.components)))
        pi = rng.integers(0, len(self.ratios), size=(n, len(self.components)))
        return [self.from_indices(tuple(zip(bi[k].tolist(), pi[k].tolist()))) for k in range(n)]

    def neighbors(self, kappa: CompressionConfig) -> List[CompressionConfig]:
        """Configurations differing from `kappa` by one grid step in one coordinate."""
        index = [list(pair) for pair in self.to_indices(kappa)]
        sizes = (len(self.bits), len(self.ratios))
        out = []
        for i in range(len(index)):
            for axis in (0, 1):
                for step in (-1, 1):
                    moved = index[i][axis] + step
                    if 0 <= moved < sizes[axis]:
                        candidate = [tuple(pair) for pair in index]
                        pair = list(index[i])
                        pair[axis] = moved
                        candidate[i] = tuple(pair)
                        out.append(self.from_indices(tuple(candidate)))
        return out

    def identity(self) -> CompressionConfig:
        """Least compressed configuration: largest bit-width and smallest ratio everywhere."""
        return self.from_indices(tuple((len(self.bits) - 1, 0) for _ in self.components))


def initial_design(space: SearchSpace, n_init: int, seed: int) -> List[CompressionConfig]:
    """
    Latin-hypercube initial design snapped to the grid, with the least compressed configuration first.

    Args:
        space (SearchSpace): The search space.
        n_init (int): Number of distinct configurations, at least 2.
        seed (int): Search seed.

    Returns:
        List[CompressionConfig]: The design.

    Raises:
        SearchSpaceError: If n_init < 2 or n_init exceeds the size of the space.
    """
    if n_init < 2:
        raise SearchSpaceError(f"The initial design needs at least 2 configurations, got {n_init}.")
    if n_init > space.size:
        raise SearchSpaceError(f"Cannot draw {n_init} distinct configurations from a space of {space.size}.")
    design = [space.identity()]
    seen = {design[0]}
    sampler = qmc.LatinHypercube(d=space.n_dims, seed=np.random.default_rng(seed))
    levels = np.array([len(space.bits), len(space.ratios)] * len(space.components))
    for _ in range(8):
        if len(design) >= n_init:
            break
        sample = sampler.random(n_init)
        cells = np.minimum((sample * levels).astype(int), levels - 1)
        for row in cells:
            kappa = space.from_indices(tuple(zip(row[0::2].tolist(), row[1::2].tolist())))
            if kappa not in seen:
                seen.add(kappa)
                design.append(kappa)
                if len(design) >= n_init:
                    break
    if len(design) < n_init:
        for kappa in space.enumerate():
            if kappa not in seen:
                seen.add(kappa)
                design.append(kappa)
                if len(design) >= n_init:
                    break
    return design
