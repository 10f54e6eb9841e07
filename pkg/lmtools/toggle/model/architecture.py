from dataclasses import dataclass, field, asdict
from typing import Dict, List, Tuple

from toggle.exceptions import ArchitectureError

STYLES = ('gpt-like', 'llama-like')
GPT_COMPONENTS = ('attn_qkv', 'attn_out', 'ffn')
LLAMA_COMPONENTS = ('q_proj', 'k_proj', 'v_proj', 'attn_out', 'ffn_gate', 'ffn_up', 'ffn_down')

LayerComponent = Tuple[int, str]


@dataclass(frozen=True)
class ParameterInventory:
    """
    Parameter counts of a model as seen by the cost model.

    Attributes:
        component_counts (Dict[Tuple[int, str], int]): |W^{l,c}| per (1-based layer, component).
        exempt (int): Parameters that are never compressed (embeddings, norms, output head).
    """
    component_counts: Dict[LayerComponent, int] = field(default_factory=dict)
    exempt: int = 0

    @property
    def compressible(self) -> int:
        return sum(self.component_counts.values())

    @property
    def total(self) -> int:
        return self.compressible + self.exempt


def architecture_violations(style: str, n_layers: int, hidden_dim: int, n_heads: int, vocab_size: int,
                            max_context: int, ffn_mult: int = 4, init_std: float = 0.02,
                            tie_embeddings: bool = False) -> List[str]:
    """Every violated architecture constraint as '<field>: <message>'."""
    problems = []
    if style not in STYLES:
        problems.append(f"style: must be one of {', '.join(STYLES)}, got '{style}'")
    for name, value in (('n_layers', n_layers), ('hidden_dim', hidden_dim), ('n_heads', n_heads),
                        ('ffn_mult', ffn_mult)):
        if int(value) < 1:
            problems.append(f"{name}: must be >= 1")
    if vocab_size < 2:
        problems.append("vocab_size: must be >= 2")
    if max_context < 2:
        problems.append("max_context: must be >= 2")
    if n_heads >= 1 and hidden_dim % n_heads != 0:
        problems.append(f"hidden_dim: {hidden_dim} is not divisible by n_heads {n_heads}")
    elif style == 'llama-like' and (hidden_dim // max(n_heads, 1)) % 2 != 0:
        problems.append("hidden_dim: llama-like models need an even head dimension for rotary embeddings")
    if not init_std > 0:
        problems.append("init_std: must be > 0")
    return problems


@dataclass(frozen=True)
class ModelArchitecture:
    """
    Decoder-only transformer architecture.

    gpt-like models use LayerNorm, GELU feed-forward blocks and learned positional embeddings with the
    compressible components attn_qkv, attn_out and ffn (up and down projection). llama-like models use
    RMSNorm, SwiGLU feed-forward blocks and rotary position embeddings with separate q/k/v projections.

    Attributes:
        style (str): 'gpt-like' or 'llama-like'.
        n_layers (int): Number of transformer layers.
        hidden_dim (int): Model width, divisible by n_heads.
        n_heads (int): Number of attention heads.
        vocab_size (int): Vocabulary size.
        max_context (int): Maximum context length T.
        ffn_mult (int): Feed-forward width as a multiple of hidden_dim.
        init_std (float): Standard deviation of the Gaussian weight initialization.
        tie_embeddings (bool): Whether the output head reuses the token embedding.
    """
    style: str
    n_layers: int
    hidden_dim: int
    n_heads: int
    vocab_size: int
    max_context: int
    ffn_mult: int = 4
    init_std: float = 0.02
    tie_embeddings: bool = False

    def __post_init__(self):
        problems = architecture_violations(**asdict(self))
        if problems:
            raise ArchitectureError("Invalid architecture: " + "; ".join(problems))

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads

    @property
    def ffn_dim(self) -> int:
        return self.ffn_mult * self.hidden_dim

    @property
    def components(self) -> Tuple[str, ...]:
        return GPT_COMPONENTS if self.style == 'gpt-like' else LLAMA_COMPONENTS

    def layer_components(self) -> List[LayerComponent]:
        """All (layer, component) pairs in canonical order, layers 1-based."""
        return [(l, c) for l in range(1, self.n_layers + 1) for c in self.components]

    def component_shape(self, component: str) -> Tuple[int, ...]:
        d, f = self.hidden_dim, self.ffn_dim
        shapes = {
            'attn_qkv': (d, 3 * d),
            'attn_out': (d, d),
            'ffn': (2, d, f),
            'q_proj': (d, d),
            'k_proj': (d, d),
            'v_proj': (d, d),
            'ffn_gate': (d, f),
            'ffn_up': (d, f),
            'ffn_down': (f, d),
        }
        if component not in self.components:
            raise ArchitectureError(f"Component '{component}' does not exist in {self.style} models.")
        return shapes[component]

    def component_size(self, component: str) -> int:
        size = 1
        for n in self.component_shape(component):
            size *= n
        return size

    def exempt_params(self) -> int:
        """Embeddings, normalization gains/biases and the output head."""
        d, v = self.hidden_dim, self.vocab_size
        head = 0 if self.tie_embeddings else d * v
        if self.style == 'gpt-like':
            # token + learned positions, two LayerNorms per layer and a final one (gain and bias)
            return v * d + self.max_context * d + self.n_layers * 4 * d + 2 * d + head
        return v * d + self.n_layers * 2 * d + d + head

    def inventory(self) -> ParameterInventory:
        counts = {(l, c): self.component_size(c) for l, c in self.layer_components()}
        return ParameterInventory(counts, self.exempt_params())

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


ARCHITECTURE_PRESETS: Dict[str, ModelArchitecture] = {
    'tiny-gpt': ModelArchitecture('gpt-like', n_layers=2, hidden_dim=32, n_heads=4, vocab_size=64,
                                  max_context=32, init_std=0.3),
    'tiny-llama': ModelArchitecture('llama-like', n_layers=2, hidden_dim=32, n_heads=4, vocab_size=64,
                                    max_context=32, ffn_mult=3, init_std=0.3),
    'gpt2-small': ModelArchitecture('gpt-like', n_layers=12, hidden_dim=768, n_heads=12, vocab_size=50257,
                                    max_context=1024, tie_embeddings=True),
    'llama-small': ModelArchitecture('llama-like', n_layers=8, hidden_dim=512, n_heads=8, vocab_size=32000,
                                     max_context=2048, ffn_mult=3),
}


def get_preset(name: str) -> ModelArchitecture:
    try:
        return ARCHITECTURE_PRESETS[name]
    except KeyError:
        raise KeyError(f"Unknown architecture preset '{name}'. "
                       f"Available presets: {', '.join(ARCHITECTURE_PRESETS)}.") from None
