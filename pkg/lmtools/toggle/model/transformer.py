import numpy as np
from dataclasses import dataclass
from typing import Dict, List, NamedTuple

from toggle.exceptions import ArchitectureError
from toggle.model.architecture import LayerComponent, ModelArchitecture, ParameterInventory

NORM_EPS = 1e-5


class ForwardPass(NamedTuple):
    """
    Outputs of one causal forward pass over a token sequence of length n.

    Attributes:
        probs (np.ndarray): Next-token distributions, shape (n, vocab_size); row i conditions on tokens 0..i.
        attentions (List[np.ndarray]): Per layer, attention weights of shape (n_heads, n, n).
        hidden (np.ndarray): Final normalized hidden states, shape (n, hidden_dim).
    """
    probs: np.ndarray
    attentions: List[np.ndarray]
    hidden: np.ndarray


@dataclass(frozen=True)
class ReferenceModel:
    """
    Decoder-only transformer whose compressible weights are addressed by (layer, component).

    Attributes:
        arch (ModelArchitecture): The architecture.
        weights (Dict[Tuple[int, str], np.ndarray]): Compressible weight tensors, layers 1-based.
        exempt_weights (Dict[str, np.ndarray]): Embeddings, normalization parameters and output head.
        seed (int): Seed the weights were drawn with.
    """
    arch: ModelArchitecture
    weights: Dict[LayerComponent, np.ndarray]
    exempt_weights: Dict[str, np.ndarray]
    seed: int

    @property
    def exempt_params(self) -> int:
        return int(sum(w.size for w in self.exempt_weights.values()))

    def inventory(self) -> ParameterInventory:
        return ParameterInventory({lc: int(w.size) for lc, w in self.weights.items()}, self.exempt_params)

    def forward(self, tokens: np.ndarray) -> ForwardPass:
        """
        Run a causal forward pass.

        Args:
            tokens (np.ndarray): Token ids, 1-D, length between 1 and max_context.

        Returns:
            ForwardPass: Distributions, attention maps and final hidden states for every position.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 1 or not 1 <= len(tokens) <= self.arch.max_context:
            raise ArchitectureError(f"Expected 1 to {self.arch.max_context} tokens, got shape {tokens.shape}.")
        if tokens.min() < 0 or tokens.max() >= self.arch.vocab_size:
            raise ArchitectureError(f"Token ids must lie in [0, {self.arch.vocab_size}).")
        if self.arch.style == 'gpt-like':
            return self._forward_gpt(tokens)
        return self._forward_llama(tokens)

    def _head(self, hidden: np.ndarray) -> np.ndarray:
        head = self.exempt_weights['tok_emb'].T if self.arch.tie_embeddings else self.exempt_weights['head']
        return softmax(hidden @ head)

    def _forward_gpt(self, tokens: np.ndarray) -> ForwardPass:
        ex, d = self.exempt_weights, self.arch.hidden_dim
        x = ex['tok_emb'][tokens] + ex['pos_emb'][:len(tokens)]
        attentions = []
        for l in range(1, self.arch.n_layers + 1):
            h = layer_norm(x, ex[f'ln1_g.{l}'], ex[f'ln1_b.{l}'])
            qkv = h @ self.weights[(l, 'attn_qkv')]
            q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
            out, attn = self._attention(q, k, v)
            attentions.append(attn)
            x = x + out @ self.weights[(l, 'attn_out')]
            h = layer_norm(x, ex[f'ln2_g.{l}'], ex[f'ln2_b.{l}'])
            up, down = self.weights[(l, 'ffn')]
            x = x + gelu(h @ up) @ down.T
        hidden = layer_norm(x, ex['lnf_g'], ex['lnf_b'])
        return ForwardPass(self._head(hidden), attentions, hidden)

    def _forward_llama(self, tokens: np.ndarray) -> ForwardPass:
        ex = self.exempt_weights
        x = ex['tok_emb'][tokens]
        cos, sin = rotary_tables(len(tokens), self.arch.head_dim)
        attentions = []
        for l in range(1, self.arch.n_layers + 1):
            h = rms_norm(x, ex[f'norm1_g.{l}'])
            q = h @ self.weights[(l, 'q_proj')]
            k = h @ self.weights[(l, 'k_proj')]
            v = h @ self.weights[(l, 'v_proj')]
            out, attn = self._attention(q, k, v, rotary=(cos, sin))
            attentions.append(attn)
            x = x + out @ self.weights[(l, 'attn_out')]
            h = rms_norm(x, ex[f'norm2_g.{l}'])
            gate = h @ self.weights[(l, 'ffn_gate')]
            x = x + (silu(gate) * (h @ self.weights[(l, 'ffn_up')])) @ self.weights[(l, 'ffn_down')]
        hidden = rms_norm(x, ex['normf_g'])
        return ForwardPass(self._head(hidden), attentions, hidden)

    def _attention(self, q: np.ndarray, k: np.ndarray, v: np.ndarray, rotary=None):
        n, heads, dh = q.shape[0], self.arch.n_heads, self.arch.head_dim
        q, k, v = (m.reshape(n, heads, dh).transpose(1, 0, 2) for m in (q, k, v))
        if rotary is not None:
            q, k = apply_rotary(q, *rotary), apply_rotary(k, *rotary)
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(dh)
        scores = np.where(np.tril(np.ones((n, n), dtype=bool)), scores, -np.inf)
        attn = softmax(scores)
        out = (attn @ v).transpose(1, 0, 2).reshape(n, heads * dh)
        return out, attn


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + NORM_EPS) * gain + bias


def rms_norm(x: np.ndarray, gain: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x ** 2, axis=-1, keepdims=True) + NORM_EPS) * gain


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def rotary_tables(n: int, head_dim: int, base: float = 10000.0):
    inv_freq = base ** (-np.arange(0, head_dim, 2) / head_dim)
    angles = np.outer(np.arange(n), inv_freq)
    return np.cos(angles), np.sin(angles)


def apply_rotary(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # rotate interleaved pairs (x0, x1), (x2, x3), ...
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def build_model(arch: ModelArchitecture, seed: int) -> ReferenceModel:
    """
    Instantiate a reference model with Gaussian weights drawn from `seed`.

    Weights are drawn in a fixed order (embeddings, then layer by layer in component order, then the head),
    so the model is a pure function of (arch, seed). Normalization gains start at one and biases at zero.

    Args:
        arch (ModelArchitecture): The architecture.
        seed (int): Model seed.

    Returns:
        ReferenceModel: The base model.
    """
    rng = np.random.default_rng(seed)
    d, std = arch.hidden_dim, arch.init_std
    exempt = {'tok_emb': rng.normal(0.0, std, (arch.vocab_size, d))}
    if arch.style == 'gpt-like':
        exempt['pos_emb'] = rng.normal(0.0, std, (arch.max_context, d))
    weights = {}
    for l, c in arch.layer_components():
        weights[(l, c)] = rng.normal(0.0, std, arch.component_shape(c))
    for l in range(1, arch.n_layers + 1):
        if arch.style == 'gpt-like':
            exempt[f'ln1_g.{l}'], exempt[f'ln1_b.{l}'] = np.ones(d), np.zeros(d)
            exempt[f'ln2_g.{l}'], exempt[f'ln2_b.{l}'] = np.ones(d), np.zeros(d)
        else:
            exempt[f'norm1_g.{l}'], exempt[f'norm2_g.{l}'] = np.ones(d), np.ones(d)
    if arch.style == 'gpt-like':
        exempt['lnf_g'], exempt['lnf_b'] = np.ones(d), np.zeros(d)
    else:
        exempt['normf_g'] = np.ones(d)
    if not arch.tie_embeddings:
        exempt['head'] = rng.normal(0.0, std, (d, arch.vocab_size))
    for w in list(weights.values()) + list(exempt.values()):
        w.flags.writeable = False
    return ReferenceModel(arch=arch, weights=weights, exempt_weights=exempt, seed=int(seed))
