import dask
import numpy as np
from typing import List, Optional, Sequence
from scipy.spatial.distance import jensenshannon

from toggle.exceptions import ArchitectureError
from toggle.signals import InferenceSignal, SignalBundle, builtin_channels
from toggle.model.corpus import CorpusPrompt, EvaluationCorpus
from toggle.model.transformer import ForwardPass, ReferenceModel

R_MAX = 10.0
EPS_DIV = 1e-9


def jsd(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence with base-2 logarithms, in [0, 1]."""
    value = jensenshannon(p, q, base=2.0) ** 2
    return float(np.clip(value, 0.0, 1.0))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """
    Cosine similarity of two flattened arrays, clipped to [-1, 1].

    Two zero vectors count as identical (1.0); one zero vector against a non-zero one gives 0.0.
    """
    a, b = np.ravel(a), np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def reference_passes(model: ReferenceModel, corpus: EvaluationCorpus) -> List[ForwardPass]:
    """Teacher-forced forward pass of a model over every prompt of the corpus."""
    corpus.validate_for(model)
    return [model.forward(p.context()) for p in corpus.prompts]


def prompt_signal(prompt: CorpusPrompt, base_pass: ForwardPass, comp_pass: ForwardPass,
                  n_layers: int) -> InferenceSignal:
    """
    Per-step comparison of base and compressed model outputs for one prompt.

    Step t predicts the t-th reference token from the first N = prompt_len + t - 1 context tokens; the
    attention maps of that step are the leading N x N blocks, averaged over heads.
    """
    channels = builtin_channels(n_layers)
    values = np.empty((prompt.horizon, len(channels)))
    for t in range(1, prompt.horizon + 1):
        n = prompt.prompt_len + t - 1
        pos = n - 1
        p_base, p_comp = base_pass.probs[pos], comp_pass.probs[pos]
        row = [jsd(p_base, p_comp)]
        for l in range(n_layers):
            a_base = base_pass.attentions[l][:, :n, :n].mean(axis=0)
            a_comp = comp_pass.attentions[l][:, :n, :n].mean(axis=0)
            row.append(cosine_similarity(a_base, a_comp))
        row.append(cosine_similarity(base_pass.hidden[pos], comp_pass.hidden[pos]))
        y = prompt.correct[t - 1]
        row.append(min(R_MAX, float(p_comp[y] / (p_base[y] + EPS_DIV))))
        values[t - 1] = row
    return InferenceSignal(prompt.prompt_id, channels, values)


def generate_signals(base: ReferenceModel, compressed: ReferenceModel, corpus: EvaluationCorpus,
                     base_passes: Optional[Sequence[ForwardPass]] = None,
                     scheduler: str = 'threads') -> SignalBundle:
    """
    Run base and compressed model on the corpus with teacher forcing and emit one signal per prompt.

    Channels: `jsd` (base-2 Jensen-Shannon divergence of next-token distributions), `attn_sim_<l>` (cosine
    similarity of head-averaged attention maps of layer l), `emb_sim` (cosine similarity of final hidden
    states) and `fact_ratio` (probability ratio of the reference token, clamped to R_MAX).

    Args:
        base (ReferenceModel): The uncompressed model.
        compressed (ReferenceModel): The compressed model, same architecture.
        corpus (EvaluationCorpus): The evaluation prompts.
        base_passes (Optional[Sequence[ForwardPass]]): Precomputed `reference_passes(base, corpus)`.
        scheduler (str): Dask scheduler used for prompt-level parallelism.

    Returns:
        SignalBundle: Signals in corpus order.
    """
    if base.arch != compressed.arch:
        raise ArchitectureError("Base and compressed model must share the architecture.")
    corpus.validate_for(base)
    if base_passes is None:
        base_passes = reference_passes(base, corpus)
    elif len(base_passes) != len(corpus):
        raise ValueError(f"Got {len(base_passes)} base passes for {len(corpus)} prompts.")

    n_layers = base.arch.n_layers

    def _signal(i: int) -> InferenceSignal:
        prompt = corpus.prompts[i]
        return prompt_signal(prompt, base_passes[i], compressed.forward(prompt.context()), n_layers)

    tasks = [dask.delayed(_signal)(i) for i in range(len(corpus))]
    signals = dask.compute(*tasks, scheduler=scheduler)
    return SignalBundle(dataset_id=corpus.dataset_id, max_context=base.arch.max_context,
                        channels=builtin_channels(n_layers), signals=tuple(signals))
