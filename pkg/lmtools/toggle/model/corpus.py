import numpy as np
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

from toggle.exceptions import ArchitectureError, HorizonError
from toggle.model.transformer import ReferenceModel


@dataclass(frozen=True, eq=False)
class CorpusPrompt:
    """
    One evaluation prompt.

    Attributes:
        prompt_id (str): Identifier, used as the signal's prompt id.
        tokens (np.ndarray): Prompt tokens x_1..x_prompt_len.
        correct (np.ndarray): Reference continuation y_1..y_horizon fed to both models.
    """
    prompt_id: str
    tokens: np.ndarray
    correct: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.correct)

    @property
    def prompt_len(self) -> int:
        return len(self.tokens)

    def context(self) -> np.ndarray:
        """Tokens of the full teacher-forced sequence: prompt plus all but the last reference token."""
        return np.concatenate([self.tokens, self.correct[:-1]])


@dataclass(frozen=True)
class EvaluationCorpus:
    """
    Deterministic synthetic evaluation dataset.

    Attributes:
        prompts (Tuple[CorpusPrompt, ...]): The prompts, ordered by id.
        seed (int): Corpus seed.
        dataset_id (str): Identifier carried into signal bundles.
    """
    prompts: Tuple[CorpusPrompt, ...]
    seed: int
    dataset_id: str = 'synthetic'

    def __post_init__(self):
        if not self.prompts:
            raise ValueError("An evaluation corpus needs at least one prompt.")
        ids = [p.prompt_id for p in self.prompts]
        if len(set(ids)) != len(ids):
            raise ValueError("Prompt ids of a corpus must be unique.")
        for p in self.prompts:
            if p.prompt_len < 1 or p.horizon < 1:
                raise ValueError(f"Prompt '{p.prompt_id}' needs prompt_len >= 1 and horizon >= 1.")

    def __len__(self) -> int:
        return len(self.prompts)

    def validate_for(self, model: ReferenceModel) -> None:
        """Check token ids against the vocabulary and sequence lengths against the maximum context."""
        arch = model.arch
        for p in self.prompts:
            seq = np.concatenate([p.tokens, p.correct])
            if seq.min() < 0 or seq.max() >= arch.vocab_size:
                raise ArchitectureError(f"Prompt '{p.prompt_id}' has tokens outside the vocabulary "
                                        f"[0, {arch.vocab_size}).")
            if p.prompt_len + p.horizon - 1 > arch.max_context:
                raise HorizonError(f"Prompt '{p.prompt_id}' needs {p.prompt_len + p.horizon - 1} positions "
                                   f"but max_context is {arch.max_context}.")


def greedy_continuation(model: ReferenceModel, tokens: np.ndarray, horizon: int) -> np.ndarray:
    """Greedy decoding of `horizon` tokens; ties resolve to the lowest token id."""
    seq = list(np.asarray(tokens, dtype=np.int64))
    out = []
    for _ in range(horizon):
        probs = model.forward(np.array(seq)).probs[-1]
        nxt = int(np.argmax(probs))
        out.append(nxt)
        seq.append(nxt)
    return np.array(out, dtype=np.int64)


def build_corpus(base: ReferenceModel, n_prompts: int, prompt_len: int,
                 horizon: Union[int, Sequence[int]], seed: int) -> EvaluationCorpus:
    """
    Draw uniform random prompts and label them with the base model's greedy continuation.

    Args:
        base (ReferenceModel): The uncompressed model providing reference tokens.
        n_prompts (int): Number of prompts.
        prompt_len (int): Tokens per prompt.
        horizon (Union[int, Sequence[int]]): Evaluation horizon T', shared or one per prompt.
        seed (int): Corpus seed.

    Returns:
        EvaluationCorpus: The corpus, prompts named p0000, p0001, ...
    """
    horizons = [int(horizon)] * n_prompts if np.isscalar(horizon) else [int(h) for h in horizon]
    if n_prompts < 1 or len(horizons) != n_prompts:
        raise ValueError(f"Need n_prompts >= 1 and one horizon per prompt, got {n_prompts} prompts and "
                         f"{len(horizons)} horizons.")
    if prompt_len < 1 or min(horizons) < 1:
        raise ValueError("prompt_len and every horizon must be >= 1.")
    longest = prompt_len + max(horizons) - 1
    if longest > base.arch.max_context:
        raise HorizonError(f"prompt_len + horizon - 1 = {longest} exceeds max_context {base.arch.max_context}.")
    rng = np.random.default_rng(seed)
    prompts = []
    for i, h in enumerate(horizons):
        tokens = rng.integers(0, base.arch.vocab_size, size=prompt_len).astype(np.int64)
        prompts.append(CorpusPrompt(f"p{i:04d}", tokens, greedy_continuation(base, tokens, h)))
    return EvaluationCorpus(tuple(prompts), int(seed), dataset_id=f"synthetic-s{seed}")
