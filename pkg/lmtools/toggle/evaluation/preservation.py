import numpy as np
import pandas as pd
from dataclasses import dataclass

from toggle.exceptions import SchemaMismatchError
from toggle.signals import SignalBundle
from toggle.stl.formulas import BUILTIN_PROPERTIES, PredicateThresholds

EPS_NORM = 1e-9


@dataclass(frozen=True)
class PreservationScores:
    """
    Preservation scores of the built-in properties.

    Attributes:
        per_prompt (pd.DataFrame): PS_i(d), one row per prompt and one column per property, values in [0, 1].
        per_property_mean (pd.Series): Mean score per property over prompts.
        avg_pp (float): Average property preservation in percent.
    """
    per_prompt: pd.DataFrame
    per_property_mean: pd.Series
    avg_pp: float


def representative_metrics(bundle: SignalBundle) -> pd.DataFrame:
    """
    Mean over steps of each prompt's property metrics.

    Attention similarity is first averaged over layers. Columns follow the built-in property names.
    """
    attn = [c for c in bundle.channels if c.startswith('attn_sim_')]
    missing = {'jsd', 'emb_sim', 'fact_ratio'} - set(bundle.channels)
    if not attn:
        missing.add('attn_sim_1')
    if missing:
        raise SchemaMismatchError(missing=missing)
    if len(bundle) == 0:
        raise ValueError(f"Bundle '{bundle.dataset_id}' holds no signals.")
    ds = bundle.to_dataset()
    attn_mean = sum(ds[c] for c in attn) / len(attn)
    metrics = {
        'seq_coh': ds['jsd'].mean('step', skipna=True),
        'long_range': attn_mean.mean('step', skipna=True),
        'ctx_cons': ds['emb_sim'].mean('step', skipna=True),
        'fact_acc': ds['fact_ratio'].mean('step', skipna=True),
    }
    return pd.DataFrame({name: da.values for name, da in metrics.items()},
                        index=pd.Index(bundle.prompt_ids, name='prompt_id'))


def preservation_scores(bundle: SignalBundle, thresholds: PredicateThresholds,
                        eps_norm: float = EPS_NORM) -> PreservationScores:
    """
    Normalized per-prompt preservation scores and their average.

    The JSD score uses the tolerance epsilon as baseline reference, PS = max(0, 1 - JSD / epsilon), so it is
    1 for identical distributions and 0 at the feasibility boundary. The similarity and ratio scores compare
    against the base model's value 1, PS = min(1, m / 1). All scores are clipped to [0, 1].

    Args:
        bundle (SignalBundle): Signals comparing a compressed model with its base model.
        thresholds (PredicateThresholds): Predicate thresholds (epsilon is used).
        eps_norm (float): Normalization guard.

    Returns:
        PreservationScores: Per-prompt scores, per-property means and AvgPP.
    """
    m = representative_metrics(bundle)
    scores = pd.DataFrame(index=m.index)
    scores['seq_coh'] = np.maximum(0.0, 1.0 - m['seq_coh'] / (thresholds.epsilon + eps_norm))
    for name in BUILTIN_PROPERTIES[1:]:
        scores[name] = np.minimum(1.0, m[name] / (1.0 + eps_norm))
    scores = scores.clip(lower=0.0, upper=1.0)
    means = scores.mean(axis=0)
    return PreservationScores(per_prompt=scores, per_property_mean=means, avg_pp=float(100.0 * means.mean()))
