import numpy as np
import pytest

from toggle.cost import CostParams
from toggle.model.architecture import ARCHITECTURE_PRESETS
from toggle.model.compression import CompressionConfig
from toggle.model.corpus import build_corpus
from toggle.model.transformer import build_model
from toggle.search.records import EvaluationRecord
from toggle.signals import InferenceSignal, SignalBundle, builtin_channels
from toggle.stl.spec_parser import parse_spec


def make_signal(prompt_id='p0', n_layers=2, steps=4, jsd=0.0, attn=1.0, emb=1.0, fact=1.0):
    """Signal over the built-in channels; scalars are broadcast, sequences give per-step values."""
    channels = builtin_channels(n_layers)
    columns = [np.broadcast_to(np.asarray(jsd, dtype=np.float64), (steps,))]
    attn = np.asarray(attn, dtype=np.float64)
    for l in range(n_layers):
        layer = attn[l] if attn.ndim == 2 else attn
        columns.append(np.broadcast_to(layer, (steps,)))
    columns.append(np.broadcast_to(np.asarray(emb, dtype=np.float64), (steps,)))
    columns.append(np.broadcast_to(np.asarray(fact, dtype=np.float64), (steps,)))
    return InferenceSignal(prompt_id, channels, np.column_stack(columns))


def make_bundle(signals, n_layers=2, max_context=32, dataset_id='test'):
    return SignalBundle(dataset_id, max_context, builtin_channels(n_layers), tuple(signals))


def make_record(config_id, cost, rho=0.1, feasible=True, avg_pp=100.0, kappa=None):
    """Record with a single-property robustness, enough for Pareto and mode selection."""
    kappa = kappa if kappa is not None else CompressionConfig({(1, 'ffn'): (16, 0.0)})
    return EvaluationRecord(config_id=config_id, kappa=kappa, cost=float(cost), rho_min={'seq_coh': float(rho)},
                            feasible=bool(feasible), avg_pp=float(avg_pp))


@pytest.fixture(scope='session')
def tiny_arch():
    return ARCHITECTURE_PRESETS['tiny-gpt']


@pytest.fixture(scope='session')
def tiny_model(tiny_arch):
    return build_model(tiny_arch, seed=7)


@pytest.fixture(scope='session')
def tiny_corpus(tiny_model):
    return build_corpus(tiny_model, n_prompts=3, prompt_len=4, horizon=4, seed=0)


@pytest.fixture(scope='session')
def default_spec(tiny_arch):
    return parse_spec('', n_layers=tiny_arch.n_layers)


@pytest.fixture(scope='session')
def cost_params(tiny_arch):
    return CostParams(seq_len=tiny_arch.max_context)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
