import numpy as np
from toggle.model.architecture import get_preset
from toggle.model.compression import CompressionConfig, apply_config
from toggle.model.corpus import build_corpus
from toggle.model.inference import generate_signals
from toggle.model.transformer import build_model
from toggle.signals import write_trace
from toggle.stl.formulas import critical_step, min_robustness_per_property, robustness_trace
from toggle.stl.spec_parser import parse_spec


arch   = get_preset('tiny-llama')
model  = build_model(arch, seed=3)
corpus = build_corpus(model, n_prompts=6, prompt_len=8, horizon=10, seed=1)

# Built-in properties with tighter thresholds plus one extra property on the first attention layer
spec = parse_spec(
    "thresholds { epsilon=0.20 delta=0.75 gamma=0.75 tau=0.75 rho_th=0 }\n"
    "property \"first_head\" = always[1,T'](attn_sim_1 - 0.9 >= 0)\n",
    n_layers = arch.n_layers
)

for bits in (16, 8, 4, 3):
    kappa  = CompressionConfig.uniform(arch, bits, 0.2)
    bundle = generate_signals(model, apply_config(model, kappa), corpus)
    rho    = min_robustness_per_property(spec.properties, bundle)
    print(f"{bits:>2} bits: " + ", ".join(f"{name}={value:+.4f}" for name, value in rho.items()))

# Where along the generation the extra property is closest to violation
phi   = spec.properties['first_head']
worst = min(bundle, key=lambda sig: np.nanmin(robustness_trace(phi, sig)))
print(f"Weakest prompt {worst.prompt_id}, critical step {critical_step(phi, worst)}")
write_trace(bundle, 'runs/custom_property/3bit.trace')
