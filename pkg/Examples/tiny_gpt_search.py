import os
from toggle.config import load_run_config
from toggle.evaluation.modes import format_mode_table, mode_report
from toggle.search.optimizer import ConfigEvaluator, run_search
from toggle.search.pareto import pareto_front, pareto_table
from toggle.sensitivity import format_sensitivity_table, sensitivity_sweep


out_dir = 'runs/tiny_gpt'
os.makedirs(out_dir, exist_ok=True)

# Bundled desk-scale configuration: 2-layer GPT-like model, 16 configurations
config = load_run_config('tiny')

model  = config.build_model()
corpus = config.build_corpus(model)
spec   = config.parsed_spec()

# Base-model passes are computed once and shared by all evaluations
evaluator = ConfigEvaluator(model, corpus, spec, config.cost_params(), cache_signals=True)

records = run_search(
    space          = config.search_space(),
    evaluate       = evaluator,
    property_names = list(spec.properties),
    rho_th         = [spec.robustness_thresholds[name] for name in spec.properties],
    budget         = config.search.budget,
    n_init         = config.search.n_init,
    seed           = config.search.seed,
    record_log     = os.path.join(out_dir, 'records.jsonl'),
    verbose        = True
)

front = pareto_table(pareto_front(records))
print(front.to_string(index=False))

report = mode_report(records, config.modes)
print(format_mode_table(report))

# Threshold sensitivity over the whole space; signals of every configuration are cached
print(format_sensitivity_table(sensitivity_sweep(config, verbose=True)))
