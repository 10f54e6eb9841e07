import pytest

from toggle.config import load_run_config, parse_run_config, parse_seed_overrides, resolve_config_path
from toggle.evaluation.modes import DEFAULT_MODES
from toggle.exceptions import RunConfigError
from toggle.model.compression import CompressionConfig
from toggle.stl.formulas import BUILTIN_PROPERTIES


def write_config(tmp_path, text, name='run.toml'):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def violations_of(data):
    return parse_run_config(data)[1]


class TestBundledConfigs:

    def test_default(self):
        config = load_run_config('default')
        assert config.spec.thresholds.to_dict() == {'epsilon': 0.25, 'delta': 0.7, 'gamma': 0.7, 'tau': 0.7}
        assert config.modes == DEFAULT_MODES
        assert config.search.budget == 200
        assert config.search_space().size == (15 * 6) ** 6
        assert list(config.parsed_spec().properties) == list(BUILTIN_PROPERTIES)

    def test_tiny(self):
        config = load_run_config('tiny')
        assert config.search_space().size == 16
        assert config.search.n_init == 4
        assert config.sensitivity.exhaustive
        assert config.cost_params().seq_len == config.arch.max_context

    def test_resolve_path(self, tmp_path):
        assert resolve_config_path('tiny').endswith('tiny.toml')
        path = write_config(tmp_path, '')
        assert resolve_config_path(path) == path

    def test_empty_file_uses_defaults(self, tmp_path):
        config = load_run_config(write_config(tmp_path, ''))
        assert config.arch.n_layers == 2
        assert config.spec.rho_th == 0.0


class TestValidation:

    def test_epsilon_out_of_range(self, tmp_path):
        with pytest.raises(RunConfigError) as e:
            load_run_config(write_config(tmp_path, '[spec]\nepsilon = 1.5\n'))
        assert len(e.value.violations) == 1
        assert e.value.violations[0].startswith('spec.epsilon')
        assert '(0, 1]' in e.value.violations[0]

    def test_pruning_ratio_above_maximum(self):
        problems = violations_of({'search': {'ratios': [0.0, 0.7]}})
        assert len(problems) == 1 and problems[0].startswith('search.ratios')

    def test_all_violations_are_reported(self):
        problems = violations_of({'spec': {'delta': 0.0, 'rho_th': -1.0}, 'search': {'bits': [1, 8], 'budget': 1},
                                  'cost': {'mac_factor': 0.0}})
        fields = [p.split(':')[0] for p in problems]
        assert fields == ['spec.delta', 'spec.rho_th', 'search.bits', 'search.budget', 'cost.mac_factor']

    def test_unknown_keys_and_sections(self):
        problems = violations_of({'search': {'budgett': 10}, 'extra': {}})
        assert 'extra: unknown section' in problems
        assert 'search.budgett: unknown key' in problems

    def test_wrong_types(self):
        problems = violations_of({'search': {'budget': '10'}, 'corpus': {'horizon': [4, 'x']}})
        assert any(p.startswith('search.budget: expected an integer') for p in problems)
        assert any(p.startswith('corpus.horizon: expected a list of integers') for p in problems)

    def test_reference_bit_width_outside_quantizer_range(self):
        assert violations_of({'cost': {'b_ref': 32}}) == ['cost.b_ref: 32 outside [2, 16]']
        assert violations_of({'cost': {'b_ref': 1}}) == ['cost.b_ref: 1 outside [2, 16]']

    def test_unsearched_components_ignore_reference_bit_width(self):
        config, problems = parse_run_config({'cost': {'b_ref': 8},
                                             'search': {'bits': [8, 16], 'ratios': [0.0], 'components': ['1:ffn']}})
        assert problems == []
        identity = config.search_space().identity()
        assert identity == CompressionConfig.identity(config.arch)
        assert identity[(1, 'attn_out')] == (16, 0.0)
        assert config.cost_params().b_ref == 8

    def test_horizon_exceeds_context(self):
        problems = violations_of({'corpus': {'prompt_len': 30, 'horizon': 8}})
        assert len(problems) == 1 and 'exceeds max_context 32' in problems[0]

    def test_per_prompt_horizons(self):
        config, problems = parse_run_config({'corpus': {'n_prompts': 3, 'horizon': [2, 4, 3]}})
        assert problems == []
        assert config.corpus.max_horizon == 4
        assert violations_of({'corpus': {'n_prompts': 2, 'horizon': [2, 4, 3]}})[0].startswith('corpus.horizon')

    def test_unknown_preset(self):
        problems = violations_of({'architecture': {'preset': 'gpt-5'}})
        assert problems[0].startswith("architecture.preset: unknown preset 'gpt-5'")

    def test_custom_architecture(self):
        config, problems = parse_run_config({'architecture': {'preset': 'tiny-llama', 'n_layers': 3}})
        assert problems == []
        assert config.arch.n_layers == 3 and config.architecture.preset is None
        assert violations_of({'architecture': {'hidden_dim': 30, 'n_heads': 4}})[0].startswith('architecture.')

    def test_invalid_toml(self, tmp_path):
        with pytest.raises(RunConfigError):
            load_run_config(write_config(tmp_path, '[spec\nepsilon = 0.2\n'))

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_run_config(str(tmp_path / 'absent.toml'))


class TestSpecSection:

    def test_extra_property(self):
        config, problems = parse_run_config(
            {'spec': {'properties': {'stable_head': "always[1,T'](attn_sim_1 - 0.8 >= 0)"},
                      'property_rho_th': {'stable_head': 0.01, 'fact_acc': 0.05}}})
        assert problems == []
        spec = config.parsed_spec()
        assert list(spec.properties) == list(BUILTIN_PROPERTIES) + ['stable_head']
        assert spec.robustness_thresholds['stable_head'] == 0.01
        assert spec.robustness_thresholds['fact_acc'] == 0.05
        assert spec.robustness_thresholds['seq_coh'] == 0.0

    def test_thresholds_of_several_extra_properties(self):
        config, problems = parse_run_config(
            {'spec': {'properties': {'a': 'always[1,2](emb_sim >= 0.5)',
                                     'b': 'always[1,2](jsd <= 0.2) or not (emb_sim >= 0.1)'},
                      'property_rho_th': {'a': 0.1, 'b': 0.2}}})
        assert problems == []
        assert config.parsed_spec().robustness_thresholds['b'] == 0.2

    def test_property_over_unknown_channel(self):
        problems = violations_of({'spec': {'properties': {'odd': 'always[1,2](attn_sim_9 >= 0.5)'}}})
        assert len(problems) == 1 and problems[0].startswith('spec.properties.odd')

    def test_builtin_cannot_be_redefined(self):
        problems = violations_of({'spec': {'properties': {'seq_coh': 'always[1,2](jsd <= 0.1)'}}})
        assert problems == ['spec.properties.seq_coh: redefines a built-in property']

    def test_threshold_for_unknown_property(self):
        problems = violations_of({'spec': {'property_rho_th': {'nope': 0.1}}})
        assert problems == ['spec.property_rho_th.nope: unknown property']


class TestSearchSection:

    def test_component_patterns(self):
        config, problems = parse_run_config({'search': {'components': ['*:ffn', '1:attn_out']}})
        assert problems == []
        assert config.search.components == ((1, 'attn_out'), (1, 'ffn'), (2, 'ffn'))

    @pytest.mark.parametrize('entry', ['3:ffn', 'ffn', '1:mlp'])
    def test_invalid_components(self, entry):
        problems = violations_of({'search': {'components': [entry]}})
        assert problems and problems[0].startswith('search.components')

    def test_single_configuration_space(self):
        problems = violations_of({'search': {'bits': [8], 'ratios': [0.0]}})
        assert problems == ['search.bits: the search space holds a single configuration']

    def test_n_init_above_budget(self):
        assert violations_of({'search': {'budget': 4, 'n_init': 5}})[0].startswith('search.n_init')


class TestSeeds:

    def test_overrides(self):
        assert parse_seed_overrides(['model=3', 'search=5']) == {'model': 3, 'search': 5}
        assert parse_seed_overrides([]) == {}

    @pytest.mark.parametrize('item', ['model', 'weights=1', 'corpus=x'])
    def test_invalid_overrides(self, item):
        with pytest.raises(RunConfigError):
            parse_seed_overrides([item])

    def test_with_seeds(self):
        config = load_run_config('tiny').with_seeds(model=1, corpus=2, search=3)
        assert (config.architecture.seed, config.corpus.seed, config.search.seed) == (1, 2, 3)

    def test_with_budget(self):
        config = load_run_config('tiny').with_budget(8)
        assert config.search.budget == 8 and config.sensitivity.budget == 8
