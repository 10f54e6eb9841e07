import pytest

from toggle.exceptions import SpecSyntaxError, ThresholdRangeError
from toggle.signals import builtin_channels
from toggle.stl.formulas import Always, PredicateThresholds, builtin_properties, robustness
from toggle.stl.spec_parser import format_spec, parse_spec, tokenize

from conftest import make_signal

DEFAULT = "thresholds { epsilon=0.25 delta=0.70 gamma=0.70 tau=0.70 rho_th=0 }\n"


class TestParseSpec:

    def test_default_thresholds_give_builtin_properties(self):
        parsed = parse_spec(DEFAULT, n_layers=2)
        assert parsed.predicate_thresholds == PredicateThresholds(0.25, 0.70, 0.70, 0.70)
        assert parsed.properties == builtin_properties(PredicateThresholds(), 2)
        assert parsed.robustness_thresholds.rho_th == {name: 0.0 for name in parsed.properties}

    def test_empty_text_uses_defaults(self):
        parsed = parse_spec('', n_layers=1)
        assert parsed.predicate_thresholds == PredicateThresholds()
        assert list(parsed.properties) == ['seq_coh', 'long_range', 'ctx_cons', 'fact_acc']

    def test_threshold_out_of_range(self):
        with pytest.raises(ThresholdRangeError, match='tau'):
            parse_spec("thresholds { tau=1.5 }", n_layers=2)

    def test_negative_rho_th(self):
        with pytest.raises(ThresholdRangeError):
            parse_spec("thresholds { rho_th=-0.1 }", n_layers=2)

    def test_extra_property(self):
        text = DEFAULT + "property \"mine\" = always[1,T'](my_channel - 0.5 >= 0)\n"
        parsed = parse_spec(text, n_layers=2)
        assert len(parsed.properties) == 5
        phi = parsed.properties['mine']
        assert isinstance(phi, Always) and phi.end is None
        assert phi.channels() == {'my_channel'}

    def test_extra_property_evaluates(self):
        text = "property \"tight\" = always[1,2](emb_sim >= 0.8) and not (jsd >= 0.5)"
        parsed = parse_spec(text, n_layers=2)
        sig = make_signal(steps=3, jsd=0.1, emb=[0.9, 0.85, 0.2])
        # min(0.05, -(0.1 - 0.5))
        assert robustness(parsed.properties['tight'], sig) == pytest.approx(0.05)

    def test_affine_rearrangement(self):
        parsed = parse_spec("property \"p\" = 2*emb_sim + 0.1 <= fact_ratio - jsd", n_layers=1)
        sig = make_signal(n_layers=1, steps=1, jsd=0.1, emb=0.3, fact=1.0)
        # fact_ratio - jsd - 2*emb_sim - 0.1
        assert robustness(parsed.properties['p'], sig) == pytest.approx(0.2)

    def test_per_property_override(self):
        parsed = parse_spec("thresholds { rho_th=0.01 rho_th.fact_acc=0.05 }", n_layers=2)
        assert parsed.robustness_thresholds['fact_acc'] == 0.05
        assert parsed.robustness_thresholds['seq_coh'] == 0.01

    def test_override_for_unknown_property(self):
        with pytest.raises(SpecSyntaxError, match='unknown property'):
            parse_spec("thresholds { rho_th.nope=0.1 }", n_layers=2)

    def test_comments_and_fixed_horizon(self):
        parsed = parse_spec("# a comment\n" + DEFAULT, n_layers=2, horizon=5)
        assert parsed.properties['seq_coh'].end == 5

    def test_known_channels(self):
        text = "property \"p\" = always[1,T'](my_channel >= 0)"
        with pytest.raises(SpecSyntaxError, match="unknown channel 'my_channel'"):
            parse_spec(text, n_layers=2, known_channels=builtin_channels(2))

    @pytest.mark.parametrize('text, line, column', [
        ("thresholds { epsilon 0.2 }", 1, 22),
        ("thresholds { foo=0.2 }", 1, 14),
        ("\nproperty \"p\" = always[0,3](jsd >= 0)", 2, 16),
        ("property \"p\" = always[3,2](jsd >= 0)", 1, 16),
        ("property \"p\" = jsd * emb_sim >= 0", 1, 20),
        ("property \"p\" = jsd", 1, 19),
        ("property p = jsd >= 0", 1, 10),
        ("thresholds { } thresholds { }", 1, 16),
        ("property \"seq_coh\" = jsd >= 0", 1, 10),
        ("thresholds { epsilon=0.2 @ }", 1, 26),
    ])
    def test_syntax_errors_carry_position(self, text, line, column):
        with pytest.raises(SpecSyntaxError) as e:
            parse_spec(text, n_layers=2)
        assert (e.value.lineno, e.value.column) == (line, column)
        assert str(e.value).startswith(f"line {line}, column {column}:")


class TestTokenize:

    def test_keywords_and_horizon(self):
        kinds = [t.kind for t in tokenize("always[1,T'](x >= 0)")]
        assert kinds == ['keyword', 'op', 'number', 'op', 'horizon', 'op', 'op', 'name', 'op', 'number', 'op', 'eof']


class TestFormatSpec:

    def test_format_parses_back(self):
        th = PredicateThresholds(0.3, 0.6, 0.75, 0.8)
        extras = parse_spec("property \"h\" = always[2,4](attn_sim_1 - 0.5 >= 0)", n_layers=2).properties
        text = format_spec(th, rho_th=0.02, extras={'h': extras['h']})
        parsed = parse_spec(text, n_layers=2)
        assert parsed.predicate_thresholds == th
        assert parsed.properties['h'] == extras['h']
        assert parsed.robustness_thresholds['h'] == 0.02

    def test_format_keeps_property_thresholds_and_formula_text(self):
        text = format_spec(PredicateThresholds(), rho_th=0.01,
                           extras={'steady': "always[1,T'](emb_sim >= 0.9)"},
                           property_rho_th={'fact_acc': 0.05, 'steady': 0.2})
        parsed = parse_spec(text, n_layers=2)
        assert list(parsed.properties)[-1] == 'steady'
        assert parsed.robustness_thresholds['fact_acc'] == 0.05
        assert parsed.robustness_thresholds['steady'] == 0.2
        assert parsed.robustness_thresholds['seq_coh'] == 0.01
