import numpy as np
import pytest

from toggle.cost import CostParams, cost_report, flops_base
from toggle.exceptions import RecordLogError, SearchSpaceError
from toggle.model.compression import CompressionConfig
from toggle.search.encoding import SearchSpace
from toggle.search.optimizer import ConfigEvaluator, RobustnessGuidedSearch, evaluate_config, run_search
from toggle.search.records import EvaluationRecord, RecordLog, load_records
from toggle.stl.formulas import BUILTIN_PROPERTIES
from toggle.stl.spec_parser import parse_spec

from conftest import make_record

FFN = ((1, 'ffn'), (2, 'ffn'))
MIXED = ((1, 'attn_qkv'), (2, 'ffn'))


class SeparableEvaluator:
    """
    Synthetic evaluator: real cost, robustness falling linearly with the compression of each component.
    """

    def __init__(self, space, weights, margin=0.5):
        self.space = space
        self.weights = weights
        self.margin = margin
        self.params = CostParams(seq_len=space.arch.max_context)
        self.calls = 0

    def robustness(self, kappa):
        b_lo, b_hi = self.space.bits[0], self.space.bits[-1]
        penalty = 0.0
        for (w_bits, w_ratio), lc in zip(self.weights, self.space.components):
            bits, ratio = kappa[lc]
            penalty += w_bits * (b_hi - bits) / (b_hi - b_lo) + w_ratio * ratio
        return self.margin - penalty

    def cost(self, kappa):
        return cost_report(self.space.arch, kappa, self.params).flops_compressed

    def __call__(self, kappa, config_id=0):
        self.calls += 1
        rho = self.robustness(kappa)
        return EvaluationRecord(config_id=config_id, kappa=kappa, cost=self.cost(kappa), rho_min={'seq_coh': rho},
                                feasible=rho >= 0.0, avg_pp=100.0 * min(1.0, 1.0 + rho - self.margin))

    def optimum(self):
        return min(self.cost(k) for k in self.space.enumerate() if self.robustness(k) >= 0.0)


def search(space, evaluator, budget, **kwargs):
    return run_search(space, evaluator, ['seq_coh'], [0.0], budget=budget, **kwargs)


def best_cost(records):
    return min(r.cost for r in records if r.feasible)


@pytest.fixture
def ffn_space(tiny_arch):
    return SearchSpace(tiny_arch, bits=(8, 16), ratios=(0.0, 0.5), components=FFN)


@pytest.fixture
def ffn_evaluator(ffn_space):
    return SeparableEvaluator(ffn_space, [(0.3, 0.4), (0.2, 0.6)])


class TestEvaluateConfig:

    def test_identity(self, tiny_model, tiny_corpus, default_spec, cost_params, tiny_arch):
        record = evaluate_config(CompressionConfig.identity(tiny_arch), tiny_model, tiny_corpus, default_spec,
                                 cost_params)
        assert record.feasible
        assert list(record.rho_min) == list(BUILTIN_PROPERTIES)
        expected = {'seq_coh': 0.25, 'long_range': 0.3, 'ctx_cons': 0.3, 'fact_acc': 0.3}
        for name, value in expected.items():
            assert record.rho_min[name] == pytest.approx(value, abs=1e-6)
        assert record.avg_pp == pytest.approx(100.0, abs=0.01)
        assert record.cost == flops_base(tiny_model, cost_params)
        assert record.cost_report['flops_reduction'] == 1.0

    def test_aggressive_compression_is_finite(self, tiny_model, tiny_corpus, default_spec, cost_params, tiny_arch):
        record = evaluate_config(CompressionConfig.uniform(tiny_arch, 2, 0.5), tiny_model, tiny_corpus,
                                 default_spec, cost_params)
        assert all(np.isfinite(v) for v in record.rho_min.values())
        assert 0.0 <= record.avg_pp <= 100.0
        assert record.cost < flops_base(tiny_model, cost_params)

    def test_repeatable(self, tiny_model, tiny_corpus, default_spec, cost_params, tiny_arch):
        kappa = CompressionConfig.uniform(tiny_arch, 4, 0.3)
        first = evaluate_config(kappa, tiny_model, tiny_corpus, default_spec, cost_params, config_id=3)
        second = evaluate_config(kappa, tiny_model, tiny_corpus, default_spec, cost_params, config_id=3)
        assert first == second


class TestConfigEvaluator:

    def test_matches_evaluate_config(self, tiny_model, tiny_corpus, default_spec, cost_params, tiny_arch):
        kappa = CompressionConfig.uniform(tiny_arch, 6, 0.2)
        evaluator = ConfigEvaluator(tiny_model, tiny_corpus, default_spec, cost_params)
        assert evaluator(kappa, 5) == evaluate_config(kappa, tiny_model, tiny_corpus, default_spec, cost_params, 5)

    def test_signal_cache_shared_across_thresholds(self, tiny_model, tiny_corpus, default_spec, cost_params,
                                                   tiny_arch):
        kappa = CompressionConfig.uniform(tiny_arch, 3, 0.4)
        evaluator = ConfigEvaluator(tiny_model, tiny_corpus, default_spec, cost_params, cache_signals=True)
        loose = evaluator(kappa)
        strict = evaluator.with_spec(parse_spec('thresholds { epsilon=0.05 delta=0.99 }', tiny_arch.n_layers))(kappa)
        assert len(evaluator.signal_cache) == 1
        assert strict.rho_min['seq_coh'] == pytest.approx(loose.rho_min['seq_coh'] - 0.20)
        assert strict.rho_min['long_range'] == pytest.approx(loose.rho_min['long_range'] - 0.29)
        assert strict.avg_pp <= loose.avg_pp


class TestRobustnessGuidedSearch:

    def test_budget_equal_to_initial_design(self, ffn_space, ffn_evaluator):
        records = search(ffn_space, ffn_evaluator, budget=4, n_init=4, seed=0)
        assert len(records) == 4
        assert records[0].kappa == ffn_space.identity()
        assert [r.config_id for r in records] == [0, 1, 2, 3]

    def test_exhaustive_budget_finds_optimum(self, ffn_space, ffn_evaluator):
        records = search(ffn_space, ffn_evaluator, budget=16, n_init=4, seed=1)
        assert len({r.kappa for r in records}) == 16
        assert best_cost(records) == ffn_evaluator.optimum()

    def test_budget_capped_at_space_size(self, ffn_space, ffn_evaluator):
        records = search(ffn_space, ffn_evaluator, budget=100, seed=0)
        assert len(records) == 16

    def test_deterministic(self, ffn_space, ffn_evaluator):
        first = search(ffn_space, ffn_evaluator, budget=10, n_init=4, seed=7)
        second = search(ffn_space, ffn_evaluator, budget=10, n_init=4, seed=7)
        assert first == second

    @pytest.mark.parametrize('refit_every', [1, 3])
    def test_resume_matches_uninterrupted_run(self, ffn_space, tmp_path, refit_every):
        full_log, split_log = tmp_path / 'full.jsonl', tmp_path / 'split.jsonl'
        weights = [(0.3, 0.4), (0.2, 0.6)]
        search(ffn_space, SeparableEvaluator(ffn_space, weights), budget=11, n_init=4, seed=2,
               record_log=str(full_log), refit_every=refit_every)
        search(ffn_space, SeparableEvaluator(ffn_space, weights), budget=7, n_init=4, seed=2,
               record_log=str(split_log), refit_every=refit_every)
        resumed = SeparableEvaluator(ffn_space, weights)
        records = search(ffn_space, resumed, budget=11, n_init=4, seed=2, record_log=str(split_log),
                         refit_every=refit_every)
        assert resumed.calls == 4
        assert len(records) == 11
        assert split_log.read_bytes() == full_log.read_bytes()

    def test_rerun_of_finished_search_is_idempotent(self, ffn_space, tmp_path):
        log = str(tmp_path / 'records.jsonl')
        first = search(ffn_space, SeparableEvaluator(ffn_space, [(0.3, 0.4), (0.2, 0.6)]), budget=6, n_init=4,
                       seed=0, record_log=log)
        again = SeparableEvaluator(ffn_space, [(0.3, 0.4), (0.2, 0.6)])
        assert search(ffn_space, again, budget=6, n_init=4, seed=0, record_log=log) == first
        assert again.calls == 0
        assert load_records(log) == first

    def test_foreign_log_is_rejected(self, ffn_space, ffn_evaluator, tmp_path):
        log = RecordLog(str(tmp_path / 'records.jsonl'))
        log.append(make_record(0, cost=1.0, kappa=CompressionConfig({(1, 'ffn'): (8, 0.0)})))
        with pytest.raises(RecordLogError):
            search(ffn_space, ffn_evaluator, budget=6, n_init=4, seed=0, record_log=log.path)

    def test_log_longer_than_budget(self, ffn_space, ffn_evaluator, tmp_path):
        log = str(tmp_path / 'records.jsonl')
        search(ffn_space, ffn_evaluator, budget=6, n_init=4, seed=0, record_log=log)
        with pytest.raises(RecordLogError):
            search(ffn_space, ffn_evaluator, budget=5, n_init=4, seed=0, record_log=log)

    def test_invalid_settings(self, ffn_space, ffn_evaluator):
        with pytest.raises(SearchSpaceError):
            RobustnessGuidedSearch(ffn_space, ffn_evaluator, ['seq_coh'], [0.0], budget=3, n_init=4)
        with pytest.raises(ValueError):
            RobustnessGuidedSearch(ffn_space, ffn_evaluator, ['seq_coh'], [0.0], budget=8, refit_every=0)
        with pytest.raises(ValueError):
            RobustnessGuidedSearch(ffn_space, ffn_evaluator, ['seq_coh', 'ctx_cons'], [0.0], budget=8)

    def test_evaluation_without_constrained_property(self, ffn_space, ffn_evaluator):
        with pytest.raises(ValueError):
            RobustnessGuidedSearch(ffn_space, ffn_evaluator, ['ctx_cons'], [0.0], budget=4, n_init=4).run()


@pytest.mark.slow
class TestSearchOptimality:

    @pytest.fixture
    def space(self, tiny_arch):
        return SearchSpace(tiny_arch, bits=(4, 8, 16), ratios=(0.0, 0.25, 0.5), components=MIXED)

    def instances(self, space, n=20):
        for seed in range(n):
            weights = np.random.default_rng(seed).uniform(0.1, 0.4, size=(2, 2))
            yield seed, SeparableEvaluator(space, [tuple(w) for w in weights])

    def test_full_budget_reaches_optimum(self, space):
        for seed, evaluator in self.instances(space):
            records = search(space, evaluator, budget=space.size, seed=seed, refit_every=5)
            assert best_cost(records) == evaluator.optimum()

    def test_half_budget_is_near_optimal(self, space):
        hits = 0
        for seed, evaluator in self.instances(space):
            records = search(space, evaluator, budget=space.size // 2, seed=seed, refit_every=5)
            hits += best_cost(records) <= 1.10 * evaluator.optimum()
        assert hits >= 18


class TestRecordLog:

    def test_round_trip(self, tmp_path):
        log = RecordLog(str(tmp_path / 'nested' / 'records.jsonl'))
        records = [make_record(i, cost=10.0 - i, rho=0.1 * i, feasible=i % 2 == 0) for i in range(3)]
        for record in records:
            log.append(record)
        assert log.load() == records

    def test_partial_final_line_is_repaired(self, tmp_path):
        path = tmp_path / 'records.jsonl'
        log = RecordLog(str(path))
        log.append(make_record(0, cost=5.0))
        log.append(make_record(1, cost=4.0))
        intact = path.read_bytes()
        with open(path, 'ab') as f:
            f.write(b'{"config_id": 2, "kap')
        assert load_records(str(path)) == log.load(repair=False)
        assert path.read_bytes() != intact
        assert len(log.load()) == 2
        assert path.read_bytes() == intact
        log.append(make_record(2, cost=3.0))
        assert [r.config_id for r in log.load()] == [0, 1, 2]

    def test_corrupt_line(self, tmp_path):
        path = tmp_path / 'records.jsonl'
        path.write_text('{"config_id": 0\nnot json\n')
        with pytest.raises(RecordLogError):
            RecordLog(str(path)).load()

    def test_non_consecutive_ids(self, tmp_path):
        log = RecordLog(str(tmp_path / 'records.jsonl'))
        log.append(make_record(0, cost=1.0))
        log.append(make_record(2, cost=1.0))
        with pytest.raises(RecordLogError):
            log.load()

    def test_missing_log(self, tmp_path):
        assert RecordLog(str(tmp_path / 'absent.jsonl')).load() == []
