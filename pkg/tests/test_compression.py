import numpy as np
import pytest

from toggle.exceptions import BitWidthError, CoverageError, PruningRatioError
from toggle.model.compression import (CompressionConfig, apply_config, calibration_grid, compress_component,
                                      prune_component, pruning_mask, quantize_component, quantize_with_scale)


def grid_mse(weights, bits):
    return [np.mean((quantize_with_scale(weights, bits, s) - weights) ** 2) for s in calibration_grid(weights, bits)]


class TestQuantizeComponent:

    def test_reference_precision_is_identity(self, rng):
        w = rng.normal(size=(8, 8))
        np.testing.assert_array_equal(quantize_component(w, 16), w)

    @pytest.mark.parametrize('bits', [2, 3, 8])
    def test_constant_tensor_has_one_level(self, bits):
        out = quantize_component(np.full((4, 4), 0.7), bits)
        assert len(np.unique(out)) == 1

    def test_zero_tensor(self):
        np.testing.assert_array_equal(quantize_component(np.zeros(5), 4), np.zeros(5))

    def test_two_bit_elastic_levels(self):
        w = np.array([-1.0, -0.3, 0.3, 1.0])
        out = quantize_component(w, 2)
        assert len(np.unique(out)) <= 4
        assert np.mean((out - w) ** 2) <= min(grid_mse(w, 2)) + 1e-15

    @pytest.mark.parametrize('bits', [1, 17, 4.5])
    def test_invalid_bits(self, bits):
        with pytest.raises(BitWidthError):
            quantize_component(np.ones(3), bits)

    def test_mask_keeps_pruned_zero(self, rng):
        w = rng.normal(size=100)
        mask = pruning_mask(w, 0.5)
        out = quantize_component(w, 2, mask=mask)
        assert np.all(out[~mask] == 0.0)
        assert np.all(out[mask] != 0.0)

    @pytest.mark.slow
    def test_grid_scan_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            bits = int(rng.integers(2, 16))
            w = rng.normal(scale=rng.uniform(0.01, 2.0), size=int(rng.integers(2, 200)))
            out = quantize_component(w, bits)
            assert len(np.unique(out)) <= 2 ** bits
            mse = grid_mse(w, bits)
            np.testing.assert_allclose(np.mean((out - w) ** 2), min(mse), rtol=0, atol=0)


class TestPruneComponent:

    def test_zero_ratio_is_identity(self, rng):
        w = rng.normal(size=10)
        np.testing.assert_array_equal(prune_component(w, 0.0), w)

    def test_half(self):
        np.testing.assert_array_equal(prune_component(np.array([3.0, -1.0, 2.0, -4.0]), 0.5), [3, 0, 0, -4])

    def test_quarter(self):
        np.testing.assert_array_equal(prune_component(np.array([3.0, -1.0, 2.0, -4.0]), 0.25), [3, 0, 2, -4])

    def test_ties_drop_lower_index(self):
        np.testing.assert_array_equal(prune_component(np.array([1.0, -1.0, 1.0, 2.0]), 0.5), [0, 0, 1, 2])

    def test_ratio_above_maximum(self):
        with pytest.raises(PruningRatioError):
            prune_component(np.ones(4), 0.7)

    @pytest.mark.slow
    def test_sort_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            w = rng.normal(size=tuple(rng.integers(1, 20, size=2)))
            ratio = float(rng.uniform(0, 0.5))
            out = prune_component(w, ratio)
            n_zero = int(np.floor(ratio * w.size + 1e-9))
            assert np.count_nonzero(out == 0.0) == n_zero
            smallest = np.argsort(np.abs(w).ravel(), kind='stable')[:n_zero]
            assert np.all(out.ravel()[smallest] == 0.0)
            kept = np.ones(w.size, dtype=bool)
            kept[smallest] = False
            np.testing.assert_array_equal(out.ravel()[kept], w.ravel()[kept])

    def test_compress_prunes_then_quantizes(self, rng):
        w = rng.normal(size=64)
        out = compress_component(w, 4, 0.5)
        mask = pruning_mask(w, 0.5)
        assert np.all(out[~mask] == 0.0)
        assert len(np.unique(out[mask])) <= 2 ** 4


class TestCompressionConfig:

    def test_identity_and_uniform(self, tiny_arch):
        kappa = CompressionConfig.uniform(tiny_arch, 8, 0.4)
        assert len(kappa) == len(tiny_arch.layer_components())
        assert kappa.avg_bits == 8.0
        assert kappa.avg_pruning == pytest.approx(0.4)
        assert CompressionConfig.identity(tiny_arch).avg_bits == 16.0

    def test_coverage(self, tiny_arch):
        kappa = CompressionConfig({(1, 'ffn'): (8, 0.0), (3, 'ffn'): (8, 0.0)})
        with pytest.raises(CoverageError, match='missing') as e:
            kappa.check_coverage(tiny_arch)
        assert "layer 3 'ffn'" in str(e.value)

    def test_range_checks(self):
        with pytest.raises(BitWidthError):
            CompressionConfig({(1, 'ffn'): (1, 0.0)})
        with pytest.raises(PruningRatioError):
            CompressionConfig({(1, 'ffn'): (8, 0.6)})

    def test_dict_round_trip_and_hash(self, tiny_arch):
        kappa = CompressionConfig.uniform(tiny_arch, 4, 0.2)
        again = CompressionConfig.from_dict(kappa.to_dict())
        assert again == kappa
        assert len({kappa, again}) == 1

    def test_malformed_dict(self):
        with pytest.raises(ValueError):
            CompressionConfig.from_dict({'assignments': [{'layer': 1}]})


class TestApplyConfig:

    def test_identity_shares_weights(self, tiny_model, tiny_arch):
        compressed = apply_config(tiny_model, CompressionConfig.identity(tiny_arch))
        for lc, w in tiny_model.weights.items():
            np.testing.assert_array_equal(compressed.weights[lc], w)

    def test_single_component_pruned(self, tiny_model, tiny_arch):
        assignments = dict(CompressionConfig.identity(tiny_arch).items())
        assignments[(2, 'attn_out')] = (16, 0.5)
        compressed = apply_config(tiny_model, CompressionConfig(assignments))
        w = compressed.weights[(2, 'attn_out')]
        assert np.count_nonzero(w == 0.0) == w.size // 2
        for lc in tiny_model.weights:
            if lc != (2, 'attn_out'):
                np.testing.assert_array_equal(compressed.weights[lc], tiny_model.weights[lc])

    def test_deterministic_and_base_untouched(self, tiny_model, tiny_arch):
        before = {lc: w.copy() for lc, w in tiny_model.weights.items()}
        kappa = CompressionConfig.uniform(tiny_arch, 3, 0.3)
        first = apply_config(tiny_model, kappa)
        second = apply_config(tiny_model, kappa)
        for lc in tiny_model.weights:
            np.testing.assert_array_equal(first.weights[lc], second.weights[lc])
            np.testing.assert_array_equal(tiny_model.weights[lc], before[lc])

    def test_coverage_checked(self, tiny_model):
        with pytest.raises(CoverageError):
            apply_config(tiny_model, CompressionConfig({(1, 'ffn'): (8, 0.0)}))
