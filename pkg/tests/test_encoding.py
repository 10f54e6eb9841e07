import numpy as np
import pytest

from toggle.exceptions import SearchSpaceError
from toggle.search.encoding import SearchSpace, initial_design

FFN = ((1, 'ffn'), (2, 'ffn'))


@pytest.fixture
def small_space(tiny_arch):
    return SearchSpace(tiny_arch, bits=(8, 16), ratios=(0.0, 0.5), components=FFN)


class TestSearchSpace:

    def test_size(self, tiny_arch, small_space):
        assert small_space.size == 16
        assert SearchSpace(tiny_arch).size == (15 * 6) ** 6

    def test_unsearched_components_stay_at_reference(self, small_space):
        kappa = next(small_space.enumerate())
        assert kappa[(1, 'attn_qkv')] == (16, 0.0)
        assert kappa[(1, 'ffn')] == (8, 0.0)

    def test_identity_leaves_unsearched_components_uncompressed(self, tiny_arch):
        space = SearchSpace(tiny_arch, bits=(4, 8), ratios=(0.0, 0.5), components=FFN)
        identity = space.identity()
        assert identity[(1, 'ffn')] == identity[(2, 'ffn')] == (8, 0.0)
        for lc in tiny_arch.layer_components():
            if lc not in FFN:
                assert identity[lc] == (16, 0.0)

    def test_enumerate_is_complete_and_distinct(self, small_space):
        configs = list(small_space.enumerate())
        assert len(configs) == len(set(configs)) == 16

    def test_encoding_bounds(self, small_space):
        X = small_space.encode_many(list(small_space.enumerate()))
        assert X.shape == (16, 4)
        assert X.min() == 0.0 and X.max() == 1.0

    def test_decode_snaps_to_nearest(self, tiny_arch):
        space = SearchSpace(tiny_arch, bits=(4, 8, 16), ratios=(0.0, 0.25, 0.5), components=FFN)
        kappa = space.decode(np.array([0.30, 0.60, 0.9, 0.1]))
        assert kappa[(1, 'ffn')] == (8, 0.25)
        assert kappa[(2, 'ffn')] == (16, 0.0)
        for k in space.enumerate():
            assert space.decode(space.encode(k)) == k

    def test_neighbors(self, tiny_arch):
        space = SearchSpace(tiny_arch, bits=(4, 8, 16), ratios=(0.0, 0.25, 0.5), components=FFN)
        assert len(space.neighbors(space.identity())) == 4
        center = space.from_indices(((1, 1), (1, 1)))
        assert len(space.neighbors(center)) == 8

    @pytest.mark.parametrize('kwargs', [{'bits': (1, 8)}, {'ratios': (0.0, 0.7)}, {'bits': ()},
                                        {'components': ((3, 'ffn'),)}])
    def test_invalid_space(self, tiny_arch, kwargs):
        with pytest.raises(SearchSpaceError):
            SearchSpace(tiny_arch, **kwargs)


class TestInitialDesign:

    def test_distinct_with_identity_first(self, small_space):
        design = initial_design(small_space, n_init=4, seed=0)
        assert len(design) == len(set(design)) == 4
        assert design[0] == small_space.identity()

    def test_deterministic(self, small_space):
        assert initial_design(small_space, 4, seed=3) == initial_design(small_space, 4, seed=3)

    def test_whole_space(self, small_space):
        assert set(initial_design(small_space, 16, seed=0)) == set(small_space.enumerate())

    @pytest.mark.parametrize('n_init', [1, 17])
    def test_invalid_size(self, small_space, n_init):
        with pytest.raises(SearchSpaceError):
            initial_design(small_space, n_init, seed=0)
