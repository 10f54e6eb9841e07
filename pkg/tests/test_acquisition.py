import numpy as np
import pytest
from scipy.stats import norm

from toggle.exceptions import SearchExhaustedError
from toggle.search.acquisition import (OptimizerState, acquisition, expected_improvement,
                                       probability_of_feasibility, propose_next)
from toggle.search.encoding import SearchSpace
from toggle.search.surrogate import gp_fit


class FixedPosterior:
    """Surrogate stand-in with a constant Gaussian posterior."""

    def __init__(self, mu, sigma):
        self.mu = mu
        self.sigma = sigma

    def predict(self, X, standardized=False):
        n = np.atleast_2d(X).shape[0]
        return np.full(n, float(self.mu)), np.full(n, float(self.sigma))


def fitted_state(space, configs, cost_fn, rho_fn, rho_th=0.0, pool_size=1024):
    X = space.encode_many(configs)
    costs = np.array([cost_fn(x) for x in X])
    rho = np.array([[rho_fn(x)] for x in X])
    return OptimizerState(space=space, configs=list(configs), costs=costs, rho=rho, rho_th=np.array([rho_th]),
                          cost_gp=gp_fit(X, costs), constraint_gps=[gp_fit(X, rho[:, 0])], pool_size=pool_size)


class TestClosedForms:

    def test_expected_improvement(self):
        mu, sigma, best = 5.0, 2.0, 6.0
        z = (best - mu) / sigma
        expected = (best - mu) * norm.cdf(z) + sigma * norm.pdf(z)
        assert expected_improvement(np.array([mu]), np.array([sigma]), best)[0] == pytest.approx(expected)

    def test_deterministic_limits(self):
        np.testing.assert_array_equal(expected_improvement(np.array([4.0, 7.0]), np.zeros(2), 6.0), [2.0, 0.0])
        np.testing.assert_array_equal(probability_of_feasibility(np.array([0.1, -0.1]), np.zeros(2), 0.0),
                                      [1.0, 0.0])

    def test_single_constraint(self):
        cost, rho = FixedPosterior(5.0, 2.0), FixedPosterior(0.1, 0.2)
        value = acquisition(cost, [rho], np.zeros(4), best_feasible_cost=6.0, rho_th=[0.0])
        z = 0.5
        ei = 1.0 * norm.cdf(z) + 2.0 * norm.pdf(z)
        assert value == pytest.approx(norm.cdf((0.1 - 0.0) / 0.2) * ei)

    def test_no_improvement_at_incumbent(self):
        value = acquisition(FixedPosterior(6.0, 0.0), [FixedPosterior(1.0, 0.0)], np.zeros(2), 6.0, [0.0])
        assert value == 0.0

    def test_infeasible_gate(self):
        value = acquisition(FixedPosterior(1.0, 1.0), [FixedPosterior(-1.0, 0.0)], np.zeros(2), 6.0, [0.0])
        assert value == 0.0

    def test_without_feasible_incumbent(self):
        value = acquisition(FixedPosterior(1.0, 1.0), [FixedPosterior(0.0, 1.0), FixedPosterior(1.0, 1.0)],
                            np.zeros(2), None, [0.0, 0.0])
        assert value == pytest.approx(0.5 * norm.cdf(1.0))

    def test_batch_shape(self):
        values = acquisition(FixedPosterior(1.0, 1.0), [FixedPosterior(0.0, 1.0)], np.zeros((3, 2)), 2.0, [0.0])
        assert values.shape == (3,)

    def test_threshold_count_mismatch(self):
        with pytest.raises(ValueError):
            acquisition(FixedPosterior(1.0, 1.0), [FixedPosterior(0.0, 1.0)], np.zeros(2), 2.0, [0.0, 0.1])


class TestProposeNext:

    @pytest.fixture
    def space(self, tiny_arch):
        return SearchSpace(tiny_arch, bits=(8, 16), ratios=(0.0, 0.5), components=((1, 'ffn'), (2, 'ffn')))

    def test_single_remaining_configuration(self, space):
        configs = list(space.enumerate())
        state = fitted_state(space, configs[:-1], cost_fn=lambda x: x.sum(), rho_fn=lambda x: 1.0 - x.mean())
        assert propose_next(state, seed=0) == configs[-1]

    def test_exhausted(self, space):
        configs = list(space.enumerate())
        state = fitted_state(space, configs, cost_fn=lambda x: x.sum(), rho_fn=lambda x: 1.0 - x.mean())
        with pytest.raises(SearchExhaustedError):
            propose_next(state, seed=0)

    def test_deterministic(self, space):
        configs = list(space.enumerate())[::3]
        state = fitted_state(space, configs, cost_fn=lambda x: x.sum(), rho_fn=lambda x: 1.0 - x.mean())
        assert propose_next(state, seed=[1, 5]) == propose_next(state, seed=[1, 5])

    def test_proposal_is_unevaluated(self, tiny_arch):
        space = SearchSpace(tiny_arch, bits=(4, 8, 16), ratios=(0.0, 0.25, 0.5))
        rng = np.random.default_rng(0)
        configs = [space.identity()] + space.random_configs(rng, 10)
        state = fitted_state(space, configs, cost_fn=lambda x: x[0::2].sum(), rho_fn=lambda x: 0.5 - x[1::2].mean(),
                             pool_size=64)
        proposal = propose_next(state, seed=0)
        assert not state.is_evaluated(proposal)

