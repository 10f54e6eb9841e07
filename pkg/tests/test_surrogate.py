import warnings

import numpy as np
import pytest
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process.kernels import RBF, ConstantKernel

from toggle.exceptions import SurrogateFitError
from toggle.search.surrogate import JITTER_START, default_kernel, gp_fit


class TestGpFit:

    def test_constant_data(self):
        gp = gp_fit(np.array([[0.0], [1.0]]), np.array([2.0, 2.0]))
        mu, sigma = gp.predict(np.array([[0.5]]))
        assert mu[0] == pytest.approx(2.0)
        assert sigma[0] >= 0.0

    def test_interpolates_training_points(self, rng):
        X = rng.uniform(size=(8, 2))
        y = np.sin(3 * X[:, 0]) + X[:, 1]
        kernel = ConstantKernel(1.0) * RBF(length_scale=[0.2, 0.2])
        gp = gp_fit(X, y, kernel=kernel, optimize=False)
        mu, sigma = gp.predict(X)
        np.testing.assert_allclose(mu, y, atol=1e-2)
        assert np.all(sigma < 5e-2)

    def test_duplicate_inputs_with_conflicting_values(self):
        X = np.array([[0.5, 0.5], [0.5, 0.5]])
        gp = gp_fit(X, np.array([0.0, 1.0]), kernel=ConstantKernel(1.0) * RBF([1.0, 1.0]), optimize=False)
        mu, _ = gp.predict(X[:1])
        assert mu[0] == pytest.approx(0.5, abs=1e-3)
        assert gp.jitter >= JITTER_START

    def test_optimized_fit_is_deterministic(self, rng):
        X = rng.uniform(size=(12, 3))
        y = X @ np.array([1.0, -2.0, 0.5])
        first, second = gp_fit(X, y), gp_fit(X, y)
        np.testing.assert_array_equal(first.kernel.theta, second.kernel.theta)
        query = rng.uniform(size=(5, 3))
        np.testing.assert_array_equal(first.predict(query)[0], second.predict(query)[0])

    def test_irrelevant_dimension_fits_quietly(self, rng):
        X = rng.uniform(size=(12, 2))
        y = np.sin(3 * X[:, 0])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always')
            gp = gp_fit(X, y)
        assert not [w for w in caught if issubclass(w.category, ConvergenceWarning)]
        length_scales = gp.kernel.k2.length_scale
        assert length_scales[1] > length_scales[0]

    def test_standardized_predictions(self, rng):
        X = rng.uniform(size=(6, 1))
        y = 100.0 + 10.0 * X[:, 0]
        gp = gp_fit(X, y, kernel=default_kernel(1), optimize=False)
        mu, sigma = gp.predict(X[:2])
        mu_s, sigma_s = gp.predict(X[:2], standardized=True)
        np.testing.assert_allclose(mu, mu_s * gp.y_std + gp.y_mean)
        np.testing.assert_allclose(sigma, sigma_s * gp.y_std)

    def test_too_few_points(self):
        with pytest.raises(SurrogateFitError):
            gp_fit(np.array([[0.0]]), np.array([1.0]))

    def test_non_finite_targets(self):
        with pytest.raises(SurrogateFitError):
            gp_fit(np.array([[0.0], [1.0]]), np.array([1.0, np.nan]))
