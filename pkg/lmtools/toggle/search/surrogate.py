import warnings
import numpy as np
from scipy.optimize import minimize
from typing import Optional, Tuple
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel, Kernel

from toggle.exceptions import SurrogateFitError

JITTER_START = 1e-6
JITTER_MAX = 1e-2
LENGTH_SCALE_STARTS = (0.2, 1.0, 5.0)


def default_kernel(n_dims: int) -> Kernel:
    """Signal variance times a squared-exponential kernel with one length scale per dimension."""
    return ConstantKernel(1.0, (1e-3, 1e3)) * RBF(length_scale=np.ones(n_dims), length_scale_bounds=(1e-2, 1e2))


def multistart_lbfgs(obj_func, initial_theta: np.ndarray, bounds: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Deterministic multi-start L-BFGS-B over the log-hyperparameters.

    Starts from the kernel's current hyperparameters and from a fixed grid of shared length scales with
    unit signal variance, and keeps the best optimum.
    """
    n_dims = len(initial_theta) - 1
    starts = [np.asarray(initial_theta, dtype=np.float64)]
    for ls in LENGTH_SCALE_STARTS:
        starts.append(np.concatenate([[0.0], np.full(n_dims, np.log(ls))]))
    best_theta, best_value = None, np.inf
    for theta0 in starts:
        theta0 = np.clip(theta0, bounds[:, 0], bounds[:, 1])
        result = minimize(obj_func, theta0, method='L-BFGS-B', jac=True, bounds=bounds)
        if np.isfinite(result.fun) and result.fun < best_value:
            best_theta, best_value = result.x, float(result.fun)
    if best_theta is None:
        return starts[0], float(obj_func(starts[0], eval_gradient=False))
    return best_theta, best_value


class GpSurrogate:
    """
    Gaussian-process model of one scalar objective over configuration encodings.

    Outputs are standardized to zero mean and unit variance before fitting; predictions are mapped back.
    """

    def __init__(self, regressor: GaussianProcessRegressor, y_mean: float, y_std: float, jitter: float):
        """
        Attributes:
            regressor (GaussianProcessRegressor): The fitted regressor on standardized outputs.
            y_mean (float): Mean of the training outputs.
            y_std (float): Standard deviation of the training outputs (1 for constant data).
            jitter (float): Diagonal jitter the kernel matrix was factorized with.
        """
        self.regressor = regressor
        self.y_mean = y_mean
        self.y_std = y_std
        self.jitter = jitter

    @property
    def kernel(self) -> Kernel:
        return self.regressor.kernel_

    @property
    def n_observations(self) -> int:
        return self.regressor.X_train_.shape[0]

    def predict(self, X: np.ndarray, standardized: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """
        Posterior mean and standard deviation.

        Args:
            X (np.ndarray): Query encodings, shape (n, d).
            standardized (bool): Return values on the standardized output scale.

        Returns:
            Tuple[np.ndarray, np.ndarray]: Mean and non-negative standard deviation, each of shape (n,).
        """
        mu, sigma = self.regressor.predict(np.atleast_2d(X), return_std=True)
        sigma = np.maximum(sigma, 0.0)
        if standardized:
            return mu, sigma
        return mu * self.y_std + self.y_mean, sigma * self.y_std


def gp_fit(X: np.ndarray, y: np.ndarray, kernel: Optional[Kernel] = None, optimize: bool = True) -> GpSurrogate:
    """
    Fit a GP surrogate, escalating the jitter tenfold from 1e-6 up to 1e-2 if the kernel matrix is singular.

    Args:
        X (np.ndarray): Encodings, shape (n, d), n >= 2.
        y (np.ndarray): Observed values, shape (n,).
        kernel (Optional[Kernel]): Starting kernel; defaults to `default_kernel`.
        optimize (bool): Maximize the marginal likelihood; if False the kernel hyperparameters are kept.

    Returns:
        GpSurrogate: The fitted surrogate.

    Raises:
        SurrogateFitError: If fewer than two observations are given or the factorization fails at the cap.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] < 2 or X.shape[0] != y.shape[0]:
        raise SurrogateFitError(f"Need at least two observations with matching shapes, got X {X.shape}, y {y.shape}.")
    if not np.all(np.isfinite(y)):
        raise SurrogateFitError("Observed values must be finite.")
    y_mean = float(np.mean(y))
    y_std = float(np.std(y))
    if y_std < 1e-12:
        y_std = 1.0
    y_scaled = (y - y_mean) / y_std
    kernel = kernel if kernel is not None else default_kernel(X.shape[1])

    jitter = JITTER_START
    last_error = None
    while jitter <= JITTER_MAX * (1 + 1e-9):
        regressor = GaussianProcessRegressor(kernel=kernel, alpha=jitter, normalize_y=False,
                                             optimizer=multistart_lbfgs if optimize else None,
                                             n_restarts_optimizer=0)
        try:
            # a length scale at its upper bound marks a dimension the data does not depend on
            with np.errstate(all='ignore'), warnings.catch_warnings():
                warnings.simplefilter('ignore', ConvergenceWarning)
                regressor.fit(X, y_scaled)
            return GpSurrogate(regressor, y_mean, y_std, jitter)
        except np.linalg.LinAlgError as e:
            last_error = e
            jitter *= 10.0
    raise SurrogateFitError(f"Kernel matrix is singular even with jitter {JITTER_MAX}: {last_error}")
