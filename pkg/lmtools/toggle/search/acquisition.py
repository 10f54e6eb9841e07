import numpy as np
from dataclasses import dataclass, field
from scipy.stats import norm
from typing import List, Optional, Sequence, Union

from toggle.exceptions import SearchExhaustedError
from toggle.model.compression import CompressionConfig
from toggle.search.encoding import SearchSpace
from toggle.search.surrogate import GpSurrogate

SIGMA_FLOOR = 1e-12
POOL_SIZE = 1024


def expected_improvement(mu: np.ndarray, sigma: np.ndarray, best: float) -> np.ndarray:
    """
    Expected improvement below `best` for a minimization problem under Gaussian posteriors.

    Where the standard deviation is below the floor the improvement is deterministic, max(best - mu, 0).
    """
    mu, sigma = np.asarray(mu, dtype=np.float64), np.asarray(sigma, dtype=np.float64)
    improvement = best - mu
    safe = np.maximum(sigma, SIGMA_FLOOR)
    z = improvement / safe
    ei = improvement * norm.cdf(z) + safe * norm.pdf(z)
    return np.where(sigma > SIGMA_FLOOR, np.maximum(ei, 0.0), np.maximum(improvement, 0.0))


def probability_of_feasibility(mu: np.ndarray, sigma: np.ndarray, threshold: float) -> np.ndarray:
    """P(value >= threshold) under Gaussian posteriors; a step function where sigma is below the floor."""
    mu, sigma = np.asarray(mu, dtype=np.float64), np.asarray(sigma, dtype=np.float64)
    safe = np.maximum(sigma, SIGMA_FLOOR)
    prob = norm.cdf((mu - threshold) / safe)
    return np.where(sigma > SIGMA_FLOOR, prob, (mu >= threshold).astype(np.float64))


def acquisition(cost_gp: GpSurrogate, constraint_gps: Sequence[GpSurrogate], candidate: np.ndarray,
                best_feasible_cost: Optional[float], rho_th: Sequence[float]) -> Union[float, np.ndarray]:
    """
    Expected improvement of the cost under robustness constraints.

    EI(x) * prod_i P(rho_i(x) >= rho_th_i); without a feasible incumbent only the product of feasibility
    probabilities is returned.

    Args:
        cost_gp (GpSurrogate): Surrogate of the cost E.
        constraint_gps (Sequence[GpSurrogate]): One surrogate per property's minimum robustness.
        candidate (np.ndarray): One encoding of shape (d,) or a batch of shape (n, d).
        best_feasible_cost (Optional[float]): Lowest observed cost among feasible configurations.
        rho_th (Sequence[float]): Robustness thresholds aligned with `constraint_gps`.

    Returns:
        Union[float, np.ndarray]: Acquisition value(s), non-negative.
    """
    if len(constraint_gps) != len(rho_th):
        raise ValueError(f"Got {len(constraint_gps)} constraint surrogates for {len(rho_th)} thresholds.")
    single = np.ndim(candidate) == 1
    X = np.atleast_2d(candidate)
    value = np.ones(X.shape[0])
    for gp, th in zip(constraint_gps, rho_th):
        mu, sigma = gp.predict(X)
        value = value * probability_of_feasibility(mu, sigma, th)
    if best_feasible_cost is not None:
        mu, sigma = cost_gp.predict(X)
        value = value * expected_improvement(mu, sigma, best_feasible_cost)
    return float(value[0]) if single else value


@dataclass
class OptimizerState:
    """
    Observations the next proposal is based on.

    Attributes:
        space (SearchSpace): The search space.
        configs (List[CompressionConfig]): Evaluated configurations in evaluation order.
        costs (np.ndarray): Observed costs, shape (n,).
        rho (np.ndarray): Observed minimum robustness per property, shape (n, m).
        rho_th (np.ndarray): Robustness thresholds, shape (m,).
        cost_gp (GpSurrogate): Fitted cost surrogate.
        constraint_gps (List[GpSurrogate]): Fitted robustness surrogates, one per property.
        pool_size (int): Number of random candidates for spaces larger than the pool.
    """
    space: SearchSpace
    configs: List[CompressionConfig]
    costs: np.ndarray
    rho: np.ndarray
    rho_th: np.ndarray
    cost_gp: GpSurrogate
    constraint_gps: List[GpSurrogate]
    pool_size: int = POOL_SIZE
    _evaluated: set = field(default=None, repr=False)

    def __post_init__(self):
        self._evaluated = set(self.configs)

    @property
    def feasible(self) -> np.ndarray:
        return np.all(self.rho >= self.rho_th, axis=1)

    def best_feasible_cost(self) -> Optional[float]:
        feasible = self.feasible
        return float(np.min(self.costs[feasible])) if feasible.any() else None

    def incumbent(self) -> CompressionConfig:
        """Cheapest feasible configuration, or the one closest to feasibility if none is feasible."""
        feasible = self.feasible
        if feasible.any():
            idx = np.flatnonzero(feasible)
            return self.configs[int(idx[np.argmin(self.costs[idx])])]
        margin = np.min(self.rho - self.rho_th, axis=1)
        return self.configs[int(np.argmax(margin))]

    def is_evaluated(self, kappa: CompressionConfig) -> bool:
        return kappa in self._evaluated


def candidate_pool(state: OptimizerState, rng: np.random.Generator) -> List[CompressionConfig]:
    """
    Unevaluated candidates: the whole space if it fits the pool, else random configurations plus the
    one-coordinate neighbors of the incumbent.
    """
    space = state.space
    if space.size <= state.pool_size:
        return [k for k in space.enumerate() if not state.is_evaluated(k)]
    pool, seen = [], set()
    for attempt in range(10):
        drawn = space.random_configs(rng, state.pool_size)
        if attempt == 0:
            drawn = drawn + space.neighbors(state.incumbent())
        for kappa in drawn:
            if kappa not in seen and not state.is_evaluated(kappa):
                seen.add(kappa)
                pool.append(kappa)
        if pool:
            break
    return pool


def propose_next(state: OptimizerState, seed) -> CompressionConfig:
    """
    Unevaluated configuration maximizing the constrained expected improvement over the candidate pool.

    Args:
        state (OptimizerState): Observations and fitted surrogates.
        seed: Seed (or seed sequence entropy) of the candidate pool.

    Returns:
        CompressionConfig: The proposal; the earliest pool member wins ties.

    Raises:
        SearchExhaustedError: If no unevaluated configuration is left.
    """
    if len(state.configs) >= state.space.size:
        raise SearchExhaustedError(f"All {state.space.size} configurations have been evaluated.")
    rng = np.random.default_rng(seed)
    pool = candidate_pool(state, rng)
    if not pool:
        raise SearchExhaustedError("No unevaluated configuration found in the candidate pool.")
    X = state.space.encode_many(pool)
    scores = acquisition(state.cost_gp, state.constraint_gps, X, state.best_feasible_cost(), state.rho_th)
    if not np.max(scores) > 0.0:
        # underflow everywhere: rank by feasibility alone, then by predicted cost
        scores = acquisition(state.cost_gp, state.constraint_gps, X, None, state.rho_th)
        if not np.max(scores) > 0.0:
            scores = -state.cost_gp.predict(X)[0]
    return pool[int(np.argmax(scores))]
