import numpy as np
from dataclasses import dataclass, field
from numpy.lib.stride_tricks import sliding_window_view
from typing import Dict, FrozenSet, Iterable, Mapping, Optional, Tuple, Union

from toggle.exceptions import (HorizonError, PropertyIndexError,
                               ThresholdRangeError, UnknownChannelError)
from toggle.signals import InferenceSignal, SignalBundle, attention_channel

BUILTIN_PROPERTIES = ('seq_coh', 'long_range', 'ctx_cons', 'fact_acc')


class StlFormula:
    """
    Base class of discrete-time STL formulas with quantitative (robustness) semantics.

    Every node computes a robustness trace over the steps of a signal: entry t-1 holds the robustness
    at step t, or NaN when evaluating at t would reference a step past the signal horizon.
    """

    def trace(self, sigma: InferenceSignal) -> np.ndarray:
        raise NotImplementedError

    def channels(self) -> FrozenSet[str]:
        raise NotImplementedError

    def __and__(self, other: 'StlFormula') -> 'StlFormula':
        return And(self, other)

    def __or__(self, other: 'StlFormula') -> 'StlFormula':
        return Or(self, other)

    def __invert__(self) -> 'StlFormula':
        return Not(self)


@dataclass(frozen=True)
class Predicate(StlFormula):
    """
    Affine predicate `constant + sum(coef * channel) >= 0`; its robustness is the left-hand side.

    Attributes:
        terms (Tuple[Tuple[str, float], ...]): (channel, coefficient) pairs.
        constant (float): Constant offset.
    """
    terms: Tuple[Tuple[str, float], ...]
    constant: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'terms', tuple((str(c), float(k)) for c, k in self.terms))
        object.__setattr__(self, 'constant', float(self.constant))

    @classmethod
    def affine(cls, coefficients: Mapping[str, float], constant: float = 0.0) -> 'Predicate':
        return cls(tuple(coefficients.items()), constant)

    def trace(self, sigma: InferenceSignal) -> np.ndarray:
        out = np.full(sigma.horizon, self.constant)
        for name, coef in self.terms:
            out = out + coef * sigma.channel(name)
        return out

    def channels(self) -> FrozenSet[str]:
        return frozenset(name for name, _ in self.terms)

    def __str__(self) -> str:
        parts = []
        for name, coef in self.terms:
            sign = '-' if coef < 0 else '+'
            mag = abs(coef)
            body = name if mag == 1.0 else f"{mag!r}*{name}"
            parts.append((sign, body))
        if self.constant != 0.0 or not parts:
            parts.append(('-' if self.constant < 0 else '+', repr(abs(self.constant))))
        text = ('-' if parts[0][0] == '-' else '') + parts[0][1]
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return f"{text} >= 0"


@dataclass(frozen=True)
class Not(StlFormula):
    child: StlFormula

    def trace(self, sigma: InferenceSignal) -> np.ndarray:
        return -self.child.trace(sigma)

    def channels(self) -> FrozenSet[str]:
        return self.child.channels()

    def __str__(self) -> str:
        return f"not ({self.child})"


@dataclass(frozen=True)
class And(StlFormula):
    left: StlFormula
    right: StlFormula

    def trace(self, sigma: InferenceSignal) -> np.ndarray:
        return np.minimum(self.left.trace(sigma), self.right.trace(sigma))

    def channels(self) -> FrozenSet[str]:
        return self.left.channels() | self.right.channels()

    def __str__(self) -> str:
        return f"({self.left}) and ({self.right})"


@dataclass(frozen=True)
class Or(StlFormula):
    left: StlFormula
    right: StlFormula

    def trace(self, sigma: InferenceSignal) -> np.ndarray:
        return np.maximum(self.left.trace(sigma), self.right.trace(sigma))

    def channels(self) -> FrozenSet[str]:
        return self.left.channels() | self.right.channels()

    def __str__(self) -> str:
        return f"({self.left}) or ({self.right})"


@dataclass(frozen=True)
class Always(StlFormula):
    """
    Bounded always over the relative interval [start, end].

    Evaluated at step t, the window covers the absolute steps t+start-1 ... t+end-1. An `end` of None
    stands for the horizon T' of the evaluated signal, so the window then reaches the last step.

    Attributes:
        start (int): Lower interval bound, at least 1.
        end (Optional[int]): Upper interval bound (>= start), or None for the signal horizon.
        child (StlFormula): The formula that must hold over the window.
    """
    start: int
    end: Optional[int]
    child: StlFormula

    def __post_init__(self):
        if self.start < 1:
            raise ValueError(f"Always interval must start at >= 1, got {self.start}.")
        if self.end is not None and self.end < self.start:
            raise ValueError(f"Always interval [{self.start}, {self.end}] is empty.")

    def trace(self, sigma: InferenceSignal) -> np.ndarray:
        inner = self.child.trace(sigma)
        horizon = len(inner)
        out = np.full(horizon, np.nan)
        offset = self.start - 1
        if self.end is None:
            if offset < horizon:
                suffix_min = np.minimum.accumulate(inner[::-1])[::-1]
                out[:horizon - offset] = suffix_min[offset:]
            return out
        length = self.end - self.start + 1
        if length > horizon:
            return out
        window_min = sliding_window_view(inner, length).min(axis=-1)
        valid = len(window_min) - offset
        if valid > 0:
            out[:valid] = window_min[offset:]
        return out

    def channels(self) -> FrozenSet[str]:
        return self.child.channels()

    def window(self, t: int, horizon: int) -> Tuple[int, int]:
        """Absolute inclusive step range covered when evaluated at step `t`."""
        last = horizon if self.end is None else t + self.end - 1
        return t + self.start - 1, last

    def __str__(self) -> str:
        end = "T'" if self.end is None else str(self.end)
        return f"always[{self.start},{end}]({self.child})"


def conjunction(formulas: Iterable[StlFormula]) -> StlFormula:
    """Fold formulas into a left-nested conjunction."""
    formulas = list(formulas)
    if not formulas:
        raise ValueError("A conjunction needs at least one formula.")
    result = formulas[0]
    for phi in formulas[1:]:
        result = And(result, phi)
    return result


def robustness_trace(phi: StlFormula, sigma: InferenceSignal) -> np.ndarray:
    """
    Robustness of `phi` at every step of `sigma`.

    Raises:
        UnknownChannelError: If `phi` references a channel missing in `sigma`.
    """
    missing = phi.channels() - set(sigma.channels)
    if missing:
        raise UnknownChannelError(f"Signal '{sigma.prompt_id}' lacks channel(s) {', '.join(sorted(missing))}.")
    return phi.trace(sigma)


def robustness(phi: StlFormula, sigma: InferenceSignal, t: int = 1) -> float:
    """
    Quantitative robustness degree of `phi` on `sigma` at step `t`.

    Positive values mean satisfaction, negative values violation and zero marginal satisfaction.

    Args:
        phi (StlFormula): The formula.
        sigma (InferenceSignal): The signal.
        t (int): 1-based evaluation step.

    Returns:
        float: The robustness degree.

    Raises:
        HorizonError: If `t` or any window of `phi` evaluated at `t` reaches outside [1, T'].
        UnknownChannelError: If `phi` references a channel missing in `sigma`.
    """
    if not 1 <= t <= sigma.horizon:
        raise HorizonError(f"Step {t} is outside the horizon [1, {sigma.horizon}] of signal '{sigma.prompt_id}'.")
    value = robustness_trace(phi, sigma)[t - 1]
    if np.isnan(value):
        raise HorizonError(f"Evaluating '{phi}' at step {t} needs steps past the horizon T'={sigma.horizon} "
                           f"of signal '{sigma.prompt_id}'.")
    return float(value)


def critical_step(phi: StlFormula, sigma: InferenceSignal, t: int = 1) -> int:
    """
    Step whose predicate value decides the robustness of `phi` at `t`.

    Always picks the earliest minimizing step of its window, And/Or follow the child attaining the
    min/max (left child on ties), and a predicate reports the step it is evaluated at.
    """
    robustness(phi, sigma, t)
    return _critical_step(phi, sigma, t)


def _critical_step(phi: StlFormula, sigma: InferenceSignal, t: int) -> int:
    if isinstance(phi, Predicate):
        return t
    if isinstance(phi, Not):
        return _critical_step(phi.child, sigma, t)
    if isinstance(phi, (And, Or)):
        left = phi.left.trace(sigma)[t - 1]
        right = phi.right.trace(sigma)[t - 1]
        take_left = left <= right if isinstance(phi, And) else left >= right
        return _critical_step(phi.left if take_left else phi.right, sigma, t)
    if isinstance(phi, Always):
        first, last = phi.window(t, sigma.horizon)
        inner = phi.child.trace(sigma)[first - 1:last]
        return _critical_step(phi.child, sigma, first + int(np.argmin(inner)))
    raise TypeError(f"Unsupported formula node {type(phi).__name__}.")


@dataclass(frozen=True)
class PredicateThresholds:
    """
    Predicate performance thresholds of the built-in properties.

    Attributes:
        epsilon (float): JSD tolerance, in (0, 1].
        delta (float): Attention-similarity floor, in (0, 1].
        gamma (float): Embedding-similarity floor, in (0, 1].
        tau (float): Factual-ratio floor, in (0, 1].
    """
    epsilon: float = 0.25
    delta: float = 0.70
    gamma: float = 0.70
    tau: float = 0.70

    def __post_init__(self):
        for name in ('epsilon', 'delta', 'gamma', 'tau'):
            value = float(getattr(self, name))
            if not 0.0 < value <= 1.0:
                raise ThresholdRangeError(f"Threshold {name}={value} must lie in (0, 1].")
            object.__setattr__(self, name, value)

    def to_dict(self) -> Dict[str, float]:
        return {'epsilon': self.epsilon, 'delta': self.delta, 'gamma': self.gamma, 'tau': self.tau}


@dataclass(frozen=True)
class RobustnessThresholds:
    """
    Minimum robustness each property has to reach for a configuration to be feasible.

    Attributes:
        rho_th (Dict[str, float]): Non-negative threshold per property name.
    """
    rho_th: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        cleaned = {}
        for name, value in dict(self.rho_th).items():
            value = float(value)
            if not value >= 0.0:
                raise ThresholdRangeError(f"Robustness threshold for '{name}' must be >= 0, got {value}.")
            cleaned[name] = value
        object.__setattr__(self, 'rho_th', cleaned)

    @classmethod
    def uniform(cls, names: Iterable[str], value: float = 0.0) -> 'RobustnessThresholds':
        return cls({name: value for name in names})

    def __getitem__(self, name: str) -> float:
        return self.rho_th[name]

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self.rho_th)


@dataclass(frozen=True)
class RobustnessResult:
    """
    Robustness of several named properties on one signal.

    Attributes:
        per_property (Dict[str, float]): Robustness degree per property.
        per_property_argmin_step (Dict[str, int]): Critical step per property, within [1, T'].
    """
    per_property: Dict[str, float]
    per_property_argmin_step: Dict[str, int]


def build_phi1(thresholds: PredicateThresholds, horizon: Optional[int] = None) -> StlFormula:
    """Sequential coherence: always[1, horizon](epsilon - jsd >= 0)."""
    return Always(1, _check_horizon(horizon), Predicate((('jsd', -1.0),), thresholds.epsilon))


def build_phi2(thresholds: PredicateThresholds, horizon: Optional[int] = None, n_layers: int = 1) -> StlFormula:
    """Long-range dependency: conjunction over layers of always[1, horizon](attn_sim_l - delta >= 0)."""
    if n_layers < 1:
        raise ValueError(f"n_layers must be >= 1, got {n_layers}.")
    end = _check_horizon(horizon)
    return conjunction(Always(1, end, Predicate(((attention_channel(l), 1.0),), -thresholds.delta))
                       for l in range(1, n_layers + 1))


def build_phi3(thresholds: PredicateThresholds, horizon: Optional[int] = None) -> StlFormula:
    """Contextual consistency: always[1, horizon](emb_sim - gamma >= 0)."""
    return Always(1, _check_horizon(horizon), Predicate((('emb_sim', 1.0),), -thresholds.gamma))


def build_phi4(thresholds: PredicateThresholds, horizon: Optional[int] = None) -> StlFormula:
    """Factual accuracy: always[1, horizon](fact_ratio - tau >= 0)."""
    return Always(1, _check_horizon(horizon), Predicate((('fact_ratio', 1.0),), -thresholds.tau))


def builtin_properties(thresholds: PredicateThresholds, n_layers: int,
                       horizon: Optional[int] = None) -> Dict[str, StlFormula]:
    """
    The four built-in linguistic properties keyed by name.

    Args:
        thresholds (PredicateThresholds): Predicate thresholds.
        n_layers (int): Number of transformer layers.
        horizon (Optional[int]): Fixed horizon, or None to cover each signal's own horizon.

    Returns:
        Dict[str, StlFormula]: `seq_coh`, `long_range`, `ctx_cons` and `fact_acc`, in that order.
    """
    return {
        'seq_coh': build_phi1(thresholds, horizon),
        'long_range': build_phi2(thresholds, horizon, n_layers),
        'ctx_cons': build_phi3(thresholds, horizon),
        'fact_acc': build_phi4(thresholds, horizon),
    }


def _check_horizon(horizon: Optional[int]) -> Optional[int]:
    if horizon is not None and horizon < 1:
        raise ValueError(f"Horizon must be >= 1, got {horizon}.")
    return horizon


def evaluate_properties(properties: Mapping[str, StlFormula], sigma: InferenceSignal) -> RobustnessResult:
    """Robustness and critical step of every property on one signal, evaluated at step 1."""
    per_property = {}
    steps = {}
    for name, phi in properties.items():
        per_property[name] = robustness(phi, sigma, 1)
        steps[name] = _critical_step(phi, sigma, 1)
    return RobustnessResult(per_property, steps)


def min_robustness_over_dataset(phi: StlFormula, bundle: SignalBundle) -> float:
    """
    Worst robustness of `phi` over all prompts of a bundle, each evaluated at step 1.

    Args:
        phi (StlFormula): The formula.
        bundle (SignalBundle): The signals of the evaluation dataset.

    Returns:
        float: The minimum robustness.

    Raises:
        ValueError: If the bundle is empty.
        SchemaMismatchError: If the bundle lacks a channel referenced by `phi`.
    """
    if len(bundle) == 0:
        raise ValueError(f"Bundle '{bundle.dataset_id}' holds no signals.")
    bundle.require_channels(phi.channels())
    return min(robustness(phi, sigma, 1) for sigma in bundle)


def min_robustness_per_property(properties: Mapping[str, StlFormula], bundle: SignalBundle) -> Dict[str, float]:
    """Apply `min_robustness_over_dataset` to each property after checking all channels up front."""
    needed = set()
    for phi in properties.values():
        needed |= phi.channels()
    bundle.require_channels(needed)
    return {name: min_robustness_over_dataset(phi, bundle) for name, phi in properties.items()}


def check_feasibility(result: Union[Mapping[str, float], RobustnessResult], rho_th: RobustnessThresholds) -> bool:
    """
    Check whether every property's minimum robustness reaches its threshold.

    Args:
        result (Union[Mapping[str, float], RobustnessResult]): Minimum robustness per property.
        rho_th (RobustnessThresholds): Threshold per property.

    Returns:
        bool: True iff result[name] >= rho_th[name] for every property.

    Raises:
        PropertyIndexError: If both sides do not name the same properties.
    """
    if isinstance(result, RobustnessResult):
        result = result.per_property
    if set(result) != set(rho_th.names):
        raise PropertyIndexError(f"Robustness values cover {sorted(result)} but thresholds cover "
                                 f"{sorted(rho_th.names)}.")
    return all(result[name] >= rho_th[name] for name in rho_th.names)
