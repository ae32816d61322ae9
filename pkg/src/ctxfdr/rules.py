"""Online testing rules: LORD, LORD++, CwLORD++, weighted variants, the
dependence-safe modified LORD and an estimator-constrained SAFFRON-style rule.

Every rule proposes ``(alpha_t, phi_t, psi_t)`` from the engine state and the
weight of the current event only; the engine audits the proposal.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammaincc

from .core import HypothesisEvent
from .engine import EngineState, RuleProposal

LOG_DECAY_CONSTANT = 0.0722
WEIGHT_CLIP = (1e-3, 1e3)


# ---------------------------------------------------------------------------
# gamma sequences
# ---------------------------------------------------------------------------

def _log_decay_shape(t):
    t = np.asarray(t, dtype=float)
    return np.log(np.maximum(t, 2.0)) / (t * np.exp(np.sqrt(np.log(t))))


def gamma_log_decay(t: int, horizon: Optional[int] = None) -> float:
    """gamma_t = c * log(t v 2) / (t exp(sqrt(log t))).

    Without a horizon c = 0.0722; with a horizon T the sequence is renormalized
    to sum to one over t = 1..T (and is zero beyond T).
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    if horizon is None:
        return LOG_DECAY_CONSTANT * float(_log_decay_shape(t))
    if t > horizon:
        return 0.0
    return float(_log_decay_shape(t)) / _finite_norm(horizon)


_NORM_CACHE: dict = {}
_SERIES_TERMS = 10_000_000


def _chunked_shape_sum(n: int, log_weight: bool = False) -> float:
    total = 0.0
    chunk = 1_000_000
    for start in range(1, n + 1, chunk):
        t = np.arange(start, min(start + chunk, n + 1), dtype=float)
        s = _log_decay_shape(t)
        if log_weight:
            s = s * (1.0 + np.log(t))
        total += float(s.sum())
    return total


def infinite_shape_mass() -> float:
    """sum_{t>=1} log(t v 2)/(t exp(sqrt(log t))), partial sum plus tail bound."""
    if "inf" not in _NORM_CACHE:
        _NORM_CACHE["inf"] = (_chunked_shape_sum(_SERIES_TERMS)
                              + log_decay_tail_bound(_SERIES_TERMS, 1.0))
    return _NORM_CACHE["inf"]


def _finite_norm(horizon: int) -> float:
    if horizon not in _NORM_CACHE:
        _NORM_CACHE[horizon] = float(_log_decay_shape(np.arange(1, horizon + 1)).sum())
    return _NORM_CACHE[horizon]


def log_decay_tail_bound(n: int, scale: float = LOG_DECAY_CONSTANT, log_weight: bool = False) -> float:
    """Upper bound on sum_{t>n} scale*shape(t) [* (1 + log t)] via the integral.

    With u = log t and v = sqrt(u) the integrals reduce to incomplete gamma
    functions: int u e^{-sqrt u} du = 2 Gamma(4, v0), int u^2 ... = 2 Gamma(6, v0).
    Valid for n >= 10 where the summand is decreasing.
    """
    if n < 10:
        raise ValueError("tail bound needs n >= 10")
    v0 = math.sqrt(math.log(n))
    upper = lambda s: float(gammaincc(s, v0) * gamma_fn(s))
    total = 2.0 * upper(4)
    if log_weight:
        total += 2.0 * upper(6)
    return scale * total


class GammaSchedule:
    """A non-increasing non-negative sequence gamma_1, gamma_2, ... .

    ``values`` is materialised up to ``horizon`` when one is given; otherwise
    terms are computed on demand.
    """

    def __init__(self, kind: str = "log_decay", horizon: Optional[int] = None,
                 values: Optional[Sequence[float]] = None, scale: float = 1.0):
        self.kind = kind
        self.horizon = horizon
        self.scale = scale
        if values is not None:
            arr = np.asarray(values, dtype=float)
            if arr.ndim != 1 or len(arr) == 0:
                raise ValueError("custom gamma values must be a non-empty vector")
            if np.any(arr < 0) or np.any(np.diff(arr) > 0):
                raise ValueError("gamma must be non-negative and non-increasing")
            if kind != "dependent_safe" and abs(arr.sum() - 1.0) > 1e-9:
                raise ValueError(f"gamma must sum to 1, sums to {arr.sum()!r}")
            self._values = arr
            self.horizon = len(arr)
            self.normalization = 1.0
        elif horizon is not None:
            shape = _log_decay_shape(np.arange(1, horizon + 1))
            self.normalization = scale / shape.sum() if kind == "log_decay" else scale
            self._values = shape * self.normalization
        else:
            self.normalization = LOG_DECAY_CONSTANT * scale if kind == "log_decay" else scale
            self._values = _log_decay_shape(np.arange(1, 1025)) * self.normalization

    @classmethod
    def log_decay(cls, horizon: Optional[int] = None) -> "GammaSchedule":
        return cls("log_decay", horizon)

    @classmethod
    def custom(cls, values) -> "GammaSchedule":
        return cls("custom", values=values)

    def _grow(self, n: int) -> None:
        size = len(self._values)
        while size < n:
            size *= 2
        self._values = _log_decay_shape(np.arange(1, size + 1)) * self.normalization

    def __call__(self, t: int) -> float:
        if t < 1:
            raise ValueError("gamma index must be >= 1")
        if t > len(self._values):
            if self.horizon is not None:
                return 0.0
            self._grow(t)
        return float(self._values[t - 1])

    def values(self, n: int) -> np.ndarray:
        """First ``n`` terms (zero-padded past a finite horizon)."""
        if self.horizon is None and n > len(self._values):
            self._grow(n)
        out = np.zeros(n)
        k = min(n, len(self._values))
        out[:k] = self._values[:k]
        return out

    def total(self) -> float:
        """Sum of the whole sequence (series value plus tail bound when infinite)."""
        if self.horizon is not None:
            return float(self._values.sum())
        return self.normalization * infinite_shape_mass()

    def __repr__(self):
        return f"GammaSchedule(kind={self.kind!r}, horizon={self.horizon}, c={self.normalization:.6g})"


def dependent_safe_sum(gamma: GammaSchedule, n_terms: int = 10_000_000) -> tuple[float, float]:
    """(partial sum, tail upper bound) of sum_t gamma_t (1 + log t).

    Finite schedules have an exact sum and zero tail.
    """
    if gamma.horizon is not None:
        g = gamma.values(gamma.horizon)
        t = np.arange(1, gamma.horizon + 1)
        return float(np.sum(g * (1.0 + np.log(t)))), 0.0
    key = ("log", n_terms)
    if key not in _NORM_CACHE:
        _NORM_CACHE[key] = _chunked_shape_sum(n_terms, log_weight=True)
    partial = gamma.normalization * _NORM_CACHE[key]
    return partial, log_decay_tail_bound(n_terms, gamma.normalization, log_weight=True)


def check_dependent_safe(gamma: GammaSchedule, alpha: float, b0: float,
                         n_terms: int = 10_000_000) -> bool:
    partial, tail = dependent_safe_sum(gamma, n_terms)
    return partial + tail <= alpha / b0


def gamma_dependent_safe(alpha: float, b0: float, horizon: Optional[int] = None,
                         slack: float = 1e-6, n_terms: int = 10_000_000) -> GammaSchedule:
    """Log-decay schedule scaled so that sum gamma_t (1 + log t) = alpha/b0 - slack.

    The result may sum past one; the rule clamps its level by current wealth.
    """
    target = alpha / b0 - slack
    if target <= 0:
        raise ValueError("alpha/b0 must exceed the slack")
    unit = GammaSchedule("dependent_safe", horizon, scale=1.0)
    partial, tail = dependent_safe_sum(unit, n_terms)
    c = target / (partial + tail)
    return GammaSchedule("dependent_safe", horizon, scale=c)


# ---------------------------------------------------------------------------
# weight providers
# ---------------------------------------------------------------------------

class ConstantWeights:
    kind = "constant_one"
    unit_mean = True

    def __call__(self, event: HypothesisEvent) -> float:
        return 1.0


class TableWeights:
    """Weights looked up by event index (1-based)."""

    kind = "fixed_table"

    def __init__(self, weights, unit_mean: bool = False):
        self.table = np.asarray(weights, dtype=float)
        if np.any(~np.isfinite(self.table)) or np.any(self.table <= 0):
            raise ValueError("weights must be finite and > 0")
        self.unit_mean = unit_mean

    def __call__(self, event: HypothesisEvent) -> float:
        return float(self.table[event.index - 1])


class SamplerWeights:
    """i.i.d. weights drawn from ``sampler(rng)``, independent of the event."""

    kind = "distribution_sampler"

    def __init__(self, sampler: Callable, rng: np.random.Generator, unit_mean: bool = False):
        self.sampler = sampler
        self.rng = rng
        self.unit_mean = unit_mean

    def __call__(self, event: HypothesisEvent) -> float:
        return float(self.sampler(self.rng))


class NetworkWeights:
    """omega(x; theta) from a weight network, clipped to ``clip``."""

    kind = "network"
    unit_mean = False

    def __init__(self, net, clip: Optional[tuple] = WEIGHT_CLIP):
        self.net = net
        self.clip = clip

    def __call__(self, event: HypothesisEvent) -> float:
        w = self.net.forward(np.asarray(event.context, dtype=float))
        return float(np.clip(w, *self.clip)) if self.clip else float(w)


def _check_weight(w: float) -> None:
    if not math.isfinite(w) or w <= 0:
        raise ValueError(f"weight must be finite and > 0, got {w!r}")


# ---------------------------------------------------------------------------
# proposal functions
# ---------------------------------------------------------------------------

def _since_last(state: EngineState) -> int:
    return state.t + 1 - state.tau


def lord_propose(state: EngineState, gamma: GammaSchedule) -> RuleProposal:
    b0 = state.b0
    if not state.rho1_passed:
        a = gamma(state.t + 1) * state.w0
    else:
        a = gamma(_since_last(state)) * b0
    a = min(a, state.wealth)
    return RuleProposal(a, a, b0)


def _fit_estimate(a: float, state: EngineState) -> float:
    """Shrink ``a`` until (spent + a) / (R v 1) <= alpha holds in floating point.

    For the LORD++ family W(t-1) = alpha (R v 1) - spent in exact arithmetic, so
    the wealth clamp already implies this; the loop only absorbs rounding.
    """
    r = max(state.n_rejections, 1)
    while a > 0.0 and (state.spent + a) / r > state.alpha_level:
        a = max(a - math.ulp(state.spent + a), 0.0)
    return a


def lordpp_propose(state: EngineState, gamma: GammaSchedule) -> RuleProposal:
    b = state.reward_cap
    a = _fit_estimate(min(gamma(_since_last(state)) * b, state.wealth), state)
    return RuleProposal(a, a, b)


def cwlordpp_propose(state: EngineState, gamma: GammaSchedule, weight: float) -> RuleProposal:
    _check_weight(weight)
    b = state.reward_cap
    a = _fit_estimate(min(gamma(_since_last(state)) * b * weight, state.wealth), state)
    return RuleProposal(a, a, b)


def modified_lord_dependent(state: EngineState, gamma: GammaSchedule) -> RuleProposal:
    """alpha_t = phi_t = gamma_t W(tau_t), psi_t = b0 (absolute index t)."""
    a = min(gamma(state.t + 1) * state.wealth_at_tau, state.wealth)
    return RuleProposal(a, a, state.b0)


def default_saffron_grid(alpha: float, depth: int = 20) -> np.ndarray:
    return np.array([0.0] + [alpha * 2.0 ** -k for k in range(depth, -1, -1)])


def saffron_estimator_rule(state: EngineState, candidate_grid: Sequence[float], lambda_t: float,
                           censored_sum: float) -> RuleProposal:
    """Largest grid level keeping the worst-case SAFFRON FDP estimate <= alpha.

    ``censored_sum`` is sum_{s<t} alpha_s 1{P_s > lambda_s}/(1 - lambda_s). The
    worst case assumes P_t > lambda_t and no rejection at t. The level is also
    capped by current wealth; phi_t = alpha_t and psi_t = b_t.
    """
    if len(candidate_grid) == 0:
        raise ValueError("candidate grid is empty")
    if not (lambda_t == 0.0 or 0.0 < lambda_t < 1.0):
        raise ValueError("lambda_t must be 0 or in (0, 1)")
    budget = state.alpha_level * max(state.n_rejections, 1)
    best = 0.0
    for a in candidate_grid:
        if a > state.wealth:
            break
        if censored_sum + a / (1.0 - lambda_t) <= budget:
            best = a
        else:
            break
    return RuleProposal(float(best), float(best), state.reward_cap)


# ---------------------------------------------------------------------------
# rule objects used by the runner
# ---------------------------------------------------------------------------

class Rule:
    """Base rule: unit weights, raw p-values, no private state."""

    name = "rule"
    lambda_t = 0.0

    def __init__(self, gamma: GammaSchedule, weights=None):
        self.gamma = gamma
        self.weights = weights or ConstantWeights()

    def weight(self, event: HypothesisEvent) -> float:
        return 1.0

    def propose(self, state: EngineState, weight: float) -> RuleProposal:
        raise NotImplementedError

    def tested_value(self, p: float, weight: float) -> float:
        return p

    def observe(self, decision, p: float) -> None:
        pass

    def state_dict(self) -> dict:
        return {}

    def load_state_dict(self, d: dict) -> None:
        pass


class Lord(Rule):
    name = "lord"

    def propose(self, state, weight):
        return lord_propose(state, self.gamma)


class LordPlusPlus(Rule):
    name = "lordpp"

    def propose(self, state, weight):
        return lordpp_propose(state, self.gamma)


class CwLordPlusPlus(Rule):
    name = "cwlordpp"

    def weight(self, event):
        w = self.weights(event)
        _check_weight(w)
        return w

    def propose(self, state, weight):
        return cwlordpp_propose(state, self.gamma, weight)


class WeightedRule(Rule):
    """Base LORD/LORD++ applied to the reweighted p-values P_t / omega_t.

    Reweighted values above one are compared as-is and can never be rejected.
    """

    def __init__(self, base: str, gamma: GammaSchedule, weights):
        super().__init__(gamma, weights)
        if base not in ("lord", "lordpp"):
            raise ValueError(f"weighted rule base must be lord or lordpp, got {base!r}")
        self.base = base
        self.name = "w" + base
        self._propose = lord_propose if base == "lord" else lordpp_propose

    def weight(self, event):
        w = self.weights(event)
        _check_weight(w)
        return w

    def propose(self, state, weight):
        return self._propose(state, self.gamma)

    def tested_value(self, p, weight):
        return p / weight


class ModifiedLordDependent(Rule):
    name = "mlord_dep"

    def __init__(self, gamma: GammaSchedule, weights=None, alpha: Optional[float] = None,
                 b0: Optional[float] = None, check: bool = True):
        super().__init__(gamma, weights)
        if check and alpha is not None and b0 is not None:
            if not check_dependent_safe(gamma, alpha, b0):
                raise ValueError("gamma schedule fails sum gamma_t (1 + log t) <= alpha / b0")

    def propose(self, state, weight):
        return modified_lord_dependent(state, self.gamma)


class SaffronEstimator(Rule):
    name = "saffron_est"

    def __init__(self, alpha: float, grid: Optional[Sequence[float]] = None, lam: float = 0.5,
                 gamma: Optional[GammaSchedule] = None):
        super().__init__(gamma)
        if not (lam == 0.0 or 0.0 < lam < 1.0):
            raise ValueError("lambda must be 0 or in (0, 1)")
        self.grid = np.sort(np.asarray(default_saffron_grid(alpha) if grid is None else grid,
                                       dtype=float))
        if len(self.grid) == 0:
            raise ValueError("candidate grid is empty")
        self.lambda_t = lam
        self.censored_sum = 0.0

    def propose(self, state, weight):
        return saffron_estimator_rule(state, self.grid, self.lambda_t, self.censored_sum)

    def observe(self, decision, p):
        if p > self.lambda_t:
            self.censored_sum += decision.alpha / (1.0 - self.lambda_t)

    def state_dict(self):
        return {"censored_sum": self.censored_sum}

    def load_state_dict(self, d):
        self.censored_sum = float(d["censored_sum"])


RULE_NAMES = ("lord", "lordpp", "cwlordpp", "wlord", "wlordpp", "mlord_dep", "saffron_est")


def make_rule(name: str, alpha: float, w0: Optional[float] = None, horizon: Optional[int] = None,
              weights=None, lam: float = 0.5, grid=None, gamma: Optional[GammaSchedule] = None) -> Rule:
    """Build a rule by its short name."""
    w0 = alpha / 2 if w0 is None else w0
    if name == "mlord_dep":
        g = gamma or gamma_dependent_safe(alpha, alpha - w0, horizon)
        return ModifiedLordDependent(g, weights, alpha, alpha - w0, check=gamma is not None)
    g = gamma or GammaSchedule.log_decay(horizon)
    if name == "lord":
        return Lord(g)
    if name == "lordpp":
        return LordPlusPlus(g)
    if name == "cwlordpp":
        return CwLordPlusPlus(g, weights)
    if name in ("wlord", "wlordpp"):
        if weights is None:
            raise ValueError(f"{name} needs weights")
        return WeightedRule(name[1:], g, weights)
    if name == "saffron_est":
        return SaffronEstimator(alpha, grid, lam, g)
    raise ValueError(f"unknown rule {name!r}; choose from {', '.join(RULE_NAMES)}")
