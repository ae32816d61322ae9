"""Analytic power machinery for (weighted) LORD under the mixture model.

G(a) is the marginal CDF of p-values, D(a) that of reweighted p-values
P/omega.  The renewal series turns either into a long-run power figure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize
from scipy.special import ndtr, ndtri

from .rules import GammaSchedule


class NoSignChangeError(ValueError):
    """f(a) - 1 does not change sign on the search interval."""


class QuadratureError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# normal means alternatives
# ---------------------------------------------------------------------------

def normal_means_cdf(a, mu: float):
    """F(a) = Pr[2 Phi(-|Z|) <= a] for Z ~ N(mu, 1)."""
    a = np.clip(np.asarray(a, dtype=float), 0.0, 1.0)
    z = ndtri(1.0 - a / 2.0)
    return ndtr(mu - z) + ndtr(-mu - z)


def normal_means_density(a, mu: float):
    """f(a) = (phi(z - mu) + phi(z + mu)) / (2 phi(z)) with z = Phi^{-1}(1 - a/2)."""
    a = np.asarray(a, dtype=float)
    z = ndtri(1.0 - a / 2.0)
    # ratio of normal densities in log space: exp(mu z - mu^2/2) and exp(-mu z - mu^2/2)
    return 0.5 * (np.exp(mu * z - 0.5 * mu * mu) + np.exp(-mu * z - 0.5 * mu * mu))


def one_sided_normal_cdf(a, mu: float):
    """F(a) = Pr[Phi(-Z) <= a] for Z ~ N(mu, 1)."""
    a = np.clip(np.asarray(a, dtype=float), 0.0, 1.0)
    return ndtr(mu - ndtri(1.0 - a))


def one_sided_normal_density(a, mu: float):
    z = ndtri(1.0 - np.asarray(a, dtype=float))
    return np.exp(mu * z - 0.5 * mu * mu)


# ---------------------------------------------------------------------------
# marginals
# ---------------------------------------------------------------------------

def _check_unit(a):
    arr = np.asarray(a, dtype=float)
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError("a must lie in [0, 1]")
    return arr


def marginal_G(a, pi1: float, F: Callable):
    """G(a) = (1 - pi1) a + pi1 F(a)."""
    arr = _check_unit(a)
    out = (1.0 - pi1) * arr + pi1 * np.asarray(F(arr), dtype=float)
    return float(out) if np.ndim(a) == 0 else out


def weighted_alt_mass(a, F: Callable, q1, tol: float = 1e-8):
    """int F(a w) dQ1(w), exact for discrete Q1, adaptive quadrature otherwise.

    F is evaluated at min(a w, 1).
    """
    arr = np.atleast_1d(np.asarray(a, dtype=float))
    atoms = q1.atoms()
    if atoms is not None:
        vals, probs = atoms
        x = np.minimum(np.outer(arr, vals), 1.0)
        out = np.asarray(F(x), dtype=float) @ probs
    else:
        lo, hi = q1.params
        dens = 1.0 / (hi - lo)
        out = np.empty(len(arr))
        for i, ai in enumerate(arr):
            if ai == 0:
                out[i] = 0.0
                continue
            val, err = integrate.quad(lambda w: float(F(min(ai * w, 1.0))) * dens, lo, hi,
                                      epsabs=tol, epsrel=tol, limit=200)
            if not math.isfinite(val) or err > 10 * tol:
                raise QuadratureError(f"quadrature did not converge at a={ai} (err={err})")
            out[i] = val
    return float(out[0]) if np.ndim(a) == 0 else out


def marginal_D(a, pi1: float, u0: float, F: Callable, q1, tol: float = 1e-8):
    """D(a) = Pr[P / omega <= a] = (1 - pi1) u0 a + pi1 int F(a w) dQ1(w).

    The null term is exact while a * sup(Q0) <= 1.
    """
    arr = _check_unit(a)
    out = (1.0 - pi1) * u0 * arr + pi1 * np.asarray(weighted_alt_mass(arr, F, q1, tol))
    return float(out) if np.ndim(a) == 0 else out


# ---------------------------------------------------------------------------
# renewal series
# ---------------------------------------------------------------------------

@dataclass
class PowerBound:
    series: float           # sum_{m>=1} prod_{j<=m} (1 - D(b0 gamma_j))
    as_stated: float        # 1 / series
    corrected: float        # 1 / (1 + series) = 1 / E[inter-discovery time]
    terms: int
    tail: float
    converged: bool

    @property
    def as_stated_clamped(self) -> float:
        return min(max(self.as_stated, 0.0), 1.0)

    @property
    def corrected_clamped(self) -> float:
        return min(max(self.corrected, 0.0), 1.0)


def _levels(b0: float, gamma, M: int) -> np.ndarray:
    if isinstance(gamma, GammaSchedule):
        return b0 * gamma.values(M)
    return b0 * np.asarray(gamma, dtype=float)[:M]


def power_lower_bound(D: Callable, b0: float, gamma, max_terms: int = 1_000_000,
                      stop: float = 1e-12) -> PowerBound:
    """Evaluate the renewal series for the long-run power of (weighted) LORD.

    ``D`` must accept an array of levels.  Summation stops once the running
    product drops below ``stop``; the remainder is estimated geometrically
    from the last factor.
    """
    chunk = 4096
    series = 0.0
    log_prod = 0.0
    n = 0
    levels_all = _levels(b0, gamma, max_terms)
    last_d = 1.0
    converged = False
    while n < max_terms:
        lv = levels_all[n:n + chunk]
        d = np.clip(np.asarray(D(lv), dtype=float), 0.0, 1.0)
        with np.errstate(divide="ignore"):
            logs = log_prod + np.cumsum(np.log1p(-d))
        prods = np.exp(logs)
        below = np.nonzero(prods < stop)[0]
        if below.size:
            k = below[0] + 1
            series += float(prods[:k].sum())
            n += k
            last_d = float(d[k - 1])
            log_prod = float(logs[k - 1])
            converged = True
            break
        series += float(prods.sum())
        n += len(lv)
        log_prod = float(logs[-1])
        last_d = float(d[-1])
    last = math.exp(log_prod)
    if last == 0.0:
        tail = 0.0
    elif last_d > 0.0:
        tail = last * (1.0 - last_d) / last_d
    else:
        tail = math.inf
    total = series + tail
    as_stated = math.inf if total == 0 else 1.0 / total
    corrected = 1.0 / (1.0 + total)
    return PowerBound(total, as_stated, corrected, n, tail, converged and math.isfinite(tail))


def renewal_tdp(D: Callable, A: Callable, pi1: float, b0: float, gamma,
                max_terms: int = 1_000_000) -> float:
    """Long-run TDP of LORD from the renewal-reward theorem.

    ``A(a) = Pr[H = 1, P/omega <= a]``.  The cycle reward is the probability that
    the discovery closing a cycle is a true one, so
    TDP = E[reward] / (pi1 E[cycle length]).
    """
    levels = _levels(b0, gamma, max_terms)
    d = np.clip(np.asarray(D(levels), dtype=float), 0.0, 1.0)
    alt = np.asarray(A(levels), dtype=float)
    surv = np.concatenate([[1.0], np.cumprod(1.0 - d)[:-1]])
    cycle = surv.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(d > 0, alt / d, 0.0)
    reward = float(np.sum(surv * d * share))
    return reward / (pi1 * cycle)


# ---------------------------------------------------------------------------
# a0 and the separation conditions
# ---------------------------------------------------------------------------

def compute_a0(f: Callable, interval=(1e-12, 1.0 - 1e-12), xtol: float = 1e-14) -> float:
    """Root of f(a) = 1 by bisection: the level below which the density exceeds one."""
    lo, hi = interval
    g = lambda a: float(f(a)) - 1.0
    glo, ghi = g(lo), g(hi)
    if not (math.isfinite(glo) and math.isfinite(ghi)) or glo * ghi >= 0:
        raise NoSignChangeError(f"f - 1 has no sign change on [{lo}, {hi}] "
                                f"(f(lo)={glo + 1:.6g}, f(hi)={ghi + 1:.6g})")
    return float(optimize.bisect(g, lo, hi, xtol=xtol, maxiter=500))


@dataclass
class SeparationReport:
    informative: bool
    level_condition: bool
    support_condition: bool
    a0: float
    bound: float  # a0 / (b0 gamma_1)

    @property
    def holds(self) -> bool:
        return self.informative and self.level_condition and self.support_condition


def validate_informative(u0: float, u1: float, pi1: float, tol: float = 1e-9) -> bool:
    """u0 < 1, u1 > 1 and (1 - pi1) u0 + pi1 u1 = 1."""
    return u0 < 1.0 and u1 > 1.0 and abs((1.0 - pi1) * u0 + pi1 * u1 - 1.0) <= tol


def check_separation(f: Callable, pi1: float, u0: float, u1: float, q1_upper: float,
                     b0: float, gamma1: float, a0: Optional[float] = None) -> SeparationReport:
    """Verdicts for the power-separation conditions of weighted vs plain LORD.

    ``q1_upper`` is the supremum of Q1's support; the support condition asks
    omega < a0 / (b0 gamma_1) almost surely under the alternative.
    """
    a0 = compute_a0(f) if a0 is None else a0
    bound = a0 / (b0 * gamma1)
    return SeparationReport(validate_informative(u0, u1, pi1), b0 * gamma1 < a0,
                            q1_upper < bound, a0, bound)
