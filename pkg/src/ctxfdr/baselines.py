"""Offline BH and Storey-BH step-up procedures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class OfflineBatch:
    p: np.ndarray
    alpha: float = 0.1
    lam: float = 0.5

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.ndim != 1 or self.p.size == 0:
            raise ValueError("need a non-empty vector of p-values")
        if np.any(self.p <= 0) or np.any(self.p >= 1):
            raise ValueError("p-values must lie in (0, 1)")
        if not (0.0 <= self.lam < 1.0):
            raise ValueError("lambda must be in [0, 1)")


def storey_pi0(p, lam: float) -> float:
    """(1 + #{p > lam}) / (n (1 - lam))."""
    p = np.asarray(p, dtype=float)
    return (1.0 + np.sum(p > lam)) / (p.size * (1.0 - lam))


def _step_up(p: np.ndarray, alpha: float, pi0: float) -> np.ndarray:
    """Reject p <= s_hat, s_hat the largest observed p with n s pi0 / |R(s)| <= alpha."""
    n = p.size
    srt = np.sort(p)
    count = np.searchsorted(srt, srt, side="right")
    ok = n * srt * pi0 / count <= alpha
    if not ok.any():
        return np.zeros(n, dtype=bool)
    s_hat = srt[np.nonzero(ok)[0][-1]]
    return p <= s_hat


def bh(batch: OfflineBatch) -> np.ndarray:
    """Boolean rejection mask of Benjamini-Hochberg at level ``batch.alpha``."""
    return _step_up(batch.p, batch.alpha, 1.0)


def storey_bh(batch: OfflineBatch, cap: bool = False) -> np.ndarray:
    pi0 = storey_pi0(batch.p, batch.lam)
    if cap:
        pi0 = min(pi0, 1.0)
    return _step_up(batch.p, batch.alpha, pi0)
