"""Stream records and trajectory metrics shared by every rule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class TruthUnavailableError(ValueError):
    """A metric that needs ground-truth labels was asked of an unlabeled stream."""


@dataclass(frozen=True)
class HypothesisEvent:
    """One element of the stream: time index, p-value, context and optional label.

    ``truth`` is ``None`` for unlabeled streams, ``0`` for a null and ``1`` for an
    alternative.
    """

    index: int
    p: float
    context: tuple = ()
    truth: Optional[int] = None

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"event index must be >= 1, got {self.index}")
        if not (0.0 < self.p < 1.0):
            raise ValueError(f"p-value must lie in (0, 1), got {self.p!r} at t={self.index}")
        if self.truth not in (None, 0, 1):
            raise ValueError(f"truth must be 0, 1 or None, got {self.truth!r}")

    @property
    def dim(self) -> int:
        return len(self.context)


def make_events(p, contexts=None, truth=None) -> list[HypothesisEvent]:
    """Build a validated stream from arrays (contexts: shape (T, d))."""
    p = np.asarray(p, dtype=float)
    n = len(p)
    if contexts is None:
        ctx = [()] * n
    else:
        contexts = np.asarray(contexts, dtype=float).reshape(n, -1)
        ctx = [tuple(float(v) for v in row) for row in contexts]
    labels = [None] * n if truth is None else [int(h) for h in truth]
    events = [HypothesisEvent(i + 1, float(p[i]), ctx[i], labels[i]) for i in range(n)]
    check_stream(events)
    return events


def check_stream(events: Sequence[HypothesisEvent]) -> None:
    """Reject streams whose context dimension or labelling is inconsistent."""
    if not events:
        return
    d = events[0].dim
    labelled = events[0].truth is not None
    last = 0
    for ev in events:
        if ev.dim != d:
            raise ValueError(f"context dimension changes at t={ev.index}: {ev.dim} != {d}")
        if (ev.truth is not None) != labelled:
            raise ValueError(f"mixed labelled/unlabelled stream at t={ev.index}")
        if ev.index <= last:
            raise ValueError(f"indices must be strictly increasing (t={ev.index} after {last})")
        last = ev.index


@dataclass(frozen=True, slots=True)
class Decision:
    index: int
    alpha: float
    phi: float
    psi: float
    weight: float
    rejected: bool
    wealth_after: float


@dataclass
class MetricsAccumulator:
    """Running counts over a decision stream.

    With ``keep_trajectory=False`` only the running maximum of FDP is stored.
    """

    labelled: Optional[bool] = None
    keep_trajectory: bool = True
    R: int = 0
    V: int = 0
    S: int = 0
    N1: int = 0
    steps: int = 0
    alpha_sum: float = 0.0
    saffron_sum: float = 0.0
    max_fdp: float = 0.0
    fdp_trajectory: list = field(default_factory=list)

    def update(self, decision: Decision, p: float, truth: Optional[int] = None,
               lam: float = 0.0) -> None:
        if not (lam == 0.0 or 0.0 < lam < 1.0):
            raise ValueError(f"lambda_t must be 0 or in (0, 1), got {lam}")
        has_truth = truth is not None
        if self.labelled is None:
            self.labelled = has_truth
        elif self.labelled != has_truth:
            raise ValueError("mixed labelled/unlabelled stream")
        self.steps += 1
        self.alpha_sum += decision.alpha
        if p > lam:
            self.saffron_sum += decision.alpha / (1.0 - lam)
        self.R += decision.rejected
        if has_truth:
            if truth == 1:
                self.N1 += 1
                self.S += decision.rejected
            else:
                self.V += decision.rejected
            cur = self.V / max(self.R, 1)
            if cur > self.max_fdp:
                self.max_fdp = cur
            if self.keep_trajectory:
                self.fdp_trajectory.append(cur)


def _require_labels(acc: MetricsAccumulator) -> None:
    if not acc.labelled:
        raise TruthUnavailableError("stream carried no truth labels")


def fdp(acc: MetricsAccumulator) -> float:
    if acc.labelled is None and acc.steps == 0:
        return 0.0
    _require_labels(acc)
    return acc.V / max(acc.R, 1)


def tdp(acc: MetricsAccumulator) -> float:
    if acc.labelled is None and acc.steps == 0:
        return 0.0
    _require_labels(acc)
    return acc.S / max(acc.N1, 1)


def mfdr_estimate(replicates: Sequence[MetricsAccumulator], eta: float = 1.0) -> float:
    """mean(V) / (mean(R) + eta) over independent replicates."""
    if not replicates:
        raise ValueError("need at least one replicate")
    if eta < 0:
        raise ValueError("eta must be non-negative")
    for acc in replicates:
        if acc.steps:
            _require_labels(acc)
    mean_v = sum(a.V for a in replicates) / len(replicates)
    mean_r = sum(a.R for a in replicates) / len(replicates)
    denom = mean_r + eta
    return 0.0 if mean_v == 0 else mean_v / denom


def fdp_hat_lord(acc: MetricsAccumulator) -> float:
    return acc.alpha_sum / max(acc.R, 1)


def fdp_hat_saffron(acc: MetricsAccumulator) -> float:
    return acc.saffron_sum / max(acc.R, 1)


def ratio_standard_error(v, r, eta: float = 1.0) -> float:
    """Delta-method standard error of mean(v) / (mean(r) + eta)."""
    v = np.asarray(v, dtype=float)
    r = np.asarray(r, dtype=float)
    n = len(v)
    if n < 2:
        return math.nan
    ratio = v.mean() / (r.mean() + eta)
    resid = v - ratio * r
    return float(resid.std(ddof=1) / math.sqrt(n) / (r.mean() + eta))
