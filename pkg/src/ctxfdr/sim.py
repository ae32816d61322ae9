"""Synthetic streams and the replicate experiment harness."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .core import HypothesisEvent, fdp, make_events, tdp
from .engine import EngineConfig, run_stream
from .rules import GammaSchedule, TableWeights, make_rule
from .weightnet import TrainConfig, WeightNet, train_online


def two_sided_p(z):
    """P = 2 Phi(-|z|)."""
    return 2.0 * ndtr(-np.abs(z))


def replicate_seed(seed: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(replicate)])


# ---------------------------------------------------------------------------
# normal means with linear contextual signal
# ---------------------------------------------------------------------------

@dataclass
class NormalMeansConfig:
    T: int = 10_000
    pi1: float = 0.5
    d: int = 10
    sigma2: Optional[float] = None  # default 2 log T
    beta: Optional[np.ndarray] = None  # default Uniform(-2, 2)^d drawn from beta_seed
    beta_seed: int = 12345
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.pi1 < 1.0):
            raise ValueError("pi1 must be in (0, 1)")
        if self.sigma2 is None:
            self.sigma2 = 2.0 * math.log(self.T)
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be > 0")
        if self.beta is None:
            self.beta = np.random.default_rng(self.beta_seed).uniform(-2.0, 2.0, size=self.d)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.shape != (self.d,):
            raise ValueError(f"beta must have length d={self.d}")


def normal_means_arrays(config: NormalMeansConfig, rng: np.random.Generator):
    T, d = config.T, config.d
    H = (rng.random(T) < config.pi1).astype(int)
    X = rng.normal(0.0, math.sqrt(config.sigma2), size=(T, d))
    mu = np.where(H == 1, X @ config.beta, 0.0)
    Z = mu + rng.standard_normal(T)
    P = two_sided_p(Z)
    # guard the open interval; 2 Phi(-|z|) underflows to 0 for |z| > ~38
    P = np.clip(P, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return P, X, H


def generate_normal_means(config: NormalMeansConfig, rng: Optional[np.random.Generator] = None):
    """Labelled stream with H ~ Bern(pi1), X ~ N(0, sigma2 I), Z = H <beta, X> + N(0, 1)."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    P, X, H = normal_means_arrays(config, rng)
    return make_events(P, X, H)


# ---------------------------------------------------------------------------
# weighted mixture
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightDist:
    """Weight distribution on (0, inf): point mass, uniform or two-point."""

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind == "point":
            (v,) = self.params
            ok = v > 0
        elif self.kind == "uniform":
            lo, hi = self.params
            ok = 0 < lo < hi
        elif self.kind == "two_point":
            a, b, pa = self.params
            ok = a > 0 and b > 0 and 0 <= pa <= 1
        else:
            raise ValueError(f"unknown weight distribution {self.kind!r}")
        if not ok:
            raise ValueError(f"invalid parameters {self.params} for {self.kind}")

    @classmethod
    def point(cls, v: float) -> "WeightDist":
        return cls("point", (float(v),))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "WeightDist":
        return cls("uniform", (float(lo), float(hi)))

    @classmethod
    def two_point(cls, a: float, b: float, prob_a: float) -> "WeightDist":
        return cls("two_point", (float(a), float(b), float(prob_a)))

    @property
    def mean(self) -> float:
        if self.kind == "point":
            return self.params[0]
        if self.kind == "uniform":
            return 0.5 * (self.params[0] + self.params[1])
        a, b, pa = self.params
        return pa * a + (1 - pa) * b

    @property
    def upper(self) -> float:
        return max(self.params[:2]) if self.kind != "point" else self.params[0]

    def atoms(self):
        """(values, probabilities) for discrete laws, None for continuous ones."""
        if self.kind == "point":
            return np.array(self.params), np.array([1.0])
        if self.kind == "two_point":
            a, b, pa = self.params
            return np.array([a, b]), np.array([pa, 1 - pa])
        return None

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "point":
            return np.full(n, self.params[0])
        if self.kind == "uniform":
            return rng.uniform(self.params[0], self.params[1], size=n)
        a, b, pa = self.params
        return np.where(rng.random(n) < pa, a, b)


@dataclass
class MixtureWeightConfig:
    T: int = 10_000
    pi1: float = 0.5
    mu: float = 3.0  # alternative: two-sided p-value of N(mu, 1)
    q0: WeightDist = field(default_factory=lambda: WeightDist.point(1.0))
    q1: WeightDist = field(default_factory=lambda: WeightDist.point(1.0))
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.pi1 < 1.0):
            raise ValueError("pi1 must be in (0, 1)")

    @property
    def u0(self) -> float:
        return self.q0.mean

    @property
    def u1(self) -> float:
        return self.q1.mean


def generate_weighted_mixture(config: MixtureWeightConfig, rng: Optional[np.random.Generator] = None):
    """Arrays (p, omega, H): p and omega conditionally independent given H."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    T = config.T
    H = (rng.random(T) < config.pi1).astype(int)
    U = rng.random(T)
    Z = config.mu + rng.standard_normal(T)
    p = np.where(H == 1, two_sided_p(Z), U)
    p = np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    w0 = config.q0.sample(rng, T)
    w1 = config.q1.sample(rng, T)
    omega = np.where(H == 1, w1, w0)
    return p, omega, H


# ---------------------------------------------------------------------------
# experiment harness
# ---------------------------------------------------------------------------

@dataclass
class RuleSpec:
    name: str
    alpha: float = 0.1
    w0: Optional[float] = None
    horizon: Optional[int] = None
    lam: float = 0.5
    train: Optional[TrainConfig] = None
    gamma: Optional[GammaSchedule] = None

    @property
    def label(self) -> str:
        return self.name + ("+net" if self.train is not None else "")


@dataclass
class ReplicateResult:
    replicate: int
    R: int
    V: int
    S: int
    N1: int
    max_fdp: float
    final_fdp: float
    tdp: float
    fdp_hat: float


CSV_COLUMNS = ("row", "replicate", "R", "V", "S", "N1", "max_fdp", "final_fdp", "tdp",
               "fdp_hat", "mfdr")


@dataclass
class ExperimentReport:
    rule: str
    generator: str
    replicates: list
    note: str = ("mean of max FDP over replicates estimates E[sup FDP], an upper bound on "
                 "the maximum FDR")

    def _col(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.replicates], dtype=float)

    def mean(self, name: str) -> float:
        return float(self._col(name).mean())

    def se(self, name: str) -> float:
        x = self._col(name)
        return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0

    @property
    def mfdr(self) -> float:
        return self.mean("V") / (self.mean("R") + 1.0)

    def summary(self) -> dict:
        out = {"rule": self.rule, "generator": self.generator, "repeats": len(self.replicates)}
        for name in ("max_fdp", "final_fdp", "tdp", "fdp_hat", "R", "V"):
            out[f"mean_{name}"] = self.mean(name)
            out[f"se_{name}"] = self.se(name)
        out["mfdr"] = self.mfdr
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# rule={self.rule} generator={self.generator}\n")
        buf.write(f"# note: {self.note}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.replicates:
            w.writerow(["replicate", r.replicate, r.R, r.V, r.S, r.N1, f"{r.max_fdp:.6f}",
                        f"{r.final_fdp:.6f}", f"{r.tdp:.6f}", f"{r.fdp_hat:.6f}", ""])
        w.writerow(["mean", "", f"{self.mean('R'):.6f}", f"{self.mean('V'):.6f}",
                    f"{self.mean('S'):.6f}", f"{self.mean('N1'):.6f}", f"{self.mean('max_fdp'):.6f}",
                    f"{self.mean('final_fdp'):.6f}", f"{self.mean('tdp'):.6f}",
                    f"{self.mean('fdp_hat'):.6f}", f"{self.mfdr:.6f}"])
        w.writerow(["se", "", f"{self.se('R'):.6f}", f"{self.se('V'):.6f}", f"{self.se('S'):.6f}",
                    f"{self.se('N1'):.6f}", f"{self.se('max_fdp'):.6f}", f"{self.se('final_fdp'):.6f}",
                    f"{self.se('tdp'):.6f}", f"{self.se('fdp_hat'):.6f}", ""])
        return buf.getvalue()


def generate_replicate(generator, replicate: int):
    """Events (and mixture weights, if any) for one replicate of ``generator``."""
    rng = np.random.default_rng(replicate_seed(generator.seed, replicate))
    if isinstance(generator, NormalMeansConfig):
        return generate_normal_means(generator, rng), None
    if isinstance(generator, MixtureWeightConfig):
        p, omega, H = generate_weighted_mixture(generator, rng)
        return make_events(p, None, H), omega
    raise TypeError(f"unsupported generator {type(generator).__name__}")


def run_replicate(spec: RuleSpec, events, weights=None, net_seed: int = 0):
    """Run one rule on one stream; returns (decisions, metrics)."""
    horizon = spec.horizon if spec.horizon is not None else len(events)
    gamma = spec.gamma or GammaSchedule.log_decay(horizon)
    engine = EngineConfig(alpha=spec.alpha, w0=spec.w0)
    if spec.train is not None:
        d = events[0].dim if events else 0
        net = WeightNet.initialized([d] + [spec.train.width] * spec.train.depth + [1],
                                    seed=net_seed)
        res = train_online(net, events, gamma, spec.train, engine)
        return res.decisions, res.metrics
    provider = TableWeights(weights) if weights is not None else None
    rule = make_rule(spec.name, spec.alpha, spec.w0, horizon, provider, spec.lam,
                     gamma=spec.gamma if spec.gamma is not None else
                     (None if spec.name == "mlord_dep" else gamma))
    return run_stream(rule, events, engine)


def summarize(replicate: int, metrics) -> ReplicateResult:
    from .core import fdp_hat_lord
    return ReplicateResult(replicate, metrics.R, metrics.V, metrics.S, metrics.N1,
                           metrics.max_fdp, fdp(metrics), tdp(metrics), fdp_hat_lord(metrics))


def run_experiment(spec: RuleSpec, generator, repeats: int) -> ExperimentReport:
    """Replicate ``spec`` on fresh streams; replicate r uses seed (generator.seed, r)."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    results = []
    for r in range(repeats):
        events, weights = generate_replicate(generator, r)
        _, metrics = run_replicate(spec, events, weights, net_seed=(spec.train.init_seed + r)
                                   if spec.train else 0)
        results.append(summarize(r, metrics))
    return ExperimentReport(spec.label, type(generator).__name__, results)


def sign_test_pvalue(diffs) -> float:
    """One-sided exact sign test of median(diff) > 0, ties dropped."""
    from scipy.stats import binomtest
    diffs = np.asarray(diffs, dtype=float)
    pos = int(np.sum(diffs > 0))
    n = int(np.sum(diffs != 0))
    if n == 0:
        return 1.0
    return float(binomtest(pos, n, 0.5, alternative="greater").pvalue)
