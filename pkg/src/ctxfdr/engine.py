"""Generalized alpha-investing state machine.

The engine owns the wealth ledger and audits every proposal a rule makes
against the alpha-investing constraints before a decision is taken:

* spend: non-negativity, ``phi <= W(t-1)``; zero wealth forces ``alpha = phi = 0``
* reward: bound ``psi <= min(phi + b_t, phi/alpha + b_t - 1)``
* the cap ``b_t = alpha_level - w0 * 1{no rejection yet}``

A violation raises :class:`ConstraintViolation`; nothing is clipped silently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Decision, HypothesisEvent, MetricsAccumulator, check_stream

DEFAULT_HISTORY_CAP = 10_000_000


class ConstraintViolation(RuntimeError):
    """A rule proposed (alpha, phi, psi) outside the alpha-investing constraints."""

    def __init__(self, condition: str, message: str, index: Optional[int] = None):
        self.condition = condition
        self.index = index
        where = f" at t={index}" if index is not None else ""
        super().__init__(f"condition {condition} violated{where}: {message}")


@dataclass(frozen=True, slots=True)
class RuleProposal:
    alpha: float
    phi: float
    psi: float


@dataclass
class EngineState:
    alpha_level: float
    w0: float
    t: int = 0
    wealth: float = math.nan
    tau: int = 0
    rho1_passed: bool = False
    n_rejections: int = 0
    wealth_at_tau: float = math.nan
    spent: float = 0.0  # running sum of alpha_s, accumulated left to right
    history: bytearray = field(default_factory=bytearray)
    history_cap: int = DEFAULT_HISTORY_CAP

    def __post_init__(self):
        if not (0.0 < self.alpha_level < 1.0):
            raise ValueError(f"alpha level must be in (0, 1), got {self.alpha_level}")
        if not (0.0 < self.w0 < self.alpha_level):
            raise ValueError(f"need 0 < w0 < alpha, got w0={self.w0}, alpha={self.alpha_level}")
        if math.isnan(self.wealth):
            self.wealth = self.w0
        if math.isnan(self.wealth_at_tau):
            self.wealth_at_tau = self.w0

    @property
    def reward_cap(self) -> float:
        """b_t for the step about to be taken (t + 1)."""
        if self.rho1_passed:
            return self.alpha_level
        return self.alpha_level - self.w0

    @property
    def b0(self) -> float:
        return self.alpha_level - self.w0

    @property
    def next_index(self) -> int:
        return self.t + 1

    def rejections(self) -> np.ndarray:
        return np.frombuffer(bytes(self.history), dtype=np.uint8).astype(bool)


def audit(state: EngineState, proposal: RuleProposal, index: Optional[int] = None) -> None:
    a, phi, psi = proposal.alpha, proposal.phi, proposal.psi
    for name, v in (("alpha", a), ("phi", phi), ("psi", psi)):
        if not math.isfinite(v) or v < 0:
            raise ConstraintViolation("spend", f"{name}={v!r} must be finite and >= 0", index)
    if phi > state.wealth:
        raise ConstraintViolation("spend", f"phi={phi!r} exceeds wealth W(t-1)={state.wealth!r}", index)
    if state.wealth == 0 and (a != 0 or phi != 0):
        raise ConstraintViolation("spend", "wealth is exhausted; alpha and phi must be 0", index)
    b = state.reward_cap
    if a > 0:
        cap = min(phi + b, (phi / a - 1.0) + b)
    else:
        cap = phi + b
    if psi > cap:
        raise ConstraintViolation("reward", f"psi={psi!r} exceeds cap {cap!r} (b_t={b!r})", index)


def step(state: EngineState, proposal: RuleProposal, p: float, weight: float = 1.0,
         index: Optional[int] = None) -> Decision:
    """Audit ``proposal``, test ``p`` at its level and advance ``state`` in place."""
    t = state.t + 1
    audit(state, proposal, index if index is not None else t)
    rejected = p <= proposal.alpha
    wealth = state.wealth - proposal.phi
    if rejected:
        wealth += proposal.psi
    state.wealth = wealth
    state.t = t
    state.spent += proposal.alpha
    if len(state.history) < state.history_cap:
        state.history.append(1 if rejected else 0)
    if rejected:
        state.tau = t
        state.n_rejections += 1
        state.rho1_passed = True
        state.wealth_at_tau = wealth
    return Decision(index if index is not None else t, proposal.alpha, proposal.phi,
                    proposal.psi, weight, rejected, wealth)


@dataclass
class EngineConfig:
    alpha: float = 0.1
    w0: Optional[float] = None  # defaults to alpha / 2
    history_cap: int = DEFAULT_HISTORY_CAP
    keep_trajectory: bool = True

    def new_state(self) -> EngineState:
        w0 = self.alpha / 2 if self.w0 is None else self.w0
        return EngineState(alpha_level=self.alpha, w0=w0, history_cap=self.history_cap)


class StreamRunner:
    """Feeds events one at a time through a rule and the engine.

    The rule only ever sees the engine state (past decisions) and the current
    context when it proposes; the p-value is revealed to the engine afterwards.
    """

    def __init__(self, rule, config: Optional[EngineConfig] = None,
                 state: Optional[EngineState] = None,
                 metrics: Optional[MetricsAccumulator] = None):
        self.rule = rule
        self.config = config or EngineConfig()
        self.state = state if state is not None else self.config.new_state()
        self.metrics = metrics if metrics is not None else MetricsAccumulator(
            keep_trajectory=self.config.keep_trajectory)
        self.decisions: list[Decision] = []

    def feed(self, event: HypothesisEvent) -> Decision:
        rule = self.rule
        weight = rule.weight(event)
        proposal = rule.propose(self.state, weight)
        p_test = rule.tested_value(event.p, weight)
        try:
            decision = step(self.state, proposal, p_test, weight, event.index)
        except ConstraintViolation as exc:
            exc.index = event.index
            raise
        rule.observe(decision, event.p)
        self.metrics.update(decision, event.p, event.truth, rule.lambda_t)
        self.decisions.append(decision)
        return decision

    def feed_all(self, events: Sequence[HypothesisEvent]) -> list[Decision]:
        return [self.feed(ev) for ev in events]


def run_stream(rule, events: Sequence[HypothesisEvent], config: Optional[EngineConfig] = None):
    """Run ``rule`` over ``events`` in order; returns (decisions, metrics)."""
    check_stream(events)
    runner = StreamRunner(rule, config)
    runner.feed_all(events)
    return runner.decisions, runner.metrics
