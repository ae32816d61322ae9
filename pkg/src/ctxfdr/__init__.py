"""Contextual online false discovery rate control."""

from .core import (Decision, HypothesisEvent, MetricsAccumulator, TruthUnavailableError, fdp,
                   fdp_hat_lord, fdp_hat_saffron, make_events, mfdr_estimate, tdp)
from .engine import ConstraintViolation, EngineConfig, EngineState, RuleProposal, run_stream, step
from .rules import GammaSchedule, gamma_log_decay, make_rule

__version__ = "0.1.0"
