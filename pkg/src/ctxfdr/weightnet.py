"""Contextual weight network and the online discovery-rate trainer.

The weight function is an MLP with ReLU hidden layers and an exponential
output unit, so omega(x; theta) > 0.  Training processes the stream in
batches: parameters are frozen within a batch, decisions go through the
engine, and after the batch the sigmoid-relaxed empirical discovery rate
is ascended by one gradient step.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .core import Decision, HypothesisEvent, MetricsAccumulator, check_stream
from .engine import EngineConfig, EngineState, StreamRunner
from .rules import WEIGHT_CLIP, CwLordPlusPlus, GammaSchedule

SNAPSHOT_FORMAT = "ctxfdr-weightnet"
SNAPSHOT_VERSION = 1
MAX_LOG_WEIGHT = 700.0


class WeightNet:
    """MLP omega(x) = exp(f(x)); weights[k] has shape (n_out, n_in)."""

    def __init__(self, layer_sizes: Sequence[int], weights=None, biases=None):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or sizes[-1] != 1 or any(s < 0 for s in sizes) or min(sizes[1:]) < 1:
            raise ValueError(f"bad layer sizes {sizes}; need [d, h1, ..., 1]")
        self.layer_sizes = sizes
        shapes = list(zip(sizes[1:], sizes[:-1]))
        if weights is None:
            weights = [np.zeros(s) for s in shapes]
            biases = [np.zeros(s[0]) for s in shapes]
        self.weights = [np.array(w, dtype=float).reshape(s) for w, s in zip(weights, shapes)]
        self.biases = [np.array(b, dtype=float).reshape(s[0]) for b, s in zip(biases, shapes)]

    @classmethod
    def default(cls, input_dim: int, depth: int = 10, width: int = 10) -> "WeightNet":
        return cls([input_dim] + [width] * depth + [1])

    @classmethod
    def initialized(cls, layer_sizes: Sequence[int], seed=0) -> "WeightNet":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
        rng = np.random.default_rng(seed)
        net = cls(layer_sizes)
        for w in net.weights:
            bound = 1.0 / np.sqrt(max(w.shape[1], 1))
            w[...] = rng.uniform(-bound, bound, size=w.shape)
        return net

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_params(self) -> int:
        return sum((i + 1) * o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def copy(self) -> "WeightNet":
        return WeightNet(self.layer_sizes, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.input_dim:
            raise ValueError(f"input has dimension {X.shape[1]}, network expects {self.input_dim}")
        return X

    def _forward_cache(self, X):
        acts = [X]
        pre = []
        h = X
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            pre.append(z)
            h = z if k == last else np.maximum(z, 0.0)
            acts.append(h)
        return pre, acts

    def log_weight(self, X) -> np.ndarray:
        X = self._check(X)
        pre, _ = self._forward_cache(X)
        return pre[-1][:, 0]

    def forward_batch(self, X) -> np.ndarray:
        # exp overflows past ~709; such weights are clipped downstream anyway
        return np.exp(np.minimum(self.log_weight(X), MAX_LOG_WEIGHT))

    def forward(self, x) -> float:
        return float(self.forward_batch(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def backward(self, X, dout: np.ndarray):
        """Gradients of sum_i dout_i * f(x_i) w.r.t. (weights, biases)."""
        X = self._check(X)
        pre, acts = self._forward_cache(X)
        g = np.asarray(dout, dtype=float).reshape(-1, 1)
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        for k in range(len(self.weights) - 1, -1, -1):
            gw[k] = g.T @ acts[k]
            gb[k] = g.sum(axis=0)
            if k > 0:
                g = (g @ self.weights[k]) * (pre[k - 1] > 0)
        return gw, gb

    # flat parameter view, handy for finite differences and optimizers
    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def set_flat(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        pos = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = theta[pos:pos + w.size].reshape(w.shape)
            pos += w.size
            b[...] = theta[pos:pos + b.size]
            pos += b.size

    @staticmethod
    def flatten_grads(gw, gb) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(gw, gb)])

    # snapshot blob: JSON, matrices row-major with shape (n_out, n_in)
    def to_dict(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "layer_sizes": self.layer_sizes,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightNet":
        if d.get("format") != SNAPSHOT_FORMAT:
            raise ValueError(f"not a weight-net blob: {d.get('format')!r}")
        if d.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported weight-net version {d.get('version')!r}")
        return cls(d["layer_sizes"], d["weights"], d["biases"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, s: str) -> "WeightNet":
        return cls.from_dict(json.loads(s))


def _unpack(batch):
    base, X, p = batch
    base = np.asarray(base, dtype=float)
    p = np.asarray(p, dtype=float)
    if base.size == 0:
        raise ValueError("empty batch")
    return base, np.asarray(X, dtype=float).reshape(base.size, -1), p


def edr(net: WeightNet, batch, sharpness: float) -> float:
    """Sigmoid-relaxed empirical discovery rate of a batch.

    ``batch`` is ``(base_alpha, X, p)``; the level of item i is
    ``base_alpha[i] * omega(X[i])`` with no wealth clamp.
    """
    base, X, p = _unpack(batch)
    levels = base * net.forward_batch(X)
    return float(np.mean(expit(sharpness * (levels - p))))


def edr_gradient(net: WeightNet, batch, sharpness: float):
    """Exact gradient of :func:`edr` as (weight grads, bias grads)."""
    base, X, p = _unpack(batch)
    omega = net.forward_batch(X)
    s = expit(sharpness * (base * omega - p))
    # d sigma / d f = sigma' * lambda * base * omega since d omega / d f = omega
    dout = s * (1.0 - s) * sharpness * base * omega / base.size
    return net.backward(X, dout)


@dataclass
class TrainConfig:
    batch_size: int = 100
    learning_rate: float = 0.01
    sharpness: float = 50.0
    optimizer: str = "plain_gradient"
    momentum: float = 0.9
    init_seed: int = 0
    clip: Optional[tuple] = WEIGHT_CLIP
    depth: int = 10
    width: int = 10

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.sharpness <= 0:
            raise ValueError("sigmoid sharpness must be > 0")
        if self.optimizer not in ("plain_gradient", "momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clip"] = list(self.clip) if self.clip else None
        return d


class _BatchWeights:
    kind = "network"
    unit_mean = False

    def __init__(self):
        self.table: dict = {}

    def __call__(self, event):
        return self.table[event.index]


@dataclass
class TrainResult:
    decisions: list
    net: WeightNet
    edr_trace: list
    metrics: MetricsAccumulator
    state: EngineState


class OnlineTrainer:
    """Batch-wise CwLORD++ run with online ascent on the discovery rate.

    The trainer is resumable: :meth:`snapshot_payload` captures everything
    needed at a batch boundary.
    """

    def __init__(self, net: WeightNet, gamma: GammaSchedule, config: Optional[TrainConfig] = None,
                 engine_config: Optional[EngineConfig] = None):
        self.net = net
        self.gamma = gamma
        self.config = config or TrainConfig()
        self._weights = _BatchWeights()
        self.rule = CwLordPlusPlus(gamma, self._weights)
        self.runner = StreamRunner(self.rule, engine_config or EngineConfig())
        self.edr_trace: list = []
        self.velocity = np.zeros(net.n_params)
        self.batches_done = 0

    @property
    def state(self) -> EngineState:
        return self.runner.state

    def process_batch(self, events: Sequence[HypothesisEvent]) -> list[Decision]:
        if not events:
            return []
        cfg = self.config
        X = np.array([ev.context for ev in events], dtype=float).reshape(len(events), -1)
        omega = self.net.forward_batch(X)
        if cfg.clip:
            omega = np.clip(omega, *cfg.clip)
        self._weights.table = {ev.index: float(w) for ev, w in zip(events, omega)}
        base = np.empty(len(events))
        p = np.empty(len(events))
        out = []
        for i, ev in enumerate(events):
            st = self.runner.state
            base[i] = self.gamma(st.t + 1 - st.tau) * st.reward_cap
            p[i] = ev.p
            out.append(self.runner.feed(ev))
        batch = (base, X, p)
        self.edr_trace.append(edr(self.net, batch, cfg.sharpness))
        if cfg.learning_rate > 0:
            gw, gb = edr_gradient(self.net, batch, cfg.sharpness)
            grad = WeightNet.flatten_grads(gw, gb)
            if cfg.optimizer == "momentum":
                self.velocity = cfg.momentum * self.velocity + grad
                grad = self.velocity
            self.net.set_flat(self.net.get_flat() + cfg.learning_rate * grad)
        self.batches_done += 1
        return out

    def run(self, events: Sequence[HypothesisEvent]) -> TrainResult:
        b = self.config.batch_size
        for start in range(0, len(events), b):
            self.process_batch(events[start:start + b])
        return self.result()

    def result(self) -> TrainResult:
        return TrainResult(self.runner.decisions, self.net, self.edr_trace,
                           self.runner.metrics, self.runner.state)


def train_online(net: WeightNet, events: Sequence[HypothesisEvent], gamma: GammaSchedule,
                 config: Optional[TrainConfig] = None,
                 engine_config: Optional[EngineConfig] = None) -> TrainResult:
    """Single pass of the online trainer over ``events`` (no labels consumed)."""
    check_stream(events)
    trainer = OnlineTrainer(net, gamma, config, engine_config)
    return trainer.run(events)


def snapshot_trainer(path, trainer: OnlineTrainer, config: Optional[dict] = None) -> None:
    """Snapshot a trainer; only valid at a batch boundary."""
    from .streamio import snapshot

    snapshot(path, trainer.state, net=trainer.net, metrics=trainer.runner.metrics,
             trainer={"train_config": trainer.config.to_dict(),
                      "velocity": trainer.velocity.tolist(),
                      "batches_done": trainer.batches_done,
                      "edr_trace": list(trainer.edr_trace)},
             config=config)


def restore_trainer(path, gamma: GammaSchedule) -> OnlineTrainer:
    from .streamio import SnapshotError, restore

    snap = restore(path)
    info = snap["trainer"]
    if info is None or snap["net"] is None:
        raise SnapshotError(f"{path} holds no trainer state")
    cfg = dict(info["train_config"])
    cfg["clip"] = tuple(cfg["clip"]) if cfg["clip"] else None
    trainer = OnlineTrainer(snap["net"], gamma, TrainConfig(**cfg))
    trainer.runner.state = snap["engine"]
    trainer.runner.metrics = snap["metrics"]
    trainer.velocity = np.asarray(info["velocity"], dtype=float)
    trainer.batches_done = info["batches_done"]
    trainer.edr_trace = list(info["edr_trace"])
    return trainer
