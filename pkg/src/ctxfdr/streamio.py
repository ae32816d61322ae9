"""Stream CSV ingestion, decision emission and snapshot files.

Input stream format::

    t,p,x1,...,xd[,h]

with strictly increasing integer ``t``, ``p`` in (0, 1) and optional label
``h`` in {0, 1}.  Lines starting with ``#`` are comments.

Decision output format (reals fixed to 12 decimals, running FDP/TDP to 6)::

    t,alpha,weight,reject,wealth,fdp_hat[,fdp,tdp]

followed by one ``summary`` row holding totals and final values.
"""

from __future__ import annotations

import base64
import csv
import hashlib
import io
import json
import math
import zlib
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Decision, HypothesisEvent, MetricsAccumulator
from .engine import EngineState

DECISIONS_VERSION = 1
SNAPSHOT_FORMAT = "ctxfdr-snapshot"
SNAPSHOT_VERSION = 1


class IngestError(ValueError):
    def __init__(self, line: int, field: str, reason: str):
        self.line, self.field, self.reason = line, field, reason
        super().__init__(f"line {line}, field {field!r}: {reason}")


class SnapshotError(ValueError):
    pass


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def _data_lines(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip() and not line.lstrip().startswith("#"):
            yield lineno, line


def parse_stream(text: str) -> list[HypothesisEvent]:
    lines = _data_lines(text)
    try:
        hline, header = next(lines)
    except StopIteration:
        raise IngestError(1, "header", "missing header row") from None
    cols = [c.strip() for c in header.split(",")]
    if cols[:2] != ["t", "p"]:
        raise IngestError(hline, "header", f"must start with t,p; got {','.join(cols[:2])}")
    labelled = cols[-1] == "h"
    xcols = cols[2:-1] if labelled else cols[2:]
    for k, c in enumerate(xcols, start=1):
        if c != f"x{k}":
            raise IngestError(hline, "header", f"expected x{k}, got {c!r}")
    events = []
    last_t = 0
    for lineno, line in lines:
        fields = [f.strip() for f in next(csv.reader([line]))]
        if len(fields) != len(cols):
            raise IngestError(lineno, "row", f"expected {len(cols)} fields, got {len(fields)}")
        try:
            t = int(fields[0])
        except ValueError:
            raise IngestError(lineno, "t", f"not an integer: {fields[0]!r}") from None
        if t <= last_t:
            raise IngestError(lineno, "t", f"must be strictly increasing (got {t} after {last_t})")
        try:
            p = float(fields[1])
        except ValueError:
            raise IngestError(lineno, "p", f"not a number: {fields[1]!r}") from None
        if not (0.0 < p < 1.0):
            raise IngestError(lineno, "p", f"must lie in (0, 1), got {fields[1]}")
        ctx = []
        for name, raw in zip(xcols, fields[2:2 + len(xcols)]):
            try:
                v = float(raw)
            except ValueError:
                raise IngestError(lineno, name, f"not a number: {raw!r}") from None
            if not math.isfinite(v):
                raise IngestError(lineno, name, "must be finite")
            ctx.append(v)
        h = None
        if labelled:
            if fields[-1] not in ("0", "1"):
                raise IngestError(lineno, "h", f"must be 0 or 1, got {fields[-1]!r}")
            h = int(fields[-1])
        events.append(HypothesisEvent(t, p, tuple(ctx), h))
        last_t = t
    return events


def ingest_stream(path) -> list[HypothesisEvent]:
    """Read and fully validate a stream file before any decision is made."""
    return parse_stream(Path(path).read_text())


def format_stream(events: Sequence[HypothesisEvent]) -> str:
    d = events[0].dim if events else 0
    labelled = bool(events) and events[0].truth is not None
    buf = io.StringIO()
    header = ["t", "p"] + [f"x{k}" for k in range(1, d + 1)] + (["h"] if labelled else [])
    buf.write(",".join(header) + "\n")
    for ev in events:
        row = [str(ev.index), repr(ev.p)] + [repr(v) for v in ev.context]
        if labelled:
            row.append(str(ev.truth))
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def write_stream(events: Sequence[HypothesisEvent], path) -> None:
    Path(path).write_text(format_stream(events))


# ---------------------------------------------------------------------------
# decisions
# ---------------------------------------------------------------------------

def format_decisions(decisions: Sequence[Decision], truth: Optional[Sequence[int]] = None,
                     meta: Optional[dict] = None) -> str:
    labelled = truth is not None
    if labelled and len(truth) != len(decisions):
        raise ValueError("truth labels and decisions differ in length")
    buf = io.StringIO()
    buf.write(f"# ctxfdr decisions v{DECISIONS_VERSION}: alpha/weight/wealth/fdp_hat "
              f"fixed to 12 decimals, fdp/tdp to 6\n")
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    cols = ["t", "alpha", "weight", "reject", "wealth", "fdp_hat"] + (["fdp", "tdp"] if labelled else [])
    buf.write(",".join(cols) + "\n")
    alpha_sum = 0.0
    R = V = S = N1 = 0
    wealth = 0.0
    for i, d in enumerate(decisions):
        alpha_sum += d.alpha
        R += d.rejected
        wealth = d.wealth_after
        row = [str(d.index), f"{d.alpha:.12f}", f"{d.weight:.12f}", str(int(d.rejected)),
               f"{d.wealth_after:.12f}", f"{alpha_sum / max(R, 1):.12f}"]
        if labelled:
            if truth[i] == 1:
                N1 += 1
                S += d.rejected
            else:
                V += d.rejected
            row += [f"{V / max(R, 1):.6f}", f"{S / max(N1, 1):.6f}"]
        buf.write(",".join(row) + "\n")
    summary = ["summary", f"{alpha_sum:.12f}", "", str(R), f"{wealth:.12f}",
               f"{alpha_sum / max(R, 1):.12f}"]
    if labelled:
        summary += [f"{V / max(R, 1):.6f}", f"{S / max(N1, 1):.6f}"]
    buf.write(",".join(summary) + "\n")
    return buf.getvalue()


def emit_decisions(decisions: Sequence[Decision], metrics: Optional[MetricsAccumulator], path,
                   truth: Optional[Sequence[int]] = None, meta: Optional[dict] = None) -> None:
    if metrics is not None and metrics.labelled and truth is None:
        raise ValueError("labelled run needs truth labels to emit fdp/tdp columns")
    text = format_decisions(decisions, truth, meta)
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write decisions to {path}: {exc}") from exc


def read_decisions(path) -> list[dict]:
    rows = [line for line in Path(path).read_text().splitlines() if not line.startswith("#")]
    return list(csv.DictReader(rows))


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def _pack_history(history: bytearray) -> str:
    bits = np.packbits(np.frombuffer(bytes(history), dtype=np.uint8))
    return base64.b64encode(zlib.compress(bits.tobytes())).decode("ascii")


def _unpack_history(blob: str, length: int) -> bytearray:
    bits = np.frombuffer(zlib.decompress(base64.b64decode(blob)), dtype=np.uint8)
    return bytearray(np.unpackbits(bits)[:length].tobytes())


def state_to_dict(state: EngineState) -> dict:
    return {
        "alpha_level": state.alpha_level, "w0": state.w0, "t": state.t, "wealth": state.wealth,
        "tau": state.tau, "rho1_passed": state.rho1_passed, "n_rejections": state.n_rejections,
        "wealth_at_tau": state.wealth_at_tau, "spent": state.spent, "history_cap": state.history_cap,
        "history_len": len(state.history), "history": _pack_history(state.history),
    }


def state_from_dict(d: dict) -> EngineState:
    return EngineState(alpha_level=d["alpha_level"], w0=d["w0"], t=d["t"], wealth=d["wealth"],
                       tau=d["tau"], rho1_passed=d["rho1_passed"], n_rejections=d["n_rejections"],
                       wealth_at_tau=d["wealth_at_tau"], spent=d["spent"],
                       history=_unpack_history(d["history"], d["history_len"]),
                       history_cap=d["history_cap"])


def metrics_to_dict(m: MetricsAccumulator) -> dict:
    return {k: getattr(m, k) for k in ("labelled", "keep_trajectory", "R", "V", "S", "N1", "steps",
                                       "alpha_sum", "saffron_sum", "max_fdp", "fdp_trajectory")}


def metrics_from_dict(d: dict) -> MetricsAccumulator:
    return MetricsAccumulator(**d)


def _checksum(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def snapshot(path, state: EngineState, *, rule_state: Optional[dict] = None,
             net=None, metrics: Optional[MetricsAccumulator] = None,
             trainer: Optional[dict] = None, rng_state: Optional[dict] = None,
             config: Optional[dict] = None) -> None:
    """Write a versioned, checksummed snapshot of a stream in progress."""
    payload = {
        "engine": state_to_dict(state),
        "rule": rule_state or {},
        "net": net.to_dict() if net is not None else None,
        "metrics": metrics_to_dict(metrics) if metrics is not None else None,
        "trainer": trainer,
        "rng": rng_state,
        "config": config or {},
    }
    doc = {"format": SNAPSHOT_FORMAT, "version": SNAPSHOT_VERSION, "payload": payload,
           "checksum": _checksum(payload)}
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def restore(path) -> dict:
    """Read a snapshot; returns its payload with engine/metrics/net rebuilt."""
    from .weightnet import WeightNet

    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"corrupt snapshot {path}: {exc}") from exc
    if doc.get("format") != SNAPSHOT_FORMAT:
        raise SnapshotError(f"{path} is not a ctxfdr snapshot")
    if doc.get("version") != SNAPSHOT_VERSION:
        raise SnapshotError(f"snapshot version {doc.get('version')} != {SNAPSHOT_VERSION}")
    payload = doc["payload"]
    if _checksum(payload) != doc.get("checksum"):
        raise SnapshotError(f"checksum mismatch in {path}; snapshot is corrupt")
    out = dict(payload)
    out["engine"] = state_from_dict(payload["engine"])
    out["metrics"] = metrics_from_dict(payload["metrics"]) if payload["metrics"] else None
    out["net"] = WeightNet.from_dict(payload["net"]) if payload["net"] else None
    return out


def snapshot_runner(path, runner, config: Optional[dict] = None) -> None:
    snapshot(path, runner.state, rule_state=runner.rule.state_dict(), metrics=runner.metrics,
             config=config)


def restore_runner(path, rule):
    """Rebuild a :class:`StreamRunner` around a freshly constructed ``rule``."""
    from .engine import StreamRunner

    snap = restore(path)
    rule.load_state_dict(snap["rule"])
    return StreamRunner(rule, state=snap["engine"], metrics=snap["metrics"])
