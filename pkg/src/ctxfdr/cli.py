"""Command-line front end.

Subcommands: simulate, run, train, power, offline, compare.
Exit codes: 0 success, 1 validation error, 2 runtime or constraint error.

A config file (``--config``) is an INI file with sections ``engine``,
``rules``, ``weightnet``, ``sim`` and ``output``; command-line flags override
it.  Every resolved setting is echoed into the output header.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np

from .baselines import OfflineBatch, bh, storey_bh, storey_pi0
from .core import make_events
from .engine import ConstraintViolation, EngineConfig, StreamRunner
from .power import (check_separation, marginal_D, marginal_G, normal_means_cdf,
                    normal_means_density, power_lower_bound)
from .rules import RULE_NAMES, GammaSchedule, TableWeights, make_rule
from .sim import (MixtureWeightConfig, NormalMeansConfig, RuleSpec, WeightDist,
                  generate_normal_means, generate_weighted_mixture, run_experiment,
                  sign_test_pvalue)
from .streamio import (IngestError, SnapshotError, emit_decisions, ingest_stream,
                       restore_runner, snapshot_runner, write_stream)
from .weightnet import (OnlineTrainer, TrainConfig, WeightNet, restore_trainer,
                        snapshot_trainer)

DEFAULTS = {
    "engine": {"alpha": "0.1", "w0": ""},
    "rules": {"rule": "lordpp", "horizon": "", "lam": "0.5", "weights": "one"},
    "weightnet": {"batch_size": "100", "learning_rate": "0.01", "sharpness": "50",
                  "optimizer": "plain_gradient", "init_seed": "0", "depth": "10", "width": "10"},
    "sim": {"generator": "normal_means", "T": "10000", "pi1": "0.5", "d": "10", "mu": "3.0",
            "seed": "0", "beta_seed": "12345", "repeats": "20", "u0": "1.0", "u1": "1.0"},
    "output": {"snapshot_every": "0"},
}

# flag name -> (section, key)
FLAG_MAP = {
    "alpha": ("engine", "alpha"), "w0": ("engine", "w0"),
    "rule": ("rules", "rule"), "horizon": ("rules", "horizon"), "lam": ("rules", "lam"),
    "weights": ("rules", "weights"),
    "batch_size": ("weightnet", "batch_size"), "learning_rate": ("weightnet", "learning_rate"),
    "sharpness": ("weightnet", "sharpness"), "optimizer": ("weightnet", "optimizer"),
    "init_seed": ("weightnet", "init_seed"),
    "generator": ("sim", "generator"), "T": ("sim", "T"), "pi1": ("sim", "pi1"), "d": ("sim", "d"),
    "mu": ("sim", "mu"), "seed": ("sim", "seed"), "repeats": ("sim", "repeats"),
    "u0": ("sim", "u0"), "u1": ("sim", "u1"),
    "snapshot_every": ("output", "snapshot_every"),
}


class Settings:
    def __init__(self, args):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp.read_dict(DEFAULTS)
        if getattr(args, "config", None):
            if not Path(args.config).exists():
                raise ValueError(f"config file {args.config} does not exist")
            cp.read(args.config)
        for flag, (sec, key) in FLAG_MAP.items():
            v = getattr(args, flag, None)
            if v is not None:
                cp[sec][key] = str(v)
        self.cp = cp

    def get(self, sec, key, cast=str):
        raw = self.cp[sec][key]
        if raw == "":
            return None
        return cast(raw)

    def echo(self) -> dict:
        return {f"{s}.{k}": v for s in self.cp.sections() for k, v in self.cp[s].items()}

    def engine(self) -> EngineConfig:
        alpha = self.get("engine", "alpha", float)
        w0 = self.get("engine", "w0", float)
        if w0 is not None and not (0 < w0 < alpha < 1):
            raise ValueError("need 0 < w0 < alpha < 1")
        if not (0 < alpha < 1):
            raise ValueError("alpha must be in (0, 1)")
        return EngineConfig(alpha=alpha, w0=w0)

    def train(self) -> TrainConfig:
        g = lambda k, c: self.get("weightnet", k, c)
        return TrainConfig(batch_size=g("batch_size", int), learning_rate=g("learning_rate", float),
                           sharpness=g("sharpness", float), optimizer=g("optimizer", str),
                           init_seed=g("init_seed", int), depth=g("depth", int),
                           width=g("width", int))

    def generator(self):
        g = lambda k, c: self.get("sim", k, c)
        kind = g("generator", str)
        if kind == "normal_means":
            return NormalMeansConfig(T=g("T", int), pi1=g("pi1", float), d=g("d", int),
                                     seed=g("seed", int), beta_seed=g("beta_seed", int))
        if kind == "mixture":
            pi1, u0, u1 = g("pi1", float), g("u0", float), g("u1", float)
            return MixtureWeightConfig(T=g("T", int), pi1=pi1, mu=g("mu", float),
                                       q0=WeightDist.point(u0), q1=WeightDist.point(u1),
                                       seed=g("seed", int))
        raise ValueError(f"unknown generator {kind!r}")


def _events_and_weights(settings, args):
    if getattr(args, "input", None):
        events = ingest_stream(args.input)
        weights = None
        mode = settings.get("rules", "weights")
        if mode == "x1":
            if not events or events[0].dim < 1:
                raise ValueError("weights=x1 needs at least one context column")
            weights = np.array([ev.context[0] for ev in events])
        return events, weights
    gen = settings.generator()
    rng = np.random.default_rng(gen.seed)
    if isinstance(gen, NormalMeansConfig):
        return generate_normal_means(gen, rng), None
    p, omega, H = generate_weighted_mixture(gen, rng)
    return make_events(p, None, H), omega


def cmd_simulate(args, settings):
    gen = settings.generator()
    rng = np.random.default_rng(gen.seed)
    if isinstance(gen, NormalMeansConfig):
        events = generate_normal_means(gen, rng)
    else:
        p, omega, H = generate_weighted_mixture(gen, rng)
        events = make_events(p, omega.reshape(-1, 1), H)
    write_stream(events, args.out)
    print(f"wrote {len(events)} events to {args.out}")
    return 0


def cmd_run(args, settings):
    events, weights = _events_and_weights(settings, args)
    eng = settings.engine()
    name = settings.get("rules", "rule")
    horizon = settings.get("rules", "horizon", int) or max(len(events), 1)
    provider = TableWeights(weights) if weights is not None else None
    rule = make_rule(name, eng.alpha, eng.w0, horizon, provider, settings.get("rules", "lam", float))
    if args.resume:
        runner = restore_runner(args.resume, rule)
    else:
        runner = StreamRunner(rule, eng)
    every = settings.get("output", "snapshot_every", int) or 0
    todo = [ev for ev in events if ev.index > runner.state.t]
    for ev in todo:
        runner.feed(ev)
        if every and args.snapshot and runner.state.t % every == 0:
            snapshot_runner(args.snapshot, runner, settings.echo())
    if args.snapshot:
        snapshot_runner(args.snapshot, runner, settings.echo())
    done = {ev.index: ev.truth for ev in events}
    truth = [done[d.index] for d in runner.decisions] if runner.metrics.labelled else None
    emit_decisions(runner.decisions, runner.metrics, args.out, truth, settings.echo())
    print(f"{name}: {runner.metrics.R} rejections over {runner.state.t} tests -> {args.out}")
    return 0


def cmd_train(args, settings):
    events, _ = _events_and_weights(settings, args)
    eng = settings.engine()
    horizon = settings.get("rules", "horizon", int) or max(len(events), 1)
    gamma = GammaSchedule.log_decay(horizon)
    cfg = settings.train()
    if args.resume:
        trainer = restore_trainer(args.resume, gamma)
    else:
        d = events[0].dim if events else 0
        net = WeightNet.initialized([d] + [cfg.width] * cfg.depth + [1], seed=cfg.init_seed)
        trainer = OnlineTrainer(net, gamma, cfg, eng)
    every = settings.get("output", "snapshot_every", int) or 0
    todo = [ev for ev in events if ev.index > trainer.state.t]
    b = trainer.config.batch_size
    for start in range(0, len(todo), b):
        trainer.process_batch(todo[start:start + b])
        if every and args.snapshot and trainer.batches_done % every == 0:
            snapshot_trainer(args.snapshot, trainer, settings.echo())
    if args.snapshot:
        snapshot_trainer(args.snapshot, trainer, settings.echo())
    res = trainer.result()
    lookup = {ev.index: ev.truth for ev in events}
    truth = [lookup[d.index] for d in res.decisions] if res.metrics.labelled else None
    meta = settings.echo()
    meta["edr_trace"] = json.dumps([round(v, 6) for v in res.edr_trace])
    emit_decisions(res.decisions, res.metrics, args.out, truth, meta)
    if args.net_out:
        Path(args.net_out).write_text(res.net.dumps())
    print(f"cwlordpp+net: {res.metrics.R} rejections over {res.state.t} tests -> {args.out}")
    return 0


def cmd_power(args, settings):
    alpha = settings.get("engine", "alpha", float)
    pi1 = settings.get("sim", "pi1", float)
    mu = settings.get("sim", "mu", float)
    u0, u1 = settings.get("sim", "u0", float), settings.get("sim", "u1", float)
    horizon = settings.get("rules", "horizon", int) or 100_000
    b0 = alpha / 2
    gamma = GammaSchedule.log_decay(horizon)
    F = lambda a: normal_means_cdf(a, mu)
    q1 = WeightDist.point(u1)
    grid = np.linspace(0.0, 1.0 / max(u1, 1.0), args.points)
    G = marginal_G(grid, pi1, F)
    D = marginal_D(grid, pi1, u0, F, q1)
    lines = ["a,G,D"] + [f"{a:.8f},{g:.10f},{d:.10f}" for a, g, d in zip(grid, G, D)]
    Path(args.out).write_text("\n".join(lines) + "\n")
    bound_G = power_lower_bound(lambda a: marginal_G(a, pi1, F), b0, gamma)
    bound_D = power_lower_bound(lambda a: marginal_D(a, pi1, u0, F, q1), b0, gamma)
    report = [f"alpha={alpha} b0={b0} pi1={pi1} mu={mu} u0={u0} u1={u1} horizon={horizon}",
              f"gamma_1={gamma(1):.6f}"]
    try:
        sep = check_separation(lambda a: normal_means_density(a, mu), pi1, u0, u1, u1, b0, gamma(1))
        report += [f"a0={sep.a0:.6f}", f"a0/(b0*gamma_1)={sep.bound:.4f}",
                   f"informative={sep.informative}", f"level_condition={sep.level_condition}",
                   f"support_condition={sep.support_condition}"]
    except ValueError as exc:
        report.append(f"a0 undefined: {exc}")
    for tag, bd in (("unweighted(G)", bound_G), ("weighted(D)", bound_D)):
        report.append(f"{tag}: as_stated={bd.as_stated_clamped:.6f} corrected={bd.corrected_clamped:.6f} "
                      f"terms={bd.terms} converged={bd.converged}")
    text = "\n".join(report) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_offline(args, settings):
    raw = [ln.strip() for ln in Path(args.input).read_text().splitlines()
           if ln.strip() and not ln.startswith("#")]
    if raw and raw[0].lower() in ("p", "pvalue", "p_value"):
        raw = raw[1:]
    try:
        p = np.array([float(v) for v in raw])
    except ValueError as exc:
        raise ValueError(f"bad p-value in {args.input}: {exc}") from exc
    batch = OfflineBatch(p, settings.get("engine", "alpha", float), args.storey_lambda)
    rej_bh = bh(batch)
    rej_st = storey_bh(batch, cap=args.cap_pi0)
    lines = ["i,p,bh,storey_bh"] + [f"{i + 1},{float(v)!r},{int(a)},{int(b)}"
                                    for i, (v, a, b) in enumerate(zip(p, rej_bh, rej_st))]
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"BH rejects {int(rej_bh.sum())}; Storey-BH (pi0={storey_pi0(p, batch.lam):.4f}) "
          f"rejects {int(rej_st.sum())} of {len(p)}")
    return 0


def cmd_compare(args, settings):
    eng = settings.engine()
    gen = settings.generator()
    repeats = settings.get("sim", "repeats", int)
    reports = []
    for name in args.rules:
        train = settings.train() if name == "cwlordpp+net" else None
        rname = "cwlordpp" if name == "cwlordpp+net" else name
        spec = RuleSpec(rname, eng.alpha, eng.w0, settings.get("rules", "horizon", int),
                        settings.get("rules", "lam", float), train)
        reports.append(run_experiment(spec, gen, repeats))
    out = Path(args.out)
    chunks = [rep.to_csv() for rep in reports]
    out.write_text("".join(chunks))
    for rep in reports:
        s = rep.summary()
        print(f"{rep.rule:>14}: mean max FDP {s['mean_max_fdp']:.4f}  mean FDP "
              f"{s['mean_final_fdp']:.4f} (se {s['se_final_fdp']:.4f})  mean TDP {s['mean_tdp']:.4f}")
    if len(reports) == 2:
        a = np.array([r.tdp for r in reports[0].replicates])
        b = np.array([r.tdp for r in reports[1].replicates])
        print(f"paired TDP difference {reports[1].rule} - {reports[0].rule}: "
              f"{(b - a).mean():+.5f}, sign-test p = {sign_test_pvalue(b - a):.4g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctxfdr", description="Contextual online FDR control")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, rules=True, sim=False, net=False):
        p.add_argument("--config")
        p.add_argument("--alpha", type=float)
        p.add_argument("--w0", type=float)
        if rules:
            p.add_argument("--rule", choices=RULE_NAMES)
            p.add_argument("--horizon", type=int)
            p.add_argument("--lam", type=float)
            p.add_argument("--weights", choices=("one", "x1"))
        if sim:
            p.add_argument("--generator", choices=("normal_means", "mixture"))
            p.add_argument("--T", type=int)
            p.add_argument("--pi1", type=float)
            p.add_argument("--d", type=int)
            p.add_argument("--mu", type=float)
            p.add_argument("--u0", type=float)
            p.add_argument("--u1", type=float)
            p.add_argument("--seed", type=int)
            p.add_argument("--repeats", type=int)
        if net:
            p.add_argument("--batch-size", dest="batch_size", type=int)
            p.add_argument("--learning-rate", dest="learning_rate", type=float)
            p.add_argument("--sharpness", type=float)
            p.add_argument("--optimizer", choices=("plain_gradient", "momentum"))
            p.add_argument("--init-seed", dest="init_seed", type=int)

    p = sub.add_parser("simulate", help="write a synthetic stream CSV")
    common(p, rules=False, sim=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    for name, helptext in (("run", "run an online rule over a stream"),
                           ("train", "CwLORD++ with an online-trained weight network")):
        p = sub.add_parser(name, help=helptext)
        common(p, sim=True, net=name == "train")
        p.add_argument("--input", help="stream CSV (t,p,x1..xd[,h]); omit to simulate")
        p.add_argument("--out", required=True)
        p.add_argument("--snapshot")
        p.add_argument("--snapshot-every", dest="snapshot_every", type=int)
        p.add_argument("--resume")
        if name == "train":
            p.add_argument("--net-out")
        p.set_defaults(func=cmd_run if name == "run" else cmd_train)

    p = sub.add_parser("power", help="G/D grids, renewal bounds and separation verdicts")
    common(p, sim=True)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("offline", help="BH and Storey-BH on a one-column p-value file")
    common(p, rules=False)
    p.add_argument("--input", required=True)
    p.add_argument("--storey-lambda", type=float, default=0.5)
    p.add_argument("--cap-pi0", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_offline)

    p = sub.add_parser("compare", help="paired replicate experiment of several rules")
    common(p, sim=True, net=True)
    p.add_argument("--rules", nargs="+", default=["lordpp", "cwlordpp+net"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = Settings(args)
        return args.func(args, settings)
    except (IngestError, SnapshotError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConstraintViolation, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
