import numpy as np
import pytest
from scipy import stats

from ctxfdr.core import fdp, tdp
from ctxfdr.engine import run_stream
from ctxfdr.power import normal_means_cdf
from ctxfdr.rules import make_rule
from ctxfdr.sim import (MixtureWeightConfig, NormalMeansConfig, RuleSpec, WeightDist,
                        generate_normal_means, generate_replicate, generate_weighted_mixture,
                        run_experiment, sign_test_pvalue)


def test_null_p_values_uniform():
    cfg = NormalMeansConfig(T=10_000, pi1=1e-9, d=5, seed=3)
    ev = generate_normal_means(cfg)
    assert all(e.truth == 0 for e in ev)
    assert stats.kstest([e.p for e in ev], "uniform").pvalue > 0.01


def test_zero_signal_gives_uniform_alternatives():
    cfg = NormalMeansConfig(T=10_000, pi1=0.5, d=4, beta=np.zeros(4), seed=1)
    p = [e.p for e in generate_normal_means(cfg) if e.truth == 1]
    assert stats.kstest(p, "uniform").pvalue > 0.01


def test_normal_means_labels_and_contexts():
    cfg = NormalMeansConfig(T=20_000, pi1=0.3, d=10, seed=7)
    ev = generate_normal_means(cfg)
    h = np.array([e.truth for e in ev])
    se = np.sqrt(0.3 * 0.7 / 20_000)
    assert abs(h.mean() - 0.3) < 4 * se
    X = np.array([e.context for e in ev])
    assert X.shape == (20_000, 10)
    assert np.var(X) == pytest.approx(2 * np.log(20_000), rel=0.03)
    assert np.all(np.abs(cfg.beta) <= 2)


def test_fixed_seed_is_reproducible():
    cfg = NormalMeansConfig(T=500, seed=11)
    assert generate_normal_means(cfg) == generate_normal_means(cfg)
    a, _ = generate_replicate(cfg, 3)
    b, _ = generate_replicate(cfg, 3)
    c, _ = generate_replicate(cfg, 4)
    assert a == b and a != c


def test_mixture_weights():
    cfg = MixtureWeightConfig(T=50_000, pi1=0.5, q0=WeightDist.point(0.5),
                              q1=WeightDist.two_point(1.0, 2.0, 0.5), seed=2)
    p, omega, H = generate_weighted_mixture(cfg)
    assert set(np.unique(omega[H == 0])) == {0.5}
    assert omega[H == 1].mean() == pytest.approx(1.5, abs=0.02)
    assert omega.mean() == pytest.approx(1.0, abs=0.02)
    # weights correlate with the hypothesis but not with p within a class
    assert np.corrcoef(omega, H)[0, 1] > 0.5
    assert abs(stats.spearmanr(p[H == 1], omega[H == 1]).statistic) < 0.03
    assert stats.kstest(p[H == 0], "uniform").pvalue > 0.01
    assert stats.kstest(p[H == 1], lambda a: normal_means_cdf(a, 3.0)).pvalue > 0.01


def test_unit_weights_reduce_to_plain_mixture():
    a = generate_weighted_mixture(MixtureWeightConfig(T=300, seed=4))
    assert np.all(a[1] == 1.0)


def test_weight_dist_validation():
    with pytest.raises(ValueError):
        WeightDist.point(0.0)
    with pytest.raises(ValueError):
        WeightDist.uniform(2.0, 1.0)
    with pytest.raises(ValueError):
        WeightDist("gamma", (1.0,))
    assert WeightDist.uniform(1.0, 3.0).mean == 2.0


def test_single_repeat_equals_direct_run():
    cfg = NormalMeansConfig(T=2000, seed=5)
    rep = run_experiment(RuleSpec("lordpp"), cfg, 1)
    ev, _ = generate_replicate(cfg, 0)
    _, acc = run_stream(make_rule("lordpp", 0.1, horizon=2000), ev)
    r = rep.replicates[0]
    assert (r.R, r.V, r.S, r.N1) == (acc.R, acc.V, acc.S, acc.N1)
    assert r.final_fdp == fdp(acc) and r.tdp == tdp(acc) and r.max_fdp == acc.max_fdp


def test_reports_are_deterministic():
    cfg = NormalMeansConfig(T=1000, seed=8)
    a = run_experiment(RuleSpec("lordpp"), cfg, 3)
    b = run_experiment(RuleSpec("lordpp"), cfg, 3)
    assert a.to_csv() == b.to_csv()
    with pytest.raises(ValueError):
        run_experiment(RuleSpec("lordpp"), cfg, 0)


def test_lordpp_fdr_on_normal_means():
    rep = run_experiment(RuleSpec("lordpp"), NormalMeansConfig(T=10_000, pi1=0.5, seed=0), 20)
    assert rep.mean("final_fdp") <= 0.1 + 3 * rep.se("final_fdp")
    assert rep.mean("max_fdp") >= rep.mean("final_fdp")


def test_sign_test():
    assert sign_test_pvalue(np.ones(10)) == pytest.approx(0.5 ** 10)
    assert sign_test_pvalue(np.zeros(5)) == 1.0
    assert sign_test_pvalue([1, -1, 0, 1]) == pytest.approx(0.5)
