import numpy as np
import pytest

from ctxfdr.core import make_events


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_stream(rng, n, pi1=0.3, mu=2.5, d=0, labels=True):
    """Two-sided normal-means stream with optional context columns."""
    from scipy.stats import norm
    h = (rng.random(n) < pi1).astype(int)
    z = rng.standard_normal(n) + mu * h
    p = np.clip(2 * norm.sf(np.abs(z)), 1e-300, 1 - 1e-16)
    ctx = rng.standard_normal((n, d)) if d else None
    return make_events(p, ctx, h if labels else None)
