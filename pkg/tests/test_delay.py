import math

import numpy as np
import pytest

from gridloop.netsim.delay import BROKEN, Dedicated, HighImpairment, Shared, model_for, sample_delay

N = 100_000


def draw(model, seed=1234, n=N):
    rng = np.random.default_rng(seed)
    return np.array([sample_delay(model, rng) for _ in range(n)])


def test_dedicated_mean():
    d = draw(Dedicated())
    # base + scale / rate = 10 + 50
    assert abs(d.mean() - 60.0) <= 1.0
    assert d.min() >= 10.0


def test_shared_moments():
    d = draw(Shared())
    assert abs(d.mean() - 250.0) <= 0.5
    assert abs(d.std(ddof=1) - 20.0) <= 0.5


def test_high_impairment_floor_and_breaks():
    m = HighImpairment()
    d = draw(m)
    finite = d[np.isfinite(d)]
    assert finite.min() >= 100.0 and finite.max() <= 2000.0
    assert abs(np.mean(~np.isfinite(d)) - m.p_break) <= 0.01


def test_seeded_draws_repeat():
    assert np.array_equal(draw(Shared(), n=50), draw(Shared(), n=50))


def test_degenerate_models():
    assert set(draw(HighImpairment(min_ms=300, max_ms=300, p_break=0), n=100)) == {300.0}
    assert all(x == BROKEN for x in draw(HighImpairment(p_break=1.0), n=100))
    assert not any(math.isinf(x) for x in draw(HighImpairment(p_break=0.0), n=1000))


@pytest.mark.parametrize("bad", [
    lambda: Dedicated(rate=0),
    lambda: Shared(sd_ms=-1),
    lambda: HighImpairment(min_ms=500, max_ms=100),
    lambda: HighImpairment(p_break=1.5),
    lambda: Dedicated(base_ms=math.inf),
])
def test_invalid_parameters(bad):
    with pytest.raises(ValueError):
        bad()


def test_model_for_names():
    assert isinstance(model_for("shared", mean_ms=5, sd_ms=1), Shared)
    assert model_for("dedicated").mean == 60.0
    with pytest.raises(ValueError):
        model_for("lunar")
