import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq
from scipy.stats import binomtest

from rlaudit.policy import (
    DegenerateVarianceError,
    ThresholdPolicy,
    action_probability,
    clip_prob,
    eta_evaluate,
    normal_cdf,
    sample_action,
    standardized_advantage,
)


def test_clip_endpoints_exact():
    assert clip_prob(0.5) == 0.2
    assert clip_prob(1.0) == 0.8
    assert clip_prob(0.0) == 0.2
    assert clip_prob(0.875) == 0.8


def test_clip_rejects_out_of_range():
    for p in (-0.01, 1.01, float("nan")):
        with pytest.raises(ValueError):
            clip_prob(p)


@settings(max_examples=300)
@given(st.floats(0, 1), st.floats(0, 1))
def test_clip_monotone_and_bounded(p, q):
    lo, hi = sorted((p, q))
    assert 0.2 <= clip_prob(lo) <= clip_prob(hi) <= 0.8


def test_normal_cdf_roundtrip_at_inflection():
    # h starts rising where Phi(x) = 0.5; invert with a bracketing root finder
    x = brentq(lambda z: normal_cdf(z) - 0.5, -1, 1, xtol=1e-15)
    assert abs(x) < 1e-9
    z = brentq(lambda z: math.erf(z / math.sqrt(2)) / 2 + 0.5 - 0.875, 0, 3, xtol=1e-15)
    assert abs(float(normal_cdf(z)) - 0.875) < 1e-12


def test_prior_forecast_value():
    # derived: intercept-only f at the prior, 0.47 / sqrt(4.93)
    d = standardized_advantage([0.47, 0, 0, 0, 0], np.diag([4.93, 24.56, 4.95, 0.67, 0.82]),
                               [1, 0, 0, 0, 0], 0.0)
    assert d == pytest.approx(0.21167735408219, abs=1e-12)
    assert action_probability(d) == pytest.approx(0.2 + 1.6 * (0.5 * math.erfc(-d / math.sqrt(2)) - 0.5))


def test_standardized_advantage_batched():
    rng = np.random.default_rng(1)
    mu = rng.normal(size=(4, 5))
    A = rng.normal(size=(4, 5, 5))
    sig = A @ np.swapaxes(A, 1, 2) + np.eye(5)
    f = rng.normal(size=(4, 5))
    out = standardized_advantage(mu, sig, f, 0.3)
    for i in range(4):
        assert out[i] == pytest.approx((mu[i] @ f[i] - 0.3) / math.sqrt(f[i] @ sig[i] @ f[i]))


def test_degenerate_variance():
    with pytest.raises(DegenerateVarianceError):
        standardized_advantage(np.ones(5), np.zeros((5, 5)), np.ones(5), 0.0)


def test_sample_action_frequency():
    rng = np.random.default_rng(7)
    n = 20000
    hits = sum(sample_action(0.3, rng) for _ in range(n))
    assert binomtest(hits, n, 0.3).pvalue > 1e-3


def test_sample_action_consumes_one_uniform():
    a, b = np.random.default_rng(5), np.random.default_rng(5)
    sample_action(0.5, a)
    b.random()
    assert a.random() == b.random()


def test_threshold_policy():
    assert ThresholdPolicy().evaluate(3.0) == 0.0
    np.testing.assert_array_equal(ThresholdPolicy(0.2).evaluate(np.ones(3)), [0.2] * 3)
    hooked = ThresholdPolicy(hook=lambda x: 0.1 * np.asarray(x))
    assert eta_evaluate(hooked, 2.0) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        eta_evaluate(hooked, 25.0)
    with pytest.raises(ValueError):
        eta_evaluate(ThresholdPolicy(hook=lambda x: float("nan")), 1.0)
    bumped = ThresholdPolicy(updater=lambda p, batch: ThresholdPolicy(p.value + 1, updater=p.updater))
    assert not bumped.is_static
    assert bumped.update({}).value == 1.0
