import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlaudit.core import (
    DIM_PHI,
    ContextFeatures,
    DataQualityError,
    DecisionPoint,
    Trajectory,
    build_f,
    build_g,
    build_phi,
    build_phi_tilde,
    build_trajectory,
    day_of,
    f_matrix,
    g_matrix,
    n_days,
    update_dosage,
    update_guard,
)

from conftest import random_rows


def point(t=1, **kw):
    ctx = kw.pop("context", ContextFeatures(1, 0, 1, 0.5, -1.0, 2.0))
    return DecisionPoint(t, kw.pop("available", 1), ctx, **kw)


def test_feature_layout():
    p = point(dosage=0.0)
    assert build_g(p).tolist() == [1.0, 0.5, -1.0, 2.0, 0.0, 1.0, 1.0, 0.0]
    assert build_f(p).tolist() == [1.0, 0.0, 1.0, 1.0, 0.0]
    phi = build_phi(p, 1, 0.25)
    assert phi.shape == (DIM_PHI,)
    np.testing.assert_allclose(phi[8:13], 0.25 * build_f(p))
    np.testing.assert_allclose(phi[13:], 0.75 * build_f(p))
    np.testing.assert_allclose(build_phi_tilde(p, 0)[8:], 0.0)


def test_vectorised_features_match_scalar():
    rng = np.random.default_rng(0)
    rows = random_rows(rng, 15)
    traj = build_trajectory("u", rows)
    G = g_matrix(traj.context_matrix, traj.dosage_array)
    F = f_matrix(traj.context_matrix, traj.dosage_array)
    for i, p in enumerate(traj.points):
        np.testing.assert_array_equal(G[i], build_g(p))
        np.testing.assert_array_equal(F[i], build_f(p))


@pytest.mark.parametrize("prob,action", [(-0.1, 1), (1.5, 0), (0.5, 2)])
def test_build_phi_rejects_bad_inputs(prob, action):
    with pytest.raises(ValueError):
        build_phi(point(), action, prob)


def test_day_indexing():
    assert [day_of(t) for t in (1, 5, 6, 10, 11)] == [1, 1, 2, 2, 3]
    assert n_days(450) == 90
    assert n_days(452) == 91


def test_dosage_recursion_check():
    p1 = point(1, action=1)
    bad = point(2, dosage=0.5)
    with pytest.raises(DataQualityError, match="recursion"):
        Trajectory("u", (p1, bad))
    ok = point(2, dosage=1.0)
    assert Trajectory("u", (p1, ok)).T == 2


def test_non_contiguous_times_rejected():
    with pytest.raises(DataQualityError, match="contiguous"):
        Trajectory("u", (point(1), point(3)))


@pytest.mark.parametrize("kw", [dict(available=0, action=1), dict(dosage=25.0), dict(action_prob=1.2),
                                dict(reward=float("nan"))])
def test_decision_point_validation(kw):
    with pytest.raises(DataQualityError):
        point(**kw)


def test_binary_context_validation():
    with pytest.raises(DataQualityError):
        ContextFeatures(engagement=2)
    with pytest.raises(DataQualityError):
        ContextFeatures(temperature=float("inf"))


def test_update_guard():
    avail = np.zeros(12, bool)
    avail[[0, 7]] = True
    # day 3 is incomplete and never gets a nightly update
    assert update_guard(avail) == (True, True, False)
    assert update_guard(np.zeros(10, bool)) == (False, False)


def test_usable_excludes_missing():
    assert point(reward=1.0).usable
    assert not point(reward=1.0, missing=True).usable
    assert not point(reward=None).usable
    assert not point(available=0, reward=1.0).usable


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=400))
def test_dosage_stays_in_range(seq):
    x = 0.0
    for a, b in seq:
        x = update_dosage(x, a, b)
        assert 0.0 <= x < 20.0


def test_build_trajectory_recomputes_dosage():
    rows = random_rows(np.random.default_rng(3), 30)
    traj = build_trajectory("u", rows)
    x = 0.0
    for i, p in enumerate(traj.points):
        assert p.dosage == pytest.approx(x, abs=1e-12)
        x = 0.95 * x + max(p.action or 0, p.anti_sedentary)
