import numpy as np
import pytest

from rlaudit.generative import AlgorithmConfig, replay_observed
from rlaudit.bayes import make_default_prior
from rlaudit.synth import SynthSpec, generate_trial, generate_user, planted_cohort


def test_users_depend_only_on_seed_and_index():
    a = generate_trial(SynthSpec(n_users=3, T=60, seed=4))
    b = generate_user(SynthSpec(n_users=10, T=60, seed=4), 2)
    assert a[2] == b
    assert a[0] != a[1]


def test_generated_forecasts_replay_exactly():
    spec = SynthSpec(n_users=1, T=90, seed=1, missing_rate=0.1)
    u = generate_user(spec, 0)
    replay = replay_observed(u, AlgorithmConfig(make_default_prior(), 1.0))
    np.testing.assert_allclose(replay.advantage[0], u.advantage, atol=1e-10)
    assert tuple(replay.update_log) == u.posterior_update_log


def test_missing_rewards():
    u = generate_user(SynthSpec(n_users=1, T=200, seed=2, missing_rate=0.3), 0)
    miss = u.missing_array
    assert miss.any()
    assert all(p.reward is None for p in u.points if p.missing)
    assert not (miss & ~u.available_array).any()


def test_rates_roughly_respected():
    u = generate_user(SynthSpec(n_users=1, T=2000, seed=3, availability_rate=0.6), 0)
    assert abs(u.available_array.mean() - 0.6) < 0.05


def test_full_persistence_freezes_feature():
    u = generate_user(SynthSpec(n_users=1, T=50, seed=5, persistence=1.0), 0)
    v = u.feature_values("variation")
    assert np.all(v == v[0])


def test_planted_cohort():
    spec = SynthSpec(T=60, seed=9)
    c = planted_cohort(spec, 3, 2, 2.0)
    assert c.null_ids == ["u000", "u001", "u002"]
    assert c.effect_ids == ["u003", "u004"]
    plain = generate_trial(SynthSpec(n_users=3, T=60, seed=9))
    assert c.users[:3] == plain
    with pytest.raises(ValueError):
        planted_cohort(spec, 1, 1, -1.0)


def test_planted_effect_shows_in_forecasts():
    spec = SynthSpec(T=300, seed=2)
    c = planted_cohort(spec, 1, 1, 3.0)
    null, effect = (np.asarray(u.advantage)[-100:].mean() for u in c.users)
    assert effect > null


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(availability_rate=1.5)
    with pytest.raises(ValueError):
        SynthSpec(true_beta=(1.0,))
    with pytest.raises(ValueError):
        SynthSpec(noise_sd=0.0)
