import numpy as np
import pytest

from rlaudit.bayes import make_default_prior
from rlaudit.core import build_trajectory
from rlaudit.generative import AlgorithmConfig, Exogenous, run_algorithm
from rlaudit.synth import SynthSpec, generate_user


def random_exogenous(rng, T, avail=0.8):
    context = np.column_stack([
        rng.random(T) < 0.5, rng.random(T) < 0.5, rng.random(T) < 0.5,
        rng.normal(size=T), rng.normal(size=T), rng.normal(size=T),
    ]).astype(float)
    return Exogenous(rng.random(T) < avail, context, (rng.random(T) < 0.1).astype(float))


def random_rows(rng, T, avail=0.8):
    """Per-t dicts for build_trajectory with arbitrary actions/rewards."""
    rows = []
    for _ in range(T):
        a = int(rng.random() < avail)
        rows.append(dict(
            available=a,
            context=dict(engagement=int(rng.random() < 0.5), variation=int(rng.random() < 0.5),
                         location=int(rng.random() < 0.5), temperature=float(rng.normal()),
                         prior_30min_steps=float(rng.normal()), yesterday_steps=float(rng.normal())),
            anti_sedentary=int(rng.random() < 0.1),
            action=int(a and rng.random() < 0.4),
            action_prob=0.4 if a else None,
            reward=float(rng.normal()) if a else None,
        ))
    return rows


@pytest.fixture
def prior():
    return make_default_prior()


@pytest.fixture
def algo(prior):
    return AlgorithmConfig(prior, 1.0)


@pytest.fixture(scope="session")
def synth_user():
    return generate_user(SynthSpec(n_users=1, T=120, seed=11), 0)


@pytest.fixture
def random_traj():
    def make(seed, T=40, avail=0.8):
        return build_trajectory(f"r{seed}", random_rows(np.random.default_rng(seed), T, avail))
    return make


def simulate(exo, algo, tape, alpha=None, beta=None, noise=None, **kw):
    T = exo.T
    alpha = np.asarray(make_default_prior().mu_alpha0) if alpha is None else alpha
    beta = np.zeros(5) if beta is None else beta
    noise = np.zeros(T) if noise is None else noise
    return run_algorithm(exo, algo, uniforms=np.atleast_2d(tape), alpha=alpha, beta=beta, residuals=noise, **kw)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int(k.rstrip("ab")), k)):
        ok, detail = results[key]
        terminalreporter.write_line(f"criterion {key:>3}: {'PASS' if ok else 'FAIL'}  {detail}")
