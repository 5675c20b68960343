# test_langevin.py
import numpy as np
import pytest
from scipy.stats import kstest, special_ortho_group

from errors import PreconditionError
from hyperbolic import BallPoint
from langevin import (D_STATE, LangevinState, LifecycleState, LifecycleThresholds, PotentialParams, access_boost,
                      euler_maruyama, langevin_step, lifecycle_of, maintenance_pass, potential, potential_gradient,
                      simulate_stationary_radii, stationary_density, stationary_exponent, stationary_radial_cdf)


def _state(*coords) -> LangevinState:
    c = np.zeros(D_STATE)
    c[:len(coords)] = coords
    return LangevinState(BallPoint(c), 0.0)


def _population(rng, n=50, radius=0.3) -> dict[str, LangevinState]:
    out = {}
    for i in range(n):
        v = rng.standard_normal(D_STATE)
        out[f"mem-{i:06d}"] = LangevinState(BallPoint(v / np.linalg.norm(v) * radius), 0.0)
    return out


# ── Potential ────────────────────────────────────────────────────────────────

def test_potential_examples():
    p = PotentialParams(alpha=1.0, beta=0.1, gamma=0.5)
    assert potential(BallPoint.origin(D_STATE), 0, 0.0, p) == 0.0
    assert potential(_state(0.5).xi, 3, 0.4, p) == pytest.approx(-0.25, abs=1e-15)


def test_potential_increases_with_radius():
    p = PotentialParams()
    values = [potential(_state(r).xi, 2, 0.3, p) for r in np.linspace(0, 0.99, 30)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_gradient_is_quadratic_term_only():
    p = PotentialParams(alpha=1.5)
    np.testing.assert_allclose(potential_gradient(_state(0.2, -0.1).xi, p)[:2], [0.6, -0.3])


def test_params_validation():
    with pytest.raises(ValueError):
        PotentialParams(dt=0.2)
    with pytest.raises(ValueError):
        PotentialParams(alpha=-1.0)
    with pytest.raises(ValueError):
        LifecycleThresholds(warm=0.8, cold=0.75)
    PotentialParams(temperature=0.0)


# ── Step ─────────────────────────────────────────────────────────────────────

def test_step_hand_example():
    p = PotentialParams(temperature=0.0, dt=0.1)
    grad = np.zeros(D_STATE)
    grad[0] = 1.0
    nxt = langevin_step(_state(0.5), grad, p, np.zeros(D_STATE))
    assert nxt.xi.coords[0] == pytest.approx(0.4859375, abs=1e-15)
    assert np.all(nxt.xi.coords[1:] == 0.0)


def test_zero_temperature_fixed_point(rng):
    p = PotentialParams(temperature=0.0)
    s = _state(0.3, -0.2, 0.1)
    nxt = langevin_step(s, np.zeros(D_STATE), p, rng.standard_normal(D_STATE))
    assert np.array_equal(nxt.xi.coords, s.xi.coords)


def test_origin_step_is_drift_plus_noise(rng):
    p = PotentialParams(temperature=0.2, dt=0.01)
    noise = rng.standard_normal(D_STATE)
    nxt = langevin_step(LangevinState.initial(), np.zeros(D_STATE), p, noise)
    np.testing.assert_allclose(nxt.xi.coords, np.sqrt(2 * 0.2 * 0.01) * 0.5 * noise, atol=1e-15)


def test_step_never_leaves_ball(rng):
    p = PotentialParams(temperature=0.1, dt=0.1)
    s = _state(0.999999)
    for _ in range(200):
        s = langevin_step(s, -1e6 * s.xi.coords, p, 1e3 * rng.standard_normal(D_STATE))
        assert s.xi.norm < 1.0


def test_step_deterministic(rng):
    p = PotentialParams()
    noise = rng.standard_normal((50, D_STATE))
    runs = []
    for _ in range(2):
        s = _state(0.2, 0.1)
        for n in noise:
            s = langevin_step(s, potential_gradient(s.xi, p), p, n)
        runs.append(s.xi.coords)
    assert np.array_equal(runs[0], runs[1])


def test_rotated_noise_gives_rotated_path(rng):
    p = PotentialParams(temperature=0.3)
    q = special_ortho_group.rvs(D_STATE, random_state=7)
    xi = np.full((1, D_STATE), 0.1)
    xr = xi @ q.T
    for _ in range(300):
        noise = rng.standard_normal((1, D_STATE))
        xi = euler_maruyama(xi, potential_gradient(xi, p), p, noise)
        xr = euler_maruyama(xr, potential_gradient(xr, p), p, noise @ q.T)
    assert np.linalg.norm(xi) == pytest.approx(np.linalg.norm(xr), abs=1e-10)


# ── Lifecycle ────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("r, state", [(0.3, LifecycleState.ACTIVE), (0.6, LifecycleState.WARM),
                                      (0.8, LifecycleState.COLD), (0.95, LifecycleState.ARCHIVED),
                                      (0.5, LifecycleState.WARM)])
def test_lifecycle_bands(r, state):
    assert lifecycle_of(_state(r).xi) is state


def test_lifecycle_order():
    assert LifecycleState.ACTIVE < LifecycleState.WARM < LifecycleState.COLD < LifecycleState.ARCHIVED


def test_access_boost_examples(rng):
    assert access_boost(_state(0.8), 1.0).xi.norm == 0.0
    assert access_boost(_state(0.8), 0.5).xi.norm == pytest.approx(0.4)
    for _ in range(100):
        s = _state(*rng.uniform(-0.35, 0.35, D_STATE))
        assert lifecycle_of(access_boost(s, rng.uniform(0.01, 1.0)).xi) <= lifecycle_of(s.xi)
    with pytest.raises(ValueError):
        access_boost(_state(0.1), 0.0)


# ── Maintenance ──────────────────────────────────────────────────────────────

def test_zero_steps_changes_nothing(rng):
    states = _population(rng)
    rep = maintenance_pass(states, PotentialParams(), 0, 3)
    assert rep.transitions == []
    assert all(rep.states[k] == v for k, v in states.items())
    assert rep.counts_before == rep.counts_after


def test_maintenance_deterministic_and_order_free(rng):
    states = _population(rng)
    p = PotentialParams(temperature=0.5)
    a = maintenance_pass(states, p, 25, 11)
    b = maintenance_pass(dict(reversed(list(states.items()))), p, 25, 11)
    for k in states:
        assert np.array_equal(a.states[k].xi.coords, b.states[k].xi.coords)
    assert a.transitions == b.transitions


def test_maintenance_report(rng):
    states = _population(rng, n=40, radius=0.45)
    rep = maintenance_pass(states, PotentialParams(temperature=1.0, dt=0.1), 50, 2, now=123.0)
    assert sum(rep.counts_before.values()) == sum(rep.counts_after.values()) == 40
    assert rep.counts_before == {"active": 40, "warm": 0, "cold": 0, "archived": 0}
    for t in rep.transitions:
        assert t.before != t.after
        assert rep.lifecycles[t.memory_id] is t.after
    assert all(s.last_step_time == 123.0 for s in rep.states.values())


def test_recentred_population_stays_closer(rng):
    p = PotentialParams(temperature=0.5, dt=0.05)
    cold = _population(rng, n=100, radius=0.0)
    warm = dict(cold)
    for chunk in range(100):
        cold = maintenance_pass(cold, p, 100, chunk).states
        warm = {k: access_boost(v, 0.5) for k, v in maintenance_pass(warm, p, 100, chunk).states.items()}
    mean_cold = np.mean([s.xi.norm for s in cold.values()])
    mean_warm = np.mean([s.xi.norm for s in warm.values()])
    assert mean_cold > mean_warm


# ── Stationary law ───────────────────────────────────────────────────────────

def test_stationary_density_examples():
    assert stationary_density(BallPoint.origin(2), 0.0, 0.5, 2) == 1.0
    a, b = BallPoint([0.3, 0.0]), BallPoint([0.0, 0.6])
    ratio = stationary_density(a, 0.2, 0.5, 2) / stationary_density(b, 0.2, 0.5, 2)
    assert ratio == pytest.approx(((1 - 0.36) / (1 - 0.09)) ** 2, rel=1e-12)
    with pytest.raises(PreconditionError):
        stationary_density(a, 0.0, 0.0, 2)


def test_stationary_exponent():
    assert stationary_exponent(2, 0.5) == 2.0
    assert stationary_exponent(8, 1.0) == 8.0
    assert stationary_exponent(8, 0.5) == 5.0


def test_radial_cdf_is_a_cdf():
    cdf = stationary_radial_cdf(2, 0.2)
    xs = np.linspace(0, 1, 101)
    vals = cdf(xs)
    assert vals[0] == 0.0 and vals[-1] == pytest.approx(1.0)
    assert np.all(np.diff(vals) >= 0)


@pytest.mark.slow
def test_simulated_radii_match_stationary_law():
    radii = simulate_stationary_radii(d=2, T=0.2, seed=5)
    assert radii.size == 100_000
    assert kstest(radii, stationary_radial_cdf(2, 0.2)).statistic < 0.05
