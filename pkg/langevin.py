# langevin.py
"""
Memory lifecycle as Euler-Maruyama Langevin dynamics on the Poincaré ball.

Each memory carries a point xi in an 8-dimensional ball. The radius decides
its lifecycle band; maintenance passes step every point under the importance
potential and access events contract it toward the origin.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping

import numpy as np
from scipy.integrate import cumulative_trapezoid

from errors import DimensionMismatchError, PreconditionError
from hyperbolic import BallPoint, project_rows

log = logging.getLogger("geomem.langevin")

D_STATE = 8


class LifecycleState(IntEnum):
    ACTIVE = 0
    WARM = 1
    COLD = 2
    ARCHIVED = 3


@dataclass(frozen=True)
class PotentialParams:
    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 0.5
    temperature: float = 0.1
    dt: float = 0.01
    correction_coeff: float = 0.5  # 1.0 gives the exact (1-|xi|^2)^-d Gibbs law in any dimension

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("alpha, beta, gamma must be non-negative")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not (0 < self.dt <= 0.1):
            raise ValueError("dt must be in (0, 0.1]")


@dataclass(frozen=True)
class LifecycleThresholds:
    warm: float = 0.5
    cold: float = 0.75
    archived: float = 0.9

    def __post_init__(self):
        if not (0 < self.warm < self.cold < self.archived < 1):
            raise ValueError("need 0 < warm < cold < archived < 1")


@dataclass(frozen=True)
class LangevinState:
    xi: BallPoint
    last_step_time: float = 0.0

    @classmethod
    def initial(cls, dim: int = D_STATE, t: float = 0.0) -> "LangevinState":
        return cls(BallPoint.origin(dim), t)


# ---------------------------------------------------------------------------
# Potential
# ---------------------------------------------------------------------------

def potential(xi: BallPoint, n_access: int, relevance: float, p: PotentialParams) -> float:
    return p.alpha * xi.sq_norm - p.beta * n_access - p.gamma * relevance


def potential_gradient(xi, p: PotentialParams) -> np.ndarray:
    # access and relevance terms do not depend on xi
    coords = xi.coords if isinstance(xi, BallPoint) else np.asarray(xi, dtype=np.float64)
    return 2.0 * p.alpha * coords


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

def euler_maruyama(xi: np.ndarray, grad: np.ndarray, p: PotentialParams, noise: np.ndarray) -> np.ndarray:
    """One step for a batch of points, rows are memories."""
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    dim = xi.shape[1]
    inv_lam = (1.0 - np.sum(xi * xi, axis=1, keepdims=True)) / 2.0
    drift = -(inv_lam ** 2) * grad * p.dt
    correction = p.correction_coeff * p.temperature * (dim - 2) * inv_lam * xi * p.dt
    diffusion = np.sqrt(2.0 * p.temperature * p.dt) * inv_lam * noise
    return project_rows(xi + drift + correction + diffusion)


def langevin_step(s: LangevinState, grad_U, p: PotentialParams, noise, now: float | None = None) -> LangevinState:
    grad_U = np.asarray(grad_U, dtype=np.float64).reshape(-1)
    noise = np.asarray(noise, dtype=np.float64).reshape(-1)
    if grad_U.shape[0] != s.xi.dim or noise.shape[0] != s.xi.dim:
        raise DimensionMismatchError("gradient and noise must match the state dimension")
    nxt = euler_maruyama(s.xi.coords[None, :], grad_U[None, :], p, noise[None, :])[0]
    return LangevinState(BallPoint(nxt), s.last_step_time if now is None else now)


def access_boost(s: LangevinState, strength: float) -> LangevinState:
    if not (0 < strength <= 1):
        raise ValueError("strength must be in (0, 1]")
    return LangevinState(BallPoint((1.0 - strength) * s.xi.coords), s.last_step_time)


def lifecycle_of(xi: BallPoint, thresholds: LifecycleThresholds | None = None) -> LifecycleState:
    t = thresholds or LifecycleThresholds()
    r = xi.norm
    if r < t.warm:
        return LifecycleState.ACTIVE
    if r < t.cold:
        return LifecycleState.WARM
    if r < t.archived:
        return LifecycleState.COLD
    return LifecycleState.ARCHIVED


# ── Maintenance ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Transition:
    memory_id: str
    before: LifecycleState
    after: LifecycleState
    radius: float


@dataclass
class MaintenanceReport:
    states: dict[str, LangevinState]
    transitions: list[Transition]
    counts_before: dict[str, int]
    counts_after: dict[str, int]
    steps: int
    seed: int
    lifecycles: dict[str, LifecycleState] = field(default_factory=dict)


def _counts(states) -> dict[str, int]:
    c = Counter(states)
    return {s.name.lower(): c.get(s, 0) for s in LifecycleState}


def maintenance_pass(states: Mapping[str, LangevinState], p: PotentialParams, steps: int, rng_seed: int,
                     thresholds: LifecycleThresholds | None = None, now: float | None = None) -> MaintenanceReport:
    """
    Step every memory's point `steps` times with seeded noise. Memories are
    processed in id order so the noise stream is independent of dict order.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    ids = sorted(states)
    before = {mid: lifecycle_of(states[mid].xi, thresholds) for mid in ids}
    if steps == 0 or not ids:
        return MaintenanceReport(dict(states), [], _counts(before.values()), _counts(before.values()),
                                 steps, rng_seed, dict(before))

    xi = np.stack([states[mid].xi.coords for mid in ids])
    rng = np.random.default_rng(rng_seed)
    for _ in range(steps):
        noise = rng.standard_normal(xi.shape)
        xi = euler_maruyama(xi, potential_gradient(xi, p), p, noise)

    out: dict[str, LangevinState] = {}
    after: dict[str, LifecycleState] = {}
    transitions: list[Transition] = []
    for i, mid in enumerate(ids):
        stamp = states[mid].last_step_time if now is None else now
        st = LangevinState(BallPoint(xi[i]), stamp)
        out[mid] = st
        after[mid] = lifecycle_of(st.xi, thresholds)
        if after[mid] != before[mid]:
            transitions.append(Transition(mid, before[mid], after[mid], st.xi.norm))
    log.info("Maintenance: %d memories, %d steps, %d transitions", len(ids), steps, len(transitions))
    return MaintenanceReport(out, transitions, _counts(before.values()), _counts(after.values()),
                             steps, rng_seed, after)


# ---------------------------------------------------------------------------
# Stationary law
# ---------------------------------------------------------------------------

def stationary_density(xi: BallPoint, U_at_xi: float, T: float, d: int) -> float:
    if T <= 0:
        raise PreconditionError("stationary density needs T > 0")
    return (1.0 - xi.sq_norm) ** (-d) * np.exp(-U_at_xi / T)


def stationary_exponent(d: int, correction_coeff: float) -> float:
    """Power k of the conformal factor in the law the discretisation targets, lambda^k exp(-U/T)."""
    return 2.0 + correction_coeff * (d - 2)


def confining_potential(xi: np.ndarray, c: float = 1.0) -> np.ndarray:
    r2 = np.sum(np.atleast_2d(xi) ** 2, axis=1)
    return c / (1.0 - r2)


def confining_gradient(xi: np.ndarray, c: float = 1.0) -> np.ndarray:
    xi = np.atleast_2d(xi)
    r2 = np.sum(xi * xi, axis=1, keepdims=True)
    return 2.0 * c * xi / (1.0 - r2) ** 2


def stationary_radial_cdf(d: int, T: float, c: float = 1.0, correction_coeff: float = 0.5,
                          grid_size: int = 20_001):
    """
    CDF of |xi| under r^(d-1) (1-r^2)^(-k) exp(-c / (T (1-r^2))), normalised by
    trapezoidal integration. Returns a callable usable by scipy.stats.kstest.
    """
    if T <= 0:
        raise PreconditionError("stationary law needs T > 0")
    k = stationary_exponent(d, correction_coeff)
    r = np.linspace(0.0, 1.0 - 1e-9, grid_size)
    one_minus = 1.0 - r * r
    log_dens = (d - 1) * np.log(np.where(r > 0, r, 1.0)) - k * np.log(one_minus) - c / (T * one_minus)
    dens = np.where(r > 0, np.exp(log_dens - log_dens[r > 0].max()), 0.0) if d > 1 else np.exp(log_dens - log_dens.max())
    cdf = cumulative_trapezoid(dens, r, initial=0.0)
    cdf /= cdf[-1]
    return lambda x: np.interp(x, r, cdf)


def simulate_stationary_radii(d: int = 2, T: float = 0.2, dt: float = 1e-3, c: float = 1.0,
                              chains: int = 10_000, burn_in: int = 10_000, samples_per_chain: int = 10,
                              thin: int = 2_000, seed: int = 0, correction_coeff: float = 0.5) -> np.ndarray:
    """Run independent chains under the confining test potential and return sampled radii."""
    p = PotentialParams(alpha=0.0, beta=0.0, gamma=0.0, temperature=T, dt=dt, correction_coeff=correction_coeff)
    rng = np.random.default_rng(seed)
    xi = np.zeros((chains, d))
    out = []
    for step in range(burn_in + samples_per_chain * thin):
        xi = euler_maruyama(xi, confining_gradient(xi, c), p, rng.standard_normal(xi.shape))
        if step >= burn_in and (step - burn_in + 1) % thin == 0:
            out.append(np.linalg.norm(xi, axis=1))
    return np.concatenate(out)
