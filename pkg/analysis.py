# analysis.py
"""
Scale analysis of cosine retrieval and the associative-memory extensions:
spherical-cap concentration, top-K signal-to-noise, contradiction growth,
rate-distortion depth, and modern Hopfield energy/update. Analysis only,
nothing here feeds retrieval scores.

    python -m analysis --d 384 --eps 0.05 --n 1000 10000 100000 > scale.csv
"""
from __future__ import annotations

import argparse
import math
import sys

import numpy as np
import pandas as pd
from scipy.special import betainc, logsumexp, softmax
from scipy.stats import entropy

from errors import PreconditionError
from info_geometry import GaussianEmbedding, estimate_variance, fisher_breaks_tie


# ---------------------------------------------------------------------------
# Concentration
# ---------------------------------------------------------------------------

def _check_sphere(d, eps) -> None:
    if int(d) != d or d < 2:
        raise PreconditionError("d must be an integer >= 2")
    if not (0 < eps <= 2):
        raise PreconditionError("eps must be in (0, 2]")


def cap_fraction(d: int, eps: float) -> float:
    """
    Fraction of the unit sphere in R^d with 1 - <q, v> <= eps. For a cap of
    polar angle theta <= pi/2 this is 1/2 I_{sin^2 theta}((d-1)/2, 1/2), and
    sin^2 theta = eps (2 - eps); caps past the equator use the complement.
    """
    _check_sphere(d, eps)
    x = eps * (2.0 - eps)
    half = 0.5 * float(betainc((d - 1) / 2.0, 0.5, x))
    return half if eps <= 1.0 else 1.0 - half


def cap_fraction_monte_carlo(d: int, eps: float, samples: int = 1_000_000,
                             seed: int = 0) -> tuple[float, float]:
    """(estimate, standard error). The first coordinate of a uniform point is g / sqrt(g^2 + chi2_{d-1})."""
    _check_sphere(d, eps)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(samples)
    rest = rng.chisquare(d - 1, samples)
    cos = g / np.sqrt(g * g + rest)
    p = float(np.mean(cos >= 1.0 - eps))
    return p, math.sqrt(max(p * (1.0 - p), 1e-300) / samples)


def expected_neighbor_count(N: int, d: int, eps: float) -> float:
    if N < 0:
        raise PreconditionError("N must be non-negative")
    return N * cap_fraction(d, eps)


def cosine_snr(N: int, K_rel: int, d: int, eps: float) -> float:
    if K_rel < 1:
        raise PreconditionError("K_rel must be >= 1")
    return K_rel / max(float(K_rel), expected_neighbor_count(N, d, eps))


def expected_contradictions(N: int, p_c: float) -> float:
    if N < 0 or not (0 <= p_c <= 1):
        raise PreconditionError("need N >= 0 and p_c in [0, 1]")
    return N * (N - 1) / 2.0 * p_c


def contradiction_probability(N: int, p_c: float) -> float:
    """Probability that at least one of the C(N, 2) pairs is an undetected contradiction."""
    if N < 0 or not (0 <= p_c <= 1):
        raise PreconditionError("need N >= 0 and p_c in [0, 1]")
    pairs = N * (N - 1) / 2.0
    if pairs == 0 or p_c == 0:
        return 0.0
    if p_c == 1:
        return 1.0
    return float(-np.expm1(pairs * np.log1p(-p_c)))


# ---------------------------------------------------------------------------
# Depth
# ---------------------------------------------------------------------------

def _check_depth(N, r) -> None:
    if N < 1:
        raise PreconditionError("N must be >= 1")
    if r <= 1:
        raise PreconditionError("r must be > 1")


def optimal_depth(N: int, r: float) -> float:
    """log N / (2 log r)."""
    _check_depth(N, r)
    return math.log2(N) / (2.0 * math.log2(r))


def derived_depth(N: int, r: float) -> float:
    """log N / log r, the level count before halving for the two-sided bound."""
    _check_depth(N, r)
    return math.log2(N) / math.log2(r)


def progressive_depth_budget(N: int) -> int:
    if N < 1:
        raise PreconditionError("N must be >= 1")
    return math.ceil(math.log2(N)) if N > 1 else 0


def distortion_at_depth(D0: float, r: float, L: float) -> float:
    if r <= 1 or L < 0:
        raise PreconditionError("need r > 1 and L >= 0")
    return D0 * r ** (-L)


# ---------------------------------------------------------------------------
# Hopfield
# ---------------------------------------------------------------------------

def _patterns(patterns, xi) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(patterns, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] == 0:
        raise PreconditionError("patterns must be a d x M matrix with M >= 1")
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    if xi.shape[0] != X.shape[0]:
        raise PreconditionError(f"state has dim {xi.shape[0]}, patterns have dim {X.shape[0]}")
    return X, xi


def hopfield_energy(patterns, xi, beta: float) -> float:
    X, xi = _patterns(patterns, xi)
    if beta <= 0:
        raise PreconditionError("beta must be positive")
    M = X.shape[1]
    lse = float(logsumexp(beta * (X.T @ xi))) / beta
    return -lse + 0.5 * float(xi @ xi) + math.log(M) / beta + 0.5 * float(np.max(np.sum(X * X, axis=0)))


def hopfield_update(patterns, xi, beta: float) -> np.ndarray:
    X, xi = _patterns(patterns, xi)
    if beta < 0:
        raise PreconditionError("beta must be non-negative")
    return X @ softmax(beta * (X.T @ xi))


def effective_memory_count(patterns, xi, beta: float) -> float:
    """exp of the entropy of the retrieval weights: 1 for a clean hit, M for a uniform blend."""
    X, xi = _patterns(patterns, xi)
    return float(np.exp(entropy(softmax(beta * (X.T @ xi)))))


def separation(patterns) -> float:
    X = np.asarray(patterns, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise PreconditionError("separation needs at least two patterns")
    G = X.T @ X
    own = np.diag(G).copy()
    np.fill_diagonal(G, -np.inf)
    return float(np.min(own - G.max(axis=1)))


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def heteroscedastic_tie_pairs(n_pairs: int = 500, d: int = 64, seed: int = 0,
                              noise: float = 0.1) -> pd.DataFrame:
    """
    Cosine-tied pairs sharing one mean: member a has the variance profile
    estimated from its mean (confident where the query is large), member b
    the mirrored profile. One row per pair with both distances.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_pairs):
        qv = rng.standard_normal(d)
        qv /= np.linalg.norm(qv)
        mv = qv + noise * rng.standard_normal(d) / math.sqrt(d)
        mv /= np.linalg.norm(mv)
        q = estimate_variance(qv)
        a = estimate_variance(mv)
        lo, hi = float(a.var.min()), float(a.var.max())
        b = GaussianEmbedding(mv, lo + hi - a.var)
        tb = fisher_breaks_tie(q, a, b)
        rows.append({"pair": i, "d_a": tb.d_a, "d_b": tb.d_b, "condition": tb.condition,
                     "broken": tb.broken, "winner": tb.winner,
                     "low_variance_first": tb.winner == "a"})
    return pd.DataFrame(rows)


def scale_table(ns, d: int = 384, eps: float = 0.05, k_rel: int = 5, p_c: float = 1e-6,
                r: float = 2.0) -> pd.DataFrame:
    rows = []
    for N in ns:
        N = int(N)
        rows.append({
            "N": N,
            "cap_fraction": cap_fraction(d, eps),
            "expected_neighbors": expected_neighbor_count(N, d, eps),
            "cosine_snr": cosine_snr(N, k_rel, d, eps),
            "expected_contradictions": expected_contradictions(N, p_c),
            "contradiction_probability": contradiction_probability(N, p_c),
            "optimal_depth": optimal_depth(max(N, 1), r),
            "depth_budget": progressive_depth_budget(max(N, 1)),
        })
    return pd.DataFrame(rows)


if __name__ == "__main__":
    cli = argparse.ArgumentParser(description="Scale table as CSV")
    cli.add_argument("--d", type=int, default=384)
    cli.add_argument("--eps", type=float, default=0.05)
    cli.add_argument("--k-rel", type=int, default=5)
    cli.add_argument("--p-c", type=float, default=1e-6)
    cli.add_argument("--r", type=float, default=2.0)
    cli.add_argument("--n", type=int, nargs="+", default=[10 ** k for k in range(1, 7)])
    args = cli.parse_args()
    scale_table(args.n, args.d, args.eps, args.k_rel, args.p_c, args.r).to_csv(sys.stdout, index=False)
