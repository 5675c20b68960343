# hyperbolic.py
"""
Poincaré ball primitives (curvature -1): conformal factor, geodesic distance,
Möbius addition, exponential and logarithmic maps. Float64 throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from errors import DimensionMismatchError, InvalidPointError

MAX_NORM = 1.0 - 1e-12


def _vector(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


def project_rows(x: np.ndarray) -> np.ndarray:
    """Scale any row with norm >= MAX_NORM back onto the MAX_NORM sphere."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    over = norms >= MAX_NORM
    if not np.any(over):
        return x
    scale = np.where(over, MAX_NORM / np.where(over, norms, 1.0), 1.0)
    return x * scale


@dataclass(frozen=True, eq=False)
class BallPoint:
    coords: np.ndarray

    def __post_init__(self):
        arr = _vector(self.coords)
        if not np.all(np.isfinite(arr)):
            raise InvalidPointError("ball point has non-finite coordinates")
        if float(np.dot(arr, arr)) >= 1.0:
            raise InvalidPointError(f"norm {np.linalg.norm(arr):.6g} is not inside the unit ball")
        object.__setattr__(self, "coords", arr)

    @classmethod
    def origin(cls, dim: int) -> "BallPoint":
        return cls(np.zeros(dim))

    @classmethod
    def clamped(cls, values) -> "BallPoint":
        arr = np.array(values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise InvalidPointError("ball point has non-finite coordinates")
        return cls(project_rows(arr))

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    @property
    def sq_norm(self) -> float:
        return float(np.dot(self.coords, self.coords))

    @property
    def norm(self) -> float:
        return math.sqrt(self.sq_norm)

    def __eq__(self, other) -> bool:
        return isinstance(other, BallPoint) and np.array_equal(self.coords, other.coords)

    def __hash__(self) -> int:
        return hash(self.coords.tobytes())

    def __neg__(self) -> "BallPoint":
        return BallPoint(-self.coords)


@dataclass(frozen=True, eq=False)
class TangentVector:
    base: BallPoint
    direction: np.ndarray

    def __post_init__(self):
        arr = _vector(self.direction)
        if arr.shape[0] != self.base.dim:
            raise DimensionMismatchError(f"tangent dim {arr.shape[0]} != base dim {self.base.dim}")
        if not np.all(np.isfinite(arr)):
            raise InvalidPointError("tangent direction has non-finite components")
        object.__setattr__(self, "direction", arr)

    @property
    def euclidean_norm(self) -> float:
        return float(np.linalg.norm(self.direction))

    @property
    def riemannian_norm(self) -> float:
        return conformal_factor(self.base) * self.euclidean_norm


def _check_dims(x: BallPoint, y: BallPoint) -> None:
    if x.dim != y.dim:
        raise DimensionMismatchError(f"dims {x.dim} and {y.dim} differ")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def conformal_factor(x: BallPoint) -> float:
    return 2.0 / (1.0 - x.sq_norm)


def ball_distance(x: BallPoint, y: BallPoint) -> float:
    # arccosh(1 + 2u) == 2 asinh(sqrt(u)); the asinh form keeps precision near 0.
    _check_dims(x, y)
    diff = x.coords - y.coords
    num = float(np.dot(diff, diff))
    if num == 0.0:
        return 0.0
    den = (1.0 - x.sq_norm) * (1.0 - y.sq_norm)
    return 2.0 * math.asinh(math.sqrt(num / den))


def _mobius_add(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xy = float(np.dot(x, y))
    x2 = float(np.dot(x, x))
    y2 = float(np.dot(y, y))
    num = (1.0 + 2.0 * xy + y2) * x + (1.0 - x2) * y
    den = 1.0 + 2.0 * xy + x2 * y2
    return num / den


def mobius_add(x: BallPoint, y: BallPoint) -> BallPoint:
    _check_dims(x, y)
    return BallPoint.clamped(_mobius_add(x.coords, y.coords))


def exp_map(x: BallPoint, v: TangentVector) -> BallPoint:
    if v.base != x:
        raise InvalidPointError("tangent vector is not based at x")
    v_norm = v.euclidean_norm
    if v_norm == 0.0:
        return x
    step = math.tanh(conformal_factor(x) * v_norm / 2.0) * (v.direction / v_norm)
    step = project_rows(step)
    return BallPoint.clamped(_mobius_add(x.coords, step))


def log_map(x: BallPoint, y: BallPoint) -> TangentVector:
    _check_dims(x, y)
    if x == y:
        return TangentVector(x, np.zeros(x.dim))
    u = _mobius_add(-x.coords, y.coords)
    u_norm = float(np.linalg.norm(u))
    if u_norm == 0.0:
        return TangentVector(x, np.zeros(x.dim))
    u_norm = min(u_norm, MAX_NORM)
    scale = (2.0 / conformal_factor(x)) * math.atanh(u_norm) / u_norm
    return TangentVector(x, scale * u)


def geodesic_length(points: np.ndarray) -> float:
    """Riemannian length of a polyline through the ball, midpoint rule on each segment."""
    pts = np.asarray(points, dtype=np.float64)
    seg = np.diff(pts, axis=0)
    mid = 0.5 * (pts[1:] + pts[:-1])
    lam = 2.0 / (1.0 - np.sum(mid * mid, axis=1))
    return float(np.sum(lam * np.linalg.norm(seg, axis=1)))
