"""Closed-form operations on the Poincare ball of curvature -c.

Points are numpy arrays whose last axis holds the coordinates; leading axes
broadcast. Everything is evaluated in float64 regardless of the input dtype,
because artanh near the boundary loses most of its digits in float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError

BALL_EPS = 1e-5
# below this |sqrt(c) * norm| the tanh(s)/s style ratios use their series
_SMALL = 1e-7


def _as64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_c(c: float) -> float:
    c = float(c)
    if not np.isfinite(c) or c <= 0.0:
        raise UsageError(f"curvature must be a positive finite number, got {c!r}")
    return c


def _check_same_dim(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[-1:] != y.shape[-1:]:
        raise UsageError(f"dimension mismatch: {x.shape[-1:]} vs {y.shape[-1:]}")


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1, keepdims=True)


def max_radius(c: float) -> float:
    """Largest norm a stored point may have: (1 - eps) / sqrt(c)."""
    return (1.0 - BALL_EPS) / np.sqrt(_check_c(c))


def project_to_ball(x, c: float) -> np.ndarray:
    """Rescale any row with c*|x|^2 >= (1 - eps)^2 onto the safety radius."""
    x = _as64(x)
    if not np.all(np.isfinite(x)):
        raise UsageError("project_to_ball: non-finite input")
    r_max = max_radius(c)
    norm = np.sqrt(_sqnorm(x))
    # land a few ulps inside the radius so rounding never leaves c|x|^2 above (1 - eps)^2
    target = r_max * (1.0 - 8 * np.finfo(np.float64).eps)
    scale = np.where(norm >= r_max, target / np.maximum(norm, 1e-300), 1.0)
    return x * scale


def conformal_factor(x, c: float) -> np.ndarray:
    """lambda_x = 2 / (1 - c |x|^2), with a trailing singleton axis kept."""
    c = _check_c(c)
    x = _as64(x)
    return 2.0 / (1.0 - c * _sqnorm(x))


def mobius_add(x, y, c: float, project: bool = True) -> np.ndarray:
    """Gyrovector sum x (+)_c y; rows are added pairwise with broadcasting."""
    c = _check_c(c)
    x, y = _as64(x), _as64(y)
    _check_same_dim(x, y)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise UsageError("mobius_add: non-finite input")
    xy = np.sum(x * y, axis=-1, keepdims=True)
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    out = num / den
    return project_to_ball(out, c) if project else out


def _tanh_ratio(s: np.ndarray) -> np.ndarray:
    """tanh(s)/s with the s -> 0 limit."""
    safe = np.where(s < _SMALL, 1.0, s)
    return np.where(s < _SMALL, 1.0 - s * s / 3.0, np.tanh(safe) / safe)


def _artanh_ratio(s: np.ndarray) -> np.ndarray:
    """artanh(s)/s with the s -> 0 limit."""
    safe = np.where(s < _SMALL, 0.5, s)
    return np.where(s < _SMALL, 1.0 + s * s / 3.0, np.arctanh(safe) / safe)


def exp0(v, c: float) -> np.ndarray:
    """Exponential map at the origin; the zero vector maps to the origin."""
    c = _check_c(c)
    v = _as64(v)
    if not np.all(np.isfinite(v)):
        raise UsageError("exp0: non-finite tangent vector")
    s = np.sqrt(c) * np.sqrt(_sqnorm(v))
    return project_to_ball(_tanh_ratio(s) * v, c)


def log0(y, c: float) -> np.ndarray:
    """Logarithmic map at the origin (inverse of :func:`exp0`)."""
    c = _check_c(c)
    y = _as64(y)
    if not np.all(np.isfinite(y)):
        raise UsageError("log0: non-finite point")
    s = np.sqrt(c) * np.sqrt(_sqnorm(y))
    if np.any(s >= 1.0):
        raise UsageError("log0: point lies on or outside the ball boundary")
    return _artanh_ratio(s) * y


def distance(x, y, c: float) -> np.ndarray:
    """Geodesic distance (2/sqrt c) artanh(sqrt c |(-x) (+) y|), shape (...,).

    Evaluated through c|(-x) (+) y|^2 = delta / (1 + delta) with
    delta = c|x-y|^2 / ((1 - c|x|^2)(1 - c|y|^2)), which is symmetric in x and y
    term by term, so d(x, y) == d(y, x) holds bitwise.
    """
    c = _check_c(c)
    x, y = _as64(x), _as64(y)
    _check_same_dim(x, y)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise UsageError("distance: non-finite input")
    x, y = project_to_ball(x, c), project_to_ball(y, c)
    diff2 = np.sum((x - y) ** 2, axis=-1)
    delta = c * diff2 / ((1.0 - c * np.sum(x * x, axis=-1)) * (1.0 - c * np.sum(y * y, axis=-1)))
    return (2.0 / np.sqrt(c)) * np.arctanh(np.sqrt(delta / (1.0 + delta)))


def exp_at(x, v, c: float) -> np.ndarray:
    """Exponential map at an arbitrary base point x.

    x (+) (tanh(sqrt c * lambda_x |v| / 2) / (sqrt c |v|)) v ; at x = 0 this is exp0.
    """
    c = _check_c(c)
    x, v = _as64(x), _as64(v)
    _check_same_dim(x, v)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise UsageError("exp_at: non-finite input")
    sc = np.sqrt(c)
    vnorm = np.sqrt(_sqnorm(v))
    lam = conformal_factor(x, c)
    arg = sc * lam * vnorm / 2.0
    # tanh(arg) / (sc |v|) = (lam/2) * tanh(arg)/arg
    coef = (lam / 2.0) * _tanh_ratio(arg)
    return mobius_add(x, coef * v, c)


def is_inside(x, c: float) -> bool:
    """True when every row obeys the stored-point invariant c|x|^2 <= (1-eps)^2."""
    x = _as64(x)
    return bool(np.all(_check_c(c) * _sqnorm(x) <= (1.0 - BALL_EPS) ** 2 * (1 + 1e-12)))


@dataclass(frozen=True)
class PoincareBall:
    """Bundles a curvature with the ball operations above."""

    c: float = 1.0

    def __post_init__(self):
        _check_c(self.c)

    name = "hyperbolic"

    def lam(self, x):
        return conformal_factor(x, self.c)

    def add(self, x, y):
        return mobius_add(x, y, self.c)

    def expmap0(self, v):
        return exp0(v, self.c)

    def logmap0(self, y):
        return log0(y, self.c)

    def expmap(self, x, v):
        return exp_at(x, v, self.c)

    def dist(self, x, y):
        return distance(x, y, self.c)

    def proj(self, x):
        return project_to_ball(x, self.c)


@dataclass(frozen=True)
class Euclidean:
    """Flat counterpart: the c -> 0 limit taken analytically, not c = 0."""

    name = "euclidean"

    def add(self, x, y):
        return _as64(x) + _as64(y)

    def expmap0(self, v):
        return _as64(v)

    def logmap0(self, y):
        return _as64(y)

    def expmap(self, x, v):
        return _as64(x) + _as64(v)

    def dist(self, x, y):
        # plain flat metric; the ball distance tends to twice this as c -> 0
        return np.linalg.norm(_as64(y) - _as64(x), axis=-1)

    def proj(self, x):
        return _as64(x)
