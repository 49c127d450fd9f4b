"""Poincaré ball kernel in float64 numpy.

Every function works on the last axis, so a ``(..., d)`` array is a batch of
points. Curvature ``k`` is the positive constant ``K`` of the ball
``{x : k * |x|^2 < 1}``.
"""
from __future__ import annotations

import numpy as np

BALL_EPS = 1e-5
ARTANH_MAX = 1.0 - 1e-10
MIN_NORM = 1e-15


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_dims(*arrays: np.ndarray) -> None:
    d = arrays[0].shape[-1]
    for a in arrays[1:]:
        if a.shape[-1] != d:
            raise ValueError(f"dimension mismatch: {arrays[0].shape} vs {a.shape}")


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1, keepdims=True)


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(_sqnorm(x))


def artanh(x):
    """Clamped inverse tanh; arguments are clipped to ``[-ARTANH_MAX, ARTANH_MAX]``."""
    return np.arctanh(np.clip(x, -ARTANH_MAX, ARTANH_MAX))


def max_norm(k: float = 1.0, eps: float = BALL_EPS) -> float:
    return (1.0 - eps) / np.sqrt(k)


def project_to_ball(x, k: float = 1.0, eps: float = BALL_EPS) -> np.ndarray:
    """Rescale rows that sit outside radius ``(1 - eps) / sqrt(k)`` onto it."""
    x = _as_array(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("project_to_ball received non-finite coordinates")
    bound = max_norm(k, eps)
    norm = _norm(x)
    outside = k * norm**2 > (1.0 - eps) ** 2
    scale = np.where(outside, bound / np.maximum(norm, MIN_NORM), 1.0)
    return x * scale


def mobius_add(x, y, k: float = 1.0) -> np.ndarray:
    x, y = _as_array(x), _as_array(y)
    _check_dims(x, y)
    xy = np.sum(x * y, axis=-1, keepdims=True)
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    num = (1 + 2 * k * xy + k * y2) * x + (1 - k * x2) * y
    den = 1 + 2 * k * xy + k**2 * x2 * y2
    return project_to_ball(num / den, k)


def conformal_factor(x, k: float = 1.0) -> np.ndarray:
    """``2 / (1 - k|x|^2)``, shape ``(..., 1)``."""
    x = _as_array(x)
    return 2.0 / (1.0 - k * _sqnorm(x))


def exp_map(x, v, k: float = 1.0) -> np.ndarray:
    """Exponential map at base point ``x`` applied to tangent vector ``v``."""
    x, v = _as_array(x), _as_array(v)
    _check_dims(x, v)
    sk = np.sqrt(k)
    vnorm = _norm(v)
    safe = np.maximum(vnorm, MIN_NORM)
    step = np.tanh(sk * conformal_factor(x, k) * safe / 2) * v / (sk * safe)
    step = np.where(vnorm < MIN_NORM, 0.0, step)
    out = mobius_add(x, step, k)
    # exp_x(0) must return x itself, not x (+) 0 with rounding
    return np.where(vnorm < MIN_NORM, np.broadcast_to(x, out.shape), out)


def log_map(x, y, k: float = 1.0) -> np.ndarray:
    """Logarithmic map at base point ``x``; inverse of :func:`exp_map`."""
    x, y = _as_array(x), _as_array(y)
    _check_dims(x, y)
    sk = np.sqrt(k)
    diff = mobius_add(-x, y, k)
    dnorm = _norm(diff)
    safe = np.maximum(dnorm, MIN_NORM)
    out = 2 / (sk * conformal_factor(x, k)) * artanh(sk * safe) * diff / safe
    return np.where(dnorm < MIN_NORM, 0.0, out)


def expmap0(v, k: float = 1.0) -> np.ndarray:
    v = _as_array(v)
    sk = np.sqrt(k)
    vnorm = _norm(v)
    safe = np.maximum(vnorm, MIN_NORM)
    out = np.tanh(sk * safe) * v / (sk * safe)
    return project_to_ball(np.where(vnorm < MIN_NORM, 0.0, out), k)


def logmap0(y, k: float = 1.0) -> np.ndarray:
    y = _as_array(y)
    sk = np.sqrt(k)
    ynorm = _norm(y)
    safe = np.maximum(ynorm, MIN_NORM)
    out = artanh(sk * safe) * y / (sk * safe)
    return np.where(ynorm < MIN_NORM, 0.0, out)


def mobius_matvec_diag(m, x, k: float = 1.0) -> np.ndarray:
    """Möbius product of a diagonal matrix (given as its diagonal) with ``x``."""
    m, x = _as_array(m), _as_array(x)
    _check_dims(m, x)
    return expmap0(m * logmap0(x, k), k)


def distance(x, y, k: float = 1.0) -> np.ndarray:
    """Geodesic distance, shape ``x.shape[:-1]`` (broadcast)."""
    x, y = _as_array(x), _as_array(y)
    _check_dims(x, y)
    sk = np.sqrt(k)
    diff = mobius_add(-x, y, k)
    return (2 / sk * artanh(sk * _norm(diff)))[..., 0]
