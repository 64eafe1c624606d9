"""Dense numerical kernels shared by every pipeline stage.

All arithmetic runs in float64; file formats are float32 and get promoted on
load. Softmax masks are boolean *include* arrays rather than IEEE ``-inf``
sentinels, so no ``0 * -inf`` NaN path exists anywhere.

All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ArgumentError, EmptyMaskError, OracleError, ShapeError

COSINE_EPS = 1e-8
GRAD_CHECK_STEP = 1e-5
GRAD_ERROR_FLOOR = 1e-8


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {out.shape}")
    return out


def as_vector(a, name: str = "vector") -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {out.shape}")
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check.

    Raises:
        ShapeError: if ``a.cols != b.rows``.
    """
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"inner dimensions differ: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def masked_softmax(
    logits, temperature: float, mask: np.ndarray | None = None
) -> np.ndarray:
    """Temperature softmax with optional exclusion mask.

    ``mask`` is a boolean array, True at positions allowed to receive weight.
    Excluded positions come out exactly 0 and the included ones sum to 1.
    Computed with max-subtraction for stability.

    Raises:
        ArgumentError: temperature is not strictly positive.
        ShapeError: mask length differs from logits length.
        EmptyMaskError: every position is excluded.
    """
    logits = as_vector(logits, "logits")
    if not temperature > 0:
        raise ArgumentError(f"temperature must be > 0, got {temperature}")
    if mask is None:
        mask = np.ones(logits.shape[0], dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != logits.shape:
            raise ShapeError(
                f"mask length {mask.shape} does not match logits {logits.shape}"
            )
        if not mask.any():
            raise EmptyMaskError("softmax mask excludes every position")
    kept = logits[mask]
    z = np.exp((kept - kept.max()) / temperature)
    out = np.zeros_like(logits)
    out[mask] = z / z.sum()
    return out


def softmax_grad(weights: np.ndarray, dweights: np.ndarray, temperature: float) -> np.ndarray:
    """Backward pass of :func:`masked_softmax` w.r.t. its logits.

    ``weights`` is the forward output; excluded positions (weight 0) receive
    zero gradient automatically.
    """
    inner = float(np.dot(weights, dweights))
    return weights * (dweights - inner) / temperature


def scaled_sigmoid(z, log_temp: float, bias: float):
    """``1 / (1 + exp(-(exp(log_temp) * z + bias)))``, numerically saturating.

    Accepts scalars or arrays; returns the matching kind. Output is always in
    the open interval (0, 1) up to float64 saturation.
    """
    t = np.exp(log_temp) * np.asarray(z, dtype=np.float64) + bias
    out = np.empty_like(t, dtype=np.float64)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    if np.isscalar(z) or getattr(z, "ndim", 1) == 0:
        return float(out)
    return out


def safe_cosine(u, v, eps: float = COSINE_EPS) -> float:
    """Cosine similarity with a division guard, clamped to [-1, 1].

    Zero vectors yield 0 through the ``eps`` floor on the norm product.
    """
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape != v.shape:
        raise ShapeError(f"vector lengths differ: {u.shape} vs {v.shape}")
    denom = max(float(np.linalg.norm(u)) * float(np.linalg.norm(v)), eps)
    return float(np.clip(float(np.dot(u, v)) / denom, -1.0, 1.0))


def cosine_rows(rows: np.ndarray, v: np.ndarray, eps: float = COSINE_EPS) -> np.ndarray:
    """:func:`safe_cosine` of every row of ``rows`` against ``v``."""
    rows = as_matrix(rows, "rows")
    v = as_vector(v, "v")
    if rows.shape[1] != v.shape[0]:
        raise ShapeError(f"row width {rows.shape[1]} differs from vector length {v.shape[0]}")
    denom = np.maximum(np.linalg.norm(rows, axis=1) * np.linalg.norm(v), eps)
    return np.clip(rows @ v / denom, -1.0, 1.0)


def cosine_grad(
    u: np.ndarray, v: np.ndarray, cos_uv: float, dcos: float, eps: float = COSINE_EPS
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``safe_cosine(u, v)`` w.r.t. both vectors.

    When the norm product falls below ``eps`` the denominator is the constant
    ``eps``, so only the numerator contributes.
    """
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    prod = nu * nv
    if prod > eps:
        du = dcos * (v / prod - cos_uv * u / (nu * nu))
        dv = dcos * (u / prod - cos_uv * v / (nv * nv))
    else:
        du = dcos * v / eps
        dv = dcos * u / eps
    return du, dv


def finite_diff_grad(
    f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = GRAD_CHECK_STEP
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a parameter vector.

    Raises:
        ArgumentError: ``h`` is not strictly positive.
        OracleError: any probed evaluation is non-finite.
    """
    if not h > 0:
        raise ArgumentError(f"step h must be > 0, got {h}")
    theta = as_vector(theta, "theta").copy()
    grad = np.zeros_like(theta)
    for i in range(theta.shape[0]):
        orig = theta[i]
        theta[i] = orig + h
        hi = f(theta)
        theta[i] = orig - h
        lo = f(theta)
        theta[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise OracleError(f"non-finite evaluation while probing coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = GRAD_ERROR_FLOOR) -> np.ndarray:
    """Elementwise ``|a - b| / max(|a|, |b|, floor)`` (the gradient-check metric)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
