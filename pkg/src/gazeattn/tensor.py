"""Dense float64 primitives and their analytic backward rules.

Vectors and matrices are plain ``numpy.ndarray`` objects. Every function
checks shapes up front and raises :class:`ShapeError` naming both operands.
"""

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_vector(v, name="vector"):
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def as_matrix(w, name="matrix"):
    w = np.asarray(w, dtype=DTYPE)
    if w.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {w.shape}")
    return w


def affine(W, b, x):
    """Return ``W @ x + b``."""
    W = as_matrix(W, "W")
    b = as_vector(b, "b")
    x = as_vector(x, "x")
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise ShapeError(
            f"affine: W{W.shape} incompatible with x{x.shape} / b{b.shape}"
        )
    return W @ x + b


def affine_backward(W, x, dy):
    """Vector-Jacobian product of :func:`affine`.

    Returns ``(dW, db, dx)`` for upstream gradient ``dy``.
    """
    W = as_matrix(W, "W")
    x = as_vector(x, "x")
    dy = as_vector(dy, "dy")
    if W.shape != (dy.shape[0], x.shape[0]):
        raise ShapeError(f"affine_backward: W{W.shape} vs dy{dy.shape}, x{x.shape}")
    return np.outer(dy, x), dy.copy(), W.T @ dy


def softmax(v):
    """Numerically stable softmax (max-subtracted)."""
    v = as_vector(v, "logits")
    if v.size == 0:
        raise ShapeError("softmax of an empty vector")
    e = np.exp(v - v.max())
    return e / e.sum()


def softmax_backward(p, dp):
    """VJP of softmax given its output ``p``: ``p * (dp - <p, dp>)``."""
    p = as_vector(p, "p")
    dp = as_vector(dp, "dp")
    if p.shape != dp.shape:
        raise ShapeError(f"softmax_backward: p{p.shape} vs dp{dp.shape}")
    return p * (dp - p @ dp)


def sigmoid(v):
    v = np.asarray(v, dtype=DTYPE)
    # split on sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def elementwise(kind, v):
    """Apply ``"sigmoid"`` or ``"tanh"`` entrywise."""
    if kind == "sigmoid":
        return sigmoid(v)
    if kind == "tanh":
        return np.tanh(np.asarray(v, dtype=DTYPE))
    raise ValueError(f"unknown nonlinearity {kind!r}")


def elementwise_backward(kind, y, dy):
    """VJP of :func:`elementwise` expressed through its output ``y``."""
    y = np.asarray(y, dtype=DTYPE)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    if kind == "tanh":
        return dy * (1.0 - y * y)
    raise ValueError(f"unknown nonlinearity {kind!r}")


def dropout_mask(rate, length, rng):
    """Inverted-dropout mask: 0 with probability ``rate``, else ``1/(1-rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(length, dtype=DTYPE)
    keep = rng.random(length) >= rate
    return keep.astype(DTYPE) / (1.0 - rate)
