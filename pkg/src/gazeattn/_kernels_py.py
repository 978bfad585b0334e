"""Pure-numpy reference for the per-step kernels.

Signatures mirror the compiled ``_kernels`` extension exactly. Gradient
buffers passed as ``dW``/``db``/``dW_h``/``dW_c`` are accumulated in place.
Gate blocks are ordered input, forget, output, candidate.
"""

import numpy as np

from .tensor import sigmoid

NAME = "python"


def lstm_forward(W, b, h_prev, c_prev, x):
    H = h_prev.shape[0]
    z = W[:, :H] @ h_prev + W[:, H:] @ x + b
    gates = np.empty_like(z)
    gates[: 3 * H] = sigmoid(z[: 3 * H])
    gates[3 * H :] = np.tanh(z[3 * H :])
    i, f, o, g = gates[:H], gates[H : 2 * H], gates[2 * H : 3 * H], gates[3 * H :]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    return gates, c, tanh_c, o * tanh_c


def lstm_backward(W, gates, c_prev, tanh_c, h_prev, x, dh, dc, dW, db):
    H = h_prev.shape[0]
    i, f, o, g = gates[:H], gates[H : 2 * H], gates[2 * H : 3 * H], gates[3 * H :]
    dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
    dz = np.concatenate(
        (
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dh * tanh_c * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        )
    )
    dW[:, :H] += np.outer(dz, h_prev)
    dW[:, H:] += np.outer(dz, x)
    db += dz
    dconcat = W.T @ dz
    return dconcat[:H].copy(), dc * f, dconcat[H:].copy()


def _logits(W_h, W_c, h, X, region):
    if region:
        return W_h @ h + np.einsum("ij,ij->i", W_c, X)
    return W_h @ h + W_c @ X.mean(axis=0)


def attend_forward(W_h, W_c, h, X, region):
    z = _logits(W_h, W_c, h, X, region)
    e = np.exp(z - z.max())
    return e / e.sum()


def attend_backward(W_h, W_c, h, X, region, dlogits, dW_h, dW_c):
    dW_h += np.outer(dlogits, h)
    if region:
        dW_c += dlogits[:, None] * X
    else:
        dW_c += np.outer(dlogits, X.mean(axis=0))
    return W_h.T @ dlogits


def blend_forward(p, X):
    return p @ X


def blend_backward(X, dx):
    return X @ dx
