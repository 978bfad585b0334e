# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step kernels; same contract as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()

NAME = "compiled"


cdef inline double _sigmoid(double z) nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def lstm_forward(const double[:, ::1] W, const double[::1] b,
                 const double[::1] h_prev, const double[::1] c_prev,
                 const double[::1] x):
    cdef Py_ssize_t H = h_prev.shape[0]
    cdef Py_ssize_t Din = x.shape[0]
    cdef Py_ssize_t G = 4 * H
    cdef Py_ssize_t r, k
    cdef double acc
    if W.shape[0] != G or W.shape[1] != H + Din or b.shape[0] != G or c_prev.shape[0] != H:
        raise ValueError("lstm_forward: inconsistent shapes")
    gates_a = np.empty(G, dtype=np.float64)
    c_a = np.empty(H, dtype=np.float64)
    tc_a = np.empty(H, dtype=np.float64)
    h_a = np.empty(H, dtype=np.float64)
    cdef double[::1] gates = gates_a
    cdef double[::1] c = c_a
    cdef double[::1] tc = tc_a
    cdef double[::1] h = h_a
    with nogil:
        for r in range(G):
            acc = b[r]
            for k in range(H):
                acc = acc + W[r, k] * h_prev[k]
            for k in range(Din):
                acc = acc + W[r, H + k] * x[k]
            if r < 3 * H:
                gates[r] = _sigmoid(acc)
            else:
                gates[r] = tanh(acc)
        for k in range(H):
            c[k] = gates[H + k] * c_prev[k] + gates[k] * gates[3 * H + k]
            tc[k] = tanh(c[k])
            h[k] = gates[2 * H + k] * tc[k]
    return gates_a, c_a, tc_a, h_a


def lstm_backward(const double[:, ::1] W, const double[::1] gates,
                  const double[::1] c_prev, const double[::1] tanh_c,
                  const double[::1] h_prev, const double[::1] x,
                  const double[::1] dh, const double[::1] dc_in,
                  double[:, ::1] dW, double[::1] db):
    cdef Py_ssize_t H = h_prev.shape[0]
    cdef Py_ssize_t Din = x.shape[0]
    cdef Py_ssize_t G = 4 * H
    cdef Py_ssize_t r, k
    cdef double i, f, o, g, dc, d
    if W.shape[0] != G or W.shape[1] != H + Din or dW.shape[0] != G or dW.shape[1] != H + Din:
        raise ValueError("lstm_backward: inconsistent shapes")
    dz_a = np.empty(G, dtype=np.float64)
    dhp_a = np.zeros(H, dtype=np.float64)
    dcp_a = np.empty(H, dtype=np.float64)
    dx_a = np.zeros(Din, dtype=np.float64)
    cdef double[::1] dz = dz_a
    cdef double[::1] dhp = dhp_a
    cdef double[::1] dcp = dcp_a
    cdef double[::1] dx = dx_a
    with nogil:
        for k in range(H):
            i = gates[k]
            f = gates[H + k]
            o = gates[2 * H + k]
            g = gates[3 * H + k]
            dc = dc_in[k] + dh[k] * o * (1.0 - tanh_c[k] * tanh_c[k])
            dz[k] = dc * g * i * (1.0 - i)
            dz[H + k] = dc * c_prev[k] * f * (1.0 - f)
            dz[2 * H + k] = dh[k] * tanh_c[k] * o * (1.0 - o)
            dz[3 * H + k] = dc * i * (1.0 - g * g)
            dcp[k] = dc * f
        for r in range(G):
            d = dz[r]
            db[r] += d
            for k in range(H):
                dW[r, k] += d * h_prev[k]
                dhp[k] += W[r, k] * d
            for k in range(Din):
                dW[r, H + k] += d * x[k]
                dx[k] += W[r, H + k] * d
    return dhp_a, dcp_a, dx_a


cdef void _logits(const double[:, ::1] W_h, const double[:, ::1] W_c,
                  const double[::1] h, const double[:, ::1] X, bint region,
                  double[::1] ctx, double[::1] z) noexcept nogil:
    cdef Py_ssize_t R = W_h.shape[0]
    cdef Py_ssize_t H = W_h.shape[1]
    cdef Py_ssize_t D = W_c.shape[1]
    cdef Py_ssize_t r, k
    cdef double acc
    if not region:
        for k in range(D):
            ctx[k] = 0.0
        for r in range(R):
            for k in range(D):
                ctx[k] += X[r, k]
        for k in range(D):
            ctx[k] /= R
    for r in range(R):
        acc = 0.0
        for k in range(H):
            acc = acc + W_h[r, k] * h[k]
        if region:
            for k in range(D):
                acc = acc + W_c[r, k] * X[r, k]
        else:
            for k in range(D):
                acc = acc + W_c[r, k] * ctx[k]
        z[r] = acc


def attend_forward(const double[:, ::1] W_h, const double[:, ::1] W_c,
                   const double[::1] h, const double[:, ::1] X, bint region):
    cdef Py_ssize_t R = W_h.shape[0]
    cdef Py_ssize_t D = W_c.shape[1]
    cdef Py_ssize_t r
    cdef double m, s
    if W_c.shape[0] != R or X.shape[0] != R or X.shape[1] != D or W_h.shape[1] != h.shape[0]:
        raise ValueError("attend_forward: inconsistent shapes")
    p_a = np.empty(R, dtype=np.float64)
    ctx_a = np.empty(D, dtype=np.float64)
    cdef double[::1] p = p_a
    cdef double[::1] ctx = ctx_a
    with nogil:
        _logits(W_h, W_c, h, X, region, ctx, p)
        m = p[0]
        for r in range(1, R):
            if p[r] > m:
                m = p[r]
        s = 0.0
        for r in range(R):
            p[r] = exp(p[r] - m)
            s = s + p[r]
        for r in range(R):
            p[r] = p[r] / s
    return p_a


def attend_backward(const double[:, ::1] W_h, const double[:, ::1] W_c,
                    const double[::1] h, const double[:, ::1] X, bint region,
                    const double[::1] dlogits, double[:, ::1] dW_h, double[:, ::1] dW_c):
    cdef Py_ssize_t R = W_h.shape[0]
    cdef Py_ssize_t H = W_h.shape[1]
    cdef Py_ssize_t D = W_c.shape[1]
    cdef Py_ssize_t r, k
    cdef double d
    if dW_h.shape[0] != R or dW_h.shape[1] != H or dW_c.shape[0] != R or dW_c.shape[1] != D:
        raise ValueError("attend_backward: inconsistent shapes")
    dh_a = np.zeros(H, dtype=np.float64)
    ctx_a = np.zeros(D, dtype=np.float64)
    cdef double[::1] dh = dh_a
    cdef double[::1] ctx = ctx_a
    with nogil:
        if not region:
            for r in range(R):
                for k in range(D):
                    ctx[k] += X[r, k]
            for k in range(D):
                ctx[k] /= R
        for r in range(R):
            d = dlogits[r]
            for k in range(H):
                dW_h[r, k] += d * h[k]
                dh[k] += W_h[r, k] * d
            if region:
                for k in range(D):
                    dW_c[r, k] += d * X[r, k]
            else:
                for k in range(D):
                    dW_c[r, k] += d * ctx[k]
    return dh_a


def blend_forward(const double[::1] p, const double[:, ::1] X):
    cdef Py_ssize_t R = X.shape[0]
    cdef Py_ssize_t D = X.shape[1]
    cdef Py_ssize_t r, k
    if p.shape[0] != R:
        raise ValueError("blend_forward: inconsistent shapes")
    out_a = np.zeros(D, dtype=np.float64)
    cdef double[::1] out = out_a
    with nogil:
        for r in range(R):
            for k in range(D):
                out[k] += p[r] * X[r, k]
    return out_a


def blend_backward(const double[:, ::1] X, const double[::1] dx):
    cdef Py_ssize_t R = X.shape[0]
    cdef Py_ssize_t D = X.shape[1]
    cdef Py_ssize_t r, k
    cdef double acc
    if dx.shape[0] != D:
        raise ValueError("blend_backward: inconsistent shapes")
    out_a = np.empty(R, dtype=np.float64)
    cdef double[::1] out = out_a
    with nogil:
        for r in range(R):
            acc = 0.0
            for k in range(D):
                acc = acc + X[r, k] * dx[k]
            out[r] = acc
    return out_a
