"""Straight-line scalar reimplementation of the forward pass, used as a test oracle.

Deliberately written with Python floats and ``math`` only so it shares no
code path with the numpy or compiled kernels.
"""

import math


def sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def matvec(W, x):
    return [sum(W[r][k] * x[k] for k in range(len(x))) for r in range(len(W))]


def mlp(w1, b1, w2, b2, x):
    a = [math.tanh(v + b) for v, b in zip(matvec(w1, x), b1)]
    return [v + b for v, b in zip(matvec(w2, a), b2)]


def lstm(W, b, h, c, x):
    H = len(h)
    z = [v + bb for v, bb in zip(matvec(W, list(h) + list(x)), b)]
    i = [sig(v) for v in z[:H]]
    f = [sig(v) for v in z[H : 2 * H]]
    o = [sig(v) for v in z[2 * H : 3 * H]]
    g = [math.tanh(v) for v in z[3 * H :]]
    c_new = [f[k] * c[k] + i[k] * g[k] for k in range(H)]
    h_new = [o[k] * math.tanh(c_new[k]) for k in range(H)]
    return h_new, c_new


def attend(W_h, W_c, h, X, region):
    R, D = len(X), len(X[0])
    ctx = [sum(X[r][k] for r in range(R)) / R for k in range(D)]
    logits = []
    for r in range(R):
        v = sum(W_h[r][k] * h[k] for k in range(len(h)))
        feat = X[r] if region else ctx
        v += sum(W_c[r][k] * feat[k] for k in range(D))
        logits.append(v)
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    s = sum(e)
    return [v / s for v in e]


def forward(params, frames):
    """``params`` maps names to nested lists; ``frames`` is T x R x D nested lists."""
    cfg = params["config"]
    T, R, D = len(frames), len(frames[0]), len(frames[0][0])
    pooled = [sum(frames[t][r][k] for t in range(T) for r in range(R)) / (T * R) for k in range(D)]
    h0 = mlp(params["init_h.w1"], params["init_h.b1"], params["init_h.w2"], params["init_h.b2"], pooled)
    c0 = mlp(params["init_c.w1"], params["init_c.b1"], params["init_c.w2"], params["init_c.b2"], pooled)
    region = cfg.context == "region"
    maps = [attend(params["attn.w_h"], params["attn.w_c"], h0, frames[0], region)]
    hs = [h0] * cfg.num_layers
    cs = [c0] * cfg.num_layers
    for t in range(T - 1):
        x = [sum(maps[t][r] * frames[t][r][k] for r in range(R)) for k in range(D)]
        inp = x
        for li in range(cfg.num_layers):
            hs[li], cs[li] = lstm(params[f"lstm{li}.weight"], params[f"lstm{li}.bias"], hs[li], cs[li], inp)
            inp = hs[li]
        maps.append(attend(params["attn.w_h"], params["attn.w_c"], inp, frames[t + 1], region))
    return maps


def as_lists(params):
    out = {name: arr.tolist() for name, arr in params}
    out["config"] = params.config
    return out
