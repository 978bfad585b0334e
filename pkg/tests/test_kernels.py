"""The compiled kernels must agree with the numpy fallback."""

import numpy as np
import pytest

from gazeattn import _kernels_py, kernels

compiled_only = pytest.mark.skipif("compiled" not in kernels.available(), reason="extension not built")


def _args(rng, H=5, D=3, R=9):
    return dict(
        W=rng.normal(size=(4 * H, H + D)), b=rng.normal(size=4 * H), h=rng.normal(size=H),
        c=rng.normal(size=H), x=rng.normal(size=D), W_h=rng.normal(size=(R, H)),
        W_c=rng.normal(size=(R, D)), X=rng.normal(size=(R, D)),
    )


@compiled_only
@pytest.mark.parametrize("seed", range(5))
def test_lstm_forward_backward_agree(seed):
    rng = np.random.default_rng(seed)
    a = _args(rng)
    comp = kernels.get("compiled")
    out_c = comp.lstm_forward(a["W"], a["b"], a["h"], a["c"], a["x"])
    out_p = _kernels_py.lstm_forward(a["W"], a["b"], a["h"], a["c"], a["x"])
    for u, v in zip(out_c, out_p):
        np.testing.assert_allclose(u, v, rtol=1e-13, atol=1e-15)
    gates, _, tanh_c, _ = out_p
    dh, dc = rng.normal(size=5), rng.normal(size=5)
    grads = []
    for mod in (comp, _kernels_py):
        dW, db = np.zeros_like(a["W"]), np.zeros_like(a["b"])
        res = mod.lstm_backward(a["W"], gates, a["c"], tanh_c, a["h"], a["x"], dh, dc, dW, db)
        grads.append((*res, dW, db))
    for u, v in zip(*grads):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-14)


@compiled_only
@pytest.mark.parametrize("region", [True, False])
def test_attention_and_blend_agree(region):
    rng = np.random.default_rng(7)
    a = _args(rng)
    comp = kernels.get("compiled")
    p_c = comp.attend_forward(a["W_h"], a["W_c"], a["h"], a["X"], region)
    p_p = _kernels_py.attend_forward(a["W_h"], a["W_c"], a["h"], a["X"], region)
    np.testing.assert_allclose(p_c, p_p, rtol=1e-13)
    dl = rng.normal(size=9)
    res = []
    for mod in (comp, _kernels_py):
        dW_h, dW_c = np.zeros_like(a["W_h"]), np.zeros_like(a["W_c"])
        dh = mod.attend_backward(a["W_h"], a["W_c"], a["h"], a["X"], region, dl, dW_h, dW_c)
        res.append((dh, dW_h, dW_c, mod.blend_forward(p_p, a["X"]), mod.blend_backward(a["X"], a["x"])))
    for u, v in zip(*res):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-14)


@compiled_only
def test_compiled_rejects_bad_shapes():
    comp = kernels.get("compiled")
    with pytest.raises(ValueError):
        comp.lstm_forward(np.zeros((8, 4)), np.zeros(8), np.zeros(2), np.zeros(2), np.zeros(3))


def test_backend_switching():
    before = kernels.active()
    with kernels.using("python") as mod:
        assert kernels.active() is mod is _kernels_py
    assert kernels.active() is before
    with pytest.raises(ValueError):
        kernels.get("fortran")
