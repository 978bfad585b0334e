"""Loss, backpropagation through time, Adam, and the training loop."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .evaluation import evaluate
from .model import forward_sequence
from .tensor import softmax_backward

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    cross_entropy: float
    l2_penalty: float

    @property
    def total(self):
        return self.cross_entropy + self.l2_penalty


def _check_labels(labels, n_maps, n_regions):
    labels = np.asarray(labels)
    if labels.shape != (n_maps,):
        raise ValueError(f"{labels.shape[0] if labels.ndim else 0} labels for {n_maps} maps")
    bad = np.flatnonzero((labels < 0) | (labels >= n_regions))
    if bad.size:
        t = int(bad[0])
        raise ValueError(f"label {labels[t]} at frame {t} outside [0, {n_regions})")
    return labels.astype(np.int64)


def loss(maps, labels, params, gamma):
    """Summed cross-entropy over frames plus ``gamma * sum(theta**2)``."""
    maps = np.asarray(maps)
    labels = _check_labels(labels, maps.shape[0], maps.shape[1])
    picked = np.maximum(maps[np.arange(len(labels)), labels], PROB_FLOOR)
    ce = float(-np.sum(np.log(picked)))
    return LossBreakdown(ce, gamma * params.sum_squares())


def backward(cache, labels, params, gamma):
    """Gradient of :func:`loss` w.r.t. every parameter, by BPTT over ``cache``."""
    cfg = params.config
    maps = cache.maps
    T = len(cache)
    labels = _check_labels(labels, T, cfg.regions)
    k = kernels.active()
    region = cfg.context == "region"
    grads = params.zeros_like()
    X = cache.frames
    w_h, w_c = params["attn.w_h"], params["attn.w_c"]
    dW_h, dW_c = grads["attn.w_h"], grads["attn.w_c"]
    L = cfg.num_layers
    H = cfg.hidden

    def logit_grad(t, dp):
        g = maps[t].copy()
        if maps[t, labels[t]] >= PROB_FLOOR:
            g[labels[t]] -= 1.0
        else:
            g[:] = 0.0  # floored: CE is locally constant
        if dp is not None:
            g += softmax_backward(maps[t], dp)
        return g

    dh_rec = [np.zeros(H) for _ in range(L)]
    dc_rec = [np.zeros(H) for _ in range(L)]
    dp_next = None  # gradient on maps[t+1] flowing back through its blend
    for t in range(T - 2, -1, -1):
        step = cache.steps[t]
        dlogits = logit_grad(t + 1, dp_next)
        d_out = k.attend_backward(w_h, w_c, step.h_out[-1], X[t + 1], region, dlogits, dW_h, dW_c)
        for li in range(L - 1, -1, -1):
            mask = step.masks[li]
            dh = dh_rec[li] + (d_out * mask if mask is not None else d_out)
            W = params[f"lstm{li}.weight"]
            dh_rec[li], dc_rec[li], d_out = k.lstm_backward(
                W, step.gates[li], step.c_prev[li], step.tanh_c[li], step.h_prev[li],
                step.inputs[li], dh, dc_rec[li], grads[f"lstm{li}.weight"], grads[f"lstm{li}.bias"],
            )
        dp_next = k.blend_backward(X[t], d_out)

    dlogits = logit_grad(0, dp_next)
    dh0 = k.attend_backward(w_h, w_c, cache.h0, X[0], region, dlogits, dW_h, dW_c)
    dc0 = np.zeros(H)
    for li in range(L):
        dh0 = dh0 + dh_rec[li]
        dc0 = dc0 + dc_rec[li]

    for net, dout in (("init_h", dh0), ("init_c", dc0)):
        a = cache.init_hidden[net]
        grads[f"{net}.w2"] += np.outer(dout, a)
        grads[f"{net}.b2"] += dout
        dpre = (params[f"{net}.w2"].T @ dout) * (1.0 - a * a)
        grads[f"{net}.w1"] += np.outer(dpre, cache.pooled)
        grads[f"{net}.b1"] += dpre

    if gamma:
        for name, g in grads.items():
            g += 2.0 * gamma * params[name]
    return grads


def evaluate_loss(params, frames, labels, gamma):
    maps, _ = forward_sequence(params, frames, training=False)
    return loss(maps, labels, params, gamma)


def finite_diff_grad(params, frames, labels, gamma, coordinate, eps=1e-5):
    """Central difference of the total loss along one parameter coordinate.

    ``coordinate`` is ``(name, index)``. Uses only the forward pass and
    :func:`loss`, with dropout off. ``params`` is restored afterwards.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    name, index = coordinate
    arr = params[name]
    orig = arr[index]
    try:
        arr[index] = orig + eps
        up = evaluate_loss(params, frames, labels, gamma).total
        arr[index] = orig - eps
        down = evaluate_loss(params, frames, labels, gamma).total
    finally:
        arr[index] = orig
    return (up - down) / (2.0 * eps)


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(1.0, abs(analytic) + abs(numeric))


def gradient_check(params, frames, labels, gamma, num_coords, rng, eps=1e-5):
    """Compare :func:`backward` with finite differences on random coordinates.

    Returns a list of ``(name, index, analytic, numeric, rel_error)``.
    """
    _, cache = forward_sequence(params, frames, training=False)
    grads = backward(cache, labels, params, gamma)
    n = params.num_parameters()
    picks = rng.choice(n, size=min(num_coords, n), replace=False)
    rows = []
    for flat in picks:
        name, index = params.flat_index(int(flat))
        a = float(grads[name][index])
        d = finite_diff_grad(params, frames, labels, gamma, (name, index), eps)
        rows.append((name, index, a, d, relative_error(a, d)))
    return rows


def clip_global_norm(grads, max_norm):
    """Rescale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class AdamState:
    m: dict
    v: dict
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params, **hyper):
        return cls(params.zeros_like(), params.zeros_like(), **hyper)


def adam_step(params, grads, state):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if set(grads) != set(params.tensors):
        raise ValueError("gradient names do not match parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, theta in params:
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {theta.shape}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    gamma: float = 0.01
    max_iterations: int = 1000
    bptt_window: int = 30
    epochs: int = 1
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0
    val_every: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.max_iterations < 1 or self.bptt_window < 1 or self.epochs < 1:
            raise ValueError("max_iterations, bptt_window and epochs must be >= 1")


@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    loss: float
    ce: float
    l2: float
    val_kl: float = None


@dataclass
class TrainCurve:
    points: list = field(default_factory=list)

    def append(self, point):
        if self.points and point.iteration <= self.points[-1].iteration:
            raise ValueError("curve iterations must increase")
        self.points.append(point)

    def __len__(self):
        return len(self.points)

    def losses(self):
        return np.array([p.loss for p in self.points])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "loss", "ce", "l2", "val_kl"])
            for p in self.points:
                val = "" if p.val_kl is None else f"{p.val_kl:.17g}"
                w.writerow([p.iteration, f"{p.loss:.17g}", f"{p.ce:.17g}", f"{p.l2:.17g}", val])

    @classmethod
    def from_csv(cls, path):
        curve = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                val = float(row["val_kl"]) if row["val_kl"] else None
                curve.append(CurvePoint(int(row["iteration"]), float(row["loss"]),
                                        float(row["ce"]), float(row["l2"]), val))
        return curve


def make_windows(dataset, window):
    """Consecutive non-overlapping ``(sequence_index, start, stop)`` spans."""
    spans = []
    for si, seq in enumerate(dataset):
        T = len(seq.labels)
        for start in range(0, T, window):
            spans.append((si, start, min(start + window, T)))
    return spans


def moving_average(values, window=50):
    """Trailing mean; entry ``i`` averages ``values[max(0, i-window+1):i+1]``."""
    values = np.asarray(values, dtype=float)
    csum = np.concatenate(([0.0], np.cumsum(values)))
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(0, idx - window)
    return (csum[idx] - csum[lo]) / (idx - lo)


def train(dataset, params, cfg, validation=None, callback=None):
    """Train ``params`` in place on BPTT windows; returns ``(params, curve)``.

    One iteration is one forward/backward/Adam update on one window. Windows
    are reshuffled each epoch with the seeded RNG. Stops after
    ``cfg.max_iterations`` updates or ``cfg.epochs`` passes over the data,
    whichever comes first.
    """
    if not dataset:
        raise ValueError("empty training dataset")
    for seq in dataset:
        if seq.features.shape[1:] != (params.config.regions, params.config.depth):
            raise ValueError(
                f"sequence {seq.name!r} has frames {seq.features.shape[1:]}, model expects "
                f"{(params.config.regions, params.config.depth)}"
            )
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_params(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    spans = make_windows(dataset, cfg.bptt_window)
    curve = TrainCurve()
    it = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(spans))
        for j in order:
            si, a, b = spans[j]
            seq = dataset[si]
            frames, labels = seq.features[a:b], seq.labels[a:b]
            maps, cache = forward_sequence(params, frames, rng=rng, training=True)
            lb = loss(maps, labels, params, cfg.gamma)
            grads = backward(cache, labels, params, cfg.gamma)
            clip_global_norm(grads, cfg.clip_norm)
            adam_step(params, grads, state)
            it += 1
            val = None
            if validation is not None and cfg.val_every and it % cfg.val_every == 0:
                val = evaluate(params, validation, window=cfg.bptt_window).mean_kl
            curve.append(CurvePoint(it, lb.total, lb.cross_entropy, lb.l2_penalty, val))
            if callback is not None:
                callback(it, lb)
            if it >= cfg.max_iterations:
                return params, curve
        log.debug("epoch %d done after %d iterations", epoch, it)
    return params, curve
