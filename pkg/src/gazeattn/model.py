"""Recurrent soft-attention model over per-frame region features.

A frame is a ``K*K x D`` matrix whose row ``i`` holds the features of grid
cell ``i`` (row-major over the grid). The model keeps a stacked LSTM whose
input at step ``t`` is the attention-weighted blend of frame ``t``'s rows;
from the top hidden state and frame ``t+1`` it predicts a distribution over
the cells of frame ``t+1``. The first map is predicted from the initial
state, which two small MLPs derive from the mean feature of the window.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .tensor import DTYPE, ShapeError, affine, dropout_mask

CONTEXT_MODES = ("region", "mean")


@dataclass(frozen=True)
class ModelConfig:
    grid: int = 7
    depth: int = 1024
    hidden: int = 64
    num_layers: int = 1
    dropout_rate: float = 0.5
    # "region": cell i's logit reads cell i's own features of the next frame.
    # "mean": every cell reads the next frame's region-mean.
    context: str = "region"

    def __post_init__(self):
        if self.grid < 1 or self.depth < 1 or self.hidden < 1:
            raise ValueError(f"grid, depth and hidden must be >= 1: {self}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.context not in CONTEXT_MODES:
            raise ValueError(f"context must be one of {CONTEXT_MODES}")

    @property
    def regions(self):
        return self.grid * self.grid

    def param_shapes(self):
        """Ordered mapping of parameter name to shape."""
        H, D, R = self.hidden, self.depth, self.regions
        shapes = {}
        for layer in range(self.num_layers):
            d_in = D if layer == 0 else H
            shapes[f"lstm{layer}.weight"] = (4 * H, H + d_in)
            shapes[f"lstm{layer}.bias"] = (4 * H,)
        shapes["attn.w_h"] = (R, H)
        shapes["attn.w_c"] = (R, D)
        for net in ("init_h", "init_c"):
            shapes[f"{net}.w1"] = (H, D)
            shapes[f"{net}.b1"] = (H,)
            shapes[f"{net}.w2"] = (H, H)
            shapes[f"{net}.b2"] = (H,)
        return shapes


class LstmLayer(NamedTuple):
    weight: np.ndarray  # 4H x (H + D_in), row blocks i, f, o, g
    bias: np.ndarray


class AttentionHead(NamedTuple):
    w_h: np.ndarray
    w_c: np.ndarray
    context: str = "region"


class InitNet(NamedTuple):
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


class ModelParams:
    """All learnable tensors, keyed by name, plus the model config."""

    def __init__(self, config, tensors):
        shapes = config.param_shapes()
        if list(tensors) != list(shapes):
            raise ValueError(f"parameter names {list(tensors)} != expected {list(shapes)}")
        self.config = config
        self.tensors = {}
        for name, shape in shapes.items():
            arr = np.ascontiguousarray(tensors[name], dtype=DTYPE)
            if arr.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.tensors[name] = arr

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.items())

    def layer(self, index):
        return LstmLayer(self.tensors[f"lstm{index}.weight"], self.tensors[f"lstm{index}.bias"])

    @property
    def attention(self):
        return AttentionHead(self.tensors["attn.w_h"], self.tensors["attn.w_c"], self.config.context)

    def init_net(self, which):
        t = self.tensors
        return InitNet(t[f"{which}.w1"], t[f"{which}.b1"], t[f"{which}.w2"], t[f"{which}.b2"])

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self):
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def sum_squares(self):
        return float(sum(np.sum(v * v) for v in self.tensors.values()))

    def num_parameters(self):
        return sum(v.size for v in self.tensors.values())

    def flat_index(self, k):
        """Map a flat coordinate ``k`` to ``(name, multi_index)``."""
        for name, arr in self.tensors.items():
            if k < arr.size:
                return name, np.unravel_index(k, arr.shape)
            k -= arr.size
        raise IndexError("coordinate out of range")

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        if self.config != other.config:
            return False
        return all(np.array_equal(v, other.tensors[k]) for k, v in self.tensors.items())


def init_params(config, rng):
    """Glorot-uniform weights, forget-gate bias 1.0, other biases 0."""
    H = config.hidden
    tensors = {}
    for name, shape in config.param_shapes().items():
        if len(shape) == 1:
            arr = np.zeros(shape, dtype=DTYPE)
            if name.startswith("lstm"):
                arr[H : 2 * H] = 1.0
        else:
            fan_out, fan_in = shape
            a = np.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-a, a, size=shape)
        tensors[name] = arr
    return ModelParams(config, tensors)


def zero_params(config):
    return ModelParams(config, {k: np.zeros(s) for k, s in config.param_shapes().items()})


@dataclass
class FeatureCube:
    """One frame's ``K*K x D`` region features."""

    regions: np.ndarray

    def __post_init__(self):
        self.regions = np.ascontiguousarray(self.regions, dtype=DTYPE)
        if self.regions.ndim != 2:
            raise ShapeError(f"feature cube must be 2-D, got shape {self.regions.shape}")
        k = int(round(np.sqrt(self.regions.shape[0])))
        if k < 1 or k * k != self.regions.shape[0] or self.regions.shape[1] < 1:
            raise ShapeError(f"feature cube rows must be a positive square, got {self.regions.shape}")
        if not np.all(np.isfinite(self.regions)):
            raise ValueError("feature cube contains non-finite entries")

    @property
    def grid_side(self):
        return int(round(np.sqrt(self.regions.shape[0])))

    @property
    def depth(self):
        return self.regions.shape[1]


def stack_frames(frames):
    """Coerce a list of :class:`FeatureCube` (or a 3-D array) to ``T x R x D``."""
    if isinstance(frames, np.ndarray):
        arr = np.ascontiguousarray(frames, dtype=DTYPE)
        if arr.ndim != 3:
            raise ShapeError(f"frame array must be 3-D, got shape {arr.shape}")
    else:
        frames = list(frames)
        if not frames:
            raise ValueError("empty frame sequence")
        first = frames[0].regions.shape
        for t, cube in enumerate(frames):
            if cube.regions.shape != first:
                raise ShapeError(f"frame {t} has shape {cube.regions.shape}, frame 0 has {first}")
        arr = np.stack([cube.regions for cube in frames])
    if arr.shape[0] == 0:
        raise ValueError("empty frame sequence")
    return arr


def mean_pool(frames):
    """Average over time steps and regions: a length-``D`` vector."""
    return stack_frames(frames).mean(axis=(0, 1))


def _mlp(net, x):
    a = np.tanh(affine(net.w1, net.b1, x))
    return affine(net.w2, net.b2, a), a


def init_state(params, pooled):
    """Initial ``(h0, c0)`` from the pooled feature vector."""
    h0, _ = _mlp(params.init_net("init_h"), pooled)
    c0, _ = _mlp(params.init_net("init_c"), pooled)
    return h0, c0


def lstm_step(layer, h_prev, c_prev, x):
    """One LSTM update; returns ``(h, c, gates)`` with gates ordered i, f, o, g."""
    W, b = layer
    h_prev, c_prev, x = (np.ascontiguousarray(v, dtype=DTYPE) for v in (h_prev, c_prev, x))
    H = h_prev.shape[0]
    if W.shape != (4 * H, H + x.shape[0]) or b.shape != (4 * H,) or c_prev.shape != (H,):
        raise ShapeError(
            f"lstm_step: weight {W.shape}, bias {b.shape} vs h {h_prev.shape}, "
            f"c {c_prev.shape}, x {x.shape}"
        )
    gates, c, _, h = kernels.active().lstm_forward(W, b, h_prev, c_prev, x)
    return h, c, gates


def attend(head, h_top, next_cube):
    """Distribution over the regions of ``next_cube``."""
    X = next_cube.regions if isinstance(next_cube, FeatureCube) else np.ascontiguousarray(next_cube, dtype=DTYPE)
    h_top = np.ascontiguousarray(h_top, dtype=DTYPE)
    if head.w_h.shape[1] != h_top.shape[0] or head.w_c.shape != X.shape:
        raise ShapeError(f"attend: w_h {head.w_h.shape}, w_c {head.w_c.shape} vs h {h_top.shape}, cube {X.shape}")
    return kernels.active().attend_forward(head.w_h, head.w_c, h_top, X, head.context == "region")


def blend(attention_map, cube):
    """Attention-weighted sum of the cube's region rows."""
    X = cube.regions if isinstance(cube, FeatureCube) else np.asarray(cube, dtype=DTYPE)
    p = np.ascontiguousarray(attention_map, dtype=DTYPE)
    if p.shape != (X.shape[0],):
        raise ShapeError(f"blend: map of length {p.shape} vs cube with {X.shape[0]} regions")
    return kernels.active().blend_forward(p, X)


@dataclass
class StepCache:
    inputs: list = field(default_factory=list)    # per layer
    h_prev: list = field(default_factory=list)
    c_prev: list = field(default_factory=list)
    gates: list = field(default_factory=list)
    tanh_c: list = field(default_factory=list)
    h_out: list = field(default_factory=list)     # after dropout
    masks: list = field(default_factory=list)     # None when not training


@dataclass
class StateCache:
    """Everything backward needs from one unrolled forward pass."""

    frames: np.ndarray
    pooled: np.ndarray
    init_hidden: dict
    h0: np.ndarray
    c0: np.ndarray
    maps: np.ndarray
    blended: list
    steps: list

    def __len__(self):
        return self.maps.shape[0]


def forward_sequence(params, frames, rng=None, training=False):
    """Unroll the model over ``frames``; returns ``(maps, cache)``.

    ``maps[t]`` is the predicted distribution over frame ``t``'s cells.
    ``maps[0]`` comes from the initial state; each later map comes from the
    state after consuming frames ``0..t-1``.
    """
    cfg = params.config
    X = stack_frames(frames)
    T, R, D = X.shape
    if R != cfg.regions or D != cfg.depth:
        raise ShapeError(f"frames have {R} regions x {D} channels; model expects {cfg.regions} x {cfg.depth}")
    use_dropout = training and cfg.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ValueError("training with dropout requires an rng")

    k = kernels.active()
    region = cfg.context == "region"
    w_h, w_c = params["attn.w_h"], params["attn.w_c"]
    pooled = X.mean(axis=(0, 1))
    h0, a_h = _mlp(params.init_net("init_h"), pooled)
    c0, a_c = _mlp(params.init_net("init_c"), pooled)

    maps = np.empty((T, R), dtype=DTYPE)
    maps[0] = k.attend_forward(w_h, w_c, h0, X[0], region)
    layers = [params.layer(i) for i in range(cfg.num_layers)]
    h = [h0] * cfg.num_layers
    c = [c0] * cfg.num_layers
    blended, steps = [], []
    for t in range(T - 1):
        x = k.blend_forward(maps[t], X[t])
        blended.append(x)
        step = StepCache()
        inp = x
        for li, (W, b) in enumerate(layers):
            gates, c_new, tanh_c, h_new = k.lstm_forward(W, b, h[li], c[li], inp)
            mask = dropout_mask(cfg.dropout_rate, cfg.hidden, rng) if use_dropout else None
            out = h_new * mask if mask is not None else h_new
            step.inputs.append(inp)
            step.h_prev.append(h[li])
            step.c_prev.append(c[li])
            step.gates.append(gates)
            step.tanh_c.append(tanh_c)
            step.h_out.append(out)
            step.masks.append(mask)
            h[li], c[li] = h_new, c_new
            inp = out
        steps.append(step)
        maps[t + 1] = k.attend_forward(w_h, w_c, inp, X[t + 1], region)

    cache = StateCache(
        frames=X, pooled=pooled, init_hidden={"init_h": a_h, "init_c": a_c},
        h0=h0, c0=c0, maps=maps, blended=blended, steps=steps,
    )
    return maps, cache


def predict(params, frames):
    """Inference-mode attention maps, ``T x K*K``."""
    maps, _ = forward_sequence(params, frames, training=False)
    return maps


def uniform_map(grid):
    return np.full(grid * grid, 1.0 / (grid * grid))


__all__ = [
    "AttentionHead", "FeatureCube", "InitNet", "LstmLayer", "ModelConfig", "ModelParams",
    "StateCache", "attend", "blend", "forward_sequence", "init_params", "init_state",
    "lstm_step", "mean_pool", "predict", "stack_frames", "uniform_map", "zero_params",
]
