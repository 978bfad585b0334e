"""Gaze preprocessing, labeled sequences, and the synthetic dataset generator."""

import bisect
import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .model import FeatureCube
from .tensor import DTYPE

log = logging.getLogger(__name__)


class GazeDataError(ValueError):
    pass


@dataclass
class LabeledSequence:
    """``T`` frames of ``K*K x D`` features with one grid-cell label each.

    Labels are 0-based cell indices, ``row * K + col``.
    """

    name: str
    features: np.ndarray  # T x K*K x D
    labels: np.ndarray    # T, int64

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 3:
            raise ValueError(f"{self.name}: features must be T x K*K x D, got {self.features.shape}")
        T, R, D = self.features.shape
        K = math.isqrt(R)
        if K < 1 or K * K != R or D < 1:
            raise ValueError(f"{self.name}: region count {R} is not a positive square or D < 1")
        if self.labels.shape != (T,):
            raise ValueError(f"{self.name}: {self.labels.shape} labels for {T} frames")
        bad = np.flatnonzero((self.labels < 0) | (self.labels >= R))
        if bad.size:
            raise ValueError(f"{self.name}: label {self.labels[bad[0]]} at frame {bad[0]} outside [0, {R})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"{self.name}: non-finite features")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def grid(self):
        return math.isqrt(self.features.shape[1])

    @property
    def depth(self):
        return self.features.shape[2]

    @property
    def frames(self):
        return [FeatureCube(x) for x in self.features]

    def slice(self, start, stop, name=None):
        return LabeledSequence(name or self.name, self.features[start:stop], self.labels[start:stop])


def fill_missing(fixations):
    """Give every ``None`` entry the value of the nearest non-``None`` entry.

    Distance is measured in frame indices; equidistant ties go to the
    earlier frame.
    """
    fixations = list(fixations)
    known = [i for i, f in enumerate(fixations) if f is not None]
    if not known:
        raise GazeDataError("no labeled frames to fill from")
    out = []
    for i, f in enumerate(fixations):
        if f is not None:
            out.append(f)
            continue
        j = bisect.bisect_left(known, i)
        before = known[j - 1] if j > 0 else None
        after = known[j] if j < len(known) else None
        if after is None or (before is not None and i - before <= after - i):
            out.append(fixations[before])
        else:
            out.append(fixations[after])
    return out


def quantize(x, y, width, height, grid):
    """Grid cell index ``row * grid + col`` of pixel ``(x, y)``."""
    if width <= 0 or height <= 0 or grid < 1:
        raise GazeDataError(f"bad frame size {width}x{height} or grid {grid}")
    if not (0 <= x < width and 0 <= y < height):
        raise GazeDataError(f"fixation ({x}, {y}) outside {width}x{height} frame")
    row = min(int(math.floor(y * grid / height)), grid - 1)
    col = min(int(math.floor(x * grid / width)), grid - 1)
    return row * grid + col


def vote(labels):
    """Most frequent label; ties go to the smallest index."""
    counts = Counter(labels)
    if not counts:
        raise GazeDataError("cannot vote on an empty label list")
    return min(counts, key=lambda lab: (-counts[lab], lab))


def split(seq, train_fraction):
    """Temporal prefix/suffix split (no shuffling)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    T = len(seq)
    # round away float noise such as 0.29 * 100 = 28.999999999999996
    n = math.floor(round(T * train_fraction, 9))
    if n == 0 or n == T:
        raise ValueError(f"splitting {T} frames at {train_fraction} leaves an empty partition")
    return seq.slice(0, n, f"{seq.name}:train"), seq.slice(n, T, f"{seq.name}:test")


@dataclass
class GazeRecord:
    frame: int
    participant: int
    x: float
    y: float
    width: float
    height: float


def read_gaze_csv(path):
    """Parse ``frame,participant,x,y,width,height``; empty x,y mean unlabeled."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"frame", "participant", "x", "y", "width", "height"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise GazeDataError(f"{path}: header must contain {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                xs, ys = row["x"].strip(), row["y"].strip()
                if bool(xs) != bool(ys):
                    raise GazeDataError("only one of x, y present")
                records.append(GazeRecord(
                    int(row["frame"]), int(row["participant"]),
                    float(xs) if xs else None, float(ys) if ys else None,
                    float(row["width"]), float(row["height"]),
                ))
            except (TypeError, ValueError) as exc:
                raise GazeDataError(f"{path}:{lineno}: {exc}") from None
            if records[-1].frame < 0:
                raise GazeDataError(f"{path}:{lineno}: negative frame index")
    return records


def read_overrides(path):
    """``frame,label`` CSV of manual label corrections."""
    out = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                out[int(row["frame"])] = int(row["label"])
            except (KeyError, TypeError, ValueError) as exc:
                raise GazeDataError(f"{path}:{lineno}: {exc}") from None
    return out


def apply_overrides(labels, overrides, grid):
    labels = list(labels)
    for frame, label in overrides.items():
        if not 0 <= frame < len(labels):
            raise GazeDataError(f"override for frame {frame} outside [0, {len(labels)})")
        if not 0 <= label < grid * grid:
            raise GazeDataError(f"override label {label} at frame {frame} outside [0, {grid * grid})")
        labels[frame] = label
    return labels


def labels_from_gaze(records, grid, num_frames=None, overrides=None):
    """Per-frame labels: fill each participant's gaps, quantize, vote, override.

    Participants with no labeled frame at all are dropped.
    """
    if not records:
        raise GazeDataError("no gaze records")
    if num_frames is None:
        num_frames = max(r.frame for r in records) + 1
    by_participant = defaultdict(lambda: [None] * num_frames)
    for r in records:
        if r.frame >= num_frames:
            raise GazeDataError(f"record for frame {r.frame} beyond {num_frames} frames")
        track = by_participant[r.participant]
        if r.x is not None:
            # validates bounds eagerly; invalid pairs are never filled over
            quantize(r.x, r.y, r.width, r.height, grid)
            track[r.frame] = (r.x, r.y, r.width, r.height)

    per_frame = [[] for _ in range(num_frames)]
    for pid in sorted(by_participant):
        track = by_participant[pid]
        if all(f is None for f in track):
            log.warning("participant %d has no labeled frames; skipped", pid)
            continue
        for t, (x, y, w, h) in enumerate(fill_missing(track)):
            per_frame[t].append(quantize(x, y, w, h, grid))
    if not per_frame[0]:
        raise GazeDataError("no participant has any labeled frame")
    labels = [vote(cells) for cells in per_frame]
    if overrides:
        labels = apply_overrides(labels, overrides, grid)
    return labels


@dataclass
class SynthConfig:
    grid: int = 7
    depth: int = 8
    num_sequences: int = 5
    frames_per_sequence: int = 40
    step_size: int = 1
    signal_strength: float = 3.0
    noise_sigma: float = 0.0
    seed: int = 0
    random_labels: bool = False

    def __post_init__(self):
        if self.grid < 1 or self.depth < 1 or self.num_sequences < 1 or self.frames_per_sequence < 1:
            raise ValueError("grid, depth, num_sequences and frames_per_sequence must be >= 1")
        if self.step_size < 0:
            raise ValueError("step_size must be >= 0")
        if self.signal_strength <= 0:
            raise ValueError("signal_strength must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def synth_generate(cfg):
    """Moving-target sequences: one bright cell on channel 0 plus Gaussian noise.

    The target does a random walk of up to ``step_size`` cells per axis per
    frame, clamped to the grid. With ``random_labels`` the labels are drawn
    uniformly and independently of the features.
    """
    rng = np.random.default_rng(cfg.seed)
    K, R = cfg.grid, cfg.grid * cfg.grid
    T = cfg.frames_per_sequence
    out = []
    for s in range(cfg.num_sequences):
        row, col = rng.integers(0, K, size=2)
        cells = np.empty(T, dtype=np.int64)
        for t in range(T):
            if t > 0 and cfg.step_size:
                dr, dc = rng.integers(-cfg.step_size, cfg.step_size + 1, size=2)
                row = int(np.clip(row + dr, 0, K - 1))
                col = int(np.clip(col + dc, 0, K - 1))
            cells[t] = row * K + col
        feats = np.zeros((T, R, cfg.depth))
        if cfg.noise_sigma:
            feats += rng.normal(0.0, cfg.noise_sigma, size=feats.shape)
        feats[np.arange(T), cells, 0] += cfg.signal_strength
        labels = rng.integers(0, R, size=T) if cfg.random_labels else cells
        out.append(LabeledSequence(f"synth{s:03d}", feats, labels))
    return out
