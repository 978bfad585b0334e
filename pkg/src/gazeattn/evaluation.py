"""KL-divergence evaluation of predicted attention maps against gaze labels."""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import forward_sequence

Q_FLOOR = 1e-12


def groundtruth_map(label, grid, epsilon=0.01):
    """Smoothed one-hot: ``(1 - epsilon)`` at ``label`` plus ``epsilon / K**2`` everywhere."""
    R = grid * grid
    if not 0 <= label < R:
        raise ValueError(f"label {label} outside [0, {R})")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    m = np.full(R, epsilon / R)
    m[label] += 1.0 - epsilon
    return m


def kl_divergence(p, q):
    """``KL(p || q)`` in nats; ``q`` floored at 1e-12, ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"kl_divergence: shapes {p.shape} and {q.shape} differ")
    nz = p > 0
    return float(max(0.0, np.sum(p[nz] * np.log(p[nz] / np.maximum(q[nz], Q_FLOOR)))))


def top1(attention_map):
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return int(np.argmax(attention_map))


@dataclass
class EvalReport:
    per_frame_kl: np.ndarray
    correct: np.ndarray
    uniform_baseline_kl: float

    @property
    def frames_evaluated(self):
        return int(self.per_frame_kl.shape[0])

    @property
    def mean_kl(self):
        return float(np.mean(self.per_frame_kl))

    @property
    def top1_accuracy(self):
        return float(np.mean(self.correct))

    def summary(self):
        return {
            "frames_evaluated": self.frames_evaluated,
            "mean_kl": self.mean_kl,
            "top1_accuracy": self.top1_accuracy,
            "uniform_baseline_kl": self.uniform_baseline_kl,
        }

    def write_text(self, path):
        with open(path, "w") as fh:
            for key, value in self.summary().items():
                fh.write(f"{key}: {value!r}\n")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "kl", "correct"])
            for t, (kl, ok) in enumerate(zip(self.per_frame_kl, self.correct)):
                w.writerow([t, f"{kl:.17g}", int(ok)])


def _chunks(sequences, window):
    for seq in sequences:
        T = len(seq)
        step = window or T
        for start in range(0, T, step):
            yield seq.features[start : start + step], seq.labels[start : start + step]


def _score_chunk(params, chunk, epsilon):
    frames, labels = chunk
    maps, _ = forward_sequence(params, frames, training=False)
    grid = params.config.grid
    kls = [kl_divergence(groundtruth_map(int(lab), grid, epsilon), m) for lab, m in zip(labels, maps)]
    hits = [top1(m) == lab for lab, m in zip(labels, maps)]
    return kls, hits


def evaluate(params, test, epsilon=0.01, window=30, workers=1):
    """Per-frame KL and top-1 accuracy of inference-mode predictions.

    ``test`` is a :class:`~gazeattn.data.LabeledSequence` or a list of them.
    Each sequence is unrolled in independent chunks of ``window`` frames
    (``0`` = whole sequence), so results do not depend on chunk order or on
    ``workers``.
    """
    sequences = [test] if hasattr(test, "labels") else list(test)
    chunks = list(_chunks(sequences, window))
    if not chunks:
        raise ValueError("empty test set")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda c: _score_chunk(params, c, epsilon), chunks))
    else:
        results = [_score_chunk(params, c, epsilon) for c in chunks]
    kls = np.array([k for r in results for k in r[0]])
    hits = np.array([h for r in results for h in r[1]], dtype=bool)
    grid = params.config.grid
    uniform = np.full(grid * grid, 1.0 / (grid * grid))
    baseline = kl_divergence(groundtruth_map(0, grid, epsilon), uniform)
    return EvalReport(kls, hits, baseline)
