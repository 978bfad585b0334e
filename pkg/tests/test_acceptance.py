"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` (the lines are also
collected into the terminal summary). Thresholds are the criterion
thresholds; training hyperparameters that the criteria leave open are
chosen here and listed next to each check.
"""

import struct
import time

import numpy as np
import pytest

from gazeattn import cli, kernels
from gazeattn.data import SynthConfig, fill_missing, quantize, split, synth_generate, vote, LabeledSequence
from gazeattn.evaluation import evaluate
from gazeattn.formats import (FormatError, dumps_checkpoint, dumps_dataset, loads_checkpoint,
                              loads_dataset)
from gazeattn.model import ModelConfig, forward_sequence, init_params
from gazeattn.training import TrainConfig, TrainCurve, gradient_check, moving_average, train

RESULTS = []


def report(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def mean_ce_per_frame(params, data, window):
    total, frames = 0.0, 0
    for seq in data:
        for a in range(0, len(seq), window):
            maps, _ = forward_sequence(params, seq.features[a : a + window])
            labels = seq.labels[a : a + window]
            total -= np.sum(np.log(np.maximum(maps[np.arange(len(labels)), labels], 1e-12)))
            frames += len(labels)
    return total / frames


# 1. gradient fidelity ------------------------------------------------------

@pytest.mark.parametrize("backend_name", kernels.available())
def test_c1_gradient_fidelity(backend_name):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    cfg = ModelConfig(grid=4, depth=6, hidden=8, num_layers=2, dropout_rate=0.0)
    with kernels.using(backend_name):
        params = init_params(cfg, rng)
        frames = rng.normal(size=(5, cfg.regions, cfg.depth))
        labels = rng.integers(0, cfg.regions, size=5)
        rows = gradient_check(params, frames, labels, 0.01, 200, rng, eps=1e-5)
    elapsed = time.perf_counter() - start
    worst = max(r[4] for r in rows)
    ok = len(rows) >= 200 and worst < 1e-4 and elapsed < 60
    report(1, f"gradient fidelity [{backend_name}]", ok,
           f"{len(rows)} coords, max rel err {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert ok


# 2. overfit capacity -------------------------------------------------------

def test_c2_overfit():
    # lr 0.01, 30-frame windows, default dropout 0.5; iteration cap 500
    start = time.perf_counter()
    data = synth_generate(SynthConfig(grid=4, depth=8, num_sequences=5, frames_per_sequence=40, seed=0))
    params = init_params(ModelConfig(grid=4, depth=8, hidden=16), np.random.default_rng(0))
    _, curve = train(data, params, TrainConfig(max_iterations=500, epochs=1000, lr=0.01, bptt_window=30))
    rep = evaluate(params, data, window=30)
    ce = mean_ce_per_frame(params, data, 30)
    elapsed = time.perf_counter() - start
    ok = len(curve) <= 500 and rep.top1_accuracy == 1.0 and ce < 0.1 and elapsed < 120
    report(2, "overfit capacity", ok,
           f"{len(curve)} iters, train top-1 {rep.top1_accuracy:.4f} (= 1), "
           f"CE {ce:.4f} nats/frame (< 0.1), {elapsed:.1f}s (< 120s)")
    assert ok


# 3. generalization ---------------------------------------------------------

def _synth_pair(random_labels):
    common = dict(grid=7, depth=8, frames_per_sequence=60, noise_sigma=0.3, random_labels=random_labels)
    train_set = synth_generate(SynthConfig(num_sequences=20, seed=11, **common))
    test_set = synth_generate(SynthConfig(num_sequences=10, seed=12, **common))
    return train_set, test_set


def _fit(train_set, iterations):
    params = init_params(ModelConfig(grid=7, depth=8, hidden=16), np.random.default_rng(0))
    train(train_set, params, TrainConfig(max_iterations=iterations, epochs=100, lr=0.01, bptt_window=30))
    return params


def test_c3_generalization():
    # H=16, 1 layer, lr 0.01, 500 iterations
    start = time.perf_counter()
    train_set, test_set = _synth_pair(random_labels=False)
    rep = evaluate(_fit(train_set, 500), test_set)
    elapsed = time.perf_counter() - start
    ratio = rep.mean_kl / rep.uniform_baseline_kl
    ok = ratio < 0.25 and elapsed < 300
    report(3, "generalization", ok,
           f"held-out KL {rep.mean_kl:.3f} / baseline {rep.uniform_baseline_kl:.3f} = {ratio:.3f} (< 0.25), "
           f"{elapsed:.1f}s (< 300s)")
    assert ok


# 4. hard-context sanity ----------------------------------------------------

def test_c4_random_labels():
    train_set, test_set = _synth_pair(random_labels=True)
    rep = evaluate(_fit(train_set, 500), test_set)
    ratio = rep.mean_kl / rep.uniform_baseline_kl
    ok = abs(ratio - 1.0) <= 0.10
    report(4, "no hallucinated structure", ok,
           f"held-out KL {rep.mean_kl:.3f} / baseline {rep.uniform_baseline_kl:.3f} = {ratio:.3f} (within 1 +/- 0.10)")
    assert ok


# 5. paper-setting structural reproduction ----------------------------------

@pytest.fixture(scope="module")
def profile_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("profiles")
    data = root / "synth.gzds"
    assert cli.run(["synth", "--out", str(data), "--grid", "7", "--depth", "8", "--sequences", "10",
                    "--frames", "300", "--noise", "0.3", "--seed", "0"]) == 0
    runs = {}
    for profile in ("car", "uno"):
        ckpt, curve = root / f"{profile}.gzat", root / f"{profile}.csv"
        # 100 epochs of 100 windows: only the profile's iteration cap can stop the run
        code = cli.run(["train", "--data", str(data), "--out", str(ckpt), "--curve", str(curve),
                        "--profile", profile, "--epochs", "100"])
        assert code == 0
        runs[profile] = (ckpt, curve)
    return runs


EXPECTED_PROFILE = {"car": (1, 200), "uno": (2, 1000)}


def _ma_after_100(curve_path):
    losses = TrainCurve.from_csv(curve_path).losses()
    ma = moving_average(losses, 50)
    return losses, ma[99:]


def test_c5_profile_structure(profile_runs):
    details, ok = [], True
    for profile, (layers, iters) in EXPECTED_PROFILE.items():
        ckpt, curve = profile_runs[profile]
        cfg = cli.load_checkpoint(ckpt).config
        n = len(TrainCurve.from_csv(curve))
        good = (cfg.num_layers, cfg.hidden, cfg.grid, n) == (layers, 64, 7, iters)
        ok &= good
        details.append(f"{profile}: {cfg.num_layers} layer(s), H={cfg.hidden}, K={cfg.grid}, {n} iters")
    report("5a", "profile structure", ok, "; ".join(details))
    assert ok


def test_c5_moving_average_non_increasing(profile_runs):
    details, ok = [], True
    for profile in EXPECTED_PROFILE:
        _, ma = _ma_after_100(profile_runs[profile][1])
        steps = np.diff(ma)
        rises = int(np.sum(steps > 0))
        ok &= rises == 0
        details.append(f"{profile}: {rises}/{steps.size} rising steps, max rise "
                       f"{np.max(steps / ma[:-1]) * 100:.2f}%, MA {ma[0]:.1f} -> {ma[-1]:.1f}")
    report("5b", "MA50 of training loss non-increasing after iteration 100", ok, "; ".join(details))
    assert ok


# 6. determinism ------------------------------------------------------------

def test_c6_determinism(tmp_path):
    outputs = []
    for run in range(2):
        d = tmp_path / f"run{run}"
        d.mkdir()
        assert cli.run(["synth", "--out", str(d / "s.gzds"), "--grid", "5", "--depth", "4",
                        "--sequences", "3", "--frames", "40", "--noise", "0.3", "--seed", "3"]) == 0
        assert cli.run(["train", "--data", str(d / "s.gzds"), "--out", str(d / "m.gzat"),
                        "--curve", str(d / "c.csv"), "--hidden", "8", "--layers", "2",
                        "--max-iters", "30", "--epochs", "10", "--seed", "5"]) == 0
        assert cli.run(["eval", "--checkpoint", str(d / "m.gzat"), "--data", str(d / "s.gzds"),
                        "--report", str(d / "r.txt"), "--csv", str(d / "r.csv")]) == 0
        outputs.append({f: (d / f).read_bytes() for f in ("s.gzds", "m.gzat", "c.csv", "r.txt", "r.csv")})
    same = {f: outputs[0][f] == outputs[1][f] for f in outputs[0]}
    ok = all(same.values())
    report(6, "determinism", ok, ", ".join(f"{f} {'identical' if s else 'DIFFERS'}" for f, s in same.items()))
    assert ok


# 7. preprocessing exactness ------------------------------------------------

def test_c7_preprocessing():
    feats = np.zeros((3025, 1, 1))
    seq = LabeledSequence("v", feats, np.zeros(3025, int))
    tr, te = split(seq, 0.8)
    gap = [None] * 11
    gap[0], gap[10] = "a", "b"
    checks = {
        "fill no-op": fill_missing([1, 2, 3]) == [1, 2, 3],
        "fill nearest": fill_missing(gap)[3] == "a" and fill_missing(gap)[7] == "b",
        "fill tie -> earlier": fill_missing(["a", None, None, None, "b"])[2] == "a",
        "quantize corners/centre": (quantize(0, 0, 640, 480, 7), quantize(639, 479, 640, 480, 7),
                                    quantize(320, 240, 640, 480, 7)) == (0, 48, 24),
        "vote unanimous": vote([17] * 25) == 17,
        "vote plurality": vote([3] * 5 + [7] * 4) == 3,
        "vote tie -> smallest": vote([6] * 10 + [2] * 10 + [1] * 5) == 2,
        "split 3025 -> 2420/605": (len(tr), len(te)) == (2420, 605),
        "split 10 -> 8/2": tuple(map(len, split(seq.slice(0, 10), 0.8))) == (8, 2),
    }
    try:
        split(seq.slice(0, 1), 0.8)
        checks["split T=1 rejected"] = False
    except ValueError:
        checks["split T=1 rejected"] = True
    failed = [k for k, v in checks.items() if not v]
    ok = not failed
    report(7, "preprocessing exactness", ok, f"{len(checks) - len(failed)}/{len(checks)} examples" +
           (f"; failed: {failed}" if failed else ""))
    assert ok


# 8. format round-trips -----------------------------------------------------

def test_c8_formats():
    data = synth_generate(SynthConfig(grid=4, depth=3, num_sequences=2, frames_per_sequence=9,
                                      noise_sigma=1.0, seed=8))
    params = init_params(ModelConfig(grid=4, depth=3, hidden=5, num_layers=2), np.random.default_rng(8))
    raw_d, raw_c = dumps_dataset(data), dumps_checkpoint(params)
    checks = {
        "GZDS bit-exact": dumps_dataset(loads_dataset(raw_d)) == raw_d,
        "GZAT bit-exact": dumps_checkpoint(loads_checkpoint(raw_c)) == raw_c,
    }

    def rejected(loader, buf, offset=None):
        try:
            loader(buf)
        except FormatError as exc:
            return offset is None or exc.offset == offset
        return False

    name_len = struct.unpack("<I", raw_d[12:16])[0]
    label0 = 16 + name_len + 12
    bad_label = raw_d[:label0] + struct.pack("<I", 16) + raw_d[label0 + 4 :]
    checks.update({
        "GZDS truncated": rejected(loads_dataset, raw_d[:-1]),
        "GZDS bad magic": rejected(loads_dataset, b"NOPE" + raw_d[4:], 0),
        "GZDS label = K*K": rejected(loads_dataset, bad_label, label0),
        "GZAT truncated": rejected(loads_checkpoint, raw_c[:50]),
        "GZAT bad version": rejected(loads_checkpoint, raw_c[:4] + struct.pack("<I", 9) + raw_c[8:], 4),
        "GZAT trailing": rejected(loads_checkpoint, raw_c + b"x", len(raw_c)),
    })
    failed = [k for k, v in checks.items() if not v]
    ok = not failed
    report(8, "format round-trips", ok, f"{len(checks) - len(failed)}/{len(checks)} checks" +
           (f"; failed: {failed}" if failed else ""))
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
