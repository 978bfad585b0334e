"""Command-line entry point: ``gazeattn <subcommand> [flags]``.

Exit codes: 0 success, 1 invalid input or failed check, 2 I/O error.
Diagnostics and the config echo go to stderr; stdout carries data only.
"""

import argparse
import csv
import logging
import math
import os
import re
import sys

import numpy as np

from . import kernels
from .data import (GazeDataError, LabeledSequence, SynthConfig, labels_from_gaze, read_gaze_csv,
                   read_overrides, split, synth_generate)
from .evaluation import evaluate
from .formats import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .model import CONTEXT_MODES, ModelConfig, forward_sequence, init_params
from .training import TrainConfig, gradient_check, train

log = logging.getLogger("gazeattn")

PROFILES = {
    # one-layer model, stopped at iteration 200
    "car": {"layers": 1, "max_iters": 200, "hidden": 64, "gamma": 0.01},
    # two-layer model, stopped at iteration 1000
    "uno": {"layers": 2, "max_iters": 1000, "hidden": 64, "gamma": 0.01},
}
TRAIN_DEFAULTS = {"layers": 1, "max_iters": 1000, "hidden": 64, "gamma": 0.01}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _echo(pairs):
    for key, value in pairs.items():
        print(f"{key}: {value}", file=sys.stderr)


def _open_out(path):
    return (sys.stdout, False) if path == "-" else (open(path, "w", newline=""), True)


def cmd_synth(args):
    cfg = SynthConfig(grid=args.grid, depth=args.depth, num_sequences=args.sequences,
                      frames_per_sequence=args.frames, step_size=args.step,
                      signal_strength=args.signal, noise_sigma=args.noise, seed=args.seed,
                      random_labels=args.random_labels)
    _echo(vars(cfg))
    save_dataset(synth_generate(cfg), args.out)
    return 0


def cmd_prep(args):
    _echo({"grid": args.grid, "frames": args.frames, "train_fraction": args.train_fraction})
    if args.out and not args.features:
        raise GazeDataError("--out needs --features (a GZDS file supplying the feature cubes)")
    if not args.out and not args.labels_out:
        raise GazeDataError("nothing to write: give --features with --out, or --labels-out")
    records = read_gaze_csv(args.gaze)
    overrides = read_overrides(args.overrides) if args.overrides else None
    num_frames = args.frames
    features = None
    if args.features:
        seqs = load_dataset(args.features)
        if len(seqs) != 1:
            raise GazeDataError(f"{args.features}: expected exactly one sequence, found {len(seqs)}")
        features = seqs[0]
        if features.grid != args.grid:
            raise GazeDataError(f"features use K={features.grid}, --grid is {args.grid}")
        num_frames = num_frames or len(features)
        if num_frames != len(features):
            raise GazeDataError(f"--frames {num_frames} != {len(features)} feature frames")
    labels = labels_from_gaze(records, args.grid, num_frames, overrides)
    if args.labels_out:
        with open(args.labels_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "label"])
            w.writerows(enumerate(labels))
    if features is not None and args.out:
        seq = LabeledSequence(features.name, features.features, labels)
        if args.train_fraction is not None:
            train_seq, test_seq = split(seq, args.train_fraction)
            save_dataset([train_seq], args.out)
            if args.test_out:
                save_dataset([test_seq], args.test_out)
        else:
            save_dataset([seq], args.out)
    return 0


def _resolve_train(args):
    base = dict(TRAIN_DEFAULTS)
    if args.profile:
        base.update(PROFILES[args.profile])
    for key in base:
        if getattr(args, key) is not None:
            base[key] = getattr(args, key)
    return base


def cmd_train(args):
    data = load_dataset(args.data)
    if not data:
        raise ValueError(f"{args.data}: no sequences")
    grid, depth = data[0].grid, data[0].depth
    if any((s.grid, s.depth) != (grid, depth) for s in data):
        raise ValueError("sequences disagree on K or D")
    if args.grid is not None and args.grid != grid:
        raise ValueError(f"--grid {args.grid} but the dataset uses K={grid}")
    r = _resolve_train(args)
    mcfg = ModelConfig(grid=grid, depth=depth, hidden=r["hidden"], num_layers=r["layers"],
                       dropout_rate=args.dropout, context=args.context)
    tcfg = TrainConfig(gamma=r["gamma"], max_iterations=r["max_iters"], bptt_window=args.bptt,
                       epochs=args.epochs, lr=args.lr, beta1=args.beta1, beta2=args.beta2,
                       adam_eps=args.adam_eps, clip_norm=args.clip, seed=args.seed,
                       val_every=args.val_every)
    _echo({"profile": args.profile or "none", "grid": grid, "depth": depth, "hidden": mcfg.hidden,
           "layers": mcfg.num_layers, "dropout": mcfg.dropout_rate, "context": mcfg.context,
           "gamma": tcfg.gamma, "max_iters": tcfg.max_iterations, "bptt": tcfg.bptt_window,
           "epochs": tcfg.epochs, "lr": tcfg.lr, "clip": tcfg.clip_norm, "seed": tcfg.seed,
           "kernels": kernels.active().NAME})
    validation = load_dataset(args.val_data) if args.val_data else None
    params = init_params(mcfg, np.random.default_rng(args.seed))
    params, curve = train(data, params, tcfg, validation=validation)
    save_checkpoint(params, args.out)
    if args.curve:
        curve.to_csv(args.curve)
    print(f"iterations: {len(curve)}", file=sys.stderr)
    print(f"final_loss: {curve.points[-1].loss:.6g}", file=sys.stderr)
    return 0


def cmd_eval(args):
    params = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    _echo({"epsilon": args.epsilon, "window": args.window})
    report = evaluate(params, data, epsilon=args.epsilon, window=args.window, workers=args.workers)
    if args.report:
        report.write_text(args.report)
    if args.csv:
        report.write_csv(args.csv)
    for key, value in report.summary().items():
        print(f"{key}: {value}", file=sys.stderr)
    return 0


def cmd_predict(args):
    params = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    R = params.config.regions
    fh, close = _open_out(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "frame"] + [f"p{i}" for i in range(R)])
        for seq in data:
            step = args.window or len(seq)
            for a in range(0, len(seq), step):
                maps, _ = forward_sequence(params, seq.features[a : a + step], training=False)
                for t, m in enumerate(maps, start=a):
                    w.writerow([seq.name, t] + [f"{v:.17g}" for v in m])
    finally:
        if close:
            fh.close()
    return 0


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    cfg = ModelConfig(grid=args.grid, depth=args.depth, hidden=args.hidden,
                      num_layers=args.layers, dropout_rate=0.0, context=args.context)
    _echo({"seed": args.seed, "grid": args.grid, "depth": args.depth, "hidden": args.hidden,
           "layers": args.layers, "frames": args.frames, "coords": args.coords,
           "gamma": args.gamma, "eps": args.eps, "tolerance": args.tol})
    params = init_params(cfg, rng)
    frames = rng.normal(size=(args.frames, cfg.regions, cfg.depth))
    labels = rng.integers(0, cfg.regions, size=args.frames)
    rows = gradient_check(params, frames, labels, args.gamma, args.coords, rng, eps=args.eps)
    worst = max(r[4] for r in rows)
    ok = worst < args.tol
    print(f"coordinates checked: {len(rows)}")
    print(f"max relative error: {worst:.3e}")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def _safe(name):
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def pgm(probs):
    """Plain (P2) graymap of one map; brightness ``round(255 * p / max p)``."""
    probs = np.asarray(probs, dtype=float)
    K = math.isqrt(probs.size)
    if K * K != probs.size or K == 0:
        raise ValueError(f"{probs.size} probabilities do not form a square grid")
    top = probs.max()
    pix = np.rint(255.0 * probs / top).astype(int) if top > 0 else np.zeros(probs.size, int)
    lines = ["P2", f"{K} {K}", "255"]
    lines += [" ".join(str(v) for v in pix[r * K : (r + 1) * K]) for r in range(K)]
    return "\n".join(lines) + "\n"


def cmd_render(args):
    fh = sys.stdin if args.input == "-" else open(args.input, newline="")
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["sequence", "frame"]:
            raise ValueError("attention CSV must start with a sequence,frame,p0,... header")
        os.makedirs(args.out_dir, exist_ok=True)
        n = 0
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"line {lineno}: {len(row)} fields, header has {len(header)}")
            probs = np.array([float(v) for v in row[2:]])
            path = os.path.join(args.out_dir, f"{_safe(row[0])}_{int(row[1]):05d}.pgm")
            with open(path, "w") as out:
                out.write(pgm(probs))
            n += 1
    finally:
        if fh is not sys.stdin:
            fh.close()
    print(f"rendered: {n}", file=sys.stderr)
    return 0


def build_parser():
    p = _Parser(prog="gazeattn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic moving-target dataset (GZDS)")
    s.add_argument("--out", required=True)
    s.add_argument("--grid", type=int, default=7, help="grid side K (default 7)")
    s.add_argument("--depth", type=int, default=8, help="feature channels D (default 8)")
    s.add_argument("--sequences", type=int, default=5, help="default 5")
    s.add_argument("--frames", type=int, default=40, help="frames per sequence (default 40)")
    s.add_argument("--step", type=int, default=1, help="random-walk step in cells (default 1)")
    s.add_argument("--signal", type=float, default=3.0, help="target strength on channel 0 (default 3)")
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma (default 0)")
    s.add_argument("--random-labels", action="store_true", help="labels independent of features")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prep", help="gaze CSV -> per-frame labels (fill, quantize, vote, override)")
    s.add_argument("gaze", help="CSV with header frame,participant,x,y,width,height")
    s.add_argument("--grid", type=int, default=7, help="default 7")
    s.add_argument("--frames", type=int, default=None, help="frame count (default: from features or max frame + 1)")
    s.add_argument("--features", default=None, help="single-sequence GZDS supplying feature cubes")
    s.add_argument("--overrides", default=None, help="CSV frame,label of manual corrections")
    s.add_argument("--out", default=None, help="labeled GZDS output (needs --features)")
    s.add_argument("--labels-out", default=None, help="CSV frame,label output")
    s.add_argument("--train-fraction", type=float, default=None,
                   help="write only the leading fraction to --out (default: no split)")
    s.add_argument("--test-out", default=None, help="GZDS for the remainder when splitting")
    s.set_defaults(func=cmd_prep)

    s = sub.add_parser("train", help="train a model on a GZDS dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint path (GZAT)")
    s.add_argument("--curve", default=None, help="training-curve CSV")
    s.add_argument("--profile", choices=sorted(PROFILES), default=None,
                   help="car: 1 layer, 200 iters; uno: 2 layers, 1000 iters")
    s.add_argument("--grid", type=int, default=None, help="must match the dataset (default: from data)")
    s.add_argument("--hidden", type=int, default=None, help="LSTM width (default 64)")
    s.add_argument("--layers", type=int, default=None, help="LSTM layers (default 1)")
    s.add_argument("--gamma", type=float, default=None, help="L2 weight (default 0.01)")
    s.add_argument("--max-iters", dest="max_iters", type=int, default=None, help="default 1000")
    s.add_argument("--dropout", type=float, default=0.5, help="default 0.5")
    s.add_argument("--context", choices=CONTEXT_MODES, default="region", help="default region")
    s.add_argument("--bptt", type=int, default=30, help="frames per update (default 30)")
    s.add_argument("--epochs", type=int, default=1, help="default 1")
    s.add_argument("--lr", type=float, default=1e-3, help="default 1e-3")
    s.add_argument("--beta1", type=float, default=0.9)
    s.add_argument("--beta2", type=float, default=0.999)
    s.add_argument("--adam-eps", dest="adam_eps", type=float, default=1e-8)
    s.add_argument("--clip", type=float, default=5.0, help="global grad-norm clip (default 5)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--val-data", default=None, help="GZDS scored into the curve's val_kl column")
    s.add_argument("--val-every", type=int, default=0, help="iterations between val scores (default 0: never)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="KL / top-1 evaluation of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--report", default=None, help="key: value text report")
    s.add_argument("--csv", default=None, help="per-frame CSV frame,kl,correct")
    s.add_argument("--epsilon", type=float, default=0.01, help="ground-truth smoothing (default 0.01)")
    s.add_argument("--window", type=int, default=30, help="unroll length, 0 = whole sequence (default 30)")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="per-frame attention maps as CSV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", default="-", help="CSV path (default stdout)")
    s.add_argument("--window", type=int, default=30, help="unroll length, 0 = whole sequence (default 30)")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("gradcheck", help="finite-difference check of backprop on a random model")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--grid", type=int, default=4)
    s.add_argument("--depth", type=int, default=6)
    s.add_argument("--hidden", type=int, default=8)
    s.add_argument("--layers", type=int, default=2)
    s.add_argument("--frames", type=int, default=5)
    s.add_argument("--context", choices=CONTEXT_MODES, default="region")
    s.add_argument("--coords", type=int, default=200)
    s.add_argument("--gamma", type=float, default=0.01)
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("render", help="attention CSV -> one K x K PGM heatmap per frame")
    s.add_argument("--input", default="-", help="attention CSV (default stdin)")
    s.add_argument("--out-dir", dest="out_dir", required=True)
    s.set_defaults(func=cmd_render)
    return p


def run(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, GazeDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
