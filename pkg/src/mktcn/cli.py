"""Command-line entry point: ``mktcn gen-data|train|eval|sweep-n``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import (ABNORMAL_RATIO, PipelineConfig, generate_multiclass, generate_pipeline,
                      leak_duration_for_ratio, ngpod_like_config, read_csv, relabel, write_csv)
from .errors import MktcnError
from .metrics import METRIC_NAMES, evaluate, radar_area, report_json, write_confusion_csv, write_pr_csv
from .model import config_hash
from .preprocess import TEST, PcaModel, prepare, split_indices, transform, window_labels, windowize
from .train import TrainConfig, load_checkpoint, predict, save_checkpoint, train_model

log = logging.getLogger("mktcn")

OUT_ROOT_ENV = "MKTCN_OUT_ROOT"
FULL_SIZE_STEPS = 364613 + 12244
DEFAULT_SWEEP = (150, 200, 250, 300, 350, 400)


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _non_negative(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUT_ROOT_ENV, "runs")) / name


def write_manifest(out_dir: Path, command: str, args: argparse.Namespace, inputs, outputs, started: float,
                   name: str = "manifest.json") -> None:
    snapshot = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
                if k not in ("func",)}
    manifest = {
        "command": command,
        "config": snapshot,
        "seed": getattr(args, "seed", None),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "wall_time_s": round(time.time() - started, 3),
    }
    (out_dir / name).write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def manifest_argv(manifest: dict) -> list[str]:
    """Rebuild the argument vector that produced ``manifest``."""
    argv = [manifest["command"]]
    for key, val in sorted(manifest["config"].items()):
        if key in ("command", "verbose") or val is None or val is False:
            continue
        flag = "--" + key.replace("_", "-")
        if val is True:
            argv.append(flag)
        elif isinstance(val, list):
            argv += [flag, ",".join(str(v) for v in val)]
        else:
            argv += [flag, str(val)]
    return argv


# gen-data -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.preset == "multiclass":
        frame = generate_multiclass(args.seed, args.classes, [args.segments] * args.classes, args.length)
    else:
        steps = FULL_SIZE_STEPS if args.full_size else args.steps
        events = args.leak_events
        if args.full_size and events is None:
            events = round(ABNORMAL_RATIO * steps / 217)
        events = 6 if events is None else events
        cfg = ngpod_like_config(steps, events, args.horizon_n, args.seed, args.precursor_steps)
        frame = generate_pipeline(cfg)
        log.info("horizon %d steps = %d s advance warning", args.horizon_n, args.horizon_n * cfg.sample_interval)
    write_csv(frame, out)
    counts = np.bincount(frame.labels, minlength=3).tolist()
    print(json.dumps({"out": str(out), "steps": len(frame), "class_counts": counts}))
    write_manifest(out.parent, "gen-data", args, [], [out], started)
    return 0


# train / eval -------------------------------------------------------------

def _prep_dict(args) -> dict:
    return {"window": args.window, "stride": args.stride, "pca_ratio": args.pca_ratio,
            "standardize": not args.no_standardize, "split": list(args.split), "split_seed": args.seed}


def _train_config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch_size, dropout=args.dropout, kernel=args.kernel, lr=args.lr,
                       epochs=args.epochs, hidden=tuple(args.hidden), grid_size=args.grid_size,
                       seed=args.seed, class_weights=args.class_weights, head=args.head)


def train_frame(frame, args, out_dir: Path) -> list[Path]:
    """Preprocess ``frame``, train, and write checkpoint/PCA/log into ``out_dir``."""
    prep = _prep_dict(args)
    ds, pca = prepare(frame, args.window, args.stride, tuple(args.split), args.seed, args.pca_ratio,
                      not args.no_standardize)
    log.info("%d windows, %d PCA components (%.4f of variance)", len(ds), pca.n_components,
             pca.explained_ratio.sum())
    cfg = _train_config(args)
    log_path = out_dir / "train_log.jsonl"
    log_path.write_text("")

    def progress(entry):
        with log_path.open("a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    model, state = train_model(ds, cfg, n_classes=3 if frame.labels.max() <= 2 else None, progress=progress)
    meta = {"preprocess": prep, "pca": pca.to_dict(), "train_config": cfg.to_dict(),
            "n_parameters": model.n_parameters(), "tool_version": __version__}
    ckpt = out_dir / "checkpoint.bin"
    save_checkpoint(model, state, ckpt, meta, hash_parts=prep)
    pca.save(out_dir / "pca.json")
    return [ckpt, out_dir / "pca.json", log_path]


def cmd_train(args) -> int:
    started = time.time()
    out_dir = Path(args.out) if args.out else _default_out("train")
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = read_csv(args.data)
    outputs = train_frame(frame, args, out_dir)
    write_manifest(out_dir, "train", args, [args.data], outputs, started)
    print(json.dumps({"run_dir": str(out_dir), "checkpoint": str(outputs[0])}))
    return 0


def evaluate_frame(frame, ckpt_path: Path, out_dir: Path, aunp_mode: str = "balanced",
                   prep_override: dict | None = None, force: bool = False):
    model, _, meta = load_checkpoint(ckpt_path)
    prep = meta["preprocess"]
    if prep_override is not None:
        expected = config_hash(model.config.to_dict(), prep_override)
        if expected != meta["config_hash"]:
            msg = (f"preprocessing flags differ from the checkpoint's (hash {meta['config_hash'][:12]} vs "
                   f"{expected[:12]})")
            log.warning(msg)
            if not force:
                raise MktcnError(msg + "; rerun with --force to evaluate anyway")
            log.warning("continuing because of --force")
            prep = prep_override
    pca = PcaModel.from_dict(meta["pca"])
    omega, stride = prep["window"], prep["stride"]
    wl = window_labels(frame.labels, omega, stride)
    assign = split_indices(len(wl), wl, tuple(prep["split"]), prep["split_seed"])
    ds = windowize(transform(pca, frame), frame.labels, omega, stride)
    x_te, y_te = ds.x[assign == TEST], ds.labels[assign == TEST]
    if x_te.shape[1] != model.config.n_features:
        raise MktcnError(f"window of {x_te.shape[1]} features does not fit a model expecting "
                         f"{model.config.n_features}")
    probs, _ = predict(model, x_te)
    report = evaluate(y_te, probs, aunp_mode)
    report_json(report, out_dir / "metrics.json")
    outputs = [out_dir / "metrics.json"]
    for k, pts in sorted(report.pr_curves.items()):
        write_pr_csv(pts, out_dir / f"pr_class_{k}.csv")
        outputs.append(out_dir / f"pr_class_{k}.csv")
    write_confusion_csv(report.confusion, out_dir / "confusion.csv")
    outputs.append(out_dir / "confusion.csv")
    return report, outputs


def cmd_eval(args) -> int:
    started = time.time()
    run_dir = Path(args.run_dir)
    ckpt = run_dir / "checkpoint.bin"
    out_dir = Path(args.out) if args.out else run_dir / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = read_csv(args.data)
    override = None
    if any(getattr(args, k) is not None for k in ("window", "stride", "pca_ratio", "split", "seed")):
        _, _, meta = load_checkpoint(ckpt)
        override = dict(meta["preprocess"])
        for key, flag in (("window", "window"), ("stride", "stride"), ("pca_ratio", "pca_ratio"),
                          ("split", "split"), ("split_seed", "seed")):
            val = getattr(args, flag)
            if val is not None:
                override[key] = list(val) if key == "split" else val
    report, outputs = evaluate_frame(frame, ckpt, out_dir, args.aunp_mode, override, args.force)
    write_manifest(out_dir, "eval", args, [args.data, ckpt], outputs, started)
    print(json.dumps(report.scalars(), sort_keys=True))
    return 0


# sweep --------------------------------------------------------------------

def cmd_sweep_n(args) -> int:
    started = time.time()
    if not args.n_values:
        raise UsageError("--n-values must list at least one horizon")
    out_dir = Path(args.out) if args.out else _default_out("sweep")
    out_dir.mkdir(parents=True, exist_ok=True)
    base = read_csv(args.data)
    interval = int(base.timestamps[1] - base.timestamps[0]) if len(base) > 1 else 0
    rows, outputs = [], []
    for n in args.n_values:
        frame = base.with_labels(relabel(base.labels, n))
        sub = out_dir / f"N_{n}"
        sub.mkdir(exist_ok=True)
        train_frame(frame, args, sub)
        report, outs = evaluate_frame(frame, sub / "checkpoint.bin", sub, args.aunp_mode)
        outputs += outs
        scal = report.scalars()
        row = {"N": n, "horizon_seconds": n * interval,
               "doubtful_count": int((frame.labels == 2).sum()), **scal,
               "radar_area": radar_area([scal[k] for k in METRIC_NAMES])}
        for k, ap in sorted(report.ap.items()):
            row[f"ap_class_{k}"] = ap
        rows.append(row)
        log.info("N=%d radar area %.4f", n, row["radar_area"])
    sweep = out_dir / "sweep.csv"
    with sweep.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    write_manifest(out_dir, "sweep-n", args, [args.data], [sweep, *outputs], started)
    print(json.dumps({"sweep": str(sweep), "radar_area": {r["N"]: r["radar_area"] for r in rows}}))
    return 0


# parser -------------------------------------------------------------------

def _add_train_flags(p, eval_style: bool = False):
    p.add_argument("--window", type=_positive, default=50, help="sliding window length (omega)")
    p.add_argument("--stride", type=_positive, default=1, help="sliding step (s)")
    p.add_argument("--pca-ratio", type=float, default=0.95, help="cumulative explained variance to keep")
    p.add_argument("--no-standardize", action="store_true", help="skip z-scoring before PCA")
    p.add_argument("--split", type=_float_list, default=[0.7, 0.2, 0.1], help="train,val,test ratios")
    p.add_argument("--epochs", type=_non_negative, default=10)
    p.add_argument("--batch-size", type=_positive, default=64)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--kernel", type=_positive, default=3)
    p.add_argument("--hidden", type=_int_list, default=[32, 64, 128], help="residual block widths")
    p.add_argument("--grid-size", type=_positive, default=5)
    p.add_argument("--head", choices=("kan", "dense"), default="kan", help="kan = MKTCN, dense = plain TCN")
    p.add_argument("--class-weights", type=_float_list, default=None)
    p.add_argument("--seed", type=_non_negative, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mktcn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    g.add_argument("--preset", choices=("ngpod-like", "multiclass"), default="ngpod-like")
    g.add_argument("--steps", type=_positive, default=40_000)
    g.add_argument("--leak-events", type=_non_negative, default=None)
    g.add_argument("--horizon-n", type=_non_negative, default=200)
    g.add_argument("--precursor-steps", type=_non_negative, default=None,
                   help="physical precursor length if different from --horizon-n")
    g.add_argument("--full-size", action="store_true", help=f"{FULL_SIZE_STEPS} steps like the field data")
    g.add_argument("--classes", type=_positive, default=10, help="multiclass preset: number of classes")
    g.add_argument("--segments", type=_positive, default=20, help="multiclass preset: segments per class")
    g.add_argument("--length", type=_positive, default=400, help="multiclass preset: steps per segment")
    g.add_argument("--seed", type=_non_negative, default=0)
    g.add_argument("--out", required=True, help="output CSV path")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="preprocess a CSV and train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", default=None, help=f"run directory (default ${OUT_ROOT_ENV}/train)")
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained run on its test split")
    e.add_argument("--run-dir", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=None, help="output directory (default <run-dir>/eval)")
    e.add_argument("--aunp-mode", choices=("balanced", "npv-recall"), default="balanced")
    e.add_argument("--force", action="store_true", help="evaluate despite a config-hash mismatch")
    e.add_argument("--window", type=_positive, default=None)
    e.add_argument("--stride", type=_positive, default=None)
    e.add_argument("--pca-ratio", type=float, default=None)
    e.add_argument("--split", type=_float_list, default=None)
    e.add_argument("--seed", type=_non_negative, default=None)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-n", help="relabel, retrain and evaluate over doubtful horizons")
    s.add_argument("--data", required=True)
    s.add_argument("--out", default=None, help=f"output directory (default ${OUT_ROOT_ENV}/sweep)")
    s.add_argument("--n-values", type=_int_list, default=list(DEFAULT_SWEEP))
    s.add_argument("--aunp-mode", choices=("balanced", "npv-recall"), default="balanced")
    _add_train_flags(s)
    s.set_defaults(func=cmd_sweep_n)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mktcn: error: {exc}", file=sys.stderr)
        return 2
    except (MktcnError, OSError, ValueError) as exc:
        print(f"mktcn: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
