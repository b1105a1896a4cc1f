"""Command line interface: train, eval, predict, analyze, bench, synth.

Every command resolves its configuration as defaults < config file <
explicit flags, takes all randomness from one ``--seed``, and writes a
JSON run manifest next to its artifacts that is sufficient to re-run
the command.  Exit codes: 0 success, 2 usage or configuration error,
3 artifact incompatibility (checkpoint fingerprint mismatch).
"""

import argparse
import json
import os
import platform
import sys
import time

import cv2
import numpy as np

from . import __version__
from .analyzer import (CostQuery, analytic_cost, bench_latency, count_block,
                       count_graph)
from .backend import backend_name, set_backend
from .data import (SYNTH_KINDS, DatasetError, Sample, export_prediction,
                   generate_set, load_dataset, save_sample)
from .layers import CheckpointError, load_checkpoint, save_checkpoint
from .metrics import aggregate_reports, segmentation_metrics
from .network import predict as run_predict
from .tensor import ShapeError, Tensor
from .trainer import TrainConfig, TrainerError, evaluate, fit

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3

ARCH_KEYS = ("scale_dim", "width_mult", "interaction",
             "forward_guidance", "backward_enhancement", "mode")


class CliError(RuntimeError):
    """Usage or configuration problem; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config resolution


def _read_config_file(path):
    """key=value lines, '#' comments; JSON files also accepted."""
    if not os.path.isfile(path):
        raise CliError(f"config file not found: {path}")
    text = open(path).read()
    if path.endswith(".json"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise CliError(f"{path}: invalid JSON ({e})")
        if not isinstance(data, dict):
            raise CliError(f"{path}: expected a JSON object")
        return data
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = val
    return values


def _coerce(value, default):
    if not isinstance(value, str):
        return value
    if isinstance(default, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise CliError(f"expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def resolve_config(args, defaults):
    """Merge defaults, the optional config file, then explicit flags."""
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        for key, value in _read_config_file(config_path).items():
            if key not in defaults:
                raise CliError(f"unknown config key: {key}")
            try:
                resolved[key] = _coerce(value, defaults[key])
            except (TypeError, ValueError):
                raise CliError(f"bad value for config key {key}: {value!r}")
    for key in defaults:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
    return resolved


# ---------------------------------------------------------------------------
# manifest


def write_manifest(out_dir, command, config, seed, artifacts, wall_time):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "artifacts": artifacts,
        "backend": backend_name(),
        "hardware": {
            "machine": platform.machine(),
            "processor": platform.processor() or platform.machine(),
            "system": f"{platform.system()} {platform.release()}",
            "python": platform.python_version(),
            "threads": os.environ.get("GMBI_THREADS", "default"),
        },
        "wall_time_s": round(wall_time, 3),
        "version": __version__,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


# ---------------------------------------------------------------------------
# shared helpers


def _add_arch_flags(p):
    p.add_argument("--scale-dim", type=int, dest="scale_dim",
                   help="number of multiscale groups per block")
    p.add_argument("--width-mult", type=float, dest="width_mult",
                   help="uniform channel width multiplier")
    p.add_argument("--interaction", choices=["ewms", "sum", "mul", "concat", "none"],
                   help="cross-scale interaction operator")
    p.add_argument("--no-forward-guidance", action="store_false", default=None,
                   dest="forward_guidance", help="disable shallow-to-deep guidance")
    p.add_argument("--no-backward-enhancement", action="store_false", default=None,
                   dest="backward_enhancement", help="disable deep-to-shallow enhancement")
    p.add_argument("--mode", choices=["group", "branch", "single"],
                   help="group split, full-width branches, or a single path")


def _add_common(p):
    p.add_argument("--config", help="key=value or JSON config file")
    p.add_argument("--seed", type=int, help="global random seed")
    p.add_argument("--out", help="output directory for artifacts")
    p.add_argument("--backend", choices=["numba", "numpy"],
                   help="convolution kernel backend")


def _load_samples(resolved):
    if resolved["synthetic"] > 0:
        return generate_set(SYNTH_KINDS, resolved["synthetic"],
                            base_seed=resolved["seed"],
                            canvas=max(64, resolved["size"]))
    if not resolved["data"]:
        raise CliError("provide --data DIR or --synthetic N")
    split = resolved.get("split") or None
    return load_dataset(resolved["data"], split)


def _build_from_config(resolved):
    cfg = TrainConfig(
        iterations=max(1, resolved.get("iters", 1)),
        batch_size=resolved.get("batch", 1),
        image_size=resolved["size"],
        seed=resolved["seed"],
        **{k: resolved[k] for k in ARCH_KEYS})
    return cfg.build_network()


def _restore(graph, path):
    if not os.path.isfile(path):
        raise CliError(f"checkpoint not found: {path}")
    load_checkpoint(graph, path)


# ---------------------------------------------------------------------------
# commands


TRAIN_DEFAULTS = {
    "data": "", "split": "", "synthetic": 0, "iters": 3000, "batch": 4,
    "size": 64, "lr": 4e-3, "seed": 0, "eval_every": 100,
    "checkpoint_every": 500, "augment": False, "stop_iou": 0.0,
    "scale_dim": 4, "width_mult": 1.0, "interaction": "ewms",
    "forward_guidance": True, "backward_enhancement": True, "mode": "group",
}


def cmd_train(args):
    resolved = resolve_config(args, TRAIN_DEFAULTS)
    out_dir = args.out or "runs/train"
    samples = _load_samples(resolved)
    cfg = TrainConfig(
        iterations=resolved["iters"], batch_size=resolved["batch"],
        base_lr=resolved["lr"], image_size=resolved["size"],
        seed=resolved["seed"], eval_every=resolved["eval_every"],
        checkpoint_every=resolved["checkpoint_every"],
        augment=resolved["augment"],
        stop_iou=resolved["stop_iou"] or None,
        **{k: resolved[k] for k in ARCH_KEYS})
    t0 = time.time()
    state, rows = fit(cfg, samples, out_dir=out_dir)
    report = evaluate(state.graph, samples, cfg)
    artifacts = {
        "best_checkpoint": os.path.join(out_dir, "best.ckpt"),
        "last_checkpoint": os.path.join(out_dir, "last.ckpt"),
        "log": os.path.join(out_dir, "train_log.csv"),
    }
    path = write_manifest(out_dir, "train", resolved, resolved["seed"],
                          artifacts, time.time() - t0)
    print(f"trained {state.step} iterations, final loss {state.losses[-1]:.4f}")
    print(f"train-set iou {report.iou:.4f}  mae {report.mae:.4f}")
    print(f"manifest: {path}")
    return EXIT_OK


EVAL_DEFAULTS = {
    "data": "", "split": "", "synthetic": 0, "size": 64, "seed": 0,
    "scale_dim": 4, "width_mult": 1.0, "interaction": "ewms",
    "forward_guidance": True, "backward_enhancement": True, "mode": "group",
}


def cmd_eval(args):
    resolved = resolve_config(args, EVAL_DEFAULTS)
    out_dir = args.out or "runs/eval"
    samples = _load_samples(resolved)
    if not samples:
        raise CliError("empty dataset")
    graph = _build_from_config(resolved)
    _restore(graph, args.checkpoint)
    graph.eval()
    t0 = time.time()
    os.makedirs(out_dir, exist_ok=True)
    dump_dir = args.dump_pred
    if dump_dir:
        os.makedirs(dump_dir, exist_ok=True)
    per_image = []
    reports = []
    for sample in samples:
        pred = run_predict(sample.image, graph, size=resolved["size"])
        report = segmentation_metrics(pred, sample.mask)
        reports.append(report)
        per_image.append({"id": sample.id, **report.to_dict()})
        if dump_dir:
            export_prediction(pred, os.path.join(dump_dir, sample.id + ".png"))
    aggregate = aggregate_reports(reports)
    report_path = os.path.join(out_dir, "metrics.json")
    with open(report_path, "w") as f:
        json.dump({"aggregate": aggregate.to_dict(), "per_image": per_image},
                  f, indent=2)
        f.write("\n")
    artifacts = {"metrics": report_path}
    if dump_dir:
        artifacts["predictions"] = dump_dir
    path = write_manifest(out_dir, "eval", resolved, resolved["seed"],
                          artifacts, time.time() - t0)
    print(aggregate.to_text())
    print(f"manifest: {path}")
    return EXIT_OK


PREDICT_DEFAULTS = {
    "size": 64, "seed": 0,
    "scale_dim": 4, "width_mult": 1.0, "interaction": "ewms",
    "forward_guidance": True, "backward_enhancement": True, "mode": "group",
}


def cmd_predict(args):
    resolved = resolve_config(args, PREDICT_DEFAULTS)
    out_dir = args.out or "runs/predict"
    graph = _build_from_config(resolved)
    _restore(graph, args.checkpoint)
    graph.eval()
    if not os.path.isfile(args.image):
        raise CliError(f"image not found: {args.image}")
    bgr = cv2.imread(args.image, cv2.IMREAD_COLOR)
    if bgr is None:
        raise CliError(f"unreadable image: {args.image}")
    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
    image = Tensor(rgb.transpose(2, 0, 1)[None])
    t0 = time.time()
    saliency = run_predict(image, graph, size=resolved["size"])
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    pred_path = os.path.join(out_dir, stem + "_saliency.png")
    export_prediction(saliency, pred_path)
    path = write_manifest(out_dir, "predict", resolved, resolved["seed"],
                          {"saliency": pred_path}, time.time() - t0)
    print(f"saliency map: {pred_path}")
    print(f"manifest: {path}")
    return EXIT_OK


ANALYZE_DEFAULTS = {
    "k": 3, "c": 32, "h": 128, "w": 128, "n": "1,2,4,8", "seed": 0,
    "size": 512, "scale_dim": 4, "width_mult": 1.0, "interaction": "ewms",
    "forward_guidance": True, "backward_enhancement": True, "mode": "group",
}


def cmd_analyze(args):
    resolved = resolve_config(args, ANALYZE_DEFAULTS)
    out_dir = args.out or "runs/analyze"
    try:
        n_values = [int(v) for v in str(resolved["n"]).split(",") if v.strip()]
    except ValueError:
        raise CliError(f"bad --n list: {resolved['n']!r}")
    if not n_values:
        raise CliError("empty --n list")
    t0 = time.time()
    rows = []
    for n in n_values:
        for family in ("dsconv", "multibranch", "mi", "gmbi"):
            q = CostQuery(k=resolved["k"], c=resolved["c"], h=resolved["h"],
                          w=resolved["w"], n=n, family=family)
            report = count_block(q, seed=resolved["seed"])
            rows.append({
                "family": family, "n": n,
                "analytic_macs": analytic_cost(q),
                "counted_macs": report.macs,
                "params": report.params,
                "delta": report.delta,
            })
    header = f"{'family':<12}{'n':>4}{'analytic_macs':>16}{'counted_macs':>16}{'params':>10}{'delta':>8}"
    print(header)
    print("-" * len(header))
    for row in rows:
        print(f"{row['family']:<12}{row['n']:>4}{row['analytic_macs']:>16}"
              f"{row['counted_macs']:>16}{row['params']:>10}{row['delta']:>8.4f}")

    cfg = TrainConfig(iterations=1, batch_size=1, image_size=resolved["size"],
                      seed=resolved["seed"],
                      **{k: resolved[k] for k in ARCH_KEYS})
    network = count_graph(cfg.build_network())
    print(f"\nfull network at {resolved['size']}x{resolved['size']}: "
          f"params {network.params} ({network.params / 1e6:.4f} M), "
          f"macs {network.macs} ({network.macs / 1e9:.4f} G)")
    os.makedirs(out_dir, exist_ok=True)
    table_path = os.path.join(out_dir, "cost_table.json")
    with open(table_path, "w") as f:
        json.dump({"rows": rows,
                   "network": {"input_size": resolved["size"],
                               "params": network.params,
                               "macs": network.macs}}, f, indent=2)
        f.write("\n")
    path = write_manifest(out_dir, "analyze", resolved, resolved["seed"],
                          {"cost_table": table_path}, time.time() - t0)
    print(f"manifest: {path}")
    return EXIT_OK


BENCH_DEFAULTS = {
    "size": 64, "repeats": 10, "seed": 0,
    "scale_dim": 4, "width_mult": 1.0, "interaction": "ewms",
    "forward_guidance": True, "backward_enhancement": True, "mode": "group",
}


def _bench_once(resolved, repeats):
    graph = TrainConfig(iterations=1, batch_size=1, image_size=resolved["size"],
                        seed=resolved["seed"],
                        **{k: resolved[k] for k in ARCH_KEYS}).build_network()
    latency = bench_latency(graph, repeats=repeats, seed=resolved["seed"])
    cost = count_graph(graph)
    return latency, cost


def cmd_bench(args):
    resolved = resolve_config(args, BENCH_DEFAULTS)
    out_dir = args.out or "runs/bench"
    repeats = resolved["repeats"]
    if repeats < 10:
        raise CliError(f"--repeats must be >= 10, got {repeats}")
    t0 = time.time()
    previous = backend_name()
    backends = ["numba", "numpy"] if args.compare_backends else [previous]
    results = []
    for name in backends:
        set_backend(name)
        latency, cost = _bench_once(resolved, repeats)
        results.append({
            "backend": name,
            "mean_ms": latency.mean_ms,
            "median_ms": latency.median_ms,
            "images_per_second": latency.images_per_second,
            "raw_ms": latency.raw_ms,
            "repeats": latency.repeats,
            "params": cost.params,
            "macs": cost.macs,
            "input_shape": list(latency.input_shape),
            "hardware": latency.hardware,
            "threads": latency.threads,
        })
        print(f"{name:<6} mean {latency.mean_ms:8.2f} ms  "
              f"median {latency.median_ms:8.2f} ms  "
              f"{latency.images_per_second:7.2f} img/s  "
              f"(params {cost.params}, macs {cost.macs})")
    set_backend(previous)
    if len(results) == 2:
        ratio = results[1]["median_ms"] / results[0]["median_ms"]
        print(f"numpy/numba median latency ratio: {ratio:.2f}x")
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, "latency.json")
    with open(report_path, "w") as f:
        json.dump({"results": results}, f, indent=2)
        f.write("\n")
    path = write_manifest(out_dir, "bench", resolved, resolved["seed"],
                          {"latency": report_path}, time.time() - t0)
    print(f"manifest: {path}")
    return EXIT_OK


SYNTH_DEFAULTS = {
    "count": 8, "canvas": 128, "noise": 0.05, "kinds": ",".join(SYNTH_KINDS),
    "seed": 0,
}


def cmd_synth(args):
    resolved = resolve_config(args, SYNTH_DEFAULTS)
    out_dir = args.out or "runs/synth"
    kinds = [k.strip() for k in resolved["kinds"].split(",") if k.strip()]
    bad = [k for k in kinds if k not in SYNTH_KINDS]
    if bad or not kinds:
        raise CliError(f"invalid defect kinds {bad}; choose from {SYNTH_KINDS}")
    if resolved["count"] < 1:
        raise CliError("--count must be >= 1")
    t0 = time.time()
    samples = generate_set(kinds, resolved["count"], base_seed=resolved["seed"],
                           canvas=resolved["canvas"], noise=resolved["noise"])
    for sample in samples:
        save_sample(sample, out_dir)
    path = write_manifest(out_dir, "synth", resolved, resolved["seed"],
                          {"dataset": out_dir}, time.time() - t0)
    print(f"wrote {len(samples)} samples to {out_dir}")
    print(f"manifest: {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gmbinet",
        description="Lightweight multiscale defect segmentation toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a segmentation network")
    _add_common(p)
    _add_arch_flags(p)
    p.add_argument("--data", help="dataset root with images/ and masks/")
    p.add_argument("--split", help="section of split.txt to use")
    p.add_argument("--synthetic", type=int, help="train on N generated samples")
    p.add_argument("--iters", type=int, help="optimization iterations")
    p.add_argument("--batch", type=int, help="batch size")
    p.add_argument("--size", type=int, help="square training resolution")
    p.add_argument("--lr", type=float, help="peak learning rate")
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--augment", action="store_true", default=None)
    p.add_argument("--stop-iou", type=float, dest="stop_iou",
                   help="stop early once eval IoU reaches this value")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(p)
    _add_arch_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset root with images/ and masks/")
    p.add_argument("--split", help="section of split.txt to use")
    p.add_argument("--synthetic", type=int, help="evaluate on N generated samples")
    p.add_argument("--size", type=int, help="square working resolution")
    p.add_argument("--dump-pred", dest="dump_pred",
                   help="write one prediction PNG per sample to this directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="saliency map for one image")
    _add_common(p)
    _add_arch_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input image path")
    p.add_argument("--size", type=int, help="square working resolution")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("analyze", help="analytic vs counted cost tables")
    _add_common(p)
    _add_arch_flags(p)
    p.add_argument("--k", type=int, help="depthwise kernel size")
    p.add_argument("--c", type=int, help="channel count")
    p.add_argument("--h", type=int, help="feature map height")
    p.add_argument("--w", type=int, help="feature map width")
    p.add_argument("--n", help="comma-separated scale dimensions")
    p.add_argument("--size", type=int, help="full-network input resolution")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="forward-pass latency benchmark")
    _add_common(p)
    _add_arch_flags(p)
    p.add_argument("--size", type=int, help="square input resolution")
    p.add_argument("--repeats", type=int, help="timed repetitions (>= 10)")
    p.add_argument("--compare-backends", action="store_true",
                   dest="compare_backends",
                   help="time both the numba and numpy kernel backends")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate a synthetic defect dataset")
    _add_common(p)
    p.add_argument("--count", type=int, help="number of samples")
    p.add_argument("--canvas", type=int, help="square image size (>= 64)")
    p.add_argument("--noise", type=float, help="salt-and-pepper probability")
    p.add_argument("--kinds", help="comma-separated defect kinds")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "backend", None):
        set_backend(args.backend)
    try:
        return args.func(args)
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (CliError, DatasetError, TrainerError, ShapeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
