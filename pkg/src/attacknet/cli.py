"""Command-line entry point: ``attacknet <command> ...``.

Run configuration files hold one ``key=value`` per line (``#`` comments).
Keys are the ModelConfig fields plus ``dataset``, ``datasets`` (comma
separated), ``out`` and ``train_ratio``.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    DEFAULT_TRAIN_RATIO,
    DatasetError,
    DecodeError,
    decode_image,
    encode_ppm_bytes,
    load_dataset,
    materialize,
    resize_array,
    to_uint8,
)
from .gradcam import TARGETS, composite_ppm, grad_cam, render_heatmap
from .layers import ConfigError
from .metrics import roc
from .model import (
    CheckpointError,
    ModelConfig,
    build_model,
    checkpoint_bytes,
    flop_breakdown,
    flop_count,
    load_checkpoint,
    param_count,
    parse_key_values,
)
from .protocol import evaluate_model, render_matrix, render_reports, run_cross_eval, run_fused, train_on, write_atomic
from .tensor import Prng

log = logging.getLogger("attacknet")

RUN_KEYS = ("dataset", "datasets", "out", "train_ratio")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    dataset: str = ""
    datasets: list[str] = field(default_factory=list)
    out: str = ""
    train_ratio: float = DEFAULT_TRAIN_RATIO

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values = parse_key_values(text)
        run = {k: values.pop(k) for k in RUN_KEYS if k in values}
        model = ModelConfig.from_mapping(values)
        try:
            ratio = float(run.get("train_ratio", DEFAULT_TRAIN_RATIO))
        except ValueError:
            raise ConfigError(f"bad value for train_ratio: {run['train_ratio']!r}") from None
        if not 0.0 < ratio < 1.0:
            raise ConfigError("train_ratio must lie in (0, 1)")
        datasets = [d.strip() for d in run.get("datasets", "").split(",") if d.strip()]
        return cls(model, run.get("dataset", ""), datasets, run.get("out", ""), ratio)

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        return cls.from_text(path.read_text())

    def to_text(self) -> str:
        lines = [self.model.to_text()]
        lines.append(f"dataset={self.dataset}\n")
        lines.append(f"datasets={','.join(self.datasets)}\n")
        lines.append(f"out={self.out}\n")
        lines.append(f"train_ratio={self.train_ratio!r}\n")
        return "".join(lines)


def _resolve(args) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.model = dataclasses.replace(cfg.model, seed=args.seed).validate()
    if getattr(args, "out", None):
        cfg.out = args.out
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_roots(roots: list[str], cfg: RunConfig):
    manifests = []
    names: set[str] = set()
    for i, root in enumerate(roots):
        name = Path(root).resolve().name or f"dataset{i}"
        if name in names:
            name = f"{name}_{i}"
        names.add(name)
        manifests.append(load_dataset(root, name, seed=cfg.model.seed, train_ratio=cfg.train_ratio))
    return manifests


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    cfg = _resolve(args)
    root = args.dataset or cfg.dataset
    if not root:
        raise ConfigError("no dataset given (config key 'dataset' or --dataset)")
    manifest = load_dataset(root, seed=cfg.model.seed, train_ratio=cfg.train_ratio)
    out = _out_dir(cfg)
    model, trainlog = train_on(manifest, cfg.model, cfg.model.seed)
    report, _ = evaluate_model(model, materialize(manifest.split("val"), cfg.model.input_h, cfg.model.input_w))
    write_atomic(out / "config.txt", cfg.to_text())
    write_atomic(out / "model.atkn", checkpoint_bytes(model))
    write_atomic(out / "trainlog.csv", trainlog.to_csv())
    write_atomic(out / "report.csv", report.to_csv())
    write_atomic(out / "report.txt", report.to_text())
    print(f"epochs,{len(trainlog.records)}")
    print(f"best_epoch,{trainlog.best_epoch}")
    print(f"stop_reason,{trainlog.stop_reason}")
    print(f"hter,{report.hter:.6f}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = model.config
    manifest = load_dataset(args.dataset, seed=cfg.seed)
    samples = manifest.samples if args.split == "all" else manifest.split(args.split)
    if not samples:
        raise DatasetError(f"{args.dataset}: split {args.split!r} is empty")
    data = materialize(samples, cfg.input_h, cfg.input_w)
    report, probs = evaluate_model(model, data)
    curve = roc(probs[:, 0], data.labels)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / "report.csv", report.to_csv())
    write_atomic(out / "roc.csv", curve.to_csv())
    sys.stdout.write(report.to_text())
    sys.stdout.write(report.to_csv())
    print(f"auc,{curve.auc:.6f}")
    return 0


def cmd_cross_eval(args) -> int:
    cfg = _resolve(args)
    roots = args.roots or cfg.datasets
    if not roots:
        raise ConfigError("cross-eval needs at least one dataset root")
    manifests = _load_roots(roots, cfg)
    out = _out_dir(cfg)
    write_atomic(out / "config.txt", cfg.to_text())
    matrix = run_cross_eval(manifests, cfg.model, cfg.model.seed, out)
    print(render_matrix(matrix)[0], end="")
    return 0


def cmd_fused(args) -> int:
    cfg = _resolve(args)
    roots = args.roots or cfg.datasets
    if len(roots) < 2:
        raise ConfigError("fused protocol needs at least two dataset roots")
    manifests = _load_roots(roots, cfg)
    out = _out_dir(cfg)
    write_atomic(out / "config.txt", cfg.to_text())
    reports, _ = run_fused(manifests, cfg.model, cfg.model.seed, out)
    print(render_reports(reports), end="")
    return 0


def cmd_flops(args) -> int:
    cfg = _resolve(args).model
    total = flop_count(cfg)
    breakdown = flop_breakdown(cfg)
    print(f"flops,{total}")
    print(f"mflops,{total / 1e6:.1f}")
    for name, value in breakdown.items():
        print(f"flops_{name},{value}")
    print(f"flops_all_ops,{sum(breakdown.values())}")
    return 0


def cmd_params(args) -> int:
    cfg = _resolve(args).model
    n = param_count(build_model(cfg, Prng(cfg.seed)))
    print(f"params,{n}")
    print(f"params_M,{n / 1e6:.1f}")
    return 0


def run_benchmark(model, iterations: int, seed: int = 0, pool: int = 64) -> dict[str, float]:
    """Time single-image inference forwards over a pool of random images."""
    cfg = model.config
    images = Prng(seed).uniform((min(pool, iterations), 1, cfg.input_channels, cfg.input_h, cfg.input_w), 0.0, 1.0)
    model.forward(images[0], "infer")  # warm-up
    times = np.empty(iterations)
    for i in range(iterations):
        x = images[i % len(images)]
        t0 = time.perf_counter()
        model.forward(x, "infer")
        times[i] = (time.perf_counter() - t0) * 1e3
    mean = float(times.mean())
    return {
        "iterations": iterations,
        "mean_ms": mean,
        "median_ms": float(np.median(times)),
        "p95_ms": float(np.percentile(times, 95)),
        "fps": 1000.0 / mean,
    }


def cmd_bench(args) -> int:
    if args.iterations < 1:
        raise ConfigError("iterations must be >= 1")
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
    else:
        cfg = _resolve(args).model
        model = build_model(cfg, Prng(cfg.seed))
    stats = run_benchmark(model, args.iterations, args.seed or 0)
    print(f"iterations,{stats['iterations']}")
    for key in ("mean_ms", "median_ms", "p95_ms", "fps"):
        print(f"{key},{stats[key]:.6f}")
    return 0


def cmd_gradcam(args) -> int:
    if args.target.lower() not in TARGETS:
        raise ConfigError(f"target must be bonafide or attack, got {args.target!r}")
    model = load_checkpoint(args.checkpoint)
    cfg = model.config
    rec = decode_image(args.image)
    x = resize_array(rec.pixels, cfg.input_h, cfg.input_w)
    cam = grad_cam(model, x, args.target)
    overlay = render_heatmap(resize_array(cam.upsampled[None], *rec.original_size)[0], rec.pixels, args.alpha)
    data = composite_ppm(rec.pixels, overlay) if args.composite else encode_ppm_bytes(to_uint8(overlay))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_atomic(args.out, data)
    row, col = np.unravel_index(int(np.argmax(cam.raw)), cam.raw.shape)
    print(f"argmax_row,{row}")
    print(f"argmax_col,{col}")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attacknet", description="AttackNet liveness-detection engine")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="key=value run configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        if out:
            p.add_argument("--out", help="output directory")

    p = sub.add_parser("train", help="train on one dataset")
    common(p)
    p.add_argument("--dataset", help="dataset root (overrides config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="all", choices=("all", "train", "val", "test"))
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_eval)

    for name, func, help_ in (("cross-eval", cmd_cross_eval, "train on each dataset, evaluate on all"),
                              ("fused", cmd_fused, "train on fused datasets, evaluate per source")):
        p = sub.add_parser(name, help=help_)
        common(p)
        p.add_argument("roots", nargs="*", help="dataset roots (overrides config 'datasets')")
        p.set_defaults(func=func)

    for name, func in (("flops", cmd_flops), ("params", cmd_params)):
        p = sub.add_parser(name, help=f"print the model's {name}")
        common(p, out=False)
        p.set_defaults(func=func)

    p = sub.add_parser("bench", help="single-image inference latency")
    common(p, out=False)
    p.add_argument("--checkpoint")
    p.add_argument("--iterations", type=int, default=50000)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcam", help="write a Grad-CAM overlay")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--target", required=True, help="bonafide or attack")
    p.add_argument("--out", required=True, help="output .ppm path")
    p.add_argument("--alpha", type=float, default=0.4)
    p.add_argument("--composite", action="store_true", help="write input | overlay side by side")
    p.set_defaults(func=cmd_gradcam)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, DecodeError, CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
