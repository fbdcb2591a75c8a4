"""Command-line interface: synth, train, score, eval, viz-decode.

LNT_THREADS caps BLAS threading; it must take effect before numpy loads,
which is why the environment block sits above every other import.
"""

import os

_threads = os.environ.get("LNT_THREADS")
if _threads:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[_var] = _threads

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
import time

import numpy as np

from . import model as mdl
from . import tensor as tn
from .checkpoint import load_model, save_model
from .data import (
    InjectionSpec,
    LabeledSeries,
    NormStats,
    compute_stats,
    inject_sine_anomalies,
    load_csv,
    save_csv,
    standardize,
    synth_normal,
    window,
)
from .metrics import evaluate, result_csv, result_text
from .model import ModelConfig, builtin_config, init_decoder, init_params
from .scoring import load_scores_csv, save_scores_csv, score_cpc_approx, score_ddcl
from .training import TrainConfig, fit, fit_decoder, save_report_csv

_BOOL = {"true": True, "false": False, "1": True, "0": False}


def _parse_bool(raw: str) -> bool:
    try:
        return _BOOL[raw.lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {raw!r}") from None


def _parse_ints(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(","))


_MODEL_KEYS = {
    "dim_z": int,
    "dim_c": int,
    "K": int,
    "L": int,
    "bank_layers": int,
    "bank_width": int,
    "conv_bias": _parse_bool,
    "separate_ddcl_heads": _parse_bool,
    "sub_seq": int,
    "filters": _parse_ints,
    "strides": _parse_ints,
}

_TRAIN_KEYS = {
    "lr": float,
    "batch_size": int,
    "epochs": int,
    "lam": float,
    "cpc_weight": float,
    "negatives": int,
    "clip_norm": float,
    "window_stride": int,
}


def parse_config_file(path) -> dict[str, str]:
    """key = value lines; # starts a comment."""
    entries: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            entries[key.strip()] = value.strip()
    return entries


def resolve_config(spec: str | None) -> tuple[ModelConfig, dict]:
    """--config is a builtin name or a key=value file; returns the base
    model config plus training overrides found in the file."""
    if spec is None:
        return builtin_config("small"), {}
    if not os.path.exists(spec):
        return builtin_config(spec), {}
    entries = parse_config_file(spec)
    base = builtin_config(entries.pop("base", "small"))
    model_over: dict = {}
    train_over: dict = {}
    for key, raw in entries.items():
        if key in _MODEL_KEYS:
            model_over[key] = _MODEL_KEYS[key](raw)
        elif key in _TRAIN_KEYS:
            train_over[key] = _TRAIN_KEYS[key](raw)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return dataclasses.replace(base, **model_over), train_over


def _train_config(args, file_over: dict) -> tuple[TrainConfig, int | None]:
    """defaults < config file < explicit flags."""
    merged = dict(file_over)
    for key in _TRAIN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    stride = merged.pop("window_stride", None)
    return TrainConfig(seed=args.seed, **merged), stride


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(output, args, started, *, config=None, inputs=None,
                   outputs=None, checkpoint=None) -> None:
    manifest = {
        "command": args.command,
        "seed": args.seed,
        "precision": args.precision,
        "config": config or {},
        "inputs": inputs or {},
        "outputs": outputs or {},
        "seconds": round(time.perf_counter() - started, 3),
    }
    if checkpoint is not None:
        manifest["checkpoint_sha256"] = sha256_file(checkpoint)
    with open(f"{output}.manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_dict(config: ModelConfig) -> dict:
    out = dataclasses.asdict(config)
    out["filters"] = list(out["filters"])
    out["strides"] = list(out["strides"])
    return out


def _norm_extra(stats: NormStats) -> dict:
    return {
        "norm.mean": stats.mean,
        "norm.std": stats.std,
        "norm.keep": stats.keep.astype(np.float32),
    }


def _norm_from_extra(extra: dict) -> NormStats:
    try:
        return NormStats(
            mean=extra["norm.mean"],
            std=extra["norm.std"],
            keep=extra["norm.keep"] > 0.5,
        )
    except KeyError as missing:
        raise ValueError(f"checkpoint lacks normalization stats ({missing})") from None


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    started = time.perf_counter()
    os.makedirs(args.out_dir, exist_ok=True)
    seeds = np.random.default_rng(args.seed).integers(0, 2**31 - 1, size=3)
    train = synth_normal(args.channels, args.train_length, seed=int(seeds[0]))
    test = synth_normal(args.channels, args.test_length, seed=int(seeds[1]))
    if args.anomaly_fraction > 0:
        spec = InjectionSpec(
            fraction=args.anomaly_fraction,
            amplitude=args.amplitude,
            seed=int(seeds[2]),
        )
        test = inject_sine_anomalies(test, spec)
    train_path = os.path.join(args.out_dir, "train.csv")
    test_path = os.path.join(args.out_dir, "test.csv")
    save_csv(train_path, train)
    save_csv(test_path, test)
    info = {
        "channels": args.channels,
        "anomaly_fraction": args.anomaly_fraction,
        "amplitude": args.amplitude,
    }
    outputs = {"train": train_path, "test": test_path}
    write_manifest(train_path, args, started, config=info, outputs=outputs)
    write_manifest(test_path, args, started, config=info, outputs=outputs)
    print(f"wrote {train_path} ({train.length} frames) and "
          f"{test_path} ({test.length} frames, "
          f"{float(test.labels.mean()):.3f} anomalous)", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    started = time.perf_counter()
    base, file_over = resolve_config(args.config)
    train_cfg, stride = _train_config(args, file_over)
    series = load_csv(args.data)
    stats = compute_stats(series)
    std = standardize(series, stats)
    config = dataclasses.replace(base, in_channels=std.channels)
    stride = stride if stride is not None else max(config.sub_seq // 2, 1)
    windows = window(std.values, config.sub_seq, stride)
    if not windows:
        raise ValueError(
            f"series of {std.length} frames yields no {config.sub_seq}-frame windows"
        )
    params = init_params(config, seed=args.seed)

    def echo(entry):
        print(
            f"epoch {entry.epoch}: total {entry.total:.5f} cpc {entry.cpc:.5f} "
            f"ddcl {entry.ddcl:.5f} grad {entry.grad_norm:.3f} "
            f"({entry.seconds:.1f}s)",
            file=sys.stderr,
        )

    history = fit(params, windows, train_cfg, on_epoch=echo)
    save_model(args.out, params, extra=_norm_extra(stats))
    report_path = args.report or f"{args.out}.report.csv"
    save_report_csv(report_path, history)
    write_manifest(
        args.out, args, started,
        config={"model": _config_dict(config), "train": dataclasses.asdict(train_cfg),
                "window_stride": stride, "windows": len(windows)},
        inputs={"data": args.data},
        outputs={"model": args.out, "report": report_path},
        checkpoint=args.out,
    )
    return 0


def _load_scoring_inputs(args):
    params, extra = load_model(args.model)
    stats = _norm_from_extra(extra)
    series = load_csv(args.data)
    std = standardize(series, stats)
    if std.channels != params.config.in_channels:
        raise ValueError(
            f"model expects {params.config.in_channels} channels, "
            f"data has {std.channels} after normalization"
        )
    return params, std


def cmd_score(args) -> int:
    started = time.perf_counter()
    params, std = _load_scoring_inputs(args)
    x = np.asarray(std.values, dtype=tn.dtype())
    if args.method == "ddcl":
        series = score_ddcl(
            params, x, normalized=not args.unnormalized, chunk_len=args.chunk_len
        )
    else:
        series = score_cpc_approx(params, x, chunk_len=args.chunk_len)
    save_scores_csv(args.out, series, labels=std.labels)
    write_manifest(
        args.out, args, started,
        config={"method": args.method, "normalized": not args.unnormalized,
                "chunk_len": args.chunk_len, "model": _config_dict(params.config)},
        inputs={"model": args.model, "data": args.data},
        outputs={"scores": args.out},
        checkpoint=args.model,
    )
    print(f"wrote {series.scores.size} scores to {args.out}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    started = time.perf_counter()
    scores, labels = load_scores_csv(args.scores)
    if labels is None:
        raise ValueError(f"{args.scores} has no label column; cannot evaluate")
    n_pos = int(labels.sum())
    if n_pos in (0, labels.size):
        print(
            f"diagnostic: all {labels.size} points are labeled "
            f"{'anomalous' if n_pos else 'normal'}; metrics need both classes",
            file=sys.stderr,
        )
        return 1
    result = evaluate(scores, labels)
    with open(args.out, "w") as fh:
        fh.write(result_csv(result))
    sys.stdout.write(result_text(result))
    write_manifest(
        args.out, args, started,
        config={"points": int(labels.size), "positives": n_pos},
        inputs={"scores": args.scores},
        outputs={"eval": args.out},
    )
    return 0


def cmd_viz_decode(args) -> int:
    started = time.perf_counter()
    params, std = _load_scoring_inputs(args)
    config = params.config
    windows = window(std.values, config.sub_seq, config.sub_seq)
    if args.window < 0 or args.window >= len(windows):
        raise ValueError(f"window index {args.window} out of range 0..{len(windows)-1}")
    if params.decoder is None:
        init_decoder(params, seed=args.seed)
        fit_decoder(
            params, windows, epochs=args.decoder_epochs,
            lr=args.decoder_lr, seed=args.seed,
        )
    x = np.asarray(windows[args.window], dtype=tn.dtype())
    z = mdl.encode(params, tn.Tensor(x))
    recon = mdl.decode(params, z)
    groups = [
        ("input", x[:, : recon.shape[-1]]),
        ("recon", recon.data),
    ]
    for l, view in enumerate(mdl.transform(params, z), start=1):
        groups.append((f"view{l}", mdl.decode(params, view).data))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["view", "channel", "t", "value"])
        for name, arr in groups:
            for ch in range(arr.shape[0]):
                for t in range(arr.shape[1]):
                    writer.writerow([name, ch, t, f"{arr[ch, t]:.9g}"])
    if args.save_model:
        save_model(args.save_model, params, extra=_read_extra(args.model))
    write_manifest(
        args.out, args, started,
        config={"window": args.window, "groups": len(groups),
                "decoder_epochs": args.decoder_epochs},
        inputs={"model": args.model, "data": args.data},
        outputs={"decode": args.out},
        checkpoint=args.model,
    )
    return 0


def _read_extra(model_path) -> dict:
    _, extra = load_model(model_path)
    return extra


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master RNG seed")
    common.add_argument("--config", default=None,
                        help="builtin config name (small, audio) or key=value file")
    common.add_argument("--precision", type=int, choices=(32, 64), default=32)

    parser = argparse.ArgumentParser(
        prog="lnt",
        description="Local neural transformations: contrastive anomaly "
                    "detection for multivariate time series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic train/test pair")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--train-length", type=int, default=50_000)
    p.add_argument("--test-length", type=int, default=20_000)
    p.add_argument("--anomaly-fraction", type=float, default=0.10)
    p.add_argument("--amplitude", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--report", default=None, help="epoch report CSV path")
    for key, caster in _TRAIN_KEYS.items():
        p.add_argument(f"--{key.replace('_', '-')}", type=caster, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", parents=[common], help="score a series")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("ddcl", "cpc-approx"), default="ddcl")
    p.add_argument("--unnormalized", action="store_true")
    p.add_argument("--chunk-len", type=int, default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", parents=[common], help="metrics from scored CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz-decode", parents=[common],
                       help="decode latents and transformed views to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--decoder-epochs", type=int, default=20)
    p.add_argument("--decoder-lr", type=float, default=1e-3)
    p.add_argument("--save-model", default=None)
    p.set_defaults(func=cmd_viz_decode)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    tn.set_precision(args.precision)
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
