"""Command-line entry point: ``lkmn {info,train,sr,eval,degrade}``.

Exit codes: 0 success, 1 training diverged, 2 usage or input problem,
3 corrupt or incompatible weight data.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .data import PairedDataset, bicubic_resize, degrade
from .errors import CompatibilityError, ConfigError, FormatError, IntegrityError, TrainingDiverged
from .imageio import array_to_image, image_to_array, load_png, mod_crop, save_png
from .metrics import EvalReport, evaluate_pair
from .model import (
    ModelConfig,
    build,
    count_flops,
    count_params,
    flop_breakdown,
    model_from_weights,
    param_breakdown,
    preset,
    self_ensemble_forward,
    tile_forward,
)
from .tensor import Tensor, no_grad
from .train import TrainConfig, load_checkpoint, train_loop
from .weights import load_weights

log = logging.getLogger("lkmn")

EXIT_OK, EXIT_DIVERGED, EXIT_USAGE, EXIT_INTEGRITY = 0, 1, 2, 3

_MODEL_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)}
_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


class UsageError(Exception):
    pass


# -- config assembly -------------------------------------------------------------------


def _read_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(data) - _MODEL_FIELDS - _TRAIN_FIELDS - {"preset"})
    if unknown:
        raise UsageError(f"unknown config fields in {path}: {unknown}")
    return data


def _flag_values(args, fields: set[str]) -> dict:
    return {k: v for k, v in vars(args).items() if k in fields and v is not None}


def resolve_model_config(args, file_cfg: dict) -> ModelConfig:
    """Preset < config file < explicit flags."""
    name = args.preset or file_cfg.get("preset") or "lkmn-x4"
    base = preset(name).to_dict()
    base.pop("distill_channels")
    base.update({k: v for k, v in file_cfg.items() if k in _MODEL_FIELDS})
    base.update(_flag_values(args, _MODEL_FIELDS))
    return ModelConfig.from_dict(base)


def resolve_train_config(args, file_cfg: dict, scale: int) -> TrainConfig:
    base = {k: v for k, v in file_cfg.items() if k in _TRAIN_FIELDS}
    base.update(_flag_values(args, _TRAIN_FIELDS))
    base["scale"] = scale
    return TrainConfig.from_dict(base)


def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload, indent=2) if args.json else text)


def _threads(args) -> int:
    return args.threads or os.cpu_count() or 1


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like WIDTHxHEIGHT, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def _png_files(paths) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob("*.png")))
        elif p.exists():
            files.append(p)
        else:
            raise UsageError(f"input not found: {p}")
    if not files:
        raise UsageError("no PNG inputs found")
    return files


# -- commands ------------------------------------------------------------------------------


def cmd_info(args) -> int:
    cfg = resolve_model_config(args, _read_config_file(args.config))
    out_w, out_h = args.out_size
    params, flops = count_params(cfg), count_flops(cfg, out_h, out_w)
    report = {
        "config": cfg.to_dict(),
        "params": params,
        "flops": flops,
        "output_size": [out_w, out_h],
        "param_breakdown": param_breakdown(cfg),
        "flop_breakdown": flop_breakdown(cfg, out_h, out_w),
    }
    if args.bench is not None:
        if args.bench < 1:
            raise UsageError("--bench needs a positive number of runs")
        model, _ = build(cfg, args.seed)
        rng = np.random.default_rng(args.seed)
        x = Tensor(rng.random((1, 3, args.bench_size, args.bench_size), dtype=np.float32))
        times = []
        with no_grad():
            for _ in range(args.bench):
                t0 = time.perf_counter()
                model(x)
                times.append(time.perf_counter() - t0)
        report["bench"] = {
            "runs": args.bench,
            "lr_size": args.bench_size,
            "mean_s": statistics.fmean(times),
            "std_s": statistics.pstdev(times),
        }
    lines = [f"params: {params} ({params / 1e3:.1f}K)", f"flops @ {out_w}x{out_h}: {flops} ({flops / 1e9:.2f}G)"]
    lines.append("breakdown (params):")
    lines += [f"  {k:<22} {v}" for k, v in report["param_breakdown"].items()]
    lines.append("breakdown (flops):")
    lines += [f"  {k:<22} {v}" for k, v in report["flop_breakdown"].items()]
    if "bench" in report:
        b = report["bench"]
        lines.append(f"bench: {b['runs']} runs on {b['lr_size']}x{b['lr_size']} LR, "
                     f"mean {b['mean_s'] * 1e3:.1f} ms, std {b['std_s'] * 1e3:.1f} ms")
    _emit(args, report, "\n".join(lines))
    return EXIT_OK


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise UsageError(f"dataset directory not found: {data_dir}")
    file_cfg = _read_config_file(args.config)
    if args.resume:
        model, state, start = load_checkpoint(args.resume)
    else:
        cfg = resolve_model_config(args, file_cfg)
        model, _ = build(cfg, args.seed if args.seed is not None else 0)
        state, start = None, 0
    tcfg = resolve_train_config(args, file_cfg, model.config.scale)
    try:
        dataset = PairedDataset.from_directory(data_dir, tcfg.scale, args.slice_size)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None

    def report(rec):
        if args.log_every and rec["iter"] % args.log_every == 0:
            print(json.dumps(rec) if args.json else
                  f"iter {rec['iter']:>7}  total {rec['total']:.5f}  l1 {rec['l1']:.5f}  fft {rec['fft']:.4f}  lr {rec['lr']:.2e}")

    try:
        result = train_loop(model, dataset, tcfg, args.out, state=state, start_iteration=start, on_record=report)
    except TrainingDiverged as exc:
        print(f"error: {exc}; last checkpoint: {exc.last_checkpoint}", file=sys.stderr)
        return EXIT_DIVERGED
    summary = {"final_weights": str(result.final_weights), "checkpoints": [str(p) for p in result.checkpoints],
               "iterations": tcfg.iterations, "final_loss": result.losses[-1] if result.losses else None}
    _emit(args, summary, f"done: {summary['final_weights']}")
    return EXIT_OK


def _upscale(model, lr: np.ndarray, args) -> np.ndarray:
    x = Tensor(lr[None])
    with no_grad():
        if args.ensemble:
            if args.tile:
                predictor = lambda t: tile_forward(model, t, args.tile, args.overlap)  # noqa: E731
                return self_ensemble_forward(predictor, x).data[0]
            return self_ensemble_forward(model, x).data[0]
        if args.tile:
            return tile_forward(model, x, args.tile, args.overlap).data[0]
        return model(x).data[0]


def _load_model(path):
    ws = load_weights(path)
    return model_from_weights(ws)


def cmd_sr(args) -> int:
    model = _load_model(args.weights)
    files = _png_files(args.inputs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run(f: Path) -> dict:
        lr = image_to_array(load_png(f))
        sr = _upscale(model, lr, args)
        dest = out_dir / f.name
        save_png(array_to_image(sr), dest)
        return {"input": str(f), "output": str(dest), "size": [sr.shape[2], sr.shape[1]]}

    with ThreadPoolExecutor(_threads(args)) as pool:
        results = list(pool.map(run, files))
    _emit(args, {"scale": model.scale, "outputs": results},
          "\n".join(f"{r['input']} -> {r['output']} ({r['size'][0]}x{r['size'][1]})" for r in results))
    return EXIT_OK


def cmd_eval(args) -> int:
    hr_files = _png_files([args.hr])
    if args.sr_dir:
        model, scale, method = None, args.scale or 1, "precomputed"
    elif args.baseline:
        if not args.scale:
            raise UsageError("--baseline needs --scale")
        model, scale, method = None, args.scale, f"baseline-{args.baseline}"
    elif args.weights:
        model = _load_model(args.weights)
        scale, method = model.scale, "model"
    else:
        raise UsageError("one of --weights, --baseline or --sr-dir is required")
    border = args.border if args.border is not None else (scale if scale > 1 else 0)
    report = EvalReport(border_crop=border, y_channel=True, scale=scale, ensemble=bool(args.ensemble), method=method)

    def run(f: Path):
        hr = mod_crop(load_png(f), scale)
        if args.sr_dir:
            sr_pixels = load_png(Path(args.sr_dir) / f.name).pixels
        else:
            if args.lr:
                lr = image_to_array(load_png(Path(args.lr) / f.name))
            else:
                lr = degrade(image_to_array(hr), scale)
            if model is None:
                sr = bicubic_resize(lr, lr.shape[1] * scale, lr.shape[2] * scale)
            else:
                sr = _upscale(model, lr, args)
            sr_pixels = array_to_image(sr).pixels
        return f.stem, evaluate_pair(sr_pixels, hr.pixels, border)

    with ThreadPoolExecutor(_threads(args)) as pool:
        for name, (p, s) in pool.map(run, hr_files):
            report.add(name, p, s)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_degrade(args) -> int:
    files = _png_files([args.hr])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run(f: Path):
        try:
            hr = mod_crop(load_png(f), args.scale)
            lr = degrade(image_to_array(hr), args.scale)
            save_png(array_to_image(lr), out_dir / f.name)
            return str(f), None
        except (OSError, FormatError, ValueError) as exc:
            return str(f), str(exc)

    with ThreadPoolExecutor(_threads(args)) as pool:
        results = list(pool.map(run, files))
    failed = {f: e for f, e in results if e}
    summary = {"written": len(results) - len(failed), "failed": failed, "out": str(out_dir)}
    _emit(args, summary, f"wrote {summary['written']} images to {out_dir}" +
          "".join(f"\n  failed {f}: {e}" for f, e in failed.items()))
    return EXIT_USAGE if failed else EXIT_OK


# -- parser ----------------------------------------------------------------------------------


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--preset", help="lkmn-x2|x3|x4 or lkmn-l-x2|x3|x4 (default lkmn-x4)")
    g.add_argument("--config", help="JSON file with ModelConfig/TrainConfig field names")
    g.add_argument("--scale", type=int)
    g.add_argument("--channels", type=int)
    g.add_argument("--num-rfmg", dest="num_rfmg", type=int)
    g.add_argument("--shuffle-group", dest="shuffle_group", type=int)
    g.add_argument("--kernel-size", dest="kernel_size", type=int)
    g.add_argument("--distill-channels", dest="distill_channels", type=int)
    g.add_argument("--no-channel-shuffle", dest="channel_shuffle", action="store_const", const=False)
    g.add_argument("--no-channel-attention", dest="channel_attention", action="store_const", const=False)
    g.add_argument("--no-gamma", dest="use_gamma", action="store_const", const=False)
    g.add_argument("--no-cross-gate", dest="cross_gate", action="store_const", const=False)
    g.add_argument("--long-skip", dest="long_skip", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lkmn", description="Large-kernel modulation network for image super-resolution")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument("--threads", type=int, default=None, help="worker threads for per-image work")

    p = sub.add_parser("info", parents=[common], help="parameter/FLOP report and optional benchmark")
    _add_model_flags(p)
    p.add_argument("--out-size", type=_parse_size, default=(1280, 720), help="HR output WIDTHxHEIGHT")
    p.add_argument("--bench", type=int, default=None, metavar="N", help="time N forward passes")
    p.add_argument("--bench-size", type=int, default=64, help="LR side length for --bench")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("train", parents=[common], help="train on a directory of HR PNGs")
    _add_model_flags(p)
    p.add_argument("--data", required=True, help="directory of HR PNGs (sibling LRx{scale} optional)")
    p.add_argument("--out", required=True, help="output directory for checkpoints and log")
    p.add_argument("--resume", help="checkpoint .lkmn file to continue from")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--patch", dest="lr_patch", type=int)
    p.add_argument("--lr-init", dest="lr_init", type=float)
    p.add_argument("--lr-min", dest="lr_min", type=float)
    p.add_argument("--fft-weight", dest="fft_weight", type=float)
    p.add_argument("--l1-weight", dest="l1_weight", type=float)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--no-augment", dest="augment", action="store_const", const=False)
    p.add_argument("--seed", type=int)
    p.add_argument("--slice-size", type=int, default=None, help="pre-slice HR images into pieces of this size")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", parents=[common], help="upscale PNG images")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ensemble", action="store_true", help="average over 8 flips/rotations")
    p.add_argument("--tile", type=int, default=0, help="LR tile size (0 = whole image)")
    p.add_argument("--overlap", type=int, default=32)
    p.add_argument("inputs", nargs="+", help="PNG files or directories")
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("eval", parents=[common], help="Y-channel PSNR/SSIM report")
    p.add_argument("--hr", required=True, help="directory of ground-truth PNGs")
    p.add_argument("--lr", help="directory of LR PNGs (default: bicubic-degraded HR)")
    p.add_argument("--weights")
    p.add_argument("--baseline", choices=["bicubic"])
    p.add_argument("--sr-dir", help="score precomputed SR PNGs instead of running a model")
    p.add_argument("--scale", type=int)
    p.add_argument("--border", type=int, default=None, help="border crop in pixels (default: scale)")
    p.add_argument("--no-border", dest="border", action="store_const", const=0)
    p.add_argument("--ensemble", action="store_true")
    p.add_argument("--tile", type=int, default=0)
    p.add_argument("--overlap", type=int, default=32)
    p.add_argument("--out", help="also write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("degrade", parents=[common], help="mod-crop and bicubic-downscale HR PNGs")
    p.add_argument("--hr", required=True)
    p.add_argument("--scale", type=int, required=True, choices=[2, 3, 4])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_degrade)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrityError, CompatibilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
