"""Command-line surface: train, encode, decode, eval, saliency.

Exit codes: 0 success, 2 bad arguments, 3 unreadable image, 4 checkpoint
problem, 5 corrupt or mismatched bitstream.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import bitstream, imageio, training
from .model import PRESETS, CheckpointError, ModelConfig, TICModel, load_checkpoint, save_checkpoint
from .tensor import Tensor, no_grad

EXIT_IMAGE = 3
EXIT_CHECKPOINT = 4
EXIT_STREAM = 5


class CliError(RuntimeError):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _load_model(path) -> TICModel:
    if not os.path.exists(path):
        raise CliError(f"checkpoint not found: {path}", EXIT_CHECKPOINT)
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise CliError(f"bad checkpoint {path}: {exc}", EXIT_CHECKPOINT) from exc


def _read_image(path) -> np.ndarray:
    try:
        return imageio.read_image(path)
    except imageio.ImageError as exc:
        raise CliError(str(exc), EXIT_IMAGE) from exc


def _resolve_config(args) -> ModelConfig:
    if args.preset not in PRESETS:
        raise CliError(
            f"unknown preset {args.preset!r}; choices: {', '.join(sorted(PRESETS))}",
            2,
        )
    cfg = PRESETS[args.preset]
    overrides = {}
    if args.lam is not None:
        overrides["lam"] = args.lam
    if args.channels is not None:
        overrides["channels"] = args.channels
    if overrides:
        import dataclasses

        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    model = TICModel(cfg, seed=args.seed)
    if args.input:
        files = sorted(
            os.path.join(args.input, f)
            for f in os.listdir(args.input)
            if f.lower().endswith((".ppm", ".pnm", ".png"))
        )
        if not files:
            raise CliError(f"no images found in {args.input}", EXIT_IMAGE)
        crop = args.crop
        rng = np.random.default_rng(np.random.PCG64(args.seed))
        patches = []
        for f in files:
            img = imageio.to_float(_read_image(f))
            h, w = img.shape[2], img.shape[3]
            if h < crop or w < crop:
                img, _ = imageio.pad_reflect(img, crop)
                h, w = img.shape[2], img.shape[3]
            i = int(rng.integers(0, h - crop + 1))
            j = int(rng.integers(0, w - crop + 1))
            patches.append(img[0, :, i : i + crop, j : j + crop])
        images = np.stack(patches)
    else:
        images = training.synthetic_images(args.synthetic, args.crop, args.seed)

    def log(metrics):
        print(
            f"step {metrics['step']:5d}  loss {metrics['loss']:.4f}  "
            f"bpp {metrics['bpp']:.4f}  mse {metrics['mse']:.2f}",
            file=sys.stderr,
        )

    history = training.fit(
        model,
        images,
        steps=args.steps,
        lam=cfg.lam,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        log=log if args.verbose else None,
    )
    save_checkpoint(args.checkpoint, model)
    if args.csv:
        training.write_metrics_csv(args.csv, history)
    print(f"final loss {history[-1]['loss']:.6f} after {args.steps} steps")
    return 0


def _encode_one(model, img):
    x = imageio.to_float(img)
    padded, orig = imageio.pad_reflect(x, model.cfg.total_factor)
    stream, info = bitstream.encode_image_stream(model, Tensor(padded), orig)
    return stream, info, orig


def _reconstruct(model, y_hat, orig_hw):
    with no_grad():
        x_hat = model.g_s(Tensor(y_hat)).data
    x_hat = np.clip(x_hat, 0.0, 1.0)
    return imageio.crop_back(x_hat, orig_hw)


def cmd_encode(args) -> int:
    model = _load_model(args.checkpoint)
    img = _read_image(args.input)
    stream, _, orig = _encode_one(model, img)
    with open(args.output, "wb") as fh:
        fh.write(stream)
    print(f"{training.bpp(len(stream), *orig):.4f}")
    return 0


def cmd_decode(args) -> int:
    model = _load_model(args.checkpoint)
    try:
        with open(args.input, "rb") as fh:
            stream = fh.read()
    except OSError as exc:
        raise CliError(f"cannot read stream {args.input}: {exc}", EXIT_STREAM) from exc
    try:
        y_hat, _, orig = bitstream.decode_image_stream(model, stream)
    except bitstream.BitstreamError as exc:
        raise CliError(f"cannot decode {args.input}: {exc}", EXIT_STREAM) from exc
    imageio.write_image(args.output, imageio.from_float(_reconstruct(model, y_hat, orig)))
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    files = sorted(
        f
        for f in os.listdir(args.input)
        if f.lower().endswith((".ppm", ".pnm", ".png"))
    )
    if not files:
        raise CliError(f"no images found in {args.input}", EXIT_IMAGE)

    def evaluate(name):
        img = _read_image(os.path.join(args.input, name))
        stream, info, orig = _encode_one(model, img)
        recon = _reconstruct(model, info["y_hat"], orig)
        return {
            "name": name,
            "bpp": training.bpp(len(stream), *orig),
            "psnr": training.psnr(imageio.to_float(img), recon),
        }

    workers = max(1, int(os.environ.get("TIC_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(evaluate, files))
    else:
        rows = [evaluate(name) for name in files]

    mean_row = {
        "name": "mean",
        "bpp": float(np.mean([r["bpp"] for r in rows])),
        "psnr": float(np.mean([r["psnr"] for r in rows])),
    }
    lines = ["name,bpp,psnr"]
    for r in rows + [mean_row]:
        lines.append(f"{r['name']},{r['bpp']:.6f},{r['psnr']:.4f}")
    text = "\n".join(lines) + "\n"
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_saliency(args) -> int:
    model = _load_model(args.checkpoint)
    img = _read_image(args.input)
    x = imageio.to_float(img)
    padded, _ = imageio.pad_reflect(x, model.cfg.total_factor)
    gh = padded.shape[2] // model.cfg.main_factor
    gw = padded.shape[3] // model.cfg.main_factor
    if args.center:
        m, n = (int(v) for v in args.center.split(","))
    else:
        m, n = gh // 2, gw // 2
    smap = training.saliency_map(model, padded, (m, n))
    peak = smap.max()
    if peak > 0:
        smap = smap / peak
    gray = np.clip(np.rint(smap * 255.0), 0, 255).astype(np.uint8)
    imageio.write_image(args.output, np.repeat(gray[:, :, None], 3, axis=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ticodec")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model on a directory or toy data")
    train.add_argument("--checkpoint", required=True, help="output checkpoint path")
    train.add_argument("--input", help="directory of training images")
    train.add_argument("--synthetic", type=int, default=16, metavar="N",
                       help="use N generated toy images when no --input is given")
    train.add_argument("--preset", default="tic-128-q4")
    train.add_argument("--lambda", dest="lam", type=float, default=None)
    train.add_argument("--channels", type=int, default=None)
    train.add_argument("--steps", type=int, default=200)
    train.add_argument("--lr", type=float, default=1e-4)
    train.add_argument("--batch-size", type=int, default=8)
    train.add_argument("--crop", type=int, default=256)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--csv", help="write per-step metrics CSV")
    train.add_argument("--verbose", action="store_true")
    train.set_defaults(func=cmd_train)

    enc = sub.add_parser("encode", help="compress an image to a bitstream")
    enc.add_argument("--checkpoint", required=True)
    enc.add_argument("--input", required=True)
    enc.add_argument("--output", required=True)
    enc.set_defaults(func=cmd_encode)

    dec = sub.add_parser("decode", help="decompress a bitstream to an image")
    dec.add_argument("--checkpoint", required=True)
    dec.add_argument("--input", required=True)
    dec.add_argument("--output", required=True)
    dec.set_defaults(func=cmd_decode)

    ev = sub.add_parser("eval", help="PSNR/bpp over a directory of images")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--input", required=True)
    ev.add_argument("--csv", help="write results CSV (stdout otherwise)")
    ev.set_defaults(func=cmd_eval)

    sal = sub.add_parser("saliency", help="latent-gradient map for an image")
    sal.add_argument("--checkpoint", required=True)
    sal.add_argument("--input", required=True)
    sal.add_argument("--output", required=True)
    sal.add_argument("--center", help="latent position m,n (default: grid center)")
    sal.set_defaults(func=cmd_saliency)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"ticodec: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
