"""Command-line entry point: ``tadt <subcommand> ...``.

Exit status is 0 on success, 1 on a runtime failure (message on stderr) and
2 on a usage error (argparse prints the usage text).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .. import config as presets
from ..config import RunConfig
from ..flops import count_flops
from ..tensor import Tensor, get_default_dtype
from . import checkpoint as ckpt_io
from .imageio import read_image, write_image
from .metrics import format_db

PRESETS = {"full": presets.full_config, "tiny": presets.tiny_config, "toy": presets.toy_config}


class CLIError(RuntimeError):
    pass


def load_config(source: str | None, default: str = "full") -> RunConfig:
    """A config file path, or one of the preset names ``full``, ``tiny``, ``toy``."""
    if source is None:
        return PRESETS[default]()
    if source in PRESETS and not os.path.exists(source):
        return PRESETS[source]()
    try:
        return RunConfig.load(source)
    except OSError as exc:
        raise CLIError(f"cannot read config {source}: {exc.strerror or exc}") from exc


def parse_hw(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise argparse.ArgumentTypeError(f"extents must be positive, got {text!r}")
    return h, w


def parse_scales(text: str) -> list[float]:
    try:
        scales = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated scales, got {text!r}") from None
    if not scales or min(scales) < 1.0:
        raise argparse.ArgumentTypeError("scales must be >= 1")
    return scales


def read_routing_file(path: str, length: int) -> np.ndarray:
    """0/1 entries separated by whitespace or commas, or a JSON list."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        values = json.loads(text)
    except json.JSONDecodeError:
        values = text.replace(",", " ").split()
    r = np.asarray([int(v) for v in values], dtype=np.int64)
    if r.shape != (length,) or not np.isin(r, (0, 1)).all():
        raise CLIError(f"{path}: expected {length} binary entries, got {r.size}")
    return r


def _load_model(path: str):
    from ..training.train import model_from_checkpoint
    try:
        ck = ckpt_io.load(path)
    except ckpt_io.CheckpointError as exc:
        raise CLIError(str(exc)) from exc
    return model_from_checkpoint(ck)


def _eval_images(source: str) -> list:
    from ..training.data import load_folder, toy_dataset
    if source.startswith("toy"):
        # "toy" or "toy:N": held-out procedural images (a seed disjoint from training)
        n = int(source.split(":", 1)[1]) if ":" in source else 8
        return toy_dataset(n, 96, 128, seed=777)
    if not os.path.isdir(source):
        raise CLIError(f"no such data directory: {source}")
    images = load_folder(source)
    if not images:
        raise CLIError(f"no PNG/PPM images found in {source}")
    return images


# -- subcommands -----------------------------------------------------------

def cmd_train(args) -> int:
    from ..training.data import load_folder
    from ..training.train import train
    cfg = load_config(args.config, "toy")
    images = None
    data_dir = args.data or cfg.train.data_dir
    if data_dir:
        images = load_folder(data_dir)
    out = args.output or f"{args.stage}.ckpt"
    state = train(args.stage, cfg, images=images, steps=args.steps, seed=args.seed, baseline=args.baseline,
                  resume=args.resume, log_path=args.log, stop_after=args.stop_after, checkpoint_path=out)
    last = state.history[-1] if state.history else {}
    print(json.dumps({"stage": state.stage, "step": state.step, "checkpoint": out,
                      "l1": last.get("l1")}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    from ..training.evaluate import evaluate
    model, cfg, stage = _load_model(args.checkpoint)
    images = _eval_images(args.data)
    routing = "baseline" if stage == "baseline" else args.routing
    rng = np.random.default_rng(args.seed)
    rows = []
    for s in args.scale:
        res = evaluate(model, images, s, routing, rng)
        rows.append({k: res[k] for k in ("scale", "psnr", "bicubic_psnr", "mean_dynamic_flops",
                                         "mean_static_flops", "mean_active_branches", "mean_beta")})
    if args.json:
        print(json.dumps({"stage": stage, "routing": routing, "images": len(images), "results": rows},
                         sort_keys=True))
    else:
        print(f"{'scale':>6s} {'PSNR':>9s} {'bicubic':>9s} {'branches':>9s} {'GFLOPs':>10s}")
        for r in rows:
            print(f"{r['scale']:6g} {format_db(r['psnr']):>9s} {format_db(r['bicubic_psnr']):>9s} "
                  f"{r['mean_active_branches']:9.2f} {r['mean_dynamic_flops'] / 1e9:10.4f}")
    return 0


def cmd_infer(args) -> int:
    model, cfg, stage = _load_model(args.checkpoint)
    lr = read_image(args.input)
    routing = "baseline" if stage == "baseline" else args.routing
    size = (round(lr.shape[1] * args.scale), round(lr.shape[2] * args.scale))
    rng = np.random.default_rng(args.seed)
    sr, _ = model.super_resolve(Tensor(lr[None], dtype=get_default_dtype()), args.scale, routing, rng, size=size)
    write_image(args.output, sr[0])
    print(f"wrote {args.output} ({size[0]}x{size[1]})")
    return 0


def cmd_flops(args) -> int:
    cfg = load_config(args.config)
    n = cfg.backbone.routing_length
    routes = np.ones(n, dtype=np.int64) if args.routing_file is None else read_routing_file(args.routing_file, n)
    h, w = args.hw
    report = count_flops(cfg, routes, h, w, args.scale)
    print(report.to_json() if args.json else report.pretty())
    return 0


def cmd_gradcheck(args) -> int:
    from ..verification import run_suite
    cfg = presets.tiny_config() if args.tiny or args.config is None else load_config(args.config)
    results = run_suite(cfg, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_inspect_routes(args) -> int:
    model, cfg, stage = _load_model(args.checkpoint)
    if model.router is None:
        raise CLIError(f"{args.checkpoint} is a {stage} checkpoint without a router")
    lr = read_image(args.input)
    img = Tensor(lr[None], dtype=get_default_dtype())
    rng = np.random.default_rng(args.seed)
    mode = {"threshold": "eval", "sample": "train", "all-on": "all-on"}[args.routing]
    for s in args.scales:
        dec = model.router(img, s, mode, rng)
        r = dec.routes.data[0].astype(np.int64)
        rep = count_flops(cfg, r, lr.shape[1], lr.shape[2], s)
        print(json.dumps({
            "s": s,
            "beta": float(dec.beta.data[0, 0]),
            "p": [round(float(v), 6) for v in dec.probs.data[0]],
            "r": r.tolist(),
            "dynamic_flops": rep.dynamic_for_r,
            "static_flops": rep.static_all_on,
        }, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tadt", description="Task-aware dynamic transformer for arbitrary-scale SR.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    t = sub.add_parser("train", help="train the baseline or the routed stage")
    t.add_argument("--config", help="config file or preset name (default: toy)")
    t.add_argument("--stage", choices=("baseline", "tadt"), required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", metavar="CKPT")
    t.add_argument("--baseline", metavar="CKPT", help="baseline checkpoint the tadt stage starts from")
    t.add_argument("--steps", type=int, help="total steps of the schedule (ignored with --resume)")
    t.add_argument("--stop-after", type=int, metavar="N", help="checkpoint and stop once N steps are done")
    t.add_argument("--data", metavar="DIR", help="training images (default: procedural toy set)")
    t.add_argument("--output", metavar="CKPT", help="where to write the final checkpoint")
    t.add_argument("--log", metavar="PATH", help="append JSON-lines metrics here")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="PSNR against bicubic over held-out images")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, metavar="DIR", help="image folder, or toy[:N]")
    e.add_argument("--scale", type=parse_scales, required=True, help="one scale or a list like 2,3,4")
    e.add_argument("--routing", choices=("threshold", "sample", "all-on"), default="threshold")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="super-resolve one image")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--scale", type=float, required=True)
    i.add_argument("--output", required=True)
    i.add_argument("--routing", choices=("sample", "threshold", "all-on"), default="threshold")
    i.add_argument("--seed", type=int, default=0)
    i.set_defaults(func=cmd_infer)

    f = sub.add_parser("flops", help="analytic FLOPs report")
    f.add_argument("--config", help="config file or preset name (default: full)")
    f.add_argument("--scale", type=float, required=True)
    f.add_argument("--hw", type=parse_hw, required=True, metavar="HxW")
    f.add_argument("--routing-file", metavar="F", help="routing vector (default: all branches on)")
    f.add_argument("--json", action="store_true")
    f.set_defaults(func=cmd_flops)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--config")
    g.add_argument("--tiny", action="store_true", help="use the tiny verification config")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("inspect-routes", help="router decisions per scale as JSON lines")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--scales", type=parse_scales, default=[2.0, 3.0, 4.0])
    r.add_argument("--routing", choices=("threshold", "sample", "all-on"), default="threshold")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_inspect_routes)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: usage errors exit 2, --help exits 0
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"tadt {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
