"""Command-line entry point: ``gcfs <subcommand> [flags]``.

Exit status is 0 on success, 1 for invalid input (bad flags, missing or
malformed files, inconsistent configuration) and 2 when a run fails after
validation (divergence, failed checks, I/O errors while writing).

Configuration for ``train`` and ``ablate`` may come from a JSON file::

    {"model": {"task": "deblur", "channels": 32, "gc": {"f": 8, "blocks": 2}},
     "train": {"lr0": 0.001, "total_steps": 1500},
     "data": "train/manifest.txt", "val": "val/manifest.txt"}

Flags override file values; the resolved document is written to
``<out>/config.json`` and can be passed back with ``--config`` to rerun.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .dataio import env_threads, load_manifest, make_dataset, read_image, write_image
from .gcfeat import GCStackConfig
from .gradcheck import format_table, run_suite
from .metrics import MetricReport
from .models import ModelConfig, describe
from .trainer import (
    TrainConfig,
    ablate,
    ablation_csv,
    evaluate,
    load_checkpoint,
    log_to_csv,
    predict,
    save_checkpoint,
    train,
)
from .wsgraph import (
    GraphFormatError,
    concentration_experiment,
    degree_stats,
    format_concentration_report,
    save_graph,
    ws_generate,
)

__all__ = ["main", "build_parser", "resolve_config"]

log = logging.getLogger("gcfs")

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


class UsageError(Exception):
    """Bad command line; reported with usage text and exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# flag dest -> (section, field) in the resolved config
_MODEL_FLAGS = {
    "task": ("model", "task"),
    "channels": ("model", "channels"),
    "img_channels": ("model", "img_channels"),
    "enc_blocks": ("model", "enc_blocks"),
    "dec_blocks": ("model", "dec_blocks"),
    "sr_blocks": ("model", "sr_blocks"),
    "scale": ("model", "scale"),
    "global_skip": ("model", "global_skip"),
    "gc_features": ("gc", "f"),
    "gc_blocks": ("gc", "blocks"),
    "degree": ("gc", "degree"),
    "rho": ("gc", "rho"),
    "graph_seed": ("gc", "graph_seed"),
    "lift_project": ("gc", "lift_project"),
    "lr0": ("train", "lr0"),
    "steps": ("train", "total_steps"),
    "batch": ("train", "batch"),
    "loss": ("train", "loss"),
    "seed": ("train", "seed"),
    "eval_every": ("train", "eval_every"),
    "patch": ("train", "patch"),
}


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model (override config file)")
    g.add_argument("--task", choices=["deblur", "sr"])
    g.add_argument("--channels", type=int)
    g.add_argument("--img-channels", type=int, choices=[1, 3])
    g.add_argument("--enc-blocks", type=int)
    g.add_argument("--dec-blocks", type=int)
    g.add_argument("--sr-blocks", type=int)
    g.add_argument("--scale", type=int)
    g.add_argument("--global-skip", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--gc-features", type=int, help="graph feature width F")
    g.add_argument("--gc-blocks", type=int, help="number of ResGCN blocks")
    g.add_argument("--degree", type=int, help="Watts-Strogatz mean degree (even)")
    g.add_argument("--rho", type=float, help="rewiring probability")
    g.add_argument("--graph-seed", type=int)
    g.add_argument("--lift-project", action=argparse.BooleanOptionalAction, default=None)
    t = p.add_argument_group("training (override config file)")
    t.add_argument("--lr0", type=float)
    t.add_argument("--steps", type=int, help="total optimizer steps")
    t.add_argument("--batch", type=int)
    t.add_argument("--loss", choices=["mse", "l1"])
    t.add_argument("--seed", type=int)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--patch", type=int, help="random crop size on the input image")
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--data", help="training manifest")
    p.add_argument("--val", help="validation manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gcfs", description="Graph-convolutional feature-space image restoration.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("graph-gen", help="generate a Watts-Strogatz graph edge list")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="edge-list file to write")

    p = sub.add_parser("theorem-check", help="edge-count and degree-concentration experiment")
    p.add_argument("--nodes", type=int, default=96)
    p.add_argument("--degree", type=int, default=4)
    p.add_argument("--rhos", type=_float_list, default=[0.0, 0.9])
    p.add_argument("--graphs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="directory for report.txt")

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the tiny models")
    scope = p.add_mutually_exclusive_group()
    scope.add_argument("--all", action="store_true", help="ops and models (default)")
    scope.add_argument("--ops", action="store_true", help="ops only")
    scope.add_argument("--models", action="store_true", help="tiny models only")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", type=Path, help="directory for gradcheck.csv")

    p = sub.add_parser("make-data", help="write a synthetic dataset and manifest")
    p.add_argument("--task", choices=["deblur", "sr"], required=True)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=32, help="target side length")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--channels", type=int, choices=[1, 3], default=3)
    p.add_argument("--kernel", choices=["gaussian", "box", "delta"], default="gaussian")
    p.add_argument("--blur-param", type=float, default=1.5, help="gaussian sigma or box width")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_model_flags(p)
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.add_argument("--stop-at", type=int, help="stop after this step (for staged runs)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("infer", help="restore one image")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--target", type=Path, help="ground truth for a metrics stamp")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("ablate", help="train a grid of graph settings plus a no-graph control")
    _add_model_flags(p)
    p.add_argument("--degrees", type=_int_list, default=[2, 4])
    p.add_argument("--blocks", type=_int_list, default=[0, 2])
    p.add_argument("--seeds", type=_int_list, default=[7, 8, 9])
    p.add_argument("--out", type=Path, required=True)
    return parser


# ---------------------------------------------------------------- config

def _defaults() -> dict:
    model = ModelConfig().to_dict()
    gc = model.pop("gc")
    return {"model": model, "gc": gc, "train": TrainConfig().to_dict(), "data": None, "val": None}


def resolve_config(path: Path | None, args: argparse.Namespace) -> dict:
    """Merge defaults, the optional JSON file and explicit flags (in that order)."""
    cfg = _defaults()
    if path is not None:
        if not Path(path).is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: top level must be an object")
        doc = dict(doc)
        model = dict(doc.pop("model", {}) or {})
        if "gc" in model:
            doc.setdefault("gc", {}).update(model.pop("gc"))
        for section, values in (("model", model), ("gc", doc.pop("gc", {}) or {}), ("train", doc.pop("train", {}) or {})):
            unknown = set(values) - set(cfg[section])
            if unknown:
                raise ValueError(f"{path}: unknown {section} field(s) {sorted(unknown)}")
            cfg[section].update(values)
        for key in ("data", "val"):
            if key in doc:
                cfg[key] = doc.pop(key)
        doc.pop("resume", None)
        if doc:
            raise ValueError(f"{path}: unknown top-level key(s) {sorted(doc)}")
    for dest, (section, name) in _MODEL_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg[section][name] = value
    for key in ("data", "val"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    return cfg


def _configs(cfg: dict) -> tuple[ModelConfig, TrainConfig]:
    try:
        model = ModelConfig(gc=GCStackConfig(**cfg["gc"]), **cfg["model"])
        tcfg = TrainConfig(**cfg["train"])
    except TypeError as exc:
        raise ValueError(f"invalid configuration: {exc}") from None
    return model, tcfg


def _echo_config(out: Path, cfg: dict) -> None:
    doc = {"model": dict(cfg["model"], gc=cfg["gc"]), "train": cfg["train"]}
    for key in ("data", "val", "resume"):
        if cfg.get(key) is not None:
            doc[key] = cfg[key]
    (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_pairs(manifest: str | None, what: str):
    if manifest is None:
        raise ValueError(f"no {what} manifest given (use --{what} or the config file)")
    man = load_manifest(manifest)
    if not len(man):
        raise ValueError(f"{manifest}: manifest lists no pairs")
    return man, man.load_pairs()


# ---------------------------------------------------------------- commands

def _cmd_graph_gen(args) -> int:
    g = ws_generate(args.nodes, args.degree, args.rho, args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_graph(g, args.out)
    st = degree_stats(g)
    print(f"nodes {g.n} edges {len(g.edges)} mean_degree {st.mean} degree_variance {st.variance!r}")
    return EXIT_OK


def _cmd_theorem_check(args) -> int:
    rows = concentration_experiment(args.nodes, args.degree, args.rhos, args.graphs, args.seed)
    report = format_concentration_report(rows)
    ok = all(r["all_means_equal_k"] for r in rows)
    by_rho = {r["rho"]: r["pooled_variance"] for r in rows}
    lines = [report.rstrip("\n"), f"edge count n*k/2 = {args.nodes * args.degree // 2} in every graph: {ok}"]
    if 0.0 in by_rho:
        lattice_zero = by_rho[0.0] == 0.0
        rewired_up = all(v > by_rho[0.0] for rho, v in by_rho.items() if rho > 0)
        lines.append(f"lattice variance is zero: {lattice_zero}")
        lines.append(f"rewiring increases degree variance: {rewired_up}")
        ok = ok and lattice_zero and rewired_up
    lines.append("PASS" if ok else "FAIL")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.txt").write_text(text, encoding="utf-8")
    return EXIT_OK if ok else EXIT_FAILED


def _cmd_gradcheck(args) -> int:
    if args.seeds < 1:
        raise ValueError("--seeds must be >= 1")
    results = run_suite(range(args.seeds), ops=not args.models, models=not args.ops)
    print(format_table(results), end="")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        rows = ["check,seed,max_rel_err,checked"] + [f"{r.name},{r.seed},{r.max_rel_err!r},{r.checked}" for r in results]
        (args.out / "gradcheck.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAILED


def _cmd_make_data(args) -> int:
    if args.count < 1 or args.size < 1:
        raise ValueError("--count and --size must be positive")
    param = int(args.blur_param) if args.kernel == "box" else args.blur_param
    path = make_dataset(args.out, args.task, args.count, args.size, args.seed, args.channels,
                        args.kernel, param, args.noise, args.scale)
    echo = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in ("func", "verbose")}
    (args.out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {args.count} pairs to {path}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = resolve_config(args.config, args)
    model_cfg, train_cfg = _configs(cfg)
    resume = None
    if args.resume is not None:
        resume = load_checkpoint(args.resume)
        if resume.model_cfg != model_cfg or resume.train_cfg != train_cfg:
            raise ValueError(f"{args.resume}: checkpoint configuration differs from the requested one")
        cfg["resume"] = str(args.resume)
    _, pairs = _load_pairs(cfg["data"], "data")
    val = _load_pairs(cfg["val"], "val")[1] if cfg["val"] is not None else None
    args.out.mkdir(parents=True, exist_ok=True)
    _echo_config(args.out, cfg)
    (args.out / "model.txt").write_text(describe(model_cfg), encoding="utf-8")

    ckpt, rows = train(model_cfg, pairs, train_cfg, val, resume=resume, stop_at=args.stop_at)
    save_checkpoint(args.out / "checkpoint.gcfs", ckpt)
    (args.out / "log.csv").write_text(log_to_csv(rows), encoding="utf-8")
    last = rows[-1] if rows else None
    if last is not None:
        ev = "" if last["eval_psnr"] is None else f" eval_psnr {last['eval_psnr']:.4f}"
        print(f"step {last['step']} loss {last['loss']:.6g}{ev}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    man, pairs = _load_pairs(args.data, "data")
    report = evaluate(ckpt, pairs, [Path(e.input_path).stem for e in man.entries])
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    echo = {"checkpoint": str(args.checkpoint), "data": args.data}
    (args.out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"images {len(report.rows)} mean_psnr {report.mean_psnr:.4f} mean_ssim {report.mean_ssim:.4f}")
    return EXIT_OK


def _cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    img = read_image(args.input)
    if img.shape[0] != ckpt.model_cfg.img_channels:
        raise ValueError(f"{args.input}: image has {img.shape[0]} channels, model expects {ckpt.model_cfg.img_channels}")
    target = read_image(args.target) if args.target is not None else None
    out, padded = predict(ckpt.model_cfg, ckpt.tensors(), img[None])
    restored = np.clip(out[0], 0.0, 1.0)
    args.out.mkdir(parents=True, exist_ok=True)
    dest = args.out / f"{args.input.stem}_restored{args.input.suffix or '.ppm'}"
    write_image(dest, restored)
    echo = {"checkpoint": str(args.checkpoint), "input": str(args.input),
            "target": None if args.target is None else str(args.target)}
    (args.out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    msg = f"wrote {dest}"
    if padded:
        msg += f" (input padded to a multiple of {ckpt.model_cfg.factor} and cropped back)"
    print(msg)
    if target is not None:
        if target.shape != restored.shape:
            raise ValueError(f"{args.target}: shape {target.shape} does not match output {restored.shape}")
        rep = MetricReport()
        rep.add(args.input.stem, restored, target)
        stamp = f"psnr={rep.rows[0][1]!r} ssim={rep.rows[0][2]!r}"
        (args.out / "metrics.txt").write_text(stamp + "\n", encoding="utf-8")
        print(stamp)
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = resolve_config(args.config, args)
    base, train_cfg = _configs(cfg)
    odd = [d for d in args.degrees if d % 2]
    if odd:
        raise ValueError(f"graph degree must be even; got odd degree(s) {odd}")
    _, pairs = _load_pairs(cfg["data"], "data")
    _, val = _load_pairs(cfg["val"], "val")
    args.out.mkdir(parents=True, exist_ok=True)
    _echo_config(args.out, dict(cfg, ablation={"degrees": args.degrees, "blocks": args.blocks, "seeds": args.seeds}))
    runs, cells = ablate(base, args.degrees, args.blocks, args.seeds, train_cfg, pairs, val)
    runs_csv, cells_csv = ablation_csv(runs, cells)
    (args.out / "runs.csv").write_text(runs_csv, encoding="utf-8")
    (args.out / "cells.csv").write_text(cells_csv, encoding="utf-8")
    print(cells_csv, end="")
    return EXIT_OK


_COMMANDS = {
    "graph-gen": _cmd_graph_gen,
    "theorem-check": _cmd_theorem_check,
    "gradcheck": _cmd_gradcheck,
    "make-data": _cmd_make_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "ablate": _cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=env_threads()):
            return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, GraphFormatError) as exc:
        print(f"gcfs {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any failure after validation
        print(f"gcfs {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


def entry() -> None:  # pragma: no cover
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    entry()
