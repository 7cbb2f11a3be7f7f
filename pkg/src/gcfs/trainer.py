"""Initialization, Adam, learning-rate schedule, training, evaluation, checkpoints.

Every source of randomness is derived from explicit seeds:

* weights: ``SeedSequence([seed, parameter_index])``
* batch ``k`` (1-based step): ``SeedSequence([seed, k])``

so a run resumed from a checkpoint at step ``s`` draws exactly the batches an
uninterrupted run would have drawn.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .dataio import DegradedPair, pair_scale
from .metrics import MetricReport, psnr
from .models import ModelConfig, forward, model_aggregator, param_shapes
from .tensor import Tensor
from .wsgraph import ws_generate

__all__ = [
    "TrainConfig",
    "OptimState",
    "Checkpoint",
    "CheckpointError",
    "TrainingDiverged",
    "xavier_init",
    "init_params",
    "adam_step",
    "lr_at",
    "train",
    "predict",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_bytes",
    "ablate",
    "log_to_csv",
]

log = logging.getLogger(__name__)

MAGIC = b"GCFS"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    total_steps: int = 1500
    batch: int = 4
    loss: str = "mse"
    seed: int = 7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 250
    patch: int | None = None

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.loss not in ("mse", "l1"):
            raise ValueError(f"loss must be 'mse' or 'l1', got {self.loss!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class OptimState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "OptimState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()}, 0)


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    params: dict  # name -> float32 ndarray
    state: OptimState
    step: int
    graph_edges: list = field(default_factory=list)
    version: int = FORMAT_VERSION

    def tensors(self) -> dict:
        return {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}


# ---------------------------------------------------------------- init / optim

def xavier_init(shape: Sequence[int], fan_in: int, fan_out: int, seed, dtype=np.float32) -> Tensor:
    """Uniform on ``[-b, b]`` with ``b = sqrt(6 / (fan_in + fan_out))``."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fans must be >= 1")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)).astype(dtype), requires_grad=True)


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict:
    """Xavier-uniform weights and zero biases, one seed stream per parameter."""
    params = {}
    for idx, (name, spec) in enumerate(param_shapes(cfg).items()):
        if spec.kind == "bias":
            params[name] = Tensor(np.zeros(spec.shape, dtype=dtype), requires_grad=True)
        else:
            params[name] = xavier_init(spec.shape, spec.fan_in, spec.fan_out,
                                       np.random.SeedSequence([seed, idx]), dtype)
    return params


def adam_step(params: dict, grads: dict, state: OptimState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise T.ShapeError(f"adam_step: gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
        m, v = state.m[name], state.v[name]
        dt = m.dtype.type
        m *= dt(beta1)
        m += dt(1.0 - beta1) * g
        v *= dt(beta2)
        v += dt(1.0 - beta2) * (g * g)
        m_hat = m / dt(bc1)
        v_hat = v / dt(bc2)
        p.data -= dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear decay from ``lr0`` at step 0 to 0 at ``total_steps``."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    return cfg.lr0 * (1.0 - step / cfg.total_steps)


# ---------------------------------------------------------------- inference

def _pad_to(img: np.ndarray, factor: int) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = img.shape[-2:]
    ph, pw = (-h) % factor, (-w) % factor
    if ph == 0 and pw == 0:
        return img, (h, w)
    pad = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(img, pad, mode="symmetric"), (h, w)


def predict(cfg: ModelConfig, params: dict, images: np.ndarray) -> tuple[np.ndarray, bool]:
    """Restore a batch ``(N, C, H, W)`` one image at a time.

    Deblurring inputs whose sides are not multiples of 4 are mirror-padded and
    the output cropped back. Returns the float64 outputs and whether padding
    was needed.
    """
    images = np.asarray(images)
    agg = model_aggregator(cfg)
    padded_any = False
    outs = []
    s = cfg.scale if cfg.task == "sr" else 1
    with T.no_grad():
        for img in images:
            x, (h, w) = _pad_to(img, cfg.factor)
            padded_any |= x.shape != img.shape
            y = forward(Tensor(x[None].astype(np.float32)), cfg, params, agg).data[0]
            outs.append(y[..., : h * s, : w * s].astype(np.float64))
    return np.stack(outs), padded_any


def evaluate_pairs(cfg: ModelConfig, params: dict, pairs: Sequence[DegradedPair],
                   names: Sequence[str] | None = None) -> MetricReport:
    report = MetricReport()
    for i, pair in enumerate(pairs):
        out, padded = predict(cfg, params, pair.input[None])
        name = names[i] if names else f"{i:05d}"
        report.add(name, np.clip(out[0], 0.0, 1.0), pair.target)
        if padded:
            report.notes.append(f"{name}: padded to a multiple of {cfg.factor} and cropped back")
    return report


def evaluate(checkpoint: Checkpoint, pairs: Sequence[DegradedPair],
             names: Sequence[str] | None = None) -> MetricReport:
    return evaluate_pairs(checkpoint.model_cfg, checkpoint.tensors(), pairs, names)


def baseline_report(pairs: Sequence[DegradedPair]) -> MetricReport:
    """Degraded input vs target (bicubic-upsampled first for SR pairs)."""
    from .dataio import bicubic_upsample

    report = MetricReport()
    for i, pair in enumerate(pairs):
        s = pair_scale(pair)
        inp = pair.input if s == 1 else np.clip(bicubic_upsample(pair.input, s), 0.0, 1.0)
        report.add(f"{i:05d}", inp, pair.target)
    return report


# ---------------------------------------------------------------- training

def _batch(pairs: Sequence[DegradedPair], cfg: TrainConfig, step: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, step])
    idx = rng.integers(0, len(pairs), size=cfg.batch)
    xs, ys = [], []
    for i in idx:
        pair = pairs[i]
        inp, tgt = pair.input, pair.target
        if cfg.patch is not None:
            s = pair_scale(pair)
            h, w = inp.shape[-2:]
            if cfg.patch > min(h, w):
                raise ValueError(f"patch {cfg.patch} larger than training image {h}x{w}")
            y0 = int(rng.integers(0, h - cfg.patch + 1))
            x0 = int(rng.integers(0, w - cfg.patch + 1))
            inp = inp[..., y0 : y0 + cfg.patch, x0 : x0 + cfg.patch]
            tgt = tgt[..., s * y0 : s * (y0 + cfg.patch), s * x0 : s * (x0 + cfg.patch)]
        xs.append(inp)
        ys.append(tgt)
    return np.stack(xs).astype(np.float32), np.stack(ys).astype(np.float32)


def _graph_edges(cfg: ModelConfig) -> list:
    if cfg.gc.is_identity:
        return []
    g = ws_generate(cfg.channels, cfg.gc.degree, cfg.gc.rho, cfg.gc.graph_seed)
    return [list(e) for e in g.sorted_edges()]


def train(model_cfg: ModelConfig, pairs: Sequence[DegradedPair], train_cfg: TrainConfig,
          val_pairs: Sequence[DegradedPair] | None = None, resume: Checkpoint | None = None,
          stop_at: int | None = None) -> tuple[Checkpoint, list[dict]]:
    """Run Adam steps ``start+1 .. stop_at`` (default ``total_steps``).

    Returns the final checkpoint and log rows ``{step, loss, lr, eval_psnr}``;
    ``eval_psnr`` is filled every ``eval_every`` steps and at ``total_steps``
    when ``val_pairs`` is given, so staged runs log exactly what a single run logs.
    """
    if not pairs:
        raise ValueError("training set is empty")
    stop = train_cfg.total_steps if stop_at is None else stop_at
    if not 0 <= stop <= train_cfg.total_steps:
        raise ValueError(f"stop_at {stop} outside [0, {train_cfg.total_steps}]")

    if resume is not None:
        params = resume.tensors()
        state = OptimState({k: v.copy() for k, v in resume.state.m.items()},
                           {k: v.copy() for k, v in resume.state.v.items()}, resume.state.t)
        start = resume.step
    else:
        params = init_params(model_cfg, train_cfg.seed)
        state = OptimState.zeros_like(params)
        start = 0
    agg = model_aggregator(model_cfg)
    loss_fn = T.mse_loss if train_cfg.loss == "mse" else T.l1_loss

    rows: list[dict] = []
    for step in range(start + 1, stop + 1):
        lr = lr_at(step - 1, train_cfg)
        xb, yb = _batch(pairs, train_cfg, step)
        for p in params.values():
            p.grad = None
        out = forward(Tensor(xb), model_cfg, params, agg)
        loss = loss_fn(out, Tensor(yb))
        loss_val = float(loss.data)
        T.backward(loss)
        grads = {k: p.grad for k, p in params.items()}
        gnorm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values() if g is not None)))
        if not (np.isfinite(loss_val) and np.isfinite(gnorm)):
            raise TrainingDiverged(f"non-finite loss at step {step}: loss={loss_val}, lr={lr}, grad_norm={gnorm}")
        adam_step(params, grads, state, lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)

        row = {"step": step, "loss": loss_val, "lr": lr, "eval_psnr": None}
        if val_pairs and (step % train_cfg.eval_every == 0 or step == train_cfg.total_steps):
            row["eval_psnr"] = evaluate_pairs(model_cfg, params, val_pairs).mean_psnr
            log.info("step %d loss %.6g lr %.3g eval_psnr %.4f", step, loss_val, lr, row["eval_psnr"])
        rows.append(row)

    ckpt = Checkpoint(
        model_cfg=model_cfg,
        train_cfg=train_cfg,
        params={k: p.data.copy() for k, p in params.items()},
        state=state,
        step=stop,
        graph_edges=_graph_edges(model_cfg),
    )
    return ckpt, rows


def log_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss", "lr", "eval_psnr"])
    for r in rows:
        ev = "" if r["eval_psnr"] is None else repr(float(r["eval_psnr"]))
        w.writerow([r["step"], repr(float(r["loss"])), repr(float(r["lr"])), ev])
    return buf.getvalue()


# ---------------------------------------------------------------- checkpoint I/O

def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialize: ``GCFS``, u32 version, u64 header length, JSON header, float32 data."""
    directory = []
    chunks = []
    offset = 0
    groups = (("param", ckpt.params), ("adam_m", ckpt.state.m), ("adam_v", ckpt.state.v))
    for prefix, arrays in groups:
        for name, arr in arrays.items():
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            directory.append({"name": f"{prefix}/{name}", "shape": list(arr.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
    header = {
        "model_cfg": ckpt.model_cfg.to_dict(),
        "train_cfg": ckpt.train_cfg.to_dict(),
        "step": ckpt.step,
        "adam_t": ckpt.state.t,
        "graph": {
            "n": ckpt.model_cfg.channels,
            "k": ckpt.model_cfg.gc.degree,
            "rho": ckpt.model_cfg.gc.rho,
            "seed": ckpt.model_cfg.gc.graph_seed,
            "edges": ckpt.graph_edges,
        },
        "tensors": directory,
        "data_length": offset,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", ckpt.version, len(hbytes)) + hbytes + b"".join(chunks)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def parse_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CheckpointError("bad magic: not a GCFS checkpoint")
    version, hlen = struct.unpack("<IQ", buf[4:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if 16 + hlen > len(buf):
        raise CheckpointError("header length exceeds file size (truncated file)")
    try:
        header = json.loads(buf[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    data = buf[16 + hlen :]
    if len(data) != header["data_length"]:
        raise CheckpointError(f"length mismatch: data section has {len(data)} bytes, header says {header['data_length']}")

    arrays: dict[str, dict] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        prefix, name = entry["name"].split("/", 1)
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(data):
            raise CheckpointError(f"tensor {entry['name']} runs past end of data")
        arrays[prefix][name] = np.frombuffer(data[start:end], dtype="<f4").astype(np.float32).reshape(shape)

    model_cfg = ModelConfig.from_dict(header["model_cfg"])
    train_cfg = TrainConfig(**header["train_cfg"])
    expected = set(param_shapes(model_cfg))
    if set(arrays["param"]) != expected:
        raise CheckpointError("parameter set does not match the stored model configuration")
    if header["graph"]["edges"] != _graph_edges(model_cfg):
        raise CheckpointError("stored graph does not match the graph regenerated from its parameters")
    return Checkpoint(model_cfg, train_cfg, arrays["param"],
                      OptimState(arrays["adam_m"], arrays["adam_v"], header["adam_t"]),
                      header["step"], header["graph"]["edges"], version)


def load_checkpoint(path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())


# ---------------------------------------------------------------- ablation

def _with_gc(cfg: ModelConfig, **changes) -> ModelConfig:
    gc = dataclasses.replace(cfg.gc, **changes)
    return dataclasses.replace(cfg, gc=gc)


def ablate(base_cfg: ModelConfig, degrees: Sequence[int], block_counts: Sequence[int],
           seeds: Sequence[int], train_cfg: TrainConfig, pairs: Sequence[DegradedPair],
           val_pairs: Sequence[DegradedPair]) -> tuple[list[dict], list[dict]]:
    """Train every (degree, blocks, seed) variant plus a no-GC control per seed.

    Returns ``(runs, cells)``: one row per training run and one mean/std row
    per grid cell (the control is the cell with ``degree = blocks = 'none'``).
    """
    bad = [d for d in degrees if d % 2]
    if bad:
        raise ValueError(f"graph degree must be even; got odd degree(s) {bad}")
    variants: list[tuple] = [(d, b) for d in degrees for b in block_counts]
    runs: list[dict] = []
    for d, b in variants + [("none", "none")]:
        if d == "none":
            cfg = _with_gc(base_cfg, blocks=0, lift_project=False)
        else:
            cfg = _with_gc(base_cfg, degree=d, blocks=b)
        for seed in seeds:
            tcfg = dataclasses.replace(train_cfg, seed=seed)
            ckpt, _ = train(cfg, pairs, tcfg)
            score = evaluate(ckpt, val_pairs).mean_psnr
            log.info("ablate degree=%s blocks=%s seed=%s psnr=%.4f", d, b, seed, score)
            runs.append({"degree": d, "blocks": b, "seed": seed, "psnr": score})
    cells = []
    for d, b in variants + [("none", "none")]:
        vals = np.array([r["psnr"] for r in runs if r["degree"] == d and r["blocks"] == b])
        cells.append({"degree": d, "blocks": b, "runs": len(vals), "psnr_mean": float(vals.mean()),
                      "psnr_std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0})
    return runs, cells


def ablation_csv(runs: Sequence[dict], cells: Sequence[dict]) -> tuple[str, str]:
    rb = io.StringIO()
    w = csv.writer(rb, lineterminator="\n")
    w.writerow(["degree", "blocks", "seed", "psnr"])
    for r in runs:
        w.writerow([r["degree"], r["blocks"], r["seed"], repr(r["psnr"])])
    cb = io.StringIO()
    w = csv.writer(cb, lineterminator="\n")
    w.writerow(["degree", "blocks", "runs", "psnr_mean", "psnr_std"])
    for c in cells:
        w.writerow([c["degree"], c["blocks"], c["runs"], repr(c["psnr_mean"]), repr(c["psnr_std"])])
    return rb.getvalue(), cb.getvalue()


def identity_gc(cfg: ModelConfig) -> ModelConfig:
    """Same model with the graph-convolution stack replaced by the identity."""
    return _with_gc(cfg, blocks=0, lift_project=False)

