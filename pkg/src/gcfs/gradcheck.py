"""Finite-difference gradient suite over every differentiable op and both tiny models.

Each case builds a scalar objective from random float64 inputs. Elementwise
and shape ops are read out through a fixed random projection ``sum(r * y)``,
which keeps every gradient entry of order one so the relative error measures
the backward pass rather than floating-point cancellation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import tensor as T
from .gcfeat import GCStackConfig, NodeTensor, build_aggregator, gc_param_shapes, gc_stack_forward, graph_conv, resgcn_block
from .models import ModelConfig, forward, model_aggregator, param_shapes
from .tensor import Tensor, grad_check
from .wsgraph import ws_generate, aggregator_matrix

__all__ = ["CheckResult", "run_suite", "check_model", "format_table", "TOLERANCE", "tiny_deblur_config", "tiny_sr_config"]

TOLERANCE = 1e-5


@dataclass
class CheckResult:
    name: str
    seed: int
    max_rel_err: float
    checked: int

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _readout(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _proj(y: Tensor, r: Tensor) -> Tensor:
    return T.tsum(T.mul(y, r))


def _check_all_args(name, seed, args: list[np.ndarray], fn: Callable[..., Tensor],
                    eps: float = 1e-4, sample: int | None = None, rng=None) -> CheckResult:
    """Check ``d fn(*args) / d args[i]`` for every argument in turn."""
    worst, checked = 0.0, 0
    for i, arg in enumerate(args):
        def f(x, i=i):
            inputs = [Tensor(a) for a in args]
            inputs[i] = x
            return fn(*inputs)

        idx = None
        if sample is not None and arg.size > sample:
            idx = rng.choice(arg.size, sample, replace=False)
        worst = max(worst, grad_check(f, _t(arg), eps=eps, indices=idx))
        checked += arg.size if idx is None else len(idx)
    return CheckResult(name, seed, worst, checked)


# ---------------------------------------------------------------- op cases

def _op_cases(seed: int) -> Iterable[CheckResult]:
    rng = np.random.default_rng([seed, 17])
    n = rng.normal

    a, b = n(size=(3, 4)), n(size=(3, 4))
    r = _readout(rng, (3, 4))
    yield _check_all_args("add", seed, [a, b], lambda x, y: _proj(T.add(x, y), r))
    yield _check_all_args("sub", seed, [a, b], lambda x, y: _proj(T.sub(x, y), r))
    yield _check_all_args("mul", seed, [a, b], lambda x, y: _proj(T.mul(x, y), r))
    yield _check_all_args("scale", seed, [a], lambda x: _proj(T.scale(x, -1.7), r))
    # keep relu inputs away from the kink so the check is not dominated by refinement
    xr = n(size=(3, 4))
    xr = np.where(np.abs(xr) < 0.05, 0.3, xr)
    yield _check_all_args("relu", seed, [xr], lambda x: _proj(T.relu(x), r))
    yield _check_all_args("sum", seed, [a], lambda x: T.scale(T.tsum(x), 0.5))

    x = n(size=(2, 3, 4))
    r = _readout(rng, (4, 6))
    yield _check_all_args("reshape", seed, [x], lambda t: _proj(T.reshape(t, (4, 6)), r))
    r = _readout(rng, (4, 2, 3))
    yield _check_all_args("permute", seed, [x], lambda t: _proj(T.permute(t, (2, 0, 1)), r))

    x = n(size=(1, 8, 2, 3))
    r = _readout(rng, (1, 2, 4, 6))
    yield _check_all_args("subpixel_upsample", seed, [x], lambda t: _proj(T.subpixel_upsample(t, 2), r))
    x = n(size=(1, 2, 4, 6))
    r = _readout(rng, (1, 8, 2, 3))
    yield _check_all_args("subpixel_downsample", seed, [x], lambda t: _proj(T.subpixel_downsample(t, 2), r))

    a3, b2, b3 = n(size=(3, 2, 4)), n(size=(4, 5)), n(size=(3, 4, 5))
    r = _readout(rng, (3, 2, 5))
    yield _check_all_args("matmul", seed, [a3, b3], lambda x, y: _proj(T.matmul(x, y), r))
    yield _check_all_args("matmul_shared_left", seed, [n(size=(2, 4)), b3], lambda x, y: _proj(T.matmul(x, y), r))
    yield _check_all_args("batched_matmul", seed, [a3, b2], lambda x, y: _proj(T.batched_matmul(x, y), r))

    x, k, bias = n(size=(2, 3, 7, 6)), n(size=(4, 3, 3, 3)), n(size=(4,))
    r1 = _readout(rng, (2, 4, 7, 6))
    yield _check_all_args("conv2d", seed, [x, k, bias], lambda t, w, bb: _proj(T.conv2d(t, w, bb, 1, 1), r1))
    r2 = _readout(rng, (2, 4, 3, 2))
    yield _check_all_args("conv2d_stride2", seed, [x, k, bias], lambda t, w, bb: _proj(T.conv2d(t, w, bb, 2, 0), r2))

    p, q = n(size=(2, 3, 4)), n(size=(2, 3, 4))
    yield _check_all_args("mse_loss", seed, [p, q], T.mse_loss)
    # L1 is checked away from zero residual, where it is differentiable
    q = p + np.where(rng.random(p.shape) < 0.5, -1.0, 1.0) * rng.uniform(0.1, 1.0, p.shape)
    yield _check_all_args("l1_loss", seed, [p, q], T.l1_loss)


def _gc_cases(seed: int) -> Iterable[CheckResult]:
    rng = np.random.default_rng([seed, 29])
    agg = aggregator_matrix(ws_generate(8, 4, 0.9, seed))
    x, th = rng.normal(size=(5, 8, 3)), rng.normal(size=(3, 3))
    r = _readout(rng, (5, 8, 3))

    def gconv(xx, w):
        return _proj(graph_conv(NodeTensor(xx, (1, 8, 1, 5)), agg, w).data, r)

    yield _check_all_args("graph_conv", seed, [x, th], gconv)

    w2 = rng.normal(size=(3, 3))

    def block(xx, a, b):
        return _proj(resgcn_block(NodeTensor(xx, (1, 8, 1, 5)), agg, a, b).data, r)

    yield _check_all_args("resgcn_block", seed, [x, th, w2], block, eps=1e-3)

    cfg = GCStackConfig(f=4, blocks=2, degree=4, graph_seed=seed)
    agg = build_aggregator(cfg, 8)
    names = list(gc_param_shapes(cfg))
    weights = [rng.normal(size=s) * 0.7 for s in gc_param_shapes(cfg).values()]
    x = rng.normal(size=(1, 8, 3, 3))
    r = _readout(rng, x.shape)

    def stack(xx, *ws):
        return _proj(gc_stack_forward(xx, cfg, dict(zip(names, ws)), agg), r)

    yield _check_all_args("gc_stack", seed, [x, *weights], stack, eps=1e-3)


# ---------------------------------------------------------------- model cases

def tiny_deblur_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(task="deblur", channels=8, enc_blocks=1, dec_blocks=1,
                       gc=GCStackConfig(f=4, blocks=1, degree=4, graph_seed=seed))


def tiny_sr_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(task="sr", channels=8, sr_blocks=2, scale=2,
                       gc=GCStackConfig(f=4, blocks=1, degree=4, graph_seed=seed))


def check_model(name: str, cfg: ModelConfig, in_shape, seed: int, per_param: int = 3) -> CheckResult:
    from .trainer import init_params

    rng = np.random.default_rng([seed, 41])
    params = init_params(cfg, seed, dtype=np.float64)
    # nonzero biases so every parameter kind is exercised away from its init
    for pname, spec in param_shapes(cfg).items():
        if spec.kind == "bias":
            params[pname] = Tensor(rng.normal(scale=0.1, size=spec.shape), requires_grad=True)
    agg = model_aggregator(cfg)
    x = rng.uniform(0.0, 1.0, size=in_shape)
    out_shape = forward(Tensor(x), cfg, params, agg).shape
    r = _readout(rng, out_shape)

    worst, checked = 0.0, 0

    def wrt_input(t):
        return _proj(forward(t, cfg, params, agg), r)

    idx = rng.choice(x.size, min(x.size, 24), replace=False)
    worst = max(worst, grad_check(wrt_input, _t(x), eps=1e-3, indices=idx))
    checked += len(idx)
    for pname, p in params.items():
        def wrt_param(t, pname=pname):
            ps = dict(params)
            ps[pname] = t
            return _proj(forward(Tensor(x), cfg, ps, agg), r)

        idx = rng.choice(p.size, min(p.size, per_param), replace=False)
        worst = max(worst, grad_check(wrt_param, _t(p.data), eps=1e-3, indices=idx))
        checked += len(idx)
    return CheckResult(name, seed, worst, checked)


def _model_cases(seed: int) -> Iterable[CheckResult]:
    yield check_model("gcresnet_tiny", tiny_deblur_config(seed), (1, 3, 8, 8), seed)
    yield check_model("gcedsr_tiny", tiny_sr_config(seed), (1, 3, 6, 6), seed)


# ---------------------------------------------------------------- driver

def run_suite(seeds: Iterable[int] = range(5), ops: bool = True, models: bool = True) -> list[CheckResult]:
    results = []
    for seed in seeds:
        if ops:
            results.extend(_op_cases(seed))
            results.extend(_gc_cases(seed))
        if models:
            results.extend(_model_cases(seed))
    return results


def format_table(results: list[CheckResult]) -> str:
    """One row per check name with the worst error over seeds."""
    worst: dict[str, CheckResult] = {}
    for res in results:
        if res.name not in worst or res.max_rel_err > worst[res.name].max_rel_err:
            worst[res.name] = res
    seeds = sorted({r.seed for r in results})
    lines = [f"{'check':<22} {'max_rel_err':>12} {'seeds':>6}  status"]
    for name, res in worst.items():
        status = "ok" if res.ok else "FAIL"
        lines.append(f"{name:<22} {res.max_rel_err:>12.3e} {len(seeds):>6}  {status}")
    return "\n".join(lines) + "\n"


if __name__ == "__main__":  # pragma: no cover
    t0 = time.perf_counter()
    res = run_suite()
    print(format_table(res), end="")
    print(f"elapsed {time.perf_counter() - t0:.1f}s")
