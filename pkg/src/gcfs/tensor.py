"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record a backward closure and their parents; :func:`backward`
orders those records topologically (the tape), runs them once in reverse and
then discards them.

Compute precision is float32. Gradient checks run in float64 by building the
input tensors with ``dtype=np.float64``; every op preserves its input dtype.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "tensor",
    "no_grad",
    "conv2d",
    "relu",
    "matmul",
    "batched_matmul",
    "reshape",
    "permute",
    "subpixel_upsample",
    "subpixel_downsample",
    "add",
    "sub",
    "scale",
    "mul",
    "tsum",
    "mse_loss",
    "l1_loss",
    "backward",
    "grad_check",
]

_GRAD_ENABLED = True
# when not None, relu/l1 append their sign patterns here (finite-difference kink detection)
_KINK_PROBE: list | None = None


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """n-dimensional real array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None and not isinstance(data, (np.ndarray, np.generic)):
            dtype = np.float32
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def precision(self) -> int:
        return 64 if self.data.dtype == np.float64 else 32

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, precision={self.precision}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def _record_kinks():
    global _KINK_PROBE
    prev = _KINK_PROBE
    _KINK_PROBE = []
    try:
        yield _KINK_PROBE
    finally:
        _KINK_PROBE = prev


def _result(data: np.ndarray, parents: Iterable[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out.op = op
    return out


def _check_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        axes = [i for i, (p, q) in enumerate(zip(a.shape, b.shape)) if p != q]
        if len(a.shape) != len(b.shape):
            axes = ["rank"]
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ on axes {axes}")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the subgradient at 0 is 0."""
    mask = x.data > 0
    if _KINK_PROBE is not None:
        _KINK_PROBE.append(mask)
    return _result(np.maximum(x.data, 0), (x,),
                   lambda g: (g * mask,), "relu")


def tsum(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                   lambda g: (np.broadcast_to(g, shape).astype(g.dtype),), "sum")


# ---------------------------------------------------------------- views

def reshape(x: Tensor, newshape: Sequence[int]) -> Tensor:
    newshape = tuple(int(s) for s in newshape)
    if int(np.prod(newshape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} ({x.size} elements) as {newshape}")
    old = x.shape
    return _result(x.data.reshape(newshape), (x,), lambda g: (g.reshape(old),), "reshape")


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of {x.data.ndim} axes")
    inv = tuple(np.argsort(axes))
    return _result(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (np.ascontiguousarray(g.transpose(inv)),), "permute")


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    b, c, h, w = a.shape
    out = a.reshape(b, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out).reshape(b, c // (r * r), h * r, w * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    b, c, h, w = a.shape
    out = a.reshape(b, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out).reshape(b, c * r * r, h // r, w // r)


def subpixel_upsample(x: Tensor, r: int) -> Tensor:
    """Rearrange ``[B, C*r*r, H, W]`` into ``[B, C, r*H, r*W]``.

    Channel ``c*r*r + i*r + j`` fills spatial offset ``(i, j)`` of each r-by-r block.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"subpixel_upsample expects a 4-D tensor, got {x.shape}")
    if r < 1 or x.shape[1] % (r * r):
        raise ShapeError(f"subpixel_upsample: channel count {x.shape[1]} not divisible by r^2={r * r}")
    if r == 1:
        return _result(x.data.copy(), (x,), lambda g: (g,), "subpixel")
    return _result(_shuffle(x.data, r), (x,), lambda g: (_unshuffle(g, r),), "subpixel")


def subpixel_downsample(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`subpixel_upsample`."""
    if x.data.ndim != 4 or x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"subpixel_downsample: spatial dims of {x.shape} not divisible by {r}")
    return _result(_unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),), "unshuffle")


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with an optional shared (2-D) operand on either side.

    Accepted shapes: ``[P,m,k] @ [k,n]``, ``[P,m,k] @ [P,k,n]``, ``[m,k] @ [P,k,n]``
    and ``[m,k] @ [k,n]``.
    """
    ad, bd = a.data, b.data
    if ad.ndim not in (2, 3) or bd.ndim not in (2, 3):
        raise ShapeError(f"matmul: operands must be 2-D or 3-D, got {a.shape} and {b.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    if ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ShapeError(f"matmul: batch dimensions differ ({a.shape} @ {b.shape})")

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        if ad.ndim == 2 and ga.ndim == 3:
            ga = ga.sum(axis=0)
        if bd.ndim == 2 and gb.ndim == 3:
            gb = gb.sum(axis=0)
        return ga, gb

    return _result(ad @ bd, (a, b), bw, "matmul")


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """Per-batch product of ``a [P,m,k]`` with ``b [k,n]`` or ``b [P,k,n]``."""
    if a.data.ndim != 3:
        raise ShapeError(f"batched_matmul: left operand must be [P,m,k], got {a.shape}")
    return matmul(a, b)


def _im2col(xt: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Columns ``[C, kh, kw, B, Ho, Wo]`` from a padded channel-major ``[C, B, Hp, Wp]``."""
    c, b = xt.shape[:2]
    cols = np.empty((c, kh, kw, b, ho, wo), dtype=xt.dtype)
    he = (ho - 1) * stride + 1
    we = (wo - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i : i + he : stride, j : j + we : stride]
    return cols.reshape(c * kh * kw, b * ho * wo)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding and a per-channel bias."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {kernel.shape}")
    b, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv2d: input channels (axis 1) {cin} != kernel input channels (axis 1) {kcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel spatial size must be odd, got {kh}x{kw} (axes 2,3)")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},) (axis 0)")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w} (axes 2,3)")

    hp, wp = h + 2 * padding, w + 2 * padding
    xt = np.zeros((cin, b, hp, wp), dtype=x.dtype)
    xt[:, :, padding : padding + h, padding : padding + w] = x.data.transpose(1, 0, 2, 3)
    cols = _im2col(xt, kh, kw, stride, ho, wo)
    wmat = kernel.data.reshape(cout, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(cout, b, ho, wo).transpose(1, 0, 2, 3))

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
        gk = (gt @ cols.T).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gt).reshape(cin, kh, kw, b, ho, wo)
            gxt = np.zeros((cin, b, hp, wp), dtype=g.dtype)
            he = (ho - 1) * stride + 1
            we = (wo - 1) * stride + 1
            for i in range(kh):
                for j in range(kw):
                    gxt[:, :, i : i + he : stride, j : j + we : stride] += gcols[:, i, j]
            gx = np.ascontiguousarray(gxt[:, :, padding : padding + h, padding : padding + w].transpose(1, 0, 2, 3))
        if bias is None:
            return gx, gk
        return gx, gk, gt.sum(axis=1)

    return _result(out, parents, bw, "conv2d")


# ---------------------------------------------------------------- losses

def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared difference; ``target`` is treated as a constant."""
    _check_same_shape(pred, target, "mse_loss")
    diff = pred.data - target.data
    n = diff.size
    val = np.asarray(np.mean(diff * diff), dtype=pred.dtype)
    two_n = pred.dtype.type(2.0 / n)

    def bw(g):
        gd = g * two_n * diff
        return gd, -gd

    return _result(val, (pred, target), bw, "mse")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference; subgradient 0 at ties."""
    _check_same_shape(pred, target, "l1_loss")
    diff = pred.data - target.data
    sign = np.sign(diff)
    if _KINK_PROBE is not None:
        _KINK_PROBE.append(sign)
    n = diff.size
    val = np.asarray(np.mean(np.abs(diff)), dtype=pred.dtype)
    inv_n = pred.dtype.type(1.0 / n)

    def bw(g):
        gd = g * inv_n * sign
        return gd, -gd

    return _result(val, (pred, target), bw, "l1")


# ---------------------------------------------------------------- backward

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate ``dloss/dleaf`` into ``.grad`` of every grad-requiring leaf.

    The recorded graph is consumed: intermediate nodes lose their parents, so
    calling this twice on the same loss raises.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("backward: loss is detached (no recorded graph and no grad-requiring leaf)")
    if loss.is_leaf:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
        return

    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node.is_leaf:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            node._parents, node._backward = (), None
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if pg.dtype != p.data.dtype:
                pg = pg.astype(p.data.dtype)
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
        node._parents, node._backward = (), None
        node.requires_grad = False


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-4,
               indices: Sequence[int] | None = None, max_refine: int = 4) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``f`` maps ``x`` to a scalar tensor and must be deterministic. The error per
    element is ``|a - n| / max(|a|, |n|, 1e-8)``. When a perturbation flips
    the sign pattern of a ReLU or an L1 residual, the difference quotient
    straddles a kink; ``eps`` is then shrunk tenfold, up to ``max_refine`` times.

    ``indices`` restricts the check to the given flat element positions.
    """
    if x.dtype != np.float64:
        raise TypeError("grad_check requires a float64 tensor")
    x.requires_grad = True
    x.grad = None
    loss = f(x)
    backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None

    flat = x.data.reshape(-1)
    ga = analytic.reshape(-1)
    idx = range(flat.size) if indices is None else indices

    def probe() -> tuple[float, list]:
        with no_grad(), _record_kinks() as masks:
            val = float(f(x).data)
        return val, masks

    with no_grad():
        _, base_masks = probe()

    worst = 0.0
    for i in idx:
        orig = flat[i]
        h = eps
        for _ in range(max_refine + 1):
            flat[i] = orig + h
            fp, mp = probe()
            flat[i] = orig - h
            fm, mm = probe()
            flat[i] = orig
            crossed = any(not np.array_equal(a, b) for a, b in zip(base_masks, mp)) or any(
                not np.array_equal(a, b) for a, b in zip(base_masks, mm))
            if not crossed:
                break
            h /= 10.0
        num = (fp - fm) / (2.0 * h)
        a = float(ga[i])
        err = abs(a - num) / max(abs(a), abs(num), 1e-8)
        worst = max(worst, err)
    return worst
