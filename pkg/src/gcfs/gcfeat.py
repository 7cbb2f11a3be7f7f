"""Graph convolution over CNN feature channels.

Every channel of a ``[B, C, H, W]`` feature map is a node of a pre-generated
graph. Each pixel carries one graph signal over those ``C`` nodes, with ``F``
features per node (``F = 1`` straight out of the CNN). All pixels share the
same aggregator and the same weight matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .wsgraph import Aggregator, aggregator_matrix, ws_generate

__all__ = [
    "NodeTensor",
    "GCStackConfig",
    "fmap_to_nodes",
    "nodes_to_fmap",
    "graph_conv",
    "resgcn_block",
    "gc_stack_forward",
    "gc_param_shapes",
    "build_aggregator",
    "MAX_RESGCN_BLOCKS",
]

MAX_RESGCN_BLOCKS = 10


@dataclass
class NodeTensor:
    data: Tensor  # [positions, nodes, features]
    origin_shape: tuple

    @property
    def positions(self) -> int:
        return self.data.shape[0]

    @property
    def nodes(self) -> int:
        return self.data.shape[1]

    @property
    def features(self) -> int:
        return self.data.shape[2]


@dataclass
class GCStackConfig:
    """Graph-convolution stack inserted between encoder and decoder.

    ``lift_project=False`` drops the 1->F and F->1 graph convolutions and runs
    the ResGCN blocks at width 1; with ``blocks=0`` too the stack is the
    identity map.
    """

    f: int = 8
    blocks: int = 2
    degree: int = 4
    rho: float = 0.9
    graph_seed: int = 0
    lift_project: bool = True

    def __post_init__(self):
        if self.degree % 2:
            raise ValueError(f"graph degree must be even, got {self.degree}")
        if not 0 <= self.blocks <= MAX_RESGCN_BLOCKS:
            raise ValueError(f"ResGCN block count must be in [0, {MAX_RESGCN_BLOCKS}], got {self.blocks}")
        if self.f < 1:
            raise ValueError("graph feature width f must be >= 1")

    @property
    def width(self) -> int:
        return self.f if self.lift_project else 1

    @property
    def is_identity(self) -> bool:
        return self.blocks == 0 and not self.lift_project


def build_aggregator(cfg: GCStackConfig, nodes: int) -> Aggregator:
    return aggregator_matrix(ws_generate(nodes, cfg.degree, cfg.rho, cfg.graph_seed))


def fmap_to_nodes(x: Tensor) -> NodeTensor:
    b, c, h, w = x.shape
    data = T.reshape(T.permute(x, (0, 2, 3, 1)), (b * h * w, c, 1))
    return NodeTensor(data, (b, c, h, w))


def nodes_to_fmap(nt: NodeTensor) -> Tensor:
    if nt.features != 1:
        raise ValueError(f"nodes_to_fmap needs a single graph feature, got F={nt.features}; project first")
    b, c, h, w = nt.origin_shape
    return T.permute(T.reshape(nt.data, (b, h, w, c)), (0, 3, 1, 2))


def graph_conv(nt: NodeTensor, agg: Aggregator, theta: Tensor) -> NodeTensor:
    """``out[p] = T @ X[p] @ theta`` for every position ``p``; no bias."""
    if agg.n != nt.nodes:
        raise ValueError(f"graph has {agg.n} nodes but the feature map has {nt.nodes} channels")
    if theta.data.ndim != 2 or theta.shape[0] != nt.features:
        raise ValueError(f"theta shape {theta.shape} does not accept {nt.features} input features")
    mixed = T.matmul(agg.as_tensor(nt.data.dtype), nt.data)
    return NodeTensor(T.batched_matmul(mixed, theta), nt.origin_shape)


def resgcn_block(nt: NodeTensor, agg: Aggregator, w1: Tensor, w2: Tensor) -> NodeTensor:
    if not (w1.shape[0] == w2.shape[1] == nt.features):
        raise ValueError(
            f"residual GC block needs w1 f_in == w2 f_out == {nt.features}, got {w1.shape} and {w2.shape}")
    h = graph_conv(nt, agg, w1)
    h = NodeTensor(T.relu(h.data), h.origin_shape)
    h = graph_conv(h, agg, w2)
    return NodeTensor(T.add(h.data, nt.data), nt.origin_shape)


def gc_param_shapes(cfg: GCStackConfig, prefix: str = "gc") -> dict[str, tuple[int, int]]:
    """Names and shapes of the stack's weight matrices, in forward order."""
    f = cfg.width
    shapes: dict[str, tuple[int, int]] = {}
    if cfg.lift_project:
        shapes[f"{prefix}.lift"] = (1, f)
    for i in range(cfg.blocks):
        shapes[f"{prefix}.block{i}.w1"] = (f, f)
        shapes[f"{prefix}.block{i}.w2"] = (f, f)
    if cfg.lift_project:
        shapes[f"{prefix}.project"] = (f, 1)
    return shapes


def gc_stack_forward(x: Tensor, cfg: GCStackConfig, weights: dict, agg: Aggregator,
                     prefix: str = "gc") -> Tensor:
    """Lift, ResGCN blocks and projection applied to a ``[B, C, H, W]`` map."""
    if cfg.is_identity:
        return x
    if x.shape[1] != agg.n:
        raise ValueError(f"feature map has {x.shape[1]} channels but the graph has {agg.n} nodes")
    nt = fmap_to_nodes(x)
    if cfg.lift_project:
        nt = graph_conv(nt, agg, weights[f"{prefix}.lift"])
    for i in range(cfg.blocks):
        nt = resgcn_block(nt, agg, weights[f"{prefix}.block{i}.w1"], weights[f"{prefix}.block{i}.w2"])
    if cfg.lift_project:
        nt = graph_conv(nt, agg, weights[f"{prefix}.project"])
    return nodes_to_fmap(nt)


def permute_nodes(data: np.ndarray, perm) -> np.ndarray:
    """Reorder axis 1 of ``[P, C, F]`` so node ``i`` moves to slot ``perm[i]``."""
    out = np.empty_like(data)
    out[:, np.asarray(perm)] = data
    return out
