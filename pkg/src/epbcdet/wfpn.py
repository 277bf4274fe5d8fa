"""Weighted bidirectional feature-pyramid fusion.

``build_wfpn`` derives the topology mechanically: start from the
bidirectional (top-down + bottom-up) pyramid, drop every node with a single
input edge, then add a skip edge from each level's input to its output node.
Fusion uses fast normalised weights relu(w_i) / (sum_j relu(w_j) + eps).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import functional as F
from .core.nn import Conv2d, ConvModule, Module, Upsample
from .core.tensor import Tensor
from .errors import ConfigError, ShapeError

FUSION_EPS = 1e-4

IDENTITY, UP, DOWN = "identity", "up", "down"


# ----- fusion operators ----------------------------------------------------------------


def normalized_weights(w: np.ndarray, eps: float = FUSION_EPS) -> np.ndarray:
    r = np.maximum(np.asarray(w, dtype=np.float64), 0.0)
    # fsum keeps the denominator independent of argument order
    return r / (math.fsum(r.tolist()) + eps)


def weighted_fuse(inputs: Sequence[Tensor], w: Tensor, eps: float = FUSION_EPS) -> Tensor:
    """sum_i w_hat_i * x_i over same-shaped inputs."""
    if not inputs:
        raise ShapeError("weighted_fuse needs at least one input")
    if eps <= 0:
        raise ConfigError("fusion eps must be positive")
    F.check_same_shape(list(inputs), "weighted_fuse")
    if w.shape != (len(inputs),):
        raise ShapeError(f"weighted_fuse: {len(inputs)} inputs but weights of shape {w.shape}")
    wd = w.data
    r = np.maximum(wd, 0.0)
    denom = math.fsum(r.tolist()) + eps
    wn = r / denom
    terms = np.stack([wi * x.data for wi, x in zip(wn, inputs)])
    # summing sorted terms makes the result exactly permutation invariant
    out = np.sort(terms, axis=0).sum(axis=0) if len(inputs) > 1 else terms[0]

    def backward(g):
        gx = [g * wi for wi in wn]
        gw = np.array([np.sum(g * (x.data - out)) / denom if wd[j] > 0 else 0.0
                       for j, x in enumerate(inputs)])
        return (*gx, gw)

    return Tensor.make(out, (*inputs, w), backward, "weighted_fuse")


def weighted_concat(inputs: Sequence[Tensor], w: Tensor, eps: float = FUSION_EPS,
                    normalize: bool = True) -> Tensor:
    """Channel concatenation of w_hat_i * x_i; spatial extents must agree.

    With ``normalize=False`` the raw weights scale the inputs directly.
    """
    if not inputs:
        raise ShapeError("weighted_concat needs at least one input")
    if w.shape != (len(inputs),):
        raise ShapeError(f"weighted_concat: {len(inputs)} inputs but weights of shape {w.shape}")
    ref = inputs[0].shape
    for t in inputs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"weighted_concat: spatial mismatch {ref} vs {t.shape}")
    if normalize:
        r = F.relu(w)
        wn = r / (F.sum(r) + eps)
    else:
        wn = w
    return F.concat_channels([x * wn[i] for i, x in enumerate(inputs)])


# ----- topology ------------------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    source: str
    resample: str = IDENTITY


@dataclass
class FusionNode:
    name: str
    level: int
    inputs: list[Edge]
    mode: str = "sum"


@dataclass
class FusionGraph:
    """Pyramid levels (coarse to fine) and fusion nodes in evaluation order."""

    levels: list[int]
    nodes: list[FusionNode] = field(default_factory=list)
    outputs: dict[int, str] = field(default_factory=dict)

    def node(self, name: str) -> FusionNode:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def in_degree(self) -> dict[str, int]:
        return {n.name: len(n.inputs) for n in self.nodes}

    def is_acyclic(self) -> bool:
        seen = {input_name(lvl) for lvl in self.levels}
        for n in self.nodes:
            if any(e.source not in seen for e in n.inputs):
                return False
            seen.add(n.name)
        return True


def input_name(level: int) -> str:
    return f"P{level}_in"


def build_wfpn(levels: int, first_level: int = 3, topdown_mode: str = "sum") -> FusionGraph:
    if levels < 1:
        raise ConfigError(f"WFPN needs at least one level, got {levels}")
    if topdown_mode not in ("sum", "concat"):
        raise ConfigError(f"unknown fusion mode {topdown_mode!r}")
    lv = list(range(first_level, first_level + levels))  # fine -> coarse
    graph = FusionGraph(levels=list(reversed(lv)))
    if levels == 1:
        graph.outputs[lv[0]] = input_name(lv[0])
        return graph

    # bidirectional pyramid: top-down then bottom-up, one node per level per pass
    nodes: list[FusionNode] = []
    td = {}
    for i in reversed(range(levels)):
        ins = [Edge(input_name(lv[i]))]
        if i < levels - 1:
            ins.append(Edge(td[i + 1], UP))
        td[i] = f"td{lv[i]}"
        nodes.append(FusionNode(td[i], lv[i], ins, topdown_mode))
    bu = {}
    for i in range(levels):
        ins = [Edge(td[i])]
        if i > 0:
            ins.append(Edge(bu[i - 1], DOWN))
        bu[i] = f"bu{lv[i]}"
        nodes.append(FusionNode(bu[i], lv[i], ins, "sum"))

    # rule 1: remove nodes with a single input edge, rewiring consumers
    alias: dict[str, str] = {}

    def resolve(name: str) -> str:
        while name in alias:
            name = alias[name]
        return name

    kept = []
    for n in nodes:
        n.inputs = [Edge(resolve(e.source), e.resample) for e in n.inputs]
        if len(n.inputs) == 1 and n.inputs[0].resample == IDENTITY:
            alias[n.name] = n.inputs[0].source
        else:
            kept.append(n)

    # rule 2: same-level input -> output skip edge
    out_of = {i: resolve(bu[i]) for i in range(levels)}
    for i in range(levels):
        node = next((n for n in kept if n.name == out_of[i]), None)
        if node is None:
            continue
        src = input_name(lv[i])
        if all(e.source != src for e in node.inputs):
            node.inputs.insert(0, Edge(src))

    # final names: level outputs become P{l}_out, the rest P{l}_td
    rename = {}
    for n in kept:
        is_out = n.name in out_of.values()
        rename[n.name] = f"P{n.level}_out" if is_out else f"P{n.level}_td"
    for n in kept:
        n.inputs = [Edge(rename.get(e.source, e.source), e.resample) for e in n.inputs]
        n.name = rename[n.name]
    graph.nodes = kept
    graph.outputs = {lv[i]: rename.get(out_of[i], out_of[i]) for i in range(levels)}
    return graph


# ----- parameterised evaluation -------------------------------------------------------------


class FusionNodeParams(Module):
    def __init__(self, node: FusionNode, edge_convs: dict[int, Conv2d], resamplers: dict[int, Module],
                 block: Module | None) -> None:
        super().__init__()
        self.spec = node
        self.w = Tensor(np.ones(len(node.inputs)), requires_grad=True)
        for k in range(len(node.inputs)):
            if k in resamplers:
                setattr(self, f"edge{k}_resample", resamplers[k])
            if k in edge_convs:
                setattr(self, f"edge{k}", _EdgeConv(edge_convs[k]))
        self.block = block

    def describe(self) -> str:
        return f"FusionNode({self.spec.name}, {self.spec.mode}, in={len(self.spec.inputs)})"


class _EdgeConv(Module):
    def __init__(self, conv: Conv2d) -> None:
        super().__init__()
        self.conv = conv

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)


UpFactory = Callable[[int], Module]
DownFactory = Callable[[int], Module]
BlockFactory = Callable[[int, int, FusionNode], Module]


def default_down(c: int, rng: np.random.Generator | None = None) -> Module:
    return ConvModule(c, c, 3, 2, act=False, rng=rng)


class WFPN(Module):
    """Learnable parameters for a :class:`FusionGraph`.

    ``channels`` maps pyramid level to width. Node blocks, when given, map a
    node's fused output to its level width.
    """

    def __init__(self, graph: FusionGraph, channels: dict[int, int], up: UpFactory | None = None,
                 down: DownFactory | None = None, block: BlockFactory | None = None,
                 eps: float = FUSION_EPS, rng: np.random.Generator | None = None,
                 normalize_concat: bool = True) -> None:
        super().__init__()
        self.graph, self.eps, self.normalize_concat = graph, eps, normalize_concat
        up = up or (lambda c: Upsample(2))
        down = down or (lambda c: default_down(c, rng))
        width = {input_name(lv): c for lv, c in channels.items()}
        self._node_params: list[FusionNodeParams] = []
        for idx, node in enumerate(graph.nodes):
            target = channels[node.level]
            resamplers, edge_convs, in_widths = {}, {}, []
            for k, e in enumerate(node.inputs):
                c = width[e.source]
                if e.resample == UP:
                    resamplers[k] = up(c)
                elif e.resample == DOWN:
                    resamplers[k] = down(c)
                if node.mode == "sum" and c != target:
                    edge_convs[k] = Conv2d(c, target, 1, bias=False, rng=rng)
                    c = target
                in_widths.append(c)
            fused = target if node.mode == "sum" else sum(in_widths)
            blk = block(fused, target, node) if block is not None else None
            width[node.name] = target if blk is not None else fused
            p = FusionNodeParams(node, edge_convs, resamplers, blk)
            setattr(self, f"node{idx}", p)
            self._node_params.append(p)
        self.widths = width

    def forward(self, features: dict[int, Tensor]) -> dict[int, Tensor]:
        return wfpn_forward(features, self.graph, self)


def wfpn_forward(features: dict[int, Tensor], graph: FusionGraph, params: WFPN) -> dict[int, Tensor]:
    values: dict[str, Tensor] = {}
    for lvl in graph.levels:
        if lvl not in features:
            raise ConfigError(f"WFPN: missing feature for level P{lvl}")
        values[input_name(lvl)] = features[lvl]
    for p in params._node_params:
        node = p.spec
        xs = []
        for k, e in enumerate(node.inputs):
            x = values[e.source]
            if e.resample != IDENTITY:
                x = getattr(p, f"edge{k}_resample")(x)
            conv = p.__dict__.get(f"edge{k}")
            if conv is not None:
                x = conv(x)
            xs.append(x)
        if node.mode == "sum":
            y = weighted_fuse(xs, p.w, params.eps)
        else:
            y = weighted_concat(xs, p.w, params.eps, params.normalize_concat)
        if p.block is not None:
            y = p.block(y)
        values[node.name] = y
    return {lvl: values[name] for lvl, name in graph.outputs.items()}
