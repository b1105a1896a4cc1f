"""Analytic cost formulas and the graph-walking MAC/parameter counter.

The analytic side evaluates the closed-form multiply-accumulate counts
of the four module families (separable, multibranch, multiscale
interactive, group multiscale); the counting side walks a built
:class:`~gmbinet.layers.LayerGraph` node by node.  Matching the two is
how the scale-invariance claim is checked.

Headline totals count convolution MACs only; the "FLOPs" figure equals
the MAC count by default (a x2 multiply+add convention is available via
``flops_factor=2``).
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .gmbi import GMBIBlock, GMBIConfig, MIBlock, MultiBranchBlock
from .layers import LayerGraph
from .tensor import Tensor

FAMILIES = ("dsconv", "multibranch", "mi", "gmbi")


@dataclass(frozen=True)
class CostQuery:
    k: int
    c: int
    h: int
    w: int
    n: int = 1
    family: str = "dsconv"

    def __post_init__(self):
        for name in ("k", "c", "h", "w", "n"):
            if getattr(self, name) < 1:
                raise ValueError(f"CostQuery.{name} must be positive")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family in ("gmbi",) and self.c % self.n:
            raise ValueError(f"channels {self.c} not divisible by scale dimension {self.n}")


def cost_dsconv(q):
    """Depthwise pass plus pointwise mix: k^2*c*h*w + c^2*h*w."""
    hw = q.h * q.w
    return q.k ** 2 * q.c * hw + q.c ** 2 * hw


def cost_multibranch(q):
    """n full separable branches plus a fusing pointwise convolution."""
    hw = q.h * q.w
    return q.n * (q.k ** 2 * q.c * hw + q.c ** 2 * hw) + q.c ** 2 * hw


def cost_mi(q):
    """n depthwise branches, per-channel cross-scale mixing, pointwise
    integration."""
    hw = q.h * q.w
    return q.n * (q.k ** 2 * q.c * hw) + q.c * (q.n * hw) + q.c ** 2 * hw


def cost_gmbi(q):
    """Group extraction keeps total width fixed, so the n-way split
    cancels: n*(k^2*(c/n)*h*w) + c^2*h*w == k^2*c*h*w + c^2*h*w."""
    if q.c % q.n:
        raise ValueError(f"channels {q.c} not divisible by scale dimension {q.n}")
    hw = q.h * q.w
    return q.n * (q.k ** 2 * (q.c // q.n) * hw) + q.c ** 2 * hw


_ANALYTIC = {
    "dsconv": cost_dsconv,
    "multibranch": cost_multibranch,
    "mi": cost_mi,
    "gmbi": cost_gmbi,
}


def analytic_cost(q):
    return _ANALYTIC[q.family](q)


def build_block_graph(q, seed=0, dtype=np.float32):
    """Executable single-block graph for a cost query, with bare
    convolutions so counted MACs match the formulas exactly."""
    rng = np.random.default_rng(seed)
    shape = (1, q.c, q.h, q.w)
    if q.family == "gmbi":
        cfg = GMBIConfig(channels=q.c, scale_dim=q.n, kernel=q.k)
        block = GMBIBlock(cfg, rng, dtype, normalize=False)
    elif q.family == "multibranch":
        block = MultiBranchBlock(q.c, q.n, rng, q.k, dtype)
    elif q.family == "mi":
        block = MIBlock(q.c, q.n, rng, q.k, dtype)
    else:
        cfg = GMBIConfig(channels=q.c, scale_dim=1, kernel=q.k, mode="single",
                         interaction="none")
        block = GMBIBlock(cfg, rng, dtype, normalize=False)
    return LayerGraph(block, shape)


@dataclass
class CostReport:
    input_shape: tuple
    macs: int
    params: int
    secondary_ops: int
    nodes: list = field(default_factory=list)
    analytic_macs: int | None = None

    @property
    def delta(self):
        """Relative difference of counted vs analytic MAC totals."""
        if not self.analytic_macs:
            return None
        return (self.macs - self.analytic_macs) / self.analytic_macs

    def flops(self, flops_factor=1):
        return self.macs * flops_factor


def count_graph(graph, analytic_macs=None):
    """Exact per-node multiply-accumulate and parameter totals."""
    nodes = graph.nodes()
    return CostReport(
        input_shape=graph.input_shape,
        macs=sum(n.macs for n in nodes),
        params=graph.total_params(),
        secondary_ops=sum(n.secondary_ops for n in nodes),
        nodes=nodes,
        analytic_macs=analytic_macs,
    )


def count_block(q, seed=0):
    """Counted-vs-analytic report for one module family."""
    graph = build_block_graph(q, seed)
    report = count_graph(graph, analytic_macs=analytic_cost(q))
    # residual add and interaction work are secondary ops, never MACs
    return report


@dataclass
class LatencyReport:
    mean_ms: float
    median_ms: float
    images_per_second: float
    raw_ms: list
    repeats: int
    warmup: int
    input_shape: tuple
    backend: str
    hardware: str
    threads: str


def bench_latency(graph, input_shape=None, repeats=10, warmup=3, seed=0):
    """Wall-clock forward latency on the host; informational only."""
    import os
    import platform
    from .backend import backend_name
    if repeats < 10:
        raise ValueError("repeats must be >= 10")
    shape = tuple(input_shape or graph.input_shape)
    rng = np.random.default_rng(seed)
    x = Tensor(rng.random(shape, dtype=np.float32))
    graph.eval()
    for _ in range(max(3, warmup)):
        graph.run(x)
    timings = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        graph.run(x)
        timings.append((time.perf_counter() - t0) * 1e3)
    mean_ms = float(np.mean(timings))
    return LatencyReport(
        mean_ms=mean_ms,
        median_ms=float(np.median(timings)),
        images_per_second=shape[0] * 1e3 / mean_ms,
        raw_ms=[float(t) for t in timings],
        repeats=repeats,
        warmup=max(3, warmup),
        input_shape=shape,
        backend=backend_name(),
        hardware=f"{platform.processor() or platform.machine()} / {platform.system()}",
        threads=os.environ.get("GMBI_THREADS", "default"),
    )


def cost_table(k, c, h, w, n_values):
    """Rows of analytic costs per family per scale dimension."""
    rows = []
    for n in n_values:
        row = {"n": n}
        for family in FAMILIES:
            if family == "gmbi" and c % n:
                row[family] = None
                continue
            q = CostQuery(k=k, c=c, h=h, w=w, n=n, family=family)
            row[family] = analytic_cost(q)
        rows.append(row)
    return rows
