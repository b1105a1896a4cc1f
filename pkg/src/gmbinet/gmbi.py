"""Group multiscale bidirectional interactive block.

The block splits its input into channel groups, runs dilated depthwise
extraction with forward guidance across scales, refines the results
top-down (backward enhancement), then fuses with a pointwise convolution
and a residual add.  Every ablation variant (branch/single extraction,
interaction kind, guidance/enhancement toggles) is a configuration, not
a separate class.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Conv2d, ConvBNReLU, Layer, LayerList, NodeCost
from .tensor import ConvSpec

INTERACTIONS = ("ewms", "sum", "mul", "concat", "none")
MODES = ("group", "branch", "single")


@dataclass
class GMBIConfig:
    channels: int
    scale_dim: int = 4
    kernel: int = 3
    interaction: str = "ewms"
    forward_guidance: bool = True
    backward_enhancement: bool = True
    mode: str = "group"
    # top-down enhancement consumes already-enhanced neighbours by default;
    # these flags select the raw-neighbour and as-printed index variants
    backward_raw: bool = False
    backward_literal: bool = False

    def __post_init__(self):
        if self.interaction not in INTERACTIONS:
            raise ValueError(f"unknown interaction {self.interaction!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.channels < 1 or self.scale_dim < 1:
            raise ValueError("channels and scale_dim must be positive")
        if self.mode == "group" and self.channels % self.scale_dim:
            raise ValueError(
                f"channels {self.channels} not divisible by scale_dim {self.scale_dim}")

    @property
    def n_groups(self):
        return 1 if self.mode == "single" else self.scale_dim

    @property
    def group_channels(self):
        if self.mode == "group":
            return self.channels // self.scale_dim
        return self.channels

    @property
    def interactive(self):
        return self.interaction != "none"


def ewms(guide, x):
    """Parameter-free gating: sigmoid(guide) * x + x."""
    return T.add(T.mul(T.sigmoid(guide), x), x)


def interact(guide, x, kind, reduce_conv=None):
    if kind == "ewms":
        return ewms(guide, x)
    if kind == "sum":
        return T.add(guide, x)
    if kind == "mul":
        return T.mul(guide, x)
    if kind == "concat":
        return reduce_conv(T.concat([guide, x]))
    raise ValueError(f"unknown interaction kind {kind!r}")


def forward_guidance(subsets, weights, cfg):
    """Scale-wise extraction where each group is steered by its
    predecessor's output before its own depthwise convolution."""
    if len(subsets) != cfg.n_groups:
        raise T.ShapeError(f"expected {cfg.n_groups} subsets, got {len(subsets)}")
    ys = []
    guided = cfg.interactive and cfg.forward_guidance
    for i, x in enumerate(subsets):
        if guided and i > 0:
            x = interact(ys[-1], x, cfg.interaction, weights.fg_reduce(i))
        ys.append(weights.group_op(i, x))
    return ys


def backward_enhancement(ys, cfg, weights=None):
    """Top-down refinement: larger-scale outputs gate smaller-scale ones."""
    n = len(ys)
    if n != cfg.n_groups:
        raise T.ShapeError(f"expected {cfg.n_groups} features, got {n}")
    if not (cfg.interactive and cfg.backward_enhancement) or n == 1:
        return list(ys)
    out = list(ys)
    if cfg.backward_literal:
        # as-printed indexing: scale i is gated by its own output over the
        # previous raw feature; the last scale passes through unchanged
        for i in range(1, n - 1):
            out[i] = interact(ys[i], ys[i - 1], cfg.interaction,
                              weights.be_reduce(i) if weights else None)
        return out
    for i in range(n - 2, -1, -1):
        guide = ys[i + 1] if cfg.backward_raw else out[i + 1]
        out[i] = interact(guide, ys[i], cfg.interaction,
                          weights.be_reduce(i) if weights else None)
    return out


class GMBIBlock(Layer):
    """The full block: split, guided extraction, enhancement, pointwise
    fusion, residual.  ``normalize=False`` drops norm/activation around
    the convolutions (used by exact-arithmetic tests and the analytic
    cost comparisons)."""

    def __init__(self, cfg, rng, dtype=np.float32, normalize=True):
        super().__init__()
        self.cfg = cfg
        self.normalize = normalize
        cg = cfg.group_channels
        k = cfg.kernel
        ops = LayerList()
        for i in range(cfg.n_groups):
            dilation = i + 1 if cfg.mode != "single" else 1
            if normalize:
                ops.append(ConvBNReLU(cg, cg, rng, k, dilation=dilation, groups=cg, dtype=dtype))
            else:
                pad = (k - 1) * dilation // 2
                ops.append(Conv2d(ConvSpec(cg, cg, k, 1, dilation, pad, groups=cg), rng, dtype))
        self.group_ops = ops
        c = cfg.channels
        if normalize:
            self.fusion = ConvBNReLU(c, c, rng, kernel=1, dtype=dtype)
        else:
            self.fusion = Conv2d(ConvSpec(c, c, 1), rng, dtype)
        if cfg.interaction == "concat":
            n_sites = cfg.n_groups - 1
            self.fg_reduces = LayerList(
                Conv2d(ConvSpec(2 * cg, cg, 1), rng, dtype)
                for _ in range(n_sites if cfg.forward_guidance else 0))
            self.be_reduces = LayerList(
                Conv2d(ConvSpec(2 * cg, cg, 1), rng, dtype)
                for _ in range(n_sites if cfg.backward_enhancement else 0))

    def group_op(self, i, x):
        return self.group_ops[i](x)

    def fg_reduce(self, i):
        return self.fg_reduces[i - 1] if self.cfg.interaction == "concat" else None

    def be_reduce(self, i):
        if self.cfg.interaction != "concat":
            return None
        return self.be_reduces[min(i, len(self.be_reduces)) - 1] if self.cfg.backward_literal \
            else self.be_reduces[i]

    def _subsets(self, x):
        cfg = self.cfg
        if cfg.mode == "group" and cfg.scale_dim > 1:
            return T.channel_split(x, cfg.scale_dim)
        if cfg.mode == "branch":
            return [x] * cfg.scale_dim
        return [x]

    def forward(self, x):
        cfg = self.cfg
        if x.shape[1] != cfg.channels:
            raise T.ShapeError(f"input channels {x.shape[1]} != configured {cfg.channels}")
        ys = forward_guidance(self._subsets(x), self, cfg)
        ens = backward_enhancement(ys, cfg, self)
        if cfg.mode == "group":
            merged = T.concat(ens) if len(ens) > 1 else ens[0]
        else:
            merged = ens[0]
            for y in ens[1:]:
                merged = T.add(merged, y)
        return T.add(x, self.fusion(merged))

    def count(self, in_shape, name=""):
        cfg = self.cfg
        n, c, h, w = in_shape
        cg = cfg.group_channels
        sub_shape = (n, cg, h, w)
        elems = n * cg * h * w
        nodes = []
        inter_cost = {"ewms": 3 * elems, "sum": elems, "mul": elems, "none": 0}
        for i in range(cfg.n_groups):
            if cfg.interactive and cfg.forward_guidance and i > 0:
                if cfg.interaction == "concat":
                    _, sub = self.fg_reduces[i - 1].count((n, 2 * cg, h, w), f"{name}fg{i}.")
                    nodes.extend(sub)
                else:
                    nodes.append(NodeCost(f"{name}fg{i}", "interact", 0,
                                          inter_cost[cfg.interaction], 0, sub_shape))
            _, sub = self.group_ops[i].count(sub_shape, f"{name}group{i}.")
            nodes.extend(sub)
        if cfg.interactive and cfg.backward_enhancement and cfg.n_groups > 1:
            for i in range(cfg.n_groups - 1):
                if cfg.interaction == "concat":
                    _, sub = self.be_reduces[i].count((n, 2 * cg, h, w), f"{name}be{i}.")
                    nodes.extend(sub)
                else:
                    nodes.append(NodeCost(f"{name}be{i}", "interact", 0,
                                          inter_cost[cfg.interaction], 0, sub_shape))
        if cfg.mode != "group" and cfg.n_groups > 1:
            nodes.append(NodeCost(f"{name}merge", "sum", 0,
                                  (cfg.n_groups - 1) * elems, 0, sub_shape))
        _, sub = self.fusion.count(in_shape, f"{name}fuse.")
        nodes.extend(sub)
        nodes.append(NodeCost(f"{name}residual", "add", 0, int(np.prod(in_shape)), 0, in_shape))
        return in_shape, nodes


# the block doubles as the parameter container the interaction helpers expect
GMBIWeights = GMBIBlock


class MultiBranchBlock(Layer):
    """Reference multibranch extractor: n full-width separable branches
    (depthwise then pointwise), summed and fused by one more pointwise
    convolution.  Used for analytic cost comparison."""

    def __init__(self, channels, scale_dim, rng, kernel=3, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.scale_dim = scale_dim
        c, k = channels, kernel
        branches = LayerList()
        for i in range(scale_dim):
            dilation = i + 1
            pad = (k - 1) * dilation // 2
            branch = LayerList([
                Conv2d(ConvSpec(c, c, k, 1, dilation, pad, groups=c), rng, dtype),
                Conv2d(ConvSpec(c, c, 1), rng, dtype),
            ])
            branches.append(branch)
        self.branches = branches
        self.fusion = Conv2d(ConvSpec(c, c, 1), rng, dtype)

    def forward(self, x):
        outs = [branch[1](branch[0](x)) for branch in self.branches]
        merged = outs[0]
        for y in outs[1:]:
            merged = T.add(merged, y)
        return self.fusion(merged)

    def count(self, in_shape, name=""):
        nodes = []
        for i, branch in enumerate(self.branches):
            mid, sub = branch[0].count(in_shape, f"{name}branch{i}.dw.")
            nodes.extend(sub)
            _, sub = branch[1].count(mid, f"{name}branch{i}.pw.")
            nodes.extend(sub)
        elems = int(np.prod(in_shape))
        if len(self.branches) > 1:
            nodes.append(NodeCost(f"{name}merge", "sum", 0,
                                  (len(self.branches) - 1) * elems, 0, in_shape))
        out_shape, sub = self.fusion.count(in_shape, f"{name}fuse.")
        nodes.extend(sub)
        return out_shape, nodes


class MIBlock(Layer):
    """Multiscale-interactive reference: n full-width depthwise branches,
    per-channel cross-scale mixing (grouped pointwise over the stacked
    scales), then a pointwise integration."""

    def __init__(self, channels, scale_dim, rng, kernel=3, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.scale_dim = scale_dim
        c, k = channels, kernel
        branches = LayerList()
        for i in range(scale_dim):
            dilation = i + 1
            pad = (k - 1) * dilation // 2
            branches.append(Conv2d(ConvSpec(c, c, k, 1, dilation, pad, groups=c), rng, dtype))
        self.branches = branches
        # stacked scales regrouped so each original channel owns its n maps
        self.mix = Conv2d(ConvSpec(scale_dim * c, c, 1, groups=c), rng, dtype)
        self.fusion = Conv2d(ConvSpec(c, c, 1), rng, dtype)
        perm = np.arange(scale_dim * c).reshape(scale_dim, c).T.reshape(-1)
        self._perm = perm

    def forward(self, x):
        outs = [branch(x) for branch in self.branches]
        stacked = T.concat(outs) if len(outs) > 1 else outs[0]
        regrouped = T.channel_permute(stacked, self._perm)
        return self.fusion(self.mix(regrouped))

    def count(self, in_shape, name=""):
        n, c, h, w = in_shape
        nodes = []
        for i, branch in enumerate(self.branches):
            _, sub = branch.count(in_shape, f"{name}branch{i}.")
            nodes.extend(sub)
        stacked = (n, self.scale_dim * c, h, w)
        mid, sub = self.mix.count(stacked, f"{name}mix.")
        nodes.extend(sub)
        out_shape, sub = self.fusion.count(mid, f"{name}fuse.")
        nodes.extend(sub)
        return out_shape, nodes
