"""Five-stage backbone, encoder-decoder saliency network, and the
classification variant.

Stage layout: a stride-2 3x3 stem to 16 channels, then four stages of
(stride-2 separable downsample, stack of multiscale blocks) at 32, 64,
96 and 128 channels with 3, 4, 6 and 3 blocks.  Every stage halves the
spatial resolution exactly once.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gmbi import GMBIBlock, GMBIConfig
from .layers import (Conv2d, ConvBNReLU, DSConv, Layer, LayerGraph, LayerList,
                     NodeCost, Sequential)
from .tensor import ConvSpec, ShapeError

STAGE_CHANNELS = (16, 32, 64, 96, 128)
STAGE_REPEATS = (3, 4, 6, 3)
NUM_STAGES = 5
IN_CHANNELS = 3


@dataclass(frozen=True)
class StageConfig:
    index: int
    kind: str           # "stem" or "gmbi"
    repeats: int
    out_channels: int
    divisor: int        # output resolution divisor relative to the input

    def __post_init__(self):
        if not 1 <= self.index <= NUM_STAGES:
            raise ValueError(f"stage index {self.index} out of range 1..{NUM_STAGES}")
        if self.divisor != 2 ** self.index:
            raise ValueError("each stage halves resolution exactly once")


def stage_plan(scale_dim=4, width_mult=1.0):
    """Channel/repeat table after width scaling; widths of block stages are
    rounded to multiples of ``scale_dim`` so group splitting stays legal."""
    if width_mult <= 0:
        raise ValueError("width multiplier must be positive")
    plan = []
    for i, base in enumerate(STAGE_CHANNELS, start=1):
        width = max(1, round(base * width_mult))
        if i > 1:
            width = max(scale_dim, round(width / scale_dim) * scale_dim)
        repeats = 1 if i == 1 else STAGE_REPEATS[i - 2]
        kind = "stem" if i == 1 else "gmbi"
        plan.append(StageConfig(i, kind, repeats, width, 2 ** i))
    return plan


class Backbone(Layer):
    def __init__(self, rng, scale_dim=4, width_mult=1.0, dtype=np.float32, **block_kwargs):
        super().__init__()
        plan = stage_plan(scale_dim, width_mult)
        self.plan = plan
        self.stem = ConvBNReLU(IN_CHANNELS, plan[0].out_channels, rng, 3, stride=2, dtype=dtype)
        stages = LayerList()
        prev = plan[0].out_channels
        for stage in plan[1:]:
            blocks = [DSConv(prev, stage.out_channels, rng, stride=2, dtype=dtype)]
            for _ in range(stage.repeats):
                cfg = GMBIConfig(channels=stage.out_channels, scale_dim=scale_dim, **block_kwargs)
                blocks.append(GMBIBlock(cfg, rng, dtype))
            stages.append(Sequential(blocks))
            prev = stage.out_channels
        self.stages = stages

    @property
    def channels(self):
        return tuple(s.out_channels for s in self.plan)

    def forward(self, x):
        feats = [self.stem(x)]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        return feats

    def count(self, in_shape, name=""):
        shape, nodes = self.stem.count(in_shape, name + "stem.")
        for i, stage in enumerate(self.stages):
            shape, sub = stage.count(shape, f"{name}stage{i + 2}.")
            nodes.extend(sub)
        return shape, nodes


@dataclass
class DeepSupervisionOutputs:
    """Final saliency map at input resolution plus one side map per
    decoder stage (index 0 is the shallowest stage)."""
    final: T.Tensor
    sides: list


class Decoder(Layer):
    def __init__(self, channels, rng, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.adjust5 = DSConv(channels[-1], channels[-1], rng, dtype=dtype)
        # stage i consumes the upsampled deeper feature at C_{i+1} channels
        self.adjusts = LayerList(
            DSConv(channels[i + 1], channels[i], rng, dtype=dtype)
            for i in range(len(channels) - 1))
        self.heads = LayerList(
            Conv2d(ConvSpec(c, 1, 1, bias=False), rng, dtype) for c in channels)

    def forward(self, feats):
        d = self.adjust5(feats[-1])
        decoded = [d]
        for i in range(len(self.channels) - 2, -1, -1):
            up = T.bilinear_upsample(decoded[-1], 2)
            d = T.add(feats[i], self.adjusts[i](up))
            decoded.append(d)
        decoded.reverse()
        sides = [T.sigmoid(self.heads[i](decoded[i])) for i in range(len(decoded))]
        final = T.bilinear_upsample(sides[0], 2)
        return DeepSupervisionOutputs(final=final, sides=sides)

    def count(self, feat_shapes, name=""):
        nodes = []
        shape, sub = self.adjust5.count(feat_shapes[-1], name + "adjust5.")
        nodes.extend(sub)
        dec_shapes = [shape]
        for i in range(len(self.channels) - 2, -1, -1):
            n, c, h, w = dec_shapes[-1]
            up_shape = (n, c, 2 * h, 2 * w)
            nodes.append(NodeCost(f"{name}up{i + 1}", "upsample", 0,
                                  4 * int(np.prod(up_shape)), 0, up_shape))
            shape, sub = self.adjusts[i].count(up_shape, f"{name}adjust{i + 1}.")
            nodes.extend(sub)
            nodes.append(NodeCost(f"{name}skip{i + 1}", "add", 0,
                                  int(np.prod(shape)), 0, shape))
            dec_shapes.append(shape)
        dec_shapes.reverse()
        for i, shape in enumerate(dec_shapes):
            head_shape, sub = self.heads[i].count(shape, f"{name}head{i + 1}.")
            nodes.extend(sub)
            nodes.append(NodeCost(f"{name}head{i + 1}.sigmoid", "act", 0,
                                  int(np.prod(head_shape)), 0, head_shape))
        n, c, h, w = dec_shapes[0]
        final_shape = (n, 1, 2 * h, 2 * w)
        nodes.append(NodeCost(f"{name}final_up", "upsample", 0,
                              4 * int(np.prod(final_shape)), 0, final_shape))
        return final_shape, nodes


class GMBINet(Layer):
    def __init__(self, rng, scale_dim=4, width_mult=1.0, dtype=np.float32, **block_kwargs):
        super().__init__()
        self.backbone = Backbone(rng, scale_dim, width_mult, dtype, **block_kwargs)
        self.decoder = Decoder(self.backbone.channels, rng, dtype)

    def forward(self, x):
        return self.decoder(self.backbone(x))

    def encoder_shapes(self, in_shape):
        n, c, h, w = in_shape
        shapes = []
        for i, ch in enumerate(self.backbone.channels, start=1):
            shapes.append((n, ch, h // 2 ** i, w // 2 ** i))
        return shapes

    def count(self, in_shape, name=""):
        _, nodes = self.backbone.count(in_shape, name + "encoder.")
        out_shape, sub = self.decoder.count(self.encoder_shapes(in_shape), name + "decoder.")
        nodes.extend(sub)
        return out_shape, nodes


class Classifier(Layer):
    def __init__(self, num_classes, rng, scale_dim=4, width_mult=1.0,
                 dtype=np.float32, **block_kwargs):
        super().__init__()
        if num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        self.num_classes = num_classes
        self.backbone = Backbone(rng, scale_dim, width_mult, dtype, **block_kwargs)
        self.head = Conv2d(ConvSpec(self.backbone.channels[-1], num_classes, 1, bias=True),
                           rng, dtype)

    def forward(self, x):
        pooled = T.global_avg_pool(self.backbone(x)[-1])
        return self.head(pooled)

    def count(self, in_shape, name=""):
        shape, nodes = self.backbone.count(in_shape, name + "encoder.")
        pooled = (shape[0], shape[1], 1, 1)
        nodes.append(NodeCost(name + "gap", "pool", 0, int(np.prod(shape)), 0, pooled))
        out_shape, sub = self.head.count(pooled, name + "head.")
        nodes.extend(sub)
        return out_shape, nodes


# ---------------------------------------------------------------------------
# builders and the inference entry points


def _rng(seed):
    return np.random.default_rng(seed)


def build_backbone(scale_dim=4, width_mult=1.0, seed=0, input_size=512,
                   dtype=np.float32, **block_kwargs):
    net = Backbone(_rng(seed), scale_dim, width_mult, dtype, **block_kwargs)
    return LayerGraph(net, (1, IN_CHANNELS, input_size, input_size))


def build_gmbinet(scale_dim=4, width_mult=1.0, seed=0, input_size=512,
                  dtype=np.float32, **block_kwargs):
    net = GMBINet(_rng(seed), scale_dim, width_mult, dtype, **block_kwargs)
    return LayerGraph(net, (1, IN_CHANNELS, input_size, input_size))


def build_classifier(num_classes, scale_dim=4, width_mult=1.0, seed=0,
                     input_size=512, dtype=np.float32, **block_kwargs):
    net = Classifier(num_classes, _rng(seed), scale_dim, width_mult, dtype, **block_kwargs)
    return LayerGraph(net, (1, IN_CHANNELS, input_size, input_size))


def _require_divisible(h, w):
    div = 2 ** NUM_STAGES
    if h % div or w % div:
        pad_h = (div - h % div) % div
        pad_w = (div - w % div) % div
        raise ShapeError(
            f"input {h}x{w} not divisible by {div}; pad by ({pad_h}, {pad_w}) "
            "or resize before encoding")


def encode(image, graph):
    """Run the encoder half, returning the five stage features."""
    net = graph.root
    backbone = net if isinstance(net, Backbone) else net.backbone
    _require_divisible(image.shape[2], image.shape[3])
    return backbone(image)


def decode(feats, graph):
    """Run the decoder half on encoder features."""
    return graph.root.decoder(feats)


def predict(image, graph, size=None):
    """Full-resolution saliency inference: resize to the working
    resolution, run the network, resize the final map back."""
    if image.data.size == 0:
        raise ShapeError("empty image")
    n, c, h, w = image.shape
    if size is None:
        size = graph.input_shape[2]
    net_in = image if (h, w) == (size, size) else T.bilinear_resize(image, size, size)
    out = graph.run(net_in)
    final = out.final
    if final.shape[2:] != (h, w):
        final = T.bilinear_resize(final, h, w)
    return final


def logits_matrix(logits):
    """Flatten classifier output ``(n, classes, 1, 1)`` to ``(n, classes)``."""
    return logits.data.reshape(logits.shape[0], logits.shape[1])
