"""Layer primitives, the layer graph, and the checkpoint container.

Layers hold parameters as :class:`~gmbinet.tensor.Tensor` objects and
register children/parameters automatically on attribute assignment.
Each layer knows how to execute (``forward``) and how to cost itself
(``count``), so the same graph backs both inference and MAC/parameter
accounting.
"""

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ConvSpec, Tensor


@dataclass
class NodeCost:
    """Per-node cost entry: headline MACs are convolution MACs only;
    elementwise/normalization/interpolation work is tallied as
    ``secondary_ops``."""
    name: str
    kind: str
    macs: int
    secondary_ops: int
    params: int
    out_shape: tuple


class Layer:
    def __init__(self):
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_params", {})
        self.training = True

    def __setattr__(self, name, value):
        if isinstance(value, Layer):
            self._children[name] = value
        elif isinstance(value, Tensor):
            self._params[name] = value
        object.__setattr__(self, name, value)

    def children(self):
        return self._children.items()

    def named_params(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_params(prefix + name + ".")

    def named_buffers(self, prefix=""):
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def params(self):
        return [p for _, p in self.named_params()]

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children.items():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        raise NotImplementedError

    def count(self, in_shape, name=""):
        """Return ``(out_shape, [NodeCost])`` for the given input shape."""
        raise NotImplementedError


class LayerList(Layer):
    def __init__(self, layers=()):
        super().__init__()
        self._list = []
        for layer in layers:
            self.append(layer)

    def append(self, layer):
        self._children[str(len(self._list))] = layer
        self._list.append(layer)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Sequential(LayerList):
    def forward(self, x):
        for layer in self._list:
            x = layer(x)
        return x

    def count(self, in_shape, name=""):
        nodes = []
        for i, layer in enumerate(self._list):
            in_shape, sub = layer.count(in_shape, f"{name}{i}.")
            nodes.extend(sub)
        return in_shape, nodes


def kaiming_weights(rng, spec, dtype=np.float32):
    """Fan-in scaled normal initialization for a convolution kernel."""
    cg = spec.in_channels // spec.groups
    fan_in = cg * spec.kernel * spec.kernel
    std = np.sqrt(2.0 / fan_in)
    shape = (spec.out_channels, cg, spec.kernel, spec.kernel)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv2d(Layer):
    def __init__(self, spec, rng, dtype=np.float32):
        super().__init__()
        self.spec = spec
        self.weight = Tensor(kaiming_weights(rng, spec, dtype), requires_grad=True)
        if spec.bias:
            self.bias = Tensor(np.zeros((1, spec.out_channels, 1, 1), dtype), requires_grad=True)
        else:
            self.bias = None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.spec, self.bias)

    def count(self, in_shape, name=""):
        n, c, h, w = in_shape
        s = self.spec
        oh, ow = s.out_hw(h, w)
        out_shape = (n, s.out_channels, oh, ow)
        out_elems = n * s.out_channels * oh * ow
        macs = out_elems * s.kernel * s.kernel * (s.in_channels // s.groups)
        nparams = self.weight.data.size + (s.out_channels if s.bias else 0)
        secondary = out_elems if s.bias else 0
        return out_shape, [NodeCost(name + "conv", "conv", macs, secondary, nparams, out_shape)]


class BatchNorm2d(Layer):
    def __init__(self, channels, dtype=np.float32, eps=1e-5, momentum=0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones((1, channels, 1, 1), dtype), requires_grad=True)
        self.beta = Tensor(np.zeros((1, channels, 1, 1), dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)

    def named_buffers(self, prefix=""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var

    def forward(self, x):
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)

    def count(self, in_shape, name=""):
        elems = int(np.prod(in_shape))
        return in_shape, [NodeCost(name + "bn", "norm", 0, 2 * elems, 2 * self.channels, in_shape)]


class ConvBNReLU(Layer):
    """Convolution -> batch norm -> ReLU.  Bias stays off: preceding a
    batch norm it would be redundant and receive an identically-zero
    gradient."""

    def __init__(self, in_ch, out_ch, rng, kernel=3, stride=1, dilation=1, groups=1,
                 act=True, dtype=np.float32):
        super().__init__()
        padding = (kernel - 1) * dilation // 2
        spec = ConvSpec(in_ch, out_ch, kernel, stride, dilation, padding, groups, bias=False)
        self.conv = Conv2d(spec, rng, dtype)
        self.bn = BatchNorm2d(out_ch, dtype)
        self.act = act

    def forward(self, x):
        x = self.bn(self.conv(x))
        return T.relu(x) if self.act else x

    def count(self, in_shape, name=""):
        out_shape, nodes = self.conv.count(in_shape, name)
        _, bn_nodes = self.bn.count(out_shape, name)
        nodes.extend(bn_nodes)
        if self.act:
            elems = int(np.prod(out_shape))
            nodes.append(NodeCost(name + "relu", "act", 0, elems, 0, out_shape))
        return out_shape, nodes


class DSConv(Layer):
    """Depthwise 3x3 (stride/dilation on the depthwise half) followed by a
    pointwise channel mix, each with norm + ReLU."""

    def __init__(self, in_ch, out_ch, rng, kernel=3, stride=1, dilation=1, dtype=np.float32):
        super().__init__()
        self.dw = ConvBNReLU(in_ch, in_ch, rng, kernel, stride, dilation, groups=in_ch, dtype=dtype)
        self.pw = ConvBNReLU(in_ch, out_ch, rng, kernel=1, dtype=dtype)

    def forward(self, x):
        return self.pw(self.dw(x))

    def count(self, in_shape, name=""):
        mid, nodes = self.dw.count(in_shape, name + "dw.")
        out_shape, pw_nodes = self.pw.count(mid, name + "pw.")
        nodes.extend(pw_nodes)
        return out_shape, nodes


class LayerGraph:
    """A built network: root layer plus its declared input shape."""

    def __init__(self, root, input_shape):
        self.root = root
        self.input_shape = tuple(input_shape)

    def run(self, x):
        return self.root(x)

    def nodes(self):
        _, nodes = self.root.count(self.input_shape, "")
        return nodes

    def output_shape(self):
        out, _ = self.root.count(self.input_shape, "")
        return out

    def total_macs(self):
        return sum(node.macs for node in self.nodes())

    def total_params(self):
        return sum(p.data.size for p in self.root.params())

    def state(self):
        entries = list(self.root.named_params())
        entries += [(name, buf) for name, buf in self.root.named_buffers()]
        return entries

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(repr(self.input_shape).encode())
        for name, value in self.state():
            arr = value.data if isinstance(value, Tensor) else value
            h.update(name.encode())
            h.update(repr(tuple(arr.shape)).encode())
        return h.hexdigest()

    def train(self, mode=True):
        self.root.train(mode)
        return self

    def eval(self):
        return self.train(False)


# ---------------------------------------------------------------------------
# checkpoint container

_MAGIC = b"GMBICKPT"
_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(graph, path):
    fp = graph.fingerprint().encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<H", len(fp)))
        f.write(fp)
        entries = graph.state()
        f.write(struct.pack("<I", len(entries)))
        for name, value in entries:
            arr = value.data if isinstance(value, Tensor) else value
            arr = np.asarray(arr, dtype="<f4")
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.tobytes())


def load_checkpoint(graph, path):
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (fplen,) = struct.unpack("<H", f.read(2))
        fp = f.read(fplen).decode()
        if fp != graph.fingerprint():
            raise CheckpointError(f"{path}: graph fingerprint mismatch")
        (n_entries,) = struct.unpack("<I", f.read(4))
        state = dict(graph.state())
        for _ in range(n_entries):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            data = np.frombuffer(f.read(4 * int(np.prod(shape))), dtype="<f4").reshape(shape)
            if name not in state:
                raise CheckpointError(f"{path}: unknown tensor {name!r}")
            target = state[name]
            dest = target.data if isinstance(target, Tensor) else target
            if dest.shape != data.shape:
                raise CheckpointError(f"{path}: shape mismatch for {name!r}")
            dest[...] = data.astype(dest.dtype)
    return graph
