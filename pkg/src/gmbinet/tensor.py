"""Minimal dense-tensor engine with reverse-mode differentiation.

Values are rank-4 arrays laid out ``(batch, channels, rows, cols)``;
scalars are represented as shape ``(1, 1, 1, 1)``.  Operations executed
while an :class:`OpTape` is active are recorded and can be replayed
backward to populate gradients.
"""

from dataclasses import dataclass

import numpy as np

from .backend import kernels


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be rank 4 (n, c, h, w), got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


def scalar(value, dtype=np.float32):
    return Tensor(np.full((1, 1, 1, 1), value, dtype=dtype))


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    groups: int = 1
    bias: bool = False

    def __post_init__(self):
        for field in ("in_channels", "out_channels", "kernel", "stride", "dilation", "groups"):
            if getattr(self, field) < 1:
                raise ValueError(f"ConvSpec.{field} must be positive")
        if self.padding < 0:
            raise ValueError("ConvSpec.padding must be non-negative")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"channels ({self.in_channels}->{self.out_channels}) not divisible by groups {self.groups}")

    @property
    def depthwise(self):
        return self.groups == self.in_channels == self.out_channels

    @property
    def pointwise(self):
        return self.kernel == 1 and self.dilation == 1

    def out_hw(self, h, w):
        span = (self.kernel - 1) * self.dilation + 1
        oh = (h + 2 * self.padding - span) // self.stride + 1
        ow = (w + 2 * self.padding - span) // self.stride + 1
        return oh, ow


class OpTape:
    """Append-only record of executed operations for one forward pass."""

    _active = []

    def __init__(self):
        self.records = []

    def __enter__(self):
        OpTape._active.append(self)
        return self

    def __exit__(self, *exc):
        OpTape._active.pop()
        return False

    @classmethod
    def current(cls):
        return cls._active[-1] if cls._active else None


def _record(out, inputs, grad_fn):
    tape = OpTape.current()
    if tape is not None:
        tape.records.append((out, inputs, grad_fn))
    return out


def backward(tape, loss):
    """Replay ``tape`` backward from the scalar ``loss``.

    Every participating tensor flagged ``requires_grad`` receives its
    gradient; gradients accumulate additively across fan-out.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for out, inputs, grad_fn in reversed(tape.records):
        gout = grads.get(id(out))
        if gout is None:
            continue
        for t, g in zip(inputs, grad_fn(gout)):
            if g is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
    seen = {}
    for out, inputs, _ in tape.records:
        for t in inputs:
            if t.requires_grad and id(t) in grads:
                seen[id(t)] = t
    for key, t in seen.items():
        g = grads[key]
        t.grad = g if t.grad is None else t.grad + g
    if loss.requires_grad:
        loss.grad = grads[id(loss)]
    return grads


# ---------------------------------------------------------------------------
# convolution and resampling


def _pw_forward(xd, wd, groups):
    # stride-1 pointwise convolutions lower to batched matmul
    n, cin, h, w = xd.shape
    cout = wd.shape[0]
    og, cg = cout // groups, cin // groups
    xr = xd.reshape(n, groups, cg, h * w)
    wr = wd.reshape(1, groups, og, cg)
    return np.matmul(wr, xr).reshape(n, cout, h, w)


def _pw_backward_input(gy, wd, groups):
    n, cout, h, w = gy.shape
    cin = wd.shape[1] * groups
    og, cg = cout // groups, cin // groups
    gyr = gy.reshape(n, groups, og, h * w)
    wr = wd.reshape(1, groups, og, cg)
    return np.matmul(wr.transpose(0, 1, 3, 2), gyr).reshape(n, cin, h, w)


def _pw_backward_weight(gy, xd, w_shape, groups):
    n, cout, h, w = gy.shape
    cin = w_shape[1] * groups
    og, cg = cout // groups, cin // groups
    gyr = gy.reshape(n, groups, og, h * w)
    xr = xd.reshape(n, groups, cg, h * w)
    gw = np.matmul(gyr, xr.transpose(0, 1, 3, 2)).sum(axis=0)
    return np.ascontiguousarray(gw.reshape(w_shape))


def conv2d(x, w, spec, bias=None):
    n, c, h, wd = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"input channels {c} != spec.in_channels {spec.in_channels}")
    expect_w = (spec.out_channels, spec.in_channels // spec.groups, spec.kernel, spec.kernel)
    if w.shape != expect_w:
        raise ShapeError(f"weight shape {w.shape} != expected {expect_w}")
    span = (spec.kernel - 1) * spec.dilation + 1
    if span > h + 2 * spec.padding or span > wd + 2 * spec.padding:
        raise ShapeError(
            f"kernel extent {span} exceeds padded input extent "
            f"({h + 2 * spec.padding}, {wd + 2 * spec.padding})")
    oh, ow = spec.out_hw(h, wd)
    if oh < 1 or ow < 1:
        raise ShapeError(f"zero-sized output ({oh}, {ow})")
    p = spec.padding
    if p:
        xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    else:
        xp = x.data
    lowered = spec.kernel == 1 and spec.stride == 1
    if lowered:
        ydata = _pw_forward(xp, w.data, spec.groups)
    else:
        ydata = kernels().conv2d_forward(xp, w.data, spec.stride, spec.dilation, spec.groups, oh, ow)
    if bias is not None:
        if bias.shape != (1, spec.out_channels, 1, 1):
            raise ShapeError(f"bias shape {bias.shape} != (1, {spec.out_channels}, 1, 1)")
        ydata = ydata + bias.data
    out = Tensor(ydata)

    def grad_fn(gout):
        if lowered:
            gxp = _pw_backward_input(gout, w.data, spec.groups)
            gw = _pw_backward_weight(gout, xp, w.data.shape, spec.groups)
        else:
            kb = kernels()
            gxp = kb.conv2d_backward_input(gout, w.data, xp.shape, spec.stride, spec.dilation, spec.groups)
            gw = kb.conv2d_backward_weight(gout, xp, w.data.shape, spec.stride, spec.dilation, spec.groups)
        gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
        if bias is not None:
            gb = gout.sum(axis=(0, 2, 3), keepdims=True)
            return gx, gw, gb
        return gx, gw

    ins = (x, w) if bias is None else (x, w, bias)
    return _record(out, ins, grad_fn)


def _resize_weights(in_len, out_len, dtype):
    # corner-aligned linear interpolation coefficients
    if out_len == 1 or in_len == 1:
        lo = np.zeros(out_len, dtype=np.int64)
        frac = np.zeros(out_len, dtype=dtype)
    else:
        pos = np.arange(out_len, dtype=np.float64) * (in_len - 1) / (out_len - 1)
        lo = np.minimum(np.floor(pos).astype(np.int64), in_len - 2)
        frac = (pos - lo).astype(dtype)
    hi = np.minimum(lo + 1, in_len - 1)
    return lo, hi, frac


def bilinear_resize(x, out_h, out_w):
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"invalid output size ({out_h}, {out_w})")
    n, c, h, w = x.shape
    i0, i1, fi = _resize_weights(h, out_h, x.dtype)
    j0, j1, fj = _resize_weights(w, out_w, x.dtype)
    fi = fi[:, None]
    fj = fj[None, :]
    w00 = (1 - fi) * (1 - fj)
    w01 = (1 - fi) * fj
    w10 = fi * (1 - fj)
    w11 = fi * fj
    d = x.data
    ydata = (d[:, :, i0][:, :, :, j0] * w00 + d[:, :, i0][:, :, :, j1] * w01
             + d[:, :, i1][:, :, :, j0] * w10 + d[:, :, i1][:, :, :, j1] * w11)
    out = Tensor(ydata)

    def grad_fn(gout):
        gx = np.zeros_like(d)
        ii0 = np.broadcast_to(i0[:, None], (out_h, out_w))
        ii1 = np.broadcast_to(i1[:, None], (out_h, out_w))
        jj0 = np.broadcast_to(j0[None, :], (out_h, out_w))
        jj1 = np.broadcast_to(j1[None, :], (out_h, out_w))
        np.add.at(gx, (slice(None), slice(None), ii0, jj0), gout * w00)
        np.add.at(gx, (slice(None), slice(None), ii0, jj1), gout * w01)
        np.add.at(gx, (slice(None), slice(None), ii1, jj0), gout * w10)
        np.add.at(gx, (slice(None), slice(None), ii1, jj1), gout * w11)
        return (gx,)

    return _record(out, (x,), grad_fn)


def bilinear_upsample(x, scale):
    if scale < 1:
        raise ShapeError(f"upsample scale must be >= 1, got {scale}")
    n, c, h, w = x.shape
    return bilinear_resize(x, h * scale, w * scale)


def gauss_blur(x, window, sigma):
    """Same-size Gaussian smoothing with zero padding, run separably.

    The window is symmetric, so the operator is self-adjoint and the
    backward pass is the same blur applied to the output gradient.
    """
    import cv2
    if window % 2 == 0 or window < 1:
        raise ShapeError(f"window must be odd and positive, got {window}")
    half = window // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g1 = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    g1 /= g1.sum()
    g1 = g1.astype(x.dtype)

    def apply(data):
        out = np.empty_like(data)
        for b in range(data.shape[0]):
            for c in range(data.shape[1]):
                out[b, c] = cv2.sepFilter2D(data[b, c], -1, g1, g1,
                                            borderType=cv2.BORDER_CONSTANT)
        return out

    out = Tensor(apply(x.data))
    return _record(out, (x,), lambda gout: (apply(gout),))


# ---------------------------------------------------------------------------
# elementwise


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    _check_same_shape(a, b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same_shape(a, b)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a, b):
    _check_same_shape(a, b)
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b):
    _check_same_shape(a, b)
    out = Tensor(a.data / b.data)
    return _record(out, (a, b), lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def elementwise(a, b, kind):
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def affine(x, scale=1.0, shift=0.0):
    """Pointwise ``scale * x + shift`` with python-float coefficients."""
    out = Tensor(x.data * scale + shift)
    return _record(out, (x,), lambda g: (g * scale,))


def sigmoid(x):
    d = x.data
    pos = d >= 0
    e = np.exp(np.where(pos, -d, d))
    s = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Tensor(s)
    return _record(out, (x,), lambda g: (g * s * (1.0 - s),))


def relu(x):
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0))
    return _record(out, (x,), lambda g: (g * mask,))


def activation(x, kind):
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    raise ValueError(f"unknown activation kind {kind!r}")


def log(x):
    out = Tensor(np.log(x.data))
    return _record(out, (x,), lambda g: (g / x.data,))


def clamp(x, lo, hi):
    mask = (x.data > lo) & (x.data < hi)
    out = Tensor(np.clip(x.data, lo, hi))
    return _record(out, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# structure


def channel_split(x, parts):
    n, c, h, w = x.shape
    if parts < 1 or c % parts:
        raise ShapeError(f"{c} channels not divisible into {parts} parts")
    cg = c // parts
    outs = []
    for i in range(parts):
        piece = Tensor(x.data[:, i * cg:(i + 1) * cg].copy())

        def grad_fn(g, i=i):
            gx = np.zeros_like(x.data)
            gx[:, i * cg:(i + 1) * cg] = g
            return (gx,)

        outs.append(_record(piece, (x,), grad_fn))
    return outs


def concat(parts):
    if not parts:
        raise ShapeError("concat of empty list")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if p.shape[0] != n or p.shape[2:] != (h, w):
            raise ShapeError(f"concat spatial/batch mismatch {parts[0].shape} vs {p.shape}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    sizes = [p.shape[1] for p in parts]

    def grad_fn(g):
        offs = np.cumsum([0] + sizes)
        return tuple(g[:, offs[i]:offs[i + 1]] for i in range(len(parts)))

    return _record(out, tuple(parts), grad_fn)


def channel_permute(x, perm):
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(x.shape[1])):
        raise ShapeError(f"invalid channel permutation of length {len(perm)} for c={x.shape[1]}")
    inv = np.argsort(perm)
    out = Tensor(x.data[:, perm])
    return _record(out, (x,), lambda g: (g[:, inv],))


# ---------------------------------------------------------------------------
# reductions and normalization


def tensor_sum(x):
    out = Tensor(np.full((1, 1, 1, 1), x.data.sum(dtype=np.float64), dtype=x.dtype))
    return _record(out, (x,), lambda g: (np.broadcast_to(g.reshape(()), x.shape).astype(x.dtype, copy=True),))


def tensor_mean(x):
    size = x.data.size
    out = Tensor(np.full((1, 1, 1, 1), x.data.mean(dtype=np.float64), dtype=x.dtype))
    return _record(out, (x,), lambda g: ((np.broadcast_to(g.reshape(()), x.shape) / size).astype(x.dtype, copy=True),))


def global_avg_pool(x):
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True))
    return _record(out, (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype, copy=True),))


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization.

    ``gamma``/``beta`` are ``(1, c, 1, 1)`` tensors; running statistics are
    plain arrays updated in place during training.
    """
    n, c, h, w = x.shape
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise ShapeError(f"norm parameter shape mismatch for c={c}")
    if training:
        mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(-1)
    else:
        mean = running_mean.reshape(1, c, 1, 1).astype(x.dtype)
        var = running_var.reshape(1, c, 1, 1).astype(x.dtype)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * invstd
    out = Tensor(gamma.data * xhat + beta.data)

    def grad_fn(gout):
        gbeta = gout.sum(axis=(0, 2, 3), keepdims=True)
        ggamma = (gout * xhat).sum(axis=(0, 2, 3), keepdims=True)
        gxhat = gout * gamma.data
        if training:
            m = n * h * w
            gx = (invstd / m) * (m * gxhat
                                 - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                                 - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        else:
            gx = gxhat * invstd
        return gx, ggamma, gbeta

    return _record(out, (x, gamma, beta), grad_fn)
