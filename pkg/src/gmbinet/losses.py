"""Hybrid BCE + SSIM training loss with deep-supervision weighting."""

from dataclasses import dataclass

from . import tensor as T
from .tensor import ShapeError

BCE_EPS = 1e-7
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossWeights:
    alphas: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if any(a < 0 for a in self.alphas):
            raise ValueError("loss weights must be non-negative")
        if not any(a > 0 for a in self.alphas):
            raise ValueError("at least one loss weight must be positive")


def bce_loss(pred, target, eps=BCE_EPS):
    """Mean binary cross entropy; predictions are clamped to
    ``[eps, 1 - eps]`` before the logs."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    p = T.clamp(pred, eps, 1.0 - eps)
    pos = T.mul(target, T.log(p))
    neg = T.mul(T.affine(target, -1.0, 1.0), T.log(T.affine(p, -1.0, 1.0)))
    return T.affine(T.tensor_mean(T.add(pos, neg)), -1.0, 0.0)


def ssim_loss(pred, target):
    """One minus the mean windowed structural similarity (11x11 Gaussian
    window, standard stabilizers on unit dynamic range)."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    n, c, h, w = pred.shape
    if c != 1:
        raise ShapeError(f"structural similarity expects single-channel maps, got c={c}")
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(f"image {h}x{w} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window")
    def smooth(x):
        return T.gauss_blur(x, SSIM_WINDOW, SSIM_SIGMA)

    mu_p = smooth(pred)
    mu_t = smooth(target)
    mu_pp = T.mul(mu_p, mu_p)
    mu_tt = T.mul(mu_t, mu_t)
    mu_pt = T.mul(mu_p, mu_t)
    var_p = T.sub(smooth(T.mul(pred, pred)), mu_pp)
    var_t = T.sub(smooth(T.mul(target, target)), mu_tt)
    cov = T.sub(smooth(T.mul(pred, target)), mu_pt)
    num = T.mul(T.affine(mu_pt, 2.0, SSIM_C1), T.affine(cov, 2.0, SSIM_C2))
    den = T.mul(T.affine(T.add(mu_pp, mu_tt), 1.0, SSIM_C1),
                T.affine(T.add(var_p, var_t), 1.0, SSIM_C2))
    ssim = T.tensor_mean(T.div(num, den))
    return T.affine(ssim, -1.0, 1.0)


def stage_loss(pred, target):
    return T.add(bce_loss(pred, target), ssim_loss(pred, target))


def total_loss(outputs, target, weights=None):
    """Weighted sum of per-stage hybrid losses; each side map is
    upsampled to the target's resolution first."""
    weights = weights or LossWeights()
    if len(weights.alphas) != len(outputs.sides):
        raise ValueError(f"{len(weights.alphas)} weights for {len(outputs.sides)} side outputs")
    th, tw = target.shape[2], target.shape[3]
    total = None
    for alpha, side in zip(weights.alphas, outputs.sides):
        if alpha == 0:
            continue
        if side.shape[2:] != (th, tw):
            scale = th // side.shape[2]
            side = T.bilinear_upsample(side, scale)
        term = T.affine(stage_loss(side, target), alpha, 0.0)
        total = term if total is None else T.add(total, term)
    return total
