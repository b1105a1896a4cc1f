"""Synthetic defect samples, dataset loading, augmentation, export.

Dataset layout on disk: ``<root>/images/*.png`` and ``<root>/masks/*.png``
with matching stems, plus an optional ``split.txt`` manifest with
``[section]`` headers and one stem per line.  Classification layout:
``<root>/<class-name>/*.png``.
"""

import os
from dataclasses import dataclass, replace

import cv2
import numpy as np

from .tensor import Tensor

SYNTH_KINDS = ("scratch", "patch", "inclusion")


@dataclass
class Sample:
    id: str
    image: Tensor   # (1, 3, H, W), values in [0, 1] pre-normalization
    mask: Tensor    # (1, 1, H, W), strictly {0, 1}


@dataclass(frozen=True)
class SynthSpec:
    kind: str
    canvas: int = 128
    count_min: int = 1
    count_max: int = 3
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SYNTH_KINDS:
            raise ValueError(f"invalid defect kind {self.kind!r}; expected one of {SYNTH_KINDS}")
        if self.canvas < 64:
            raise ValueError(f"canvas must be >= 64, got {self.canvas}")
        if not 0 <= self.count_min <= self.count_max:
            raise ValueError("invalid defect count range")


def _paint_scratch(rng, mask, size):
    # thin high-curvature polyline
    pts = [rng.uniform(size * 0.1, size * 0.9, size=2)]
    heading = rng.uniform(0, 2 * np.pi)
    for _ in range(rng.integers(8, 16)):
        heading += rng.uniform(-0.9, 0.9)
        step = rng.uniform(size * 0.03, size * 0.08)
        nxt = pts[-1] + step * np.array([np.cos(heading), np.sin(heading)])
        pts.append(np.clip(nxt, 1, size - 2))
    poly = np.round(np.array(pts)).astype(np.int32).reshape(-1, 1, 2)
    cv2.polylines(mask, [poly], False, 1, thickness=int(rng.integers(1, 3)))


def _paint_patch(rng, mask, size):
    # irregular large-area blob: polygon with jittered radius
    cx, cy = rng.uniform(size * 0.25, size * 0.75, size=2)
    base_r = rng.uniform(size * 0.12, size * 0.28)
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=rng.integers(7, 13)))
    radii = base_r * rng.uniform(0.5, 1.5, size=angles.size)
    xs = cx + radii * np.cos(angles)
    ys = cy + radii * np.sin(angles)
    poly = np.round(np.stack([xs, ys], axis=1)).astype(np.int32).reshape(-1, 1, 2)
    cv2.fillPoly(mask, [poly], 1)


def _paint_inclusion(rng, mask, size):
    # cluster of small dark ellipses
    cx, cy = rng.uniform(size * 0.2, size * 0.8, size=2)
    for _ in range(rng.integers(2, 6)):
        ox, oy = rng.normal(0, size * 0.03, size=2)
        axes = (int(rng.integers(1, max(2, size // 40))),
                int(rng.integers(1, max(2, size // 50))))
        angle = float(rng.uniform(0, 180))
        cv2.ellipse(mask, (int(cx + ox), int(cy + oy)), axes, angle, 0, 360, 1, -1)


_PAINTERS = {"scratch": _paint_scratch, "patch": _paint_patch, "inclusion": _paint_inclusion}


def generate(spec):
    """Deterministic synthetic sample: textured background, kind-specific
    defect shapes, exact mask, optional salt-and-pepper on the image."""
    rng = np.random.default_rng(spec.seed)
    size = spec.canvas
    base = rng.uniform(0.35, 0.6)
    texture = rng.standard_normal((size, size)).astype(np.float32)
    texture = cv2.GaussianBlur(texture, (0, 0), sigmaX=3.0)
    image = np.clip(base + 0.25 * texture, 0.05, 0.95).astype(np.float32)

    mask = np.zeros((size, size), np.uint8)
    count = int(rng.integers(spec.count_min, spec.count_max + 1))
    for _ in range(count):
        shape_mask = np.zeros((size, size), np.uint8)
        _PAINTERS[spec.kind](rng, shape_mask, size)
        shade = rng.uniform(0.0, 0.18) if rng.random() < 0.8 else rng.uniform(0.82, 1.0)
        image[shape_mask > 0] = shade
        mask |= shape_mask

    if spec.noise > 0:
        hits = rng.random((size, size))
        image[hits < spec.noise / 2] = 0.0
        image[(hits >= spec.noise / 2) & (hits < spec.noise)] = 1.0

    rgb = np.repeat(image[None, None], 3, axis=1)
    return Sample(
        id=f"{spec.kind}-{spec.seed:06d}",
        image=Tensor(rgb),
        mask=Tensor(mask.astype(np.float32)[None, None]),
    )


def generate_set(kind_cycle, count, base_seed=0, canvas=128, noise=0.05):
    """A list of samples cycling through defect kinds."""
    kinds = list(kind_cycle)
    return [generate(SynthSpec(kind=kinds[i % len(kinds)], canvas=canvas,
                               noise=noise, seed=base_seed + i))
            for i in range(count)]


# ---------------------------------------------------------------------------
# disk I/O


class DatasetError(RuntimeError):
    pass


def _read_image(path):
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DatasetError(f"unreadable image file: {path}")
    return img


def _to_rgb01(img):
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    elif img.shape[2] == 4:
        img = img[:, :, :3]
    img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
    return img.astype(np.float32) / 255.0


def _manifest_stems(manifest_path, split):
    stems, section = [], None
    with open(manifest_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
            elif section == split:
                stems.append(line)
    return stems


def load_dataset(root, split=None):
    """Load image/mask pairs matched by stem, in stem-sorted order.

    ``split`` selects a section of ``<root>/split.txt`` when given.
    Masks are binarized at 128; grayscale images are replicated to three
    channels.
    """
    img_dir = os.path.join(root, "images")
    mask_dir = os.path.join(root, "masks")
    if not os.path.isdir(img_dir) or not os.path.isdir(mask_dir):
        raise DatasetError(f"{root}: expected images/ and masks/ subdirectories")
    stems = sorted(os.path.splitext(f)[0] for f in os.listdir(img_dir)
                   if f.lower().endswith(".png"))
    if split is not None:
        manifest = os.path.join(root, "split.txt")
        if not os.path.isfile(manifest):
            raise DatasetError(f"{root}: split {split!r} requested but no split.txt")
        wanted = set(_manifest_stems(manifest, split))
        stems = [s for s in stems if s in wanted]
    missing = [s for s in stems if not os.path.isfile(os.path.join(mask_dir, s + ".png"))]
    if missing:
        raise DatasetError(f"{root}: missing masks for stems: {', '.join(missing)}")
    samples = []
    for stem in stems:
        image = _to_rgb01(_read_image(os.path.join(img_dir, stem + ".png")))
        mask = _read_image(os.path.join(mask_dir, stem + ".png"))
        if mask.ndim == 3:
            mask = mask[:, :, 0]
        if mask.shape != image.shape[:2]:
            raise DatasetError(f"{root}/{stem}: mask shape {mask.shape} != image {image.shape[:2]}")
        binary = (mask >= 128).astype(np.float32)
        samples.append(Sample(
            id=stem,
            image=Tensor(image.transpose(2, 0, 1)[None]),
            mask=Tensor(binary[None, None]),
        ))
    return samples


def load_classification_dataset(root):
    """``<root>/<class-name>/*.png`` layout; returns (samples, labels,
    class_names) with images as (1, 3, H, W) tensors."""
    classes = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    if not classes:
        raise DatasetError(f"{root}: no class directories")
    images, labels = [], []
    for k, cls in enumerate(classes):
        cls_dir = os.path.join(root, cls)
        for fname in sorted(os.listdir(cls_dir)):
            if not fname.lower().endswith(".png"):
                continue
            img = _to_rgb01(_read_image(os.path.join(cls_dir, fname)))
            images.append(Tensor(img.transpose(2, 0, 1)[None]))
            labels.append(k)
    return images, np.asarray(labels), classes


def save_sample(sample, root):
    """Write a sample into the standard dataset layout."""
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    img = sample.image.data[0].transpose(1, 2, 0)
    img8 = np.round(255.0 * np.clip(img, 0, 1)).astype(np.uint8)
    mask8 = (sample.mask.data[0, 0] > 0.5).astype(np.uint8) * 255
    cv2.imwrite(os.path.join(root, "images", sample.id + ".png"),
                cv2.cvtColor(img8, cv2.COLOR_RGB2BGR))
    cv2.imwrite(os.path.join(root, "masks", sample.id + ".png"), mask8)


# ---------------------------------------------------------------------------
# augmentation


def _sample_rng(seed, sample_id):
    return np.random.default_rng([seed & 0xFFFFFFFF, *sample_id.encode()])


def zscore(image, eps=1e-6):
    mean = image.mean()
    std = image.std()
    return (image - mean) / (std + eps)


def augment(sample, seed, normalize=True):
    """Seeded pipeline: joint flips, image-only intensity shift, isotropic
    scale with crop/pad back, per-image z-score normalization."""
    rng = _sample_rng(seed, sample.id)
    img = sample.image.data[0].transpose(1, 2, 0).copy()
    mask = sample.mask.data[0, 0].copy()
    h, w = mask.shape

    if rng.random() < 0.5:
        img = img[:, ::-1]
        mask = mask[:, ::-1]
    if rng.random() < 0.5:
        img = img[::-1]
        mask = mask[::-1]

    img = np.clip(img + rng.uniform(-0.1, 0.1), 0.0, 1.0)

    scale = rng.uniform(0.8, 1.2)
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    img = cv2.resize(np.ascontiguousarray(img), (nw, nh), interpolation=cv2.INTER_LINEAR)
    mask = cv2.resize(np.ascontiguousarray(mask), (nw, nh), interpolation=cv2.INTER_NEAREST)
    if nh >= h:
        top, left = (nh - h) // 2, (nw - w) // 2
        img = img[top:top + h, left:left + w]
        mask = mask[top:top + h, left:left + w]
    else:
        pt, pl = (h - nh) // 2, (w - nw) // 2
        img = np.pad(img, ((pt, h - nh - pt), (pl, w - nw - pl), (0, 0)))
        mask = np.pad(mask, ((pt, h - nh - pt), (pl, w - nw - pl)))

    if normalize:
        img = zscore(img)
    return replace(
        sample,
        image=Tensor(np.ascontiguousarray(img.transpose(2, 0, 1))[None].astype(np.float32)),
        mask=Tensor((mask > 0.5).astype(np.float32)[None, None]),
    )


def export_prediction(saliency, path):
    """8-bit grayscale PNG with pixel value round(255 * p)."""
    arr = saliency.data if isinstance(saliency, Tensor) else np.asarray(saliency)
    arr = np.squeeze(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected a single-channel map, got shape {arr.shape}")
    img8 = np.round(255.0 * np.clip(arr, 0.0, 1.0)).astype(np.uint8)
    if not cv2.imwrite(path, img8):
        raise IOError(f"cannot write prediction to {path}")


def load_prediction(path):
    img = _read_image(path)
    if img.ndim == 3:
        img = img[:, :, 0]
    return img.astype(np.float32) / 255.0
