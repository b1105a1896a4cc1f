"""Training loop: Adam, cosine-annealed learning rate, deep supervision,
checkpointing and periodic evaluation."""

import csv
import os
from dataclasses import dataclass, field

import cv2
import numpy as np

from . import tensor as T
from .data import zscore
from .layers import save_checkpoint
from .losses import LossWeights, total_loss
from .metrics import aggregate_reports, segmentation_metrics
from .network import build_gmbinet
from .tensor import OpTape, Tensor


class TrainerError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 50_000
    batch_size: int = 32
    base_lr: float = 4e-3
    lr_floor: float = 0.0
    image_size: int = 512
    seed: int = 0
    checkpoint_every: int = 1000
    eval_every: int = 200
    loss_weights: LossWeights = field(default_factory=LossWeights)
    augment: bool = False
    stop_iou: float | None = None
    # architecture knobs (every ablation variant is reachable from here)
    scale_dim: int = 4
    width_mult: float = 1.0
    interaction: str = "ewms"
    forward_guidance: bool = True
    backward_enhancement: bool = True
    mode: str = "group"

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch size must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("learning rate must be positive")

    @classmethod
    def desk_scale(cls, **overrides):
        """CPU-sized profile: small images, small batches."""
        args = dict(iterations=3000, batch_size=4, image_size=64,
                    eval_every=100, checkpoint_every=500)
        args.update(overrides)
        return cls(**args)

    def build_network(self, dtype=np.float32):
        return build_gmbinet(
            scale_dim=self.scale_dim, width_mult=self.width_mult,
            seed=self.seed, input_size=self.image_size, dtype=dtype,
            interaction=self.interaction, forward_guidance=self.forward_guidance,
            backward_enhancement=self.backward_enhancement, mode=self.mode)


def lr_at(step, cfg):
    """Cosine annealing from the base rate to the floor."""
    if not 0 <= step <= cfg.iterations:
        raise ValueError(f"step {step} outside 0..{cfg.iterations}")
    cos = np.cos(np.pi * step / cfg.iterations)
    return cfg.lr_floor + 0.5 * (cfg.base_lr - cfg.lr_floor) * (1.0 + cos)


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.data -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


@dataclass
class TrainState:
    cfg: TrainConfig
    graph: object
    optimizer: Adam
    step: int = 0
    lr: float = 0.0
    losses: list = field(default_factory=list)

    @classmethod
    def create(cls, cfg):
        graph = cfg.build_network()
        return cls(cfg=cfg, graph=graph, optimizer=Adam(graph.root.params()))


def train_step(state, images, masks):
    """One optimization step; returns the scalar loss value."""
    cfg = state.cfg
    graph = state.graph
    graph.train()
    graph.root.zero_grad()
    with OpTape() as tape:
        out = graph.run(images)
        loss = total_loss(out, masks, cfg.loss_weights)
    value = loss.item()
    if not np.isfinite(value):
        raise TrainerError(
            f"non-finite loss {value} at step {state.step} (lr={state.lr:.3e}); "
            f"recent losses: {state.losses[-5:]}")
    T.backward(tape, loss)
    state.lr = lr_at(state.step, cfg)
    state.optimizer.step(state.lr)
    state.step += 1
    state.losses.append(value)
    return value


def _resize_sample(sample, size):
    img = sample.image.data[0].transpose(1, 2, 0)
    mask = sample.mask.data[0, 0]
    if img.shape[:2] != (size, size):
        img = cv2.resize(np.ascontiguousarray(img), (size, size), interpolation=cv2.INTER_LINEAR)
        mask = cv2.resize(np.ascontiguousarray(mask), (size, size), interpolation=cv2.INTER_NEAREST)
    return img.transpose(2, 0, 1).astype(np.float32), (mask > 0.5).astype(np.float32)


def make_batch(samples, cfg, epoch=0):
    """Stack samples into (images, masks) tensors at the training size."""
    from .data import augment
    imgs, masks = [], []
    for s in samples:
        if cfg.augment:
            s = augment(s, cfg.seed ^ (epoch * 1_000_003))
        img, mask = _resize_sample(s, cfg.image_size)
        imgs.append(img)
        masks.append(mask[None])
    return Tensor(np.stack(imgs)), Tensor(np.stack(masks))


def evaluate(graph, samples, cfg):
    """Aggregate segmentation metrics at the training resolution."""
    graph.eval()
    reports = []
    for s in samples:
        img, mask = _resize_sample(s, cfg.image_size)
        if cfg.augment:
            img = zscore(img)
        out = graph.run(Tensor(img[None]))
        reports.append(segmentation_metrics(out.final, Tensor(mask[None, None])))
    return aggregate_reports(reports)


def fit(cfg, dataset, val_dataset=None, out_dir="runs/train"):
    """Train on ``dataset``; returns (state, log_rows).

    Datasets smaller than the batch size are repeated with reshuffling.
    Writes an append-only CSV log plus best-IoU and last checkpoints.
    """
    if not dataset:
        raise TrainerError("empty dataset")
    os.makedirs(out_dir, exist_ok=True)
    state = TrainState.create(cfg)
    eval_set = val_dataset or dataset
    rng = np.random.default_rng(cfg.seed)

    order, cursor, epoch = [], 0, -1
    log_rows = []
    best_iou = -1.0
    last_mae, last_iou = "", ""
    best_path = os.path.join(out_dir, "best.ckpt")
    last_path = os.path.join(out_dir, "last.ckpt")

    for _ in range(cfg.iterations):
        batch_idx = []
        while len(batch_idx) < cfg.batch_size:
            if cursor >= len(order):
                order = rng.permutation(len(dataset))
                cursor = 0
                epoch += 1
            batch_idx.append(order[cursor])
            cursor += 1
        images, masks = make_batch([dataset[i] for i in batch_idx], cfg, epoch)
        loss = train_step(state, images, masks)

        row = {"step": state.step, "lr": state.lr, "loss": loss,
               "mae": last_mae, "iou": last_iou}
        stop = False
        if state.step % cfg.eval_every == 0 or state.step == cfg.iterations:
            report = evaluate(state.graph, eval_set, cfg)
            last_mae, last_iou = report.mae, report.iou
            row["mae"], row["iou"] = last_mae, last_iou
            if report.iou > best_iou:
                best_iou = report.iou
                save_checkpoint(state.graph, best_path)
            if cfg.stop_iou is not None and report.iou >= cfg.stop_iou:
                stop = True
        log_rows.append(row)
        if state.step % cfg.checkpoint_every == 0:
            save_checkpoint(state.graph, last_path)
        if stop:
            break

    save_checkpoint(state.graph, last_path)
    if best_iou < 0:
        save_checkpoint(state.graph, best_path)
    log_path = os.path.join(out_dir, "train_log.csv")
    with open(log_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["step", "lr", "loss", "mae", "iou"])
        writer.writeheader()
        writer.writerows(log_rows)
    return state, log_rows
