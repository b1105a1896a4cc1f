"""Lightweight group multiscale bidirectional interactive network for
surface defect detection, with an analytic computational cost analyzer.

The package is self contained: a rank-4 tensor core with tape-based
reverse-mode differentiation, numba-accelerated convolution kernels with
a pure numpy fallback, the encoder-decoder saliency network, the hybrid
BCE + structural-similarity loss, training utilities, and a CLI.
"""

from .analyzer import (CostQuery, CostReport, analytic_cost, bench_latency,
                       cost_dsconv, cost_gmbi, cost_mi, cost_multibranch,
                       cost_table, count_block, count_graph)
from .backend import backend_name, set_backend
from .data import (Sample, SynthSpec, augment, generate, generate_set,
                   load_dataset, save_sample)
from .gmbi import GMBIBlock, GMBIConfig, MIBlock, MultiBranchBlock
from .layers import LayerGraph, load_checkpoint, save_checkpoint
from .losses import LossWeights, bce_loss, ssim_loss, total_loss
from .metrics import classification_metrics, segmentation_metrics
from .network import (GMBINet, build_backbone, build_classifier,
                      build_gmbinet, predict, stage_plan)
from .tensor import ConvSpec, OpTape, ShapeError, Tensor, backward
from .trainer import TrainConfig, TrainState, evaluate, fit, train_step

__version__ = "0.1.0"

__all__ = [
    "CostQuery", "CostReport", "analytic_cost", "bench_latency",
    "cost_dsconv", "cost_gmbi", "cost_mi", "cost_multibranch",
    "cost_table", "count_block", "count_graph",
    "backend_name", "set_backend",
    "Sample", "SynthSpec", "augment", "generate", "generate_set",
    "load_dataset", "save_sample",
    "GMBIBlock", "GMBIConfig", "MIBlock", "MultiBranchBlock",
    "LayerGraph", "load_checkpoint", "save_checkpoint",
    "LossWeights", "bce_loss", "ssim_loss", "total_loss",
    "classification_metrics", "segmentation_metrics",
    "GMBINet", "build_backbone", "build_classifier", "build_gmbinet",
    "predict", "stage_plan",
    "ConvSpec", "OpTape", "ShapeError", "Tensor", "backward",
    "TrainConfig", "TrainState", "evaluate", "fit", "train_step",
]
