import copy
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch.nn import Conv2d, Module, ModuleList

from errors import (
    CheckpointFormatError,
    PreconditionError,
    ShapeMismatchError,
    TrainingDiverged,
)
from geometry.boxes import BBox, Detection, ciou_loss_tensor
from logger import get_logger
from nms.engine import NmsConfig, nms_arrays
from preprocessing.targets import (
    GridLayout,
    TargetSet,
    assign_targets,
    flip_horizontal,
    stack_targets,
)
from schema.dataset_schema import GroundTruth, SceneDataset
from utils import atomic_write_bytes, make_rng

logger = get_logger(task_name="detector")

CHECKPOINT_MAGIC = b"NMSLABCK"
CHECKPOINT_FORMAT_VERSION = 1
STRIDES = (2, 4, 8)
BOX_CHANNELS = 5  # objectness logit, tx, ty, tw, th
PROB_EPS = 1e-12

LossSelector = Union[str, Callable[["RawPrediction"], torch.Tensor]]
LOSS_SELECTORS = ("obj", "cls", "ciou", "total")


def get_activation(activation: str) -> Callable:
    """
    Return the activation function based on the input string.

    Args:
        activation (str): Name of the activation function.

    Returns:
        Callable: The requested activation function. If 'none' is specified,
        it will return an identity function.

    Raises:
        ValueError: If the activation string does not match any known
        activation functions ('silu', 'relu', 'tanh', or 'none').
    """
    if activation == "silu":
        return F.silu
    elif activation == "tanh":
        return torch.tanh
    elif activation == "relu":
        return F.relu
    elif activation == "none":
        return lambda x: x
    else:
        raise ValueError(
            f"Error: Unrecognized activation type: {activation}. "
            "Must be one of ['silu', 'relu', 'tanh', 'none']."
        )


@dataclass(frozen=True)
class ArchitectureConfig:
    image_height: int = 64
    image_width: int = 64
    num_classes: int = 3
    channels: Tuple[int, int, int] = (16, 32, 64)
    kernel_size: int = 5
    head_kernel_size: int = 3
    activation: str = "silu"
    objectness_head: bool = True
    obj_bias_init: float = -4.0

    @property
    def layout(self) -> GridLayout:
        return GridLayout(self.image_height, self.image_width, STRIDES)

    @property
    def output_channels(self) -> int:
        return BOX_CHANNELS + self.num_classes

    def to_dict(self) -> Dict:
        record = asdict(self)
        record["channels"] = list(self.channels)
        return record

    @classmethod
    def from_dict(cls, record: Dict) -> "ArchitectureConfig":
        record = dict(record)
        record["channels"] = tuple(record["channels"])
        return cls(**record)


@dataclass(frozen=True)
class OptimizerConfig:
    """AdamW with cosine-annealed learning rate."""

    lr: float = 3e-3
    weight_decay: float = 5e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    batch_size: int = 16
    min_lr_ratio: float = 0.05
    flip_prob: float = 0.5


def receptive_field(arch: ArchitectureConfig, scale: int) -> Tuple[int, int]:
    """(size, stride) in input pixels of one head output at the given scale."""
    size, jump = 1, 1
    for _ in range(scale + 1):
        size += (arch.kernel_size - 1) * jump
        jump *= 2
    size += (arch.head_kernel_size - 1) * jump
    return size, jump


class Net(Module):
    """
    Three stride-2 convolutions (64 -> 32 -> 16 -> 8 for a 64x64 input), each
    feeding a convolutional head that emits, per cell, one objectness logit,
    four box parameters and the class logits.
    """

    def __init__(self, arch: ArchitectureConfig):
        super(Net, self).__init__()
        self.arch = arch
        self.activation = get_activation(arch.activation)
        in_channels = [3] + list(arch.channels[:-1])
        self.convs = ModuleList(
            [
                Conv2d(
                    in_channels=c_in,
                    out_channels=c_out,
                    kernel_size=arch.kernel_size,
                    stride=2,
                    padding=arch.kernel_size // 2,
                )
                for c_in, c_out in zip(in_channels, arch.channels)
            ]
        )
        self.heads = ModuleList(
            [
                Conv2d(
                    in_channels=c,
                    out_channels=arch.output_channels,
                    kernel_size=arch.head_kernel_size,
                    stride=1,
                    padding=arch.head_kernel_size // 2,
                )
                for c in arch.channels
            ]
        )
        self.register_buffer(
            "cells",
            torch.tensor(arch.layout.cell_table(), dtype=torch.float64),
            persistent=False,
        )

    def forward(self, X):
        x = X
        outputs = []
        for conv, head in zip(self.convs, self.heads):
            x = self.activation(conv(x))
            out = head(x)
            outputs.append(out.flatten(2).transpose(1, 2))
        return torch.cat(outputs, dim=1)

    def get_num_parameters(self):
        return sum(p.numel() for p in self.parameters())


@dataclass
class RawPrediction:
    """Raw head outputs (B, A, 5 + K) for all cells of all scales."""

    outputs: torch.Tensor
    cells: torch.Tensor
    image_size: Tuple[int, int]
    objectness_head: bool = True

    @property
    def batch_size(self) -> int:
        return int(self.outputs.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.outputs.shape[-1]) - BOX_CHANNELS

    def per_scale(self) -> List[torch.Tensor]:
        """Split into (B, gh, gw, 5 + K) grids, finest scale first."""
        layout = GridLayout(self.image_size[0], self.image_size[1], STRIDES)
        grids = []
        for offset, (gh, gw) in zip(layout.scale_offsets, layout.grid_sizes):
            chunk = self.outputs[:, offset : offset + gh * gw]
            grids.append(chunk.reshape(self.batch_size, gh, gw, -1))
        return grids

    def select(self, index: int) -> "RawPrediction":
        return RawPrediction(
            outputs=self.outputs[index : index + 1],
            cells=self.cells,
            image_size=self.image_size,
            objectness_head=self.objectness_head,
        )

    def with_outputs(self, outputs: torch.Tensor) -> "RawPrediction":
        return RawPrediction(outputs, self.cells, self.image_size, self.objectness_head)


@dataclass
class DecodedOutputs:
    boxes: torch.Tensor  # (B, A, 4) center form, unclipped
    objectness: torch.Tensor  # (B, A)
    class_probs: torch.Tensor  # (B, A, K)
    scores: torch.Tensor  # (B, A) objectness x max class probability
    objectness_head: bool = True


def decode_tensors(raw: RawPrediction) -> DecodedOutputs:
    """
    Differentiable decode of every cell.

    Centers are cell origin + sigmoid offset (so they stay inside the cell);
    sizes are stride * exp(L * tanh(t / L)) with L = log(image extent / stride),
    a smooth exponential bounded by the image size.
    """
    out = raw.outputs
    cells = raw.cells.to(dtype=out.dtype, device=out.device)
    col, row, stride = cells[:, 0], cells[:, 1], cells[:, 2]
    height, width = raw.image_size

    cx = (col + torch.sigmoid(out[..., 1])) * stride
    cy = (row + torch.sigmoid(out[..., 2])) * stride
    bound_w = torch.log(width / stride)
    bound_h = torch.log(height / stride)
    w = stride * torch.exp(bound_w * torch.tanh(out[..., 3] / bound_w))
    h = stride * torch.exp(bound_h * torch.tanh(out[..., 4] / bound_h))
    boxes = torch.stack([cx, cy, w, h], dim=-1)

    class_probs = torch.softmax(out[..., BOX_CHANNELS:], dim=-1)
    max_class = class_probs.max(dim=-1).values
    if raw.objectness_head:
        objectness = torch.sigmoid(out[..., 0])
    else:
        # objectness lives inside the class scores; the score is max class probability
        objectness = torch.ones_like(max_class)
    return DecodedOutputs(
        boxes=boxes,
        objectness=objectness,
        class_probs=class_probs,
        scores=objectness * max_class,
        objectness_head=raw.objectness_head,
    )


def clip_corners(boxes: np.ndarray, image_size: Tuple[int, int]) -> np.ndarray:
    """Center-form (N, 4) boxes -> corner form clipped to the image."""
    height, width = image_size
    half = boxes[:, 2:] / 2.0
    corners = np.concatenate([boxes[:, :2] - half, boxes[:, :2] + half], axis=1)
    corners[:, [0, 2]] = np.clip(corners[:, [0, 2]], 0.0, width)
    corners[:, [1, 3]] = np.clip(corners[:, [1, 3]], 0.0, height)
    return corners


def decode_batch(raw: RawPrediction) -> List[List[Detection]]:
    """One Detection per cell for every image, boxes clipped to the image."""
    with torch.no_grad():
        decoded = decode_tensors(raw)
        boxes = decoded.boxes.double().cpu().numpy()
        objectness = decoded.objectness.double().clamp(0.0, 1.0).cpu().numpy()
        class_probs = decoded.class_probs.double().clamp(0.0, 1.0).cpu().numpy()
    batch = []
    for b in range(raw.batch_size):
        corners = clip_corners(boxes[b], raw.image_size)
        batch.append(
            [
                Detection(
                    box=BBox.from_corners(*corners[a]),
                    objectness=float(objectness[b, a]),
                    class_scores=tuple(float(p) for p in class_probs[b, a]),
                )
                for a in range(corners.shape[0])
            ]
        )
    return batch


def decode(raw: RawPrediction) -> List[Detection]:
    """Detections of a single-image prediction."""
    if raw.batch_size != 1:
        raise PreconditionError(
            f"decode expects a single image, got a batch of {raw.batch_size}; "
            "use decode_batch"
        )
    return decode_batch(raw)[0]


def candidate_counts(raw: RawPrediction, conf_threshold: float) -> np.ndarray:
    """(B,) number of cells whose filtering score exceeds conf_threshold."""
    with torch.no_grad():
        scores = decode_tensors(raw).scores
        return (scores > conf_threshold).sum(dim=1).cpu().numpy().astype(np.int64)


def count_candidates(raw: RawPrediction, conf_threshold: float) -> int:
    """Candidates entering NMS, summed over the batch (one image: its count)."""
    return int(candidate_counts(raw, conf_threshold).sum())


@dataclass
class LossBreakdown:
    cls: torch.Tensor
    ciou: torch.Tensor
    obj: torch.Tensor
    total: torch.Tensor

    def select(self, selector: str) -> torch.Tensor:
        if selector not in LOSS_SELECTORS:
            raise PreconditionError(
                f"Unknown loss selector '{selector}'. Must be one of {LOSS_SELECTORS}"
            )
        return getattr(self, selector)


@dataclass
class LossResult:
    l_cls: float
    l_ciou: float
    l_obj: float
    l_total: float
    grad: np.ndarray  # d L_total / d raw outputs, same shape as raw.outputs


def _binary_cross_entropy(probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    probs = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(targets * torch.log(probs) + (1.0 - targets) * torch.log1p(-probs))


def compute_loss(
    raw: RawPrediction,
    targets: TargetSet,
    weights: Tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> LossBreakdown:
    """
    Classification + CIoU + objectness loss, summed over the batch.

    L_obj is the binary cross-entropy of every cell's objectness against the
    positive indicator; L_cls the binary cross-entropy of the class
    probabilities against the one-hot label and L_CIoU the CIoU loss, both over
    positive cells only. L_total = w_cls L_cls + w_ciou L_CIoU + w_obj L_obj.

    Args:
        raw (RawPrediction): head outputs (B, A, 5 + K).
        targets (TargetSet): batched targets with (B, A) leading dims.
        weights: (cls, ciou, obj) loss weights.
    """
    per_image = per_image_losses(raw, targets, weights)
    l_cls, l_ciou, l_obj = per_image.cls.sum(), per_image.ciou.sum(), per_image.obj.sum()
    w_cls, w_ciou, w_obj = weights
    total = w_cls * l_cls + w_ciou * l_ciou + w_obj * l_obj
    return LossBreakdown(cls=l_cls, ciou=l_ciou, obj=l_obj, total=total)


def per_image_losses(
    raw: RawPrediction,
    targets: TargetSet,
    weights: Tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> LossBreakdown:
    """Loss terms of every image in the batch as (B,) tensors."""
    dtype = raw.outputs.dtype
    device = raw.outputs.device
    decoded = decode_tensors(raw)
    positive = targets.positive.to(device)
    classes = targets.classes.to(device)
    boxes = targets.boxes.to(device=device, dtype=dtype)
    if positive.dim() == 1:
        positive, classes, boxes = positive[None], classes[None], boxes[None]
    indicator = positive.to(dtype)

    if raw.objectness_head:
        l_obj = F.binary_cross_entropy_with_logits(
            raw.outputs[..., 0], indicator, reduction="none"
        ).sum(dim=1)
    else:
        l_obj = _binary_cross_entropy(decoded.scores, indicator).sum(dim=1)

    # positives only; scattered back to their images
    image_index = positive.nonzero()[:, 0]
    one_hot = F.one_hot(classes[positive], num_classes=raw.num_classes).to(dtype)
    cls_terms = _binary_cross_entropy(decoded.class_probs[positive], one_hot).sum(dim=1)
    ciou_terms = ciou_loss_tensor(decoded.boxes[positive], boxes[positive])
    zeros = decoded.objectness.new_zeros(raw.batch_size)
    l_cls = zeros.index_add(0, image_index, cls_terms)
    l_ciou = zeros.index_add(0, image_index, ciou_terms)

    w_cls, w_ciou, w_obj = weights
    total = w_cls * l_cls + w_ciou * l_ciou + w_obj * l_obj
    return LossBreakdown(cls=l_cls, ciou=l_ciou, obj=l_obj, total=total)


def loss(
    raw: RawPrediction,
    gt: Union[GroundTruth, Sequence[GroundTruth]],
    weights: Tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> LossResult:
    """Loss terms of a prediction and the gradient of L_total w.r.t. the raw outputs."""
    gts = [gt] if isinstance(gt, GroundTruth) else list(gt)
    if len(gts) != raw.batch_size:
        raise PreconditionError(
            f"{len(gts)} ground truths for a batch of {raw.batch_size} predictions"
        )
    layout = GridLayout(raw.image_size[0], raw.image_size[1], STRIDES)
    targets = stack_targets([assign_targets(g, layout) for g in gts])
    leaf = raw.outputs.detach().clone().requires_grad_(True)
    breakdown = compute_loss(raw.with_outputs(leaf), targets, weights)
    (grad,) = torch.autograd.grad(breakdown.total, leaf)
    return LossResult(
        l_cls=float(breakdown.cls.item()),
        l_ciou=float(breakdown.ciou.item()),
        l_obj=float(breakdown.obj.item()),
        l_total=float(breakdown.total.item()),
        grad=grad.detach().cpu().numpy(),
    )


class Detector:
    """Toy anchor-free single-stage grid detector.

    This class provides the interface the rest of the lab uses: forward to raw
    outputs, post-processed predictions, training and persistence.
    """

    MODEL_NAME = "Toy_Grid_Detector"

    def __init__(
        self,
        arch: ArchitectureConfig,
        class_names: Optional[Sequence[str]] = None,
        seed: int = 0,
        loss_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0),
    ):
        """Construct a new detector with seeded initial weights."""
        self.arch = arch
        self.class_names = list(class_names or [str(k) for k in range(arch.num_classes)])
        if len(self.class_names) != arch.num_classes:
            raise PreconditionError(
                f"{len(self.class_names)} class names for {arch.num_classes} classes"
            )
        self.seed = seed
        self.loss_weights = tuple(float(w) for w in loss_weights)
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.net = Net(arch)
        if arch.objectness_head:
            with torch.no_grad():
                for head in self.net.heads:
                    head.bias[0].fill_(arch.obj_bias_init)
        self.net.eval()

    @property
    def dtype(self) -> torch.dtype:
        return next(self.net.parameters()).dtype

    @property
    def layout(self) -> GridLayout:
        return self.arch.layout

    def double(self) -> "Detector":
        self.net.to(torch.float64)
        return self

    def clone(self) -> "Detector":
        return copy.deepcopy(self)

    def zero_parameters(self) -> "Detector":
        with torch.no_grad():
            for p in self.net.parameters():
                p.zero_()
        return self

    def to_tensor(self, images: Union[np.ndarray, torch.Tensor]) -> torch.Tensor:
        """(N, H, W, 3) or (H, W, 3) pixels -> (N, 3, H, W) tensor in the net's dtype."""
        x = torch.as_tensor(images)
        if x.dim() == 3:
            x = x.unsqueeze(0)
        expected = (self.arch.image_height, self.arch.image_width, 3)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeMismatchError(
                f"Expected images of shape (N, {expected[0]}, {expected[1]}, 3). "
                f"Given {tuple(x.shape)}"
            )
        return x.permute(0, 3, 1, 2).to(self.dtype).contiguous()

    def forward_tensor(self, x: torch.Tensor) -> RawPrediction:
        """Forward on an (N, 3, H, W) tensor; autograd follows the caller's mode."""
        if tuple(x.shape[1:]) != (3, self.arch.image_height, self.arch.image_width):
            raise ShapeMismatchError(
                f"Expected input tensor (N, 3, {self.arch.image_height}, "
                f"{self.arch.image_width}). Given {tuple(x.shape)}"
            )
        return RawPrediction(
            outputs=self.net(x),
            cells=self.net.cells,
            image_size=(self.arch.image_height, self.arch.image_width),
            objectness_head=self.arch.objectness_head,
        )

    def forward(self, images: Union[np.ndarray, torch.Tensor]) -> RawPrediction:
        return self.forward_tensor(self.to_tensor(images))

    def candidate_counts(
        self, images: np.ndarray, conf_threshold: float, batch_size: int = 64
    ) -> np.ndarray:
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        counts = []
        with torch.no_grad():
            for start in range(0, images.shape[0], batch_size):
                raw = self.forward(images[start : start + batch_size])
                counts.append(candidate_counts(raw, conf_threshold))
        return np.concatenate(counts) if counts else np.zeros(0, dtype=np.int64)

    def time_forward(self, repeats: int = 20, warmup_runs: int = 2) -> float:
        """Median wall time in seconds of a single-image forward pass."""
        if repeats < 1:
            raise PreconditionError(f"repeats must be at least 1. Given {repeats}")
        image = np.zeros((1, self.arch.image_height, self.arch.image_width, 3), np.float32)
        timings = []
        with torch.no_grad():
            for run in range(warmup_runs + repeats):
                start = time.perf_counter_ns()
                self.forward(image)
                if run >= warmup_runs:
                    timings.append(time.perf_counter_ns() - start)
        return float(np.median(timings)) / 1e9

    def predict(
        self, images: np.ndarray, nms_cfg: NmsConfig, batch_size: int = 64
    ) -> List[List[Detection]]:
        """Post-NMS detections per image (confidence filter, then greedy NMS)."""
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        results = []
        with torch.no_grad():
            for start in range(0, images.shape[0], batch_size):
                raw = self.forward(images[start : start + batch_size])
                results.extend(postprocess_batch(raw, nms_cfg))
        return results

    def fit(
        self,
        dataset: SceneDataset,
        epochs: int,
        optimizer_cfg: OptimizerConfig,
        seed: int = 0,
        perturb: Optional["PerturbFn"] = None,
        print_period: int = 10,
    ) -> List[Dict]:
        """Train in place; returns the per-epoch loss history."""
        return _run_training(
            self, dataset, epochs, optimizer_cfg, seed, perturb, print_period
        )

    def save(self, file_path: str, extra_header: Optional[Dict] = None) -> None:
        save_checkpoint(self, file_path, extra_header)

    @classmethod
    def load(cls, file_path: str) -> "Detector":
        return load_checkpoint(file_path)[0]

    def __str__(self):
        return f"Model name: {self.MODEL_NAME}"


# perturb(detector, images (B,H,W,3), ground truths, dataset indices) -> images
PerturbFn = Callable[[Detector, np.ndarray, List[GroundTruth], np.ndarray], np.ndarray]


def postprocess_batch(raw: RawPrediction, nms_cfg: NmsConfig) -> List[List[Detection]]:
    """Confidence filter + greedy NMS on tensors, building Detections only for survivors."""
    with torch.no_grad():
        decoded = decode_tensors(raw)
        boxes = decoded.boxes.double().cpu().numpy()
        objectness = decoded.objectness.double().clamp(0.0, 1.0).cpu().numpy()
        class_probs = decoded.class_probs.double().clamp(0.0, 1.0).cpu().numpy()
        scores = decoded.scores.double().cpu().numpy()
    results = []
    for b in range(raw.batch_size):
        passing = np.flatnonzero(scores[b] > nms_cfg.conf_threshold)
        corners = clip_corners(boxes[b, passing], raw.image_size)
        class_ids = class_probs[b, passing].argmax(axis=1) if passing.size else None
        kept, _ = nms_arrays(
            corners,
            scores[b, passing],
            nms_cfg.iou_threshold,
            class_ids=class_ids if nms_cfg.class_aware else None,
            max_detections=nms_cfg.max_detections,
        )
        results.append(
            [
                Detection(
                    box=BBox.from_corners(*corners[k]),
                    objectness=float(objectness[b, passing[k]]),
                    class_scores=tuple(float(p) for p in class_probs[b, passing[k]]),
                )
                for k in kept
            ]
        )
    return results


def grad_input(
    detector: Detector,
    image: np.ndarray,
    loss_selector: LossSelector,
    gt: Optional[GroundTruth] = None,
) -> np.ndarray:
    """
    Exact input gradient of a loss, returned as an (H, W, 3) array.

    Args:
        detector (Detector): the model.
        image (np.ndarray): (H, W, 3) pixels.
        loss_selector: one of "obj", "cls", "ciou", "total", or a callable that
            maps a RawPrediction to a scalar tensor (e.g. an attack loss).
        gt (GroundTruth, optional): required by the named selectors; an empty
            ground truth is used when omitted.
    """
    x = detector.to_tensor(image).detach().requires_grad_(True)
    raw = detector.forward_tensor(x)
    if callable(loss_selector):
        scalar = loss_selector(raw)
    else:
        targets = stack_targets([assign_targets(gt or GroundTruth(), detector.layout)])
        scalar = compute_loss(raw, targets, detector.loss_weights).select(loss_selector)
    (grad,) = torch.autograd.grad(scalar, x)
    return grad[0].permute(1, 2, 0).detach().cpu().numpy()


def _run_training(
    detector: Detector,
    dataset: SceneDataset,
    epochs: int,
    optimizer_cfg: OptimizerConfig,
    seed: int,
    perturb: Optional[PerturbFn],
    print_period: int,
) -> List[Dict]:
    if len(dataset) == 0:
        raise PreconditionError("Cannot train on an empty dataset")
    if epochs <= 0:
        return []
    net = detector.net
    n_images = len(dataset)
    batch_size = max(1, min(optimizer_cfg.batch_size, n_images))
    steps_per_epoch = math.ceil(n_images / batch_size)
    optimizer = torch.optim.AdamW(
        net.parameters(),
        lr=optimizer_cfg.lr,
        betas=tuple(optimizer_cfg.betas),
        weight_decay=optimizer_cfg.weight_decay,
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer,
        T_max=epochs * steps_per_epoch,
        eta_min=optimizer_cfg.lr * optimizer_cfg.min_lr_ratio,
    )
    shuffler = torch.Generator().manual_seed(seed)
    layout = detector.layout
    base_targets = [assign_targets(gt, layout) for gt in dataset.ground_truths]

    history = []
    net.train()
    try:
        for epoch in range(epochs):
            flip_rng = make_rng(seed, 1, epoch)
            order = torch.randperm(n_images, generator=shuffler).numpy()
            epoch_loss = 0.0
            for start in range(0, n_images, batch_size):
                indices = order[start : start + batch_size]
                images, gts, targets = [], [], []
                for index in indices:
                    image = dataset.images[index]
                    gt = dataset.ground_truths[index]
                    if flip_rng.random() < optimizer_cfg.flip_prob:
                        image, gt = flip_horizontal(image, gt)
                        targets.append(assign_targets(gt, layout))
                    else:
                        targets.append(base_targets[index])
                    images.append(image)
                    gts.append(gt)
                batch_images = np.stack(images)
                if perturb is not None:
                    batch_images = perturb(detector, batch_images, gts, indices)

                raw = detector.forward(batch_images)
                breakdown = compute_loss(raw, stack_targets(targets), detector.loss_weights)
                batch_loss = breakdown.total / len(indices)
                if not torch.isfinite(batch_loss):
                    raise TrainingDiverged(
                        f"Training loss became non-finite at epoch {epoch + 1}"
                    )
                optimizer.zero_grad()
                batch_loss.backward()
                optimizer.step()
                scheduler.step()
                epoch_loss += float(breakdown.total.item())

            mean_loss = epoch_loss / n_images
            history.append({"epoch": epoch, "loss": mean_loss})
            if epoch % print_period == 0 or epoch == epochs - 1:
                logger.info(f"Epoch: {epoch + 1}/{epochs}, loss: {np.round(mean_loss, 5)}")
    finally:
        net.eval()
    return history


@dataclass
class TrainResult:
    detector: Detector
    history: List[Dict] = field(default_factory=list)


def train(
    detector: Detector,
    dataset: SceneDataset,
    epochs: int,
    optimizer_cfg: OptimizerConfig,
    seed: int = 0,
) -> TrainResult:
    """Train a copy of `detector` for `epochs` epochs; the input is left untouched."""
    trained = detector.clone()
    history = trained.fit(dataset, epochs, optimizer_cfg, seed=seed)
    return TrainResult(detector=trained, history=history)


def save_checkpoint(
    detector: Detector, file_path: str, extra_header: Optional[Dict] = None
) -> None:
    """
    Checkpoint layout: magic, little-endian uint32 header length, JSON header
    (architecture, class names, tensor names and shapes, extras), then every
    parameter as float64 in the declared order.
    """
    state = detector.net.state_dict()
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_name": detector.MODEL_NAME,
        "architecture": detector.arch.to_dict(),
        "class_names": detector.class_names,
        "seed": detector.seed,
        "loss_weights": list(detector.loss_weights),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
        "extra": extra_header or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buffer = io.BytesIO()
    buffer.write(CHECKPOINT_MAGIC)
    buffer.write(np.array([len(header_bytes)], dtype="<u4").tobytes())
    buffer.write(header_bytes)
    for value in state.values():
        buffer.write(value.detach().cpu().double().numpy().astype("<f8").tobytes())
    atomic_write_bytes(file_path, buffer.getvalue())


def load_checkpoint(file_path: str) -> Tuple[Detector, Dict]:
    """
    Load a checkpoint written by save_checkpoint.

    Returns:
        Tuple[Detector, Dict]: the detector (float32) and the checkpoint header.
    """
    if not os.path.isfile(file_path):
        raise CheckpointFormatError(
            f"Checkpoint not found: '{file_path}'. Run train or defend first "
            f"(expected format_version {CHECKPOINT_FORMAT_VERSION})."
        )
    with open(file_path, "rb") as file:
        payload = file.read()
    if payload[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"'{file_path}' is not a detector checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    try:
        (header_len,) = np.frombuffer(payload, dtype="<u4", count=1, offset=offset)
        offset += 4
        header = json.loads(payload[offset : offset + int(header_len)].decode("utf-8"))
        offset += int(header_len)
    except ValueError as exc:
        raise CheckpointFormatError(f"Unreadable checkpoint header in '{file_path}'") from exc
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointFormatError(
            f"'{file_path}' has format_version {header.get('format_version')}; "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )

    detector = Detector(
        ArchitectureConfig.from_dict(header["architecture"]),
        class_names=header["class_names"],
        seed=header.get("seed", 0),
        loss_weights=tuple(header.get("loss_weights", (1.0, 1.0, 1.0))),
    )
    state = {}
    try:
        for spec in header["tensors"]:
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            values = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
            offset += count * 8
            state[spec["name"]] = torch.from_numpy(values.copy().reshape(spec["shape"]))
        detector.net.load_state_dict(
            {k: v.to(torch.float32) for k, v in state.items()}
        )
    except (ValueError, RuntimeError, KeyError) as exc:
        raise CheckpointFormatError(
            f"'{file_path}' does not match its declared architecture: {exc}"
        ) from exc
    return detector, header


def build_detector(
    hyperparameters: Dict,
    height: int,
    width: int,
    class_names: Sequence[str],
    seed: int,
) -> Detector:
    """A freshly initialized detector for the given image geometry and classes."""
    arch = ArchitectureConfig.from_dict(
        {
            **hyperparameters["architecture"],
            "image_height": height,
            "image_width": width,
            "num_classes": len(class_names),
        }
    )
    weights = hyperparameters["loss_weights"]
    return Detector(
        arch,
        class_names=class_names,
        seed=seed,
        loss_weights=(weights["cls"], weights["ciou"], weights["obj"]),
    )


def train_predictor_model(
    dataset: SceneDataset,
    hyperparameters: Dict,
    seed: int,
) -> TrainResult:
    """
    Instantiate and train the detector.

    Args:
        dataset (SceneDataset): training scenes.
        hyperparameters (dict): validated `architecture`, `optimizer` and
            `loss_weights` sections.
        seed (int): initialization and shuffling seed.
    """
    detector = build_detector(
        hyperparameters,
        dataset.schema.height,
        dataset.schema.width,
        dataset.schema.class_names,
        seed,
    )
    optimizer = dict(hyperparameters["optimizer"])
    epochs = int(optimizer.pop("epochs"))
    optimizer["betas"] = tuple(optimizer["betas"])
    return train(detector, dataset, epochs, OptimizerConfig(**optimizer), seed=seed)


def save_predictor_model(
    model: Detector, checkpoint_path: str, extra_header: Optional[Dict] = None
) -> None:
    model.save(checkpoint_path, extra_header)


def load_predictor_model(checkpoint_path: str) -> Detector:
    return Detector.load(checkpoint_path)
