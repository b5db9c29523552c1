"""Ground-truth to grid-cell assignment and the random flip augmentation."""
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch

from logger import get_logger
from schema.dataset_schema import GroundTruth

logger = get_logger(task_name="targets")


@dataclass
class GridLayout:
    """Cells of all scales flattened scale by scale, row-major within a scale."""

    height: int
    width: int
    strides: Tuple[int, ...]

    @property
    def grid_sizes(self) -> List[Tuple[int, int]]:
        return [(self.height // s, self.width // s) for s in self.strides]

    @property
    def scale_offsets(self) -> List[int]:
        offsets, total = [], 0
        for gh, gw in self.grid_sizes:
            offsets.append(total)
            total += gh * gw
        return offsets

    @property
    def num_cells(self) -> int:
        return sum(gh * gw for gh, gw in self.grid_sizes)

    def cell_table(self) -> np.ndarray:
        """(A, 3) rows of (column, row, stride) for every cell."""
        rows = []
        for stride, (gh, gw) in zip(self.strides, self.grid_sizes):
            ii, jj = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
            rows.append(
                np.stack(
                    [jj.ravel(), ii.ravel(), np.full(gh * gw, stride)], axis=1
                )
            )
        return np.concatenate(rows, axis=0).astype(np.float64)

    def cell_index(self, scale: int, row: int, col: int) -> int:
        _, gw = self.grid_sizes[scale]
        return self.scale_offsets[scale] + row * gw + col


@dataclass
class TargetSet:
    """Per-cell training targets of one image."""

    positive: torch.Tensor  # (A,) bool
    boxes: torch.Tensor  # (A, 4) center form, zeros at negatives
    classes: torch.Tensor  # (A,) long, -1 at negatives


def scale_preference(layout: GridLayout, w: float, h: float) -> List[int]:
    """Scales ordered by how well their stride matches sqrt(w * h), in log space."""
    size = math.sqrt(max(w * h, 1e-12))
    distances = [abs(math.log(stride) - math.log(size)) for stride in layout.strides]
    return sorted(range(len(layout.strides)), key=lambda k: (distances[k], k))


def assign_targets(gt: GroundTruth, layout: GridLayout) -> TargetSet:
    """
    Assign each ground-truth box to exactly one cell.

    The box goes to the cell containing its center at the scale whose stride
    best matches sqrt(w * h); if that cell is already taken the next best
    scale is used. Every other cell is a negative.
    """
    n = layout.num_cells
    positive = torch.zeros(n, dtype=torch.bool)
    boxes = torch.zeros(n, 4, dtype=torch.float64)
    classes = torch.full((n,), -1, dtype=torch.long)
    for box, class_id in zip(gt.boxes, gt.classes):
        for scale in scale_preference(layout, box.w, box.h):
            stride = layout.strides[scale]
            gh, gw = layout.grid_sizes[scale]
            col = min(max(int(box.cx // stride), 0), gw - 1)
            row = min(max(int(box.cy // stride), 0), gh - 1)
            index = layout.cell_index(scale, row, col)
            if not positive[index]:
                positive[index] = True
                boxes[index] = torch.tensor([box.cx, box.cy, box.w, box.h], dtype=torch.float64)
                classes[index] = int(class_id)
                break
        else:
            logger.warning(
                f"No free cell for ground-truth box {box}; it is left unassigned."
            )
    return TargetSet(positive=positive, boxes=boxes, classes=classes)


def stack_targets(targets: Sequence[TargetSet]) -> TargetSet:
    return TargetSet(
        positive=torch.stack([t.positive for t in targets]),
        boxes=torch.stack([t.boxes for t in targets]),
        classes=torch.stack([t.classes for t in targets]),
    )


def flip_horizontal(image: np.ndarray, gt: GroundTruth) -> Tuple[np.ndarray, GroundTruth]:
    """Mirror an (H, W, 3) image and its boxes left-right."""
    width = image.shape[1]
    flipped = np.ascontiguousarray(image[:, ::-1, :])
    corners = gt.corners()
    mirrored = corners.copy()
    mirrored[:, 0] = width - corners[:, 2]
    mirrored[:, 2] = width - corners[:, 0]
    return flipped, GroundTruth.from_corners(mirrored, gt.classes)
