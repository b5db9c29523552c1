"""Per-object protection masks for background-attentive perturbations."""
from typing import Sequence

import numpy as np

from errors import PreconditionError
from schema.dataset_schema import GroundTruth


def build_mask(gt: GroundTruth, ratio: float, height: int, width: int) -> np.ndarray:
    """
    Binary (H, W) mask: 0 on protected pixels, 1 where perturbation is allowed.

    Each ground-truth box protects a window centered on the box center whose
    sides are `ratio` times the box sides, clipped to the image. A pixel is
    protected when its center lies in a window (half-open on the far side);
    overlapping windows union their zeros.
    """
    if ratio < 0:
        raise PreconditionError(f"Mask ratio must be non-negative. Given {ratio}")
    mask = np.ones((height, width), dtype=np.float32)
    if ratio == 0 or len(gt) == 0:
        return mask
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    for box in gt.boxes:
        half_w = ratio * box.w / 2.0
        half_h = ratio * box.h / 2.0
        cols = (xs >= box.cx - half_w) & (xs < box.cx + half_w)
        rows = (ys >= box.cy - half_h) & (ys < box.cy + half_h)
        mask[np.ix_(rows, cols)] = 0.0
    return mask


def build_masks(
    gts: Sequence[GroundTruth], ratio: float, height: int, width: int
) -> np.ndarray:
    """(N, H, W) masks for a batch."""
    return np.stack([build_mask(gt, ratio, height, width) for gt in gts])


def background_mask(gt: GroundTruth, height: int, width: int) -> np.ndarray:
    """1 outside every ground-truth box, 0 on the objects."""
    return build_mask(gt, 1.0, height, width)
