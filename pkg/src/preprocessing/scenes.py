"""Synthetic detection scenes: color-coded filled rectangles on textured noise."""
from typing import List, Sequence, Tuple

import numpy as np

from errors import PreconditionError
from schema.dataset_schema import DatasetSchema, GroundTruth, SceneDataset, build_header
from utils import make_rng

# base colors per class index; classes beyond the table get a random hue
CLASS_COLORS = np.array(
    [
        [0.90, 0.15, 0.15],
        [0.15, 0.85, 0.20],
        [0.15, 0.25, 0.90],
        [0.90, 0.85, 0.15],
        [0.85, 0.20, 0.85],
    ],
    dtype=np.float32,
)
MAX_PLACEMENT_TRIES = 50


def class_color(class_id: int, rng: np.random.Generator) -> np.ndarray:
    if class_id < len(CLASS_COLORS):
        base = CLASS_COLORS[class_id]
    else:
        base = rng.uniform(0.1, 0.9, size=3).astype(np.float32)
    return np.clip(base + rng.normal(0.0, 0.03, size=3), 0.0, 1.0).astype(np.float32)


def textured_background(
    rng: np.random.Generator, height: int, width: int, noise_level: float
) -> np.ndarray:
    """Gray low-frequency waves plus per-pixel noise, in [0, 1]."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    fx, fy = rng.uniform(0.05, 0.3, size=2)
    phase = rng.uniform(0.0, 2 * np.pi, size=3)
    waves = np.stack(
        [
            0.5 + 0.1 * np.sin(fx * xx + fy * yy + phase[c])
            for c in range(3)
        ],
        axis=-1,
    )
    noise = rng.uniform(-noise_level, noise_level, size=(height, width, 3))
    return np.clip(waves + noise, 0.0, 1.0).astype(np.float32)


def _overlaps(candidate: Tuple[int, int, int, int], placed: Sequence[Tuple[int, int, int, int]]) -> bool:
    x1, y1, x2, y2 = candidate
    for px1, py1, px2, py2 in placed:
        if x1 < px2 and px1 < x2 and y1 < py2 and py1 < y2:
            return True
    return False


def generate_scene(
    rng: np.random.Generator,
    height: int,
    width: int,
    num_classes: int,
    min_objects: int,
    max_objects: int,
    min_box_size: int,
    max_box_size: int,
    noise_level: float,
) -> Tuple[np.ndarray, GroundTruth]:
    """One image with non-overlapping rectangles at integer pixel coordinates."""
    image = textured_background(rng, height, width, noise_level)
    n_objects = int(rng.integers(min_objects, max_objects + 1)) if max_objects > 0 else 0
    placed: List[Tuple[int, int, int, int]] = []
    classes: List[int] = []
    for _ in range(n_objects):
        for _ in range(MAX_PLACEMENT_TRIES):
            w = int(rng.integers(min_box_size, max_box_size + 1))
            h = int(rng.integers(min_box_size, max_box_size + 1))
            x1 = int(rng.integers(0, width - w + 1))
            y1 = int(rng.integers(0, height - h + 1))
            candidate = (x1, y1, x1 + w, y1 + h)
            if not _overlaps(candidate, placed):
                break
        else:
            continue
        class_id = int(rng.integers(0, num_classes))
        image[candidate[1] : candidate[3], candidate[0] : candidate[2]] = class_color(
            class_id, rng
        )
        placed.append(candidate)
        classes.append(class_id)
    corners = np.array(placed, dtype=np.float64).reshape(-1, 4)
    return image, GroundTruth.from_corners(corners, classes)


def generate_scenes(
    seed: int,
    n_images: int,
    height: int = 64,
    width: int = 64,
    class_names: Sequence[str] = ("red", "green", "blue"),
    min_objects: int = 1,
    max_objects: int = 5,
    min_box_size: int = 6,
    max_box_size: int = 20,
    noise_level: float = 0.15,
    stream: int = 0,
    fingerprint: str = "",
) -> SceneDataset:
    """
    Generate a deterministic synthetic dataset.

    Image i is drawn from its own generator derived from (seed, stream, i),
    so a dataset is reproducible and its prefix does not depend on n_images.
    """
    if n_images < 1:
        raise PreconditionError(f"n_images must be >= 1. Given {n_images}")
    if max_objects < 0 or min_objects < 0:
        raise PreconditionError("object counts must be non-negative")
    min_objects = min(min_objects, max_objects)
    max_box_size = min(max_box_size, height, width)
    if not 1 <= min_box_size <= max_box_size:
        raise PreconditionError(
            f"box sizes must satisfy 1 <= min <= max <= image size. "
            f"Given {min_box_size}, {max_box_size}"
        )

    images = np.zeros((n_images, height, width, 3), dtype=np.float32)
    ground_truths = []
    for index in range(n_images):
        rng = make_rng(seed, stream, index)
        image, gt = generate_scene(
            rng,
            height,
            width,
            len(class_names),
            min_objects,
            max_objects,
            min_box_size,
            max_box_size,
            noise_level,
        )
        images[index] = image
        ground_truths.append(gt)
    header = build_header(height, width, class_names, n_images, seed, fingerprint)
    return SceneDataset(schema=DatasetSchema(header), images=images, ground_truths=ground_truths)


def populated_scene(
    seed: int,
    height: int,
    width: int,
    class_id: int,
    n_objects: int,
    box_size: int = 8,
    noise_level: float = 0.15,
) -> Tuple[np.ndarray, GroundTruth]:
    """An image crowded with objects of a single class (semantic-prior experiments)."""
    rng = make_rng(seed, 99, class_id)
    image = textured_background(rng, height, width, noise_level)
    placed: List[Tuple[int, int, int, int]] = []
    pitch = box_size + 2
    for y1 in range(1, height - box_size, pitch):
        for x1 in range(1, width - box_size, pitch):
            if len(placed) >= n_objects:
                break
            placed.append((x1, y1, x1 + box_size, y1 + box_size))
            image[y1 : y1 + box_size, x1 : x1 + box_size] = class_color(class_id, rng)
    corners = np.array(placed, dtype=np.float64).reshape(-1, 4)
    return image, GroundTruth.from_corners(corners, [class_id] * len(placed))
