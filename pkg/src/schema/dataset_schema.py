import io
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from data_models.dataset_validator import (
    DATASET_FORMAT_VERSION,
    validate_dataset_header,
)
from errors import DatasetFormatError, PreconditionError
from geometry.boxes import BBox
from utils import atomic_write_bytes

DATASET_MAGIC = b"NMSLABDS"


@dataclass
class GroundTruth:
    """Boxes and class ids of one image."""

    boxes: List[BBox] = field(default_factory=list)
    classes: List[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.boxes) != len(self.classes):
            raise PreconditionError(
                f"{len(self.boxes)} boxes but {len(self.classes)} class ids"
            )

    def __len__(self) -> int:
        return len(self.boxes)

    def corners(self) -> np.ndarray:
        if not self.boxes:
            return np.zeros((0, 4), dtype=np.float64)
        return np.array([b.corners for b in self.boxes], dtype=np.float64)

    @classmethod
    def from_corners(cls, corners: np.ndarray, classes: Sequence[int]) -> "GroundTruth":
        corners = np.asarray(corners, dtype=np.float64).reshape(-1, 4)
        return cls(
            boxes=[BBox.from_corners(*map(float, row)) for row in corners],
            classes=[int(c) for c in classes],
        )


class DatasetSchema:
    """
    Provides access to the header of a scene dataset: image geometry, class
    names and how the data was generated.
    """

    def __init__(self, header: dict) -> None:
        self.header = validate_dataset_header(header)

    @property
    def format_version(self) -> int:
        return self.header["format_version"]

    @property
    def height(self) -> int:
        return self.header["height"]

    @property
    def width(self) -> int:
        return self.header["width"]

    @property
    def class_names(self) -> List[str]:
        return list(self.header["class_names"])

    @property
    def num_classes(self) -> int:
        return len(self.header["class_names"])

    @property
    def count(self) -> int:
        return self.header["count"]

    @property
    def generator_seed(self) -> int:
        return self.header["generator_seed"]

    @property
    def fingerprint(self) -> str:
        return self.header.get("fingerprint", "")


@dataclass
class SceneDataset:
    """Images (N, H, W, 3) float32 in [0, 1] with their ground truth."""

    schema: DatasetSchema
    images: np.ndarray
    ground_truths: List[GroundTruth]

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise PreconditionError(
                f"images must have shape (N, H, W, 3). Given {self.images.shape}"
            )
        if len(self.ground_truths) != self.images.shape[0]:
            raise PreconditionError("one GroundTruth per image is required")

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def subset(self, indices: Sequence[int]) -> "SceneDataset":
        indices = list(indices)
        header = dict(self.schema.header, count=len(indices))
        return SceneDataset(
            schema=DatasetSchema(header),
            images=self.images[indices],
            ground_truths=[self.ground_truths[i] for i in indices],
        )

    def with_images(self, images: np.ndarray) -> "SceneDataset":
        """Same ground truth, different pixels (e.g. attacked images)."""
        return SceneDataset(
            schema=self.schema,
            images=np.asarray(images, dtype=np.float32),
            ground_truths=self.ground_truths,
        )


def build_header(
    height: int,
    width: int,
    class_names: Sequence[str],
    count: int,
    generator_seed: int,
    fingerprint: str = "",
) -> Dict:
    return {
        "format_version": DATASET_FORMAT_VERSION,
        "height": int(height),
        "width": int(width),
        "class_names": list(class_names),
        "count": int(count),
        "generator_seed": int(generator_seed),
        "fingerprint": fingerprint,
    }


def write_dataset(dataset: SceneDataset, file_path: str) -> None:
    """
    Write a dataset file: magic, uint32 header length, JSON header, then per
    image float32 pixels, uint32 box count, float64 corner boxes, int32 classes.
    """
    header = dict(dataset.schema.header, count=len(dataset))
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buffer = io.BytesIO()
    buffer.write(DATASET_MAGIC)
    buffer.write(np.array([len(header_bytes)], dtype="<u4").tobytes())
    buffer.write(header_bytes)
    for image, gt in zip(dataset.images, dataset.ground_truths):
        buffer.write(np.ascontiguousarray(image, dtype="<f4").tobytes())
        buffer.write(np.array([len(gt)], dtype="<u4").tobytes())
        buffer.write(np.ascontiguousarray(gt.corners(), dtype="<f8").tobytes())
        buffer.write(np.array(gt.classes, dtype="<i4").tobytes())
    atomic_write_bytes(file_path, buffer.getvalue())


def read_dataset(file_path: str) -> SceneDataset:
    """
    Read a dataset file written by write_dataset.

    Raises:
        DatasetFormatError: if the file is missing, truncated or of another version.
    """
    if not os.path.isfile(file_path):
        raise DatasetFormatError(
            f"Dataset file not found: '{file_path}'. Run gen-data first "
            f"(expected format_version {DATASET_FORMAT_VERSION})."
        )
    with open(file_path, "rb") as file:
        payload = file.read()
    if payload[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise DatasetFormatError(f"'{file_path}' is not a scene dataset file")
    offset = len(DATASET_MAGIC)
    try:
        (header_len,) = np.frombuffer(payload, dtype="<u4", count=1, offset=offset)
        offset += 4
        header = json.loads(payload[offset : offset + int(header_len)].decode("utf-8"))
        offset += int(header_len)
        schema = DatasetSchema(header)
    except ValueError as exc:
        raise DatasetFormatError(
            f"Unreadable header in '{file_path}' (expected format_version "
            f"{DATASET_FORMAT_VERSION}): {exc}"
        ) from exc

    h, w = schema.height, schema.width
    pixels = h * w * 3
    images = np.zeros((schema.count, h, w, 3), dtype=np.float32)
    ground_truths = []
    try:
        for index in range(schema.count):
            image = np.frombuffer(payload, dtype="<f4", count=pixels, offset=offset)
            images[index] = image.reshape(h, w, 3)
            offset += pixels * 4
            (n_boxes,) = np.frombuffer(payload, dtype="<u4", count=1, offset=offset)
            n_boxes = int(n_boxes)
            offset += 4
            corners = np.frombuffer(payload, dtype="<f8", count=n_boxes * 4, offset=offset)
            offset += n_boxes * 32
            classes = np.frombuffer(payload, dtype="<i4", count=n_boxes, offset=offset)
            offset += n_boxes * 4
            ground_truths.append(GroundTruth.from_corners(corners, classes))
    except ValueError as exc:
        raise DatasetFormatError(
            f"'{file_path}' is truncated: header declares {schema.count} images"
        ) from exc
    if offset != len(payload):
        raise DatasetFormatError(
            f"'{file_path}' has {len(payload) - offset} trailing bytes; "
            f"header count {schema.count} does not match the records"
        )
    return SceneDataset(schema=schema, images=images, ground_truths=ground_truths)

