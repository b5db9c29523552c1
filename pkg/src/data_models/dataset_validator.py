from typing import List

from pydantic import BaseModel, ValidationError, validator

DATASET_FORMAT_VERSION = 1


class DatasetHeaderModel(BaseModel):
    """
    Header of a synthetic scene dataset file. Validates the format version,
    the image geometry and the class list.
    """

    format_version: int
    height: int
    width: int
    class_names: List[str]
    count: int
    generator_seed: int
    fingerprint: str = ""

    @validator("format_version", allow_reuse=True)
    def supported_version(cls, v):
        if v != DATASET_FORMAT_VERSION:
            raise ValueError(
                f"format_version must be {DATASET_FORMAT_VERSION}. Given {v}"
            )
        return v

    @validator("height", "width", allow_reuse=True)
    def positive_extent(cls, v):
        if v <= 0:
            raise ValueError(f"image extents must be positive. Given {v}")
        return v

    @validator("class_names", allow_reuse=True)
    def non_empty_unique_classes(cls, v):
        if not v:
            raise ValueError("class_names must not be empty")
        if len(set(v)) != len(v):
            raise ValueError(f"Duplicate class names found: {v}")
        return v

    @validator("count", allow_reuse=True)
    def non_negative_count(cls, v):
        if v < 0:
            raise ValueError(f"count must be non-negative. Given {v}")
        return v


def validate_dataset_header(header: dict) -> dict:
    """
    Validate a dataset header dictionary.

    Raises:
        ValueError: if the header is invalid

    Returns:
        dict: validated header
    """
    try:
        return DatasetHeaderModel.parse_obj(header).dict()
    except ValidationError as exc:
        raise ValueError(f"Invalid dataset header: {exc}") from exc
