import numpy as np
import pytest

from errors import DatasetFormatError, PreconditionError
from preprocessing.scenes import generate_scenes, populated_scene
from schema.dataset_schema import (
    DATASET_MAGIC,
    DatasetSchema,
    GroundTruth,
    SceneDataset,
    build_header,
    read_dataset,
    write_dataset,
)


def test_write_then_read_is_lossless(tmp_path, tiny_dataset):
    file_path = str(tmp_path / "scenes.nmsds")
    write_dataset(tiny_dataset, file_path)
    loaded = read_dataset(file_path)

    assert len(loaded) == len(tiny_dataset)
    assert loaded.schema.header == tiny_dataset.schema.header
    np.testing.assert_array_equal(loaded.images, tiny_dataset.images)
    for original, restored in zip(tiny_dataset.ground_truths, loaded.ground_truths):
        np.testing.assert_array_equal(restored.corners(), original.corners())
        assert restored.classes == original.classes


def test_images_without_objects_survive_the_file_format(tmp_path):
    header = build_header(8, 8, ["a"], count=2, generator_seed=0)
    dataset = SceneDataset(
        schema=DatasetSchema(header),
        images=np.full((2, 8, 8, 3), 0.5, dtype=np.float32),
        ground_truths=[GroundTruth(), GroundTruth.from_corners([[1, 1, 4, 4]], [0])],
    )
    file_path = str(tmp_path / "sparse.nmsds")
    write_dataset(dataset, file_path)
    loaded = read_dataset(file_path)
    assert [len(gt) for gt in loaded.ground_truths] == [0, 1]


def test_missing_file_names_the_expected_version(tmp_path):
    with pytest.raises(DatasetFormatError, match="format_version"):
        read_dataset(str(tmp_path / "absent.nmsds"))


def test_wrong_magic_is_rejected(tmp_path):
    file_path = tmp_path / "other.bin"
    file_path.write_bytes(b"NOTADATASET" + b"\0" * 64)
    with pytest.raises(DatasetFormatError):
        read_dataset(str(file_path))


def test_other_format_version_is_rejected(tmp_path, tiny_dataset):
    file_path = tmp_path / "old.nmsds"
    write_dataset(tiny_dataset, str(file_path))
    payload = file_path.read_bytes()
    file_path.write_bytes(payload.replace(b'"format_version": 1', b'"format_version": 7', 1))
    with pytest.raises(DatasetFormatError):
        read_dataset(str(file_path))


def test_truncated_and_padded_files_are_rejected(tmp_path, tiny_dataset):
    file_path = tmp_path / "scenes.nmsds"
    write_dataset(tiny_dataset, str(file_path))
    payload = file_path.read_bytes()

    file_path.write_bytes(payload[:-100])
    with pytest.raises(DatasetFormatError):
        read_dataset(str(file_path))

    file_path.write_bytes(payload + b"\0\0\0\0")
    with pytest.raises(DatasetFormatError):
        read_dataset(str(file_path))


def test_magic_prefixes_every_file(tmp_path, tiny_dataset):
    file_path = tmp_path / "scenes.nmsds"
    write_dataset(tiny_dataset, str(file_path))
    assert file_path.read_bytes().startswith(DATASET_MAGIC)


def test_generation_is_deterministic_and_prefix_stable():
    a = generate_scenes(seed=3, n_images=6)
    b = generate_scenes(seed=3, n_images=6)
    longer = generate_scenes(seed=3, n_images=10)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.images, longer.images[:6])
    assert [gt.classes for gt in a.ground_truths] == [
        gt.classes for gt in longer.ground_truths[:6]
    ]

    other_stream = generate_scenes(seed=3, n_images=6, stream=1)
    assert not np.array_equal(a.images, other_stream.images)


def test_generated_scenes_respect_bounds():
    data = generate_scenes(
        seed=5, n_images=20, min_objects=2, max_objects=4, min_box_size=6, max_box_size=20
    )
    assert data.images.dtype == np.float32
    assert data.images.min() >= 0.0 and data.images.max() <= 1.0
    for gt in data.ground_truths:
        assert len(gt) <= 4
        corners = gt.corners()
        assert np.all(corners >= 0.0) and np.all(corners <= 64.0)
        sizes = corners[:, 2:] - corners[:, :2]
        assert np.all(sizes >= 6) and np.all(sizes <= 20)
        assert all(0 <= c < 3 for c in gt.classes)
        # objects never overlap each other
        for i in range(len(corners)):
            for j in range(i + 1, len(corners)):
                a, b = corners[i], corners[j]
                assert not (a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3])


def test_generation_preconditions():
    with pytest.raises(PreconditionError):
        generate_scenes(seed=0, n_images=0)
    with pytest.raises(PreconditionError):
        generate_scenes(seed=0, n_images=2, min_box_size=0)


def test_subset_and_with_images_keep_ground_truth(tiny_dataset):
    part = tiny_dataset.subset([2, 0])
    assert len(part) == 2
    assert part.schema.count == 2
    assert part.ground_truths[1] is tiny_dataset.ground_truths[0]

    moved = part.with_images(np.zeros_like(part.images))
    assert moved.ground_truths is part.ground_truths
    assert moved.images.sum() == 0


def test_populated_scene_is_single_class():
    image, gt = populated_scene(seed=1, height=64, width=64, class_id=2, n_objects=16)
    assert image.shape == (64, 64, 3)
    assert len(gt) == 16
    assert set(gt.classes) == {2}


def test_header_validation_rejects_duplicate_classes():
    with pytest.raises(ValueError):
        DatasetSchema(build_header(8, 8, ["a", "a"], count=1, generator_seed=0))
