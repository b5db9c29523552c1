import numpy as np
import pytest

from preprocessing.targets import GridLayout, assign_targets, flip_horizontal, scale_preference
from schema.dataset_schema import GroundTruth

LAYOUT = GridLayout(64, 64, (2, 4, 8))


def test_layout_cells_are_flattened_finest_first():
    assert LAYOUT.grid_sizes == [(32, 32), (16, 16), (8, 8)]
    assert LAYOUT.scale_offsets == [0, 1024, 1280]
    assert LAYOUT.num_cells == 1344
    table = LAYOUT.cell_table()
    assert table.shape == (1344, 3)
    index = LAYOUT.cell_index(scale=1, row=3, col=5)
    assert tuple(table[index]) == (5.0, 3.0, 4.0)


def test_scale_preference_follows_box_size():
    assert scale_preference(LAYOUT, 2.0, 2.0)[0] == 0
    assert scale_preference(LAYOUT, 4.0, 4.0)[0] == 1
    assert scale_preference(LAYOUT, 30.0, 30.0)[0] == 2


def test_every_box_gets_exactly_one_cell():
    gt = GroundTruth.from_corners(
        [[0, 0, 8, 8], [30, 30, 50, 50], [40, 2, 44, 6]], [0, 1, 2]
    )
    targets = assign_targets(gt, LAYOUT)
    assert int(targets.positive.sum()) == 3
    assert sorted(targets.classes[targets.positive].tolist()) == [0, 1, 2]
    assert (targets.classes[~targets.positive] == -1).all()
    positive_boxes = targets.boxes[targets.positive].numpy()
    assert sorted(positive_boxes[:, 2].tolist()) == [4.0, 8.0, 20.0]


def test_colliding_boxes_fall_back_to_another_scale():
    gt = GroundTruth.from_corners([[10, 10, 18, 18], [11, 11, 19, 19]], [0, 1])
    targets = assign_targets(gt, LAYOUT)
    assert int(targets.positive.sum()) == 2


def test_empty_ground_truth_is_all_negative():
    targets = assign_targets(GroundTruth(), LAYOUT)
    assert not targets.positive.any()


def test_flip_is_an_involution(tiny_dataset):
    image, gt = tiny_dataset.images[0], tiny_dataset.ground_truths[0]
    flipped, flipped_gt = flip_horizontal(image, gt)
    np.testing.assert_array_equal(flipped[:, 0], image[:, -1])
    back, back_gt = flip_horizontal(flipped, flipped_gt)
    np.testing.assert_array_equal(back, image)
    np.testing.assert_allclose(back_gt.corners(), gt.corners())
    assert back_gt.classes == gt.classes


def test_flip_mirrors_box_coordinates():
    gt = GroundTruth.from_corners([[2, 5, 10, 9]], [1])
    _, flipped = flip_horizontal(np.zeros((16, 20, 3), np.float32), gt)
    assert flipped.corners().tolist() == [[10.0, 5.0, 18.0, 9.0]]
    assert flipped.boxes[0].w == pytest.approx(8.0)
