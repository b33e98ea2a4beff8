import numpy as np
import pytest

from python_ruelle.partition import (
    GridPartition,
    box_volume,
    center,
    centers,
    from_json,
    locate,
    locate_many,
    to_json,
)


@pytest.fixture
def unit():
    return GridPartition.uniform([0.0], [1.0], [10])


def test_locate_boundaries(unit):
    assert locate(unit, 0.0) == 0
    assert locate(unit, 0.1) == 1
    assert locate(unit, 1.0) == 9
    assert locate(unit, 1.5) is None
    assert locate(unit, -1e-12) is None


def test_locate_rejects_non_finite(unit):
    with pytest.raises(ValueError):
        locate(unit, np.nan)
    with pytest.raises(ValueError):
        locate_many(unit, np.ones((3, 2)))


def test_row_major_numbering():
    grid = GridPartition.uniform([0.0, 0.0], [2.0, 3.0], [2, 3])
    assert grid.n_boxes == 6
    assert locate(grid, [0.5, 2.5]) == 2
    assert locate(grid, [1.5, 0.5]) == 3
    np.testing.assert_array_equal(
        locate_many(grid, [[0.5, 0.5], [1.5, 2.5], [3.0, 0.0]]), [0, 5, -1]
    )


def test_centers():
    assert center(GridPartition.uniform([0.0], [1.0], [10]), 0) == pytest.approx([0.05])
    assert center(GridPartition.uniform([0.0], [1.0], [1]), 0) == pytest.approx([0.5])
    fine = GridPartition.uniform([-6.0, -6.0], [6.0, 6.0], [300, 300])
    assert center(fine, 0) == pytest.approx([-5.98, -5.98])
    with pytest.raises(ValueError):
        center(fine, fine.n_boxes)


def test_center_lookup_round_trip():
    grid = GridPartition.uniform([-6.0, -2.0], [6.0, 2.0], [30, 7])
    boxes = np.arange(grid.n_boxes)
    np.testing.assert_array_equal(locate_many(grid, centers(grid)), boxes)


def test_invalid_partitions():
    with pytest.raises(ValueError):
        GridPartition.uniform([1.0], [0.0], [4])
    with pytest.raises(ValueError):
        GridPartition.uniform([0.0], [1.0], [0])
    with pytest.raises(ValueError):
        GridPartition(dim=2, lows=[0.0], highs=[1.0], cells=[2])


def test_volume_and_json():
    grid = GridPartition.uniform([-6.0, -6.0], [6.0, 6.0], [100])
    assert grid.cells == [100, 100]
    assert box_volume(grid) == pytest.approx(0.12**2)
    assert from_json(to_json(grid)) == grid
