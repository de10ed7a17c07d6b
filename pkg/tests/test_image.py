import cv2
import numpy as np
import pytest

from imaging import form_image, load_image_values, save_image
from imaging.image import Image
from scan import BScan, ReconstructionGrid
from utils import ConfigError, DimensionError, FormatError


@pytest.fixture
def grid():
    return ReconstructionGrid(0.0, 0.3, 0.0, 0.2, 3, 2)


class TestImage:
    def test_values_take_grid_shape(self, grid):
        image = Image(grid, np.arange(6), 'BPA')
        assert image.values.shape == (2, 3)
        assert image.values[1, 0] == 3

    def test_rejects_bad_input(self, grid):
        with pytest.raises(DimensionError):
            Image(grid, [np.nan] * 6, 'BPA')
        with pytest.raises(ValueError):
            Image(grid, np.zeros(6), 'SAR')

    def test_normalized(self, grid):
        image, norm = Image(grid, [3, 0, 0, 0, 4j, 0], 'BAA').normalized()
        assert norm == 5
        assert image.norm == pytest.approx(1.0)
        zero, norm = Image(grid, np.zeros(6), 'BAA').normalized()
        assert norm == 0 and not np.any(zero.values)

    def test_peak_cell(self, grid):
        image = Image(grid, [0, 0, 0, 0, 0, -7], 'BPA')
        assert image.peak_cell() == (1, 2)
        assert image.sidecar()['peak_position_m'] == pytest.approx([0.25, 0.15])


class TestFiles:
    def test_save_and_load(self, grid, tmp_path):
        image = Image(grid, [1, 2j, 0, 0, 0, 5], 'BAA', band=(4, 92), keep=3)
        written = save_image(image, tmp_path / 'img' / 'scene_BAA')
        assert [p.suffix for p in written] == ['.csv', '.json']
        magnitude, sidecar = load_image_values(tmp_path / 'img' / 'scene_BAA')
        assert np.array_equal(magnitude, image.magnitude)
        assert sidecar['band'] == [4, 92]
        assert sidecar['keep'] == 3
        assert sidecar['peak_cell'] == [1, 2]
        assert sidecar['grid']['nx'] == 3

    def test_pgm(self, grid, tmp_path):
        save_image(Image(grid, [0, 1, 2, 3, 4, 5], 'BPA'), tmp_path / 'p', pgm=True)
        pixels = cv2.imread(str(tmp_path / 'p.pgm'), cv2.IMREAD_GRAYSCALE)
        assert pixels.shape == (2, 3)
        assert pixels.min() == 0 and pixels.max() == 255

    def test_flat_pgm_is_black(self, grid, tmp_path):
        save_image(Image(grid, np.ones(6), 'BPA'), tmp_path / 'flat', pgm=True)
        assert not np.any(cv2.imread(str(tmp_path / 'flat.pgm'), cv2.IMREAD_GRAYSCALE))

    def test_corrupt_csv(self, grid, tmp_path):
        save_image(Image(grid, np.ones(6), 'BPA'), tmp_path / 'c')
        (tmp_path / 'c.csv').write_text('1,2,x\n', encoding='utf-8')
        with pytest.raises(FormatError):
            load_image_values(tmp_path / 'c')


def test_unknown_algorithm(grid, small_sweep, small_scanline, soil):
    bscan = BScan(small_sweep, small_scanline, np.zeros((21, 41)))
    with pytest.raises(ConfigError):
        form_image('SAR', bscan, grid, soil)
