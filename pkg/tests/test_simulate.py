import math

import numpy as np
import pytest

from preprocess import clutter_svd_remove
from scan import BScan, FrequencySweep, ReconstructionGrid, ScanLine, wavenumber
from simulate import (CORRUPT_FNS, ContrastMap, MoistScene, PointScatterer, SceneSpec, add_clutter, add_noise,
                      corrupt, delay, medium_scatterers, moist_contrast, render_scene, simulate_born,
                      simulate_points)
from utils import ConfigError, DimensionError, GeometryError, ParameterError


class TestPoints:
    def test_unit_modulus_in_lossless_soil(self, table1_sweep, table1_scanline, soil):
        bscan = simulate_points([PointScatterer((0.6, 0.12))], table1_scanline, table1_sweep, soil)
        assert np.allclose(np.abs(bscan.data), 1.0, atol=1e-12)

    def test_equidistant_positions_give_equal_rows(self, small_sweep, soil):
        scanline = ScanLine(0.0, 0.1, 11)
        bscan = simulate_points([PointScatterer((0.5, 0.2))], scanline, small_sweep, soil)
        assert np.allclose(bscan.data[4], bscan.data[6], atol=1e-9)

    def test_phase_grows_with_distance(self, soil):
        sweep = FrequencySweep(1.5e9, 1e6, 1)
        scanline = ScanLine(0.0, 0.01, 30)
        bscan = simulate_points([PointScatterer((0.0, 0.05))], scanline, sweep, soil)
        phase = np.unwrap(np.angle(bscan.data[:, 0]))
        assert np.all(np.diff(phase) < 0)

    def test_scatterer_above_surface(self):
        with pytest.raises(GeometryError):
            PointScatterer((0.5, 0.0))

    def test_needs_a_scatterer(self, small_sweep, small_scanline, soil):
        with pytest.raises(ParameterError):
            simulate_points([], small_scanline, small_sweep, soil)

    def test_medium_is_seeded(self):
        a = medium_scatterers((0.0, 1.0, 0.05, 0.3), 10, 0.1, seed=3)
        b = medium_scatterers((0.0, 1.0, 0.05, 0.3), 10, 0.1, seed=3)
        assert a == b
        assert all(0.05 <= p.position[1] <= 0.3 for p in a)
        assert all(abs(p.amplitude) == pytest.approx(0.1) for p in a)


class TestBorn:
    def test_zero_contrast(self, small_grid, small_scanline, small_sweep, soil):
        contrast = ContrastMap(small_grid, np.zeros(small_grid.n_cells))
        bscan = simulate_born(contrast, small_scanline, small_sweep, soil)
        assert not np.any(bscan.data)

    def test_single_entry_by_hand(self, soil):
        grid = ReconstructionGrid(0.49, 0.51, 0.09, 0.11, 1, 1)
        scanline = ScanLine(0.5, 0.0, 1)
        sweep = FrequencySweep(2e9, 1e6, 1)
        tau = 0.3 + 0.1j
        bscan = simulate_born(ContrastMap(grid, [tau]), scanline, sweep, soil)

        from scipy import special
        k = wavenumber(2e9, soil)
        a, r = grid.radius, 0.1
        gamma = (-a * 1j * math.pi * (k / 2) * np.exp(-1j * k * r) * special.j1(k.real * a)
                 * (special.j0(k.real * r) - 1j * special.y0(k.real * r)))
        assert bscan.data[0, 0] == pytest.approx(gamma * tau, rel=1e-10)

    def test_linearity(self, small_grid, small_scanline, small_sweep, soil, rng):
        tau = rng.standard_normal(small_grid.n_cells) + 1j * rng.standard_normal(small_grid.n_cells)
        one = simulate_born(ContrastMap(small_grid, tau), small_scanline, small_sweep, soil)
        scaled = simulate_born(ContrastMap(small_grid, (2 - 1j) * tau), small_scanline, small_sweep, soil)
        assert np.max(np.abs(scaled.data - (2 - 1j) * one.data)) <= 1e-12 * np.max(np.abs(scaled.data))

    def test_contrast_shape_is_checked(self, small_grid):
        with pytest.raises(DimensionError):
            ContrastMap(small_grid, np.zeros(3))

    def test_moist_contrast(self, desk_grid):
        scene = MoistScene()
        level = scene.moist_level(50.0)
        tau = moist_contrast(desk_grid, 50.0, scene).tau
        assert tau.shape == desk_grid.shape
        values = set(np.round(np.unique(tau.real), 12))
        assert values == {0.0, round(level, 12), scene.pipe_contrast}
        # moist patch sits above the pipe
        moist_rows = np.nonzero(np.isclose(tau.real, level).any(axis=1))[0]
        pipe_rows = np.nonzero((tau.real == scene.pipe_contrast).any(axis=1))[0]
        assert moist_rows.max() < pipe_rows.min()

    def test_moist_laws(self):
        saturating, linear = MoistScene(), MoistScene(moist_law='linear')
        assert saturating.moist_level(0.0) == 0.0 and linear.moist_level(None) == 0.0
        assert saturating.moist_level(100.0) == pytest.approx(saturating.moist_gain, rel=1e-12)
        assert linear.moist_level(50.0) == pytest.approx(0.05, rel=1e-12)
        assert saturating.moist_level(50.0) > linear.moist_level(50.0)
        sm = np.array([12.5, 25.0, 50.0, 100.0])
        expected = -np.expm1(-saturating.moist_rate * sm)
        levels = np.array([saturating.moist_level(s) for s in sm])
        assert np.allclose(levels / levels[-1], expected / expected[-1], rtol=1e-12)

    @pytest.mark.parametrize('kwargs', [{'moist_law': 'cubic'}, {'moist_rate': 0.0}])
    def test_invalid_moist_scene(self, kwargs):
        with pytest.raises(ConfigError):
            MoistScene(**kwargs)


class TestCorruption:
    def test_zero_clutter_is_identity(self, small_sweep, small_scanline, soil):
        bscan = simulate_points([PointScatterer((0.4, 0.1))], small_scanline, small_sweep, soil)
        assert add_clutter(bscan, 0.0) == bscan

    def test_clutter_is_rank_one(self, table1_sweep, table1_scanline):
        empty = BScan(table1_sweep, table1_scanline, np.zeros((45, 104)))
        s = np.linalg.svd(add_clutter(empty, 2.5).data, compute_uv=False)
        assert s[1] / s[0] <= 1e-12

    def test_one_component_removes_clutter(self, table1_sweep, table1_scanline):
        empty = BScan(table1_sweep, table1_scanline, np.zeros((45, 104)))
        out, _ = clutter_svd_remove(add_clutter(empty, 2.5), 1)
        assert np.linalg.norm(out.data) <= 1e-10

    def test_negative_clutter_level(self, small_sweep, small_scanline):
        with pytest.raises(ParameterError):
            add_clutter(BScan(small_sweep, small_scanline, np.ones((21, 41))), -1.0)

    def test_noise_hits_the_requested_snr(self, table1_sweep, table1_scanline, soil):
        bscan = simulate_points([PointScatterer((0.6, 0.12))], table1_scanline, table1_sweep, soil)
        noisy = add_noise(bscan, 20.0, seed=11)
        noise = noisy.data - bscan.data
        snr = 10 * np.log10(np.mean(np.abs(bscan.data) ** 2) / np.mean(np.abs(noise) ** 2))
        assert abs(snr - 20.0) <= 0.5

    def test_noise_is_seeded(self, small_sweep, small_scanline):
        bscan = BScan(small_sweep, small_scanline, np.ones((21, 41)))
        assert add_noise(bscan, 10.0, seed=5) == add_noise(bscan, 10.0, seed=5)
        assert add_noise(bscan, 10.0, seed=5) != add_noise(bscan, 10.0, seed=6)

    def test_infinite_snr_is_identity(self, small_sweep, small_scanline):
        bscan = BScan(small_sweep, small_scanline, np.ones((21, 41)))
        assert add_noise(bscan, math.inf, seed=0) is bscan

    def test_noise_needs_signal(self, small_sweep, small_scanline):
        with pytest.raises(ParameterError):
            add_noise(BScan(small_sweep, small_scanline, np.zeros((21, 41))), 10.0, seed=0)

    def test_corrupt_policy(self, small_sweep, small_scanline):
        bscan = BScan(small_sweep, small_scanline, np.ones((21, 41)))
        assert set(CORRUPT_FNS) == {'delay', 'clutter', 'noise'}
        assert corrupt(bscan, 'delay', {'delay_s': 1e-9}) == delay(bscan, 1e-9)
        assert corrupt(bscan, '') is bscan
        with pytest.raises(ConfigError):
            corrupt(bscan, 'blur')


class TestScenes:
    def test_render_is_deterministic(self, desk_grid, small_sweep, small_scanline, soil):
        spec = SceneSpec('wet', sm=50.0, moist=True, clutter_level=0.5, snr_db=30.0,
                         medium={'region': [0.4, 0.8, 0.05, 0.2], 'count': 5, 'amplitude': 0.05})
        seed = np.random.SeedSequence([0, 1])
        one = render_scene(spec, small_sweep, small_scanline, soil, desk_grid, seed=seed)
        two = render_scene(spec, small_sweep, small_scanline, soil, desk_grid, seed=seed)
        assert one == two

    def test_moist_scene_needs_grid(self, small_sweep, small_scanline, soil):
        with pytest.raises(ConfigError):
            render_scene(SceneSpec('wet', sm=10.0, moist=True), small_sweep, small_scanline, soil)

    def test_empty_scene_is_zero(self, small_sweep, small_scanline, soil):
        bscan = render_scene(SceneSpec('empty'), small_sweep, small_scanline, soil)
        assert not np.any(bscan.data)
