import numpy as np
import pytest

from preprocess import clutter_svd_remove, estimate_time_zero, preprocess_bscan, subtract_background, zero_timing
from scan import BScan, FrequencySweep, ScanLine
from simulate import PointScatterer, add_clutter, delay, simulate_points
from utils import DimensionError, EstimationError, ParameterError


def delayed_reference(delays, n_freqs=64, f_step=25e6):
    sweep = FrequencySweep(1e9, f_step, n_freqs)
    row = sum(np.exp(-1j * sweep.angular * t) for t in delays)
    return BScan(sweep, ScanLine(0.0, 0.1, 3), np.tile(row, (3, 1)))


class TestZeroTiming:
    def test_zero_delay_is_identity(self, small_sweep, small_scanline, soil):
        bscan = simulate_points([PointScatterer((0.4, 0.1))], small_scanline, small_sweep, soil)
        assert zero_timing(bscan, 0.0) == bscan

    def test_half_cycle(self):
        bscan = BScan(FrequencySweep(1e9, 1e6, 1), ScanLine(0.0, 0.0, 1), np.ones((1, 1)))
        out = zero_timing(bscan, 0.5e-9)
        assert out.data[0, 0] == pytest.approx(-1.0 + 0j, abs=1e-12)

    def test_undoes_system_delay(self, small_sweep, small_scanline, soil):
        bscan = simulate_points([PointScatterer((0.4, 0.1))], small_scanline, small_sweep, soil)
        restored = zero_timing(delay(bscan, 2.3e-9), 2.3e-9)
        assert np.max(np.abs(restored.data - bscan.data)) <= 1e-12

    def test_negative_delay(self, small_sweep, small_scanline):
        bscan = BScan(small_sweep, small_scanline, np.zeros((21, 41)))
        with pytest.raises(ParameterError):
            zero_timing(bscan, -1e-9)


class TestTimeZero:
    def test_recovers_pure_delay(self):
        dt = 1 / (64 * 25e6)
        t_star = 5 * dt
        assert abs(estimate_time_zero(delayed_reference([t_star])) - t_star) <= dt

    def test_no_delay(self):
        assert estimate_time_zero(delayed_reference([0.0])) == 0.0

    def test_equal_peaks_pick_the_earliest(self):
        dt = 1 / (64 * 25e6)
        assert estimate_time_zero(delayed_reference([9 * dt, 3 * dt])) == pytest.approx(3 * dt)

    def test_all_zero_reference(self):
        bscan = BScan(FrequencySweep(1e9, 25e6, 8), ScanLine(0.0, 0.1, 2), np.zeros((2, 8)))
        with pytest.raises(EstimationError):
            estimate_time_zero(bscan)


class TestClutterRemoval:
    def test_k_zero_is_identity(self, rng):
        data = rng.standard_normal((45, 104)) + 1j * rng.standard_normal((45, 104))
        bscan = BScan(FrequencySweep(1.2e9, 25e6, 104), ScanLine.from_length(0, 1.2, 45), data)
        out, report = clutter_svd_remove(bscan, 0)
        assert out == bscan
        assert report.removed_count == 0
        assert report.removed_energy_fraction == 0.0

    def test_rank_one_is_annihilated(self, rng, table1_sweep, table1_scanline):
        row = rng.standard_normal(104) + 1j * rng.standard_normal(104)
        bscan = BScan(table1_sweep, table1_scanline, np.tile(row, (45, 1)))
        out, report = clutter_svd_remove(bscan, 1)
        assert np.linalg.norm(out.data) <= 1e-12 * np.linalg.norm(bscan.data)
        assert report.removed_energy_fraction == pytest.approx(1.0)

    def test_full_rank_removal(self, rng, table1_sweep, table1_scanline):
        data = rng.standard_normal((45, 104)) + 1j * rng.standard_normal((45, 104))
        bscan = BScan(table1_sweep, table1_scanline, data)
        out, _ = clutter_svd_remove(bscan, 45)
        assert np.linalg.norm(out.data) <= 1e-10 * np.linalg.norm(data)

    def test_energy_and_orthogonality(self, rng, table1_sweep, table1_scanline):
        data = rng.standard_normal((45, 104)) + 1j * rng.standard_normal((45, 104))
        bscan = BScan(table1_sweep, table1_scanline, data)
        fractions = []
        for k in range(5):
            out, report = clutter_svd_remove(bscan, k)
            s = report.singular_values
            assert np.all(np.diff(s) <= 0)
            assert np.linalg.norm(out.data) ** 2 == pytest.approx(np.sum(s[k:] ** 2), rel=1e-10)
            removed = data - out.data
            inner = abs(np.vdot(removed, out.data))
            assert inner <= 1e-10 * np.linalg.norm(data) ** 2
            fractions.append(report.removed_energy_fraction)
        assert all(b >= a for a, b in zip(fractions, fractions[1:]))

    def test_position_invariant_clutter_without_signal(self, table1_sweep, table1_scanline):
        empty = BScan(table1_sweep, table1_scanline, np.zeros((45, 104)))
        out, _ = clutter_svd_remove(add_clutter(empty, 3.0), 1)
        assert np.max(np.abs(out.data)) <= 1e-12 * 3.0 * 45

    def test_k_out_of_range(self, rng, small_sweep, small_scanline):
        bscan = BScan(small_sweep, small_scanline, rng.standard_normal((21, 41)))
        with pytest.raises(ParameterError):
            clutter_svd_remove(bscan, 22)
        with pytest.raises(ParameterError):
            clutter_svd_remove(bscan, -1)

    def test_tied_singular_values_are_flagged(self):
        bscan = BScan(FrequencySweep(1e9, 1e6, 4), ScanLine(0.0, 0.1, 3), np.eye(3, 4))
        _, report = clutter_svd_remove(bscan, 1)
        assert report.degenerate
        assert report.to_dict()['removed_count'] == 1


class TestPreprocess:
    def test_band_then_clean(self, table1_sweep, table1_scanline, soil):
        bscan = simulate_points([PointScatterer((0.6, 0.15))], table1_scanline, table1_sweep, soil)
        out, report = preprocess_bscan(add_clutter(bscan, 10.0), t0=0.0, k=1, band=(4, 92))
        assert out.shape == (45, 89)
        assert out.sweep.f_start == pytest.approx(1.3e9)
        assert report.removed_energy_fraction > 0.9


class TestBackground:
    def test_same_scene_cancels(self, small_sweep, small_scanline, soil):
        bscan = add_clutter(simulate_points([PointScatterer((0.4, 0.1))], small_scanline, small_sweep, soil), 5.0)
        assert not np.any(subtract_background(bscan, bscan).data)

    def test_clutter_and_pipe_cancel(self, table1_sweep, table1_scanline, soil):
        pipe = simulate_points([PointScatterer((0.6, 0.15))], table1_scanline, table1_sweep, soil)
        target = simulate_points([PointScatterer((0.3, 0.05), 0.2)], table1_scanline, table1_sweep, soil)
        scan = add_clutter(pipe.with_data(pipe.data + target.data), 10.0)
        out, report = preprocess_bscan(scan, k=0, band=(4, 92), background=add_clutter(pipe, 10.0))
        assert report.removed_count == 0
        assert np.allclose(out.data, target.data[:, 4:93], atol=1e-12)

    def test_geometry_must_match(self, small_sweep, small_scanline, table1_sweep, table1_scanline):
        small = BScan(small_sweep, small_scanline, np.ones((21, 41)))
        large = BScan(table1_sweep, table1_scanline, np.ones((45, 104)))
        with pytest.raises(DimensionError):
            subtract_background(small, large)
