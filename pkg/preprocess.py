"""Background subtraction, zero timing and SVD clutter reduction of B-scans."""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from scan import extract_band
from utils import DimensionError, EstimationError, ParameterError

logger = logging.getLogger(__name__)

# relative gap under which sigma_k and sigma_{k+1} are treated as tied
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ClutterReport:
    removed_count: int
    singular_values: np.ndarray
    removed_energy_fraction: float
    degenerate: bool = False

    def to_dict(self):
        return {'removed_count': self.removed_count,
                'singular_values': [float(s) for s in self.singular_values],
                'removed_energy_fraction': float(self.removed_energy_fraction),
                'degenerate': self.degenerate}


def zero_timing(bscan, t0):
    """Remove the internal system delay t0 by the phase ramp e^{+j w t0}."""
    if t0 < 0:
        raise ParameterError(f't0 must be >= 0, got {t0}')
    if t0 == 0:
        return bscan
    ramp = np.exp(1j * bscan.sweep.angular * t0)
    return bscan.with_data(bscan.data * ramp[None, :])


def estimate_time_zero(reference):
    """Delay of the strongest return in the mean A-scan of a reference scan.

    The delay axis is the inverse DFT of the sweep, bin width 1/(N_f f_step);
    among equal peaks the earliest bin wins.
    """
    mean_ascan = reference.data.mean(axis=0)
    if not np.any(mean_ascan):
        raise EstimationError('reference B-scan has an all-zero mean A-scan')
    profile = np.abs(np.fft.ifft(mean_ascan))
    peak = profile.max()
    index = int(np.flatnonzero(profile >= peak * (1 - 1e-9))[0])
    t0 = index / (reference.sweep.n_freqs * reference.sweep.f_step)
    logger.info('estimated time zero %.4g s (bin %d)', t0, index)
    return t0


def clutter_svd_remove(bscan, k):
    """Subtract the k dominant singular components of the positions x frequencies matrix."""
    n_pos, n_freq = bscan.shape
    if not 0 <= k <= min(n_pos, n_freq):
        raise ParameterError(f'clutter k must be in [0, {min(n_pos, n_freq)}], got {k}')
    u, s, vh = linalg.svd(bscan.data, full_matrices=False)
    energy = float(np.sum(s ** 2))
    removed = float(np.sum(s[:k] ** 2)) / energy if energy > 0 else 0.0
    degenerate = bool(0 < k < len(s) and s[0] > 0 and abs(s[k - 1] - s[k]) <= TIE_TOLERANCE * s[0])
    if degenerate:
        logger.warning('clutter subspace not unique: sigma_%d == sigma_%d', k, k + 1)
    report = ClutterReport(k, s, removed, degenerate)
    if k == 0:
        return bscan, report
    clutter = (u[:, :k] * s[:k]) @ vh[:k]
    return bscan.with_data(bscan.data - clutter), report


def subtract_background(bscan, background):
    """Remove the response of a reference scene recorded with the same geometry."""
    if background.sweep != bscan.sweep or background.scanline != bscan.scanline:
        raise DimensionError('background must share the sweep and scan line of the B-scan')
    return bscan.with_data(bscan.data - background.data)


def preprocess_bscan(bscan, t0=0.0, k=1, band=None, background=None):
    """Background subtraction, band extraction, zero timing and clutter removal, in that order."""
    if background is not None:
        bscan = subtract_background(bscan, background)
    if band is not None:
        bscan = extract_band(bscan, band)
    bscan = zero_timing(bscan, t0)
    return clutter_svd_remove(bscan, k)
