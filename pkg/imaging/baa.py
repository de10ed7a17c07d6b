"""Born approximation imaging: discretized scattering operator and TSVD inversion.

Rows of the operator are ordered position-major, frequency-minor, i.e. row
n = s * N_f + f, which is exactly `bscan.data.reshape(-1)`.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from imaging.image import Image
from scan import wavenumber
from specfun import bessel_j1, hankel2_0
from utils import DimensionError, GeometryError, NoKneeError, ParameterError

logger = logging.getLogger(__name__)

J1_FIRST_ZERO = 3.8317059702075123


def incident_field(r_distance, f, soil):
    """Plane-wave incident field e^{-j k_s r}."""
    r = np.asarray(r_distance, dtype=float)
    if np.any(r < 0):
        raise ParameterError('distance must be >= 0')
    value = np.exp(-1j * wavenumber(f, soil) * r)
    return complex(value) if np.ndim(value) == 0 else value


def gamma_entries(grid, scanline, sweep, soil):
    """Operator entries -a j pi (k/2) E_i(r) J1(k a) H0^(2)(k r), shape (N_s * N_f, M).

    Cylinder functions take Re(k_s); the incident field keeps the complex k_s.
    """
    k = wavenumber(sweep.frequencies, soil)
    k_real = k.real
    a = grid.radius
    if np.any(k_real * a >= J1_FIRST_ZERO):
        raise GeometryError(f'mesh too coarse: k_s a = {k_real.max() * a:.3f} >= {J1_FIRST_ZERO:.4f}')
    dist = cdist(scanline.positions, grid.centers)
    if np.any(dist <= 0):
        raise GeometryError('a cell center coincides with a scan position (Hankel singularity)')

    prefactor = -a * 1j * np.pi * (k / 2) * bessel_j1(k_real * a)
    r = dist[:, None, :]
    entries = (prefactor[None, :, None]
               * np.exp(-1j * k[None, :, None] * r)
               * hankel2_0(k_real[None, :, None] * r))
    return entries.reshape(scanline.n_positions * sweep.n_freqs, grid.n_cells)


@dataclass(frozen=True, eq=False)
class GammaMatrix:
    entries: np.ndarray
    u: np.ndarray
    s: np.ndarray
    vh: np.ndarray
    n_positions: int
    n_freqs: int

    @property
    def shape(self):
        return self.entries.shape

    @property
    def rank(self):
        if self.s.size == 0 or self.s[0] == 0:
            return 0
        tol = self.s[0] * max(self.shape) * np.finfo(float).eps
        return int(np.sum(self.s > tol))

    def reconstruct(self):
        return (self.u * self.s) @ self.vh


def build_gamma(grid, scanline, sweep, soil):
    entries = gamma_entries(grid, scanline, sweep, soil)
    try:
        u, s, vh = linalg.svd(entries, full_matrices=False)
    except linalg.LinAlgError:
        logger.warning('gesdd did not converge, retrying with gesvd')
        u, s, vh = linalg.svd(entries, full_matrices=False, lapack_driver='gesvd')
    logger.info('Born operator %d x %d, sigma_1=%.4g, sigma_min=%.4g', *entries.shape, s[0], s[-1])
    return GammaMatrix(entries, u, s, vh, scanline.n_positions, sweep.n_freqs)


def svd_threshold_index(singular_values):
    """1-based index t of the sharpest drop log(s_t / s_{t+1}); values past t are truncated."""
    s = np.asarray(singular_values, dtype=float)
    if s.size < 2:
        raise ParameterError('need at least two singular values')
    if np.any(s < 0) or np.any(np.diff(s) > 0):
        raise ParameterError('singular values must be non-negative and sorted descending')
    gaps = np.full(s.size - 1, -np.inf)
    nxt, cur = s[1:], s[:-1]
    positive = nxt > 0
    gaps[positive] = np.log(cur[positive] / nxt[positive])
    gaps[~positive & (cur > 0)] = np.inf
    if not np.any(gaps > 1e-12):
        raise NoKneeError('flat singular value spectrum, supply the truncation index explicitly')
    return int(np.argmax(gaps)) + 1


def tsvd_invert(gamma, e_s, keep):
    """tau = sum_{i<=keep} (u_i^* e_s / s_i) v_i."""
    e_s = np.asarray(e_s, dtype=np.complex128).ravel()
    if e_s.size != gamma.shape[0]:
        raise DimensionError(f'data vector has {e_s.size} samples, operator expects {gamma.shape[0]}')
    rank = gamma.rank
    if not 1 <= keep <= rank:
        raise ParameterError(f'keep must be in [1, {rank}], got {keep}')
    coeffs = (gamma.u[:, :keep].conj().T @ e_s) / gamma.s[:keep]
    return gamma.vh[:keep].conj().T @ coeffs


def baa_image(bscan, grid, soil, keep=None, gamma=None, band=None):
    if gamma is None:
        gamma = build_gamma(grid, bscan.scanline, bscan.sweep, soil)
    if gamma.shape != (bscan.data.size, grid.n_cells):
        raise DimensionError(f'operator {gamma.shape} does not match B-scan {bscan.shape} on grid {grid.shape}')
    if keep is None:
        keep = svd_threshold_index(gamma.s)
        if keep > gamma.rank:
            logger.debug('knee %d beyond numerical rank %d, clamping', keep, gamma.rank)
            keep = gamma.rank
    if not np.any(bscan.data):
        return Image(grid, np.zeros(grid.n_cells), 'BAA', band, keep)
    tau = tsvd_invert(gamma, bscan.data.reshape(-1), keep)
    return Image(grid, tau, 'BAA', band, keep)
