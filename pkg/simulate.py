"""Synthetic B-scans: point-scatterer and Born-model scenes plus the
corruptions (system delay, antenna/ground clutter, receiver noise) applied to them.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from imaging.baa import gamma_entries
from scan import BScan, wavenumber
from utils import ConfigError, DimensionError, GeometryError, ParameterError

logger = logging.getLogger(__name__)

CLUTTER_DELAY = 0.5e-9


@dataclass(frozen=True)
class PointScatterer:
    position: tuple
    amplitude: complex = 1.0

    def __post_init__(self):
        x, z = self.position
        if not z > 0:
            raise GeometryError(f'scatterer at z={z} is not below the surface')
        object.__setattr__(self, 'position', (float(x), float(z)))


@dataclass(frozen=True, eq=False)
class ContrastMap:
    grid: object
    tau: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=np.complex128)
        if tau.size != self.grid.n_cells:
            raise DimensionError(f'contrast has {tau.size} cells, grid has {self.grid.n_cells}')
        if not np.all(np.isfinite(tau)):
            raise DimensionError('contrast contains non-finite values')
        object.__setattr__(self, 'tau', tau.reshape(self.grid.shape))


MOIST_LAWS = ('saturating', 'linear')


@dataclass(frozen=True)
class MoistScene:
    """Pipe disc with a moist rectangle above it.

    The moist contrast reaches moist_gain at SM = 100 %, either along
    1 - exp(-moist_rate SM) (saturating) or proportionally to SM (linear).
    """
    pipe_x: float = 0.6
    pipe_depth: float = 0.12
    pipe_diameter: float = 0.045
    pipe_contrast: float = 1.0
    moist_gain: float = 0.1
    moist_half_width: float = 0.1
    moist_top: float = 0.0
    moist_law: str = 'saturating'
    moist_rate: float = 0.005

    def __post_init__(self):
        if self.moist_law not in MOIST_LAWS:
            raise ConfigError(f"moist_law must be one of {', '.join(MOIST_LAWS)}, got '{self.moist_law}'")
        if not self.moist_rate > 0:
            raise ConfigError(f'moist_rate must be positive, got {self.moist_rate}')

    def moist_level(self, sm):
        sm = sm or 0.0
        if self.moist_law == 'linear':
            return self.moist_gain * sm / 100.0
        return self.moist_gain * math.expm1(-self.moist_rate * sm) / math.expm1(-self.moist_rate * 100.0)


@dataclass(frozen=True)
class SceneSpec:
    name: str
    sm: float = None
    time_min: float = None
    points: tuple = ()
    moist: bool = False
    medium: dict = None
    clutter_level: float = 0.0
    snr_db: float = math.inf
    delay_s: float = 0.0


def simulate_points(scatterers, scanline, sweep, soil):
    """E_s(r_s, w_f) = sum_p A_p exp(-2j k_f |r_p - r_s|)."""
    if not scatterers:
        raise ParameterError('need at least one scatterer')
    k = wavenumber(sweep.frequencies, soil)
    positions = np.array([p.position for p in scatterers])
    amplitudes = np.array([p.amplitude for p in scatterers], dtype=np.complex128)
    dist = cdist(scanline.positions, positions)  # (N_s, P)
    phase = np.exp(-2j * k[None, :, None] * dist[:, None, :])
    return BScan(sweep, scanline, phase @ amplitudes)


def simulate_born(contrast, scanline, sweep, soil):
    """E_s = Gamma tau with the very operator the Born imaging inverts."""
    gamma = gamma_entries(contrast.grid, scanline, sweep, soil)
    data = gamma @ contrast.tau.ravel()
    return BScan(sweep, scanline, data.reshape(scanline.n_positions, sweep.n_freqs))


def moist_contrast(grid, sm, scene=MoistScene()):
    centers = grid.centers
    x, z = centers[:, 0], centers[:, 1]
    radius = scene.pipe_diameter / 2
    pipe_z = scene.pipe_depth + radius
    tau = np.zeros(grid.n_cells, dtype=np.complex128)
    in_pipe = (x - scene.pipe_x) ** 2 + (z - pipe_z) ** 2 <= radius ** 2
    tau[in_pipe] = scene.pipe_contrast
    in_moist = ((np.abs(x - scene.pipe_x) <= scene.moist_half_width)
                & (z >= scene.moist_top) & (z <= scene.pipe_depth) & ~in_pipe)
    tau[in_moist] = scene.moist_level(sm)
    if not in_pipe.any():
        logger.warning('pipe covers no cell center, refine the grid')
    if not in_moist.any():
        logger.warning('moist area covers no cell center, refine the grid')
    return ContrastMap(grid, tau)


def medium_scatterers(region, count, amplitude, seed):
    """Weak point scatterers with random positions and phases (roots, pebbles)."""
    x_min, x_max, z_min, z_max = region
    rng = np.random.default_rng(seed)
    xs = rng.uniform(x_min, x_max, count)
    zs = rng.uniform(max(z_min, 1e-6), z_max, count)
    phases = np.exp(2j * np.pi * rng.random(count))
    return [PointScatterer((x, z), amplitude * p) for x, z, p in zip(xs, zs, phases)]


def delay(bscan, t):
    """System delay e^{-j w t}; zero_timing with the same t undoes it."""
    if t == 0:
        return bscan
    return bscan.with_data(bscan.data * np.exp(-1j * bscan.sweep.angular * t)[None, :])


def add_clutter(bscan, level, t_c=CLUTTER_DELAY):
    """Add the position-invariant rank-1 term level * e^{-j w t_c} to every row."""
    if level < 0:
        raise ParameterError(f'clutter level must be >= 0, got {level}')
    if level == 0:
        return bscan
    clutter = level * np.exp(-1j * bscan.sweep.angular * t_c)
    return bscan.with_data(bscan.data + clutter[None, :])


def add_noise(bscan, snr_db, seed):
    """Circular complex Gaussian noise at the requested per-matrix SNR."""
    if snr_db == math.inf:
        return bscan
    if not math.isfinite(snr_db):
        raise ParameterError(f'snr must be finite or +inf, got {snr_db}')
    power = float(np.mean(np.abs(bscan.data) ** 2))
    if power == 0:
        raise ParameterError('cannot set an SNR on an all-zero B-scan')
    noise_power = power / 10 ** (snr_db / 10)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(bscan.shape) + 1j * rng.standard_normal(bscan.shape)
    return bscan.with_data(bscan.data + math.sqrt(noise_power / 2) * noise)


def _delay(bscan, settings):
    return delay(bscan, settings.get('delay_s', 0.0))


def _clutter(bscan, settings):
    return add_clutter(bscan, settings.get('clutter_level', 0.0), settings.get('clutter_delay_s', CLUTTER_DELAY))


def _noise(bscan, settings):
    return add_noise(bscan, settings.get('snr_db', math.inf), settings.get('seed'))


CORRUPT_FNS = {
    'delay': [_delay],
    'clutter': [_clutter],
    'noise': [_noise],
}


def corrupt(bscan, policy='', settings=None):
    settings = settings or {}
    if policy:
        for p in policy.split(','):
            if p not in CORRUPT_FNS:
                raise ConfigError(f"unknown corruption '{p}', valid options are: {', '.join(CORRUPT_FNS)}")
            for f in CORRUPT_FNS[p]:
                bscan = f(bscan, settings)
    return bscan


def render_scene(spec, sweep, scanline, soil, grid=None, moist_scene=MoistScene(), seed=None):
    """Forward model one scene description into a B-scan."""
    data = np.zeros((scanline.n_positions, sweep.n_freqs), dtype=np.complex128)
    scatterers = list(spec.points)
    if spec.medium:
        medium = spec.medium
        scatterers += medium_scatterers(medium['region'], medium['count'], medium['amplitude'],
                                        medium.get('seed', seed))
    if scatterers:
        data = data + simulate_points(scatterers, scanline, sweep, soil).data
    if spec.moist:
        if grid is None:
            raise ConfigError(f'scene {spec.name}: moist scenes need a grid')
        data = data + simulate_born(moist_contrast(grid, spec.sm, moist_scene), scanline, sweep, soil).data
    bscan = BScan(sweep, scanline, data)

    policy = [name for name, active in (('delay', spec.delay_s > 0),
                                        ('clutter', spec.clutter_level > 0),
                                        ('noise', spec.snr_db != math.inf)) if active]
    settings = {'delay_s': spec.delay_s, 'clutter_level': spec.clutter_level,
                'snr_db': spec.snr_db, 'seed': seed}
    return corrupt(bscan, ','.join(policy), settings)
