"""Core acquisition types: frequency sweep, scan line, B-scan, soil, imaging
grid and band plan, plus the text B-scan format.

Orientation conventions used everywhere:
  * a B-scan matrix is positions x frequencies (N_s, N_f);
  * a grid image is (nz, nx), z increasing downward, x fastest when flattened.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import constants

from utils import BandIndexError, DimensionError, FormatError, GeometryError, ParameterError

logger = logging.getLogger(__name__)

BSCAN_MAGIC = '#sdi-bscan v1'
HEADER_KEYS = ('n_positions', 'n_freqs', 'f_start_hz', 'f_step_hz', 'x_start_m', 'x_step_m')


@dataclass(frozen=True)
class FrequencySweep:
    f_start: float
    f_step: float
    n_freqs: int

    def __post_init__(self):
        if not (self.f_start > 0 and math.isfinite(self.f_start)):
            raise ParameterError(f'f_start must be positive, got {self.f_start}')
        if not (self.f_step > 0 and math.isfinite(self.f_step)):
            raise ParameterError(f'f_step must be positive, got {self.f_step}')
        if int(self.n_freqs) != self.n_freqs or self.n_freqs < 1:
            raise ParameterError(f'n_freqs must be a positive integer, got {self.n_freqs}')

    @classmethod
    def from_range(cls, f_lo, f_hi, f_step):
        n = int(round((f_hi - f_lo) / f_step)) + 1
        return cls(f_lo, f_step, n)

    @property
    def frequencies(self):
        return self.f_start + self.f_step * np.arange(self.n_freqs)

    @property
    def angular(self):
        return 2 * np.pi * self.frequencies

    @property
    def f_stop(self):
        return self.f_start + self.f_step * (self.n_freqs - 1)

    def sub(self, start, end):
        return FrequencySweep(self.f_start + start * self.f_step, self.f_step, end - start + 1)


@dataclass(frozen=True)
class ScanLine:
    """Uniformly spaced antenna positions on the surface (z = 0)."""
    x_start: float
    x_step: float
    n_positions: int

    def __post_init__(self):
        if int(self.n_positions) != self.n_positions or self.n_positions < 1:
            raise ParameterError(f'n_positions must be a positive integer, got {self.n_positions}')
        if self.n_positions > 1 and not self.x_step > 0:
            raise GeometryError(f'scan positions must be distinct and sorted, x_step={self.x_step}')

    @classmethod
    def from_length(cls, x_start, length, n_positions):
        step = length / (n_positions - 1) if n_positions > 1 else 0.0
        return cls(x_start, step, n_positions)

    @property
    def x(self):
        return self.x_start + self.x_step * np.arange(self.n_positions)

    @property
    def positions(self):
        return np.column_stack([self.x, np.zeros(self.n_positions)])

    @property
    def length(self):
        return self.x_step * (self.n_positions - 1)


@dataclass(frozen=True, eq=False)
class BScan:
    sweep: FrequencySweep
    scanline: ScanLine
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        expected = (self.scanline.n_positions, self.sweep.n_freqs)
        if data.shape != expected:
            raise DimensionError(f'B-scan data has shape {data.shape}, expected {expected}')
        if not np.all(np.isfinite(data)):
            raise DimensionError('B-scan data contains non-finite samples')
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data):
        return BScan(self.sweep, self.scanline, data)

    def __eq__(self, other):
        if not isinstance(other, BScan):
            return NotImplemented
        return (self.sweep == other.sweep and self.scanline == other.scanline
                and np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True)
class SoilModel:
    """Homogeneous soil, complex relative permittivity eps_real - j*eps_imag."""
    eps_real: float = 4.0
    eps_imag: float = 0.0
    light_speed: float = constants.c

    def __post_init__(self):
        if self.eps_real < 1:
            raise ParameterError(f'eps_real must be >= 1, got {self.eps_real}')
        if self.eps_imag < 0:
            raise ParameterError(f'eps_imag must be >= 0, got {self.eps_imag}')

    eps0 = constants.epsilon_0
    mu0 = constants.mu_0

    @property
    def eps_complex(self):
        return complex(self.eps_real, -self.eps_imag)


def wavenumber(f, soil):
    """Soil wavenumber k_s = 2 pi f sqrt(eps_c) / c; complex, Re > 0, Im <= 0."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ParameterError('frequency must be positive')
    k = 2 * np.pi * f * np.sqrt(soil.eps_complex) / soil.light_speed
    return complex(k) if k.ndim == 0 else k


@dataclass(frozen=True)
class ReconstructionGrid:
    x_min: float
    x_max: float
    z_min: float
    z_max: float
    nx: int
    nz: int

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1:
            raise ParameterError(f'grid needs at least one cell, got nx={self.nx} nz={self.nz}')
        if not (self.x_max > self.x_min and self.z_max > self.z_min):
            raise GeometryError('grid bounds must satisfy x_max > x_min and z_max > z_min')

    @property
    def dx(self):
        return (self.x_max - self.x_min) / self.nx

    @property
    def dz(self):
        return (self.z_max - self.z_min) / self.nz

    @property
    def x(self):
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def z(self):
        return self.z_min + (np.arange(self.nz) + 0.5) * self.dz

    @property
    def shape(self):
        return self.nz, self.nx

    @property
    def n_cells(self):
        return self.nx * self.nz

    @property
    def cell_area(self):
        return self.dx * self.dz

    @property
    def radius(self):
        """Radius a of the circle with the same area as one cell."""
        return math.sqrt(self.cell_area / math.pi)

    @property
    def centers(self):
        """(M, 2) cell centers, row-major with x fastest."""
        zz, xx = np.meshgrid(self.z, self.x, indexing='ij')
        return np.column_stack([xx.ravel(), zz.ravel()])

    def cell_index(self, x, z):
        """(iz, ix) of the cell containing (x, z), clipped to the grid."""
        ix = int(np.clip(np.floor((x - self.x_min) / self.dx), 0, self.nx - 1))
        iz = int(np.clip(np.floor((z - self.z_min) / self.dz), 0, self.nz - 1))
        return iz, ix

    def to_dict(self):
        return {'x_min': self.x_min, 'x_max': self.x_max, 'z_min': self.z_min,
                'z_max': self.z_max, 'nx': self.nx, 'nz': self.nz}


@dataclass(frozen=True)
class BandPlan:
    """Inclusive (start, end) index pairs into a parent FrequencySweep."""
    bands: tuple = field(default_factory=tuple)

    def __post_init__(self):
        bands = tuple((int(s), int(e)) for s, e in self.bands)
        for s, e in bands:
            if s < 0 or e < s:
                raise BandIndexError(f'invalid band ({s}, {e})')
        object.__setattr__(self, 'bands', bands)

    @property
    def n_bands(self):
        return len(self.bands)

    def __iter__(self):
        return iter(self.bands)

    def __getitem__(self, i):
        return self.bands[i]

    def check(self, sweep):
        for s, e in self.bands:
            if e >= sweep.n_freqs:
                raise BandIndexError(f'band ({s}, {e}) exceeds sweep of {sweep.n_freqs} frequencies')
        return self

    @classmethod
    def full(cls, sweep):
        return cls(((0, sweep.n_freqs - 1),))

    @classmethod
    def overlapped(cls, sweep, f_lo=1.3e9, width=2.2e9, n_bands=16, spacing=25e6):
        """Equal-width bands whose start frequencies are `spacing` apart.

        Band ends past the top of the sweep are clipped to the last frequency.
        """
        span = int(round(width / sweep.f_step))
        bands = []
        for i in range(n_bands):
            start = int(round((f_lo + i * spacing - sweep.f_start) / sweep.f_step))
            if start < 0 or start >= sweep.n_freqs:
                raise BandIndexError(f'band {i} starts outside the sweep')
            bands.append((start, min(start + span, sweep.n_freqs - 1)))
        clipped = sum(1 for s, e in bands if e - s < span)
        if clipped:
            logger.info('%d of %d bands clipped to the sweep end (%.4g Hz)', clipped, n_bands, sweep.f_stop)
        return cls(tuple(bands))

    @classmethod
    def parse(cls, spec, sweep, **overlapped_kwargs):
        spec = (spec or 'auto').strip()
        if spec == 'auto':
            return cls.overlapped(sweep, **overlapped_kwargs)
        if spec == 'full':
            return cls.full(sweep)
        try:
            pairs = [tuple(int(v) for v in item.split(':')) for item in spec.split(',')]
        except ValueError:
            raise ParameterError(f"band spec '{spec}' is not 'auto', 'full' or 's:e,s:e,...'") from None
        if any(len(p) != 2 for p in pairs):
            raise ParameterError(f"band spec '{spec}' must list start:end pairs")
        return cls(tuple(pairs)).check(sweep)

    def to_list(self):
        return [list(b) for b in self.bands]


def extract_band(bscan, band):
    start, end = band
    if not (0 <= start <= end < bscan.sweep.n_freqs):
        raise BandIndexError(f'band ({start}, {end}) out of range for {bscan.sweep.n_freqs} frequencies')
    return BScan(bscan.sweep.sub(start, end), bscan.scanline, bscan.data[:, start:end + 1])


def _fmt(value):
    return '%.17e' % value


def save_bscan(bscan, path):
    path = Path(path)
    n_pos, n_freq = bscan.shape
    lines = [
        BSCAN_MAGIC,
        f'n_positions {n_pos}',
        f'n_freqs {n_freq}',
        f'f_start_hz {_fmt(bscan.sweep.f_start)}',
        f'f_step_hz {_fmt(bscan.sweep.f_step)}',
        f'x_start_m {_fmt(bscan.scanline.x_start)}',
        f'x_step_m {_fmt(bscan.scanline.x_step)}',
        'data',
    ]
    for s in range(n_pos):
        for f in range(n_freq):
            v = bscan.data[s, f]
            lines.append(f'{s} {f} {_fmt(v.real)} {_fmt(v.imag)}')
    try:
        path.write_text('\n'.join(lines) + '\n', encoding='utf-8', newline='\n')
    except OSError as e:
        raise OSError(f'cannot write B-scan to {path}: {e}') from e


def load_bscan(path):
    path = Path(path)
    text = path.read_text(encoding='utf-8')
    lines = text.split('\n')
    if lines and lines[-1] == '':
        lines.pop()
    if not lines or lines[0].strip() != BSCAN_MAGIC:
        raise FormatError(f'{path}:1: expected "{BSCAN_MAGIC}"')

    header = {}
    for lineno, key in enumerate(HEADER_KEYS, start=2):
        if lineno - 1 >= len(lines):
            raise FormatError(f'{path}:{lineno}: missing header field {key}')
        parts = lines[lineno - 1].split()
        if len(parts) != 2 or parts[0] != key:
            raise FormatError(f'{path}:{lineno}: expected "{key} <value>"')
        try:
            header[key] = int(parts[1]) if key in ('n_positions', 'n_freqs') else float(parts[1])
        except ValueError:
            raise FormatError(f'{path}:{lineno}: bad value for {key}: {parts[1]!r}') from None
    data_line = len(HEADER_KEYS) + 2
    if len(lines) < data_line or lines[data_line - 1].strip() != 'data':
        raise FormatError(f'{path}:{data_line}: expected "data"')

    n_pos, n_freq = header['n_positions'], header['n_freqs']
    try:
        sweep = FrequencySweep(header['f_start_hz'], header['f_step_hz'], n_freq)
        scanline = ScanLine(header['x_start_m'], header['x_step_m'], n_pos)
    except (ParameterError, GeometryError) as e:
        raise FormatError(f'{path}: {e}') from None

    rows = lines[data_line:]
    if len(rows) != n_pos * n_freq:
        raise DimensionError(f'{path}: {len(rows)} data rows, expected {n_pos} x {n_freq} = {n_pos * n_freq}')
    data = np.zeros((n_pos, n_freq), dtype=np.complex128)
    seen = np.zeros((n_pos, n_freq), dtype=bool)
    for lineno, row in enumerate(rows, start=data_line + 1):
        parts = row.split()
        if len(parts) != 4:
            raise FormatError(f'{path}:{lineno}: expected "<pos_idx> <freq_idx> <re> <im>"')
        try:
            s, f = int(parts[0]), int(parts[1])
            value = complex(float(parts[2]), float(parts[3]))
        except ValueError:
            raise FormatError(f'{path}:{lineno}: malformed sample {row!r}') from None
        if not (0 <= s < n_pos and 0 <= f < n_freq):
            raise DimensionError(f'{path}:{lineno}: index ({s}, {f}) outside ({n_pos}, {n_freq})')
        if seen[s, f]:
            raise DimensionError(f'{path}:{lineno}: duplicate sample ({s}, {f})')
        seen[s, f] = True
        data[s, f] = value
    logger.debug('loaded %s: %d positions x %d frequencies', path, n_pos, n_freq)
    return BScan(sweep, scanline, data)
