import json
import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import pandas as pd

from scan import ReconstructionGrid
from utils import DimensionError, FormatError

logger = logging.getLogger(__name__)

KINDS = ('BAA', 'BPA')


@dataclass(frozen=True, eq=False)
class Image:
    """Complex per-cell reconstruction on a grid, values shaped (nz, nx).

    kind BAA holds the contrast tau, kind BPA the focused sum S(r_i).
    """
    grid: ReconstructionGrid
    values: np.ndarray
    kind: str
    band: tuple = None
    keep: int = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128).reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise DimensionError('image contains non-finite values')
        if self.kind not in KINDS:
            raise ValueError(f'image kind must be one of {KINDS}, got {self.kind}')
        object.__setattr__(self, 'values', values)

    @property
    def magnitude(self):
        return np.abs(self.values)

    @property
    def norm(self):
        return float(np.linalg.norm(self.values))

    def normalized(self):
        """Image divided by its Frobenius norm, and that norm (zero images pass through)."""
        norm = self.norm
        values = self.values / norm if norm > 0 else self.values
        return Image(self.grid, values, self.kind, self.band, self.keep), norm

    def peak_cell(self):
        iz, ix = np.unravel_index(int(np.argmax(self.magnitude)), self.grid.shape)
        return int(iz), int(ix)

    def sidecar(self):
        iz, ix = self.peak_cell()
        return {
            'kind': self.kind,
            'grid': self.grid.to_dict(),
            'band': list(self.band) if self.band is not None else None,
            'keep': self.keep,
            'peak_cell': [iz, ix],
            'peak_position_m': [float(self.grid.x[ix]), float(self.grid.z[iz])],
            'peak_magnitude': float(self.magnitude[iz, ix]),
            'norm': self.norm,
        }


def save_image(image, stem, pgm=False):
    """Write |values| as CSV in grid layout plus a JSON sidecar (and an 8-bit PGM)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(image.magnitude).to_csv(stem.with_suffix('.csv'), header=False, index=False,
                                         float_format='%.17e', lineterminator='\n')
    with open(stem.with_suffix('.json'), 'w', encoding='utf-8', newline='\n') as f:
        json.dump(image.sidecar(), f, indent=2)
        f.write('\n')
    written = [stem.with_suffix('.csv'), stem.with_suffix('.json')]
    if pgm:
        mag = image.magnitude
        span = mag.max() - mag.min()
        scaled = (mag - mag.min()) / span if span > 0 else np.zeros_like(mag)
        cv2.imwrite(str(stem.with_suffix('.pgm')), np.round(scaled * 255).astype(np.uint8))
        written.append(stem.with_suffix('.pgm'))
    logger.info('saved %s image to %s', image.kind, stem)
    return written


def load_image_values(stem):
    """Read back the magnitude grid and sidecar written by save_image."""
    stem = Path(stem)
    try:
        magnitude = pd.read_csv(stem.with_suffix('.csv'), header=None).to_numpy(dtype=float)
        with open(stem.with_suffix('.json'), encoding='utf-8') as f:
            sidecar = json.load(f)
    except (ValueError, json.JSONDecodeError) as e:
        raise FormatError(f'{stem}: {e}') from None
    return magnitude, sidecar
