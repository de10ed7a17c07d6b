"""Real-argument cylinder functions used by the Born kernel.

Thin, validated wrappers over the Cephes routines in scipy.special; scalars in
give Python scalars out, arrays in give arrays out.
"""
import numpy as np
from scipy import special

from utils import DomainError


def _check(x, strictly_positive):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError('argument must be finite')
    if strictly_positive and np.any(arr <= 0):
        raise DomainError('argument must be > 0 (logarithmic singularity at 0)')
    if not strictly_positive and np.any(arr < 0):
        raise DomainError('argument must be >= 0')
    return arr


def _out(value, arr):
    return value.item() if arr.ndim == 0 else value


def bessel_j0(x):
    arr = _check(x, strictly_positive=False)
    return _out(special.j0(arr), arr)


def bessel_j1(x):
    arr = _check(x, strictly_positive=False)
    return _out(special.j1(arr), arr)


def bessel_y0(x):
    arr = _check(x, strictly_positive=True)
    return _out(special.y0(arr), arr)


def hankel2_0(x):
    """H0^(2)(x) = J0(x) - j Y0(x)."""
    arr = _check(x, strictly_positive=True)
    return _out(special.j0(arr) - 1j * special.y0(arr), arr)
