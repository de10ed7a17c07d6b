"""Moist-area segmentation, FSV extraction, exponential model fitting, Gaussian
parameter statistics, statistical SM estimation and SMEE evaluation.

The observable is the first singular value (FSV) of the |image| submatrix inside
the region of interest, taken from the image normalized by its Frobenius norm,
or, for scans imaged after subtracting a dry reference scene, by the norm of
that reference.
Its dependence on soil moisture is modelled as

    FSV = a * (1 - exp(-b * SM)),   a > 0, b > 0

(`sign=+1` switches to the exp(+b SM) form as it is sometimes printed).
"""
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.optimize import least_squares
from tqdm import tqdm

from imaging import build_gamma, form_image
from preprocess import preprocess_bscan
from utils import (DimensionError, EvaluationError, FitError, FormatError, ModelError, ParameterError,
                   RegionError, SaturationError)

logger = logging.getLogger(__name__)

SM_LEVELS = (12.5, 25.0, 37.5, 50.0, 62.5, 75.0, 87.5, 100.0)

# Gaussian statistics of the fitted (a, b) reported for the laboratory data
TABLE2 = {
    'BPA': {'mu_a': 0.05, 'var_a': 0.0015, 'mu_b': 0.04547, 'var_b': 4.1789e-6},
    'BAA': {'mu_a': 0.1803, 'var_a': 2.0486e-5, 'mu_b': 0.0793, 'var_b': 5.2845e-4},
}

MAX_FAILED_FRACTION = 0.1


@dataclass(frozen=True)
class RegionOfInterest:
    x_min: float
    x_max: float
    z_min: float
    z_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.z_max > self.z_min):
            raise RegionError(f'empty region of interest {self.to_list()}')

    @classmethod
    def parse(cls, text):
        try:
            values = [float(v) for v in text.split(',')]
        except ValueError:
            raise RegionError(f"roi '{text}' must be x0,x1,z0,z1") from None
        if len(values) != 4:
            raise RegionError(f"roi '{text}' must be x0,x1,z0,z1")
        return cls(*values)

    def to_list(self):
        return [self.x_min, self.x_max, self.z_min, self.z_max]


@dataclass(frozen=True)
class MoistureSample:
    sm: float
    fsv: float
    band: int
    algorithm: str

    def __post_init__(self):
        if not math.isfinite(self.fsv):
            raise ParameterError(f'non-finite FSV for SM {self.sm}')


def samples_frame(samples):
    return pd.DataFrame([vars(s) for s in samples], columns=['sm', 'fsv', 'band', 'algorithm'])


@dataclass(frozen=True)
class FitResult:
    a: float
    b: float
    residual: float
    nfev: int


@dataclass(frozen=True, eq=False)
class MoistureModel:
    algorithm: str
    mu_a: float
    var_a: float
    mu_b: float
    var_b: float
    band_plan: list = None
    normalization: dict = None
    n_combinations: int = 0
    seed: int = 0
    sign: int = -1
    fits: pd.DataFrame = field(default=None, repr=False)

    def __post_init__(self):
        if self.var_a < 0 or self.var_b < 0:
            raise ModelError('parameter variances must be non-negative')
        if not self.mu_a > 0:
            raise ModelError(f'mu_a must be positive, got {self.mu_a}')
        if not -self.sign * self.mu_b > 0:
            raise ModelError(f'mu_b has the wrong sign for a saturating model: {self.mu_b}')

    @classmethod
    def degenerate(cls, a, b, algorithm='BPA', sign=-1):
        """Zero-variance model, i.e. the deterministic curve (a, b)."""
        return cls(algorithm, a, 0.0, b, 0.0, sign=sign)

    @classmethod
    def from_table(cls, algorithm):
        return cls(algorithm, **TABLE2[algorithm])

    def to_dict(self):
        return {'algorithm': self.algorithm, 'mu_a': self.mu_a, 'var_a': self.var_a,
                'mu_b': self.mu_b, 'var_b': self.var_b, 'normalization': self.normalization,
                'band_plan': self.band_plan, 'n_combinations': self.n_combinations,
                'seed': self.seed, 'sign': self.sign}


@dataclass(frozen=True)
class EstimationResult:
    sm_mean: float
    sm_std: float
    n_valid_draws: int
    n_draws: int
    draws: pd.DataFrame = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class EvaluationReport:
    algorithm: str
    bands: list
    table: pd.DataFrame

    def smee(self):
        return dict(zip(self.table.sm_exact, self.table.smee))


def save_model(model, path):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(model.to_dict(), f, indent=2)
        f.write('\n')


def load_model(path):
    try:
        with open(path, encoding='utf-8') as f:
            record = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f'{path}:{e.lineno}:{e.colno}: {e.msg}') from None
    try:
        return MoistureModel(record['algorithm'], float(record['mu_a']), float(record['var_a']),
                             float(record['mu_b']), float(record['var_b']), record.get('band_plan'),
                             record.get('normalization'), int(record.get('n_combinations', 0)),
                             record.get('seed', 0), int(record.get('sign', -1)))
    except KeyError as e:
        raise FormatError(f'{path}: model file lacks field {e}') from None


def segment(image, roi):
    """|image| restricted to the cells whose centers fall inside roi."""
    grid = image.grid
    cols = (grid.x >= roi.x_min) & (grid.x <= roi.x_max)
    rows = (grid.z >= roi.z_min) & (grid.z <= roi.z_max)
    if not rows.any() or not cols.any():
        raise RegionError(f'region {roi.to_list()} contains no cell center of the grid')
    return image.magnitude[np.ix_(rows, cols)]


def fsv(submatrix):
    submatrix = np.asarray(submatrix, dtype=float)
    if submatrix.size == 0:
        raise RegionError('empty submatrix')
    return float(linalg.svdvals(np.atleast_2d(submatrix))[0])


def image_fsv(image, roi, normalize=True, norm=None):
    """FSV of the moist area and the norm the image was divided by.

    The divisor is `norm` when given (the dry reference of background-subtracted
    scans), otherwise the Frobenius norm of the image itself.
    """
    value = fsv(segment(image, roi))
    if not normalize:
        return value, 1.0
    norm = image.norm if norm is None else float(norm)
    return (value / norm if norm > 0 else value), norm


def exponential_model(sm, a, b, sign=-1):
    return -a * np.expm1(sign * b * np.asarray(sm, dtype=float))


def fit_exponential(sm, fsv_values, sign=-1, max_nfev=1000):
    """Least-squares fit of FSV = a (1 - exp(sign b SM)) by Levenberg-Marquardt.

    Starts from a0 = 1.05 max(FSV) and b0 solved from the two-point equations at
    the lowest and highest SM level.
    """
    sm = np.asarray(sm, dtype=float)
    y = np.asarray(fsv_values, dtype=float)
    if sm.shape != y.shape or not (np.all(np.isfinite(sm)) and np.all(np.isfinite(y))):
        raise FitError('SM and FSV must be finite arrays of equal length')
    levels = np.unique(sm)
    if levels.size < 3:
        raise FitError(f'need at least 3 distinct SM levels, got {levels.size}')
    scale = np.max(np.abs(y))
    if scale == 0 or np.ptp(y) <= 1e-14 * scale:
        raise FitError('flat FSV data')
    y_lo, y_hi = y[sm == levels[0]].mean(), y[sm == levels[-1]].mean()
    if not y_hi > y_lo:
        raise FitError('FSV does not increase with SM', {'fsv_low': y_lo, 'fsv_high': y_hi})

    a0 = 1.05 * y.max()
    two_point = [-math.log1p(-v / a0) / s for s, v in ((levels[0], y_lo), (levels[-1], y_hi))
                 if s > 0 and 0 < v < a0]
    b0 = float(np.mean(two_point)) if two_point else 1.0 / float(np.mean(np.abs(levels)))

    def residual(p):
        return exponential_model(sm, p[0], p[1], sign) - y

    def jacobian(p):
        e = np.exp(sign * p[1] * sm)
        return np.column_stack([-np.expm1(sign * p[1] * sm), -p[0] * sign * sm * e])

    result = least_squares(residual, [a0, -sign * b0], jac=jacobian, method='lm', x_scale='jac',
                           xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=max_nfev)
    diagnostics = {'status': int(result.status), 'nfev': int(result.nfev), 'message': result.message,
                   'x0': [a0, b0], 'x': result.x.tolist()}
    if result.status <= 0 or not np.all(np.isfinite(result.x)):
        raise FitError(f'exponential fit did not converge: {result.message}', diagnostics)
    a, b = result.x
    return FitResult(float(a), float(b), float(np.sum(result.fun ** 2)), int(result.nfev))


def band_combinations(n_bands, k):
    """All C(n_bands, k) sorted index subsets in lexicographic order."""
    if not 0 <= k <= n_bands:
        raise ParameterError(f'need 0 <= k <= n_bands, got k={k}, n_bands={n_bands}')
    return itertools.combinations(range(n_bands), k)


def n_train_bands(n_bands, train_fraction):
    return min(n_bands, max(1, math.ceil(round(train_fraction * n_bands, 9))))


def _band_arrays(dataset):
    bands = sorted(dataset.band.unique())
    by_band = {b: (g.sm.to_numpy(float), g.fsv.to_numpy(float)) for b, g in dataset.groupby('band')}
    return bands, by_band


def fit_combinations(dataset, k, sign=-1, progress=False):
    """Fit the pooled (sm, fsv) points of every k-band combination.

    Returns one row per combination: band ids, a, b, residual and whether the fit
    succeeded.
    """
    bands, by_band = _band_arrays(dataset)
    rows = []
    combos = band_combinations(len(bands), k)
    total = math.comb(len(bands), k)
    for combo in tqdm(combos, total=total, disable=not progress, desc='fitting combinations'):
        ids = tuple(bands[i] for i in combo)
        sm = np.concatenate([by_band[b][0] for b in ids])
        y = np.concatenate([by_band[b][1] for b in ids])
        try:
            fit = fit_exponential(sm, y, sign=sign)
            rows.append({'bands': ids, 'a': fit.a, 'b': fit.b, 'residual': fit.residual, 'ok': True})
        except FitError as e:
            logger.debug('fit failed for bands %s: %s %s', ids, e, e.diagnostics)
            rows.append({'bands': ids, 'a': np.nan, 'b': np.nan, 'residual': np.nan, 'ok': False})
    return pd.DataFrame(rows, columns=['bands', 'a', 'b', 'residual', 'ok'])


def build_model(dataset, algorithm=None, band_plan=None, train_fraction=12 / 16, sign=-1,
                normalization=None, seed=0, progress=False):
    """Gaussian statistics of (a, b) over all training band combinations."""
    if dataset.empty:
        raise ModelError('empty dataset')
    bands = sorted(dataset.band.unique())
    if len(bands) < 2:
        raise ModelError(f'need at least 2 bands, got {len(bands)}')
    levels_per_band = dataset.groupby('band').sm.nunique()
    if (levels_per_band < 3).any():
        raise ModelError(f'bands with fewer than 3 SM levels: {list(levels_per_band[levels_per_band < 3].index)}')
    if algorithm is None and 'algorithm' in dataset and dataset.algorithm.nunique() == 1:
        algorithm = dataset.algorithm.iloc[0]

    k = n_train_bands(len(bands), train_fraction)
    fits = fit_combinations(dataset, k, sign=sign, progress=progress)
    failed = int((~fits.ok).sum())
    logger.info('%s: %d combinations of %d bands, %d failed', algorithm, len(fits), k, failed)
    if failed > MAX_FAILED_FRACTION * len(fits):
        raise ModelError(f'{failed} of {len(fits)} combination fits failed')
    ok = fits[fits.ok]
    ddof = 1 if len(ok) > 1 else 0
    return MoistureModel(
        algorithm=algorithm,
        mu_a=float(ok.a.mean()), var_a=float(ok.a.var(ddof=ddof)),
        mu_b=float(ok.b.mean()), var_b=float(ok.b.var(ddof=ddof)),
        band_plan=band_plan, normalization=normalization, n_combinations=len(fits),
        seed=seed, sign=sign, fits=fits)


def _generator(seed):
    """Counter-based Philox stream, so results do not depend on scheduling."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(0 if seed is None else seed)
    return np.random.Generator(np.random.Philox(seed))


def estimate_sm(fsv_value, model, n_draws=1000, seed=0, keep_draws=False):
    """Monte-Carlo inversion of the model for one FSV observation.

    Each draw samples a ~ N(mu_a, var_a), b ~ N(mu_b, var_b) independently and
    inverts SM = -ln(1 - FSV/a) / b. Draws with a <= 0, b <= 0 or a <= FSV are
    discarded and counted, never clamped.
    """
    if not (math.isfinite(fsv_value) and fsv_value >= 0):
        raise ParameterError(f'FSV must be finite and >= 0, got {fsv_value}')
    if n_draws < 1:
        raise ParameterError(f'n_draws must be >= 1, got {n_draws}')
    z = _generator(seed).standard_normal((n_draws, 2))
    a = model.mu_a + math.sqrt(model.var_a) * z[:, 0]
    b = model.mu_b + math.sqrt(model.var_b) * z[:, 1]
    rate = model.sign * b
    valid = (a > 0) & (a > fsv_value) & (rate < 0)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise SaturationError(f'FSV {fsv_value:.6g} beyond the attainable range of every draw')
    sm = np.log1p(-fsv_value / a[valid]) / rate[valid]
    draws = None
    if keep_draws:
        full = np.full(n_draws, np.nan)
        full[valid] = sm
        draws = pd.DataFrame({'a': a, 'b': b, 'sm': full, 'valid': valid})
    return EstimationResult(float(sm.mean()), float(sm.std()), n_valid, n_draws, draws)


def estimate_scan(fsv_values, model, n_draws=1000, seed=0):
    """Pool the valid draws of every band's FSV of one scan."""
    pooled, requested = [], 0
    for i, value in enumerate(fsv_values):
        requested += n_draws
        try:
            result = estimate_sm(value, model, n_draws, np.random.SeedSequence([seed or 0, i]), keep_draws=True)
        except SaturationError:
            continue
        pooled.append(result.draws.sm[result.draws.valid].to_numpy())
    if not pooled:
        raise SaturationError('every band FSV is beyond the attainable range of the model')
    sm = np.concatenate(pooled)
    return EstimationResult(float(sm.mean()), float(sm.std()), int(sm.size), requested)


def evaluate_model(model, heldout, levels=None, n_draws=1000, seed=0):
    """Signed SMEE per SM level: mean over held-out bands of (estimated - exact).

    Band b draws from the stream SeedSequence([seed, b]).
    """
    if heldout is None or heldout.empty:
        raise EvaluationError('empty held-out dataset')
    levels = sorted(heldout.sm.unique()) if levels is None else list(levels)
    rows = []
    for level in levels:
        subset = heldout[np.isclose(heldout.sm, level)]
        errors = []
        for band, value in zip(subset.band, subset.fsv):
            stream = np.random.SeedSequence([seed or 0, int(band)])
            try:
                errors.append(estimate_sm(value, model, n_draws, stream).sm_mean - level)
            except SaturationError:
                logger.warning('SM %.4g: FSV %.6g saturates the model, band skipped', level, value)
        smee = float(np.mean(errors)) if errors else np.nan
        rows.append({'sm_exact': float(level), 'smee': smee, 'n_bands': len(errors)})
    table = pd.DataFrame(rows, columns=['sm_exact', 'smee', 'n_bands'])
    return EvaluationReport(model.algorithm, sorted(int(b) for b in heldout.band.unique()), table)


def cross_validate(dataset, fits, levels=None, sign=-1):
    """Score each combination's own (a, b) on its complementary held-out bands.

    Returns SMEE per SM level averaged over combinations (and its spread).
    """
    bands = sorted(dataset.band.unique())
    levels = sorted(dataset.sm.unique()) if levels is None else list(levels)
    table = dataset.pivot_table(index='band', columns='sm', values='fsv', aggfunc='mean')
    table = table.reindex(index=bands, columns=levels)
    fsv_matrix = table.to_numpy(float)
    exact = np.asarray(levels, dtype=float)

    per_combination = []
    for combo, a, b in fits[fits.ok][['bands', 'a', 'b']].itertuples(index=False):
        held = [i for i, band in enumerate(bands) if band not in combo]
        if not held:
            continue
        f = fsv_matrix[held]
        with np.errstate(invalid='ignore', divide='ignore'):
            est = np.where(f < a, np.log1p(-f / a) / (sign * b), np.nan)
        err = est - exact[None, :]
        per_combination.append(np.array([np.nanmean(c) if np.isfinite(c).any() else np.nan for c in err.T]))
    if not per_combination:
        raise EvaluationError('no combination leaves held-out bands')
    errors = np.vstack(per_combination)
    counts = np.isfinite(errors).sum(axis=0)
    with np.errstate(invalid='ignore'):
        mean = np.where(counts > 0, np.nansum(errors, axis=0) / np.maximum(counts, 1), np.nan)
    spread = np.array([np.nanstd(c) if n else np.nan for c, n in zip(errors.T, counts)])
    return pd.DataFrame({'sm_exact': exact, 'smee': mean, 'smee_std': spread, 'n_combinations': counts})


def temporal_series(times, estimates):
    """Estimates ordered in time with the finite-difference rate d(SM)/dt (per minute).

    The rate of row i covers the interval (t_{i-1}, t_i]; the first row has none.
    """
    t = np.asarray(times, dtype=float)
    if t.size != len(estimates):
        raise DimensionError(f'{t.size} times for {len(estimates)} estimates')
    if t.size > 1 and not np.all(np.diff(t) > 0):
        raise ParameterError('scan times must be strictly increasing')
    sm = np.array([e.sm_mean for e in estimates], dtype=float)
    std = np.array([e.sm_std for e in estimates], dtype=float)
    rate = np.full(t.size, np.nan)
    rate[1:] = np.diff(sm) / np.diff(t)
    return pd.DataFrame({'t_min': t, 'sm_mean': sm, 'sm_std': std, 'rate': rate})


def fit_saturation(series):
    """Fit SM(t) = A (1 - exp(-t / tau)); returns (A, tau, FitResult)."""
    fit = fit_exponential(series.t_min.to_numpy(), series.sm_mean.to_numpy())
    return fit.a, 1.0 / fit.b, fit


def parametrize_scans(scans, band_plan, grid, soil, roi, algorithms=('BAA', 'BPA'), t0=0.0,
                      clutter_k=1, keep=None, normalize=True, device='cpu', progress=False, background=None):
    """Moist-area FSV of every (scan, band, algorithm).

    scans is a list of (sm, BScan) pairs (sm may be None); all scans must share
    the acquisition geometry so each band's Born operator is factorized once.
    With a background (the dry reference scene) every scan is imaged after
    subtracting it, and its FSV is divided by the Frobenius norm of the
    preprocessed background in that band instead of the image's own norm.
    Returns a DataFrame with columns scan, sm, band, algorithm, fsv, norm.
    """
    if not scans:
        return pd.DataFrame(columns=['scan', 'sm', 'band', 'algorithm', 'fsv', 'norm'])
    reference = scans[0][1]
    for _, bscan in scans:
        if bscan.sweep != reference.sweep or bscan.scanline != reference.scanline:
            raise DimensionError('all scans must share the same sweep and scan line')

    rows = []
    for band_id, band in enumerate(tqdm(list(band_plan), disable=not progress, desc='bands')):
        gamma = None
        if 'BAA' in algorithms:
            sub = reference.sweep.sub(*band)
            gamma = build_gamma(grid, reference.scanline, sub, soil)
        background_norm = None
        if background is not None:
            dry, _ = preprocess_bscan(background, t0, clutter_k, band)
            background_norm = float(np.linalg.norm(dry.data))
            if background_norm == 0:
                raise ParameterError(f'background is all zero in band {band}')
        for scan_id, (sm, bscan) in enumerate(scans):
            clean, _ = preprocess_bscan(bscan, t0, clutter_k, band, background)
            for algorithm in algorithms:
                image = form_image(algorithm, clean, grid, soil, gamma=gamma, keep=keep, device=device, band=band)
                value, norm = image_fsv(image, roi, normalize, background_norm)
                rows.append({'scan': scan_id, 'sm': np.nan if sm is None else float(sm), 'band': band_id,
                             'algorithm': algorithm, 'fsv': value, 'norm': norm})
    return pd.DataFrame(rows, columns=['scan', 'sm', 'band', 'algorithm', 'fsv', 'norm'])
