'''
Command-line entry point: simulate scenes, preprocess and image B-scans, fit the
moisture model, estimate and evaluate.

    python pipeline.py pipeline --out_dir save/sdi
    python pipeline.py fit --manifest save/sdi/manifest.json --bands auto
'''

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from tqdm import tqdm

from config import add_config_arguments, config_from_args
from imaging import form_image, save_image
from moisture import (build_model, cross_validate, estimate_scan, evaluate_model, fit_combinations,
                      fit_saturation, load_model, n_train_bands, parametrize_scans, save_model, temporal_series)
from operation import (Scenario, ScanFolder, estimates_frame, fsv_table, get_dir, load_scenario, rms,
                       scenario_record, write_csv, write_json, write_manifest)
from preprocess import estimate_time_zero, preprocess_bscan
from scan import BandPlan, load_bscan, save_bscan
from simulate import SceneSpec, render_scene
from utils import ConfigError, FitError, InputError, SaturationError, SdiError

logger = logging.getLogger('sdi')


def resolve_t0(config):
    if config.preprocess.reference:
        return estimate_time_zero(load_bscan(config.preprocess.reference))
    return config.preprocess.t0


def parse_band(text, sweep):
    if text is None:
        return None
    plan = BandPlan.parse(text, sweep)
    if plan.n_bands != 1:
        raise ConfigError(f"--band takes a single band, got '{text}'")
    return plan[0]


def render_scenario(scenario, out_dir, progress=False):
    """Forward model every scene into out_dir/scans and write out_dir/manifest.json."""
    scan_folder, _, _ = get_dir(out_dir)
    entries = []
    for idx, spec in enumerate(tqdm(scenario.scenes, disable=not progress, desc='simulating')):
        bscan = render_scene(spec, scenario.sweep, scenario.scanline, scenario.soil, scenario.grid,
                             scenario.moist_scene, seed=np.random.SeedSequence([scenario.seed, idx]))
        fname = f'{spec.name}.txt'
        save_bscan(bscan, os.path.join(scan_folder, fname))
        entries.append({'name': spec.name, 'file': f'scans/{fname}', 'sm': spec.sm, 'time_min': spec.time_min})
    manifest = os.path.join(out_dir, 'manifest.json')
    write_manifest(entries, manifest)
    return manifest


def load_scans(args):
    if getattr(args, 'manifest', None):
        dataset = ScanFolder(args.manifest)
        return dataset.names, dataset.times, dataset.scans()
    inputs = getattr(args, 'inputs', None) or []
    if not inputs:
        raise InputError('no B-scan given, use --manifest or list files')
    return [Path(p).stem for p in inputs], [None] * len(inputs), [(None, load_bscan(p)) for p in inputs]


def load_background(config):
    return load_bscan(config.preprocess.background) if config.preprocess.background else None


def parametrize(config, scans, bands, algorithms, normalize=None):
    return parametrize_scans(scans, bands, config.build_grid(), config.build_soil(), config.build_roi(),
                             algorithms, resolve_t0(config), config.preprocess.clutter_k, config.keep_index,
                             config.normalize if normalize is None else normalize, config.device,
                             config.progress, load_background(config))


def normalization_record(config, frame):
    if not config.normalize:
        return {'method': 'none'}
    method = 'reference' if config.preprocess.background else 'frobenius'
    return {'method': method, 'mean_norm': float(frame.norm.mean())}


def model_bands(model, config, sweep):
    if model.band_plan:
        return BandPlan(tuple(tuple(b) for b in model.band_plan)).check(sweep)
    return config.build_bands(sweep)


def model_normalize(model, config):
    """Whether the model's FSVs are normalized; the background must match the fit."""
    method = (model.normalization or {}).get('method', 'frobenius')
    if method == 'reference' and not config.preprocess.background:
        raise ConfigError(f'the {model.algorithm} model was fitted on background-subtracted scans, '
                          'give the dry reference with --preprocess.background')
    if method == 'frobenius' and config.preprocess.background:
        raise ConfigError(f'the {model.algorithm} model was fitted without a background, '
                          'drop --preprocess.background')
    return method != 'none'


def dataset_of(frame, algorithm):
    return frame[frame.algorithm == algorithm][['sm', 'fsv', 'band', 'algorithm']].reset_index(drop=True)


def fit_models(config, scans, out_dir):
    """Parametrize the labelled scans and build one MoistureModel per algorithm."""
    if any(sm is None for sm, _ in scans):
        raise InputError('every scan used for fitting needs a known SM')
    _, _, model_folder = get_dir(out_dir)
    bands = config.build_bands(scans[0][1].sweep)
    frame = parametrize(config, scans, bands, config.algorithms())
    models = {}
    for algorithm in config.algorithms():
        subset = frame[frame.algorithm == algorithm]
        write_csv(fsv_table(subset), os.path.join(out_dir, f'fsv_{algorithm}.csv'))
        normalization = normalization_record(config, subset)
        model = build_model(dataset_of(frame, algorithm), algorithm, bands.to_list(), config.train_fraction,
                            config.sign, normalization, config.seed, config.progress)
        save_model(model, os.path.join(model_folder, f'model_{algorithm}.json'))
        params = model.fits.assign(bands=model.fits.bands.map(lambda b: ' '.join(str(i) for i in b)))
        write_csv(params, os.path.join(out_dir, f'params_{algorithm}.csv'))
        print(f'{algorithm}: mu_a={model.mu_a:.6g} var_a={model.var_a:.6g} '
              f'mu_b={model.mu_b:.6g} var_b={model.var_b:.6g} ({model.n_combinations} combinations)')
        models[algorithm] = model
    return frame, models


def fsv_increasing(dataset):
    """True when the band-averaged FSV strictly increases with SM."""
    means = dataset.groupby('sm').fsv.mean().sort_index()
    return bool(np.all(np.diff(means.to_numpy()) > 0))


def cmd_simulate(config, args):
    scenario = load_scenario(args.scenario, config)
    manifest = render_scenario(scenario, config.out_dir, config.progress)
    print(f'{len(scenario.scenes)} scenes written, manifest {manifest}')


def cmd_preprocess(config, args):
    bscan = load_bscan(args.input)
    t0 = resolve_t0(config)
    clean, report = preprocess_bscan(bscan, t0, config.preprocess.clutter_k, parse_band(args.band, bscan.sweep),
                                     load_background(config))
    scan_folder, _, _ = get_dir(config.out_dir)
    stem = Path(args.input).stem
    output = args.output or os.path.join(scan_folder, f'{stem}_clean.txt')
    save_bscan(clean, output)
    write_json({'t0_s': t0, **report.to_dict()}, os.path.join(scan_folder, f'{stem}_clutter.json'))
    print(f'{output}: removed {report.removed_count} components, '
          f'{100 * report.removed_energy_fraction:.2f}% of the energy')


def cmd_image(config, args):
    bscan = load_bscan(args.input)
    band = parse_band(args.band, bscan.sweep)
    clean, _ = preprocess_bscan(bscan, resolve_t0(config), config.preprocess.clutter_k, band, load_background(config))
    grid, soil = config.build_grid(), config.build_soil()
    _, image_folder, _ = get_dir(config.out_dir)
    for algorithm in config.algorithms():
        image = form_image(algorithm, clean, grid, soil, keep=config.keep_index, device=config.device,
                           progress=config.progress, band=band)
        stem = os.path.join(image_folder, f'{Path(args.input).stem}_{algorithm}')
        save_image(image, stem, pgm=config.pgm)
        iz, ix = image.peak_cell()
        print(f'{algorithm}: peak at cell ({iz}, {ix}) x={grid.x[ix]:.4f} m z={grid.z[iz]:.4f} m -> {stem}.csv')


def cmd_fit(config, args):
    scans = ScanFolder(args.manifest).scans()
    if not scans:
        raise InputError(f'{args.manifest}: no scans to fit')
    fit_models(config, scans, config.out_dir)


def cmd_estimate(config, args):
    names, times, scans = load_scans(args)
    if args.times:
        times = [float(t) for t in args.times.split(',')]
        if len(times) != len(scans):
            raise ConfigError(f'{len(times)} times for {len(scans)} scans')
    if not scans:
        raise InputError('no scans to estimate')
    sweep = scans[0][1].sweep
    for path in args.model:
        model = load_model(path)
        bands = model_bands(model, config, sweep)
        frame = parametrize(config, scans, bands, (model.algorithm,), model_normalize(model, config))
        rows, valid = [], []
        for i, name in enumerate(names):
            values = frame[frame.scan == i].sort_values('band').fsv.to_numpy()
            try:
                result = estimate_scan(values, model, config.n_draws, config.seed)
            except SaturationError as e:
                logger.warning('%s: %s', name, e)
                rows.append({'scan': i, 'name': name, 'time_min': times[i], 'sm_mean': np.nan, 'sm_std': np.nan,
                             'n_valid_draws': 0, 'n_draws': config.n_draws * len(values), 'saturated': True})
                continue
            valid.append((i, result))
            rows.append({'scan': i, 'name': name, 'time_min': times[i], 'sm_mean': result.sm_mean,
                         'sm_std': result.sm_std, 'n_valid_draws': result.n_valid_draws,
                         'n_draws': result.n_draws, 'saturated': False})
            print(f'{model.algorithm} {name}: SM = {result.sm_mean:.3f} +- {result.sm_std:.3f} %')
        write_csv(estimates_frame(rows), os.path.join(config.out_dir, f'estimate_{model.algorithm}.csv'))

        timed = [(times[i], r) for i, r in valid if times[i] is not None]
        if len(timed) >= 2:
            series = temporal_series([t for t, _ in timed], [r for _, r in timed])
            write_csv(series, os.path.join(config.out_dir, f'temporal_{model.algorithm}.csv'))
            if len(timed) >= 3:
                try:
                    level, tau, _ = fit_saturation(series)
                    print(f'{model.algorithm}: saturation at {level:.3f} % SM, time constant {tau:.2f} min')
                except FitError as e:
                    logger.info('no saturation fit: %s', e)
        if args.exact_sm is not None:
            if not valid:
                raise SaturationError('no scan could be estimated')
            last = valid[-1][1].sm_mean
            print(f'{model.algorithm}: last scan {last:.3f} % vs gravimetric {args.exact_sm:.3f} % '
                  f'(error {last - args.exact_sm:+.3f})')


def cmd_evaluate(config, args):
    dataset_scans = ScanFolder(args.manifest).scans()
    if not dataset_scans:
        raise InputError(f'{args.manifest}: no scans to evaluate')
    if any(sm is None for sm, _ in dataset_scans):
        raise InputError('evaluation needs the exact SM of every scan')
    levels = [float(v) for v in args.levels.split(',')] if args.levels else None
    sweep = dataset_scans[0][1].sweep
    for path in args.model:
        model = load_model(path)
        bands = model_bands(model, config, sweep)
        frame = parametrize(config, dataset_scans, bands, (model.algorithm,), model_normalize(model, config))
        dataset = dataset_of(frame, model.algorithm)
        k = n_train_bands(bands.n_bands, config.train_fraction)
        if args.protocol == 'model':
            heldout = dataset if k == bands.n_bands else dataset[dataset.band >= k]
            report = evaluate_model(model, heldout, levels, config.n_draws, config.seed)
            table = report.table
            output = os.path.join(config.out_dir, f'smee_{model.algorithm}.csv')
        else:
            fits = fit_combinations(dataset, k, sign=model.sign, progress=config.progress)
            table = cross_validate(dataset, fits, levels, sign=model.sign)
            output = os.path.join(config.out_dir, f'cv_{model.algorithm}.csv')
        write_csv(table, output)
        print(f'{model.algorithm} ({args.protocol}): max |SMEE| = {np.nanmax(np.abs(table.smee)):.4f} -> {output}')


def pipeline_scenario(config):
    """Moisture sweep over the configured SM levels and its dry (SM = 0) reference scene.

    Clutter sits clutter_db above the bare pipe and is only added when something
    removes it again, the reference subtraction or SVD clutter removal.
    """
    sweep, scanline, soil, grid = (config.build_sweep(), config.build_scanline(), config.build_soil(),
                                   config.build_grid())
    moist_scene = config.build_moist_scene()
    dry = render_scene(SceneSpec('reference', sm=0.0, moist=True), sweep, scanline, soil, grid, moist_scene)
    removable = config.scene.subtract_reference or config.preprocess.clutter_k > 0
    clutter_level = rms(dry) * 10 ** (config.scene.clutter_db / 20) if removable else 0.0
    scenes = tuple(SceneSpec(f'sm_{level:g}', sm=float(level), moist=True, clutter_level=clutter_level,
                             snr_db=config.scene.snr_db) for level in config.scene.sm_levels)
    reference = SceneSpec('reference', sm=0.0, moist=True, clutter_level=clutter_level, snr_db=config.scene.snr_db)
    return Scenario(sweep, scanline, soil, grid, moist_scene, config.seed, scenes), reference


def cmd_pipeline(config, args):
    out_dir = config.out_dir
    scan_folder, _, _ = get_dir(out_dir)
    scenario, reference = pipeline_scenario(config)
    if config.scene.subtract_reference:
        dry = render_scene(reference, scenario.sweep, scenario.scanline, scenario.soil, scenario.grid,
                           scenario.moist_scene, seed=np.random.SeedSequence([scenario.seed, len(scenario.scenes)]))
        config.preprocess.background = os.path.join(scan_folder, 'reference.txt')
        save_bscan(dry, config.preprocess.background)
        if config.preprocess.clutter_k:
            logger.info('the dry reference cancels the clutter, SVD clutter removal turned off')
            config.preprocess.clutter_k = 0
    write_json(scenario_record(scenario), os.path.join(out_dir, 'scenario.json'))
    write_json(config.to_dict(), os.path.join(out_dir, 'config.json'))
    manifest = render_scenario(scenario, out_dir, config.progress)
    scans = ScanFolder(manifest).scans()

    frame, models = fit_models(config, scans, out_dir)
    summary = {}
    for algorithm, model in models.items():
        dataset = dataset_of(frame, algorithm)
        report = evaluate_model(model, dataset, n_draws=config.n_draws, seed=config.seed)
        write_csv(report.table, os.path.join(out_dir, f'smee_self_{algorithm}.csv'))
        cv = cross_validate(dataset, model.fits, sign=model.sign)
        write_csv(cv, os.path.join(out_dir, f'cv_{algorithm}.csv'))
        increasing = fsv_increasing(dataset)
        if not increasing:
            logger.warning('%s: FSV is not strictly increasing with SM', algorithm)
        summary[algorithm] = {'fsv_increasing': increasing,
                              'max_abs_smee_self': float(np.nanmax(np.abs(report.table.smee))),
                              'max_abs_smee_cv': float(np.nanmax(np.abs(cv.smee))),
                              'model': model.to_dict()}
        print(f"{algorithm}: FSV increasing {increasing}, self SMEE <= {summary[algorithm]['max_abs_smee_self']:.4f}, "
              f"held-out SMEE <= {summary[algorithm]['max_abs_smee_cv']:.4f}")
    write_json(summary, os.path.join(out_dir, 'summary.json'))
    print(f'results in {out_dir}')


def get_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--verbose', action='store_true', help='debug logging')
    add_config_arguments(common)

    parser = argparse.ArgumentParser(description='subsurface imaging and soil moisture estimation')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', parents=[common], help='render a scenario file into B-scans')
    p.add_argument('--scenario', type=str, required=True, help='scenario JSON file')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('preprocess', parents=[common], help='zero timing and clutter removal')
    p.add_argument('input', type=str, help='B-scan file')
    p.add_argument('--band', type=str, default=None, help='band s:e of sweep indices (default: whole sweep)')
    p.add_argument('--output', type=str, default=None, help='cleaned B-scan path')
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser('image', parents=[common], help='form BAA and/or BPA images')
    p.add_argument('input', type=str, help='B-scan file')
    p.add_argument('--band', type=str, default=None, help='band s:e of sweep indices (default: whole sweep)')
    p.set_defaults(func=cmd_image)

    p = sub.add_parser('fit', parents=[common], help='build the moisture model from labelled scans')
    p.add_argument('--manifest', type=str, required=True, help='manifest of scans with known SM')
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser('estimate', parents=[common], help='estimate SM of scans with a fitted model')
    p.add_argument('inputs', nargs='*', help='B-scan files (ignored with --manifest)')
    p.add_argument('--manifest', type=str, default=None, help='manifest of scans (carries scan times)')
    p.add_argument('--model', type=str, nargs='+', required=True, help='model JSON file(s)')
    p.add_argument('--times', type=str, default=None, help='scan times in minutes t1,t2,...')
    p.add_argument('--exact-sm', '--exact_sm', dest='exact_sm', type=float, default=None,
                   help='gravimetric SM of the last scan, in percent')
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser('evaluate', parents=[common], help='SMEE on held-out bands')
    p.add_argument('--manifest', type=str, required=True, help='manifest of scans with known SM')
    p.add_argument('--model', type=str, nargs='+', required=True, help='model JSON file(s)')
    p.add_argument('--protocol', type=str, default='model', choices=['model', 'combinations'],
                   help='model: score the saved model on the held-out bands; '
                        'combinations: each combination scores its complementary bands')
    p.add_argument('--levels', type=str, default=None, help='SM levels to report, l1,l2,...')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('pipeline', parents=[common], help='simulate, fit and evaluate end to end')
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    args = get_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        config = config_from_args(args)
        args.func(config, args)
    except SdiError as e:
        print(f'{e.category} error: {e}', file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f'input error: {e}', file=sys.stderr)
        return InputError.exit_code
    return 0


if __name__ == '__main__':
    sys.exit(main())
