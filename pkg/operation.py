import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from torch.utils.data import Dataset

from scan import FrequencySweep, ScanLine, SoilModel, ReconstructionGrid, load_bscan
from simulate import MoistScene, PointScatterer, SceneSpec
from utils import ConfigError, FormatError, InputError, SdiError


def get_dir(out_dir):
    """Create the output tree and return its scan, image and model folders."""
    saved_scan_folder = os.path.join(out_dir, 'scans')
    saved_image_folder = os.path.join(out_dir, 'images')
    saved_model_folder = os.path.join(out_dir, 'models')

    os.makedirs(saved_scan_folder, exist_ok=True)
    os.makedirs(saved_image_folder, exist_ok=True)
    os.makedirs(saved_model_folder, exist_ok=True)

    return saved_scan_folder, saved_image_folder, saved_model_folder


def write_json(record, path):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(record, f, indent=2)
        f.write('\n')


def read_json(path):
    try:
        with open(path, encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f'{path}:{e.lineno}:{e.colno}: {e.msg}') from None
    except OSError as e:
        raise InputError(f'cannot read {path}: {e.strerror}') from None


def write_csv(frame, path):
    frame.to_csv(path, index=False, float_format='%.12g', lineterminator='\n')


def write_manifest(entries, path):
    """entries: dicts with name, file (relative to the manifest), sm and time_min."""
    write_json({'scenes': list(entries)}, path)


def read_manifest(path):
    record = read_json(path)
    if not isinstance(record, dict) or not isinstance(record.get('scenes'), list):
        raise FormatError(f'{path}: manifest must be an object with a "scenes" list')
    root = Path(path).parent
    entries = []
    for i, scene in enumerate(record['scenes']):
        if not isinstance(scene, dict) or 'file' not in scene:
            raise FormatError(f'{path}: scenes[{i}] lacks "file"')
        entries.append({'name': scene.get('name', Path(scene['file']).stem),
                        'file': str(root / scene['file']),
                        'sm': scene.get('sm'), 'time_min': scene.get('time_min')})
    return entries


class ScanFolder(Dataset):
    """B-scans listed in a manifest, yielding (sm, BScan) pairs.

    Files are read lazily; sm is None for scenes without a known moisture.
    """
    def __init__(self, manifest):
        super(ScanFolder, self).__init__()
        self.manifest = manifest
        self.frame = read_manifest(manifest)

    @property
    def times(self):
        return [e['time_min'] for e in self.frame]

    @property
    def names(self):
        return [e['name'] for e in self.frame]

    def __len__(self):
        return len(self.frame)

    def __getitem__(self, idx):
        entry = self.frame[idx]
        try:
            bscan = load_bscan(entry['file'])
        except OSError as e:
            raise InputError(f"{self.manifest}: cannot read {entry['file']}: {e.strerror}") from None
        return entry['sm'], bscan

    def scans(self):
        return [self[i] for i in range(len(self))]


@dataclass(frozen=True)
class Scenario:
    sweep: FrequencySweep
    scanline: ScanLine
    soil: SoilModel
    grid: ReconstructionGrid
    moist_scene: MoistScene
    seed: int
    scenes: tuple


def _section(record, key, where, default=None):
    value = record.get(key, default)
    if value is None:
        raise FormatError(f'{where}: missing "{key}"')
    if not isinstance(value, dict):
        raise FormatError(f'{where}.{key}: expected an object')
    return value


def _build(factory, kwargs, where):
    try:
        return factory(**kwargs)
    except TypeError as e:
        raise FormatError(f'{where}: {e}') from None
    except SdiError as e:
        raise type(e)(f'{where}: {e}') from None


def _amplitude(value, where):
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, list) and len(value) == 2:
        return complex(value[0], value[1])
    raise FormatError(f'{where}: amplitude must be a number or [re, im]')


def _scene(record, where):
    if not isinstance(record, dict):
        raise FormatError(f'{where}: expected an object')
    if 'name' not in record:
        raise FormatError(f'{where}: missing "name"')
    points = []
    for j, p in enumerate(record.get('points', [])):
        pw = f'{where}.points[{j}]'
        if not isinstance(p, dict) or 'x' not in p or 'z' not in p:
            raise FormatError(f'{pw}: a point needs "x" and "z"')
        points.append(_build(PointScatterer, {'position': (p['x'], p['z']),
                                              'amplitude': _amplitude(p.get('amplitude', 1.0), pw)}, pw))
    medium = record.get('medium')
    if medium is not None:
        missing = [k for k in ('region', 'count', 'amplitude') if k not in medium]
        if missing:
            raise FormatError(f'{where}.medium: missing {", ".join(missing)}')
    snr = record.get('snr_db')
    kwargs = {
        'name': str(record['name']),
        'sm': record.get('sm'),
        'time_min': record.get('time_min'),
        'points': tuple(points),
        'moist': bool(record.get('moist', False)),
        'medium': medium,
        'clutter_level': float(record.get('clutter_level', 0.0)),
        'snr_db': math.inf if snr is None else float(snr),
        'delay_s': float(record.get('delay_s', 0.0)),
    }
    if kwargs['moist'] and kwargs['sm'] is None:
        raise FormatError(f'{where}: moist scenes need "sm"')
    return _build(SceneSpec, kwargs, where)


def load_scenario(path, defaults=None):
    """Parse a scenario file into geometry and the list of scenes.

    Sections missing from the file fall back to `defaults` (a PipelineConfig).
    """
    record = read_json(path)
    where = str(path)
    if not isinstance(record, dict):
        raise FormatError(f'{where}: top level must be an object')
    fallback = defaults.to_dict() if defaults is not None else {}

    sweep = _build(FrequencySweep, _section(record, 'sweep', where, fallback.get('sweep')), f'{where}.sweep')
    line = _section(record, 'scanline', where, fallback.get('scanline'))
    if 'length' in line:
        scanline = _build(ScanLine.from_length, line, f'{where}.scanline')
    else:
        scanline = _build(ScanLine, line, f'{where}.scanline')
    soil = _build(SoilModel, _section(record, 'soil', where, fallback.get('soil', {})), f'{where}.soil')
    grid = _build(ReconstructionGrid, _section(record, 'grid', where, fallback.get('grid')), f'{where}.grid')
    scene_defaults = {k: v for k, v in fallback.get('scene', {}).items()
                      if k in MoistScene.__dataclass_fields__}
    moist_scene = _build(MoistScene, {**scene_defaults, **record.get('moist_scene', {})}, f'{where}.moist_scene')

    scenes = record.get('scenes', [])
    if not isinstance(scenes, list):
        raise FormatError(f'{where}.scenes: expected a list')
    specs = tuple(_scene(s, f'{where}.scenes[{i}]') for i, s in enumerate(scenes))
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise FormatError(f'{where}.scenes: duplicate scene names')
    seed = record.get('seed', 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f'{where}.seed: expected a non-negative integer')
    return Scenario(sweep, scanline, soil, grid, moist_scene, seed, specs)


def scenario_record(scenario):
    """Inverse of load_scenario for writing scenario files."""
    def scene(spec):
        out = {'name': spec.name}
        if spec.sm is not None:
            out['sm'] = spec.sm
        if spec.time_min is not None:
            out['time_min'] = spec.time_min
        if spec.points:
            out['points'] = [{'x': p.position[0], 'z': p.position[1],
                              'amplitude': [complex(p.amplitude).real, complex(p.amplitude).imag]}
                             for p in spec.points]
        if spec.moist:
            out['moist'] = True
        if spec.medium:
            out['medium'] = spec.medium
        if spec.clutter_level:
            out['clutter_level'] = spec.clutter_level
        if spec.snr_db != math.inf:
            out['snr_db'] = spec.snr_db
        if spec.delay_s:
            out['delay_s'] = spec.delay_s
        return out

    return {
        'seed': scenario.seed,
        'sweep': {'f_start': scenario.sweep.f_start, 'f_step': scenario.sweep.f_step,
                  'n_freqs': scenario.sweep.n_freqs},
        'scanline': {'x_start': scenario.scanline.x_start, 'x_step': scenario.scanline.x_step,
                     'n_positions': scenario.scanline.n_positions},
        'soil': {'eps_real': scenario.soil.eps_real, 'eps_imag': scenario.soil.eps_imag,
                 'light_speed': scenario.soil.light_speed},
        'grid': scenario.grid.to_dict(),
        'moist_scene': vars(scenario.moist_scene),
        'scenes': [scene(s) for s in scenario.scenes],
    }


def fsv_table(frame):
    """Pivot a parametrization frame into one row per scan, one column per band."""
    table = frame.pivot_table(index='scan', columns='band', values='fsv')
    table.columns = [f'band_{b}' for b in table.columns]
    table.insert(0, 'sm', frame.groupby('scan').sm.first())
    return table.reset_index()


def rms(bscan):
    return float(np.sqrt(np.mean(np.abs(bscan.data) ** 2)))


def estimates_frame(rows):
    return pd.DataFrame(rows, columns=['scan', 'name', 'time_min', 'sm_mean', 'sm_std', 'n_valid_draws',
                                       'n_draws', 'saturated'])
