"""Run configuration: a tree of dataclasses loaded from JSON and overridden by
dotted command-line flags (`--grid.nx 30`, `--preprocess.clutter_k 2`).
"""
import argparse
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import torch
from scipy import constants

from moisture import SM_LEVELS, RegionOfInterest
from scan import BandPlan, FrequencySweep, ReconstructionGrid, ScanLine, SoilModel
from simulate import MoistScene
from utils import ConfigError, get_geometry_details

ALGORITHM_CHOICES = ('baa', 'bpa', 'both')


@dataclass
class SweepConfig:
    f_start: float = 1.2e9
    f_step: float = 25e6
    n_freqs: int = 104


@dataclass
class ScanlineConfig:
    x_start: float = 0.0
    length: float = 1.2
    n_positions: int = 45


@dataclass
class SoilConfig:
    eps_real: float = 4.0
    eps_imag: float = 0.0
    light_speed: float = constants.c


@dataclass
class GridConfig:
    x_min: float = 0.36
    x_max: float = 0.84
    z_min: float = 0.02
    z_max: float = 0.26
    nx: int = 24
    nz: int = 12


@dataclass
class RoiConfig:
    # pipe x-extent +- 10 cm, surface down to the pipe top
    x_min: float = 0.4775
    x_max: float = 0.7225
    z_min: float = 0.0
    z_max: float = 0.12


@dataclass
class BandConfig:
    spec: str = 'auto'
    f_lo: float = 1.3e9
    width: float = 2.2e9
    n_bands: int = 16
    spacing: float = 25e6


@dataclass
class PreprocessConfig:
    t0: float = 0.0
    clutter_k: int = 1
    reference: str = ''
    background: str = ''


@dataclass
class SceneConfig:
    pipe_x: float = 0.6
    pipe_depth: float = 0.12
    pipe_diameter: float = 0.045
    pipe_contrast: float = 1.0
    moist_gain: float = 0.1
    moist_half_width: float = 0.1
    moist_top: float = 0.0
    moist_law: str = 'saturating'
    moist_rate: float = 0.005
    sm_levels: list = field(default_factory=lambda: list(SM_LEVELS))
    clutter_db: float = 20.0
    snr_db: float = math.inf
    subtract_reference: bool = True


@dataclass
class PipelineConfig:
    out_dir: str = 'save/sdi'
    algorithm: str = 'both'
    seed: int = 0
    n_draws: int = 1000
    train_fraction: float = 0.75
    keep: int = 0
    normalize: bool = True
    printed_sign: bool = False
    device: str = 'cpu'
    pgm: bool = False
    progress: bool = False
    sweep: SweepConfig = field(default_factory=SweepConfig)
    scanline: ScanlineConfig = field(default_factory=ScanlineConfig)
    soil: SoilConfig = field(default_factory=SoilConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    roi: RoiConfig = field(default_factory=RoiConfig)
    bands: BandConfig = field(default_factory=BandConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)

    @classmethod
    def from_preset(cls, name):
        preset = get_geometry_details(name)
        return cls(sweep=SweepConfig(**preset['sweep']), scanline=ScanlineConfig(**preset['scanline']),
                   grid=GridConfig(**preset['grid']))

    def build_sweep(self):
        return FrequencySweep(self.sweep.f_start, self.sweep.f_step, self.sweep.n_freqs)

    def build_scanline(self):
        s = self.scanline
        return ScanLine.from_length(s.x_start, s.length, s.n_positions)

    def build_soil(self):
        return SoilModel(self.soil.eps_real, self.soil.eps_imag, self.soil.light_speed)

    def build_grid(self):
        return ReconstructionGrid(**asdict(self.grid))

    def build_roi(self):
        return RegionOfInterest(**asdict(self.roi))

    def build_bands(self, sweep=None):
        b = self.bands
        return BandPlan.parse(b.spec, sweep or self.build_sweep(), f_lo=b.f_lo, width=b.width,
                              n_bands=b.n_bands, spacing=b.spacing)

    def build_moist_scene(self):
        s = asdict(self.scene)
        return MoistScene(**{k: s[k] for k in MoistScene.__dataclass_fields__})

    def algorithms(self):
        return ('BAA', 'BPA') if self.algorithm == 'both' else (self.algorithm.upper(),)

    @property
    def sign(self):
        """Exponent sign of the FSV model; +1 is the form with exp(+b SM)."""
        return 1 if self.printed_sign else -1

    @property
    def keep_index(self):
        """None selects the knee threshold."""
        return self.keep or None

    def validate(self):
        if self.algorithm not in ALGORITHM_CHOICES:
            raise ConfigError(f"algorithm must be one of {', '.join(ALGORITHM_CHOICES)}, got '{self.algorithm}'")
        if self.n_draws < 1:
            raise ConfigError(f'n_draws must be >= 1, got {self.n_draws}')
        if not 0 < self.train_fraction <= 1:
            raise ConfigError(f'train_fraction must be in (0, 1], got {self.train_fraction}')
        if self.keep < 0:
            raise ConfigError(f'keep must be >= 0 (0 selects the knee), got {self.keep}')
        if self.preprocess.clutter_k < 0:
            raise ConfigError(f'clutter_k must be >= 0, got {self.preprocess.clutter_k}')
        try:
            torch.device(self.device)
        except RuntimeError:
            raise ConfigError(f"invalid device '{self.device}'") from None
        sweep = self.build_sweep()
        self.build_scanline()
        self.build_soil()
        self.build_grid()
        self.build_roi()
        self.build_bands(sweep)
        self.build_moist_scene()
        return self

    def to_dict(self):
        return asdict(self)


def _merge(obj, record, where):
    names = {f.name: f for f in fields(obj)}
    for key, value in record.items():
        if key not in names:
            raise ConfigError(f"{where}: unknown key '{key}'")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f'{where}.{key}: expected an object')
            _merge(current, value, f'{where}.{key}')
        else:
            setattr(obj, key, _coerce(names[key].type, value, f'{where}.{key}'))


def _coerce(kind, value, where):
    try:
        if kind is bool:
            return value if isinstance(value, bool) else str2bool(value)
        if kind is list:
            return [float(v) for v in (value.split(',') if isinstance(value, str) else value)]
        return kind(value)
    except (TypeError, ValueError, argparse.ArgumentTypeError):
        raise ConfigError(f'{where}: cannot read {value!r} as {kind.__name__}') from None


def load_config(path=None, preset='desk'):
    config = PipelineConfig.from_preset(preset)
    if path is None:
        return config
    try:
        with open(path, encoding='utf-8') as f:
            record = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f'{path}:{e.lineno}:{e.colno}: {e.msg}') from None
    except OSError as e:
        raise ConfigError(f'cannot read config {path}: {e.strerror}') from None
    if not isinstance(record, dict):
        raise ConfigError(f'{path}: top level must be an object')
    _merge(config, record, str(path))
    return config


def str2bool(v):
    if isinstance(v, bool):
        return v
    if v.lower() in ('yes', 'true', 't', 'y', '1'):
        return True
    if v.lower() in ('no', 'false', 'f', 'n', '0'):
        return False
    raise argparse.ArgumentTypeError('Boolean value expected.')


def _dotted_fields(obj, prefix=''):
    for f in fields(obj):
        value = getattr(obj, f.name)
        if is_dataclass(value):
            yield from _dotted_fields(value, f'{prefix}{f.name}.')
        else:
            yield f'{prefix}{f.name}', f.type


def add_config_arguments(parser):
    """One `--section.field` flag per config field, plus the short aliases."""
    group = parser.add_argument_group('configuration')
    group.add_argument('--config', type=str, default=None, help='JSON config file')
    group.add_argument('--preset', type=str, default='desk', help='geometry preset: table1 or desk')
    for name, kind in _dotted_fields(PipelineConfig()):
        group.add_argument(f'--{name}', dest=f'cfg:{name}', type=str, default=argparse.SUPPRESS,
                           help=f'override {name} ({kind.__name__})')
    group.add_argument('--clutter-k', '--clutter_k', dest='cfg:preprocess.clutter_k', type=str,
                       default=argparse.SUPPRESS, help='number of SVD components removed as clutter')
    group.add_argument('--draws', dest='cfg:n_draws', type=str, default=argparse.SUPPRESS,
                       help='Monte-Carlo model draws per estimate')
    group.add_argument('--bands', dest='cfg:bands.spec', type=str, default=argparse.SUPPRESS,
                       help="band plan: 'auto', 'full' or 's:e,s:e,...'")
    group.add_argument('--roi', dest='roi', type=str, default=None, help='region of interest x0,x1,z0,z1 in m')
    return parser


def config_from_args(args):
    config = load_config(args.config, args.preset)
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith('cfg:')}
    for name, value in overrides.items():
        *path, key = name.split('.')
        target = config
        for part in path:
            target = getattr(target, part)
        kind = next(f.type for f in fields(target) if f.name == key)
        setattr(target, key, _coerce(kind, value, f'--{name}'))
    if args.roi:
        roi = RegionOfInterest.parse(args.roi)
        config.roi = RoiConfig(roi.x_min, roi.x_max, roi.z_min, roi.z_max)
    config.algorithm = config.algorithm.lower()
    return config.validate()
