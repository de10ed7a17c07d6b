class SdiError(Exception):
    """Base of every error raised by the toolkit; carries the CLI exit code."""
    exit_code = 1
    category = 'error'


class InputError(SdiError, ValueError):
    exit_code = 2
    category = 'input'


class FormatError(InputError):
    pass


class DimensionError(InputError):
    pass


class NumericalError(SdiError):
    exit_code = 3
    category = 'numerical'


class DomainError(NumericalError, ValueError):
    pass


class NoKneeError(NumericalError):
    pass


class EstimationError(NumericalError):
    pass


class FitError(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ModelError(NumericalError):
    pass


class SaturationError(NumericalError):
    pass


class EvaluationError(NumericalError):
    pass


class ConfigError(SdiError):
    exit_code = 4
    category = 'configuration'


class ParameterError(ConfigError, ValueError):
    pass


class BandIndexError(ParameterError, IndexError):
    pass


class GeometryError(ConfigError, ValueError):
    pass


class RegionError(ConfigError, ValueError):
    pass


def get_geometry_details(name):
    """Named acquisition/grid presets.

    table1: the laboratory acquisition (45 positions over 1.2 m, 1.2-3.775 GHz
    in 25 MHz steps) with the 60x60 imaging mesh.
    desk: same acquisition, coarse 24x12 mesh around the pipe so the Born
    operator of every band factorizes in about a second.
    """
    acquisition = {
        'sweep': {'f_start': 1.2e9, 'f_step': 25e6, 'n_freqs': 104},
        'scanline': {'x_start': 0.0, 'length': 1.2, 'n_positions': 45},
    }
    geometry = {
        'table1': {**acquisition,
                   'grid': {'x_min': 0.0, 'x_max': 1.2, 'z_min': 0.02, 'z_max': 0.42, 'nx': 60, 'nz': 60}},
        'desk': {**acquisition,
                 'grid': {'x_min': 0.36, 'x_max': 0.84, 'z_min': 0.02, 'z_max': 0.26, 'nx': 24, 'nz': 12}},
    }
    if name not in geometry:
        raise ConfigError(f"unknown geometry preset '{name}', valid options are: {', '.join(geometry)}")
    return geometry[name]
