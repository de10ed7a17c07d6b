from imaging.image import Image, load_image_values, save_image
from imaging.baa import (GammaMatrix, baa_image, build_gamma, gamma_entries, incident_field,
                         svd_threshold_index, tsvd_invert)
from imaging.bpa import bpa_image
from utils import ConfigError

ALGORITHMS = ('BAA', 'BPA')


def form_image(algorithm, bscan, grid, soil, gamma=None, keep=None, device='cpu', progress=False, band=None):
    """Dispatch to the selected image formation algorithm."""
    if algorithm == 'BAA':
        return baa_image(bscan, grid, soil, keep=keep, gamma=gamma, band=band)
    if algorithm == 'BPA':
        return bpa_image(bscan, grid, soil, device=device, progress=progress, band=band)
    raise ConfigError(f'algorithm [{algorithm}] not recognized.')
