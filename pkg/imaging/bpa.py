import logging

import numpy as np
import torch
from tqdm import tqdm

from imaging.image import Image
from scan import wavenumber
from utils import ParameterError

logger = logging.getLogger(__name__)


@torch.no_grad()
def bpa_image(bscan, grid, soil, device='cpu', chunk_size=256, compensate_spreading=False,
              progress=False, band=None):
    """Back projection S(r_i) = sum_f sum_s E_s(r_s, w_f) exp(+2j k_f |r_i - r_s|).

    The air path is ignored (antennas on the surface). With compensate_spreading
    each term is weighted by the two-way cylindrical spreading factor |r_i - r_s|.
    """
    if grid.n_cells < 1:
        raise ParameterError('empty reconstruction grid')
    device = torch.device(device)
    k = torch.as_tensor(wavenumber(bscan.sweep.frequencies, soil), dtype=torch.complex128, device=device)
    data = torch.as_tensor(np.array(bscan.data), dtype=torch.complex128, device=device)
    antennas = torch.as_tensor(bscan.scanline.positions, dtype=torch.float64, device=device)
    centers = torch.as_tensor(grid.centers, dtype=torch.float64, device=device)

    image = torch.zeros(grid.n_cells, dtype=torch.complex128, device=device)
    starts = range(0, grid.n_cells, chunk_size)
    for start in tqdm(starts, disable=not progress, desc='back projection'):
        cells = centers[start:start + chunk_size]
        dist = torch.cdist(cells, antennas, compute_mode='donot_use_mm_for_euclid_dist')  # (C, N_s)
        phase = torch.exp(2j * dist[:, :, None].to(k.dtype) * k[None, None, :])
        if compensate_spreading:
            phase = phase * dist[:, :, None]
        image[start:start + chunk_size] = torch.einsum('sf,csf->c', data, phase)

    logger.debug('back projected %d samples onto %d cells', bscan.data.size, grid.n_cells)
    return Image(grid, image.cpu().numpy(), 'BPA', band)
