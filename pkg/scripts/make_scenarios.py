import argparse
import math
import os

import numpy as np

from config import PipelineConfig
from moisture import SM_LEVELS
from operation import Scenario, scenario_record, write_json
from simulate import PointScatterer, SceneSpec


def leak_sm(t, level=20.0, tau=30.0):
    return level * (1 - math.exp(-t / tau))


def make_scenarios(config, seed=0):
    sweep, scanline, soil, grid = (config.build_sweep(), config.build_scanline(), config.build_soil(),
                                   config.build_grid())
    moist_scene = config.build_moist_scene()

    def scenario(scenes):
        return Scenario(sweep, scanline, soil, grid, moist_scene, seed, tuple(scenes))

    sweep_scenes = [SceneSpec(f'sm_{sm:g}', sm=sm, moist=True) for sm in SM_LEVELS]

    # weak random scatterers around the pipe; image these with --clutter-k 2
    medium = {'region': [grid.x_min, grid.x_max, grid.z_min, grid.z_max], 'count': 40, 'amplitude': 0.02,
              'seed': seed}
    roots = [SceneSpec(f'roots_sm_{sm:g}', sm=sm, moist=True, medium=medium) for sm in SM_LEVELS]

    times = np.linspace(0.0, 154.0, 10)
    leak = [SceneSpec(f'leak_{i:02d}', sm=round(leak_sm(t), 9), time_min=round(float(t), 9), moist=True)
            for i, t in enumerate(times)]

    # dry (SM = 0) scene, subtracted from the moist scans with --preprocess.background
    dry = [SceneSpec('reference', sm=0.0, moist=True)]

    points = [SceneSpec('two_points', points=(PointScatterer((0.5, 0.1), 1.0), PointScatterer((0.7, 0.2), 0.5)))]

    return {
        'moisture_sweep': scenario(sweep_scenes),
        'roots_pebbles': scenario(roots),
        'leak_series': scenario(leak),
        'point_targets': scenario(points),
        'dry_reference': scenario(dry),
    }


if __name__ == '__main__':
    parser = argparse.ArgumentParser(description='write the scenario files')
    parser.add_argument('--out_dir', type=str, default='scenarios', help='folder for the scenario JSON files')
    parser.add_argument('--preset', type=str, default='desk', help='geometry preset: table1 or desk')
    parser.add_argument('--seed', type=int, default=0, help='scenario seed')
    args = parser.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    for name, scenario in make_scenarios(PipelineConfig.from_preset(args.preset), args.seed).items():
        path = os.path.join(args.out_dir, f'{name}.json')
        write_json(scenario_record(scenario), path)
        print(f'{path}: {len(scenario.scenes)} scenes')
