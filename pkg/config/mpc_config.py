"""
MPC Configuration - Constants, benchmark parameter sets and config-file parsing
"""

import numpy as np
from pathlib import Path
from typing import Dict, List, Tuple, Union

# Logging
LOG_FILE = 'iscd_mpc.log'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# QP solver settings
QP_TOLERANCE = 1e-8
QP_MAX_ITER_FACTOR = 10  # cap = factor * (d + inequality rows)

# Removable singularities: |u| below this uses the limit value
SINGULARITY_GUARD = 1e-9

# Truth integration (adaptive Dormand-Prince)
RK45_RTOL = 1e-5
RK45_ATOL = 1e-5

# Domain-of-attraction study
DOA_STEPS = 600
DOA_WINDOW = (580, 600)  # inclusive on both ends
DOA_THRESHOLD = 0.01
DOA_HORIZONS = (50, 100, 200)
DOA_GRID = '-10:1:10'

# CSV output
CSV_DELIMITER = ','

# Benchmark parameter sets
BENCHMARK_CONFIG = {
    'kapitza': {
        'sample_time': 0.1,
        'l': 0.25,
        'r': 1.0,
        'a': 2.0,
        'g': 9.81,
        'x0': [np.pi, np.pi, np.pi],
        'u0': [0.0],
        'u_min': -3.0,
        'u_max': 3.0,
        'horizon': 50,
        'rho': 30,
        'eps': 1e-3,
        'q_diag': [1e4, 1e3, 1e6],
        'r_diag': [1.0],
        'steps': 600,
        'description': 'Kapitza pendulum with slider-crank actuation',
    },
    'nonholonomic': {
        'sample_time': 0.01,
        'x0': [10.0, 10.0, 10.0],
        'u0': [0.0, 0.0],
        'u_min': -1.0,
        'u_max': 1.0,
        'horizon': 500,
        'rho': 50,
        'eps': 1e-3,
        'q_diag': [1e3, 1e3, 1e4],
        'r_diag': [1.0, 1.0],
        'steps': 2000,
        'description': 'Nonholonomic integrator with magnitude saturation',
    },
    'emag': {
        'sample_time': 0.01,
        'm_bar': 1.0,
        'k_bar': 5.0,
        'b_bar': 5.0,  # listed as c-bar in the parameter table
        'q_bar': 3.0,
        'eps_bar': 1.0,
        'r': 2.0,
        'z0': [0.0, 0.0],
        'u0': [1e-2],
        'u_min': -10.0,  # current limits on i-bar
        'u_max': 10.0,
        'horizon': 300,
        'rho': 50,
        'eps': 1e-3,
        'q_diag': [1e3, 1e2],
        'r_diag': [1.0],
        'steps': 1000,
        'description': 'Electromagnetically controlled oscillator',
    },
    'triple_integrator': {
        'sample_time': 0.1,
        'x0': [300.0, 0.0, 0.0],
        'u0': [0.0],
        'u_min': -1.0,
        'u_max': 2.0,
        'horizon': 200,
        'rho': 30,
        'eps': 1e-3,
        'q_diag': [1e10, 1e10, 1e10],
        'r_diag': [1.0],
        'steps': 600,
        'description': 'Triple integrator, output feedback, asymmetric saturation',
    },
}

BENCHMARK_NAMES = tuple(BENCHMARK_CONFIG.keys())

# Keys accepted in a key = value config file
CONFIG_FILE_KEYS = (
    'l', 'rho', 'eps', 'steps', 'x0', 'u0', 'q_diag', 'q_terminal_diag',
    'r_diag', 'u_min', 'u_max', 'box_controls',
)


def parse_float_list(text: str) -> List[float]:
    """Parse a comma list such as '1e3, 1e2' into floats"""
    items = [item.strip() for item in text.split(',')]
    return [float(item) for item in items if item]


def parse_int_list(text: str) -> List[int]:
    """Parse a comma list of integers such as '50,100,200'"""
    return [int(item.strip()) for item in text.split(',') if item.strip()]


def parse_grid_spec(spec: str) -> np.ndarray:
    """
    Expand a min:step:max grid specification (inclusive of max)

    Args:
        spec: Text like '-10:1:10'

    Returns:
        1-D array of grid points
    """
    parts = spec.split(':')
    if len(parts) != 3:
        raise ValueError(f"Grid spec '{spec}' is not of the form min:step:max")
    lo, step, hi = (float(p) for p in parts)
    if step <= 0 or hi < lo:
        raise ValueError(f"Grid spec '{spec}' needs step > 0 and max >= min")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """
    Read a flat key = value configuration file

    Blank lines and lines starting with '#' are skipped. Values stay text;
    arrays are comma lists and get parsed by the caller.

    Args:
        path: File to read

    Returns:
        Mapping of key to raw value text
    """
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got '{raw}'")
        key, value = (part.strip() for part in line.split('=', 1))
        if key not in CONFIG_FILE_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown key '{key}'")
        values[key] = value
    return values


def grid_points(axis: np.ndarray) -> List[Tuple[float, float]]:
    """Cartesian product of one axis with itself, x1-major order"""
    return [(float(a), float(b)) for a in axis for b in axis]
