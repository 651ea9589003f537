"""
Reporting Package
Contains the experiment runner and the CSV/JSON result writers
"""

from .exporter import RunMetadata, DoaSummary, write_trajectory_csv, read_trajectory_csv, write_doa_csv
from .experiment import ExperimentConfig, ExperimentResult, run_experiment, run_doa

__all__ = [
    'RunMetadata',
    'DoaSummary',
    'write_trajectory_csv',
    'read_trajectory_csv',
    'write_doa_csv',
    'ExperimentConfig',
    'ExperimentResult',
    'run_experiment',
    'run_doa',
]
