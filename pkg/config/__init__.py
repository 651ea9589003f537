"""
Configuration Package
Contains solver constants, benchmark parameter sets and config-file parsing
"""

from .mpc_config import *
