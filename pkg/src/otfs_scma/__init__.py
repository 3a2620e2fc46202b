"""Uplink OTFS-SCMA link-level simulator with dual-chain joint reception."""

from .codebook import AllocationAxis, ScmaCodebook, load_codebook
from .geometry import GeometryConfig, Scheme
from .grid import OtfsGrid
from .simulator import SimulationConfig, run_bound, run_sweep

__all__ = [
    "AllocationAxis",
    "GeometryConfig",
    "OtfsGrid",
    "Scheme",
    "ScmaCodebook",
    "SimulationConfig",
    "load_codebook",
    "run_bound",
    "run_sweep",
]

__version__ = "0.1.0"
