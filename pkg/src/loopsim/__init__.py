"""Exact simulation of a self-looped time-bin interferometer with photon-counting reset."""

__version__ = "0.1.0"

from .fock_core import Detector, ScatteringMatrix, amplitude, amplitude_oracle, make_unitary, output_distribution
from .chain import (
    TrajectoryRecord,
    build_transition,
    count_trajectories,
    enumerate_trajectories,
    evolve_distribution,
    filter_posterior,
    joint_two_step,
    stationary,
)

__all__ = [
    "Detector",
    "ScatteringMatrix",
    "TrajectoryRecord",
    "amplitude",
    "amplitude_oracle",
    "build_transition",
    "count_trajectories",
    "enumerate_trajectories",
    "evolve_distribution",
    "filter_posterior",
    "joint_two_step",
    "make_unitary",
    "output_distribution",
    "stationary",
]
