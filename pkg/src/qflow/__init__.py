"""Trajectory flows of hydrogen wave packets.

Builds the velocity field of a wave packet from closed-form hydrogen
eigenstates, integrates its trajectories together with the linearized
(variational) dynamics, extracts Lyapunov spectra, and averages the leading
exponent over a density-weighted ensemble of initial conditions.
"""

from .hydrogen import QuantumNumbers, energy, eval_eigenstate
from .wavepacket import (
    FieldSample,
    NodeProximity,
    SpinConfig,
    WavepacketFlow,
    WavepacketSpec,
    sample_field,
    velocity,
    velocity_jacobian,
)

__all__ = [
    "QuantumNumbers",
    "energy",
    "eval_eigenstate",
    "FieldSample",
    "NodeProximity",
    "SpinConfig",
    "WavepacketFlow",
    "WavepacketSpec",
    "sample_field",
    "velocity",
    "velocity_jacobian",
]

__version__ = "0.1.0"
