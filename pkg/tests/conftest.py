import math

import numpy as np
import pytest

from qflow.hydrogen import QuantumNumbers
from qflow.wavepacket import SpinConfig, WavepacketFlow, WavepacketSpec

A3 = 1.0 / math.sqrt(3.0)


def make_benchmark_spec(spin=False):
    """Three-state packet (1s + 2s + 2p_{m=1}); the standard chaotic flow."""
    return WavepacketSpec(
        terms=(
            (A3, QuantumNumbers(1, 0, 0)),
            (A3, QuantumNumbers(2, 0, 0)),
            (A3, QuantumNumbers(2, 1, 1)),
        ),
        spin=SpinConfig((0.0, 0.0, 1.0)) if spin else None,
    )


def make_spin_spec(spin=True):
    """Three-state packet (1s + 2p_0 + 2p_1), optionally polarized along +z."""
    return WavepacketSpec(
        terms=(
            (A3, QuantumNumbers(1, 0, 0)),
            (A3, QuantumNumbers(2, 1, 0)),
            (A3, QuantumNumbers(2, 1, 1)),
        ),
        spin=SpinConfig((0.0, 0.0, 1.0)) if spin else None,
    )


@pytest.fixture(scope="session")
def benchmark_provider():
    provider = WavepacketFlow(make_benchmark_spec())
    provider.rhs_factory(3)
    return provider


@pytest.fixture(scope="session")
def chaotic_seed():
    """A start point that classifies chaotic under default settings."""
    return np.array([1.0, 0.5, 2.0])
