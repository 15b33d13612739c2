"""
pfrlab: Pauli-frame randomization and gate set tomography on a simulated qubit
"""

from .errors import PfrLabError
from .pauli_algebra import Clifford, Pauli
from .pfr import CliffordCircuit, FramePolicy, randomize

__all__ = ["Clifford", "CliffordCircuit", "FramePolicy", "Pauli", "PfrLabError", "randomize"]
