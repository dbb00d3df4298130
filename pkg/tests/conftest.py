import sys
from pathlib import Path

import pytest

from cqed_lab import SystemParams

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def micropillar():
    """Intermediate-coupling micropillar system (crossing spectra)."""
    return SystemParams(g=22.6, kappa=110.0, gamma=1.3, gamma_dp=6.3)


@pytest.fixture
def pc_cavity():
    """Photonic-crystal system showing the 114 ueV spectral doublet."""
    return SystemParams(g=92.4, kappa=195.0, gamma=0.2, gamma_dp=4.0)


@pytest.fixture
def pc_dynamical():
    """Photonic-crystal system at the dynamically extracted coupling."""
    return SystemParams(g=22.0, kappa=195.0, gamma=0.2, gamma_dp=4.0)
