import numpy as np
import pytest

from pbfopt.scanpath import ScanPath, compute_timing, snake_path
from pbfopt.thermal import BeamParameters, MaterialParams

# Ti-6Al-4V-like values used throughout the examples
TABLE_MATERIAL = dict(
    conductivity=20.0, diffusivity=8.45e-6, initial_temperature=1000.0, power=100.0
)


@pytest.fixture(scope="session")
def material():
    return MaterialParams(**TABLE_MATERIAL)


@pytest.fixture(scope="session")
def single_segment():
    """One 1 mm track scanned at the reference spot size and speed."""
    path = ScanPath(np.array([[[0.0, 0.0], [1e-3, 0.0]]]))
    beam = BeamParameters(np.array([2e-4]), np.array([0.5]))
    timing = compute_timing(path, beam.speed)
    return path, beam, timing


@pytest.fixture(scope="session")
def short_snake():
    """Two 1 mm hatch lines of 4 segments each; fast enough for most checks."""
    path = snake_path(2, 1e-3, 2e-4, 4)
    beam = BeamParameters.constant(path.n_segments, 2e-4, 0.5)
    timing = compute_timing(path, beam.speed)
    return path, beam, timing
