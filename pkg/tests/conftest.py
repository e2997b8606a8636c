import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).parent.parent
sys.path.append(str(ROOT / 'src'))
sys.path.append(str(ROOT / 'pipeline'))

from geometry import Circle, FlatTorus, Sphere


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo acceptance runs (deselect with -m 'not slow')")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def reference_sphere():
    """Unit 2-sphere in R^128."""
    return Sphere(2, 128, 1.0)


@pytest.fixture
def circle():
    return Circle(64, 1.0)


@pytest.fixture
def torus():
    return FlatTorus(16, (1.0, 2.0))


@pytest.fixture(params=['sphere', 'circle', 'torus'])
def any_manifold(request):
    return {
        'sphere': Sphere(2, 16, 1.5),
        'circle': Circle(8, 0.5),
        'torus': FlatTorus(12, (1.0, 2.0)),
    }[request.param]
