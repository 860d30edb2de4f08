"""
Test configuration and fixtures
"""
import os
import sys

import numpy as np
import pytest

# Add parent directory to path to import the toolkit modules
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
os.environ.setdefault('MRVF_ENV', 'testing')

from mrvf.models.models import (  # noqa: E402
    CylinderSpec, Dictionary, Lattice3D, PhysicsParams, Provenance, SequenceSpec,
)
from mrvf.services.geometry import characterize, rasterize_cylinders  # noqa: E402

PARAM_RANGES = np.array([[0.01, 0.10], [2.0, 10.0], [0.35, 0.90], [45.0, 110.0]])


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run slow acceptance tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long-running acceptance test, needs --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def z_cylinder(dims=(32, 32, 16), spacing=2.0, radius=5.0):
    """Lattice with one z-axis cylinder through the center of the middle cell"""
    center = tuple((n // 2 + 0.5) * spacing for n in dims)
    spec = CylinderSpec(axis_point=center, direction=(0.0, 0.0, 1.0), radius=radius)
    mask = rasterize_cylinders([spec], dims, spacing)
    return Lattice3D(dims=dims, spacing=(spacing,) * 3, mask=mask)


def surrogate_signals(params, length=16):
    """
    Smooth, injective stand-in for simulated fingerprints

    Unit-norm rows of an affine map of the range-normalized parameters.
    """
    rng = np.random.default_rng(1234)
    a = 0.3 * rng.standard_normal((length, 4))
    b = 1.0 + np.linspace(0.0, 1.0, length)
    z = (np.asarray(params) - PARAM_RANGES[:, 0]) / (PARAM_RANGES[:, 1] - PARAM_RANGES[:, 0])
    signals = z @ a.T + b
    return signals / np.linalg.norm(signals, axis=1, keepdims=True)


def uniform_params(n, seed):
    rng = np.random.default_rng(seed)
    return PARAM_RANGES[:, 0] + rng.uniform(size=(n, 4)) * (PARAM_RANGES[:, 1] - PARAM_RANGES[:, 0])


@pytest.fixture
def physics_params():
    """Default physics constants"""
    return PhysicsParams()


@pytest.fixture
def short_sequence():
    """8 echoes at 3.3 ms, spin echo at 20 ms (refocus at 10 ms)"""
    return SequenceSpec(n_echoes=8, delta_te=3.3, se_time=20.0)


@pytest.fixture
def cylinder_lattice():
    return z_cylinder()


@pytest.fixture
def cylinder_geometry(cylinder_lattice):
    return characterize(cylinder_lattice, Provenance.CYLINDERS_3D, seed=0, name='cylinder')


@pytest.fixture
def small_geometries():
    """Four small cylinder voxels of different radii"""
    geoms = []
    for index, radius in enumerate((3.0, 4.0, 5.0, 6.0)):
        lattice = z_cylinder(dims=(16, 16, 4), radius=radius)
        geoms.append(characterize(lattice, Provenance.CYLINDERS_3D, seed=index, name=f'g{index}'))
    return geoms


@pytest.fixture
def surrogate_dictionary():
    """2000-entry dictionary over the default parameter ranges"""
    params = uniform_params(2000, seed=7)
    return Dictionary(params=params, signals=surrogate_signals(params), meta={'sampling.seed': '7'})
