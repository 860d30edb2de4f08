"""
Unit tests for the field solver and the GESFIDSE simulation
"""
import math
import os
import time

import numpy as np
import pytest

from conftest import z_cylinder
from mrvf.core.error_handlers import LengthMismatch, StepTooCoarse, ValidationError, ZeroSignal
from mrvf.models.models import (
    CylinderSpec, FieldMap, Lattice3D, PhysicsParams, Provenance, SequenceSpec, SignalTrace, SusceptibilityMap,
)
from mrvf.services import physics
from mrvf.services.geometry import characterize, generate_cylinders_3d, rasterize_cylinders

B0 = 4.7
DCHI = 1e-6


def x_cylinder(dims=(4, 16, 16), spacing=2.0, radius=5.0):
    """Cylinder along x, perpendicular to a z-directed B0"""
    center = tuple((n // 2 + 0.5) * spacing for n in dims)
    spec = CylinderSpec(axis_point=center, direction=(1.0, 0.0, 0.0), radius=radius)
    mask = rasterize_cylinders([spec], dims, spacing)
    return Lattice3D(dims=dims, spacing=(spacing,) * 3, mask=mask)


def chi_of(lattice, dchi=DCHI):
    return SusceptibilityMap(dims=lattice.dims, spacing=lattice.spacing,
                             values=lattice.mask.astype(np.float64) * dchi)


def inside_minus_outside(field, lattice):
    inside = lattice.mask.astype(bool)
    return field.values[inside].mean() - field.values[~inside].mean()


class TestFieldSolver:
    """Fourier-domain dipole convolution"""

    def test_uniform_susceptibility(self):
        chi = SusceptibilityMap(dims=(8, 8, 8), spacing=(2.0,) * 3, values=np.full((8, 8, 8), 3e-6))
        field = physics.solve_field(chi, B0)
        assert np.max(np.abs(field.values)) < 1e-18

    def test_linearity(self):
        rng = np.random.default_rng(0)
        first = rng.random((8, 8, 8)) * 1e-6
        second = rng.random((8, 8, 8)) * 1e-6

        def solve(values):
            chi = SusceptibilityMap(dims=(8, 8, 8), spacing=(1.0,) * 3, values=values)
            return physics.solve_field(chi, B0).values

        combined = solve(2.0 * first - 3.0 * second)
        assert np.allclose(combined, 2.0 * solve(first) - 3.0 * solve(second), rtol=1e-9, atol=1e-18)

    def test_zero_mean(self):
        lattice = x_cylinder()
        field = physics.solve_field(chi_of(lattice), B0)
        assert abs(field.values.mean()) < 1e-12 * B0 * DCHI

    def test_parallel_cylinder_offset(self):
        lattice = z_cylinder(dims=(16, 16, 4), spacing=2.0, radius=5.0)
        field = physics.solve_field(chi_of(lattice), B0, b0_axis='z')
        assert inside_minus_outside(field, lattice) == pytest.approx(B0 * DCHI / 3.0, rel=1e-9)

    def test_perpendicular_cylinder_offset(self):
        lattice = x_cylinder()
        field = physics.solve_field(chi_of(lattice), B0, b0_axis='z')
        assert inside_minus_outside(field, lattice) == pytest.approx(-B0 * DCHI / 6.0, rel=1e-9)

    def test_sphere_interior(self):
        offsets = (np.arange(16) - 8.0) ** 2
        distance_sq = offsets[:, None, None] + offsets[None, :, None] + offsets[None, None, :]
        mask = (distance_sq <= 16.0).astype(np.uint8)
        lattice = Lattice3D(dims=(16, 16, 16), spacing=(1.0,) * 3, mask=mask)
        field = physics.solve_field(chi_of(lattice), B0)
        assert abs(field.values[mask.astype(bool)].mean()) < 1e-9 * B0 * DCHI

    def test_default_b0_axis(self):
        assert physics.default_b0_axis((16, 16, 1)) == 'y'
        assert physics.default_b0_axis((16, 16, 8)) == 'z'

    def test_single_cell_b0_axis(self):
        chi = SusceptibilityMap(dims=(8, 8, 1), spacing=(1.0,) * 3, values=np.zeros((8, 8, 1)))
        with pytest.raises(ValidationError):
            physics.solve_field(chi, B0, b0_axis='z')
        with pytest.raises(ValidationError):
            physics.solve_field(chi, B0, b0_axis='w')

    def test_susceptibility_from_geometry(self, cylinder_geometry):
        p = PhysicsParams()
        pre = physics.susceptibility_from_geometry(cylinder_geometry, 0.6, False, p)
        post = physics.susceptibility_from_geometry(cylinder_geometry, 0.6, True, p)
        inside = cylinder_geometry.lattice.mask.astype(bool)
        assert np.allclose(pre.values[inside], p.dchi_deoxy * p.hct * 0.4)
        assert np.all(pre.values[~inside] == 0.0)
        assert np.allclose(post.values[inside] - pre.values[inside], p.dchi_uspio)
        with pytest.raises(ValidationError):
            physics.susceptibility_from_geometry(cylinder_geometry, 1.2, False, p)


class TestGesfidse:
    """Magnetization evolution"""

    @pytest.fixture
    def perpendicular_geometry(self):
        return characterize(x_cylinder(), Provenance.CYLINDERS_3D, name='x')

    def test_zero_field_pure_relaxation(self, cylinder_geometry, short_sequence):
        lattice = cylinder_geometry.lattice
        field = FieldMap(dims=lattice.dims, spacing=lattice.spacing, values=np.zeros(lattice.dims))
        for diffusion in (0.0, 1000.0):
            p = PhysicsParams(diffusion=diffusion)
            trace = physics.simulate_gesfidse(cylinder_geometry, field, 80.0, p, short_sequence)
            expected = np.exp(-short_sequence.echo_times() / 80.0)
            assert np.allclose(trace.magnitudes, expected, rtol=1e-9)
            assert trace.spin_echo == pytest.approx(math.exp(-20.0 / 80.0), rel=1e-9)

    def test_spin_echo_refocuses_static_dephasing(self, perpendicular_geometry, short_sequence):
        p = PhysicsParams(diffusion=0.0)
        chi = physics.susceptibility_from_geometry(perpendicular_geometry, 0.5, True, p)
        field = physics.solve_field(chi, p.b0)
        trace = physics.simulate_gesfidse(perpendicular_geometry, field, 80.0, p, short_sequence)
        assert abs(trace.spin_echo - math.exp(-20.0 / 80.0)) < 1e-6
        # static dephasing shows at the gradient echoes
        assert trace.magnitudes[2] < math.exp(-9.9 / 80.0) - 1e-6

    def test_diffusion_attenuates_spin_echo(self, perpendicular_geometry, short_sequence):
        p = PhysicsParams(diffusion=1000.0)
        chi = physics.susceptibility_from_geometry(perpendicular_geometry, 0.5, True, p)
        field = physics.solve_field(chi, p.b0)
        trace = physics.simulate_gesfidse(perpendicular_geometry, field, 80.0, p, short_sequence)
        assert trace.spin_echo < math.exp(-20.0 / 80.0) - 1e-6

    def test_weak_field_decays_monotonically(self, perpendicular_geometry, short_sequence):
        p = PhysicsParams(diffusion=0.0, dchi_deoxy=1e-8, dchi_uspio=0.0)
        chi = physics.susceptibility_from_geometry(perpendicular_geometry, 0.5, False, p)
        field = physics.solve_field(chi, p.b0)
        trace = physics.simulate_gesfidse(perpendicular_geometry, field, 80.0, p, short_sequence)
        before_refocus = trace.magnitudes[trace.times < short_sequence.refocus_time]
        assert np.all(np.diff(before_refocus) <= 0.0)
        assert np.all(trace.magnitudes <= 1.0)

    def test_step_too_coarse(self, cylinder_geometry, short_sequence):
        lattice = cylinder_geometry.lattice
        field = FieldMap(dims=lattice.dims, spacing=lattice.spacing, values=np.full(lattice.dims, 1e-3))
        with pytest.raises(StepTooCoarse):
            physics.simulate_gesfidse(cylinder_geometry, field, 80.0, PhysicsParams(), short_sequence)

    def test_field_dims_mismatch(self, cylinder_geometry, short_sequence):
        field = FieldMap(dims=(4, 4, 4), spacing=(2.0,) * 3, values=np.zeros((4, 4, 4)))
        with pytest.raises(LengthMismatch):
            physics.simulate_gesfidse(cylinder_geometry, field, 80.0, PhysicsParams(), short_sequence)

    def test_invalid_t2(self, cylinder_geometry, short_sequence):
        lattice = cylinder_geometry.lattice
        field = FieldMap(dims=lattice.dims, spacing=lattice.spacing, values=np.zeros(lattice.dims))
        with pytest.raises(ValidationError):
            physics.simulate_gesfidse(cylinder_geometry, field, 0.0, PhysicsParams(), short_sequence)


class TestFingerprint:
    """Pre/post concatenation"""

    def test_unit_norm_of_ones(self):
        times = 3.3 * np.arange(1, 33)
        trace = SignalTrace(times=times, magnitudes=np.ones(32))
        fingerprint = physics.make_fingerprint(trace, trace)
        assert len(fingerprint) == 64
        assert np.allclose(fingerprint.values, 1.0 / 8.0)

    def test_length_mismatch(self):
        pre = SignalTrace(times=np.array([1.0, 2.0]), magnitudes=np.ones(2))
        post = SignalTrace(times=np.array([1.0]), magnitudes=np.ones(1))
        with pytest.raises(LengthMismatch):
            physics.make_fingerprint(pre, post)

    def test_zero_signal(self):
        trace = SignalTrace(times=np.array([1.0, 2.0]), magnitudes=np.zeros(2))
        with pytest.raises(ZeroSignal):
            physics.make_fingerprint(trace, trace)

    def test_simulate_fingerprint(self, cylinder_geometry, physics_params, short_sequence):
        first = physics.simulate_fingerprint(cylinder_geometry, 0.6, 70.0, physics_params, short_sequence)
        second = physics.simulate_fingerprint(cylinder_geometry, 0.6, 70.0, physics_params, short_sequence)
        assert len(first) == 16
        assert first.norm == pytest.approx(1.0, abs=1e-12)
        assert np.array_equal(first.values, second.values)
        assert first.meta == {'so2': '0.6', 't2': '70.0', 'geometry': 'cylinder'}

    def test_contrast_changes_fingerprint(self, physics_params, short_sequence):
        geom = characterize(x_cylinder(), Provenance.CYLINDERS_3D)
        fingerprint = physics.simulate_fingerprint(geom, 0.6, 70.0, physics_params, short_sequence)
        assert not np.allclose(fingerprint.values[:8], fingerprint.values[8:])


@pytest.mark.slow
class TestConvergence:
    """Time-step refinement"""

    def test_halving_dt(self):
        geom = characterize(x_cylinder(dims=(8, 32, 32)), Provenance.CYLINDERS_3D)
        sequence = SequenceSpec()
        coarse = physics.simulate_fingerprint(geom, 0.6, 70.0, PhysicsParams(dt=0.2), sequence)
        fine = physics.simulate_fingerprint(geom, 0.6, 70.0, PhysicsParams(dt=0.1), sequence)
        assert np.max(np.abs(coarse.values - fine.values) / np.abs(fine.values)) < 0.005


def disk_fraction(n, radius, sub=8):
    """Partial-volume occupancy of a centered disk on an n x n grid"""
    coords = (np.arange(n * sub) + 0.5) / sub - n / 2.0
    inside = coords[:, None] ** 2 + coords[None, :] ** 2 <= radius ** 2
    return inside.reshape(n, sub, n, sub).mean(axis=(1, 3))


def ball_fraction(n, radius, sub=4):
    """Partial-volume occupancy of a centered ball on an n^3 grid"""
    lo, hi = int(n // 2 - radius) - 1, int(n // 2 + radius) + 1
    m = hi - lo
    coords = lo + (np.arange(m * sub) + 0.5) / sub - n / 2.0
    inside = coords[:, None, None] ** 2 + coords[None, :, None] ** 2 + coords[None, None, :] ** 2 <= radius ** 2
    values = np.zeros((n, n, n))
    values[lo:hi, lo:hi, lo:hi] = inside.reshape(m, sub, m, sub, m, sub).mean(axis=(1, 3, 5))
    return values


@pytest.mark.slow
class TestFieldSolverAcceptance:
    """Closed-form offsets on a 128^3 grid"""

    n = 128
    radius = 20.0

    def solve(self, values):
        chi = SusceptibilityMap(dims=values.shape, spacing=(1.0,) * 3, values=values * DCHI)
        return physics.solve_field(chi, B0, b0_axis='z').values

    def core(self, distance_sq):
        return distance_sq <= (self.radius - 2.0) ** 2

    def test_cylinder_profiles(self):
        n = self.n
        cross_section = disk_fraction(n, self.radius)
        centers = np.arange(n) + 0.5 - n / 2.0
        core = self.core(centers[:, None] ** 2 + centers[None, :] ** 2)
        outside = cross_section == 0.0
        for values, expected, section in (
            (np.broadcast_to(cross_section[:, :, None], (n, n, n)), B0 * DCHI / 3.0, lambda f: f[:, :, 0]),
            (np.broadcast_to(cross_section[None, :, :], (n, n, n)), -B0 * DCHI / 6.0, lambda f: f[0]),
        ):
            field = section(self.solve(np.array(values)))
            offset = field[core] - field[outside].mean()
            assert np.max(np.abs(offset - expected)) < 0.02 * abs(expected)

    def test_sphere_interior(self):
        n = self.n
        values = ball_fraction(n, 16.0)
        field = self.solve(values)
        centers = np.arange(n) + 0.5 - n / 2.0
        distance_sq = centers[:, None, None] ** 2 + centers[None, :, None] ** 2 + centers[None, None, :] ** 2
        offset = field[distance_sq <= 14.0 ** 2] - field[values == 0.0].mean()
        assert np.max(np.abs(offset)) < 0.03 * B0 * DCHI


@pytest.mark.slow
class TestRuntimeAnchor:
    """Full pre + post simulation on the default 3-D lattice"""

    def test_default_lattice(self):
        if (os.cpu_count() or 1) < 8:
            pytest.skip('needs 8 cores')
        geom = generate_cylinders_3d(0.03, 5.0, (128, 128, 384), 1.9375, seed=0)
        started = time.perf_counter()
        fingerprint = physics.simulate_fingerprint(geom, 0.6, 70.0, PhysicsParams(), SequenceSpec(),
                                                   workers=os.cpu_count())
        assert time.perf_counter() - started <= 60.0
        assert len(fingerprint) == 64
