from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from esfem import geometry as geo
from esfem.exceptions import DegenerateGradient, NoConvergence

from conftest import sphere_points

coords = st.floats(-2.0, 2.0, allow_nan=False)
times = st.floats(0.0, 2.0, allow_nan=False)


def fd(f, x, t, h=1e-6):
    cols = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        cols.append((f(x + e, t) - f(x - e, t)) / (2 * h))
    return np.stack(cols, axis=-1)


SURFACES = [
    geo.sphere(),
    geo.benchmark_hemiellipsoid(),
    geo.periodic_ellipsoid(),
    geo.ComplexSurface(),
    geo.GraphSurface(),
]


@pytest.mark.parametrize("surface", SURFACES, ids=repr)
def test_level_set_derivatives_match_finite_differences(surface, rng):
    x = rng.uniform(-0.9, 0.9, size=(20, 3))
    for t in (0.0, 0.37, 1.3):
        np.testing.assert_allclose(surface.grad(x, t), fd(surface.value, x, t), rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(surface.hess(x, t), fd(surface.grad, x, t), rtol=1e-5, atol=1e-5)
        h = 1e-6
        dt = (surface.value(x, t + h) - surface.value(x, t - h)) / (2 * h)
        np.testing.assert_allclose(surface.dt(x, t), dt, rtol=1e-6, atol=1e-6)
        gdt = (surface.grad(x, t + h) - surface.grad(x, t - h)) / (2 * h)
        np.testing.assert_allclose(surface.grad_dt(x, t), gdt, rtol=1e-5, atol=1e-5)


def test_sphere_normal_is_radial(rng):
    x = sphere_points(rng, 10)
    np.testing.assert_allclose(geo.normal(geo.sphere(), x, 0.0), x, atol=1e-15)


def test_normal_raises_at_critical_point():
    with pytest.raises(DegenerateGradient):
        geo.normal(geo.sphere(), np.zeros(3), 0.0)


def test_benchmark_normal_velocity_at_pole():
    # d_t d = -x1^2 a'/a^2 = -1/4 at (1, 0, 0), t = 0; |grad d| = 2
    v = geo.normal_velocity(geo.benchmark_hemiellipsoid(), np.array([1.0, 0.0, 0.0]), 0.0)
    np.testing.assert_allclose(v, [0.125, 0.0, 0.0], atol=1e-15)


def test_mean_curvature_of_sphere(rng):
    for r in (0.5, 1.0, 3.0):
        s = geo.sphere(r)
        x = sphere_points(rng, 5, r)
        np.testing.assert_allclose(geo.mean_curvature(s, x, 0.0), 2.0 / r, rtol=1e-13)


def test_laplace_beltrami_eigenfunction_on_sphere(rng):
    u = geo.monomial_field((1, 1, 0))
    x = sphere_points(rng, 25)
    lap = geo.laplace_beltrami(u, geo.sphere(), x, 0.0)
    np.testing.assert_allclose(lap, -6.0 * x[:, 0] * x[:, 1], atol=1e-14)


def test_laplace_beltrami_of_first_order_harmonic(rng):
    x = sphere_points(rng, 10, 2.0)
    u = geo.monomial_field((0, 0, 1))
    # -lap_G x3 = 2 x3 / r^2 on a sphere of radius r
    np.testing.assert_allclose(geo.laplace_beltrami(u, geo.sphere(2.0), x, 0.0), -0.5 * x[:, 2], atol=1e-14)


def test_surface_divergence_of_position_is_two(rng):
    w = geo.VelocityField("position", lambda x, t: np.asarray(x, float))
    x = sphere_points(rng, 8)
    np.testing.assert_allclose(geo.surface_divergence(w, geo.sphere(), x, 0.0), 2.0, atol=1e-8)


def test_tangential_gradient_is_tangent(rng):
    u = geo.monomial_field((1, 2, 1))
    s = geo.periodic_ellipsoid()
    x = geo.closest_point(s, rng.uniform(-1, 1, size=(30, 3)), 0.4)
    g = geo.tangential_gradient(u, s, x, 0.4)
    np.testing.assert_allclose(np.sum(g * geo.normal(s, x, 0.4), axis=-1), 0.0, atol=1e-13)


@pytest.mark.parametrize("surface", SURFACES[:4], ids=repr)
def test_normal_velocity_jacobian(surface, rng):
    vel = geo.normal_velocity_field(surface)
    x = geo.closest_point(surface, rng.uniform(-0.5, 0.5, size=(15, 3)) + 0.1, 0.3)
    np.testing.assert_allclose(vel.jac(x, 0.3), geo.fd_jacobian(vel, x, 0.3), rtol=1e-5, atol=1e-5)


def test_closest_point_on_unit_sphere():
    np.testing.assert_allclose(geo.closest_point(geo.sphere(), np.array([2.0, 0.0, 0.0]), 0.0), [1, 0, 0],
                               atol=1e-14)


def test_closest_point_of_surface_point_is_identity(rng):
    x = sphere_points(rng, 10)
    np.testing.assert_allclose(geo.closest_point(geo.sphere(), x, 0.0), x, atol=1e-15)


@given(st.tuples(coords, coords, coords), times)
def test_closest_point_optimality_on_ellipsoid(p, t):
    x = np.array(p)
    if np.linalg.norm(x) < 0.3:
        x = x + 0.5
    s = geo.periodic_ellipsoid()
    q = geo.closest_point(s, x, t)
    assert abs(s.value(q, t)) < 1e-11
    # x - q is parallel to the normal at q
    r = x - q
    n = geo.normal(s, q, t)
    assert np.linalg.norm(r - np.dot(r, n) * n) < 1e-9


def test_closest_point_on_genus_four_surface(rng):
    s = geo.ComplexSurface()
    x = np.column_stack([rng.uniform(-0.1, 0.1, 40), rng.uniform(-1, 1, 40), rng.uniform(-1, 1, 40)])
    q = geo.closest_point(s, x, 0.25)
    assert np.abs(s.value(q, 0.25)).max() < 1e-11


def test_closest_point_reports_failure():
    with pytest.raises(NoConvergence):
        geo.closest_point(geo.periodic_ellipsoid(), np.array([3.0, 0.5, 0.1]), 0.0, max_iter=1)


def test_monomial_field_derivatives(rng):
    u = geo.monomial_field((2, 1, 3), np.cos, lambda t: -np.sin(t))
    x = rng.uniform(-1, 1, size=(5, 3))
    np.testing.assert_allclose(u.grad(x, 0.4), fd(u.value, x, 0.4), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(u.hess(x, 0.4), fd(u.grad, x, 0.4), rtol=1e-6, atol=1e-8)


def test_constant_field():
    c = geo.constant_field(2.5)
    x = np.ones((4, 3))
    assert np.all(c.value(x, 0.0) == 2.5)
    assert np.all(c.grad(x, 0.0) == 0) and np.all(c.dt(x, 1.0) == 0)


def test_benchmark_ale_trajectory_follows_velocity():
    x0 = np.array([[0.6, 0.5, 0.62449979983984]])
    vel = geo.benchmark_ale_velocity()
    h = 1e-6
    for t in (0.2, 1.1):
        dx = (geo.ale_trajectory_benchmark(x0, t + h) - geo.ale_trajectory_benchmark(x0, t - h)) / (2 * h)
        np.testing.assert_allclose(dx, vel(geo.ale_trajectory_benchmark(x0, t), t), atol=1e-8)


def test_benchmark_ale_trajectory_stays_on_surface(rng):
    s = geo.benchmark_hemiellipsoid()
    x0 = geo.closest_point(s, rng.uniform(-1, 1, size=(20, 3)) * [1, 1, 0] + [0, 0, 0.5], 0.0)
    for t in (0.5, 1.7):
        assert np.abs(s.value(geo.ale_trajectory_benchmark(x0, t), t)).max() < 1e-11


def test_ale_velocity_has_correct_normal_part(rng):
    """ALE and material velocity share their normal components."""
    s = geo.benchmark_hemiellipsoid()
    x = geo.closest_point(s, rng.uniform(-1, 1, size=(20, 3)) * [1, 1, 0] + [0, 0, 0.7], 0.9)
    n = geo.normal(s, x, 0.9)
    va = geo.benchmark_ale_velocity()(x, 0.9)
    v = geo.normal_velocity(s, x, 0.9)
    np.testing.assert_allclose(np.sum(va * n, -1), np.sum(v * n, -1), atol=1e-14)


def test_complex_trajectory_is_periodic(rng):
    x0 = rng.normal(size=(5, 3))
    np.testing.assert_allclose(geo.ale_trajectory_complex(x0, 1.0), x0, atol=1e-14)


def test_complex_trajectory_stays_on_surface():
    s = geo.ComplexSurface()
    x0 = geo.closest_point(s, np.array([[0.05, 0.2, 0.1], [0.05, 0.9, 0.1], [-0.02, 0.3, 0.8]]), 0.0)
    for t in (0.13, 0.5, 0.77):
        assert np.abs(s.value(geo.ale_trajectory_complex(x0, t), t)).max() < 1e-12


def test_graph_velocities():
    s = geo.GraphSurface()
    theta = np.array([[0.3, -0.2, 0.0], [1.0, 0.0, 0.0]])
    lag, ale = geo.graph_velocities(s, theta, 0.1)
    zt = s.dt_z(theta, 0.1)
    np.testing.assert_allclose(ale[:, 2], zt)
    # both have the same component along the (unnormalised) normal (-grad z, 1)
    nrm = np.column_stack([-s.grad_z(theta, 0.1), np.ones(2)])
    np.testing.assert_allclose(np.sum(lag * nrm, 1), np.sum(ale * nrm, 1), atol=1e-14)
    # boundary of the unit disc does not move
    np.testing.assert_allclose(lag[1], 0.0, atol=1e-15)


@given(st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3), st.floats(0.0, 2.0))
def test_ellipsoid_fast_path_matches_generic_solver(x, t):
    s = geo.benchmark_hemiellipsoid()
    x = np.array([x])
    assume(abs(s.value(x, t)[0]) < 0.5 and np.linalg.norm(x) > 0.3)
    fast = geo.closest_point(s, x, t)
    generic = geo.closest_point(s.as_level_set(), x, t)
    np.testing.assert_allclose(fast, generic, atol=1e-11)
