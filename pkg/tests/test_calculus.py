from __future__ import annotations

import numpy as np
import pytest

from biharmonic_lab.calculus import (
    MapField,
    Section,
    bitension,
    curvature_term,
    differential,
    jacobi_apply,
    norm_gradient,
    pullback_gradient_sq,
    rough_laplacian,
    second_fundamental_form,
    tension,
)
from biharmonic_lab.experiments import circle_angle, circle_map, equator_map, spectral_laplacian
from biharmonic_lab.mesh import build_mesh, integrate
from biharmonic_lab.space_forms import euclidean, hyperbolic, sphere

from conftest import TWO_PI, order


def smooth_section(phi, seed=0):
    x, y = np.moveaxis(phi.mesh.coordinates(), -1, 0)[:2]
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((phi.target.ambient_dim, 3))
    W = np.stack([a[i, 0] * np.sin(x + a[i, 1]) * np.cos(y) + a[i, 2] * np.cos(2 * y) for i in range(len(a))], -1)
    return Section.project(phi, W)


def hyperbolic_map(mesh):
    def fn(c):
        x, y = c[..., 0], c[..., 1]
        u, v = 0.6 * np.sin(x) + 0.2 * np.cos(y), 0.5 * np.cos(x + y)
        return np.stack([np.sqrt(1 + u * u + v * v), u, v], -1)

    return MapField.from_function(mesh, hyperbolic(2), fn)


def sphere_map(mesh):
    def fn(c):
        x, y = c[..., 0], c[..., 1]
        return np.stack([np.cos(x + 0.3 * np.sin(y)), np.sin(x) * np.cos(0.4 * np.sin(y)), 0.5 + 0.4 * np.sin(y)], -1)

    return MapField.from_function(mesh, sphere(2), fn)


def test_shape_and_tangency_validation(square64):
    with pytest.raises(ValueError):
        MapField(square64, sphere(2), np.zeros((64, 64, 2)))
    phi = equator_map(square64)
    with pytest.raises(ValueError):
        Section(phi, phi.values)
    assert Section.zeros(phi).sup_norm() == 0.0


def test_constant_map_is_trivial(square64):
    for S in (sphere(2), hyperbolic(2), euclidean(2)):
        phi = MapField.constant(square64, S)
        assert np.all(differential(phi).sq == 0)
        assert tension(phi).sup_norm() == 0
        assert bitension(phi).sup_norm() == 0


def test_equator_map():
    errs = []
    for n in (32, 64):
        mesh = build_mesh(2, [TWO_PI, TWO_PI], [n, n])
        phi = equator_map(mesh)
        jet = differential(phi)
        assert tension(phi).sup_norm() < 1e-12
        assert bitension(phi).sup_norm() < 1e-10
        errs.append(np.abs(jet.energy_density - 0.5).max())
    assert order(*errs) >= 1.8


def test_circle_map_tension_and_bitension():
    """S^1 target: tau = f'' e and tau2 = -f'''' e with e = (-sin f, cos f)."""
    errs = []
    for n in (32, 64):
        mesh = build_mesh(2, [TWO_PI, TWO_PI], [n, 4])
        phi = circle_map(mesh)
        c = mesh.coordinates()
        x = c[..., 0]
        f = circle_angle(x)
        e = np.stack([-np.sin(f), np.cos(f)], -1)
        tau_exact = (-0.3 * np.sin(x))[..., None] * e
        tau2_exact = (-0.3 * np.sin(x))[..., None] * e
        errs.append((np.abs(tension(phi).values - tau_exact).max(), np.abs(bitension(phi).values - tau2_exact).max()))
    assert order(errs[0][0], errs[1][0]) >= 1.8
    assert order(errs[0][1], errs[1][1]) >= 1.8


def test_flat_target_against_spectral_oracle():
    errs = []
    for n in (32, 64):
        mesh = build_mesh(2, [TWO_PI, TWO_PI], [n, n])
        phi = circle_map(mesh, euclidean(2))
        tau_exact = spectral_laplacian(mesh, phi.values)
        tau2_exact = -spectral_laplacian(mesh, tau_exact)
        errs.append((np.abs(tension(phi).values - tau_exact).max(), np.abs(bitension(phi).values - tau2_exact).max()))
    assert order(errs[0][0], errs[1][0]) >= 1.8
    assert order(errs[0][1], errs[1][1]) >= 1.8


def test_second_fundamental_form_symmetric(square64):
    phi = sphere_map(square64)
    assert np.array_equal(second_fundamental_form(phi, 0, 1).values, second_fundamental_form(phi, 1, 0).values)
    with pytest.raises(ValueError):
        second_fundamental_form(phi, 0, 2)


@pytest.mark.parametrize("make", [sphere_map, hyperbolic_map])
def test_jacobi_symmetric_and_bitension_identity(square64, make):
    phi = make(square64)
    V, W = smooth_section(phi, 1), smooth_section(phi, 2)
    S = phi.target
    a = integrate(square64, S.inner(jacobi_apply(phi, V).values, W.values))
    b = integrate(square64, S.inner(V.values, jacobi_apply(phi, W).values))
    assert a == pytest.approx(b, rel=1e-10, abs=1e-10)
    tau = tension(phi)
    lhs = bitension(phi).values
    rhs = rough_laplacian(tau).values - curvature_term(phi, tau).values
    assert np.abs(lhs - rhs).max() <= 1e-9 * max(1.0, np.abs(lhs).max())


@pytest.mark.parametrize("make", [sphere_map, hyperbolic_map])
def test_curvature_term_sign(square64, make):
    phi = make(square64)
    V = smooth_section(phi, 3)
    q = phi.target.inner(curvature_term(phi, V).values, V.values)
    scale = np.abs(q).max()
    if phi.target.kappa > 0:
        assert q.min() >= -1e-12 * scale
    else:
        assert q.max() <= 1e-12 * scale


def test_curvature_term_vanishes_on_curves():
    mesh = build_mesh(1, [TWO_PI], [64])
    phi = circle_map(mesh)
    dphi = differential(phi).dphi[0]
    assert np.abs(curvature_term(phi, Section(phi, dphi)).values).max() < 1e-12


def test_rough_laplacian_flat_is_minus_laplacian(square64):
    phi = circle_map(square64, euclidean(2))
    V = Section(phi, np.cos(phi.values) ** 2)
    from biharmonic_lab.mesh import scalar_laplacian

    assert np.array_equal(rough_laplacian(V).values, -scalar_laplacian(square64, V.values))


def test_rough_laplacian_summation_by_parts_second_order():
    errs = []
    for n in (32, 64):
        mesh = build_mesh(2, [TWO_PI, TWO_PI], [n, n])
        phi = sphere_map(mesh)
        V = smooth_section(phi, 4)
        lhs = integrate(mesh, phi.target.inner(rough_laplacian(V).values, V.values))
        rhs = integrate(mesh, pullback_gradient_sq(V))
        errs.append(abs(lhs - rhs))
    assert order(*errs) >= 1.8


def test_norm_gradient():
    mesh = build_mesh(2, [TWO_PI, TWO_PI], [64, 64])
    phi = circle_map(mesh, euclidean(2))
    V = Section(phi, np.stack([2 + np.sin(phi.values[..., 0]), 0 * phi.values[..., 0]], -1))
    g = norm_gradient(V)
    from biharmonic_lab.mesh import scalar_gradient

    assert np.allclose(g, scalar_gradient(mesh, V.values[..., 0]), atol=1e-12)
