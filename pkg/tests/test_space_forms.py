from __future__ import annotations

import numpy as np
import pytest

from biharmonic_lab.space_forms import OffModelError, SpaceForm, euclidean, hyperbolic, sphere

FORMS = [sphere(2), euclidean(3), hyperbolic(2), hyperbolic(3), sphere(1)]


def test_dimensions_and_json():
    assert sphere(2).ambient_dim == 3
    assert euclidean(3).ambient_dim == 3
    assert hyperbolic(2).ambient_dim == 3
    for S in FORMS:
        assert SpaceForm.from_json(S.to_json()) == S
    with pytest.raises(ValueError):
        SpaceForm(2, 2)
    with pytest.raises(ValueError):
        SpaceForm(1, 0)


@pytest.mark.parametrize("S", FORMS)
def test_projection_idempotent(S):
    rng = np.random.default_rng(3)
    for _ in range(50):
        q = S.random_point(rng, scale=0.8)
        if S.kappa == -1:
            p = q + 0.1 * rng.standard_normal(S.ambient_dim)
            p[0] = abs(p[0]) + 2.0
        else:
            p = q + 0.3 * rng.standard_normal(S.ambient_dim)
        once = S.project_point(p)
        assert np.array_equal(S.project_point(once), once) or np.allclose(S.project_point(once), once, atol=0, rtol=1e-15)
        assert S.constraint_residual(once) <= 1e-12


def test_off_model_errors():
    with pytest.raises(OffModelError):
        sphere(2).project_point(np.zeros(3))
    with pytest.raises(OffModelError):
        hyperbolic(2).project_point(np.array([0.1, 1.0, 0.0]))
    with pytest.raises(OffModelError):
        hyperbolic(2).project_point(np.array([-2.0, 0.0, 0.0]))
    with pytest.raises(OffModelError):
        sphere(2).check_point(np.array([0.0, 0.0, 1.1]))
    q = np.array([0.0, 0.0, 1.0 + 1e-11])
    assert sphere(2).constraint_residual(sphere(2).check_point(q)) < 1e-15


@pytest.mark.parametrize("S", [sphere(2), hyperbolic(2), hyperbolic(4), euclidean(2)])
def test_curvature_operator_properties(S):
    rng = np.random.default_rng(4)
    for _ in range(1000):
        q = S.random_point(rng, scale=0.5)
        X, Y, Z = (S.random_tangent(rng, q) for _ in range(3))
        out = S.curvature_operator(q, X, Y, Z)
        assert abs(S.inner(out, q)) <= 1e-12
        swapped = S.curvature_operator(q, Y, X, Z)
        assert np.allclose(out, -swapped, rtol=0, atol=1e-12 * max(1.0, np.abs(out).max()))
        cert = S.sectional_sign_certificate(q, X, Y)
        bound = S.sqnorm(X) * S.sqnorm(Y)
        if S.kappa <= 0:
            assert cert <= 1e-12 * bound
        else:
            assert -1e-12 <= cert <= bound * (1 + 1e-12)
        assert cert == pytest.approx(S.inner(S.curvature_operator(q, X, Y, Y), X), rel=1e-9, abs=1e-12)


def test_sectional_examples():
    S = sphere(2)
    q = np.array([0.0, 0.0, 1.0])
    assert S.sectional_sign_certificate(q, np.array([1.0, 0, 0]), np.array([0, 1.0, 0])) == 1.0
    H = hyperbolic(2)
    q = H.base_point()
    assert H.sectional_sign_certificate(q, np.array([0, 1.0, 0]), np.array([0, 0.3, 1.0])) < 0
    assert H.sectional_sign_certificate(q, np.array([0, 1.0, 0]), np.array([0, 2.0, 0])) == 0


def test_tangent_projection_rejects_off_model_base():
    with pytest.raises(OffModelError):
        sphere(2).project_tangent(np.array([0.0, 0.0, 2.0]), np.ones(3))


def test_curvature_bound():
    assert sphere(2).curvature_bound == 1.0
    assert hyperbolic(2).curvature_bound == 0.0
    assert euclidean(2).curvature_bound == 0.0
