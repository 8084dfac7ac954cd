from __future__ import annotations

import math

import numpy as np
import pytest

from biharmonic_lab.bubbling import (
    DiscreteMeasure,
    MapSequence,
    ball_masses,
    ball_offsets,
    bubble_energy_oracle,
    bubble_mass_within_oracle,
    bubble_profile,
    bubble_sequence,
    default_annulus,
    detect_concentration,
    energy_measure,
    measure_decompose,
    south_pole_map,
    weak_convergence_check,
)
from biharmonic_lab.experiments import equator_map
from biharmonic_lab.mesh import build_mesh
from biharmonic_lab.space_forms import euclidean, sphere

from conftest import TWO_PI

EIGHT_PI = 8 * math.pi


@pytest.fixture(scope="module")
def mesh128():
    return build_mesh(2, [TWO_PI, TWO_PI], [128, 128])


@pytest.fixture(scope="module")
def seq(mesh128):
    return bubble_sequence(mesh128, sphere(2), (64, 64), [2.0**-k for k in range(1, 5)])


def test_equator_measure():
    mesh = build_mesh(2, [TWO_PI, TWO_PI], [64, 64])
    mu = energy_measure(equator_map(mesh))
    assert mu.total_mass == pytest.approx(4 * math.pi**2, rel=1e-3)
    assert np.ptp(mu.density) < 1e-12
    assert mu.pair(np.ones(mesh.shape)) == pytest.approx(mu.total_mass)


def test_constant_map_has_zero_measure(mesh128):
    mu = energy_measure(south_pole_map(mesh128, sphere(2)))
    assert mu.total_mass == 0.0


def test_measure_validation(mesh128):
    with pytest.raises(ValueError, match="shape"):
        DiscreteMeasure(mesh128, np.zeros((4, 4)))
    with pytest.raises(ValueError, match="nonnegative"):
        DiscreteMeasure(mesh128, -np.ones(mesh128.shape))
    with pytest.raises(ValueError, match="atom"):
        DiscreteMeasure(mesh128, np.zeros(mesh128.shape), [((0, 0), -1.0)])
    mu = DiscreteMeasure(mesh128, np.zeros(mesh128.shape), [((3, 4), 2.5)])
    psi = np.zeros(mesh128.shape)
    psi[3, 4] = 2.0
    assert mu.pair(psi) == 5.0 and mu.atom_mass == 2.5


def test_profile_limits():
    annulus = (1.0, 2.0)
    theta = bubble_profile(np.array([0.0, 0.1, 1.0, 2.0, 3.0]), 0.1, annulus)
    assert theta[0] == 0.0 and theta[1] == pytest.approx(math.pi / 2)
    assert theta[3] == pytest.approx(math.pi) and theta[4] == pytest.approx(math.pi)


def test_oracle_against_closed_form():
    # well inside R1 the glued bubble is the exact bubble
    lam, annulus = 1e-3, (1.0, 2.0)
    total = bubble_energy_oracle(lam, annulus)
    assert total >= EIGHT_PI
    assert total == pytest.approx(EIGHT_PI, rel=1e-5)
    assert bubble_mass_within_oracle(lam, lam) == pytest.approx(4 * math.pi)
    assert bubble_energy_oracle(1.0, annulus) > bubble_energy_oracle(0.5, annulus) > EIGHT_PI
    assert bubble_energy_oracle(lam, annulus, degree=2) == pytest.approx(2 * EIGHT_PI, rel=1e-5)


def test_sequence_energy_approaches_oracle_on_fine_cores():
    mesh = build_mesh(2, [TWO_PI, TWO_PI], [256, 256])
    s = bubble_sequence(mesh, sphere(2), (128, 128), [1.0, 0.5])
    R = s.metadata["annulus"]
    for j, lam in enumerate(s.scales):
        assert s.measure(j).total_mass == pytest.approx(bubble_energy_oracle(lam, tuple(R)), rel=1e-2)


def test_sequence_validation(mesh128):
    S2 = sphere(2)
    with pytest.raises(ValueError, match="decreasing"):
        bubble_sequence(mesh128, S2, (64, 64), [0.5, 0.5])
    with pytest.raises(ValueError, match="decreasing"):
        bubble_sequence(mesh128, S2, (64, 64), [2.0])
    with pytest.raises(ValueError, match="S\\^2"):
        bubble_sequence(mesh128, euclidean(3), (64, 64), [0.5])
    with pytest.raises(ValueError, match="overlap"):
        bubble_sequence(mesh128, S2, [(32, 64), (96, 64)], [0.5], annulus=(1.0, 2.0))
    with pytest.raises(ValueError, match="degree"):
        bubble_sequence(mesh128, S2, (64, 64), [0.5], degree=0)
    R1, R2 = default_annulus(mesh128, [(32, 64), (96, 64)])
    assert R2 == pytest.approx(0.95 * math.pi / 2) and R1 == R2 / 2
    assert MapSequence([south_pole_map(mesh128, S2)]).energy_bound == 0.0
    with pytest.raises(ValueError, match="bound"):
        bubble_sequence(mesh128, S2, (64, 64), [0.5]).check_bounds(1.0)


def test_ball_masses_translation_equivariant(mesh128, seq):
    d = seq.measure(1).density
    masses = ball_masses(mesh128, d, 0.3)
    shifted = ball_masses(mesh128, np.roll(d, (5, -7), axis=(0, 1)), 0.3)
    assert np.array_equal(np.roll(masses, (5, -7), axis=(0, 1)), shifted)
    assert (0, 0) in ball_offsets(mesh128, 0.3)
    with pytest.raises(ValueError):
        ball_offsets(mesh128, 4.0)


def test_detection_single_node(seq):
    S = detect_concentration(seq)
    assert S.nodes == [(64, 64)]
    assert S.bound_holds and S.cardinality_bound == math.ceil(seq.energy_bound)
    with pytest.raises(ValueError, match="not resolved"):
        detect_concentration(seq, radii=(0.01,))
    with pytest.raises(ValueError, match="eps0"):
        detect_concentration(seq, eps0=0.0)


def test_no_concentration_for_constant(mesh128):
    s = MapSequence([south_pole_map(mesh128, sphere(2))] * 2)
    assert detect_concentration(s).nodes == []


def test_decompose_and_weak_convergence(mesh128, seq):
    S = detect_concentration(seq)
    dec = measure_decompose(seq, S, south_pole_map(mesh128, sphere(2)))
    assert dec.rho == pytest.approx(8 * seq.scales[len(seq) // 2])
    assert len(dec.measure.atoms) == 1 and dec.measure.density_mass == 0.0
    a = dec.measure.atoms[0][1]
    assert 0 < a <= 1.5 * EIGHT_PI
    rep = weak_convergence_check(seq, dec)
    assert rep.passed
    assert set(rep.details["tests"]) >= {"one", "bump_0", "random_0"}


def test_two_bubbles_equal_atoms(mesh128):
    centers = [(32, 64), (96, 64)]
    s = bubble_sequence(mesh128, sphere(2), centers, [2.0**-k for k in range(1, 5)])
    S = detect_concentration(s)
    assert sorted(S.nodes) == centers
    dec = measure_decompose(s, S, south_pole_map(mesh128, sphere(2)))
    (_, a0), (_, a1) = dec.measure.atoms
    assert a0 == a1
    with pytest.raises(ValueError, match="closer"):
        measure_decompose(s, S, south_pole_map(mesh128, sphere(2)), rho=2.0)
