"""Discrete differential calculus for maps from a flat torus into a space form.

Everything is extrinsic: derivatives of ambient coordinates followed by the
tangent projection at the base point, which is the Levi-Civita connection of
the embedded target.  On the flat torus the frame is parallel, so the
connection terms of the domain drop out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import DomainMesh, central_difference, mixed_difference, scalar_laplacian
from .space_forms import MODEL_TOL, SpaceForm


@dataclass(frozen=True, eq=False)
class MapField:
    mesh: DomainMesh
    target: SpaceForm
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        expected = (*self.mesh.shape, self.target.ambient_dim)
        if values.shape != expected:
            raise ValueError(f"map values have shape {values.shape}, expected {expected}")
        object.__setattr__(self, "values", self.target.check_point(values))

    @classmethod
    def constant(cls, mesh: DomainMesh, target: SpaceForm, point=None) -> "MapField":
        q = target.base_point() if point is None else np.asarray(point, dtype=float)
        return cls(mesh, target, np.broadcast_to(q, (*mesh.shape, target.ambient_dim)).copy())

    @classmethod
    def from_function(cls, mesh: DomainMesh, target: SpaceForm, fn) -> "MapField":
        """Sample ``fn(coords)`` (coords shape ``(*shape, m)``) and project onto the model."""
        return cls(mesh, target, target.project_point(fn(mesh.coordinates())))

    def with_values(self, values: np.ndarray) -> "MapField":
        return MapField(self.mesh, self.target, values)


@dataclass(frozen=True, eq=False)
class Section:
    """Section of the pullback bundle: one tangent vector at phi(x) per node."""

    base: MapField
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.base.values.shape:
            raise ValueError(f"section values have shape {values.shape}, expected {self.base.values.shape}")
        resid = self.base.target.tangency_residual(self.base.values, values)
        scale = np.maximum(1.0, np.abs(values).max(axis=-1))
        if np.any(resid > MODEL_TOL * scale):
            raise ValueError(f"section not tangent (worst residual {float(resid.max()):.3e})")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, base: MapField) -> "Section":
        return cls(base, np.zeros_like(base.values))

    @classmethod
    def project(cls, base: MapField, W: np.ndarray) -> "Section":
        """Tangent part of an arbitrary ambient field along ``base``."""
        return cls(base, base.target.project_tangent(base.values, W, checked=True))

    def sqnorm(self) -> np.ndarray:
        return self.base.target.sqnorm(self.values)

    def norm(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.sqnorm(), 0.0))

    def sup_norm(self) -> float:
        return float(self.norm().max())

    def __add__(self, other: "Section") -> "Section":
        return Section(self.base, self.values + other.values)

    def __sub__(self, other: "Section") -> "Section":
        return Section(self.base, self.values - other.values)

    def __mul__(self, c: float) -> "Section":
        return Section(self.base, c * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Jet:
    """First-order data of a map.

    ``dphi[a]`` is the tangent vector dphi(e_a) (projected central difference).
    ``sq`` is |dphi|^2 measured on grid edges, the average over +/- a of the
    squared chord |phi(x +- h e_a) - phi(x)|^2 / h^2.  This is the density whose
    integral has the tension as its exact discrete gradient.  ``tangent_sq``
    is sum_a |dphi(e_a)|^2, which feeds the curvature term.
    """

    dphi: np.ndarray = field(repr=False)
    sq: np.ndarray = field(repr=False)
    tangent_sq: np.ndarray = field(repr=False)

    @property
    def energy_density(self) -> np.ndarray:
        return 0.5 * self.sq


# Array-level kernels.  The public operators below wrap these; flows call them
# directly to avoid re-validating every intermediate field.


def _proj(target: SpaceForm, q: np.ndarray, W: np.ndarray) -> np.ndarray:
    return target.project_tangent(q, W, checked=True)


def edge_energy_sq(mesh: DomainMesh, target: SpaceForm, values: np.ndarray) -> np.ndarray:
    out = np.zeros(mesh.shape)
    for a, h in enumerate(mesh.spacing):
        fwd = target.sqnorm(np.roll(values, -1, axis=a) - values) / (h * h)
        out += 0.5 * (fwd + np.roll(fwd, 1, axis=a))
    return out


def jet_arrays(mesh: DomainMesh, target: SpaceForm, values: np.ndarray):
    dphi = np.stack([_proj(target, values, central_difference(mesh, values, a)) for a in range(mesh.dim)])
    return dphi, edge_energy_sq(mesh, target, values), target.sqnorm(dphi).sum(axis=0)


def tension_array(mesh: DomainMesh, target: SpaceForm, values: np.ndarray) -> np.ndarray:
    return _proj(target, values, scalar_laplacian(mesh, values))


def curvature_term_array(target: SpaceForm, dphi: np.ndarray, tangent_sq: np.ndarray, V: np.ndarray) -> np.ndarray:
    if target.kappa == 0:
        return np.zeros_like(V)
    out = tangent_sq[..., None] * V
    for d in dphi:
        out -= target.inner(V, d)[..., None] * d
    return target.kappa * out


def jacobi_array(mesh: DomainMesh, target: SpaceForm, values: np.ndarray, V: np.ndarray, sq=None) -> np.ndarray:
    """Riemannian Hessian of the discrete energy: -P Lap V - kappa |dphi|^2 V."""
    out = -_proj(target, values, scalar_laplacian(mesh, V))
    if target.kappa != 0:
        if sq is None:
            sq = edge_energy_sq(mesh, target, values)
        out -= target.kappa * sq[..., None] * V
    return out


def rough_laplacian_array(mesh, target, values, V, jet=None) -> np.ndarray:
    dphi, sq, tangent_sq = jet_arrays(mesh, target, values) if jet is None else jet
    return jacobi_array(mesh, target, values, V, sq) + curvature_term_array(target, dphi, tangent_sq, V)


def bitension_array(mesh, target, values, tau=None, sq=None) -> np.ndarray:
    if tau is None:
        tau = tension_array(mesh, target, values)
    return jacobi_array(mesh, target, values, tau, sq)


# Public operators.


def differential(phi: MapField) -> Jet:
    return Jet(*jet_arrays(phi.mesh, phi.target, phi.values))


def second_fundamental_form(phi: MapField, a: int, b: int) -> Section:
    """B(e_a, e_b); symmetric in (a, b) because the stencils commute."""
    m = phi.mesh.dim
    if not (0 <= a < m and 0 <= b < m):
        raise ValueError(f"axes must lie in [0, {m}), got {a}, {b}")
    return Section.project(phi, mixed_difference(phi.mesh, phi.values, a, b))


def tension(phi: MapField) -> Section:
    return Section(phi, tension_array(phi.mesh, phi.target, phi.values))


def pullback_derivative(V: Section, a: int) -> Section:
    phi = V.base
    return Section.project(phi, central_difference(phi.mesh, V.values, a))


def pullback_gradient_sq(V: Section) -> np.ndarray:
    """|nabla-bar V|^2 = sum_a |nabla-bar_a V|^2, nodewise."""
    phi = V.base
    return sum(phi.target.sqnorm(pullback_derivative(V, a).values) for a in range(phi.mesh.dim))


def rough_laplacian(V: Section) -> Section:
    """Nonnegative rough Laplacian, defined as J + R.

    Equals -P Lap V - kappa sum_a <V, dphi_a> dphi_a plus an O(h^2) correction
    kappa (sum_a |dphi_a|^2 - |dphi|^2) V that makes J the exact Hessian of
    the discrete energy.  For flat targets it is exactly -Lap per component.
    """
    phi = V.base
    return Section(phi, rough_laplacian_array(phi.mesh, phi.target, phi.values, V.values))


def curvature_term(phi: MapField, V: Section, jet: Jet | None = None) -> Section:
    """R(V) = sum_a R^N(V, dphi(e_a)) dphi(e_a)."""
    jet = differential(phi) if jet is None else jet
    return Section(phi, curvature_term_array(phi.target, jet.dphi, jet.tangent_sq, V.values))


def jacobi_apply(phi: MapField, V: Section) -> Section:
    return Section(phi, jacobi_array(phi.mesh, phi.target, phi.values, V.values))


def bitension(phi: MapField) -> Section:
    """tau_2 = J(tau); the exact discrete gradient of the bienergy, up to sign."""
    return jacobi_apply(phi, tension(phi))


def norm_gradient(V: Section, eps_reg: float = 1e-12) -> np.ndarray:
    """Central-difference gradient of sqrt(|V|^2 + eps_reg^2), shape ``(*shape, m)``."""
    phi = V.base
    u = np.sqrt(np.maximum(V.sqnorm(), 0.0) + eps_reg**2)
    return np.stack([central_difference(phi.mesh, u, a) for a in range(phi.mesh.dim)], axis=-1)
