"""Shrinking-defect experiment for the boundedness of |tau| near an isolated
defect, plus the dipole control whose differential blows up while tau stays zero."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calculus import MapField, edge_energy_sq, tension_array
from .mesh import DomainMesh, laplacian_symbol
from .space_forms import SpaceForm
from .variational import FlowConfig, FlowUnderflowError, run_flow

DEFAULT_FLOW = FlowConfig(kind="biharmonic", dt=1.0, max_steps=3000, tol=1e-10, preconditioner="sobolev", method="cg")
ROUNDOFF = 1e-8
COLLAR = 2.0  # in grid spacings, excluded around pins from the tau2 population


@dataclass(frozen=True)
class DefectRow:
    radius: float
    resolution: tuple
    pinned_nodes: int
    E2: float
    E2_free: float
    sup_near: float
    sup_annulus: float
    tau2_sup: float
    status: str
    steps: int


CSV_HEADER = ("radius", "resolution", "pinned_nodes", "E2", "E2_free", "sup_near", "sup_annulus", "tau2_sup", "status", "steps")


@dataclass
class RemovableReport:
    rows: list[DefectRow]
    control: DefectRow
    probe_radius: float
    factor: float
    details: dict = field(default_factory=dict)

    @property
    def growth(self) -> np.ndarray:
        s = np.array([r.sup_near for r in self.rows])
        return s / s[0]

    @property
    def bounded(self) -> bool:
        """sup |tau| near the defect stays within ``factor`` of its largest-radius value."""
        return bool(np.all(self.growth <= self.factor))

    @property
    def energy_bounded(self) -> bool:
        E2 = np.array([r.E2 for r in self.rows])
        return bool(np.all(E2 <= self.factor * E2[0]))

    def to_json(self) -> dict:
        return {
            "rows": [row.__dict__ for row in self.rows],
            "control": self.control.__dict__,
            "probe_radius": self.probe_radius,
            "factor": self.factor,
            "growth": self.growth.tolist(),
            "bounded": self.bounded,
            "energy_bounded": self.energy_bounded,
            "details": self.details,
        }


def _run_pinned(phi0: MapField, pinned: np.ndarray, cfg: FlowConfig):
    try:
        phi, trace = run_flow(phi0, cfg, pinned=pinned)
    except FlowUnderflowError as err:
        # the objective has reached its roundoff floor; keep the last accepted map
        phi, trace = err.phi, err.trace
    return phi, trace


def _defect_row(mesh, target, defect, anchor, radius, cfg, probe_radius) -> DefectRow:
    (x0, value0), (x1, value1, rho1) = defect, anchor
    d0, d1 = mesh.distance_field(x0), mesh.distance_field(x1)
    A = (d0 < radius) | (d0 == 0)
    B = d1 < rho1
    values = np.broadcast_to(value1, (*mesh.shape, target.ambient_dim)).copy()
    values[A] = value0
    phi, trace = _run_pinned(MapField(mesh, target, values), A | B, cfg)
    tau = tension_array(mesh, target, phi.values)
    norm = np.sqrt(np.maximum(target.sqnorm(tau), 0.0))
    free = ~(A | B)
    near = free & (d0 < probe_radius)
    annulus = free & (d0 >= probe_radius / 2) & (d0 < probe_radius)
    collar = COLLAR * mesh.h_max
    bulk = free & (d0 >= max(radius, 0.0) + collar) & (d1 >= rho1 + collar)
    tau2 = trace.rows[-1][4] if not bulk.any() else _tau2_sup(phi, bulk)
    return DefectRow(
        float(radius),
        tuple(mesh.resolution),
        int(A.sum()),
        float(trace.rows[-1][2]),
        float(0.5 * (norm[free] ** 2).sum() * mesh.weight),
        float(norm[near].max(initial=0.0)),
        float(norm[annulus].max(initial=0.0)),
        float(tau2),
        trace.status,
        trace.steps,
    )


def _tau2_sup(phi: MapField, mask) -> float:
    from .calculus import bitension_array

    t2 = bitension_array(phi.mesh, phi.target, phi.values)
    return float(np.sqrt(np.maximum(phi.target.sqnorm(t2), 0.0))[mask].max())


def removable_singularity_experiment(
    radii,
    meshes,
    target: SpaceForm,
    defect_point,
    defect_value,
    anchor_point,
    anchor_value,
    anchor_radius: float = 0.3,
    probe_radius: float = 0.5,
    factor: float = 2.0,
    cfg: FlowConfig = DEFAULT_FLOW,
) -> RemovableReport:
    """Biharmonic maps pinned on a shrinking ball B_rho(x0) (value ``defect_value``)
    and on a fixed anchor ball (value ``anchor_value``), one flow per radius.

    ``meshes`` is either one mesh or one mesh per radius with non-decreasing
    resolution.  The control run pins both balls to the anchor value, so it
    has no defect and its tension must vanish.
    """
    radii = [float(r) for r in radii]
    if len(radii) < 1 or any(r < 0 for r in radii) or any(b > a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be nonnegative and non-increasing")
    if isinstance(meshes, DomainMesh):
        meshes = [meshes] * len(radii)
    meshes = list(meshes)
    if len(meshes) != len(radii):
        raise ValueError("need one mesh per radius (or a single mesh)")
    for a, b in zip(meshes, meshes[1:]):
        if a.dim != b.dim or any(nb < na for na, nb in zip(a.resolution, b.resolution)):
            raise ValueError("mesh resolution must be non-decreasing")
    v0 = target.check_point(np.asarray(defect_value, dtype=float))
    v1 = target.check_point(np.asarray(anchor_value, dtype=float))
    rows = []
    for r, mesh in zip(radii, meshes):
        x0, x1 = mesh.nearest_node(defect_point), mesh.nearest_node(anchor_point)
        rows.append(_defect_row(mesh, target, (x0, v0), (x1, v1, anchor_radius), r, cfg, probe_radius))
    mesh = meshes[0]
    x0, x1 = mesh.nearest_node(defect_point), mesh.nearest_node(anchor_point)
    control = _defect_row(mesh, target, (x0, v1), (x1, v1, anchor_radius), radii[0], cfg, probe_radius)
    details = {"target": target.to_json(), "defect_point": list(defect_point), "anchor_point": list(anchor_point),
               "anchor_radius": anchor_radius}
    return RemovableReport(rows, control, probe_radius, factor, details)


@dataclass(frozen=True)
class DipoleControl:
    """Rows of (exclusion radius, sup |dphi|, sup |tau|) over nodes at distance >= radius."""

    radii: tuple
    sup_dphi: tuple
    sup_tau: tuple

    @property
    def dphi_growth(self) -> float:
        return self.sup_dphi[-1] / self.sup_dphi[0]

    @property
    def tau_floor(self) -> float:
        """Roundoff level of tau relative to the largest differential."""
        return ROUNDOFF * max(self.sup_dphi)

    @property
    def tau_bounded(self) -> bool:
        return all(t <= 2.0 * max(self.sup_tau[0], self.tau_floor) for t in self.sup_tau)

    def to_json(self) -> dict:
        return {"radii": list(self.radii), "sup_dphi": list(self.sup_dphi), "sup_tau": list(self.sup_tau),
                "dphi_growth": self.dphi_growth, "tau_bounded": self.tau_bounded}


def dipole_map(mesh: DomainMesh, center) -> MapField:
    """Flat analogue of z -> 1/z on a 2-torus: (d_x G, -d_y G) with G the lattice
    Green's function of -Lap at ``center`` (zero-mean compensated).

    Its tension is supported on the two neighbours of ``center`` along each
    axis, so tau = 0 away from the puncture while |dphi| grows like 1/r^2.
    """
    if mesh.dim != 2:
        raise ValueError("the dipole control lives on a 2-torus")
    from .mesh import central_difference
    from .space_forms import euclidean

    center = mesh.check_node(center)
    delta = np.zeros(mesh.shape)
    delta[center] = 1.0 / mesh.weight
    rhs = np.fft.fftn(delta - delta.mean())
    sym = laplacian_symbol(mesh)
    G = np.fft.ifftn(np.divide(rhs, sym, out=np.zeros_like(rhs), where=sym > 0)).real
    values = np.stack([central_difference(mesh, G, 0), -central_difference(mesh, G, 1)], axis=-1)
    return MapField(mesh, euclidean(2), values)


def dipole_control(mesh: DomainMesh, center, radii=(0.4, 0.2, 0.1, 0.05)) -> DipoleControl:
    phi = dipole_map(mesh, center)
    dist = mesh.distance_field(center)
    dphi = np.sqrt(edge_energy_sq(mesh, phi.target, phi.values))
    tau = np.sqrt(phi.target.sqnorm(tension_array(mesh, phi.target, phi.values)))
    radii = tuple(float(r) for r in radii)
    if any(r < 2 * mesh.h_max for r in radii):
        raise ValueError("exclusion radii must be at least two grid spacings")
    sd = tuple(float(dphi[dist >= r].max()) for r in radii)
    st = tuple(float(tau[dist >= r].max()) for r in radii)
    return DipoleControl(radii, sd, st)
