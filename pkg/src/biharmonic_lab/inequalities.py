"""Pointwise and integral inequalities for the tension field of a near-biharmonic map.

Every nodewise check writes its quantity q as (exact discrete identity)
= (content that is >= 0 under the hypotheses) + (discretization residuals)
+ (terms linear in tau2).  The tolerance at a node is then
K h^2 s for each residual, with K calibrated on an (h, h/2) pair, plus
theta |tau| for the tau2 terms, theta being the declared biharmonicity
threshold.  A small roundoff floor is always added.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calculus import (
    MapField,
    bitension_array,
    curvature_term_array,
    edge_energy_sq,
    jet_arrays,
    tension_array,
)
from .mesh import (
    CutoffField,
    DomainMesh,
    _mask_of,
    central_difference,
    integrate,
    scalar_gradient,
    scalar_laplacian,
)
from .reports import VACUOUS_SUP, Calibration, InequalityReport, calibrate, margin_report

ROUNDOFF = 1e-12
EPS_REG = 1e-12


@dataclass(frozen=True, eq=False)
class TensionGeometry:
    """Nodewise quantities entering the Bochner, Kato and subharmonicity checks."""

    mesh: DomainMesh
    tau_norm: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)  # sqrt(|tau|^2 + eps^2)
    tau2_norm: np.ndarray = field(repr=False)
    grad_sq: np.ndarray = field(repr=False)  # |nabla-bar tau|^2
    proj_grad_sq: np.ndarray = field(repr=False)  # sum_a <nabla-bar_a tau, tau>^2 / u^2
    lap_tau_sq: np.ndarray = field(repr=False)
    tau2_tau: np.ndarray = field(repr=False)  # <tau2, tau>
    curv_tau: np.ndarray = field(repr=False)  # <R tau, tau>
    lap_u: np.ndarray = field(repr=False)
    grad_u_sq: np.ndarray = field(repr=False)  # central |grad u|^2
    edge_grad_u_sq: np.ndarray = field(repr=False)
    tangent_sq: np.ndarray = field(repr=False)  # sum_a |dphi(e_a)|^2
    kappa_plus: float = 0.0

    @property
    def h(self) -> float:
        return self.mesh.h_max

    @property
    def bochner_residual(self) -> np.ndarray:
        """1/2 Lap|tau|^2 - <-Lap-bar tau, tau> - |nabla-bar tau|^2; zero in the continuum."""
        return 0.5 * self.lap_tau_sq + self.tau2_tau + self.curv_tau - self.grad_sq

    @property
    def edge_kato_residual(self) -> np.ndarray:
        return self.edge_grad_u_sq - self.proj_grad_sq

    @property
    def kato_residual(self) -> np.ndarray:
        return self.grad_u_sq - self.proj_grad_sq

    def scale(self, mask=None) -> float:
        s = self.tau_norm**2 + self.grad_sq
        return float(s.max() if mask is None else s[mask].max(initial=0.0))

    def vacuous(self, mask=None) -> bool:
        t = self.tau_norm if mask is None else self.tau_norm[mask]
        return bool(t.max(initial=0.0) <= VACUOUS_SUP)


def _edge_grad_sq(mesh: DomainMesh, f: np.ndarray) -> np.ndarray:
    out = np.zeros(mesh.shape)
    for a, h in enumerate(mesh.spacing):
        fwd = (np.roll(f, -1, axis=a) - f) ** 2 / (h * h)
        out += 0.5 * (fwd + np.roll(fwd, 1, axis=a))
    return out


def tension_geometry(phi: MapField, eps_reg: float = EPS_REG) -> TensionGeometry:
    mesh, target, values = phi.mesh, phi.target, phi.values
    dphi, sq, tangent_sq = jet_arrays(mesh, target, values)
    tau = tension_array(mesh, target, values)
    tau2 = bitension_array(mesh, target, values, tau, sq)
    rtau = curvature_term_array(target, dphi, tangent_sq, tau)
    nabla = [target.project_tangent(values, central_difference(mesh, tau, a), checked=True) for a in range(mesh.dim)]
    tau_sq = np.maximum(target.sqnorm(tau), 0.0)
    u = np.sqrt(tau_sq + eps_reg**2)
    return TensionGeometry(
        mesh=mesh,
        tau_norm=np.sqrt(tau_sq),
        u=u,
        tau2_norm=np.sqrt(np.maximum(target.sqnorm(tau2), 0.0)),
        grad_sq=np.maximum(sum(target.sqnorm(n) for n in nabla), 0.0),
        proj_grad_sq=sum(target.inner(n, tau) ** 2 for n in nabla) / u**2,
        lap_tau_sq=scalar_laplacian(mesh, tau_sq),
        tau2_tau=target.inner(tau2, tau),
        curv_tau=target.inner(rtau, tau),
        lap_u=scalar_laplacian(mesh, u),
        grad_u_sq=(scalar_gradient(mesh, u) ** 2).sum(axis=-1),
        edge_grad_u_sq=_edge_grad_sq(mesh, u),
        tangent_sq=tangent_sq,
        kappa_plus=target.curvature_bound,
    )


@dataclass(frozen=True)
class SectionCalibration:
    """h^2 constants for the three residuals, from one refinement pair."""

    bochner: Calibration
    edge_kato: Calibration
    kato: Calibration

    def to_json(self) -> dict:
        return {"bochner": self.bochner.to_json(), "edge_kato": self.edge_kato.to_json(), "kato": self.kato.to_json()}


def _kato_set(geo: TensionGeometry, mask) -> np.ndarray:
    big = geo.tau_norm > geo.h
    return big if mask is None else big & mask


def _normalized(residual, mask, scale) -> float:
    if scale <= 0:
        return 0.0
    r = np.abs(residual if mask is None else residual[mask])
    return float(r.max(initial=0.0) / scale)


def calibrate_section_checks(coarse: MapField, fine: MapField, mask_coarse=None, mask_fine=None) -> SectionCalibration:
    """Calibrate K for each residual from the same problem on meshes h and h/2."""
    geos = (tension_geometry(coarse), tension_geometry(fine))
    masks = (mask_coarse, mask_fine)
    hs = (geos[0].h, geos[1].h)
    out = {}
    for name, attr, restrict in (
        ("bochner", "bochner_residual", False),
        ("edge_kato", "edge_kato_residual", True),
        ("kato", "kato_residual", True),
    ):
        vals = []
        for geo, mask in zip(geos, masks):
            where = _kato_set(geo, mask) if restrict else mask
            vals.append(_normalized(getattr(geo, attr), where, geo.scale(mask)))
        out[name] = calibrate(vals[0], vals[1], *hs)
    return SectionCalibration(**out)


def _zero_calibration() -> SectionCalibration:
    z = Calibration(0.0, float("inf"), 0.0, 0.0, 1.0, 0.5)
    return SectionCalibration(z, z, z)


def _threshold(geo: TensionGeometry, mask, theta):
    if theta is not None:
        return float(theta), "declared"
    t = geo.tau2_norm if mask is None else geo.tau2_norm[mask]
    return float(t.max(initial=0.0)), "self"


def _require_nonpositive(phi: MapField, name: str):
    if phi.target.kappa > 0:
        raise ValueError(f"{name} needs a target with kappa <= 0; use bochner_bounded_check for kappa = +1")


def _common_details(geo, mask, theta, source, cal):
    return {
        "theta": theta,
        "theta_source": source,
        "h": geo.h,
        "scale": geo.scale(mask),
        "calibration": None if cal is None else cal.to_json(),
    }


def bochner_check(
    phi: MapField,
    calibration: SectionCalibration | None = None,
    theta: float | None = None,
    mask=None,
    geometry: TensionGeometry | None = None,
) -> InequalityReport:
    """Nodewise Lap|tau|^2 - 2|nabla-bar tau|^2 >= -(2 K h^2 s + 2 theta |tau|)."""
    _require_nonpositive(phi, "bochner_check")
    geo = tension_geometry(phi) if geometry is None else geometry
    cal = _zero_calibration() if calibration is None else calibration
    theta, source = _threshold(geo, mask, theta)
    s = geo.scale(mask)
    q = geo.lap_tau_sq - 2.0 * geo.grad_sq
    tol = 2.0 * cal.bochner.K * geo.h**2 * s + 2.0 * theta * geo.tau_norm + ROUNDOFF * s
    return margin_report(
        "bochner", q, tol, mask, vacuous=geo.vacuous(mask), details=_common_details(geo, mask, theta, source, calibration)
    )


def _subharmonic_tolerance(geo, cal, theta, s):
    return (cal.bochner.K + cal.edge_kato.K) * geo.h**2 * s + theta * geo.tau_norm + ROUNDOFF * s


def subharmonicity_check(
    phi: MapField,
    calibration: SectionCalibration | None = None,
    theta: float | None = None,
    mask=None,
    geometry: TensionGeometry | None = None,
) -> InequalityReport:
    """Nodewise |tau| Lap|tau| >= -tol with |tau| regularized as sqrt(|tau|^2 + eps^2).

    Uses the exact grid identity u Lap u = 1/2 Lap u^2 - |grad u|^2_edge.
    """
    _require_nonpositive(phi, "subharmonicity_check")
    geo = tension_geometry(phi) if geometry is None else geometry
    cal = _zero_calibration() if calibration is None else calibration
    theta, source = _threshold(geo, mask, theta)
    s = geo.scale(mask)
    q = geo.u * geo.lap_u
    return margin_report(
        "subharmonicity",
        q,
        _subharmonic_tolerance(geo, cal, theta, s),
        mask,
        vacuous=geo.vacuous(mask),
        details=_common_details(geo, mask, theta, source, calibration),
    )


def kato_check(
    phi: MapField,
    calibration: SectionCalibration | None = None,
    mask=None,
    geometry: TensionGeometry | None = None,
) -> InequalityReport:
    """|nabla-bar tau|^2 - |grad |tau||^2 >= -K h^2 s on nodes with |tau| > h."""
    geo = tension_geometry(phi) if geometry is None else geometry
    cal = _zero_calibration() if calibration is None else calibration
    where = _kato_set(geo, mask)
    s = geo.scale(mask)
    q = geo.grad_sq - geo.grad_u_sq
    tol = cal.kato.K * geo.h**2 * s + ROUNDOFF * s
    details = _common_details(geo, mask, 0.0, "unused", calibration)
    return margin_report("kato", q, tol, where, vacuous=geo.vacuous(mask), details=details)


def bochner_bounded_check(
    phi: MapField,
    calibration: SectionCalibration | None = None,
    theta: float | None = None,
    mask=None,
    geometry: TensionGeometry | None = None,
) -> InequalityReport:
    """Curvature-bounded variants for any space form, C = max(kappa, 0):

    1/2 Lap|tau|^2 + C |dphi|^2 |tau|^2 >= |nabla-bar tau|^2 - tol  and
    |tau| Lap|tau| + C |dphi|^2 |tau|^2 >= -tol,
    with |dphi|^2 = sum_a |dphi(e_a)|^2.  Items are the union of both node sets.
    """
    geo = tension_geometry(phi) if geometry is None else geometry
    cal = _zero_calibration() if calibration is None else calibration
    theta, source = _threshold(geo, mask, theta)
    s = geo.scale(mask)
    C = geo.kappa_plus
    extra = C * geo.tangent_sq * geo.tau_norm**2
    q1 = 0.5 * geo.lap_tau_sq + extra - geo.grad_sq
    q2 = geo.u * geo.lap_u + extra
    tol1 = cal.bochner.K * geo.h**2 * s + theta * geo.tau_norm + ROUNDOFF * s
    tol2 = _subharmonic_tolerance(geo, cal, theta, s)
    full = np.ones(geo.mesh.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    details = _common_details(geo, mask, theta, source, calibration)
    details["C"] = C
    parts = [margin_report(n, q, t, full) for n, q, t in (("gradient_form", q1, tol1), ("norm_form", q2, tol2))]
    details["parts"] = {p.name: {"fraction": p.fraction, "worst_margin": p.worst_margin} for p in parts}
    return margin_report(
        "bochner_bounded",
        np.concatenate([q1[full], q2[full]]),
        np.concatenate([np.broadcast_to(tol1, q1.shape)[full], np.broadcast_to(tol2, q2.shape)[full]]),
        vacuous=geo.vacuous(mask),
        details=details,
    )


def _grad_sq(mesh, f):
    return (scalar_gradient(mesh, f) ** 2).sum(axis=-1)


def caccioppoli_check(
    mesh: DomainMesh, u: np.ndarray, p: float, eta: CutoffField, theta: float = 0.0, slack: float = 0.0
) -> InequalityReport:
    """int eta^2 |grad u^(p/2)|^2 <= (p/(p-1))^2 int u^p |grad eta|^2 (+ tau2 correction + slack).

    With Lap u >= -theta the same test-function argument gives
    LHS <= p^2/(4 (p-1)^2) (sqrt(B) + sqrt(B + (p-1) theta C))^2 with
    B = int u^p |grad eta|^2 and C = int eta^2 u^(p-1); theta = 0 is the
    plain bound.  ``slack`` is a relative allowance for quadrature error.
    The empirical constant is LHS / B.
    """
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("u must be nonnegative")
    lhs = integrate(mesh, eta.values**2 * _grad_sq(mesh, u ** (p / 2)))
    B = integrate(mesh, u**p * _grad_sq(mesh, eta.values))
    C = integrate(mesh, eta.values**2 * u ** (p - 1))
    plain = (p / (p - 1)) ** 2 * B
    bound = p**2 / (4 * (p - 1) ** 2) * (np.sqrt(B) + np.sqrt(B + (p - 1) * theta * C)) ** 2
    tol = slack * (lhs + bound)
    ratio = lhs / B if B > 0 else (0.0 if lhs == 0 else float("inf"))
    details = {"lhs": lhs, "rhs": plain, "rhs_with_theta": float(bound), "p": p, "theta": theta, "slack": slack}
    vacuous = lhs == 0 and B == 0
    return margin_report("caccioppoli", bound - lhs, tol, empirical_constant=ratio, vacuous=vacuous, details=details)


def holder_sobolev_check(
    phi: MapField,
    u: np.ndarray,
    p: float,
    eta: CutoffField,
    region,
    sobolev_constant: float,
    slack: float = 0.0,
) -> InequalityReport:
    """int |dphi|^2 u^p eta^2 <= C_S (int_region |dphi|^m)^(2/m) (int |grad f|^2 + int f^2), f = u^(p/2) eta.

    Hoelder with exponents (m/2, gamma/2) is exact for node sums; the
    Sobolev step uses the supplied constant.  Reports LHS / (energy factor x
    H^1 norm) as the empirical constant.
    """
    mesh = phi.mesh
    m = mesh.dim
    if m <= 2:
        raise ValueError(f"the Hoelder-Sobolev step needs m >= 3, got m={m}")
    mask = _mask_of(region)
    if mask is not None and np.any((eta.values > 0) & ~mask):
        raise ValueError("cutoff must be supported inside the region")
    sq = edge_energy_sq(mesh, phi.target, phi.values)
    f = np.asarray(u, dtype=float) ** (p / 2) * eta.values
    lhs = integrate(mesh, sq * f * f)
    energy = integrate(mesh, sq ** (m / 2), region) ** (2.0 / m)
    h1 = integrate(mesh, _grad_sq(mesh, f) + f * f)
    rhs = sobolev_constant * energy * h1
    ratio = lhs / (energy * h1) if energy * h1 > 0 else (0.0 if lhs == 0 else float("inf"))
    details = {"lhs": lhs, "energy_factor": energy, "h1": h1, "sobolev_constant": sobolev_constant, "p": p}
    return margin_report(
        "holder_sobolev", rhs - lhs, slack * rhs, empirical_constant=ratio, vacuous=(lhs == 0 and rhs == 0), details=details
    )
