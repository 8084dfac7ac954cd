"""Moser iteration: the exponent/radius schedule, its constant products, the
per-step chain on a scalar field, and the sup-versus-L^2 probes built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calculus import MapField, edge_energy_sq, tension_array
from .mesh import DomainMesh, ball, torus_distance
from .reports import VACUOUS_SUP, InequalityReport, margin_report

MIN_BALL_NODES = 8
PRODUCT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MoserSchedule:
    """p_k = 2 gbar^(k-1), r_k = (1 + 2^(1-k)) r for k = 1..K, gbar = m/(m-2)."""

    m: int
    r: float
    K: int
    p: np.ndarray = field(repr=False)
    radii: np.ndarray = field(repr=False)

    @property
    def gamma_bar(self) -> float:
        return self.m / (self.m - 2.0)

    @property
    def gamma(self) -> float:
        return 2.0 * self.m / (self.m - 2.0)

    @property
    def exponent_partials(self) -> np.ndarray:
        """sum_{k<=K} gbar^-(k-1), which tends to m/2."""
        return np.cumsum(self.gamma_bar ** -np.arange(self.K, dtype=float))

    @property
    def constant_partials(self) -> np.ndarray:
        """Partial products C''_K = prod_k (p_k/(p_k-1))^(2/p_k) 2^(k/gbar^(k-1))."""
        return np.exp(np.cumsum(_log_factors(self.m, self.K)))

    def identity_residuals(self) -> dict:
        """Largest relative defects of the schedule identities."""
        p, r, gb, g = self.p, self.radii, self.gamma_bar, self.gamma
        k = np.arange(1, self.K + 1, dtype=float)
        growth = np.abs(p[1:] - gb * p[:-1]) / p[1:] if self.K > 1 else np.zeros(0)
        steps = np.abs((r[:-1] - r[1:]) - self.r / 2.0 ** k[:-1]) / self.r if self.K > 1 else np.zeros(0)
        power = np.abs((1.0 / g) * gb ** -(k - 1) - 1.0 / (gb * p)) * (gb * p)
        return {
            "p1": abs(p[0] - 2.0),
            "r1": abs(r[0] - 2.0 * self.r) / self.r,
            "p_growth": float(growth.max(initial=0.0)),
            "radius_steps": float(steps.max(initial=0.0)),
            "power_identity": float(power.max(initial=0.0)),
            "radii_decreasing": bool(np.all(np.diff(r) < 0)),
        }

    def to_json(self) -> dict:
        return {"m": self.m, "r": self.r, "K": self.K, "p": self.p.tolist(), "radii": self.radii.tolist()}


def _check_dim(m: int):
    if m <= 2:
        raise ValueError(f"the Moser schedule needs m >= 3 (gamma-bar = m/(m-2)); got m={m}")


def moser_schedule(m: int, r: float, K: int) -> MoserSchedule:
    _check_dim(m)
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    gb = m / (m - 2.0)
    k = np.arange(1, K + 1, dtype=float)
    return MoserSchedule(int(m), float(r), int(K), 2.0 * gb ** (k - 1), (1.0 + 2.0 ** (1 - k)) * r)


def _log_factors(m: int, K: int) -> np.ndarray:
    gb = m / (m - 2.0)
    k = np.arange(1, K + 1, dtype=float)
    base = 2.0 * gb ** (k - 1)
    return (2.0 / base) * np.log(base / (base - 1.0)) + (k / gb ** (k - 1)) * math.log(2.0)


@dataclass(frozen=True)
class ProductConvergence:
    """Partial products of the three constant factors of the iteration."""

    m: int
    reciprocal: np.ndarray  # prod (2 gbar^(k-1) - 1)^(-2/p_k), each <= 1
    power_of_two: np.ndarray  # 2^(sum k / gbar^(k-1))
    power_of_gamma: np.ndarray  # gamma^(sum (k-1)/gbar^(k-1))
    constant: np.ndarray  # C''_K
    K_converged: int

    @property
    def final_increments(self) -> dict:
        return {name: float(abs(a[self.K_converged - 1] - a[self.K_converged - 2])) for name, a in self._items()}

    def _items(self):
        return (
            ("reciprocal", self.reciprocal),
            ("power_of_two", self.power_of_two),
            ("power_of_gamma", self.power_of_gamma),
            ("constant", self.constant),
        )

    def limits(self) -> dict:
        return {name: float(a[-1]) for name, a in self._items()}


def product_convergence(m: int, tol: float = PRODUCT_TOL, K_max: int = 400) -> ProductConvergence:
    """Sum the products directly until every increment drops below ``tol``."""
    _check_dim(m)
    gb = m / (m - 2.0)
    gamma = 2.0 * gb
    k = np.arange(1, K_max + 1, dtype=float)
    p = 2.0 * gb ** (k - 1)
    reciprocal = np.exp(np.cumsum(-(2.0 / p) * np.log(p - 1.0)))
    two = np.exp(np.cumsum(k / gb ** (k - 1)) * math.log(2.0))
    gam = np.exp(np.cumsum((k - 1) / gb ** (k - 1)) * math.log(gamma))
    const = np.exp(np.cumsum(_log_factors(m, K_max)))
    incr = np.max(np.abs(np.diff(np.stack([reciprocal, two, gam, const]), axis=1)), axis=0)
    # incr[i] = P_(i+2) - P_(i+1); K_conv is the first K after which every increment is small
    bad = np.nonzero(incr >= tol)[0]
    K_conv = int(bad[-1]) + 3 if bad.size else 2
    if K_conv >= K_max:
        raise RuntimeError(f"products did not converge to {tol} within {K_max} factors")
    return ProductConvergence(m, reciprocal, two, gam, const, K_conv)


def _ball_norm(mesh: DomainMesh, u: np.ndarray, mask: np.ndarray, p: float) -> float:
    vals = u[mask]
    top = float(vals.max(initial=0.0))
    if top == 0.0:
        return 0.0
    return top * float((((vals / top) ** p).sum() * mesh.weight) ** (1.0 / p))


def step_constant(schedule: MoserSchedule, k: int, sobolev_constant: float) -> float:
    """A_k = [C_S ((p/(p-1))^2 16 / (r_k - r_{k+1})^2 + 1)]^(1/p_k) for step k (1-based).

    Caccioppoli with the |grad eta| <= 2/(rho2-rho1) cutoff, the 2|A|^2+2|B|^2
    split, and the Sobolev inequality with its zeroth-order term.
    """
    p = schedule.p[k - 1]
    gap = schedule.r / 2.0**k
    return float((sobolev_constant * ((p / (p - 1)) ** 2 * 16.0 / gap**2 + 1.0)) ** (1.0 / p))


def moser_chain_verify(
    mesh: DomainMesh, u: np.ndarray, center, schedule: MoserSchedule, sobolev_constant: float
) -> InequalityReport:
    """N_k = ||u||_{L^p_k(B_{r_k})}; checks N_{k+1} <= A_k N_k for k < K.

    The empirical constant is N_K r^(m/2) / N_1.
    """
    if mesh.dim != schedule.m:
        raise ValueError(f"mesh dimension {mesh.dim} does not match schedule m={schedule.m}")
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("u must be nonnegative")
    masks = [ball(mesh, center, r).mask for r in schedule.radii]
    counts = [int(mk.sum()) for mk in masks]
    if min(counts) < MIN_BALL_NODES:
        raise ValueError(f"ball too small for quadrature: {min(counts)} nodes < {MIN_BALL_NODES}")
    N = np.array([_ball_norm(mesh, u, mk, p) for mk, p in zip(masks, schedule.p)])
    A = np.array([step_constant(schedule, k, sobolev_constant) for k in range(1, schedule.K)])
    margin = A * N[:-1] - N[1:]
    vacuous = bool(N[0] == 0.0)
    C_hat = float(N[-1] * schedule.r ** (schedule.m / 2) / N[0]) if N[0] > 0 else 0.0
    ratios = np.divide(N[1:], N[:-1], out=np.zeros(len(N) - 1), where=N[:-1] > 0)
    details = {
        "norms": N,
        "step_constants": A,
        "ratios": ratios,
        "counts": counts,
        "sobolev_constant": sobolev_constant,
        "center": list(center),
        "schedule": schedule.to_json(),
    }
    # relative roundoff allowance on each step
    return margin_report("moser_chain", margin, 1e-12 * N[1:], empirical_constant=C_hat, vacuous=vacuous, details=details)


def mean_value_constant(mesh: DomainMesh, u: np.ndarray, center, r: float) -> float | None:
    """sup_{B_r} u * r^(m/2) / ||u||_{L^2(B_2r)}; None when both sides vanish."""
    inner, outer = ball(mesh, center, r), ball(mesh, center, 2 * r)
    if min(inner.count, outer.count) < 1:
        raise ValueError("ball contains no nodes")
    sup = float(u[inner.mask].max())
    l2 = math.sqrt(float((u[outer.mask] ** 2).sum() * mesh.weight))
    if l2 == 0.0:
        if sup > 0:
            raise ValueError("sup > 0 with vanishing L^2 mass: inconsistent data")
        return None
    return sup * r ** (mesh.dim / 2) / l2


def mean_value_check(
    mesh: DomainMesh, u: np.ndarray, centers, radii, stability: float = 2.0
) -> InequalityReport:
    """Empirical mean-value constants over (center, radius) pairs.

    An item passes when its constant is within ``stability`` times the
    smallest one, which is the boundedness-and-stability contract.
    """
    u = np.asarray(u, dtype=float)
    centers = [mesh.check_node(c) for c in centers]
    radii = [float(r) for r in radii]
    for i, a in enumerate(centers):
        for b in centers[i + 1:]:
            if torus_distance(mesh, a, b) < 4 * max(radii):
                raise ValueError("balls B_2r around distinct centers must be disjoint")
    table = []
    for c in centers:
        for r in radii:
            table.append((c, r, mean_value_constant(mesh, u, c, r)))
    values = np.array([v for _, _, v in table if v is not None])
    details = {"table": [{"center": list(c), "r": r, "c_hat": v} for c, r, v in table], "stability": stability}
    if values.size == 0:
        return margin_report("mean_value", np.zeros(0), details=details)
    lo, hi = float(values.min()), float(values.max())
    details["spread"] = hi / lo if lo > 0 else math.inf
    return margin_report("mean_value", stability * lo - values, 0.0, empirical_constant=hi, details=details)


def epsilon_regularity_check(
    phi: MapField, center, r: float, eps0: float, tau: np.ndarray | None = None
) -> InequalityReport:
    """Small-energy sup bound: if int_{B_r}|dphi|^m <= eps0, report
    c' = sup_{B_{r/2}} |tau|^2 r^m / int_{B_r} |tau|^2 (finite when the data are consistent)."""
    mesh, target = phi.mesh, phi.target
    m = mesh.dim
    outer, inner = ball(mesh, center, r), ball(mesh, center, r / 2)
    if inner.count < 1:
        raise ValueError(f"radius {r} not resolvable: B_(r/2) has no nodes")
    sq = edge_energy_sq(mesh, target, phi.values)
    local_energy = float((sq[outer.mask] ** (m / 2)).sum() * mesh.weight)
    details = {"local_energy": local_energy, "eps0": eps0, "r": r, "center": list(center)}
    if local_energy > eps0:
        report = margin_report("epsilon_regularity", np.zeros(0), details=details)
        report.status = "hypothesis_not_met"
        report.vacuous = True
        return report
    if tau is None:
        tau = tension_array(mesh, target, phi.values)
    tsq = np.maximum(target.sqnorm(tau), 0.0)
    sup = float(tsq[inner.mask].max())
    mass = float(tsq[outer.mask].sum() * mesh.weight)
    if mass == 0.0 and sup > 0:
        raise ValueError("sup |tau| > 0 with vanishing local bienergy: inconsistent data")
    if sup <= VACUOUS_SUP**2:
        # tension at roundoff: the ratio would only measure noise
        details.update({"sup_tau_sq": sup, "local_tau_mass": mass})
        return margin_report("epsilon_regularity", np.zeros(1), vacuous=True, details=details)
    c = sup * r**m / mass
    details.update({"sup_tau_sq": sup, "local_tau_mass": mass})
    return margin_report("epsilon_regularity", np.array([0.0 if np.isfinite(c) else -1.0]), empirical_constant=c,
                         details=details)
