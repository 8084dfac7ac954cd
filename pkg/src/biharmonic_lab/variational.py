"""Energy, bienergy, first-variation checks and retraction-based gradient flows."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .calculus import (
    MapField,
    Section,
    bitension_array,
    edge_energy_sq,
    tension_array,
)
from .mesh import DomainMesh, integrate, laplacian_symbol
from .space_forms import OffModelError

FLOW_KINDS = ("harmonic", "biharmonic")
PRECONDITIONERS = ("none", "sobolev")
METHODS = ("descent", "cg")


def energy(phi: MapField) -> float:
    return 0.5 * integrate(phi.mesh, edge_energy_sq(phi.mesh, phi.target, phi.values))


def bienergy(phi: MapField) -> float:
    tau = tension_array(phi.mesh, phi.target, phi.values)
    return 0.5 * integrate(phi.mesh, phi.target.sqnorm(tau))


@dataclass(frozen=True)
class FirstVariation:
    energy_residual: float
    bienergy_residual: float
    energy_derivative: float
    bienergy_derivative: float


def first_variation_check(phi: MapField, V: Section, eps: float) -> FirstVariation:
    """Compare centered differences of E and E2 along project(phi + tV) with -int <tau, V>, -int <tau2, V>."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if V.base is not phi and not np.array_equal(V.base.values, phi.values):
        raise ValueError("V must be a section along phi")
    mesh, target = phi.mesh, phi.target
    plus = phi.with_values(target.project_point(phi.values + eps * V.values))
    minus = phi.with_values(target.project_point(phi.values - eps * V.values))
    dE = (energy(plus) - energy(minus)) / (2 * eps)
    dE2 = (bienergy(plus) - bienergy(minus)) / (2 * eps)
    tau = tension_array(mesh, target, phi.values)
    tau2 = bitension_array(mesh, target, phi.values, tau)
    predicted_E = -integrate(mesh, target.inner(tau, V.values))
    predicted_E2 = -integrate(mesh, target.inner(tau2, V.values))
    return FirstVariation(abs(dE - predicted_E), abs(dE2 - predicted_E2), dE, dE2)


def stable_dt(mesh: DomainMesh, kind: str, preconditioner: str = "none") -> float:
    """Largest explicit step that keeps the top grid mode from growing, with 5% margin."""
    if preconditioner == "sobolev":
        return 1.9
    lam = sum(4.0 / h**2 for h in mesh.spacing)
    if kind == "harmonic":
        return 1.9 / lam
    if kind == "biharmonic":
        return 1.9 / lam**2
    raise ValueError(f"unknown flow kind {kind!r}")


@dataclass(frozen=True)
class FlowConfig:
    kind: str = "harmonic"
    dt: float = 1e-3
    max_steps: int = 1000
    tol: float = 1e-6
    line_search: bool = True
    seed: int = 0
    dt_max: float | None = None
    min_dt: float = 1e-16
    preconditioner: str = "none"
    method: str = "descent"

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"flow kind must be one of {FLOW_KINDS}, got {self.kind!r}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}, got {self.preconditioner!r}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")

    @property
    def dt_cap(self) -> float:
        return self.dt if self.dt_max is None else self.dt_max

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "FlowConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


TRACE_HEADER = ("step", "E", "E2", "tau_sup", "tau2_sup", "dt")


@dataclass
class FlowTrace:
    rows: list[tuple] = field(default_factory=list)
    status: str = "running"
    rejected: int = 0

    def append(self, step, E, E2, tau_sup, tau2_sup, dt):
        self.rows.append((int(step), float(E), float(E2), float(tau_sup), float(tau2_sup), float(dt)))

    def column(self, name: str) -> np.ndarray:
        return np.array([r[TRACE_HEADER.index(name)] for r in self.rows])

    def objective(self, kind: str) -> np.ndarray:
        return self.column("E" if kind == "harmonic" else "E2")

    @property
    def steps(self) -> int:
        return len(self.rows) - 1 if self.rows else 0


class FlowUnderflowError(RuntimeError):
    """The line search shrank dt below ``min_dt`` without decreasing the objective."""

    def __init__(self, message, phi, trace):
        super().__init__(message)
        self.phi = phi
        self.trace = trace


class SobolevPreconditioner:
    """Apply (mu + L^p)^(-1) per component, L = -Lap (p=1 harmonic, p=2 biharmonic).

    mu is the smallest nonzero eigenvalue of L^p, so the preconditioned
    operator has spectrum in (0, 1] for flat targets and dt = O(1) is stable.
    """

    def __init__(self, mesh: DomainMesh, kind: str):
        lam = laplacian_symbol(mesh)
        power = 1 if kind == "harmonic" else 2
        sym = lam**power
        mu = float(sym[sym > 1e-12 * sym.max()].min())
        self.inv = 1.0 / (mu + sym)
        self.axes = tuple(range(mesh.dim))

    def __call__(self, field: np.ndarray) -> np.ndarray:
        spec = np.fft.fftn(field, axes=self.axes)
        return np.fft.ifftn(spec * self.inv[..., None], axes=self.axes).real


class _State:
    """Map values with the derived quantities the flow needs, computed once."""

    def __init__(self, mesh, target, values, kind, free, precondition=None):
        self.values = values
        self.tau = tension_array(mesh, target, values)
        sq = edge_energy_sq(mesh, target, values)
        self.E = 0.5 * integrate(mesh, sq)
        self.E2 = 0.5 * integrate(mesh, target.sqnorm(self.tau))
        self.tau2 = bitension_array(mesh, target, values, self.tau, sq)
        self.gradient = (self.tau if kind == "harmonic" else self.tau2) * free[..., None]
        if precondition is None:
            self.search = self.gradient
        else:
            self.search = target.project_tangent(values, precondition(self.gradient), checked=True) * free[..., None]
        self.objective = self.E if kind == "harmonic" else self.E2
        norm = lambda f: np.sqrt(np.maximum(target.sqnorm(f), 0.0))
        self.tau_sup = float((norm(self.tau) * free).max())
        self.tau2_sup = float((norm(self.tau2) * free).max())
        self.residual = self.tau_sup if kind == "harmonic" else self.tau2_sup


def _pair(target, a, b) -> float:
    return float(target.inner(a, b).sum())


def run_flow(phi0: MapField, cfg: FlowConfig, pinned: np.ndarray | None = None):
    """Gradient descent of E (direction tau) or E2 (direction tau2) with projection retraction.

    With ``preconditioner="sobolev"`` the direction is P M(tau) or P M(tau2)
    for a positive Fourier multiplier M; it is still a descent direction and
    has the same zeros, so the fixed points and the stopping test are unchanged.
    ``method="cg"`` adds a Polak-Ribiere+ conjugate term (old direction moved
    by tangent projection, restart when not a descent direction) and refines
    each trial step by one quadratic interpolation along the search line.

    ``pinned`` marks nodes whose values stay fixed; residuals are measured on
    the free nodes only.  Returns ``(phi, trace)``.
    """
    mesh, target = phi0.mesh, phi0.target
    free = np.ones(mesh.shape) if pinned is None else (~np.asarray(pinned, dtype=bool)).astype(float)
    pre = SobolevPreconditioner(mesh, cfg.kind) if cfg.preconditioner == "sobolev" else None
    cg = cfg.method == "cg"

    def trial(values, direction, t):
        try:
            return _State(mesh, target, target.project_point(values + t * direction), cfg.kind, free, pre)
        except OffModelError:
            return None

    state = _State(mesh, target, phi0.values, cfg.kind, free, pre)
    direction = state.search
    trace = FlowTrace()
    dt = cfg.dt
    trace.append(0, state.E, state.E2, state.tau_sup, state.tau2_sup, 0.0)
    streak = 0
    step = 0
    while True:
        if state.residual <= cfg.tol:
            trace.status = "converged"
            break
        if step >= cfg.max_steps:
            trace.status = "max_steps"
            break
        slope = mesh.weight * _pair(target, state.gradient, direction)
        while True:
            cand = trial(state.values, direction, dt)
            if cand is not None and cg:
                curv = 2.0 * (cand.objective - state.objective + slope * dt) / dt**2
                if curv > 0:
                    t_star = min(slope / curv, 1e3 * dt)
                    better = trial(state.values, direction, t_star)
                    if better is not None and better.objective < cand.objective:
                        cand, dt = better, t_star
            if cand is not None and (not cfg.line_search or cand.objective < state.objective):
                break
            trace.rejected += 1
            streak = 0
            dt *= 0.5
            if dt < cfg.min_dt:
                trace.status = "underflow"
                phi = phi0.with_values(state.values)
                raise FlowUnderflowError(f"dt fell below {cfg.min_dt} at step {step}", phi, trace)
        step += 1
        if cg:
            beta = _pair(target, cand.search, cand.gradient - state.gradient) / _pair(target, state.search, state.gradient)
            moved = target.project_tangent(cand.values, direction, checked=True) * free[..., None]
            direction = cand.search + max(beta, 0.0) * moved
            if _pair(target, direction, cand.gradient) <= 0:
                direction = cand.search
        else:
            direction = cand.search
        state = cand
        trace.append(step, state.E, state.E2, state.tau_sup, state.tau2_sup, dt)
        streak += 1
        if cfg.line_search and streak >= 5 and not cg:
            dt = min(1.5 * dt, cfg.dt_cap)
            streak = 0
    return phi0.with_values(state.values), trace
