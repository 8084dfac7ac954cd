"""Concentrating map sequences, their energy measures, and atom extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calculus import MapField, edge_energy_sq, tension_array
from .mesh import DomainMesh, torus_distance
from .reports import InequalityReport, margin_report
from .space_forms import SpaceForm

DEFAULT_EPS0 = 1.0
ATOM_TOL = 1e-9  # relative, for the nonnegativity of atom weights


@dataclass
class DiscreteMeasure:
    """Density against node weights plus Dirac atoms at nodes."""

    mesh: DomainMesh
    density: np.ndarray = field(repr=False)
    atoms: list = field(default_factory=list)

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=float)
        if self.density.shape != self.mesh.shape:
            raise ValueError(f"density has shape {self.density.shape}, expected {self.mesh.shape}")
        if np.any(self.density < 0) or not np.all(np.isfinite(self.density)):
            raise ValueError("density must be finite and nonnegative")
        self.atoms = [(self.mesh.check_node(x), float(a)) for x, a in self.atoms]
        if any(a < 0 or not math.isfinite(a) for _, a in self.atoms):
            raise ValueError("atom weights must be finite and nonnegative")

    @property
    def density_mass(self) -> float:
        return float(self.density.sum() * self.mesh.weight)

    @property
    def atom_mass(self) -> float:
        return float(sum(a for _, a in self.atoms))

    @property
    def total_mass(self) -> float:
        return self.density_mass + self.atom_mass

    def pair(self, psi: np.ndarray) -> float:
        """Integral of the test function ``psi`` against the measure."""
        psi = np.asarray(psi, dtype=float)
        return float((psi * self.density).sum() * self.mesh.weight + sum(a * psi[x] for x, a in self.atoms))

    def to_json(self, density_csv: str) -> dict:
        return {
            "density_csv": density_csv,
            "mesh": self.mesh.to_json(),
            "atoms": [{"node": list(x), "weight": a} for x, a in self.atoms],
        }


def energy_measure(phi: MapField) -> DiscreteMeasure:
    """|dphi|^m v_g with the edge energy density, m the domain dimension."""
    sq = edge_energy_sq(phi.mesh, phi.target, phi.values)
    return DiscreteMeasure(phi.mesh, sq ** (phi.mesh.dim / 2))


@dataclass
class MapSequence:
    """Maps on one mesh and target, with measured uniform bounds on the m-energy and bienergy."""

    maps: list
    kind: str = "custom"
    scales: tuple = ()
    centers: tuple = ()
    metadata: dict = field(default_factory=dict)
    energy_bound: float = field(init=False)
    bienergy_bound: float = field(init=False)

    def __post_init__(self):
        if not self.maps:
            raise ValueError("empty map sequence")
        mesh, target = self.mesh, self.target
        for phi in self.maps:
            if phi.mesh != mesh or phi.target != target:
                raise ValueError("all members must share mesh and target")
        self.scales = tuple(float(s) for s in self.scales)
        self.centers = tuple(tuple(int(i) for i in c) for c in self.centers)
        self._measures = [energy_measure(phi) for phi in self.maps]
        self.energy_bound = max(mu.total_mass for mu in self._measures)
        bienergy = [0.5 * float(target.sqnorm(tension_array(mesh, target, phi.values)).sum()) * mesh.weight
                    for phi in self.maps]
        self.bienergy_bound = max(bienergy)

    @property
    def mesh(self) -> DomainMesh:
        return self.maps[0].mesh

    @property
    def target(self) -> SpaceForm:
        return self.maps[0].target

    def __len__(self) -> int:
        return len(self.maps)

    def measure(self, j: int) -> DiscreteMeasure:
        return self._measures[j]

    @property
    def tail(self) -> range:
        """Indices of the last half of the sequence."""
        return range(len(self) // 2, len(self))

    def check_bounds(self, C: float) -> None:
        if self.energy_bound > C or 2 * self.bienergy_bound > C:
            raise ValueError(f"sequence exceeds the bound C={C}: energy {self.energy_bound}, "
                             f"bienergy integral {2 * self.bienergy_bound}")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "scales": list(self.scales),
            "centers": [list(c) for c in self.centers],
            "mesh": self.mesh.to_json(),
            "target": self.target.to_json(),
            "energy_bound": self.energy_bound,
            "bienergy_bound": self.bienergy_bound,
            "metadata": self.metadata,
        }


def _cutoff_weight(r, R1: float, R2: float):
    """1 on [0, R1], smoothstep down to 0 at R2."""
    t = np.clip((np.asarray(r, dtype=float) - R1) / (R2 - R1), 0.0, 1.0)
    return 1.0 - t * t * (3.0 - 2.0 * t)


def _cutoff_slope(r, R1: float, R2: float):
    inside = (r > R1) & (r < R2)
    t = np.clip((np.asarray(r, dtype=float) - R1) / (R2 - R1), 0.0, 1.0)
    return np.where(inside, -6.0 * t * (1.0 - t) / (R2 - R1), 0.0)


def bubble_profile(r, lam: float, annulus: tuple, degree: int = 1):
    """Polar angle theta(r) from the north pole of the glued bubble.

    Inverse stereographic projection of (x/(lam psi(r)))^degree, where the
    cutoff psi drops from 1 to 0 across the annulus.  Dividing by psi rather
    than blending theta keeps the gluing nearly conformal, so the energy
    excess over 8 pi degree is small once lam << R1.
    """
    R1, R2 = annulus
    r = np.asarray(r, dtype=float)
    psi = _cutoff_weight(r, R1, R2)
    # theta = 2 atan(w), w = (r / (lam psi))^d, written to stay finite as psi -> 0
    num = r**degree
    den = (lam * psi) ** degree
    return 2.0 * np.arctan2(num, den)


def bubble_energy_oracle(lam: float, annulus: tuple, degree: int = 1) -> float:
    """Continuum Dirichlet energy of the glued bubble by radial quadrature."""
    from scipy.integrate import quad

    R1, R2 = annulus
    d = degree

    def density(r):
        psi = float(_cutoff_weight(r, R1, R2))
        dpsi = float(_cutoff_slope(r, R1, R2))
        a, b = r**d, (lam * psi) ** d
        # theta = 2 atan2(a, b); theta' = 2 (a' b - a b') / (a^2 + b^2)
        da = d * r ** (d - 1)
        db = d * lam**d * psi ** (d - 1) * dpsi if psi > 0 else 0.0
        denom = a * a + b * b
        theta_r = 2.0 * (da * b - a * db) / denom
        sin_theta = 2.0 * a * b / denom
        return 2.0 * math.pi * r * (theta_r**2 + (d * sin_theta / r) ** 2) if r > 0 else 0.0

    points = sorted({min(lam, R1), R1})
    inner = quad(density, 0.0, R1, points=[p for p in points if 0 < p < R1], limit=400, epsabs=1e-13, epsrel=1e-12)[0]
    outer = quad(density, R1, R2, limit=400, epsabs=1e-13, epsrel=1e-12)[0]
    return inner + outer


def bubble_mass_within_oracle(R: float, lam: float, degree: int = 1) -> float:
    """Energy of the unglued bubble inside B_R: 8 pi |d| R^2d / (R^2d + lam^2d)."""
    return 8.0 * math.pi * abs(degree) * R ** (2 * degree) / (R ** (2 * degree) + lam ** (2 * degree))


def _glued_values(mesh: DomainMesh, centers, lam: float, annulus: tuple, degree: int) -> np.ndarray:
    values = np.zeros((*mesh.shape, 3))
    values[..., 2] = -1.0
    for c in centers:
        disp = mesh.displacement_field(c)
        r = np.sqrt((disp**2).sum(axis=-1))
        inside = r < annulus[1]
        theta = bubble_profile(r, lam, annulus, degree)
        alpha = degree * np.arctan2(disp[..., 1], disp[..., 0])
        values[inside, 0] = (np.sin(theta) * np.cos(alpha))[inside]
        values[inside, 1] = (np.sin(theta) * np.sin(alpha))[inside]
        values[inside, 2] = np.cos(theta)[inside]
    return values


def default_annulus(mesh: DomainMesh, centers) -> tuple:
    """R2 at 95% of the largest radius keeping the glued discs disjoint, R1 = R2/2."""
    reach = 0.5 * min(mesh.periods)
    for i, a in enumerate(centers):
        for b in centers[i + 1:]:
            reach = min(reach, 0.5 * torus_distance(mesh, a, b))
    R2 = 0.95 * reach
    return (0.5 * R2, R2)


def bubble_sequence(
    mesh: DomainMesh,
    target: SpaceForm,
    center,
    scales,
    degree: int = 1,
    annulus: tuple | None = None,
) -> MapSequence:
    """Degree-``degree`` bubbles of shrinking scale glued into the constant south-pole map.

    ``center`` is one node or a list of nodes (one bubble each, same scale).
    Outside the annulus around each center the map is the south pole, so
    the map is periodic and the sequence converges to that constant away
    from the centers.
    """
    if mesh.dim != 2:
        raise ValueError("the bubble generator lives on a 2-torus")
    if target.kappa != 1 or target.n != 2:
        raise ValueError("the bubble generator needs the round S^2 target")
    if int(degree) != degree or degree < 1:
        raise ValueError(f"degree must be a positive integer, got {degree}")
    scales = [float(s) for s in scales]
    if not scales or any(s <= 0 for s in scales):
        raise ValueError("scales must be positive")
    if any(s > 1 for s in scales) or any(b >= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be strictly decreasing in (0, 1]")
    centers = [mesh.check_node(center)] if np.ndim(center) == 1 else [mesh.check_node(c) for c in center]
    if annulus is None:
        annulus = default_annulus(mesh, centers)
    R1, R2 = (float(x) for x in annulus)
    if not 0 < R1 < R2:
        raise ValueError(f"need 0 < R1 < R2, got {annulus}")
    if R2 >= 0.5 * min(mesh.periods):
        raise ValueError("annulus must fit inside half a period")
    for i, a in enumerate(centers):
        for b in centers[i + 1:]:
            if torus_distance(mesh, a, b) < 2 * R2:
                raise ValueError("glued discs of distinct bubbles overlap")
    maps = [MapField(mesh, target, _glued_values(mesh, centers, lam, (R1, R2), degree)) for lam in scales]
    meta = {"degree": int(degree), "annulus": [R1, R2]}
    return MapSequence(maps, "bubble", tuple(scales), tuple(centers), meta)


def south_pole_map(mesh: DomainMesh, target: SpaceForm) -> MapField:
    return MapField.constant(mesh, target, [0.0, 0.0, -1.0])


def ball_offsets(mesh: DomainMesh, r: float) -> list[tuple[int, ...]]:
    """Integer offsets of the open ball of radius r about a node (r below half a period)."""
    if not 0 < r < 0.5 * min(mesh.periods):
        raise ValueError(f"ball radius must lie in (0, half a period), got {r}")
    spans = [range(-int(r / h), int(r / h) + 1) for h in mesh.spacing]
    grids = np.meshgrid(*[np.array(s) for s in spans], indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=-1)
    dist = np.sqrt(((offs * np.array(mesh.spacing)) ** 2).sum(axis=-1))
    return [tuple(int(i) for i in o) for o in offs[dist < r]]


def ball_masses(mesh: DomainMesh, density: np.ndarray, r: float) -> np.ndarray:
    """int_{B_r(x)} density for every node x, by a fixed-order sum of shifted copies."""
    out = np.zeros(mesh.shape)
    axes = tuple(range(mesh.dim))
    for off in ball_offsets(mesh, r):
        out += np.roll(density, tuple(-o for o in off), axis=axes)
    return out * mesh.weight


@dataclass
class ConcentrationSet:
    nodes: list
    scores: list
    eps0: float
    radii: tuple
    energy_bound: float

    @property
    def cardinality_bound(self) -> int:
        return math.ceil(self.energy_bound / self.eps0)

    @property
    def bound_holds(self) -> bool:
        return len(self.nodes) <= self.cardinality_bound

    def to_json(self) -> dict:
        return {
            "nodes": [list(x) for x in self.nodes],
            "scores": list(self.scores),
            "eps0": self.eps0,
            "radii": list(self.radii),
            "energy_bound": self.energy_bound,
            "cardinality_bound": self.cardinality_bound,
            "bound_holds": self.bound_holds,
        }


def detect_concentration(seq: MapSequence, eps0: float = DEFAULT_EPS0, radii=(0.25, 0.5)) -> ConcentrationSet:
    """Nodes whose r-ball mass stays >= eps0 over the last half of the sequence for every r.

    Candidates are thinned by non-maximum suppression: a node is kept only
    if no kept node with a larger tail-min mass (ties broken by node index)
    lies within 2 min(radii).  Kept balls of radius min(radii) are then
    disjoint, each carries mass >= eps0, so at most C/eps0 nodes survive.
    """
    if len(seq) == 0:
        raise ValueError("empty map sequence")
    if not eps0 > 0:
        raise ValueError(f"eps0 must be positive, got {eps0}")
    radii = tuple(sorted(float(r) for r in radii))
    if not radii:
        raise ValueError("need at least one radius")
    mesh = seq.mesh
    if radii[0] <= mesh.h_max:
        raise ValueError(f"radius {radii[0]} is not resolved by spacing {mesh.h_max}")
    ok = np.ones(mesh.shape, dtype=bool)
    score = None
    for r in radii:
        tail = np.min([ball_masses(mesh, seq.measure(j).density, r) for j in seq.tail], axis=0)
        ok &= tail >= eps0
        if score is None:
            score = tail
    cand = np.argwhere(ok)
    order = sorted(range(len(cand)), key=lambda i: (-score[tuple(cand[i])], tuple(cand[i])))
    kept, kept_scores = [], []
    for i in order:
        x = tuple(int(v) for v in cand[i])
        if all(torus_distance(mesh, x, y) >= 2 * radii[0] for y in kept):
            kept.append(x)
            kept_scores.append(float(score[x]))
    return ConcentrationSet(kept, kept_scores, float(eps0), radii, seq.energy_bound)


@dataclass
class Decomposition:
    measure: DiscreteMeasure
    rho: float
    last_iterate: list
    extrapolated: list
    traces: list

    def to_json(self, density_csv: str) -> dict:
        return {
            "measure": self.measure.to_json(density_csv),
            "rho": self.rho,
            "last_iterate": self.last_iterate,
            "extrapolated": self.extrapolated,
            "traces": self.traces,
        }


def _richardson(seq: MapSequence, m_prev: float, m_last: float) -> float:
    """Two-point extrapolation assuming the ball deficit decays like lambda^2."""
    if len(seq.scales) < 2:
        return m_last
    l1, l2 = seq.scales[-2], seq.scales[-1]
    return (l1 * l1 * m_last - l2 * l2 * m_prev) / (l1 * l1 - l2 * l2)


def measure_decompose(
    seq: MapSequence,
    S,
    phi_inf: MapField,
    rho: float | None = None,
) -> Decomposition:
    """mu-hat = |dphi_inf|^m v_g + sum_k a_k delta_{x_k}.

    a_k is the excess of ball mass int_{B_rho(x_k)} (|dphi_j|^m - |dphi_inf|^m)
    extrapolated to j -> infinity from the last two members.  The default
    rho is 8 * (max scale in the last half), clamped below half the smallest
    distance between points of S.
    """
    nodes = list(S.nodes) if isinstance(S, ConcentrationSet) else [seq.mesh.check_node(x) for x in S]
    mesh = seq.mesh
    if phi_inf.mesh != mesh:
        raise ValueError("limit map must live on the sequence mesh")
    sep = min((torus_distance(mesh, a, b) for i, a in enumerate(nodes) for b in nodes[i + 1:]), default=math.inf)
    if rho is None:
        scales = [seq.scales[j] for j in seq.tail] if seq.scales else [mesh.h_max]
        rho = 8.0 * max(scales)
        rho = min(rho, 0.49 * sep, 0.49 * min(mesh.periods))
    elif 2 * rho > sep:
        raise ValueError(f"concentration points closer than 2 rho = {2 * rho}")
    base = energy_measure(phi_inf)
    atoms, last, extra, traces = [], [], [], []
    if nodes:
        base_balls = ball_masses(mesh, base.density, rho)
        balls = [ball_masses(mesh, seq.measure(j).density, rho) for j in range(len(seq))]
        for x in nodes:
            trace = [float(b[x] - base_balls[x]) for b in balls]
            a = _richardson(seq, trace[-2], trace[-1]) if len(trace) > 1 else trace[-1]
            if a < -ATOM_TOL * max(1.0, abs(trace[-1])):
                raise ValueError(f"negative atom weight {a} at {x}")
            traces.append(trace)
            last.append(trace[-1])
            extra.append(float(a))
            atoms.append((x, max(float(a), 0.0)))
    mu = DiscreteMeasure(mesh, base.density, atoms)
    return Decomposition(mu, float(rho), last, extra, traces)


def band_limited_tests(mesh: DomainMesh, count: int, seed: int, kmax: int = 3) -> list[np.ndarray]:
    """Random trigonometric polynomials with |k| <= kmax, scaled to sup norm 1."""
    rng = np.random.default_rng(seed)
    x = mesh.coordinates()
    tests = []
    for _ in range(count):
        psi = np.zeros(mesh.shape)
        for k in np.ndindex(*([2 * kmax + 1] * mesh.dim)):
            k = np.array(k) - kmax
            phase = sum(2 * np.pi * k[a] * x[..., a] / mesh.periods[a] for a in range(mesh.dim))
            a, b = rng.normal(size=2) / (1.0 + (k**2).sum())
            psi += a * np.cos(phase) + b * np.sin(phase)
        tests.append(psi / np.abs(psi).max())
    return tests


def bump_test(mesh: DomainMesh, center, radius: float) -> np.ndarray:
    """Smooth bump exp(-1/(1-s^2)) e, s = d/radius, peak value 1 at ``center``."""
    s = mesh.distance_field(center) / radius
    out = np.zeros(mesh.shape)
    inside = s < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def weak_convergence_check(
    seq: MapSequence,
    decomposition: Decomposition,
    count: int = 8,
    seed: int = 0,
    extra_tests: dict | None = None,
) -> InequalityReport:
    """Residuals |int psi d(|dphi_j|^m v_g) - int psi d mu-hat| over the last half must decrease in j.

    The tested family is psi = 1, a bump at each atom, and ``count`` random
    band-limited functions, plus any ``extra_tests``.  An increase between
    consecutive members is tolerated only below the floor h^2 * mass(mu-hat).
    """
    mu = decomposition.measure
    mesh = seq.mesh
    tests = {"one": np.ones(mesh.shape)}
    for k, (x, _) in enumerate(mu.atoms):
        tests[f"bump_{k}"] = bump_test(mesh, x, decomposition.rho)
    for k, psi in enumerate(band_limited_tests(mesh, count, seed)):
        tests[f"random_{k}"] = psi
    tests.update(extra_tests or {})
    tail = list(seq.tail)
    if len(tail) < 2:
        tail = list(range(len(seq)))
    floor = mesh.h_max**2 * mu.total_mass
    names, margins, traces = [], [], {}
    target = {name: mu.pair(psi) for name, psi in tests.items()}
    for name, psi in tests.items():
        r = [abs(seq.measure(j).pair(psi) - target[name]) for j in tail]
        traces[name] = r
        names.append(name)
        margins.append(min((a - b for a, b in zip(r, r[1:])), default=0.0))
    details = {"tests": names, "traces": traces, "indices": tail, "floor": floor}
    return margin_report("weak_convergence", np.array(margins), floor, details=details)
