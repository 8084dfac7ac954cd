"""Periodic flat-torus grids: integration, balls, cutoffs and finite differences.

Fields live on the grid as numpy arrays whose leading ``m`` axes are the node
axes (row-major node order).  Scalar fields have shape ``mesh.shape``; vector
valued fields carry extra trailing axes, which every stencil here leaves alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MIN_RESOLUTION = 4


@dataclass(frozen=True)
class DomainMesh:
    """Uniform grid on the flat torus prod_a [0, L_a) with n_a nodes per axis."""

    periods: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        periods = tuple(float(p) for p in self.periods)
        resolution = tuple(int(n) for n in self.resolution)
        if len(periods) != len(resolution) or not periods:
            raise ValueError(
                f"periods and resolution must have equal positive length, got {len(periods)} and {len(resolution)}"
            )
        if any(p <= 0 for p in periods):
            raise ValueError(f"periods must be positive, got {periods}")
        if any(n < MIN_RESOLUTION for n in resolution):
            raise ValueError(f"every resolution entry must be >= {MIN_RESOLUTION}, got {resolution}")
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "resolution", resolution)

    @property
    def dim(self) -> int:
        return len(self.periods)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.periods, self.resolution))

    @property
    def h_max(self) -> float:
        return max(self.spacing)

    @property
    def h_min(self) -> float:
        return min(self.spacing)

    @property
    def weight(self) -> float:
        return math.prod(self.spacing)

    @property
    def volume(self) -> float:
        return math.prod(self.periods)

    @property
    def n_nodes(self) -> int:
        return math.prod(self.resolution)

    def refined(self, factor: int = 2) -> "DomainMesh":
        return DomainMesh(self.periods, tuple(factor * n for n in self.resolution))

    def coordinates(self) -> np.ndarray:
        """Node positions, shape ``(*shape, m)``."""
        axes = [np.arange(n) * h for n, h in zip(self.resolution, self.spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def node_position(self, node: Sequence[int]) -> np.ndarray:
        node = self.check_node(node)
        return np.array([i * h for i, h in zip(node, self.spacing)])

    def check_node(self, node: Sequence[int]) -> tuple[int, ...]:
        node = tuple(int(i) for i in node)
        if len(node) != self.dim:
            raise ValueError(f"node {node} does not have {self.dim} indices")
        if any(not 0 <= i < n for i, n in zip(node, self.resolution)):
            raise IndexError(f"node {node} outside resolution {self.resolution}")
        return node

    def nearest_node(self, point: Sequence[float]) -> tuple[int, ...]:
        return tuple(int(round(x / h)) % n for x, h, n in zip(point, self.spacing, self.resolution))

    def displacement_field(self, center: Sequence[int]) -> np.ndarray:
        """Shortest wrapped displacement from ``center`` to every node, shape ``(*shape, m)``."""
        center = self.check_node(center)
        comps = []
        for a, (n, h, L) in enumerate(zip(self.resolution, self.spacing, self.periods)):
            d = (np.arange(n) - center[a]) * h
            d = d - L * np.round(d / L)
            shape = [1] * self.dim
            shape[a] = n
            comps.append(np.broadcast_to(d.reshape(shape), self.shape))
        return np.stack(comps, axis=-1)

    def distance_field(self, center: Sequence[int]) -> np.ndarray:
        return np.sqrt((self.displacement_field(center) ** 2).sum(axis=-1))

    def to_json(self) -> dict:
        return {"dim": self.dim, "periods": list(self.periods), "resolution": list(self.resolution)}

    @classmethod
    def from_json(cls, data: dict) -> "DomainMesh":
        mesh = cls(tuple(data["periods"]), tuple(data["resolution"]))
        if "dim" in data and int(data["dim"]) != mesh.dim:
            raise ValueError(f"dim {data['dim']} does not match {mesh.dim} periods")
        return mesh


def build_mesh(m: int, periods: Sequence[float], resolution: Sequence[int]) -> DomainMesh:
    if m < 1:
        raise ValueError(f"dimension must be >= 1, got {m}")
    if len(periods) != m or len(resolution) != m:
        raise ValueError(f"expected {m} periods and resolutions, got {len(periods)} and {len(resolution)}")
    return DomainMesh(tuple(periods), tuple(resolution))


def torus_distance(mesh: DomainMesh, a: Sequence[int], b: Sequence[int]) -> float:
    a, b = mesh.check_node(a), mesh.check_node(b)
    total = 0.0
    for i, j, h, L in zip(a, b, mesh.spacing, mesh.periods):
        d = (j - i) * h
        d -= L * round(d / L)
        total += d * d
    return math.sqrt(total)


@dataclass(frozen=True, eq=False)
class BallRegion:
    center: tuple[int, ...]
    radius: float
    mask: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def members(self) -> list[tuple[int, ...]]:
        return [tuple(int(i) for i in idx) for idx in np.argwhere(self.mask)]


def ball(mesh: DomainMesh, center: Sequence[int], r: float) -> BallRegion:
    """Open metric ball ``{x : d(x, center) < r}``."""
    if r <= 0:
        raise ValueError(f"radius must be positive, got {r}")
    center = mesh.check_node(center)
    return BallRegion(center, float(r), mesh.distance_field(center) < r)


@dataclass(frozen=True, eq=False)
class CutoffField:
    values: np.ndarray = field(repr=False)
    rho1: float
    rho2: float
    center: tuple[int, ...]
    profile: str = "linear"

    @property
    def slope_bound(self) -> float:
        return 2.0 / (self.rho2 - self.rho1)


def _ramp(t: np.ndarray, profile: str) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    if profile == "linear":
        return 1.0 - t
    if profile == "smoothstep":
        return 1.0 - t * t * (3.0 - 2.0 * t)
    raise ValueError(f"unknown cutoff profile {profile!r}")


def cutoff(
    mesh: DomainMesh, center: Sequence[int], rho1: float, rho2: float, profile: str = "linear"
) -> CutoffField:
    """Radial cutoff equal to 1 on B_rho1 and 0 off B_rho2.

    The linear ramp has slope 1/(rho2 - rho1), the smoothstep 1.5/(rho2 - rho1);
    both sit under the 2/(rho2 - rho1) bound the iteration needs.
    """
    if not 0 < rho1 < rho2:
        raise ValueError(f"need 0 < rho1 < rho2, got rho1={rho1}, rho2={rho2}")
    center = mesh.check_node(center)
    dist = mesh.distance_field(center)
    values = _ramp((dist - rho1) / (rho2 - rho1), profile)
    return CutoffField(values, float(rho1), float(rho2), center, profile)


def _mask_of(region) -> np.ndarray | None:
    if region is None:
        return None
    if isinstance(region, BallRegion):
        return region.mask
    return np.asarray(region, dtype=bool)


def integrate(mesh: DomainMesh, f: np.ndarray, region: BallRegion | np.ndarray | None = None) -> float:
    """Node-weight quadrature of a scalar field, optionally restricted to a region."""
    f = np.asarray(f, dtype=float)
    if f.shape != mesh.shape:
        raise ValueError(f"field shape {f.shape} does not match mesh shape {mesh.shape}")
    mask = _mask_of(region)
    if mask is None:
        return float(f.sum() * mesh.weight)
    return float(f[mask].sum() * mesh.weight)


def central_difference(mesh: DomainMesh, f: np.ndarray, axis: int) -> np.ndarray:
    """Periodic central difference along grid axis ``axis``; trailing axes untouched."""
    h = mesh.spacing[axis]
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)


def second_difference(mesh: DomainMesh, f: np.ndarray, axis: int) -> np.ndarray:
    h = mesh.spacing[axis]
    return (np.roll(f, -1, axis=axis) - 2.0 * f + np.roll(f, 1, axis=axis)) / (h * h)


def mixed_difference(mesh: DomainMesh, f: np.ndarray, a: int, b: int) -> np.ndarray:
    """Second difference d_a d_b: the compact stencil on the diagonal, nested centrals off it."""
    if a == b:
        return second_difference(mesh, f, a)
    a, b = sorted((a, b))  # fixed order makes the result bitwise symmetric
    return central_difference(mesh, central_difference(mesh, f, a), b)


def scalar_gradient(mesh: DomainMesh, f: np.ndarray) -> np.ndarray:
    """Central-difference gradient, components along a new trailing axis."""
    return np.stack([central_difference(mesh, f, a) for a in range(mesh.dim)], axis=-1)


def scalar_divergence(mesh: DomainMesh, v: np.ndarray) -> np.ndarray:
    """Adjoint (up to sign) of :func:`scalar_gradient`; div(grad f) is the width-2 Laplacian."""
    return sum(central_difference(mesh, v[..., a], a) for a in range(mesh.dim))


def scalar_laplacian(mesh: DomainMesh, f: np.ndarray) -> np.ndarray:
    """Compact Laplacian sum_a (f(x+h e_a) - 2 f(x) + f(x-h e_a)) / h_a^2.

    Sign convention: Delta sin(x) = -sin(x).  Accepts trailing component axes.
    """
    return sum(second_difference(mesh, f, a) for a in range(mesh.dim))


def wide_laplacian(mesh: DomainMesh, f: np.ndarray) -> np.ndarray:
    return sum(central_difference(mesh, central_difference(mesh, f, a), a) for a in range(mesh.dim))


def laplacian_symbol(mesh: DomainMesh) -> np.ndarray:
    """Nonnegative Fourier symbol of -scalar_laplacian on the full (fftn) frequency grid."""
    freqs = [np.fft.fftfreq(n, d=1.0 / n) for n in mesh.resolution]
    grids = np.meshgrid(*freqs, indexing="ij")
    return sum(4.0 * np.sin(np.pi * k / n) ** 2 / h**2 for k, n, h in zip(grids, mesh.resolution, mesh.spacing))


def sobolev_exponent(m: int) -> float:
    if m < 3:
        raise ValueError(f"the Sobolev exponent 2m/(m-2) needs m >= 3, got m={m}")
    return 2.0 * m / (m - 2.0)


def _band_mask(mesh: DomainMesh, kmax: int) -> np.ndarray:
    freqs = [np.fft.fftfreq(n, d=1.0 / n) for n in mesh.resolution]
    grids = np.meshgrid(*freqs, indexing="ij")
    mask = np.ones(mesh.shape, dtype=bool)
    for k in grids:
        mask &= np.abs(k) <= kmax
    mask[(0,) * mesh.dim] = False
    return mask


def _h1_symbol(mesh: DomainMesh) -> np.ndarray:
    """Fourier symbol of 1 - div grad for the central-difference gradient."""
    symbol = np.ones(mesh.shape)
    freqs = [np.fft.fftfreq(n, d=1.0 / n) for n in mesh.resolution]
    grids = np.meshgrid(*freqs, indexing="ij")
    for k, h, L in zip(grids, mesh.spacing, mesh.periods):
        symbol = symbol + (np.sin(2 * np.pi * k * h / L) / h) ** 2
    return symbol


def sobolev_quotient(mesh: DomainMesh, f: np.ndarray) -> float:
    """(int |f|^gamma)^(2/gamma) / (int |grad f|^2 + int f^2), gamma = 2m/(m-2)."""
    gamma = sobolev_exponent(mesh.dim)
    num = integrate(mesh, np.abs(f) ** gamma) ** (2.0 / gamma)
    den = integrate(mesh, (scalar_gradient(mesh, f) ** 2).sum(axis=-1) + f * f)
    return num / den


def sobolev_trials(
    mesh: DomainMesh, trials: int, seed: int, kmax: int | None = None, ascent_steps: int = 40
) -> np.ndarray:
    """Per-trial Sobolev quotients of locally maximised band-limited zero-mean fields.

    Each trial draws random Fourier coefficients with |k_a| <= kmax and runs
    ``ascent_steps`` of the monotone fixed-point ascent
    f <- P (1 - div grad)^{-1} P (|f|^(gamma-2) f), P the band projector.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    gamma = sobolev_exponent(mesh.dim)
    if kmax is None:
        kmax = max(1, min(mesh.resolution) // 4)
    band = _band_mask(mesh, kmax)
    inv_symbol = np.where(band, 1.0 / _h1_symbol(mesh), 0.0)
    rng = np.random.default_rng(seed)
    out = np.empty(trials)
    for t in range(trials):
        coeffs = rng.standard_normal(mesh.shape) + 1j * rng.standard_normal(mesh.shape)
        f = np.fft.ifftn(np.where(band, coeffs, 0.0)).real
        for _ in range(ascent_steps):
            g = np.abs(f) ** (gamma - 2.0) * f
            f = np.fft.ifftn(np.fft.fftn(g) * inv_symbol).real
            f /= np.sqrt(np.mean(f * f))
        out[t] = sobolev_quotient(mesh, f)
    return out


def sobolev_constant_estimate(
    mesh: DomainMesh, trials: int, seed: int, kmax: int | None = None, ascent_steps: int = 40
) -> float:
    """Empirical lower bound for the best constant C in
    (int |f|^gamma)^(2/gamma) <= C (int |grad f|^2 + int f^2).

    The constant function is always included as a trial.
    """
    best = float(sobolev_trials(mesh, trials, seed, kmax, ascent_steps).max())
    return max(best, sobolev_quotient(mesh, np.ones(mesh.shape)))
