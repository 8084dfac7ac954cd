"""Simply connected space forms of curvature -1, 0, +1 in ambient coordinates.

The sphere S^n sits in R^(n+1), hyperbolic space H^n is the upper sheet of the
hyperboloid <q, q> = -1 in Minkowski space R^(1,n), and flat space is R^n.
All functions broadcast over leading axes; the ambient coordinate is the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MODEL_TOL = 1e-9


class OffModelError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceForm:
    kappa: int
    n: int

    def __post_init__(self):
        if self.kappa not in (-1, 0, 1):
            raise ValueError(f"kappa must be one of -1, 0, 1, got {self.kappa}")
        if self.n < 1:
            raise ValueError(f"target dimension must be positive, got {self.n}")

    @property
    def ambient_dim(self) -> int:
        return self.n if self.kappa == 0 else self.n + 1

    @property
    def curvature_bound(self) -> float:
        """Upper bound for the sectional curvature, clipped at zero."""
        return float(max(self.kappa, 0))

    def inner(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.kappa == -1:
            return (u[..., 1:] * v[..., 1:]).sum(axis=-1) - u[..., 0] * v[..., 0]
        return (u * v).sum(axis=-1)

    def sqnorm(self, u: np.ndarray) -> np.ndarray:
        return self.inner(u, u)

    def base_point(self) -> np.ndarray:
        q = np.zeros(self.ambient_dim)
        if self.kappa == 1:
            q[-1] = 1.0
        elif self.kappa == -1:
            q[0] = 1.0
        return q

    def constraint_residual(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.kappa == 0:
            return np.zeros(q.shape[:-1])
        res = np.abs(self.sqnorm(q) - float(self.kappa))
        if self.kappa == -1:
            res = np.where(q[..., 0] > 0, res, np.inf)
        return res

    def project_point(self, p: np.ndarray) -> np.ndarray:
        """Nearest model point; idempotent on the model."""
        p = np.asarray(p, dtype=float)
        if self.kappa == 0:
            return p.copy()
        if self.kappa == 1:
            norm = np.sqrt((p * p).sum(axis=-1, keepdims=True))
            if np.any(norm == 0):
                raise OffModelError("cannot project the zero vector onto the sphere")
            return p / norm
        sq = self.sqnorm(p)[..., None]
        if np.any(sq >= 0):
            raise OffModelError("hyperboloid projection needs a timelike vector")
        if np.any(p[..., 0] <= 0):
            raise OffModelError("vector points to the lower sheet of the hyperboloid")
        return p / np.sqrt(-sq)

    def check_point(self, q: np.ndarray) -> np.ndarray:
        """Return q if on-model within MODEL_TOL (re-projected), else raise."""
        q = np.asarray(q, dtype=float)
        if self.kappa == 0:
            return q
        worst = float(np.max(self.constraint_residual(q)))
        if worst > MODEL_TOL:
            raise OffModelError(f"point off the model by {worst:.3e} > {MODEL_TOL}")
        return self.project_point(q)

    def project_tangent(self, q: np.ndarray, W: np.ndarray, checked: bool = False) -> np.ndarray:
        """Orthogonal (model-form) projection of W onto T_q N."""
        W = np.asarray(W, dtype=float)
        if self.kappa == 0:
            return W.copy()
        if not checked:
            q = self.check_point(q)
        if self.kappa == 1:
            return W - self.inner(W, q)[..., None] * q
        return W + self.inner(W, q)[..., None] * q

    def tangency_residual(self, q: np.ndarray, V: np.ndarray) -> np.ndarray:
        if self.kappa == 0:
            return np.zeros(np.shape(V)[:-1])
        return np.abs(self.inner(q, V))

    def _check_tangent(self, q, *vectors, tol: float = MODEL_TOL):
        for V in vectors:
            worst = float(np.max(self.tangency_residual(q, V), initial=0.0))
            scale = max(1.0, float(np.max(np.abs(V), initial=0.0)))
            if worst > tol * scale:
                raise ValueError(f"vector not tangent at q (residual {worst:.3e})")

    def curvature_operator(self, q, X, Y, Z, check: bool = True) -> np.ndarray:
        """R(X, Y) Z = kappa (<Y, Z> X - <X, Z> Y)."""
        X, Y, Z = (np.asarray(v, dtype=float) for v in (X, Y, Z))
        if check:
            self._check_tangent(q, X, Y, Z)
        if self.kappa == 0:
            return np.zeros(np.broadcast_shapes(X.shape, Y.shape, Z.shape))
        return self.kappa * (self.inner(Y, Z)[..., None] * X - self.inner(X, Z)[..., None] * Y)

    def sectional_sign_certificate(self, q, V, W) -> np.ndarray:
        """h(R(V, W) W, V) = kappa (|V|^2 |W|^2 - <V, W>^2)."""
        V, W = np.asarray(V, dtype=float), np.asarray(W, dtype=float)
        return self.kappa * (self.sqnorm(V) * self.sqnorm(W) - self.inner(V, W) ** 2)

    def random_point(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        """Random model point: exponential-ish image of a Gaussian tangent vector at the base point."""
        if self.kappa == 0:
            return scale * rng.standard_normal(self.n)
        if self.kappa == 1:
            return self.project_point(rng.standard_normal(self.ambient_dim))
        v = scale * rng.standard_normal(self.n)
        r = np.sqrt((v**2).sum())
        q = np.zeros(self.ambient_dim)
        q[0] = np.cosh(r)
        if r > 0:
            q[1:] = np.sinh(r) * v / r
        return q

    def random_tangent(self, rng: np.random.Generator, q: np.ndarray) -> np.ndarray:
        return self.project_tangent(q, rng.standard_normal(self.ambient_dim))

    def to_json(self) -> dict:
        return {"kappa": self.kappa, "n": self.n}

    @classmethod
    def from_json(cls, data: dict) -> "SpaceForm":
        return cls(int(data["kappa"]), int(data["n"]))


def sphere(n: int = 2) -> SpaceForm:
    return SpaceForm(1, n)


def hyperbolic(n: int = 2) -> SpaceForm:
    return SpaceForm(-1, n)


def euclidean(n: int = 2) -> SpaceForm:
    return SpaceForm(0, n)
