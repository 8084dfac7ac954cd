"""Machine-readable inequality reports and the h^2 tolerance calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

VACUOUS_SUP = 1e-13
MIN_ORDER = 1.8
SAFETY = 2.0


@dataclass
class InequalityReport:
    """Outcome of a nodewise (or per-ball) inequality check.

    ``worst_margin`` is measured in units where every item shares the
    tolerance ``tolerance``; so ``fraction == 1`` exactly when
    ``worst_margin >= -tolerance``.
    """

    name: str
    fraction: float
    worst_margin: float
    empirical_constant: float | None
    population: int
    tolerance: float
    vacuous: bool = False
    status: str = "checked"
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.fraction == 1.0

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "fraction": self.fraction,
            "worst_margin": self.worst_margin,
            "empirical_constant": self.empirical_constant,
            "population": self.population,
            "tolerance": self.tolerance,
            "vacuous": self.vacuous,
            "status": self.status,
            "details": _jsonable(self.details),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def margin_report(
    name: str,
    margin,
    tolerance=0.0,
    mask=None,
    empirical_constant: float | None = None,
    vacuous: bool = False,
    details: dict | None = None,
) -> InequalityReport:
    """Report for items that should satisfy ``margin >= -tolerance``.

    Tolerances may vary per item.  Margins are rescaled to the largest
    tolerance so the single-tolerance invariant of the report holds.
    """
    margin = np.asarray(margin, dtype=float)
    tol = np.broadcast_to(np.asarray(tolerance, dtype=float), margin.shape)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        margin, tol = margin[mask], tol[mask]
    margin, tol = margin.ravel(), tol.ravel()
    if np.any(tol < 0):
        raise ValueError("tolerances must be nonnegative")
    if margin.size == 0:
        return InequalityReport(name, 1.0, math.inf, empirical_constant, 0, 0.0, True, "empty", dict(details or {}))
    ok = margin >= -tol
    ref = float(tol.max())
    positive = tol > 0
    scaled = np.where(positive, margin * (ref / np.where(positive, tol, 1.0)), margin)
    # a failing zero-tolerance item must land strictly below -ref
    scaled = np.where(~positive & ~ok, np.minimum(margin - ref, np.nextafter(-ref, -np.inf)), scaled)
    worst = float(scaled.min())
    return InequalityReport(
        name,
        float(ok.mean()),
        worst,
        empirical_constant,
        int(margin.size),
        ref,
        bool(vacuous),
        "vacuous" if vacuous else "checked",
        dict(details or {}),
    )


@dataclass(frozen=True)
class Calibration:
    """Discretization constant K for a residual that should scale like h^2.

    ``coarse`` and ``fine`` are the normalized residual sizes sup|R| / scale
    on the two meshes; K = safety * max(coarse / h_c^2, fine / h_f^2).
    """

    K: float
    order: float
    coarse: float
    fine: float
    h_coarse: float
    h_fine: float

    @property
    def order_ok(self) -> bool:
        return self.order >= MIN_ORDER

    def to_json(self) -> dict:
        return {
            "K": self.K,
            "order": self.order,
            "coarse": self.coarse,
            "fine": self.fine,
            "h_coarse": self.h_coarse,
            "h_fine": self.h_fine,
        }


def observed_order(e_coarse: float, e_fine: float, ratio: float = 2.0) -> float:
    if e_fine == 0.0:
        return math.inf
    if e_coarse == 0.0:
        return -math.inf
    return math.log(e_coarse / e_fine) / math.log(ratio)


def calibrate(
    coarse: float, fine: float, h_coarse: float, h_fine: float, safety: float = SAFETY
) -> Calibration:
    if not h_coarse > h_fine > 0:
        raise ValueError(f"need h_coarse > h_fine > 0, got {h_coarse}, {h_fine}")
    K = safety * max(coarse / h_coarse**2, fine / h_fine**2)
    return Calibration(float(K), observed_order(coarse, fine, h_coarse / h_fine), float(coarse), float(fine),
                       float(h_coarse), float(h_fine))
