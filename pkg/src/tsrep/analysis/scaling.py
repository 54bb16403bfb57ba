"""Power-law fits y = C * N^-alpha (+ L0) and weighted exponents."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

ALPHA_STARTS = (0.01, 0.05, 0.1, 0.3, 0.7)


@dataclass
class FitResult:
    C: float
    alpha: float
    L0: float
    r_squared: float
    model: str  # "pure_power" | "power_plus_floor"
    converged: bool = True
    degenerate: bool = False

    def predict(self, n) -> np.ndarray:
        return self.C * np.asarray(n, dtype=np.float64) ** (-self.alpha) + self.L0

    def row(self) -> dict:
        return {
            "C": self.C,
            "alpha": self.alpha,
            "L0": self.L0,
            "r_squared": self.r_squared,
            "model": self.model,
            "converged": int(self.converged),
            "degenerate": int(self.degenerate),
        }


def _c_given(u, y, alpha) -> float:
    """Least-squares C >= 0 for a fixed exponent (C enters linearly)."""
    basis = u ** (-alpha)
    return max(float(basis @ y / (basis @ basis)), 1e-12)


def fit_power_law(n: Sequence[float], y: Sequence[float], with_floor: bool = True) -> FitResult:
    """Nonlinear least squares in y-space with multi-start initialization.

    Starts combine alpha in ALPHA_STARTS with L0 in {0, min(y)/2}; C is
    solved linearly for each start, then all three parameters are polished
    jointly with L0 >= 0. The lowest residual wins.
    """
    n = np.asarray(n, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    need = 4 if with_floor else 3
    if n.shape != y.shape or n.ndim != 1:
        raise ValueError("N and y must be 1-D and of equal length")
    if len(n) < need:
        raise ValueError(f"{'floor' if with_floor else 'pure'} power law needs at least {need} points")
    if not (n > 0).all() or not (np.diff(n) > 0).all():
        raise ValueError("N must be strictly positive and increasing")
    if not (y > 0).all():
        raise ValueError("y must be positive")
    model = "power_plus_floor" if with_floor else "pure_power"
    if np.ptp(y) == 0.0:
        return FitResult(float(y[0]), 0.0, 0.0, 1.0, model, True, True)

    # work with N scaled to ~1 for conditioning; C is rescaled at the end
    scale = float(np.exp(np.mean(np.log(n))))
    u = n / scale

    def residual(p):
        c, a = p[0], p[1]
        l0 = p[2] if with_floor else 0.0
        return c * u ** (-a) + l0 - y

    def jac(p):
        c, a = p[0], p[1]
        b = u ** (-a)
        cols = [b, -c * b * np.log(u)]
        if with_floor:
            cols.append(np.ones_like(u))
        return np.stack(cols, 1)

    lower = [0.0, -np.inf] + ([0.0] if with_floor else [])
    upper = [np.inf, np.inf] + ([np.inf] if with_floor else [])
    best, best_cost, any_ok = None, np.inf, False
    floors = (0.0, float(y.min()) / 2) if with_floor else (0.0,)
    for a0 in ALPHA_STARTS:
        for l0 in floors:
            p0 = [_c_given(u, y - l0, a0), a0] + ([l0] if with_floor else [])
            try:
                res = least_squares(residual, p0, jac=jac, bounds=(lower, upper), xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
            except ValueError:
                continue
            cost = float(np.sum(res.fun**2))
            any_ok |= bool(res.success)
            if cost < best_cost:
                best, best_cost = res, cost
    if best is None:
        return FitResult(float("nan"), float("nan"), float("nan"), float("nan"), model, False, False)
    c, a = float(best.x[0]), float(best.x[1])
    l0 = float(best.x[2]) if with_floor else 0.0
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - best_cost / ss_tot
    return FitResult(c * scale**a, a, l0, r2, model, any_ok and np.isfinite(a), False)


def weighted_alpha(fits: Sequence[FitResult], weighting: str = "r2") -> float:
    """Exponent average weighted by R^2 ("r2") or R^4 ("r2_squared")."""
    if not fits:
        raise ValueError("at least one fit required")
    if weighting not in ("r2", "r2_squared"):
        raise ValueError(f"unknown weighting {weighting!r}")
    r2 = np.array([f.r_squared for f in fits], dtype=np.float64)
    w = r2 if weighting == "r2" else r2**2
    if not np.any(w != 0):
        raise ValueError("all weights are zero")
    alphas = np.array([f.alpha for f in fits], dtype=np.float64)
    return float(np.sum(w * alphas) / np.sum(w))
