"""Admissible additive nonlinear-uncertainty budgets.

A synthesized filter with admissible Lipschitz constant gamma* tolerates
additive uncertainties (dgamma1, dgamma2) on the two nonlinearities as long
as sqrt((gamma1+dg1)^2 + (gamma2+dg2)^2) <= gamma* (exact region), or, more
conservatively, sqrt(dg1^2 + dg2^2) <= gamma* - sqrt(gamma1^2 + gamma2^2).
Callers may feed Jacobian-norm estimates (e.g. from estimate_lipschitz) in
place of Lipschitz constants; the mathematics is identical.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

EXACT = "exact"
CONSERVATIVE = "conservative"


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class UncertaintyBudget:
    gamma1: float
    gamma2: float
    gamma_star: float
    region: str = EXACT

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0 or self.gamma_star < 0:
            raise BudgetError("budget constants must be nonnegative")
        if self.region not in (EXACT, CONSERVATIVE):
            raise BudgetError(f"unknown region {self.region!r}")

    @property
    def nominal(self) -> float:
        return float(np.hypot(self.gamma1, self.gamma2))

    @property
    def empty(self) -> bool:
        return self.gamma_star < self.nominal


def admissible(budget: UncertaintyBudget, dg1: float, dg2: float) -> bool:
    """Whether the additive pair (dg1, dg2) >= 0 is tolerated."""
    if dg1 < 0 or dg2 < 0:
        raise BudgetError("uncertainty increments must be nonnegative")
    if budget.region == EXACT:
        return bool(
            np.hypot(budget.gamma1 + dg1, budget.gamma2 + dg2) <= budget.gamma_star
        )
    return bool(np.hypot(dg1, dg2) <= budget.gamma_star - budget.nominal)


def max_uniform_delta(budget: UncertaintyBudget) -> float:
    """Largest d with admissible(d, d); closed form from the boundary."""
    if budget.empty:
        warnings.warn("budget is empty: gamma* < sqrt(gamma1^2 + gamma2^2)", stacklevel=2)
        return 0.0
    if budget.region == CONSERVATIVE:
        return float((budget.gamma_star - budget.nominal) / np.sqrt(2.0))
    # (g1 + d)^2 + (g2 + d)^2 = gamma*^2, positive root
    g1, g2, gs = budget.gamma1, budget.gamma2, budget.gamma_star
    a = 2.0
    b = 2.0 * (g1 + g2)
    cc = g1**2 + g2**2 - gs**2
    disc = b**2 - 4.0 * a * cc
    if disc < 0:
        return 0.0
    return float(max((-b + np.sqrt(disc)) / (2.0 * a), 0.0))


def region_boundary(budget: UncertaintyBudget, samples: int) -> list:
    """Sampled boundary points (dg1, dg2, region_tag) in the first quadrant.

    The exact region's boundary is the circle arc of radius gamma* around
    (-gamma1, -gamma2); the conservative region's is the quarter circle of
    radius gamma* - nominal around the origin.
    """
    if samples < 2:
        raise BudgetError("samples must be at least 2")
    if budget.empty:
        return []
    g1, g2, gs = budget.gamma1, budget.gamma2, budget.gamma_star
    pts = []
    # exact arc: endpoints at (gs - g1, 0) ... wait at dg2=0: dg1 = ...
    theta_lo = np.arcsin(np.clip(g2 / gs, 0.0, 1.0))
    theta_hi = np.arccos(np.clip(g1 / gs, 0.0, 1.0))
    for th in np.linspace(theta_lo, theta_hi, samples):
        pts.append((float(gs * np.cos(th) - g1), float(gs * np.sin(th) - g2), EXACT))
    radius = gs - budget.nominal
    for th in np.linspace(0.0, np.pi / 2.0, samples):
        pts.append((float(radius * np.cos(th)), float(radius * np.sin(th)), CONSERVATIVE))
    return pts


def boundary_to_csv(points, path):
    with open(path, "w") as fh:
        fh.write("dg1,dg2,region_tag\n")
        for dg1, dg2, tag in points:
            fh.write(f"{dg1!r},{dg2!r},{tag}\n")
