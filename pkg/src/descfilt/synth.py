"""Robust H-infinity filter synthesis for Lipschitz descriptor plants.

Builds the strict-LMI program whose feasibility certifies a filter

    E xFdot = A_F xF + B_F y + E1 phi(xF, u) + E2 psi(xF, u)
    z_F     = C_F xF + D_F y + E3 psi(xF, u)

with guaranteed disturbance attenuation ||e|| <= mu ||w|| and maximized
admissible Lipschitz constant gamma* = 1/sqrt(alpha2 (1 + 3 alpha1^2)).
The singular-mass-matrix Lyapunov conditions E'P = P'E >= 0 are folded in
by the strict parametrization P = X E + Eperp' Y with X > 0, so the whole
problem is a single strict LMI optimization.

Conventions: the quadratic form of the generalized Lyapunov function
differentiates to A~'P + P'A~, so every P-coupling below carries P', the
substituted gains are G1 = P1'A_F and G2 = P1'B_F, and recovery solves
against P1'.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import lmi, sdpcore
from .lmi import STAR, AffineExpr, LmiProgram
from .model import DescriptorPlant, ModelError, orth_complement, validate_plant

DYNAMIC = "dynamic"
GENERAL = "general"
STATIC_GAIN = "static"

E3_VARIABLE = "variable"
E3_FIXED = "fixed"
E3_ZERO = "zero"


class SynthesisError(ValueError):
    """Structural problem with the synthesis request."""


class PlantRejectedError(SynthesisError):
    """Plant failed validation (irregular, impulsive, or unobservable)."""


class InfeasibleError(SynthesisError):
    """No filter exists at the requested attenuation level and structure."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class NumericalError(SynthesisError):
    """Recovery or solver broke down numerically."""


@dataclass(frozen=True)
class FilterStructure:
    """Structural template: fixed injections E1, E2 and the role of E3."""

    kind: str
    E1: np.ndarray
    E2: np.ndarray
    e3_mode: str = E3_ZERO
    E3_fixed: np.ndarray | None = None

    @classmethod
    def dynamic(cls, n, p):
        return cls(DYNAMIC, np.eye(n), np.zeros((n, p)), E3_ZERO)

    @classmethod
    def general(cls, E1, E2, e3_mode=E3_VARIABLE, E3_fixed=None):
        E1 = np.atleast_2d(np.asarray(E1, dtype=float))
        E2 = np.atleast_2d(np.asarray(E2, dtype=float))
        if e3_mode == E3_FIXED and E3_fixed is None:
            raise SynthesisError("e3_mode='fixed' requires E3_fixed")
        if e3_mode not in (E3_VARIABLE, E3_FIXED, E3_ZERO):
            raise SynthesisError(f"unknown e3_mode {e3_mode!r}")
        fixed = None if E3_fixed is None else np.atleast_2d(np.asarray(E3_fixed, dtype=float))
        return cls(GENERAL, E1, E2, e3_mode, fixed)

    @classmethod
    def static_gain(cls, n, p):
        # couplings A_F = A - LC, B_F = L, E2 = -L are derived after solving
        return cls(STATIC_GAIN, np.eye(n), np.zeros((n, p)), E3_ZERO)


@dataclass(frozen=True)
class SynthesisMode:
    """MaxGamma maximizes the admissible Lipschitz constant at fixed mu;
    MinMu fixes (alpha1, alpha2) and minimizes zeta = mu^2;
    Feasibility fixes everything and just asks whether a filter exists."""

    kind: str = "max-gamma"
    alpha1: float | None = None
    alpha2: float | None = None


MAX_GAMMA = SynthesisMode("max-gamma")


def min_mu_mode(alpha1: float, alpha2: float) -> SynthesisMode:
    if alpha1 <= 0 or alpha2 <= 0:
        raise SynthesisError("min-mu mode needs fixed alpha1 > 0 and alpha2 > 0")
    return SynthesisMode("min-mu", float(alpha1), float(alpha2))


def feasibility_mode(alpha1: float, alpha2: float) -> SynthesisMode:
    return SynthesisMode("feasibility", float(alpha1), float(alpha2))


@dataclass
class FilterRealization:
    """Concrete filter matrices sharing the plant's mass matrix."""

    A_F: np.ndarray
    B_F: np.ndarray
    C_F: np.ndarray
    D_F: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    E3: np.ndarray
    E: np.ndarray

    def to_json_dict(self):
        return {
            "schema": 1,
            "A_F": self.A_F.tolist(),
            "B_F": self.B_F.tolist(),
            "C_F": self.C_F.tolist(),
            "D_F": self.D_F.tolist(),
            "E1": self.E1.tolist(),
            "E2": self.E2.tolist(),
            "E3": self.E3.tolist(),
            "E": self.E.tolist(),
        }

    @classmethod
    def from_json_dict(cls, data):
        return cls(**{k: np.asarray(data[k], dtype=float) for k in
                      ("A_F", "B_F", "C_F", "D_F", "E1", "E2", "E3", "E")})


@dataclass
class SynthesisResult:
    filter: FilterRealization
    mu: float
    eps1: float
    eps2: float
    alpha1: float
    alpha2: float
    gamma_star: float
    X1: np.ndarray
    X2: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    structure: FilterStructure
    mode: SynthesisMode
    solver: sdpcore.SdpSolution

    def to_json_dict(self):
        return {
            "schema": 1,
            "filter": self.filter.to_json_dict(),
            "mu": self.mu,
            "eps1": self.eps1,
            "eps2": self.eps2,
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "gamma_star": self.gamma_star,
            "X1": self.X1.tolist(),
            "X2": self.X2.tolist(),
            "Y1": self.Y1.tolist(),
            "Y2": self.Y2.tolist(),
            "P1": self.P1.tolist(),
            "P2": self.P2.tolist(),
            "structure": self.structure.kind,
            "mode": self.mode.kind,
            "solver": {
                "status": self.solver.status,
                "objective": self.solver.objective,
                "iterations": self.solver.iterations,
                "residuals": list(self.solver.residuals),
            },
        }


@dataclass
class ErrorSystem:
    """Augmented filter-error descriptor system in xi = [xF; x] coordinates."""

    Etilde: np.ndarray
    Atilde: np.ndarray
    Mtilde1: np.ndarray
    Ntilde: np.ndarray
    Btilde: np.ndarray
    Ctilde: np.ndarray
    Mtilde2: np.ndarray
    Dtilde: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    Gamma: np.ndarray
    gamma: float


# ---------------------------------------------------------------------------
# scalar helpers
# ---------------------------------------------------------------------------

def recover_gamma(alpha1: float, alpha2: float) -> float:
    """Admissible Lipschitz constant 1/sqrt(alpha2 (1 + 3 alpha1^2))."""
    if alpha2 <= 0:
        raise SynthesisError("alpha2 must be positive")
    if alpha1 < 0:
        raise SynthesisError("alpha1 must be nonnegative")
    return 1.0 / np.sqrt(alpha2 * (1.0 + 3.0 * alpha1**2))


def sensitivities(alpha1: float, alpha2: float) -> tuple:
    """Relative sensitivities of gamma* to alpha1 and alpha2."""
    if alpha1 <= 0 or alpha2 <= 0:
        raise SynthesisError("sensitivities need positive alpha1, alpha2")
    s1 = -3.0 * alpha1**2 / (1.0 + 3.0 * alpha1**2)
    return (s1, -0.5)


# ---------------------------------------------------------------------------
# program assembly
# ---------------------------------------------------------------------------

def _p_transpose_expr(X, Y, E, Eperp, R=None):
    """Affine expression for P' R = (E'X + Y'Eperp) R."""
    n = E.shape[0]
    R = np.eye(n) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    expr = X.expr(L=E.T, R=R)
    if Y is not None:
        expr = expr + Y.expr(L=np.eye(n), R=Eperp @ R, transpose=True)
    return expr


def _validate_for_synthesis(plant):
    report = validate_plant(plant)
    problems = []
    if not report.regular:
        problems.append("pencil (E, A) is not regular")
    if report.impulse_free is False:
        problems.append("pencil (E, A) is not impulse free")
    if report.observable is False:
        problems.append("triple (E, A, C) is not observable")
    if problems:
        raise PlantRejectedError("; ".join(problems))
    return report


def build_program(
    plant: DescriptorPlant,
    mu: float,
    structure: FilterStructure,
    mode: SynthesisMode = MAX_GAMMA,
    weights=(2.0, 1.0),
) -> LmiProgram:
    """Assemble the strict-LMI synthesis program for a dynamic/general filter.

    The stability-plus-attenuation inequality is bordered into one block
    matrix: the leading rows carry the augmented state (xF, x), followed by
    Schur slots for the Lipschitz bound (alpha2), the two structured
    uncertainty channels (eps1, eps2), the bounded output map, the four
    nonlinearity columns, and the disturbance.  Negative-definiteness of the
    assembly is exactly the certified decrease of the generalized Lyapunov
    function V = xi' E~' P xi along error trajectories.
    """
    if structure.kind == STATIC_GAIN:
        raise SynthesisError("static-gain structure is handled by synthesize_static")
    _validate_for_synthesis(plant)
    if mode.kind == "max-gamma" and mu <= 0:
        raise SynthesisError("mu must be positive in max-gamma mode")
    n, p, q, r, k = plant.n, plant.p, plant.q, plant.r, plant.k
    E, A, B, C, D, H = plant.E, plant.A, plant.B, plant.C, plant.D, plant.H
    M1, M2, N = plant.M1, plant.M2, plant.N
    E1c, E2c = structure.E1, structure.E2
    if E1c.shape != (n, n) or E2c.shape != (n, p):
        raise SynthesisError("structure injections E1 (n x n), E2 (n x p) do not conform")
    Eperp = orth_complement(E)
    ns = Eperp.shape[0]

    prog = LmiProgram()
    eps1 = prog.scalar("eps1")
    eps2 = prog.scalar("eps2")
    fixed_scalars = mode.kind in ("min-mu", "feasibility")
    if fixed_scalars:
        alpha1_c, alpha2_c = float(mode.alpha1), float(mode.alpha2)
        alpha1 = alpha2 = None
    else:
        alpha1 = prog.scalar("alpha1")
        alpha2 = prog.scalar("alpha2")
    zeta = prog.scalar("zeta") if mode.kind == "min-mu" else None
    CF = prog.rect("CF", r, n)
    DF = prog.rect("DF", r, p)
    E3 = prog.rect("E3", r, p) if structure.e3_mode == E3_VARIABLE else None
    G1 = prog.rect("G1", n, n)
    G2 = prog.rect("G2", n, p)
    X1 = prog.pos_def("X1", n)
    X2 = prog.pos_def("X2", n)
    Y1 = prog.rect("Y1", ns, n) if ns else None
    Y2 = prog.rect("Y2", ns, n) if ns else None

    I_n, I_r, I_k, I_p, I_q = np.eye(n), np.eye(r), np.eye(k), np.eye(p), np.eye(q)

    lam1 = G1.expr() + G1.expr(transpose=True)
    lam2 = (
        _p_transpose_expr(X2, Y2, E, Eperp, R=A).T
        + _p_transpose_expr(X2, Y2, E, Eperp, R=A)
        + eps1.times(N.T @ N)
        + eps2.times(N.T @ N)
    )
    lam3 = AffineExpr.const(H.T) + DF.expr(L=-C.T, R=I_r, transpose=True)

    # slot order: xF, x, alpha2(2n), eps1 pad, uncertainty-in, output map,
    # eps2 pad, uncertainty-out, four nonlinearity columns, w, output slack
    sel_xF = np.hstack([I_n, np.zeros((n, n))])
    sel_x = np.hstack([np.zeros((n, n)), I_n])
    width = 14
    grid = [[0] * width for _ in range(width)]

    def put(i, j, entry):
        grid[i][j] = entry
        if i != j:
            grid[j][i] = STAR

    put(0, 0, lam1)
    put(0, 1, G2.expr(R=C))
    put(1, 1, lam2)
    put(0, 2, AffineExpr.const(sel_xF))
    put(1, 2, AffineExpr.const(sel_x))
    if fixed_scalars:
        put(2, 2, AffineExpr.const(-alpha2_c * np.eye(2 * n)))
    else:
        put(2, 2, alpha2.times(-np.eye(2 * n)))
    put(3, 3, eps1.times(-I_k))
    put(0, 4, G2.expr(R=M2))
    put(1, 4, _p_transpose_expr(X2, Y2, E, Eperp, R=M1))
    put(4, 4, eps1.times(-I_k))
    put(0, 5, CF.expr(L=-I_n, R=I_r, transpose=True))
    put(1, 5, lam3)
    put(5, 5, AffineExpr.const(-I_r / 3.0))
    put(6, 6, eps2.times(-I_k / 3.0))
    put(5, 7, DF.expr(L=-I_r, R=M2))
    put(7, 7, eps2.times(-I_k / 3.0))
    put(0, 9, G2.expr())
    put(0, 10, _p_transpose_expr(X1, Y1, E, Eperp, R=E1c))
    put(0, 11, _p_transpose_expr(X1, Y1, E, Eperp, R=E2c))
    put(1, 8, _p_transpose_expr(X2, Y2, E, Eperp))
    put(8, 8, AffineExpr.const(-I_n))
    put(9, 9, AffineExpr.const(-I_p))
    put(10, 10, AffineExpr.const(-I_n))
    put(11, 11, AffineExpr.const(-I_p))
    put(0, 12, G2.expr(R=D))
    put(1, 12, _p_transpose_expr(X2, Y2, E, Eperp, R=B))
    if mode.kind == "min-mu":
        put(12, 12, zeta.times(-I_q))
    else:
        put(12, 12, AffineExpr.const(-(mu**2) * I_q))
    put(12, 13, DF.expr(L=-D.T, R=I_r, transpose=True))
    put(13, 13, AffineExpr.const(-I_r / 3.0))
    prog.add_neg_def(lmi.block(grid), "xi1")

    xi2 = lmi.block(
        [
            [eps2.times(I_r), 0, DF.expr(L=-I_r, R=M2)],
            [0, AffineExpr.const(I_k), 0],
            [STAR, 0, AffineExpr.const(I_k)],
        ]
    )
    prog.add_pos_def(xi2, "xi2")

    if structure.e3_mode == E3_VARIABLE:
        e3_cell = E3.expr()
    elif structure.e3_mode == E3_FIXED:
        e3_cell = AffineExpr.const(structure.E3_fixed)
    else:
        e3_cell = 0
    a1_r = AffineExpr.const(alpha1_c * I_r) if fixed_scalars else alpha1.times(I_r)
    a1_p = AffineExpr.const(alpha1_c * I_p) if fixed_scalars else alpha1.times(I_p)
    xi3 = lmi.block(
        [
            [a1_r, e3_cell, DF.expr()],
            [STAR if structure.e3_mode != E3_ZERO else 0, a1_p, 0],
            [STAR, 0, a1_p],
        ]
    )
    prog.add_pos_def(xi3, "xi3")

    xi4 = lmi.block(
        [
            [AffineExpr.const(I_n), AffineExpr.const(I_n) - _p_transpose_expr(X1, Y1, E, Eperp)],
            [STAR, AffineExpr.const(I_n)],
        ]
    )
    prog.add_pos_def(xi4, "xi4")

    if mode.kind == "min-mu":
        prog.set_objective({zeta: 1.0})
    elif mode.kind == "feasibility":
        prog.set_objective({eps1: 1.0})
    else:
        prog.set_objective({alpha1: float(weights[0]), alpha2: float(weights[1])})
    return prog


def build_static_program(plant: DescriptorPlant, mu: float) -> LmiProgram:
    """Observer-form program: single gain variable G = P1'L, D_F = 0, E3 = 0.

    With no feedthrough the output-uncertainty channel and its Schur slots
    vanish, the error map e = Hx - xF is exact (no cross terms to split),
    and gamma is maximized directly through minimizing alpha2 = 1/gamma^2.
    """
    _validate_for_synthesis(plant)
    if plant.p < 1:
        raise ModelError("static-gain synthesis needs at least one measured output (p >= 1)")
    if mu <= 0:
        raise SynthesisError("mu must be positive")
    n, p, q, r, k = plant.n, plant.p, plant.q, plant.r, plant.k
    if r != n:
        raise ModelError("static-gain structure fixes C_F = I, which needs r == n")
    E, A, B, C, D, H = plant.E, plant.A, plant.B, plant.C, plant.D, plant.H
    M1, M2, N = plant.M1, plant.M2, plant.N
    Eperp = orth_complement(E)
    ns = Eperp.shape[0]

    prog = LmiProgram()
    eps1 = prog.scalar("eps1")
    alpha2 = prog.scalar("alpha2")
    G = prog.rect("G", n, p)
    X1 = prog.pos_def("X1", n)
    X2 = prog.pos_def("X2", n)
    Y1 = prog.rect("Y1", ns, n) if ns else None
    Y2 = prog.rect("Y2", ns, n) if ns else None

    I_n, I_k, I_p, I_q = np.eye(n), np.eye(k), np.eye(p), np.eye(q)
    p1t_a_minus_gc = _p_transpose_expr(X1, Y1, E, Eperp, R=A) - G.expr(R=C)
    lam1 = p1t_a_minus_gc + p1t_a_minus_gc.T
    lam2 = (
        _p_transpose_expr(X2, Y2, E, Eperp, R=A).T
        + _p_transpose_expr(X2, Y2, E, Eperp, R=A)
        + eps1.times(N.T @ N)
    )

    sel_xF = np.hstack([I_n, np.zeros((n, n))])
    sel_x = np.hstack([np.zeros((n, n)), I_n])
    width = 11
    grid = [[0] * width for _ in range(width)]

    def put(i, j, entry):
        grid[i][j] = entry
        if i != j:
            grid[j][i] = STAR

    put(0, 0, lam1)
    put(0, 1, G.expr(R=C))
    put(1, 1, lam2)
    put(0, 2, AffineExpr.const(sel_xF))
    put(1, 2, AffineExpr.const(sel_x))
    put(2, 2, alpha2.times(-np.eye(2 * n)))
    put(3, 3, eps1.times(-I_k))
    put(0, 4, G.expr(R=M2))
    put(1, 4, _p_transpose_expr(X2, Y2, E, Eperp, R=M1))
    put(4, 4, eps1.times(-I_k))
    put(0, 5, AffineExpr.const(-I_n))
    put(1, 5, AffineExpr.const(H.T))
    put(5, 5, AffineExpr.const(-I_n))
    put(0, 7, G.expr())
    put(0, 8, _p_transpose_expr(X1, Y1, E, Eperp))
    put(0, 9, G.expr().scale(-1.0))
    put(1, 6, _p_transpose_expr(X2, Y2, E, Eperp))
    put(6, 6, AffineExpr.const(-I_n))
    put(7, 7, AffineExpr.const(-I_p))
    put(8, 8, AffineExpr.const(-I_n))
    put(9, 9, AffineExpr.const(-I_p))
    put(0, 10, G.expr(R=D))
    put(1, 10, _p_transpose_expr(X2, Y2, E, Eperp, R=B))
    put(10, 10, AffineExpr.const(-(mu**2) * I_q))
    prog.add_neg_def(lmi.block(grid), "xi1")

    xi4 = lmi.block(
        [
            [AffineExpr.const(I_n), AffineExpr.const(I_n) - _p_transpose_expr(X1, Y1, E, Eperp)],
            [STAR, AffineExpr.const(I_n)],
        ]
    )
    prog.add_pos_def(xi4, "xi4")
    prog.set_objective({alpha2: 1.0})
    return prog


# ---------------------------------------------------------------------------
# synthesis driver
# ---------------------------------------------------------------------------

def _reconstruct_p(form_index, x, name_x, name_y, E, Eperp):
    X = form_index.extract(x, name_x)
    if Eperp.shape[0]:
        Y = form_index.extract(x, name_y)
    else:
        Y = np.zeros((0, E.shape[0]))
    return X, Y, X @ E + Eperp.T @ Y


def _solve_against_p1(P1, rhs, what):
    """Solve P1' Z = rhs with one refinement step; reject bad conditioning."""
    cond = np.linalg.cond(P1)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalError(f"P1 conditioning {cond:.3e} too poor to recover {what}")
    lhs = P1.T
    Z = np.linalg.solve(lhs, rhs)
    Z += np.linalg.solve(lhs, rhs - lhs @ Z)
    return Z


def _require_optimal(solution, context):
    if solution.status == sdpcore.OPTIMAL:
        return
    if solution.status == sdpcore.PRIMAL_INFEASIBLE:
        raise InfeasibleError(
            f"no filter exists at this mu for this structure ({context})", solution
        )
    if solution.status == sdpcore.DUAL_INFEASIBLE:
        raise InfeasibleError(f"synthesis program is unbounded ({context})", solution)
    raise NumericalError(f"solver ended with status {solution.status} ({context})")


def synthesize(
    plant: DescriptorPlant,
    mu: float,
    structure: FilterStructure | None = None,
    settings: sdpcore.SolverSettings | None = None,
    mode: SynthesisMode = MAX_GAMMA,
    weights=(2.0, 1.0),
    log=None,
) -> SynthesisResult:
    """Solve the synthesis LMI and recover the filter realization."""
    structure = structure or FilterStructure.dynamic(plant.n, plant.p)
    if structure.kind == STATIC_GAIN:
        return synthesize_static(plant, mu, settings)
    prog = build_program(plant, mu, structure, mode, weights)
    form = lmi.canonicalize(prog)
    solution = sdpcore.solve(form, settings, log=log)
    _require_optimal(solution, f"{structure.kind}/{mode.kind}")

    E = plant.E
    Eperp = orth_complement(E)
    idx = form.index
    X1, Y1, P1 = _reconstruct_p(idx, solution.x, "X1", "Y1", E, Eperp)
    X2, Y2, P2 = _reconstruct_p(idx, solution.x, "X2", "Y2", E, Eperp)
    G1 = idx.extract(solution.x, "G1")
    G2 = idx.extract(solution.x, "G2")
    A_F = _solve_against_p1(P1, G1, "A_F")
    B_F = _solve_against_p1(P1, G2, "B_F")
    C_F = idx.extract(solution.x, "CF")
    D_F = idx.extract(solution.x, "DF")
    if structure.e3_mode == E3_VARIABLE:
        E3 = idx.extract(solution.x, "E3")
    elif structure.e3_mode == E3_FIXED:
        E3 = structure.E3_fixed.copy()
    else:
        E3 = np.zeros((plant.r, plant.p))

    if mode.kind in ("min-mu", "feasibility"):
        alpha1 = float(mode.alpha1)
        alpha2 = float(mode.alpha2)
    else:
        alpha1 = idx.extract(solution.x, "alpha1")
        alpha2 = idx.extract(solution.x, "alpha2")
    if mode.kind == "min-mu":
        zeta = idx.extract(solution.x, "zeta")
        if zeta <= 0:
            raise NumericalError(f"recovered zeta = {zeta:.3e} is not positive")
        mu_out = float(np.sqrt(zeta))
    else:
        mu_out = float(mu)

    result = SynthesisResult(
        filter=FilterRealization(
            A_F=A_F, B_F=B_F, C_F=C_F, D_F=D_F,
            E1=structure.E1.copy(), E2=structure.E2.copy(), E3=E3, E=E.copy(),
        ),
        mu=mu_out,
        eps1=idx.extract(solution.x, "eps1"),
        eps2=idx.extract(solution.x, "eps2"),
        alpha1=alpha1,
        alpha2=alpha2,
        gamma_star=recover_gamma(alpha1, alpha2),
        X1=X1, X2=X2, Y1=Y1, Y2=Y2, P1=P1, P2=P2,
        structure=structure,
        mode=mode,
        solver=solution,
    )
    _check_result_invariants(plant, result)
    return result


def synthesize_static(
    plant: DescriptorPlant,
    mu: float,
    settings: sdpcore.SolverSettings | None = None,
    log=None,
) -> SynthesisResult:
    """Static-gain observer synthesis via the single change of variables G = P1'L."""
    prog = build_static_program(plant, mu)
    form = lmi.canonicalize(prog)
    solution = sdpcore.solve(form, settings, log=log)
    _require_optimal(solution, "static/max-gamma")

    E = plant.E
    Eperp = orth_complement(E)
    idx = form.index
    X1, Y1, P1 = _reconstruct_p(idx, solution.x, "X1", "Y1", E, Eperp)
    X2, Y2, P2 = _reconstruct_p(idx, solution.x, "X2", "Y2", E, Eperp)
    G = idx.extract(solution.x, "G")
    L = _solve_against_p1(P1, G, "L")
    n, p, r = plant.n, plant.p, plant.r
    alpha2 = idx.extract(solution.x, "alpha2")

    result = SynthesisResult(
        filter=FilterRealization(
            A_F=plant.A - L @ plant.C,
            B_F=L,
            C_F=np.eye(n),
            D_F=np.zeros((r, p)),
            E1=np.eye(n),
            E2=-L,
            E3=np.zeros((r, p)),
            E=E.copy(),
        ),
        mu=float(mu),
        eps1=idx.extract(solution.x, "eps1"),
        eps2=0.0,
        alpha1=0.0,
        alpha2=alpha2,
        gamma_star=recover_gamma(0.0, alpha2),
        X1=X1, X2=X2, Y1=Y1, Y2=Y2, P1=P1, P2=P2,
        structure=FilterStructure.static_gain(n, p),
        mode=MAX_GAMMA,
        solver=solution,
    )
    _check_result_invariants(plant, result)
    return result


def _check_result_invariants(plant, result, tol=1e-7):
    E = plant.E
    for name, P in (("P1", result.P1), ("P2", result.P2)):
        EP = E.T @ P
        scale = max(1.0, np.linalg.norm(EP, 2))
        if np.linalg.norm(EP - EP.T, 2) > 1e-8 * scale:
            raise NumericalError(f"E'{name} is not symmetric at the solution")
        if np.linalg.eigvalsh(0.5 * (EP + EP.T))[0] < -1e-8 * scale:
            raise NumericalError(f"E'{name} is not positive semidefinite at the solution")
    smax = np.linalg.norm(np.eye(plant.n) - result.P1, 2)
    if smax >= 1.0 + tol:
        raise NumericalError(f"sigma_max(I - P1) = {smax:.6f} >= 1; P1 invertibility lost")
    expected = recover_gamma(result.alpha1, result.alpha2)
    if abs(expected - result.gamma_star) > 1e-12 * max(1.0, expected):
        raise NumericalError("gamma_star does not match its closed form")


# ---------------------------------------------------------------------------
# augmented error system
# ---------------------------------------------------------------------------

def assemble_error_system(plant: DescriptorPlant, filt: FilterRealization) -> ErrorSystem:
    """Stack plant and filter into the error descriptor system for xi = [xF; x]."""
    n, p, q, r, k = plant.n, plant.p, plant.q, plant.r, plant.k
    for name, M, shape in (
        ("A_F", filt.A_F, (n, n)),
        ("B_F", filt.B_F, (n, p)),
        ("C_F", filt.C_F, (r, n)),
        ("D_F", filt.D_F, (r, p)),
        ("E1", filt.E1, (n, n)),
        ("E2", filt.E2, (n, p)),
        ("E3", filt.E3, (r, p)),
    ):
        if M.shape != shape:
            raise ModelError(f"filter matrix {name} must have shape {shape}, got {M.shape}")
    Z = np.zeros
    Etilde = np.block([[plant.E, Z((n, n))], [Z((n, n)), plant.E]])
    Atilde = np.block([[filt.A_F, filt.B_F @ plant.C], [Z((n, n)), plant.A]])
    Btilde = np.vstack([filt.B_F @ plant.D, plant.B])
    Ctilde = np.hstack([-filt.C_F, plant.H - filt.D_F @ plant.C])
    Dtilde = -filt.D_F @ plant.D
    Mtilde1 = np.vstack([filt.B_F @ plant.M2, plant.M1])
    Ntilde = np.hstack([Z((k, n)), plant.N])
    Mtilde2 = -filt.D_F @ plant.M2
    S1 = np.block([[Z((n, n)), filt.B_F, filt.E1, filt.E2], [np.eye(n), Z((n, p)), Z((n, n)), Z((n, p))]])
    S2 = np.hstack([Z((r, n)), -filt.D_F, Z((r, n)), -filt.E3])
    g1, g2 = plant.gamma1, plant.gamma2
    Gamma = np.array([[0.0, g1], [0.0, g2], [g1, 0.0], [g2, 0.0]])
    return ErrorSystem(
        Etilde=Etilde, Atilde=Atilde, Mtilde1=Mtilde1, Ntilde=Ntilde,
        Btilde=Btilde, Ctilde=Ctilde, Mtilde2=Mtilde2, Dtilde=Dtilde,
        S1=S1, S2=S2, Gamma=Gamma, gamma=float(np.hypot(g1, g2)),
    )


# ---------------------------------------------------------------------------
# certificate verification (independent numeric re-assembly)
# ---------------------------------------------------------------------------

@dataclass
class CheckItem:
    name: str
    value: float
    bound: float
    passed: bool


@dataclass
class CertificateReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _assemble_symmetric(slot_dims, cells):
    offsets = np.concatenate([[0], np.cumsum(slot_dims)]).astype(int)
    total = int(offsets[-1])
    M = np.zeros((total, total))
    for (i, j), val in cells.items():
        rs, cs = offsets[i], offsets[j]
        M[rs : rs + val.shape[0], cs : cs + val.shape[1]] = val
        if i != j:
            M[cs : cs + val.shape[1], rs : rs + val.shape[0]] = val.T
    return M


def _xi_matrices_numeric(plant, result):
    """Plain-numpy re-assembly of the certified inequalities at the solution."""
    n, p, q, r, k = plant.n, plant.p, plant.q, plant.r, plant.k
    E, A, B, C, D, H = plant.E, plant.A, plant.B, plant.C, plant.D, plant.H
    M1, M2, N = plant.M1, plant.M2, plant.N
    P1, P2 = result.P1, result.P2
    filt = result.filter
    G1 = P1.T @ filt.A_F
    G2 = P1.T @ filt.B_F
    eps1, eps2 = result.eps1, result.eps2
    alpha1, alpha2 = result.alpha1, result.alpha2
    mu2 = result.mu**2
    I_n, I_r, I_k, I_p, I_q = np.eye(n), np.eye(r), np.eye(k), np.eye(p), np.eye(q)

    out = {}
    if result.structure.kind == STATIC_GAIN:
        L = filt.B_F
        Gv = P1.T @ L
        lam1 = (P1.T @ A - Gv @ C) + (P1.T @ A - Gv @ C).T
        lam2 = A.T @ P2 + P2.T @ A + eps1 * (N.T @ N)
        dims = [n, n, 2 * n, k, k, n, n, p, n, p, q]
        cells = {
            (0, 0): lam1,
            (0, 1): Gv @ C,
            (1, 1): lam2,
            (0, 2): np.hstack([I_n, np.zeros((n, n))]),
            (1, 2): np.hstack([np.zeros((n, n)), I_n]),
            (2, 2): -alpha2 * np.eye(2 * n),
            (3, 3): -eps1 * I_k,
            (0, 4): Gv @ M2,
            (1, 4): P2.T @ M1,
            (4, 4): -eps1 * I_k,
            (0, 5): -I_n,
            (1, 5): H.T,
            (5, 5): -I_n,
            (1, 6): P2.T,
            (6, 6): -I_n,
            (0, 7): Gv,
            (7, 7): -I_p,
            (0, 8): P1.T,
            (8, 8): -I_n,
            (0, 9): -Gv,
            (9, 9): -I_p,
            (0, 10): Gv @ D,
            (1, 10): P2.T @ B,
            (10, 10): -mu2 * I_q,
        }
        out["xi1"] = _assemble_symmetric(dims, cells)
    else:
        lam1 = G1.T + G1
        lam2 = A.T @ P2 + P2.T @ A + (eps1 + eps2) * (N.T @ N)
        lam3 = H.T - C.T @ filt.D_F.T
        dims = [n, n, 2 * n, k, k, r, k, k, n, p, n, p, q, r]
        cells = {
            (0, 0): lam1,
            (0, 1): G2 @ C,
            (1, 1): lam2,
            (0, 2): np.hstack([I_n, np.zeros((n, n))]),
            (1, 2): np.hstack([np.zeros((n, n)), I_n]),
            (2, 2): -alpha2 * np.eye(2 * n),
            (3, 3): -eps1 * I_k,
            (0, 4): G2 @ M2,
            (1, 4): P2.T @ M1,
            (4, 4): -eps1 * I_k,
            (0, 5): -filt.C_F.T,
            (1, 5): lam3,
            (5, 5): -I_r / 3.0,
            (6, 6): -eps2 * I_k / 3.0,
            (5, 7): -filt.D_F @ M2,
            (7, 7): -eps2 * I_k / 3.0,
            (1, 8): P2.T,
            (8, 8): -I_n,
            (0, 9): G2,
            (9, 9): -I_p,
            (0, 10): P1.T @ filt.E1,
            (10, 10): -I_n,
            (0, 11): P1.T @ filt.E2,
            (11, 11): -I_p,
            (0, 12): G2 @ D,
            (1, 12): P2.T @ B,
            (12, 12): -mu2 * I_q,
            (12, 13): -D.T @ filt.D_F.T,
            (13, 13): -I_r / 3.0,
        }
        out["xi1"] = _assemble_symmetric(dims, cells)
        out["xi2"] = _assemble_symmetric(
            [r, k, k],
            {(0, 0): eps2 * I_r, (0, 2): -filt.D_F @ M2, (1, 1): I_k, (2, 2): I_k},
        )
        out["xi3"] = _assemble_symmetric(
            [r, p, p],
            {(0, 0): alpha1 * I_r, (0, 1): filt.E3, (0, 2): filt.D_F,
             (1, 1): alpha1 * I_p, (2, 2): alpha1 * I_p},
        )
    out["xi4"] = _assemble_symmetric(
        [n, n], {(0, 0): I_n, (0, 1): I_n - P1.T, (1, 1): I_n}
    )
    return out


def verify_certificate(plant: DescriptorPlant, result: SynthesisResult, tol: float = 1e-7) -> CertificateReport:
    """Re-evaluate every certified inequality at the solution, report-only.

    Definiteness checks allow a |tol|-relative band around zero since
    optimal solutions sit on the constraint boundary.
    """
    mats = _xi_matrices_numeric(plant, result)
    checks = []
    for name, M in mats.items():
        scale = max(1.0, float(np.linalg.norm(M, 2)))
        eigs = np.linalg.eigvalsh(M)
        if name == "xi1":
            value = float(eigs[-1])  # must be (near-)negative definite
            checks.append(CheckItem(name, value, tol * scale, bool(value <= tol * scale)))
        else:
            value = float(eigs[0])  # must be (near-)positive definite
            checks.append(CheckItem(name, value, -tol * scale, bool(value >= -tol * scale)))

    E = plant.E
    for name, P in (("EP1", result.P1), ("EP2", result.P2)):
        EP = E.T @ P
        scale = max(1.0, float(np.linalg.norm(EP, 2)))
        sym_err = float(np.linalg.norm(EP - EP.T, 2))
        checks.append(CheckItem(f"{name}_symmetric", sym_err, 1e-8 * scale, bool(sym_err <= 1e-8 * scale)))
        emin = float(np.linalg.eigvalsh(0.5 * (EP + EP.T))[0])
        checks.append(CheckItem(f"{name}_psd", emin, -1e-8 * scale, bool(emin >= -1e-8 * scale)))

    smax = float(np.linalg.norm(np.eye(plant.n) - result.P1, 2))
    checks.append(CheckItem("p1_contraction", smax, 1.0, bool(smax < 1.0)))
    gerr = abs(result.gamma_star - recover_gamma(result.alpha1, result.alpha2))
    checks.append(CheckItem("gamma_formula", gerr, 1e-12, bool(gerr <= 1e-12)))
    return CertificateReport(checks)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_synthesis(result: SynthesisResult, path):
    with open(path, "w") as fh:
        json.dump(result.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_filter(path) -> FilterRealization:
    with open(path) as fh:
        data = json.load(fh)
    if "filter" in data:
        data = data["filter"]
    return FilterRealization.from_json_dict(data)
