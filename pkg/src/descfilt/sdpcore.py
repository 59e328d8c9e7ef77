"""Dense primal-dual interior-point solver for block-PSD standard forms.

The LMI-side problem

    minimize g'u   s.t.   F(u) = F0_b + sum_i u_i F_i_b >= 0  per block

is embedded as the conic dual of

    (P) min <F0, X>  s.t.  <F_i, X> = -g_i,  X >= 0,

and both are solved simultaneously through the homogeneous self-dual
embedding, so infeasibility and unboundedness come out as certificates
instead of divergence.  Search directions use Nesterov-Todd scaling with a
Mehrotra predictor-corrector; all linear algebra is dense and symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .lmi import SdpStandardForm, _svec_indices, smat, svec, svec_dim

OPTIMAL = "Optimal"
PRIMAL_INFEASIBLE = "PrimalInfeasible"
DUAL_INFEASIBLE = "DualInfeasible"
MAX_ITERATIONS = "MaxIterations"
NUMERICAL_FAILURE = "NumericalFailure"

# tau/kappa ratio below which the embedding declares an infeasibility certificate
_TAU_KAPPA_THRESHOLD = 1e-10


class SdpError(ValueError):
    """Non-conforming solver input."""


@dataclass
class SolverSettings:
    tol_gap: float = 1e-8
    tol_feas: float = 1e-8
    max_iters: int = 200
    step_fraction: float = 0.98

    def __post_init__(self):
        if min(self.tol_gap, self.tol_feas, self.step_fraction) <= 0 or self.max_iters <= 0:
            raise SdpError("solver settings must be positive")
        if self.step_fraction >= 1:
            raise SdpError("step_fraction must lie in (0, 1)")


@dataclass
class SdpSolution:
    """Solver outcome, oriented to the LMI the caller handed in.

    status PrimalInfeasible means the given constraints admit no point;
    DualInfeasible means the objective is unbounded below along a feasible
    ray.  `x` is the scalarized decision vector of the given form.
    """

    status: str
    x: np.ndarray
    objective: float
    slacks: list
    residuals: tuple
    iterations: int
    certificate: dict | None = None
    mu_history: list = field(default_factory=list)


@dataclass
class CheckReport:
    violations: list
    block_min_eigs: list
    objective: float
    objective_error: float

    @property
    def passed(self):
        return not self.violations


def _skron(R: np.ndarray, dim: int) -> np.ndarray:
    """Dense symmetric Kronecker square: svec(R M R') = _skron(R) @ svec(M)."""
    rows, cols, scale = _svec_indices(dim)
    f = np.where(rows == cols, 0.5, 1.0 / np.sqrt(2.0))
    Rrr = R[np.ix_(rows, rows)]
    Rcc = R[np.ix_(cols, cols)]
    Rrc = R[np.ix_(rows, cols)]
    Rcr = R[np.ix_(cols, rows)]
    return scale[:, None] * (Rrr * Rcc + Rrc * Rcr) * f[None, :]


class _Cone:
    """Bookkeeping for the concatenated PSD blocks."""

    def __init__(self, dims):
        self.dims = list(dims)
        self.sizes = [svec_dim(d) for d in self.dims]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self.total = int(self.offsets[-1])
        self.degree = sum(self.dims)

    def split(self, v):
        return [v[self.offsets[i] : self.offsets[i + 1]] for i in range(len(self.dims))]

    def mats(self, v):
        return [smat(part, d) for part, d in zip(self.split(v), self.dims)]

    def identity(self, scale=1.0):
        return np.concatenate([svec(scale * np.eye(d)) for d in self.dims])


def _nt_scaling(X, S):
    """NT scaling factor R with R^-1 X R^-T = R' S R = diag(lam)."""
    Lx = np.linalg.cholesky(X)
    Ls = np.linalg.cholesky(S)
    U, lam, Vt = np.linalg.svd(Ls.T @ Lx)
    if lam.min() <= 0:
        raise np.linalg.LinAlgError("scaling point collapsed")
    isq = 1.0 / np.sqrt(lam)
    R = Lx @ Vt.T * isq[None, :]
    Rinv = (isq[:, None] * U.T) @ Ls.T
    return R, Rinv, lam


def _max_step(lam, Delta):
    """Largest alpha with diag(lam) + alpha * Delta >= 0."""
    d = 1.0 / np.sqrt(lam)
    T = Delta * np.outer(d, d)
    w = np.linalg.eigvalsh(0.5 * (T + T.T))
    wmin = w[0]
    if wmin >= -1e-14:
        return np.inf
    return 1.0 / (-wmin)


def solve(form: SdpStandardForm, settings: SolverSettings | None = None, log=None) -> SdpSolution:
    """Solve the standard form; deterministic for identical inputs."""
    settings = settings or SolverSettings()
    if form.num_vars < 1:
        raise SdpError("form must have at least one scalar variable")
    if not form.blocks:
        raise SdpError("form must have at least one block")
    for blk in form.blocks:
        if blk.coeffs.shape != (form.num_vars, blk.dim, blk.dim):
            raise SdpError(f"block {blk.name!r} coefficient stack does not conform")

    cone = _Cone([blk.dim for blk in form.blocks])
    m = form.num_vars
    # conic data: A x = b with A rows -svec(F_i); c = svec(F0)
    FS = np.zeros((m, cone.total))
    cvec = np.zeros(cone.total)
    for bi, blk in enumerate(form.blocks):
        sl = slice(cone.offsets[bi], cone.offsets[bi + 1])
        cvec[sl] = svec(blk.F0)
        for i in range(m):
            FS[i, sl] = svec(blk.coeffs[i])
    # equilibrate: rescale each scalar variable so its stacked coefficient
    # matrix has unit norm (u_i = dscale_i * u'_i); this conditions the
    # Schur systems without changing the problem
    dscale = np.array([max(np.linalg.norm(FS[i]), 1e-12) for i in range(m)])
    FS = FS / dscale[:, None]
    A = -FS
    b = -(form.c.astype(float) / dscale)
    c = cvec
    norm_b = np.linalg.norm(b)
    norm_c = np.linalg.norm(c)

    eta = max(1.0, np.sqrt(norm_c / max(1.0, np.sqrt(cone.total))), np.sqrt(norm_b / max(1.0, np.sqrt(max(m, 1)))))
    x = cone.identity(eta)
    s = cone.identity(eta)
    y = np.zeros(m)
    tau = 1.0
    kappa = 1.0
    nu = cone.degree + 1

    mu_history = []
    status = MAX_ITERATIONS
    certificate = None
    iters = 0

    def _solution_candidate():
        u = y / tau
        xc = x / tau
        sc = s / tau
        pres = np.linalg.norm(A @ xc - b) / (1.0 + norm_b)
        dres = np.linalg.norm(c - A.T @ u - sc) / (1.0 + norm_c)
        pobj = float(c @ xc)
        dobj = float(b @ u)
        gap = abs(pobj - dobj) / (1.0 + max(abs(pobj), abs(dobj)))
        return u / dscale, pres, dres, gap, dobj

    final = None
    for iters in range(settings.max_iters + 1):
        mu = (x @ s + tau * kappa) / nu
        mu_history.append(float(mu))
        u, pres, dres, gap, dobj = _solution_candidate()
        if log is not None:
            log(
                f"iter {iters:3d}  mu {mu:9.3e}  pres {pres:9.3e}  "
                f"dres {dres:9.3e}  gap {gap:9.3e}  tau {tau:9.3e}  kappa {kappa:9.3e}"
            )
        if not np.isfinite(mu) or not np.isfinite(pres) or not np.isfinite(dres):
            status = NUMERICAL_FAILURE
            final = u
            break
        if pres <= settings.tol_feas and dres <= settings.tol_feas and gap <= settings.tol_gap:
            status = OPTIMAL
            final = u
            break
        if tau <= _TAU_KAPPA_THRESHOLD * max(1.0, kappa):
            xn = np.linalg.norm(x) + 1e-300
            yn = np.linalg.norm(y) + 1e-300
            lmi_infeas = float(c @ x) / xn  # <F0, X> along the certificate
            unbounded = float(b @ y) / yn
            if lmi_infeas < -1e-12 and lmi_infeas <= -abs(unbounded) * 1e-3:
                status = PRIMAL_INFEASIBLE
                certificate = {"kind": "no-feasible-point", "X": (x / xn).tolist()}
            elif unbounded > 1e-12:
                status = DUAL_INFEASIBLE
                certificate = {"kind": "unbounded-ray", "ray": (y / dscale / yn).tolist()}
            else:
                status = NUMERICAL_FAILURE
            final = u
            break
        if iters == settings.max_iters:
            status = MAX_ITERATIONS
            final = u
            break

        # Nesterov-Todd scaling per block
        try:
            Rs, Rinvs, lams = [], [], []
            for X, S in zip(cone.mats(x), cone.mats(s)):
                R, Rinv, lam = _nt_scaling(X, S)
                Rs.append(R)
                Rinvs.append(Rinv)
                lams.append(lam)
            G = scipy.linalg.block_diag(*[_skron(R, d) for R, d in zip(Rs, cone.dims)])
            Ginv = scipy.linalg.block_diag(*[_skron(Ri, d) for Ri, d in zip(Rinvs, cone.dims)])
            Wbar = G @ G.T
            M = FS @ Wbar @ FS.T
            M = 0.5 * (M + M.T)
            try:
                Mfac = scipy.linalg.cho_factor(M + 1e-14 * np.trace(M) / max(m, 1) * np.eye(m))
            except np.linalg.LinAlgError:
                Mfac = scipy.linalg.cho_factor(M + 1e-8 * np.trace(M) / max(m, 1) * np.eye(m))
        except np.linalg.LinAlgError:
            status = NUMERICAL_FAILURE
            final = u
            break

        rp = A @ x - b * tau
        rd = -A.T @ y + c * tau - s
        rg = float(b @ y - c @ x - kappa)

        AW = A @ Wbar
        u1 = scipy.linalg.cho_solve(Mfac, b + AW @ c)

        lam_pairs = [np.add.outer(lam, lam) for lam in lams]

        def _direction_raw(r1, r2, r3, dtil, dtk):
            Gd = G @ dtil
            u2 = scipy.linalg.cho_solve(Mfac, r1 - A @ Gd - AW @ r2)
            x0v = Gd + Wbar @ r2 + Wbar @ (A.T @ u2)
            x1v = Wbar @ (A.T @ u1) - Wbar @ c
            k0 = float(b @ u2 - c @ x0v - r3)
            k1 = float(b @ u1 - c @ x1v)
            denom = kappa + tau * k1
            if abs(denom) < 1e-300:
                raise np.linalg.LinAlgError("tau/kappa system is singular")
            dtau = (dtk - tau * k0) / denom
            dy = u2 + dtau * u1
            dx = x0v + dtau * x1v
            ds = -A.T @ dy + c * dtau - r2
            dkappa = k0 + dtau * k1
            return np.concatenate([dx, dy, ds, [dtau, dkappa]])

        nx = cone.total

        def _unpack(v):
            return (v[:nx], v[nx : nx + m], v[nx + m : 2 * nx + m], v[2 * nx + m], v[2 * nx + m + 1])

        def _equation_residuals(v, r1, r2, r3, dtil, dtk):
            dx, dy, ds, dtau, dkappa = _unpack(v)
            e1 = r1 - (A @ dx - b * dtau)
            e2 = r2 - (-A.T @ dy + c * dtau - ds)
            e3 = r3 - float(b @ dy - c @ dx - dkappa)
            e4 = dtil - (Ginv @ dx + G.T @ ds)
            e5 = dtk - (kappa * dtau + tau * dkappa)
            return e1, e2, e3, e4, e5

        def direction(r1, r2, r3, dcomp_mats, dtk):
            dtil = np.concatenate(
                [svec(2.0 * D / P) for D, P in zip(dcomp_mats, lam_pairs)]
            )
            v = _direction_raw(r1, r2, r3, dtil, dtk)
            # one refinement pass keeps the residual-reduction geometry exact
            # even when the Schur system is badly conditioned near the optimum
            for _ in range(2):
                e1, e2, e3, e4, e5 = _equation_residuals(v, r1, r2, r3, dtil, dtk)
                err = max(
                    np.linalg.norm(e1), np.linalg.norm(e2), abs(e3), np.linalg.norm(e4), abs(e5)
                )
                scale = max(
                    np.linalg.norm(r1), np.linalg.norm(r2), abs(r3), np.linalg.norm(dtil), abs(dtk), 1e-30
                )
                if err <= 1e-13 * scale:
                    break
                v = v + _direction_raw(e1, e2, e3, e4, e5)
            return _unpack(v)

        def boundary(dx, ds, dtau, dkappa):
            alpha = np.inf
            dlx = cone.mats(Ginv @ dx)
            dls = cone.mats(G.T @ ds)
            for lam, Dx, Ds in zip(lams, dlx, dls):
                alpha = min(alpha, _max_step(lam, Dx), _max_step(lam, Ds))
            if dtau < 0:
                alpha = min(alpha, -tau / dtau)
            if dkappa < 0:
                alpha = min(alpha, -kappa / dkappa)
            return alpha, dlx, dls

        try:
            # predictor: pure Newton toward the optimality conditions
            aff = direction(
                -rp, -rd, -rg, [-np.diag(lam**2) for lam in lams], -tau * kappa
            )
            alpha_aff, dlx_aff, dls_aff = boundary(aff[0], aff[2], aff[3], aff[4])
            alpha_aff = min(1.0, alpha_aff)
            mu_aff = (
                (x + alpha_aff * aff[0]) @ (s + alpha_aff * aff[2])
                + (tau + alpha_aff * aff[3]) * (kappa + alpha_aff * aff[4])
            ) / nu
            sigma = float(np.clip((max(mu_aff, 0.0) / mu) ** 3, 0.0, 1.0))

            # corrector: recenter and cancel the second-order error
            dcomp = []
            for lam, Dx, Ds in zip(lams, dlx_aff, dls_aff):
                corr = 0.5 * (Dx @ Ds + Ds @ Dx)
                dcomp.append(sigma * mu * np.eye(lam.size) - np.diag(lam**2) - corr)
            dtk = sigma * mu - tau * kappa - aff[3] * aff[4]
            scalefac = 1.0 - sigma
            step = direction(
                -scalefac * rp, -scalefac * rd, -scalefac * rg, dcomp, dtk
            )
            alpha_max, _, _ = boundary(step[0], step[2], step[3], step[4])
        except np.linalg.LinAlgError:
            status = NUMERICAL_FAILURE
            final = u
            break

        alpha = min(1.0, settings.step_fraction * alpha_max)
        if not np.isfinite(alpha) or alpha <= 0:
            status = NUMERICAL_FAILURE
            final = u
            break
        x = x + alpha * step[0]
        y = y + alpha * step[1]
        s = s + alpha * step[2]
        tau = tau + alpha * step[3]
        kappa = kappa + alpha * step[4]

    u = final if final is not None else (y / max(tau, 1e-300)) / dscale
    _, pres, dres, gap, dobj = _solution_candidate()
    slacks = [float(np.linalg.eigvalsh(blk.evaluate(u))[0]) for blk in form.blocks]
    return SdpSolution(
        status=status,
        x=u,
        objective=float(form.c @ u),
        slacks=slacks,
        residuals=(float(pres), float(dres), float(gap)),
        iterations=iters,
        certificate=certificate,
        mu_history=mu_history,
    )


def check_solution(form: SdpStandardForm, solution: SdpSolution, tol: float) -> CheckReport:
    """Recompute block eigen-minima and the objective from scratch."""
    u = np.asarray(solution.x, dtype=float)
    violations = []
    min_eigs = []
    for blk in form.blocks:
        if blk.dim == 0:
            min_eigs.append(0.0)
            continue
        val = blk.evaluate(u)
        scale = max(1.0, float(np.linalg.norm(val, 2)))
        emin = float(np.linalg.eigvalsh(val)[0])
        min_eigs.append(emin)
        if emin < -tol * scale:
            violations.append((blk.name, emin))
    obj = float(form.c @ u)
    obj_err = abs(obj - solution.objective)
    if obj_err > tol * (1.0 + abs(obj)):
        violations.append(("objective", obj_err))
    return CheckReport(violations, min_eigs, obj, obj_err)
