"""Simulation of nonlinear descriptor plants and filters.

The mass matrix is factored as E = S diag(I_s, 0) T (rank-revealing), the
dynamics are transformed to semi-explicit coordinates xbar = T x, and
trajectories are advanced with an implicit midpoint rule on the
differential rows while Newton projection enforces the algebraic rows at
every step.  Consistent initialization solves the algebraic rows only,
keeping the differential coordinates of the guess fixed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .model import DescriptorPlant, ModelError, NonlinearMap, numerical_rank, parse_nonlinearity
from .synth import ErrorSystem, FilterRealization


class SimulationError(ValueError):
    """Decomposition, initialization, or integration failure."""


@dataclass(frozen=True)
class SemiExplicitForm:
    """Invertible S, T splitting E xdot = f into differential/algebraic rows.

    In xbar = T x coordinates the transformed mass matrix Sinv E Tinv must
    have its last n - s rows zero; its leading s rows (Mdiff) multiply the
    differential derivatives.  Decompositions built by semi_explicit() have
    Mdiff = [I_s 0] exactly, i.e. S diag(I_s, 0) T = E.
    """

    S: np.ndarray
    T: np.ndarray
    s: int
    E: np.ndarray
    Sinv: np.ndarray = field(init=False, compare=False, repr=False)
    Tinv: np.ndarray = field(init=False, compare=False, repr=False)
    Mdiff: np.ndarray = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "Sinv", np.linalg.inv(self.S))
        object.__setattr__(self, "Tinv", np.linalg.inv(self.T))
        M = self.Sinv @ self.E @ self.Tinv
        scale = max(1.0, float(np.linalg.norm(self.E)))
        alg = np.linalg.norm(M[self.s :, :])
        if alg > 1e-9 * scale:
            raise SimulationError(
                f"(S, T) do not expose the algebraic rows (residual {alg:.3e}); "
                "Sinv E Tinv must vanish below row s"
            )
        if self.s and np.linalg.matrix_rank(M[: self.s, :]) < self.s:
            raise SimulationError("differential block of Sinv E Tinv is rank deficient")
        object.__setattr__(self, "Mdiff", M[: self.s, :])

    @property
    def n(self):
        return self.S.shape[0]

    def reconstruct(self) -> np.ndarray:
        core = np.zeros((self.n, self.n))
        core[: self.s, : self.s] = np.eye(self.s)
        return self.S @ core @ self.T

    @classmethod
    def from_matrices(cls, S, T, s, E) -> "SemiExplicitForm":
        """Wrap an externally supplied decomposition after checking it."""
        return cls(
            S=np.asarray(S, dtype=float),
            T=np.asarray(T, dtype=float),
            s=int(s),
            E=np.atleast_2d(np.asarray(E, dtype=float)),
        )


def semi_explicit(E) -> SemiExplicitForm:
    """Deterministic rank-revealing decomposition E = S diag(I_s, 0) T.

    Built from the SVD with a fixed sign rule, so repeated calls agree; any
    other valid (S, T) pair is equally acceptable downstream.
    """
    E = np.atleast_2d(np.asarray(E, dtype=float))
    n = E.shape[0]
    if E.shape != (n, n):
        raise SimulationError(f"E must be square, got {E.shape}")
    s = numerical_rank(E)
    if s == 0:
        raise SimulationError("rank(E) = 0: the system has no differential part")
    U, sv, Vt = np.linalg.svd(E)
    for j in range(n):
        i = int(np.argmax(np.abs(U[:, j])))
        if U[i, j] < 0:
            U[:, j] = -U[:, j]
            Vt[j, :] = -Vt[j, :]
    S = U @ np.diag(np.concatenate([sv[:s], np.ones(n - s)]))
    return SemiExplicitForm(S=S, T=Vt, s=s, E=E)


@dataclass
class Scenario:
    """Disturbance signal, uncertainty modulation, time grid."""

    disturbance: NonlinearMap | None = None
    F_of_t: NonlinearMap | None = None
    uncertainty_on: bool = False
    t_span: tuple = (0.0, 10.0)
    dt: float = 1e-3

    def __post_init__(self):
        if self.dt <= 0 or self.t_span[1] <= self.t_span[0]:
            raise SimulationError("scenario needs dt > 0 and t_span with tf > t0")
        if self.uncertainty_on and self.F_of_t is None:
            raise SimulationError("uncertainty_on requires F_of_t")

    def w(self, t: float, q: int) -> np.ndarray:
        if self.disturbance is None:
            return np.zeros(q)
        return self.disturbance((), None, t)

    def F(self, t: float, k: int) -> np.ndarray:
        if not self.uncertainty_on or self.F_of_t is None:
            return np.zeros((k, k))
        return np.diag(self.F_of_t((), None, t))

    def validate_contraction(self, k: int, samples: int = 1000) -> float:
        """Max sampled sigma_max(F(t)); must stay <= 1 for F'F <= I."""
        worst = 0.0
        for t in np.linspace(self.t_span[0], self.t_span[1], samples):
            worst = max(worst, float(np.linalg.norm(self.F(t, k), 2)))
        if self.uncertainty_on and worst > 1.0 + 1e-12:
            raise SimulationError(f"F(t) violates F'F <= I (max sigma {worst:.6f})")
        return worst

    @classmethod
    def nominal(cls, t_span=(0.0, 10.0), dt=1e-3):
        return cls(t_span=t_span, dt=dt)

    def to_json_dict(self):
        return {
            "schema": 1,
            "disturbance": list(self.disturbance.texts) if self.disturbance else None,
            "F": list(self.F_of_t.texts) if self.F_of_t else None,
            "uncertainty_on": self.uncertainty_on,
            "t_span": list(self.t_span),
            "dt": self.dt,
        }

    @classmethod
    def from_json_dict(cls, data):
        dist = data.get("disturbance")
        fmap = data.get("F")
        return cls(
            disturbance=parse_nonlinearity(dist, 0, 0) if dist else None,
            F_of_t=parse_nonlinearity(fmap, 0, 0) if fmap else None,
            uncertainty_on=bool(data.get("uncertainty_on", False)),
            t_span=tuple(data.get("t_span", (0.0, 10.0))),
            dt=float(data.get("dt", 1e-3)),
        )


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    z_F: np.ndarray | None = None
    e: np.ndarray | None = None
    w: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)


@dataclass
class DescriptorDynamics:
    """E xdot = rhs(t, x) with a shared, possibly singular E."""

    E: np.ndarray
    rhs: object
    label: str = ""


# ---------------------------------------------------------------------------
# dynamics builders
# ---------------------------------------------------------------------------

def plant_dynamics(plant: DescriptorPlant, scenario: Scenario) -> DescriptorDynamics:
    u0 = np.zeros(plant.m)

    def rhs(t, x):
        out = plant.A @ x + plant.phi(x, u0) + plant.B @ scenario.w(t, plant.q)
        if scenario.uncertainty_on:
            out = out + plant.M1 @ (scenario.F(t, plant.k) @ (plant.N @ x))
        return out

    return DescriptorDynamics(E=plant.E, rhs=rhs, label="plant")


def measurement(plant: DescriptorPlant, x, t, scenario: Scenario) -> np.ndarray:
    u0 = np.zeros(plant.m)
    y = plant.C @ x + plant.psi(x, u0) + plant.D @ scenario.w(t, plant.q)
    if scenario.uncertainty_on:
        y = y + plant.M2 @ (scenario.F(t, plant.k) @ (plant.N @ x))
    return y


def filter_dynamics(plant: DescriptorPlant, filt: FilterRealization, y_of_t) -> DescriptorDynamics:
    u0 = np.zeros(plant.m)

    def rhs(t, xf):
        return (
            filt.A_F @ xf
            + filt.B_F @ y_of_t(t)
            + filt.E1 @ plant.phi(xf, u0)
            + filt.E2 @ plant.psi(xf, u0)
        )

    return DescriptorDynamics(E=filt.E, rhs=rhs, label="filter")


def joint_dynamics(plant: DescriptorPlant, filt: FilterRealization, scenario: Scenario) -> DescriptorDynamics:
    """Stacked [xF; x] dynamics; the filter is driven by the simulated y."""
    n = plant.n
    u0 = np.zeros(plant.m)
    Ej = scipy.linalg.block_diag(filt.E, plant.E)

    def rhs(t, xi):
        xf, x = xi[:n], xi[n:]
        y = measurement(plant, x, t, scenario)
        top = (
            filt.A_F @ xf
            + filt.B_F @ y
            + filt.E1 @ plant.phi(xf, u0)
            + filt.E2 @ plant.psi(xf, u0)
        )
        bottom = plant.A @ x + plant.phi(x, u0) + plant.B @ scenario.w(t, plant.q)
        if scenario.uncertainty_on:
            bottom = bottom + plant.M1 @ (scenario.F(t, plant.k) @ (plant.N @ x))
        return np.concatenate([top, bottom])

    return DescriptorDynamics(E=Ej, rhs=rhs, label="joint")


def error_dynamics(plant: DescriptorPlant, errsys: ErrorSystem, scenario: Scenario) -> DescriptorDynamics:
    """The assembled augmented form driven by Omega(xi) and w."""
    n = plant.n
    u0 = np.zeros(plant.m)

    def omega(xi):
        xf, x = xi[:n], xi[n:]
        return np.concatenate(
            [plant.phi(x, u0), plant.psi(x, u0), plant.phi(xf, u0), plant.psi(xf, u0)]
        )

    def rhs(t, xi):
        out = errsys.Atilde @ xi + errsys.S1 @ omega(xi) + errsys.Btilde @ scenario.w(t, plant.q)
        if scenario.uncertainty_on:
            out = out + errsys.Mtilde1 @ (scenario.F(t, plant.k) @ (errsys.Ntilde @ xi))
        return out

    return DescriptorDynamics(E=errsys.Etilde, rhs=rhs, label="error-system")


# ---------------------------------------------------------------------------
# consistent initialization and integration
# ---------------------------------------------------------------------------

def _transformed_rhs(dyn: DescriptorDynamics, sef: SemiExplicitForm):
    Sinv, Tinv = sef.Sinv, sef.Tinv

    def F(t, z):
        return Sinv @ dyn.rhs(t, Tinv @ z)

    return F


def _consistent_init_transformed(Ft, z_guess, s, tol=1e-10, max_iter=50):
    """Newton on the algebraic rows over the algebraic coordinates only."""
    n = z_guess.size
    na = n - s
    z = z_guess.copy()
    if na == 0:
        return z, 0.0
    for _ in range(max_iter):
        res = Ft(0.0, z)[s:]
        if np.linalg.norm(res) <= tol:
            return z, float(np.linalg.norm(res))
        J = np.empty((na, na))
        for j in range(na):
            h = 1e-7 * (1.0 + abs(z[s + j]))
            zp = z.copy()
            zp[s + j] += h
            zm = z.copy()
            zm[s + j] -= h
            J[:, j] = (Ft(0.0, zp)[s:] - Ft(0.0, zm)[s:]) / (2 * h)
        try:
            step = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError as exc:
            raise SimulationError("consistent initialization: singular algebraic Jacobian") from exc
        z[s:] += step
    res = float(np.linalg.norm(Ft(0.0, z)[s:]))
    raise SimulationError(
        f"consistent initialization did not converge in {max_iter} Newton steps "
        f"(residual {res:.3e})"
    )


def consistent_init_dynamics(dyn: DescriptorDynamics, guess, sef: SemiExplicitForm | None = None, t0=0.0):
    sef = sef or semi_explicit(dyn.E)
    base = _transformed_rhs(dyn, sef)
    Ft = lambda t, z: base(t + t0, z)
    z0, _ = _consistent_init_transformed(Ft, sef.T @ np.asarray(guess, dtype=float), sef.s)
    return sef.Tinv @ z0


def consistent_init(
    plant: DescriptorPlant,
    guess,
    u=None,
    scenario: Scenario | None = None,
    sef: SemiExplicitForm | None = None,
) -> np.ndarray:
    """Project a guess onto the plant's algebraic manifold at t0.

    The differential coordinates of T @ guess are held fixed; Newton solves
    the n - s algebraic rows for the remaining coordinates.
    """
    scenario = scenario or Scenario.nominal()
    dyn = plant_dynamics(plant, scenario)
    sef = sef or semi_explicit(plant.E)
    return consistent_init_dynamics(dyn, guess, sef, t0=scenario.t_span[0])


def integrate(
    dyn: DescriptorDynamics,
    x0,
    scenario: Scenario,
    sef: SemiExplicitForm | None = None,
    newton_tol=1e-11,
    algebraic_tol=1e-9,
    max_newton=25,
) -> Trajectory:
    """Fixed-step implicit midpoint + algebraic Newton projection.

    Requires x0 consistent to 1e-8; keeps the algebraic residual below
    `algebraic_tol` at every accepted step.
    """
    sef = sef or semi_explicit(dyn.E)
    F = _transformed_rhs(dyn, sef)
    s = sef.s
    n = sef.n
    t0, tf = scenario.t_span
    dt = scenario.dt
    steps = int(round((tf - t0) / dt))
    x0 = np.asarray(x0, dtype=float)
    z = sef.T @ x0
    init_res = np.linalg.norm(F(t0, z)[s:]) if s < n else 0.0
    if init_res > 1e-8 * (1.0 + np.linalg.norm(z)):
        raise SimulationError(f"x0 is inconsistent (algebraic residual {init_res:.3e})")

    times = t0 + dt * np.arange(steps + 1)
    states = np.empty((steps + 1, n))
    states[0] = x0
    newton_iters = 0

    Mdiff = sef.Mdiff

    def residual(t_new, t_mid, z_old, z_new):
        r = np.empty(n)
        r[:s] = Mdiff @ (z_new - z_old) - dt * F(t_mid, 0.5 * (z_old + z_new))[:s]
        if s < n:
            r[s:] = F(t_new, z_new)[s:]
        return r

    def fd_jacobian(t_new, t_mid, z_old, z_new):
        J = np.empty((n, n))
        for j in range(n):
            h = 1e-7 * (1.0 + abs(z_new[j]))
            zp = z_new.copy()
            zp[j] += h
            zm = z_new.copy()
            zm[j] -= h
            J[:, j] = (residual(t_new, t_mid, z_old, zp) - residual(t_new, t_mid, z_old, zm)) / (2 * h)
        return J

    Wlead = Mdiff[:, :s] if s else np.zeros((0, 0))
    lead_ok = s > 0 and abs(np.linalg.det(Wlead)) > 1e-12
    lu = None  # simplified Newton: the factored Jacobian persists across steps

    def newton(t_new, t_mid, z_old, z_start, lu):
        z_new = z_start.copy()
        scale = 1.0 + np.linalg.norm(z_old)
        for it in range(max_newton):
            r = residual(t_new, t_mid, z_old, z_new)
            if np.linalg.norm(r) <= newton_tol * scale and (
                s == n or np.linalg.norm(r[s:]) <= algebraic_tol
            ):
                return z_new, it
            z_new = z_new - scipy.linalg.lu_solve(lu, r)
        return None, max_newton

    for kstep in range(steps):
        t = times[kstep]
        t_new = times[kstep + 1]
        t_mid = t + 0.5 * dt
        # predictor: explicit Euler on the differential part
        z_pred = z.copy()
        if lead_ok:
            z_pred[:s] = z[:s] + dt * np.linalg.solve(Wlead, F(t, z)[:s])
        if lu is None:
            lu = scipy.linalg.lu_factor(fd_jacobian(t_new, t_mid, z, z_pred))
        z_new, used = newton(t_new, t_mid, z, z_pred, lu)
        if z_new is None or used > 4:
            lu = scipy.linalg.lu_factor(fd_jacobian(t_new, t_mid, z, z_pred))
            if z_new is None:
                z_new, used = newton(t_new, t_mid, z, z_pred, lu)
        newton_iters += used
        if z_new is None:
            raise SimulationError(f"Newton did not converge at t = {t_new:.6f}")
        z = z_new
        states[kstep + 1] = sef.Tinv @ z

    return Trajectory(
        times=times,
        states=states,
        metadata={"newton_iterations": newton_iters, "dt": dt, "steps": steps, "label": dyn.label},
    )


def l2_gain(e, w, dt) -> float:
    """sqrt of the trapezoidal energy ratio int ||e||^2 / int ||w||^2."""
    e = np.atleast_2d(np.asarray(e, dtype=float))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if e.ndim == 2 and e.shape[0] == 1 and e.shape[1] > 1:
        pass
    e2 = np.sum(e * e, axis=-1) if e.ndim == 2 else e * e
    w2 = np.sum(w * w, axis=-1) if w.ndim == 2 else w * w
    energy_w = float(np.trapezoid(w2, dx=dt))
    if energy_w <= 0.0:
        raise SimulationError("disturbance energy is zero; the gain ratio is undefined")
    energy_e = float(np.trapezoid(e2, dx=dt))
    return float(np.sqrt(energy_e / energy_w))


def run_scenario(
    plant: DescriptorPlant,
    filt: FilterRealization,
    scenario: Scenario,
    x0_plant_guess=None,
    x0_filter_guess=None,
) -> Trajectory:
    """Consistent-initialize plant and filter separately, integrate jointly.

    Records z = Hx, the filter output z_F, the error e = z - z_F, and the
    disturbance; attaches the measured L2 gain whenever w carries energy.
    """
    n, q = plant.n, plant.q
    if scenario.uncertainty_on:
        scenario.validate_contraction(plant.k)
    x0_plant_guess = np.zeros(n) if x0_plant_guess is None else np.asarray(x0_plant_guess, float)
    x0_filter_guess = np.zeros(n) if x0_filter_guess is None else np.asarray(x0_filter_guess, float)
    t0 = scenario.t_span[0]
    sef = semi_explicit(plant.E)

    x0 = consistent_init(plant, x0_plant_guess, scenario=scenario, sef=sef)
    y0 = measurement(plant, x0, t0, scenario)
    fdyn = filter_dynamics(plant, filt, lambda t: y0)
    xf0 = consistent_init_dynamics(fdyn, x0_filter_guess, sef, t0=t0)

    jdyn = joint_dynamics(plant, filt, scenario)
    jsef = semi_explicit(jdyn.E)
    traj = integrate(jdyn, np.concatenate([xf0, x0]), scenario, sef=jsef)

    u0 = np.zeros(plant.m)
    m_samples = traj.times.size
    y = np.empty((m_samples, plant.p))
    z = np.empty((m_samples, plant.r))
    z_F = np.empty((m_samples, plant.r))
    w = np.empty((m_samples, q))
    for i, t in enumerate(traj.times):
        xf = traj.states[i, :n]
        x = traj.states[i, n:]
        w[i] = scenario.w(t, q)
        y[i] = measurement(plant, x, t, scenario)
        z[i] = plant.H @ x
        z_F[i] = filt.C_F @ xf + filt.D_F @ y[i] + filt.E3 @ plant.psi(xf, u0)
    e = z - z_F
    metadata = dict(traj.metadata)
    if np.trapezoid(np.sum(w * w, axis=1), dx=scenario.dt) > 0:
        metadata["l2_gain"] = l2_gain(e, w, scenario.dt)
    else:
        metadata["l2_gain"] = None
    metadata["x0_plant"] = x0.tolist()
    metadata["x0_filter"] = xf0.tolist()
    return Trajectory(times=traj.times, states=traj.states, y=y, z=z, z_F=z_F, e=e, w=w, metadata=metadata)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def trajectory_to_csv(traj: Trajectory, path):
    """Columns t, x*, z*, zF*, e*, w* with a header row."""
    cols = [("t", traj.times.reshape(-1, 1)), ("x", traj.states)]
    for name, arr in (("z", traj.z), ("zF", traj.z_F), ("e", traj.e), ("w", traj.w)):
        if arr is not None:
            cols.append((name, arr))
    header = []
    blocks = []
    for name, arr in cols:
        width = arr.shape[1]
        if name == "t":
            header.append("t")
        else:
            header.extend(f"{name}{i + 1}" for i in range(width))
        blocks.append(arr)
    data = np.hstack(blocks)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return Scenario.from_json_dict(json.load(fh))


def save_scenario(scenario: Scenario, path):
    with open(path, "w") as fh:
        json.dump(scenario.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
