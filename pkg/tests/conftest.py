import numpy as np
import pytest

from descfilt import daesim, synth
from descfilt.model import DescriptorPlant, NonlinearMap, parse_nonlinearity


def example_plant() -> DescriptorPlant:
    """The worked rank-1 descriptor example used throughout the suite."""
    phi = parse_nonlinearity(["0.5*sin(x2)", "0.5*sin(x1)"], 2)
    psi = NonlinearMap.zero(1, 2)
    return DescriptorPlant(
        E=[[2.0, 3.0], [4.0, 6.0]],
        A=[[1.0, 12.0], [-6.0, -15.0]],
        B=[[1.0], [1.0]],
        C=[[1.0, 0.0]],
        D=[[0.2]],
        H=0.25 * np.eye(2),
        M1=[[0.1, 0.1], [-0.2, 0.15]],
        M2=[[-0.25, 0.25]],
        N=0.1 * np.eye(2),
        phi=phi,
        psi=psi,
        gamma1=0.5,
        gamma2=0.0,
    )


PAPER_S = np.array([[1.0, 0.0], [2.0, 1.0]])
PAPER_T = np.array([[3.0, 2.0], [0.0, 1.0]])


def random_descriptor(rng, n=None, with_nonlinearity=True):
    """Random regular, impulse-free, observable, stable index-1 plant."""
    n = n or int(rng.integers(2, 5))
    s = int(rng.integers(1, n + 1))
    p = int(rng.integers(1, 3))
    q = 1
    r = int(rng.integers(1, 3))
    S = rng.normal(size=(n, n)) + 2.0 * np.eye(n)
    T = rng.normal(size=(n, n)) + 2.0 * np.eye(n)
    core = np.zeros((n, n))
    core[:s, :s] = np.eye(s)
    E = S @ core @ T
    # build the transformed dynamics with invertible algebraic block and a
    # stable reduced system, then map back
    Abar = rng.normal(size=(n, n))
    if n > s:
        Abar[s:, s:] = rng.normal(size=(n - s, n - s)) + 2.5 * np.eye(n - s)
        red = Abar[:s, :s] - Abar[:s, s:] @ np.linalg.solve(Abar[s:, s:], Abar[s:, :s])
    else:
        red = Abar[:s, :s]
    shift = max(np.max(np.linalg.eigvals(red).real), 0.0) + 1.0
    Abar[:s, :s] -= shift * np.eye(s)
    A = S @ Abar @ T
    C = rng.normal(size=(p, n))
    B = rng.normal(size=(n, q))
    D = 0.1 * rng.normal(size=(p, q))
    H = rng.normal(size=(r, n))
    if with_nonlinearity:
        c1 = round(float(rng.uniform(0.02, 0.1)), 4)
        c2 = round(float(rng.uniform(0.01, 0.05)), 4)
        phi = parse_nonlinearity(
            [f"{c1}*sin(x{(i % n) + 1})" for i in range(n)], n
        )
        psi = parse_nonlinearity([f"{c2}*sin(x{(i % n) + 1})" for i in range(p)], n)
        g1, g2 = c1, c2
    else:
        phi = NonlinearMap.zero(n, n)
        psi = NonlinearMap.zero(p, n)
        g1 = g2 = 0.0
    return DescriptorPlant(
        E=E, A=A, B=B, C=C, D=D, H=H,
        M1=np.zeros((n, 1)), M2=np.zeros((p, 1)), N=np.zeros((1, n)),
        phi=phi, psi=psi, gamma1=g1, gamma2=g2,
    )


def random_filter(rng, plant) -> synth.FilterRealization:
    """Random stable descriptor filter sharing the plant's mass matrix."""
    n, p, r = plant.n, plant.p, plant.r
    sef = daesim.semi_explicit(plant.E)
    s = sef.s
    Abar = rng.normal(size=(n, n))
    if n > s:
        Abar[s:, s:] = rng.normal(size=(n - s, n - s)) + 2.5 * np.eye(n - s)
        red = Abar[:s, :s] - Abar[:s, s:] @ np.linalg.solve(Abar[s:, s:], Abar[s:, :s])
    else:
        red = Abar[:s, :s]
    shift = max(np.max(np.linalg.eigvals(red).real), 0.0) + 1.0
    Abar[:s, :s] -= shift * np.eye(s)
    A_F = sef.S @ Abar @ sef.T
    return synth.FilterRealization(
        A_F=A_F,
        B_F=0.3 * rng.normal(size=(n, p)),
        C_F=0.5 * rng.normal(size=(r, n)),
        D_F=0.1 * rng.normal(size=(r, p)),
        E1=np.eye(n),
        E2=0.2 * rng.normal(size=(n, p)),
        E3=0.1 * rng.normal(size=(r, p)),
        E=plant.E.copy(),
    )


@pytest.fixture(scope="session")
def vi_plant():
    return example_plant()


@pytest.fixture(scope="session")
def vi_synthesis(vi_plant):
    return synth.synthesize(vi_plant, 0.25, synth.FilterStructure.dynamic(2, 1))


@pytest.fixture(scope="session")
def vi_nominal_run(vi_plant, vi_synthesis):
    scenario = daesim.Scenario.nominal(dt=1e-3)
    return daesim.run_scenario(
        vi_plant, vi_synthesis.filter, scenario, x0_plant_guess=[-14.7, 3.0]
    )


@pytest.fixture(scope="session")
def vi_disturbance_scenario():
    return daesim.Scenario(
        disturbance=parse_nonlinearity(["50*exp(-0.2*t)*cos(5*t)"], 0),
        t_span=(0.0, 10.0),
        dt=1e-3,
    )


@pytest.fixture(scope="session")
def vi_uncertain_scenario():
    return daesim.Scenario(
        disturbance=parse_nonlinearity(["50*exp(-0.2*t)*cos(5*t)"], 0),
        F_of_t=parse_nonlinearity(["t/(t+0.1)", "(t^2+0.1)/(t^2+1)"], 0),
        uncertainty_on=True,
        t_span=(0.0, 10.0),
        dt=1e-3,
    )


@pytest.fixture(scope="session")
def vi_disturbance_run(vi_plant, vi_synthesis, vi_disturbance_scenario):
    return daesim.run_scenario(
        vi_plant, vi_synthesis.filter, vi_disturbance_scenario, x0_plant_guess=[-14.7, 3.0]
    )


@pytest.fixture(scope="session")
def vi_uncertain_run(vi_plant, vi_synthesis, vi_uncertain_scenario):
    return daesim.run_scenario(
        vi_plant, vi_synthesis.filter, vi_uncertain_scenario, x0_plant_guess=[-14.7, 3.0]
    )
