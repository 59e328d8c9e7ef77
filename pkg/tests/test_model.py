import json

import numpy as np
import pytest

from descfilt import model
from descfilt.model import (
    DescriptorPlant,
    DimensionError,
    EvaluationError,
    ExpressionError,
    ModelError,
    NonlinearMap,
    estimate_lipschitz,
    format_expression,
    orth_complement,
    parse_nonlinearity,
    plant_from_json_dict,
    plant_to_json_dict,
    validate_plant,
)

from conftest import example_plant


# ---------------------------------------------------------------------------
# validate_plant
# ---------------------------------------------------------------------------

def test_validate_example_plant():
    report = validate_plant(example_plant())
    assert report.rank_E == 1
    assert report.regular
    assert report.impulse_free
    assert report.observable
    # det(sE - A) = 54 s + 57: single finite eigenvalue at -57/54
    assert len(report.finite_eigenvalues) == 1
    assert report.finite_eigenvalues[0] == pytest.approx(-57.0 / 54.0, abs=1e-9)


def test_validate_nonsingular_state_space():
    plant = DescriptorPlant(
        E=np.eye(2), A=-np.eye(2), B=np.ones((2, 1)), C=np.eye(2), D=np.zeros((2, 1)),
        H=np.eye(2), M1=np.zeros((2, 1)), M2=np.zeros((2, 1)), N=np.zeros((1, 2)),
        phi=NonlinearMap.zero(2, 2), psi=NonlinearMap.zero(2, 2),
    )
    report = validate_plant(plant)
    assert report.rank_E == 2
    assert report.regular and report.impulse_free and report.observable


def test_validate_zero_mass_matrix_rejected():
    plant = DescriptorPlant(
        E=np.zeros((2, 2)), A=-np.eye(2), B=np.ones((2, 1)), C=np.eye(2),
        D=np.zeros((2, 1)), H=np.eye(2), M1=np.zeros((2, 1)), M2=np.zeros((2, 1)),
        N=np.zeros((1, 2)), phi=NonlinearMap.zero(2, 2), psi=NonlinearMap.zero(2, 2),
    )
    with pytest.raises(ModelError, match="rank"):
        validate_plant(plant)


def test_nonsingular_E_always_impulse_free():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(2, 5))
        E = rng.normal(size=(n, n)) + 3 * np.eye(n)
        A = rng.normal(size=(n, n))
        plant = DescriptorPlant(
            E=E, A=A, B=np.ones((n, 1)), C=np.eye(n), D=np.zeros((n, 1)), H=np.eye(n),
            M1=np.zeros((n, 1)), M2=np.zeros((n, 1)), N=np.zeros((1, n)),
            phi=NonlinearMap.zero(n, n), psi=NonlinearMap.zero(n, n),
        )
        report = validate_plant(plant)
        assert report.impulse_free


def test_dimension_mismatch_names_matrix():
    with pytest.raises(DimensionError, match="B"):
        DescriptorPlant(
            E=np.eye(2), A=np.eye(2), B=np.ones((3, 1)), C=np.eye(2), D=np.zeros((2, 1)),
            H=np.eye(2), M1=np.zeros((2, 1)), M2=np.zeros((2, 1)), N=np.zeros((1, 2)),
            phi=NonlinearMap.zero(2, 2), psi=NonlinearMap.zero(2, 2),
        )


def test_origin_condition_enforced():
    bad = parse_nonlinearity(["cos(x1)", "0"], 2)  # cos(0) = 1 != 0
    with pytest.raises(ModelError, match="phi"):
        DescriptorPlant(
            E=np.eye(2), A=-np.eye(2), B=np.ones((2, 1)), C=np.eye(2), D=np.zeros((2, 1)),
            H=np.eye(2), M1=np.zeros((2, 1)), M2=np.zeros((2, 1)), N=np.zeros((1, 2)),
            phi=bad, psi=NonlinearMap.zero(2, 2),
        )


# ---------------------------------------------------------------------------
# orth_complement
# ---------------------------------------------------------------------------

def test_orth_complement_example():
    E = np.array([[2.0, 3.0], [4.0, 6.0]])
    Eperp = orth_complement(E)
    assert Eperp.shape == (1, 2)
    direction = np.array([2.0, -1.0]) / np.sqrt(5.0)
    assert np.allclose(np.abs(Eperp[0]), np.abs(direction))
    assert np.linalg.norm(Eperp @ E) <= 1e-10 * np.linalg.norm(E)


def test_orth_complement_full_rank_and_diag():
    assert orth_complement(np.eye(2)).shape == (0, 2)
    Eperp = orth_complement(np.diag([1.0, 0.0]))
    assert np.allclose(np.abs(Eperp), [[0.0, 1.0]])


def test_orth_complement_random_property():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 7))
        s = int(rng.integers(1, n + 1))
        U = np.linalg.qr(rng.normal(size=(n, n)))[0]
        V = np.linalg.qr(rng.normal(size=(n, n)))[0]
        E = U[:, :s] @ np.diag(rng.uniform(0.5, 2.0, s)) @ V[:, :s].T
        Eperp = orth_complement(E)
        assert Eperp.shape == (n - s, n)
        assert np.linalg.norm(Eperp @ E) <= 1e-10 * max(np.linalg.norm(E), 1e-30)
        assert np.allclose(Eperp @ Eperp.T, np.eye(n - s), atol=1e-12)


# ---------------------------------------------------------------------------
# expression parsing and evaluation
# ---------------------------------------------------------------------------

def test_parse_example_nonlinearity():
    nl = parse_nonlinearity(["0.5*sin(x2)", "0.5*sin(x1)"], 2)
    a, b = 1.3, -0.4
    val = nl(np.array([a, b]))
    assert val == pytest.approx([0.5 * np.sin(b), 0.5 * np.sin(a)])


def test_parse_zero_map():
    nl = parse_nonlinearity(["0", "0"], 2)
    assert nl.is_zero
    assert np.allclose(nl(np.array([3.0, -2.0])), 0.0)


def test_parse_unknown_identifier():
    with pytest.raises(ExpressionError, match="x3"):
        parse_nonlinearity(["sin(x3)"], 2)


def test_parse_syntax_error_reports_position():
    with pytest.raises(ExpressionError, match="position"):
        parse_nonlinearity(["1 + * 2"], 1)


@pytest.mark.parametrize(
    "text",
    [
        "0.5*sin(x2)",
        "50*exp(-0.2*t)*cos(5*t)",
        "t/(t+0.1)",
        "(t^2+0.1)/(t^2+1)",
        "-x1^2 + tanh(x2)/3 - abs(x1)",
        "1.5e-3*x1 - 2e2",
    ],
)
def test_parser_round_trip(text):
    p = model._Parser(text, 2, 0)
    ast = p.parse()
    printed = format_expression(ast)
    assert model._Parser(printed, 2, 0).parse() == ast


def test_power_precedence_and_unary():
    nl = parse_nonlinearity(["-x1^2"], 1)
    assert nl(np.array([3.0]))[0] == pytest.approx(-9.0)
    nl2 = parse_nonlinearity(["2^-x1"], 1)
    assert nl2(np.array([2.0]))[0] == pytest.approx(0.25)


def test_evaluation_error_on_division_by_zero():
    nl = parse_nonlinearity(["1/t"], 0)
    with pytest.raises(EvaluationError):
        nl((), None, 0.0)


# ---------------------------------------------------------------------------
# estimate_lipschitz
# ---------------------------------------------------------------------------

def test_lipschitz_example_half_sine():
    nl = parse_nonlinearity(["0.5*sin(x2)", "0.5*sin(x1)"], 2)
    est = estimate_lipschitz(nl, [(-np.pi, np.pi)] * 2, 21)
    assert est == pytest.approx(0.5, abs=0.01)


def test_lipschitz_zero_and_identity():
    assert estimate_lipschitz(NonlinearMap.zero(2, 2), [(-1, 1)] * 2, 5) == 0.0
    ident = parse_nonlinearity(["x1", "x2"], 2)
    assert estimate_lipschitz(ident, [(-3, 2)] * 2, 5) == pytest.approx(1.0, abs=0.01)


def test_lipschitz_monotone_under_box_growth():
    nl = parse_nonlinearity(["sin(x1)*x1"], 1)
    prev = 0.0
    for half in (0.5, 1.0, 2.0, 4.0):
        est = estimate_lipschitz(nl, [(-half, half)], 9)
        assert est >= prev - 1e-12
        prev = est


def test_lipschitz_overflow_names_grid_point():
    nl = parse_nonlinearity(["exp(x1^2)"], 1)
    with pytest.raises(EvaluationError, match="grid point"):
        estimate_lipschitz(nl, [(-40.0, 40.0)], 5)


# ---------------------------------------------------------------------------
# JSON schema
# ---------------------------------------------------------------------------

def test_plant_json_round_trip(tmp_path):
    plant = example_plant()
    doc = plant_to_json_dict(plant)
    clone = plant_from_json_dict(json.loads(json.dumps(doc)))
    for name in ("E", "A", "B", "C", "D", "H", "M1", "M2", "N"):
        assert np.allclose(getattr(plant, name), getattr(clone, name))
    assert clone.phi.texts == plant.phi.texts
    assert clone.gamma1 == plant.gamma1


def test_plant_json_defaults_for_missing_uncertainty():
    doc = {
        "E": [[1.0, 0.0], [0.0, 0.0]],
        "A": [[-1.0, 0.0], [0.0, -1.0]],
        "B": [[1.0], [0.0]],
        "C": [[1.0, 0.0]],
        "D": [[0.0]],
        "H": [[1.0, 0.0]],
    }
    plant = plant_from_json_dict(doc)
    assert plant.M1.shape == (2, 1) and not plant.M1.any()
    assert plant.M2.shape == (1, 1) and not plant.M2.any()
    assert plant.N.shape == (1, 2) and not plant.N.any()
    assert plant.phi.is_zero and plant.psi.is_zero


def test_plant_json_missing_required_key():
    with pytest.raises(ModelError, match="'A'"):
        plant_from_json_dict({"E": [[1.0]]})
