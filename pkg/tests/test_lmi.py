import numpy as np
import pytest

from descfilt import lmi, synth
from descfilt.lmi import (
    IDENTITY,
    STAR,
    AffineExpr,
    LmiError,
    LmiProgram,
    block,
    canonicalize,
    evaluate,
    smat,
    svec,
)

from conftest import example_plant


# ---------------------------------------------------------------------------
# scaled symmetric vectorization
# ---------------------------------------------------------------------------

def test_svec_isometry():
    rng = np.random.default_rng(2)
    for _ in range(50):
        d = int(rng.integers(1, 8))
        A = rng.normal(size=(d, d))
        A = A + A.T
        B = rng.normal(size=(d, d))
        B = B + B.T
        assert np.vdot(A, B) == pytest.approx(float(svec(A) @ svec(B)), rel=1e-12, abs=1e-12)
        assert np.allclose(smat(svec(A), d), A, atol=1e-14)


# ---------------------------------------------------------------------------
# block assembly
# ---------------------------------------------------------------------------

def test_block_scalar_identity_star():
    prog = LmiProgram()
    x = prog.scalar("x")
    expr = block([[x.times(np.eye(1)), IDENTITY], [STAR, IDENTITY]])
    val = evaluate(expr, {x.id: 3.0})
    assert np.allclose(val, [[3.0, 1.0], [1.0, 1.0]])


def test_block_diagonal_scalar_pattern():
    # diag(-e1 I, -e1 I, -I/3) assembled from scalars
    prog = LmiProgram()
    e1 = prog.scalar("e1")
    expr = block(
        [
            [e1.times(-np.eye(2)), 0, 0],
            [0, e1.times(-np.eye(2)), 0],
            [0, 0, AffineExpr.const(-np.eye(3) / 3.0)],
        ]
    )
    val = evaluate(expr, {e1.id: 2.0})
    expected = np.diag([-2.0, -2.0, -2.0, -2.0, -1 / 3, -1 / 3, -1 / 3])
    assert np.allclose(val, expected)


def test_block_mismatch_names_cell():
    a = AffineExpr.const(np.eye(2))
    b = AffineExpr.const(np.ones((3, 3)))
    with pytest.raises(LmiError, match=r"\(0,1\)"):
        block([[a, b], [STAR, a]])


def test_star_completion_exactly_symmetric():
    prog = LmiProgram()
    G = prog.rect("G", 2, 3)
    expr = block([[AffineExpr.const(np.eye(2)), G.expr()], [STAR, AffineExpr.const(np.eye(3))]])
    rng = np.random.default_rng(0)
    for _ in range(20):
        val = evaluate(expr, {G.id: rng.normal(size=(2, 3))})
        assert np.array_equal(val, val.T)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def test_evaluate_xi4_at_identity_and_3i():
    # [[I, I-P1'],[*, I]] at P1 = I is the identity; at P1 = 3I (n=1) it has
    # eigenvalues -1 and 3
    prog = LmiProgram()
    P1 = prog.rect("P1", 1, 1)
    xi4 = block(
        [
            [AffineExpr.const(np.eye(1)), AffineExpr.const(np.eye(1)) - P1.expr(transpose=True)],
            [STAR, AffineExpr.const(np.eye(1))],
        ]
    )
    at_i = evaluate(xi4, {P1.id: np.eye(1)})
    assert np.allclose(at_i, np.eye(2))
    at_3i = evaluate(xi4, {P1.id: 3.0 * np.eye(1)})
    assert np.allclose(at_3i, [[1.0, -2.0], [-2.0, 1.0]])
    assert np.linalg.eigvalsh(at_3i)[0] == pytest.approx(-1.0)


def test_evaluate_lambda1():
    prog = LmiProgram()
    G1 = prog.rect("G1", 2, 2)
    lam1 = G1.expr() + G1.expr(transpose=True)
    val = evaluate(lam1, {G1.id: np.array([[0.0, 1.0], [0.0, 0.0]])})
    assert np.allclose(val, [[0.0, 1.0], [1.0, 0.0]])


def test_evaluate_missing_variable():
    prog = LmiProgram()
    G = prog.rect("G", 2, 2)
    with pytest.raises(LmiError, match="missing"):
        evaluate(G.expr(), {})


# ---------------------------------------------------------------------------
# canonicalize
# ---------------------------------------------------------------------------

def test_canonicalize_simple():
    prog = LmiProgram()
    x = prog.scalar("x")
    prog.add_pos_def(block([[x.times(np.eye(1)), IDENTITY], [STAR, x.times(np.eye(1))]]), "m")
    prog.set_objective({x: 1.0})
    form = canonicalize(prog)
    assert form.c.tolist() == [1.0]
    assert len(form.blocks) == 1 and form.blocks[0].dim == 2


def test_canonicalize_empty_program():
    with pytest.raises(LmiError, match="no variables"):
        canonicalize(LmiProgram())


def test_canonicalize_objective_rejects_matrix_vars():
    prog = LmiProgram()
    G = prog.rect("G", 2, 2)
    with pytest.raises(LmiError, match="non-scalar"):
        prog.set_objective({G: 1.0})


def test_canonicalize_corollary_program_counts():
    # variable-count bookkeeping done independently of the implementation:
    # scalars eps1, eps2, alpha1, alpha2 -> 4
    # CF (r*n) + DF (r*p) + G1 (n*n) + G2 (n*p) -> rectangular entries
    # X1, X2 symmetric n -> n(n+1)/2 each; Y1, Y2 -> (n-s)*n each
    plant = example_plant()
    n, p, r, s = 2, 1, 2, 1
    expected = 4 + r * n + r * p + n * n + n * p + 2 * (n * (n + 1) // 2) + 2 * ((n - s) * n)
    prog = synth.build_program(plant, 0.25, synth.FilterStructure.dynamic(n, p))
    form = canonicalize(prog)
    assert form.num_vars == expected
    names = [blk.name for blk in form.blocks]
    assert names == ["xi1", "xi2", "xi3", "xi4", "domain:X1", "domain:X2"]
    assert sum(1 for nm in names if nm.startswith("domain:")) == 2


def test_canonicalize_matches_evaluate_on_random_assignments():
    plant = example_plant()
    prog = synth.build_program(plant, 0.25, synth.FilterStructure.dynamic(2, 1))
    form = canonicalize(prog)
    rng = np.random.default_rng(5)
    constraints = {c.name: c for c in prog.constraints}
    for _ in range(100):
        assignment = {}
        x = np.empty(form.num_vars)
        for entry in form.index.entries:
            var = entry.var
            if var.kind == lmi.SCALAR:
                val = float(rng.normal())
            elif var.kind == lmi.RECTANGULAR:
                val = rng.normal(size=(var.rows, var.cols))
            else:
                val = rng.normal(size=(var.rows, var.cols))
                val = 0.5 * (val + val.T)
            assignment[var.id] = val
            assignment[var.name] = val
        x = form.index.pack(assignment)
        for blk in form.blocks:
            if blk.name.startswith("domain:"):
                continue
            con = constraints[blk.name]
            direct = evaluate(con.expr, assignment)
            if con.sense == lmi.NEG_DEF:
                direct = -direct
            recon = blk.evaluate(x)
            scale = max(1.0, np.linalg.norm(direct))
            assert np.linalg.norm(recon - direct) <= 1e-12 * scale


def test_index_round_trip():
    prog = LmiProgram()
    a = prog.scalar("a")
    G = prog.rect("G", 2, 3)
    X = prog.pos_def("X", 3)
    prog.add_pos_def(X.expr(), "dummy")
    form = canonicalize(prog)
    rng = np.random.default_rng(9)
    vals = {
        "a": 1.5,
        "G": rng.normal(size=(2, 3)),
        "X": (lambda M: M + M.T)(rng.normal(size=(3, 3))),
    }
    x = form.index.pack({prog.var(k).id: v for k, v in vals.items()})
    assert form.index.extract(x, "a") == pytest.approx(1.5)
    assert np.allclose(form.index.extract(x, "G"), vals["G"], atol=1e-14)
    assert np.allclose(form.index.extract(x, "X"), vals["X"], atol=1e-14)


def test_form_json_round_trip(tmp_path):
    prog = LmiProgram()
    x = prog.scalar("x")
    prog.add_pos_def(block([[x.times(np.eye(1)), IDENTITY], [STAR, x.times(np.eye(1))]]), "m")
    prog.set_objective({x: 1.0})
    form = canonicalize(prog)
    path = tmp_path / "form.json"
    lmi.save_form(form, path)
    clone = lmi.load_form(path)
    assert np.allclose(clone.c, form.c)
    assert clone.blocks[0].dim == form.blocks[0].dim
    assert np.allclose(clone.blocks[0].coeffs, form.blocks[0].coeffs)
