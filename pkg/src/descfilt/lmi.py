"""Affine matrix expressions, LMI programs, and conic standard-form data.

An AffineExpr is a constant matrix plus terms L @ V @ R (optionally with V
transposed) in named decision variables; scalar variables contribute
v * (L @ R).  Programs collect symmetric definiteness constraints and a
linear objective over scalar variables, and canonicalize to dense
block-PSD standard form

    minimize c' u   subject to  F0_b + sum_i u_i F_i_b  >= 0  for each block,

with symmetric matrices scalarized by the sqrt(2)-scaled upper-triangle
vectorization so matrix inner products match vector dot products.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

SQRT2 = float(np.sqrt(2.0))


class LmiError(ValueError):
    """Malformed expression, block grid, or program."""


# ---------------------------------------------------------------------------
# scaled symmetric vectorization
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _svec_indices(dim):
    rows, cols = np.triu_indices(dim)
    scale = np.where(rows == cols, 1.0, SQRT2)
    return rows, cols, scale


def svec_dim(dim: int) -> int:
    return dim * (dim + 1) // 2


def svec(M: np.ndarray) -> np.ndarray:
    """Scaled upper-triangle vectorization; an isometry on symmetric matrices."""
    rows, cols, scale = _svec_indices(M.shape[0])
    return M[rows, cols] * scale


def smat(v: np.ndarray, dim: int) -> np.ndarray:
    """Inverse of svec."""
    rows, cols, scale = _svec_indices(dim)
    M = np.zeros((dim, dim))
    M[rows, cols] = v / scale
    M[cols, rows] = M[rows, cols]
    return M


# ---------------------------------------------------------------------------
# variables and affine expressions
# ---------------------------------------------------------------------------

SCALAR = "scalar"
RECTANGULAR = "rectangular"
SYMMETRIC = "symmetric"
POS_DEF = "positive-definite"


@dataclass(frozen=True)
class Variable:
    id: int
    name: str
    kind: str
    rows: int
    cols: int

    @property
    def scalar_size(self):
        if self.kind == SCALAR:
            return 1
        if self.kind == RECTANGULAR:
            return self.rows * self.cols
        return svec_dim(self.rows)

    def expr(self, L=None, R=None, transpose=False) -> "AffineExpr":
        """Affine atom L @ V @ R (or L @ V.T @ R); v * (L @ R) for scalars."""
        vr, vc = self.rows, self.cols
        if transpose:
            vr, vc = vc, vr
        if self.kind == SCALAR:
            if L is None or R is None:
                raise LmiError(f"scalar variable {self.name!r} needs explicit L and R")
            L = np.atleast_2d(np.asarray(L, dtype=float))
            R = np.atleast_2d(np.asarray(R, dtype=float))
            if L.shape[1] != R.shape[0]:
                raise LmiError(f"L/R shapes do not chain for scalar {self.name!r}")
        else:
            L = np.eye(vr) if L is None else np.atleast_2d(np.asarray(L, dtype=float))
            R = np.eye(vc) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
            if L.shape[1] != vr or R.shape[0] != vc:
                raise LmiError(
                    f"multipliers do not conform to variable {self.name!r}: "
                    f"L {L.shape}, V ({vr},{vc}), R {R.shape}"
                )
        shape = (L.shape[0], R.shape[1])
        return AffineExpr(
            shape[0], shape[1], np.zeros(shape), ((self.id, L, R, bool(transpose)),)
        )

    def times(self, M) -> "AffineExpr":
        """Scalar variable times a constant matrix."""
        if self.kind != SCALAR:
            raise LmiError("times() is for scalar variables")
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return self.expr(L=M, R=np.eye(M.shape[1]))

    @property
    def T(self):
        return self.expr(transpose=True)


@dataclass(frozen=True)
class AffineExpr:
    """constant + sum of terms (var_id, L, R, transpose)."""

    rows: int
    cols: int
    constant: np.ndarray
    terms: tuple = ()

    @classmethod
    def const(cls, M) -> "AffineExpr":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return cls(M.shape[0], M.shape[1], M)

    @classmethod
    def zeros(cls, rows, cols) -> "AffineExpr":
        return cls(rows, cols, np.zeros((rows, cols)))

    def _check_same_shape(self, other):
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise LmiError(
                f"shape mismatch: ({self.rows},{self.cols}) vs ({other.rows},{other.cols})"
            )

    def __add__(self, other):
        if isinstance(other, Variable):
            other = other.expr()
        if not isinstance(other, AffineExpr):
            other = AffineExpr.const(other)
        self._check_same_shape(other)
        return AffineExpr(
            self.rows, self.cols, self.constant + other.constant, self.terms + other.terms
        )

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if isinstance(other, Variable):
            other = other.expr()
        if not isinstance(other, AffineExpr):
            other = AffineExpr.const(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, a: float) -> "AffineExpr":
        return AffineExpr(
            self.rows,
            self.cols,
            a * self.constant,
            tuple((vid, a * L, R, tr) for vid, L, R, tr in self.terms),
        )

    def left(self, M) -> "AffineExpr":
        """Constant left multiplication M @ expr."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[1] != self.rows:
            raise LmiError(f"left multiplier {M.shape} does not conform to {self.rows} rows")
        return AffineExpr(
            M.shape[0],
            self.cols,
            M @ self.constant,
            tuple((vid, M @ L, R, tr) for vid, L, R, tr in self.terms),
        )

    def right(self, M) -> "AffineExpr":
        """Constant right multiplication expr @ M."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[0] != self.cols:
            raise LmiError(f"right multiplier {M.shape} does not conform to {self.cols} cols")
        return AffineExpr(
            self.rows,
            M.shape[1],
            self.constant @ M,
            tuple((vid, L, R @ M, tr) for vid, L, R, tr in self.terms),
        )

    @property
    def T(self) -> "AffineExpr":
        return AffineExpr(
            self.cols,
            self.rows,
            self.constant.T.copy(),
            tuple((vid, R.T, L.T, not tr) for vid, L, R, tr in self.terms),
        )

    def sym(self) -> "AffineExpr":
        """Symmetric part (expr + expr.T) / 2."""
        if self.rows != self.cols:
            raise LmiError("sym() needs a square expression")
        return (self + self.T).scale(0.5)


def evaluate(expr: AffineExpr, assignment: dict) -> np.ndarray:
    """Evaluate an affine expression at concrete variable values.

    `assignment` maps variable ids (or Variable instances via .id) to arrays;
    scalar variables take floats.
    """
    out = expr.constant.copy()
    for vid, L, R, tr in expr.terms:
        if vid not in assignment:
            raise LmiError(f"assignment is missing variable id {vid}")
        val = assignment[vid]
        if np.ndim(val) == 0:
            out += float(val) * (L @ R)
        else:
            V = np.atleast_2d(np.asarray(val, dtype=float))
            out += L @ (V.T if tr else V) @ R
    return out


# ---------------------------------------------------------------------------
# block assembly with star completion
# ---------------------------------------------------------------------------

STAR = "*"
IDENTITY = "I"


def block(grid) -> AffineExpr:
    """Assemble a block matrix of AffineExpr / 0 / "I" / "*" placeholders.

    "*" mirrors the transposed block from the upper triangle; identity and
    zero cells take their sizes from the surrounding expressions.
    """
    nr = len(grid)
    nc = len(grid[0])
    if any(len(row) != nc for row in grid):
        raise LmiError("grid rows must have equal length")
    heights = [None] * nr
    widths = [None] * nc

    def learn(i, j, h, w):
        for store, idx, val in ((heights, i, h), (widths, j, w)):
            if store[idx] is None:
                store[idx] = val
            elif store[idx] != val:
                raise LmiError(f"inconsistent block dimensions at cell ({i},{j})")

    cells = [[None] * nc for _ in range(nr)]
    for i in range(nr):
        for j in range(nc):
            entry = grid[i][j]
            if isinstance(entry, Variable):
                entry = entry.expr()
            if isinstance(entry, AffineExpr):
                cells[i][j] = entry
                learn(i, j, entry.rows, entry.cols)
            elif isinstance(entry, np.ndarray):
                cells[i][j] = AffineExpr.const(entry)
                learn(i, j, cells[i][j].rows, cells[i][j].cols)
            elif entry is STAR:
                cells[i][j] = STAR
            elif entry is IDENTITY:
                cells[i][j] = IDENTITY
            elif isinstance(entry, (int, float)) and entry == 0:
                cells[i][j] = None
            else:
                raise LmiError(f"unsupported grid entry at cell ({i},{j}): {entry!r}")

    # fixpoint: identity cells become constants once sized; star cells
    # inherit transposed dimensions from their (possibly resolved) mirrors
    for _ in range(2 * (nr + nc) + 2):
        changed = False
        for i in range(nr):
            for j in range(nc):
                cell = cells[i][j]
                if cell is IDENTITY:
                    if heights[i] is None and widths[j] is not None:
                        heights[i] = widths[j]
                        changed = True
                    if widths[j] is None and heights[i] is not None:
                        widths[j] = heights[i]
                        changed = True
                    if heights[i] is not None and widths[j] is not None:
                        if heights[i] != widths[j]:
                            raise LmiError(f"identity cell ({i},{j}) is not square")
                        cells[i][j] = AffineExpr.const(np.eye(heights[i]))
                        changed = True
                elif cell is STAR:
                    if j >= nr or i >= nc:
                        raise LmiError(f"star cell ({i},{j}) has no mirror at ({j},{i})")
                    mirror = cells[j][i]
                    if isinstance(mirror, AffineExpr):
                        learn(i, j, mirror.cols, mirror.rows)
        if not changed:
            break
    for i in range(nr):
        for j in range(nc):
            if cells[i][j] is STAR and not isinstance(cells[j][i], AffineExpr):
                raise LmiError(f"star cell ({i},{j}) has no expression mirror at ({j},{i})")
            if cells[i][j] is IDENTITY:
                raise LmiError(f"cannot infer the size of identity cell ({i},{j})")
    for i, h in enumerate(heights):
        if h is None:
            raise LmiError(f"cannot infer height of block row {i}")
    for j, w in enumerate(widths):
        if w is None:
            raise LmiError(f"cannot infer width of block column {j}")

    total_r = sum(heights)
    total_c = sum(widths)
    roff = np.concatenate([[0], np.cumsum(heights)]).astype(int)
    coff = np.concatenate([[0], np.cumsum(widths)]).astype(int)

    constant = np.zeros((total_r, total_c))
    terms = []
    for i in range(nr):
        for j in range(nc):
            cell = cells[i][j]
            if cell is None:
                continue
            if cell is IDENTITY:
                if heights[i] != widths[j]:
                    raise LmiError(f"identity cell ({i},{j}) is not square")
                cell = AffineExpr.const(np.eye(heights[i]))
            if cell is STAR:
                cell = cells[j][i].T
            if cell.rows != heights[i] or cell.cols != widths[j]:
                raise LmiError(
                    f"cell ({i},{j}) has shape ({cell.rows},{cell.cols}), "
                    f"expected ({heights[i]},{widths[j]})"
                )
            rs, cs = roff[i], coff[j]
            constant[rs : rs + cell.rows, cs : cs + cell.cols] += cell.constant
            for vid, L, R, tr in cell.terms:
                Lp = np.zeros((total_r, L.shape[1]))
                Lp[rs : rs + L.shape[0]] = L
                Rp = np.zeros((R.shape[0], total_c))
                Rp[:, cs : cs + R.shape[1]] = R
                terms.append((vid, Lp, Rp, tr))
    return AffineExpr(total_r, total_c, constant, tuple(terms))


def diag_blocks(exprs) -> AffineExpr:
    """Block-diagonal assembly."""
    n = len(exprs)
    grid = [[0] * n for _ in range(n)]
    for i, e in enumerate(exprs):
        grid[i][i] = e
    return block(grid)


# ---------------------------------------------------------------------------
# programs
# ---------------------------------------------------------------------------

NEG_DEF = "<0"
POS_DEF_SENSE = ">0"


@dataclass
class Constraint:
    name: str
    expr: AffineExpr
    sense: str


class LmiProgram:
    """Decision variables, symmetric constraints, linear scalar objective."""

    def __init__(self):
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective: dict[int, float] = {}
        self._names = {}

    def _new_var(self, name, kind, rows, cols):
        if name in self._names:
            raise LmiError(f"duplicate variable name {name!r}")
        var = Variable(len(self.variables), name, kind, rows, cols)
        self.variables.append(var)
        self._names[name] = var
        return var

    def scalar(self, name) -> Variable:
        return self._new_var(name, SCALAR, 1, 1)

    def rect(self, name, rows, cols) -> Variable:
        return self._new_var(name, RECTANGULAR, rows, cols)

    def symmetric(self, name, dim) -> Variable:
        return self._new_var(name, SYMMETRIC, dim, dim)

    def pos_def(self, name, dim) -> Variable:
        return self._new_var(name, POS_DEF, dim, dim)

    def var(self, name) -> Variable:
        return self._names[name]

    def has_var(self, name) -> bool:
        return name in self._names

    def add_neg_def(self, expr: AffineExpr, name="") -> None:
        """Constrain expr < 0 (expression symmetrized at build)."""
        self.constraints.append(Constraint(name or f"c{len(self.constraints)}", expr.sym(), NEG_DEF))

    def add_pos_def(self, expr: AffineExpr, name="") -> None:
        """Constrain expr > 0 (expression symmetrized at build)."""
        self.constraints.append(Constraint(name or f"c{len(self.constraints)}", expr.sym(), POS_DEF_SENSE))

    def set_objective(self, coeffs: dict) -> None:
        """Minimize sum of coeff * scalar variable."""
        cleaned = {}
        for var, coeff in coeffs.items():
            if isinstance(var, Variable):
                if var.kind != SCALAR:
                    raise LmiError(f"objective references non-scalar variable {var.name!r}")
                cleaned[var.id] = float(coeff)
            else:
                cleaned[int(var)] = float(coeff)
        for vid in cleaned:
            if self.variables[vid].kind != SCALAR:
                raise LmiError(f"objective references non-scalar variable id {vid}")
        self.objective = cleaned


# ---------------------------------------------------------------------------
# standard form
# ---------------------------------------------------------------------------

@dataclass
class IndexEntry:
    var: Variable
    offset: int
    size: int


class VariableIndex:
    """Invertible map between named variables and the scalarized vector."""

    def __init__(self, variables):
        self.entries = []
        off = 0
        for var in variables:
            size = var.scalar_size
            self.entries.append(IndexEntry(var, off, size))
            off += size
        self.total = off
        self._by_name = {e.var.name: e for e in self.entries}
        self._by_id = {e.var.id: e for e in self.entries}

    def basis_assignment(self, coord: int) -> dict:
        """Assignment with scalarized coordinate `coord` = 1, all else 0."""
        values = self.zero_assignment()
        for e in self.entries:
            if e.offset <= coord < e.offset + e.size:
                local = coord - e.offset
                var = e.var
                if var.kind == SCALAR:
                    values[var.id] = 1.0
                elif var.kind == RECTANGULAR:
                    M = np.zeros((var.rows, var.cols))
                    M[divmod(local, var.cols)] = 1.0
                    values[var.id] = M
                else:
                    v = np.zeros(e.size)
                    v[local] = 1.0
                    values[var.id] = smat(v, var.rows)
                return values
        raise LmiError(f"coordinate {coord} out of range")

    def zero_assignment(self) -> dict:
        values = {}
        for e in self.entries:
            var = e.var
            if var.kind == SCALAR:
                values[var.id] = 0.0
            else:
                values[var.id] = np.zeros((var.rows, var.cols))
        return values

    def extract(self, x: np.ndarray, name: str):
        e = self._by_name[name]
        chunk = x[e.offset : e.offset + e.size]
        var = e.var
        if var.kind == SCALAR:
            return float(chunk[0])
        if var.kind == RECTANGULAR:
            return chunk.reshape(var.rows, var.cols).copy()
        return smat(chunk, var.rows)

    def extract_all(self, x: np.ndarray) -> dict:
        return {e.var.name: self.extract(x, e.var.name) for e in self.entries}

    def pack(self, assignment: dict) -> np.ndarray:
        x = np.zeros(self.total)
        for e in self.entries:
            var = e.var
            val = assignment[var.id if var.id in assignment else var.name]
            if var.kind == SCALAR:
                x[e.offset] = float(val)
            elif var.kind == RECTANGULAR:
                x[e.offset : e.offset + e.size] = np.asarray(val, dtype=float).ravel()
            else:
                x[e.offset : e.offset + e.size] = svec(np.asarray(val, dtype=float))
        return x

    def objective_vector(self, objective: dict) -> np.ndarray:
        c = np.zeros(self.total)
        for vid, coeff in objective.items():
            c[self._by_id[vid].offset] = coeff
        return c


@dataclass
class SdpBlock:
    name: str
    dim: int
    F0: np.ndarray
    coeffs: np.ndarray  # (nvars_scalarized, dim, dim)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.F0 + np.tensordot(x, self.coeffs, axes=1)


@dataclass
class SdpStandardForm:
    c: np.ndarray
    blocks: list
    index: VariableIndex

    @property
    def num_vars(self):
        return self.c.size


def canonicalize(program: LmiProgram) -> SdpStandardForm:
    """Scalarize an LmiProgram into block-PSD standard form.

    Negative-definite constraints are negated; positive-definite variable
    domains are appended as PSD blocks.  Block reconstruction at any point
    matches AffineExpr evaluation exactly up to round-off.
    """
    if not program.variables:
        raise LmiError("program has no variables")
    if not program.constraints:
        raise LmiError("program has no constraints")
    index = VariableIndex(program.variables)
    c = index.objective_vector(program.objective)

    blocks = []
    zero = index.zero_assignment()
    bases = [index.basis_assignment(j) for j in range(index.total)]
    for con in program.constraints:
        expr = con.expr if con.sense == POS_DEF_SENSE else con.expr.scale(-1.0)
        F0 = evaluate(expr, zero)
        F0 = 0.5 * (F0 + F0.T)
        coeffs = np.empty((index.total, expr.rows, expr.cols))
        for j in range(index.total):
            Fj = evaluate(expr, bases[j]) - F0
            coeffs[j] = 0.5 * (Fj + Fj.T)
        blocks.append(SdpBlock(con.name, expr.rows, F0, coeffs))
    for e in index.entries:
        if e.var.kind == POS_DEF:
            dim = e.var.rows
            F0 = np.zeros((dim, dim))
            coeffs = np.zeros((index.total, dim, dim))
            rows, cols, scale = _svec_indices(dim)
            for local in range(e.size):
                M = np.zeros((dim, dim))
                M[rows[local], cols[local]] = 1.0 / scale[local]
                M[cols[local], rows[local]] = 1.0 / scale[local]
                coeffs[e.offset + local] = M
            blocks.append(SdpBlock(f"domain:{e.var.name}", dim, F0, coeffs))
    return SdpStandardForm(c=c, blocks=blocks, index=index)


# ---------------------------------------------------------------------------
# debug dump for external cross-checks
# ---------------------------------------------------------------------------

def form_to_json_dict(form: SdpStandardForm) -> dict:
    return {
        "schema": 1,
        "c": form.c.tolist(),
        "variables": [
            {
                "name": e.var.name,
                "kind": e.var.kind,
                "rows": e.var.rows,
                "cols": e.var.cols,
                "offset": e.offset,
                "size": e.size,
            }
            for e in form.index.entries
        ],
        "blocks": [
            {
                "name": b.name,
                "dim": b.dim,
                "F0": b.F0.tolist(),
                "coeffs": b.coeffs.tolist(),
            }
            for b in form.blocks
        ],
    }


def form_from_json_dict(data: dict) -> SdpStandardForm:
    variables = []
    for spec in data["variables"]:
        variables.append(
            Variable(len(variables), spec["name"], spec["kind"], spec["rows"], spec["cols"])
        )
    index = VariableIndex(variables)
    blocks = [
        SdpBlock(
            b["name"],
            int(b["dim"]),
            np.asarray(b["F0"], dtype=float),
            np.asarray(b["coeffs"], dtype=float),
        )
        for b in data["blocks"]
    ]
    return SdpStandardForm(c=np.asarray(data["c"], dtype=float), blocks=blocks, index=index)


def save_form(form: SdpStandardForm, path):
    with open(path, "w") as fh:
        json.dump(form_to_json_dict(form), fh, sort_keys=True)
        fh.write("\n")


def load_form(path) -> SdpStandardForm:
    with open(path) as fh:
        return form_from_json_dict(json.load(fh))
