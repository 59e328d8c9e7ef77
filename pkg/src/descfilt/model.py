"""Descriptor-plant data model, pencil validation, and nonlinearity carriers.

The plant is

    E xdot = (A + dA(t)) x + phi(x, u) + B w
    y      = (C + dC(t)) x + psi(x, u) + D w
    z      = H x

with a possibly singular mass matrix E, norm-bounded structured uncertainty
[dA; dC] = [M1; M2] F(t) N (F'F <= I), and Lipschitz nonlinearities phi, psi.
Nonlinear maps are carried as parsed expressions over x1..xn, u1..um, t so
that plants, disturbance signals and uncertainty modulations serialize to
plain JSON.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.linalg

# Singular values below RANK_RTOL * sigma_max count as zero everywhere.
RANK_RTOL = 1e-9


class ModelError(ValueError):
    """Base error for plant/expression problems."""


class DimensionError(ModelError):
    """A matrix does not conform to the plant dimensions."""


class ExpressionError(ModelError):
    """Syntax or identifier error while parsing an expression."""


class EvaluationError(ModelError):
    """Expression evaluation failed (overflow, division by zero, ...)."""


# ---------------------------------------------------------------------------
# expression language:  + - * / ^  sin cos tanh exp abs, vars x1..xn u1..um t
# ---------------------------------------------------------------------------

_FUNCTIONS = {
    "sin": math.sin,
    "cos": math.cos,
    "tanh": math.tanh,
    "exp": math.exp,
    "abs": abs,
}

_NUM_RE = re.compile(r"(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


def _tokenize(text):
    tokens = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        m = _NUM_RE.match(text, i)
        if m:
            tokens.append(("num", float(m.group()), i))
            i = m.end()
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            tokens.append(("ident", m.group(), i))
            i = m.end()
            continue
        if ch in "+-*/^()":
            tokens.append((ch, ch, i))
            i += 1
            continue
        raise ExpressionError(f"unexpected character {ch!r} at position {i}")
    tokens.append(("end", None, len(text)))
    return tokens


class _Parser:
    """Recursive-descent parser producing tuple ASTs.

    Nodes: ('num', v) with v >= 0, ('x', i), ('u', i), ('t',),
    ('neg', a), ('bin', op, a, b), ('call', name, a).
    """

    def __init__(self, text, n, m):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0
        self.n = n
        self.m = m

    def _peek(self):
        return self.tokens[self.pos]

    def _next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def _fail(self, msg, tok):
        raise ExpressionError(f"{msg} at position {tok[2]} in {self.text!r}")

    def parse(self):
        node = self._expr()
        tok = self._peek()
        if tok[0] != "end":
            self._fail(f"unexpected token {tok[1]!r}", tok)
        return node

    def _expr(self):
        node = self._term()
        while self._peek()[0] in "+-":
            op = self._next()[0]
            node = ("bin", op, node, self._term())
        return node

    def _term(self):
        node = self._unary()
        while self._peek()[0] in "*/":
            op = self._next()[0]
            node = ("bin", op, node, self._unary())
        return node

    def _unary(self):
        tok = self._peek()
        if tok[0] == "-":
            self._next()
            return ("neg", self._unary())
        if tok[0] == "+":
            self._next()
            return self._unary()
        return self._power()

    def _power(self):
        base = self._atom()
        if self._peek()[0] == "^":
            self._next()
            return ("bin", "^", base, self._unary())
        return base

    def _atom(self):
        tok = self._next()
        if tok[0] == "num":
            return ("num", tok[1])
        if tok[0] == "(":
            node = self._expr()
            closing = self._next()
            if closing[0] != ")":
                self._fail("expected ')'", closing)
            return node
        if tok[0] == "ident":
            name = tok[1]
            if self._peek()[0] == "(":
                if name not in _FUNCTIONS:
                    self._fail(f"unknown function {name!r}", tok)
                self._next()
                arg = self._expr()
                closing = self._next()
                if closing[0] != ")":
                    self._fail("expected ')'", closing)
                return ("call", name, arg)
            return self._resolve(name, tok)
        self._fail(f"unexpected token {tok[1]!r}", tok)

    def _resolve(self, name, tok):
        if name == "t":
            return ("t",)
        m = re.fullmatch(r"([xu])(\d+)", name)
        if m:
            idx = int(m.group(2))
            bound = self.n if m.group(1) == "x" else self.m
            if 1 <= idx <= bound:
                return (m.group(1), idx - 1)
        self._fail(f"unknown identifier {name!r}", tok)


def format_expression(node) -> str:
    """Render an AST canonically; reparsing the result gives an equal AST."""
    kind = node[0]
    if kind == "num":
        return repr(node[1])
    if kind == "x":
        return f"x{node[1] + 1}"
    if kind == "u":
        return f"u{node[1] + 1}"
    if kind == "t":
        return "t"
    if kind == "neg":
        return f"(-{format_expression(node[1])})"
    if kind == "bin":
        return f"({format_expression(node[2])}{node[1]}{format_expression(node[3])})"
    if kind == "call":
        return f"{node[1]}({format_expression(node[2])})"
    raise ExpressionError(f"malformed AST node {node!r}")


def _compile(node):
    kind = node[0]
    if kind == "num":
        v = node[1]
        return lambda x, u, t: v
    if kind == "x":
        i = node[1]
        return lambda x, u, t: x[i]
    if kind == "u":
        i = node[1]
        return lambda x, u, t: u[i]
    if kind == "t":
        return lambda x, u, t: t
    if kind == "neg":
        f = _compile(node[1])
        return lambda x, u, t: -f(x, u, t)
    if kind == "bin":
        op, ln, rn = node[1], node[2], node[3]
        f = _compile(ln)
        g = _compile(rn)
        if op == "+":
            return lambda x, u, t: f(x, u, t) + g(x, u, t)
        if op == "-":
            return lambda x, u, t: f(x, u, t) - g(x, u, t)
        if op == "*":
            return lambda x, u, t: f(x, u, t) * g(x, u, t)
        if op == "/":
            return lambda x, u, t: f(x, u, t) / g(x, u, t)
        if op == "^":
            return lambda x, u, t: f(x, u, t) ** g(x, u, t)
    if kind == "call":
        fn = _FUNCTIONS[node[1]]
        f = _compile(node[2])
        return lambda x, u, t: fn(f(x, u, t))
    raise ExpressionError(f"malformed AST node {node!r}")


@dataclass(frozen=True)
class NonlinearMap:
    """Vector-valued map R^n x R^m x R -> R^out_dim built from expressions."""

    asts: tuple
    out_dim: int
    n: int
    m: int
    texts: tuple = field(init=False, compare=False)
    _fns: tuple = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if self.out_dim != len(self.asts) or self.out_dim < 1:
            raise DimensionError("out_dim must equal the number of expressions")
        object.__setattr__(self, "texts", tuple(format_expression(a) for a in self.asts))
        object.__setattr__(self, "_fns", tuple(_compile(a) for a in self.asts))

    @classmethod
    def parse(cls, texts, n, m=0):
        asts = tuple(_Parser(s, n, m).parse() for s in texts)
        return cls(asts=asts, out_dim=len(asts), n=n, m=m)

    @classmethod
    def zero(cls, out_dim, n, m=0):
        return cls.parse(["0"] * out_dim, n, m)

    @property
    def is_zero(self):
        return all(a == ("num", 0.0) for a in self.asts)

    def __call__(self, x=(), u=None, t=0.0):
        if u is None:
            u = _ZERO_U
        try:
            return np.array([f(x, u, t) for f in self._fns], dtype=float)
        except (OverflowError, ZeroDivisionError, ValueError) as exc:
            raise EvaluationError(f"expression evaluation failed: {exc}") from exc


_ZERO_U = np.zeros(64)


def parse_nonlinearity(texts, n, m=0) -> NonlinearMap:
    """Parse expression strings over x1..xn, u1..um, t into an evaluable map."""
    return NonlinearMap.parse(texts, n, m)


def estimate_lipschitz(nlmap: NonlinearMap, box, grid: int) -> float:
    """Grid lower estimate of the Lipschitz constant of x -> nlmap(x, 0, 0).

    Evaluates the finite-difference Jacobian on a regular grid over `box`
    (one (lo, hi) interval per state coordinate) and returns the largest
    spectral norm seen.  This under-approximates the true constant.
    """
    if len(box) != nlmap.n:
        raise DimensionError(f"box must have {nlmap.n} intervals, got {len(box)}")
    if grid < 2:
        raise ModelError("grid must be at least 2 points per axis")
    axes = [np.linspace(lo, hi, grid) for lo, hi in box]
    if not all(np.isfinite(a).all() for a in axes):
        raise ModelError("box must be finite")
    u0 = np.zeros(nlmap.m)
    best = 0.0
    for pt in product(*axes):
        x = np.array(pt)
        jac = np.empty((nlmap.out_dim, nlmap.n))
        try:
            for j in range(nlmap.n):
                h = 1e-6 * (1.0 + abs(x[j]))
                xp = x.copy()
                xp[j] += h
                xm = x.copy()
                xm[j] -= h
                jac[:, j] = (nlmap(xp, u0) - nlmap(xm, u0)) / (2 * h)
        except EvaluationError as exc:
            raise EvaluationError(f"evaluation overflow at grid point {tuple(pt)}") from exc
        if not np.isfinite(jac).all():
            raise EvaluationError(f"evaluation overflow at grid point {tuple(pt)}")
        best = max(best, float(np.linalg.norm(jac, 2)))
    return best


# ---------------------------------------------------------------------------
# plant container
# ---------------------------------------------------------------------------

def _as_matrix(value, name):
    M = np.atleast_2d(np.asarray(value, dtype=float))
    if M.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got ndim={M.ndim}")
    return M


def numerical_rank(M, rtol=RANK_RTOL) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


@dataclass(frozen=True)
class DescriptorPlant:
    """Uncertain Lipschitz nonlinear descriptor plant (all matrices dense)."""

    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    H: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    N: np.ndarray
    phi: NonlinearMap
    psi: NonlinearMap
    gamma1: float = 0.0
    gamma2: float = 0.0

    def __post_init__(self):
        for name in ("E", "A", "B", "C", "D", "H", "M1", "M2", "N"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        n = self.E.shape[0]
        if self.E.shape != (n, n):
            raise DimensionError(f"E must be square, got {self.E.shape}")
        checks = {
            "A": (n, n),
            "B": (n, self.q),
            "C": (self.p, n),
            "D": (self.p, self.q),
            "H": (self.r, n),
            "M1": (n, self.k),
            "M2": (self.p, self.k),
            "N": (self.k, n),
        }
        for name, shape in checks.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(
                    f"{name} must have shape {shape}, got {getattr(self, name).shape}"
                )
        if self.phi.out_dim != n or self.phi.n != n:
            raise DimensionError("phi must map R^n x R^m to R^n")
        if self.psi.out_dim != self.p or self.psi.n != n:
            raise DimensionError("psi must map R^n x R^m to R^p")
        if self.phi.m != self.psi.m:
            raise DimensionError("phi and psi must share the input dimension m")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ModelError("Lipschitz constants gamma1, gamma2 must be nonnegative")
        u_star = np.zeros(self.m)
        origin = np.zeros(n)
        if np.linalg.norm(self.phi(origin, u_star)) > 1e-9:
            raise ModelError("phi(0, u*) must vanish at the nominal input")
        if np.linalg.norm(self.psi(origin, u_star)) > 1e-9:
            raise ModelError("psi(0, u*) must vanish at the nominal input")

    @property
    def n(self):
        return self.E.shape[0]

    @property
    def q(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def r(self):
        return self.H.shape[0]

    @property
    def k(self):
        return self.M1.shape[1]

    @property
    def m(self):
        return self.phi.m


@dataclass
class ValidationReport:
    """Outcome of the pencil checks; None marks a check that was skipped."""

    rank_E: int
    regular: bool
    impulse_free: bool | None
    observable: bool | None
    finite_eigenvalues: list
    messages: list


def orth_complement(E, rtol=RANK_RTOL) -> np.ndarray:
    """Orthonormal rows spanning the left null space of E.

    Returns Eperp with Eperp @ E == 0 and rank(Eperp) = n - rank(E);
    an empty (0, n) matrix when E has full rank.
    """
    E = _as_matrix(E, "E")
    n = E.shape[0]
    if E.shape != (n, n):
        raise DimensionError(f"E must be square, got {E.shape}")
    U, sv, _ = np.linalg.svd(E)
    s = numerical_rank(E, rtol)
    null = U[:, s:]
    # deterministic sign: largest-magnitude entry of each column made positive
    for j in range(null.shape[1]):
        i = int(np.argmax(np.abs(null[:, j])))
        if null[i, j] < 0:
            null[:, j] = -null[:, j]
    return null.T.copy()


def _chebyshev_points(count, half_width):
    j = np.arange(count)
    return half_width * np.cos((2 * j + 1) * np.pi / (2 * count))


def validate_plant(plant: DescriptorPlant, rtol=RANK_RTOL) -> ValidationReport:
    """Check rank(E), pencil regularity, impulse freeness and observability.

    Regularity samples det(sE - A) at n+1 Chebyshev points (a degree <= n
    polynomial vanishing at n+1 points is identically zero); the impulse-free
    test interpolates the determinant's degree; observability is checked at
    the finite generalized eigenvalues only, since rank [sE - A; C] can drop
    nowhere else.
    """
    E, A, C = plant.E, plant.A, plant.C
    n = plant.n
    messages = []
    s = numerical_rank(E, rtol)
    if s == 0:
        raise ModelError("rank(E)=0 violates 0 < rank(E) <= n")

    norm_E = np.linalg.norm(E, 2)
    norm_A = np.linalg.norm(A, 2)
    half_width = 10.0 * max(norm_A / norm_E, 1e-6)
    pts = _chebyshev_points(n + 1, half_width)
    dets = np.array([np.linalg.det(si * E - A) for si in pts])
    det_scale = max(np.linalg.norm(si * E - A, 2) for si in pts) ** n
    regular = bool(np.any(np.abs(dets) > 1e-12 * det_scale))

    if not regular:
        messages.append("pencil (E, A) is singular; impulse/observability not evaluated")
        return ValidationReport(s, False, None, None, [], messages)

    # degree of det(sE - A) by interpolation through the n+1 samples
    V = np.vander(pts, n + 1, increasing=True)
    try:
        coeffs = np.linalg.solve(V, dets)
    except np.linalg.LinAlgError as exc:
        raise ModelError("regularity undetermined: interpolation is singular") from exc
    if not np.isfinite(coeffs).all():
        raise ModelError("regularity undetermined: interpolation is indeterminate")
    cmax = np.max(np.abs(coeffs))
    degree = 0
    for j in range(n, -1, -1):
        if abs(coeffs[j]) > 1e-9 * cmax:
            degree = j
            break
    impulse_free = bool(degree == s)
    if not impulse_free:
        messages.append(f"deg det(sE - A) = {degree} != rank(E) = {s}")

    eigs = scipy.linalg.eigvals(A, E)
    finite = [complex(v) for v in eigs if np.isfinite(v)]
    observable = True
    for v in finite:
        stacked = np.vstack([v * E - A, C.astype(complex)])
        sv = np.linalg.svd(stacked, compute_uv=False)
        if np.sum(sv > rtol * sv[0]) < n:
            observable = False
            messages.append(f"rank [sE - A; C] < n at eigenvalue {v:.6g}")
    unstable = [v for v in finite if v.real >= 0]
    if unstable:
        messages.append(f"finite eigenvalues with nonnegative real part: {unstable}")
    return ValidationReport(s, True, impulse_free, observable, finite, messages)


# ---------------------------------------------------------------------------
# JSON schema:  keys E,A,B,C,D,H,M1,M2,N (row-major), phi,psi (expressions),
# gamma1,gamma2; missing uncertainty matrices default to conforming zeros.
# ---------------------------------------------------------------------------

def plant_to_json_dict(plant: DescriptorPlant) -> dict:
    return {
        "schema": 1,
        "E": plant.E.tolist(),
        "A": plant.A.tolist(),
        "B": plant.B.tolist(),
        "C": plant.C.tolist(),
        "D": plant.D.tolist(),
        "H": plant.H.tolist(),
        "M1": plant.M1.tolist(),
        "M2": plant.M2.tolist(),
        "N": plant.N.tolist(),
        "phi": list(plant.phi.texts),
        "psi": list(plant.psi.texts),
        "m": plant.m,
        "gamma1": plant.gamma1,
        "gamma2": plant.gamma2,
    }


def plant_from_json_dict(data: dict) -> DescriptorPlant:
    for key in ("E", "A", "B", "C", "D", "H"):
        if key not in data:
            raise ModelError(f"plant document is missing required key {key!r}")
    E = _as_matrix(data["E"], "E")
    n = E.shape[0]
    C = _as_matrix(data["C"], "C")
    p = C.shape[0]
    m = int(data.get("m", 0))
    if "N" in data:
        N = _as_matrix(data["N"], "N")
        k = N.shape[0]
    elif "M1" in data:
        k = _as_matrix(data["M1"], "M1").shape[1]
        N = np.zeros((k, n))
    else:
        k = 1
        N = np.zeros((k, n))
    M1 = _as_matrix(data["M1"], "M1") if "M1" in data else np.zeros((n, k))
    M2 = _as_matrix(data["M2"], "M2") if "M2" in data else np.zeros((p, k))
    phi = (
        parse_nonlinearity(data["phi"], n, m)
        if "phi" in data
        else NonlinearMap.zero(n, n, m)
    )
    psi = (
        parse_nonlinearity(data["psi"], n, m)
        if "psi" in data
        else NonlinearMap.zero(p, n, m)
    )
    return DescriptorPlant(
        E=E,
        A=data["A"],
        B=data["B"],
        C=C,
        D=data["D"],
        H=data["H"],
        M1=M1,
        M2=M2,
        N=N,
        phi=phi,
        psi=psi,
        gamma1=float(data.get("gamma1", 0.0)),
        gamma2=float(data.get("gamma2", 0.0)),
    )


def load_plant(path) -> DescriptorPlant:
    with open(path) as fh:
        return plant_from_json_dict(json.load(fh))


def save_plant(plant: DescriptorPlant, path):
    with open(path, "w") as fh:
        json.dump(plant_to_json_dict(plant), fh, indent=2, sort_keys=True)
        fh.write("\n")
