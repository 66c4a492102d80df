"""Pfaffians, the bracket matrix and the two constructions of the 1-forms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .cinf import HamiltonianSystem, SystemDefinitionError
from .expr import ONE, ZERO, Add, Const, Expr, Mul, as_expr, compile_exprs, diff, simplify
from .geometry import KForm, jacobi_bracket, sample_points, sym_det, sym_inverse
from .report import CheckReport


class PathUnavailable(SystemDefinitionError):
    """Requested construction path does not apply to this system."""


@dataclass(frozen=True)
class SkewExprMatrix:
    size: int
    upper: Mapping

    def __post_init__(self):
        clean = {}
        for (i, j), v in dict(self.upper).items():
            if i == j:
                continue
            if not (0 <= i < self.size and 0 <= j < self.size):
                raise IndexError(f"entry ({i},{j}) outside a {self.size}x{self.size} matrix")
            v = simplify(as_expr(v))
            if i > j:
                i, j, v = j, i, simplify(-v)
            clean[(i, j)] = v
        object.__setattr__(self, "upper", {k: v for k, v in sorted(clean.items()) if v != ZERO})

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence]) -> "SkewExprMatrix":
        """Read the strict upper triangle of a square array (lower part ignored)."""
        n = len(rows)
        up = {}
        for i, row in enumerate(rows):
            if len(row) != n:
                raise ValueError(f"row {i} has {len(row)} entries, expected {n}")
            for j in range(i + 1, n):
                if row[j] is None:
                    raise ValueError(f"missing upper entry ({i},{j})")
                up[(i, j)] = as_expr(row[j] if not isinstance(row[j], str) else row[j])
        return cls(n, up)

    def entry(self, i: int, j: int) -> Expr:
        if i == j:
            return ZERO
        if i < j:
            return self.upper.get((i, j), ZERO)
        return simplify(-self.upper.get((j, i), ZERO))

    def delete(self, *indices) -> "SkewExprMatrix":
        keep = [k for k in range(self.size) if k not in indices]
        pos = {k: n for n, k in enumerate(keep)}
        return SkewExprMatrix(len(keep), {(pos[i], pos[j]): v for (i, j), v in self.upper.items()
                                          if i in pos and j in pos})

    def rows(self) -> list:
        return [[self.entry(i, j) for j in range(self.size)] for i in range(self.size)]


def pfaffian(A: SkewExprMatrix) -> Expr:
    """Recursive expansion along the first row; 0 for odd size, 1 for empty."""
    if A.size % 2:
        return ZERO
    memo: dict = {}

    def pf(idx: tuple) -> Expr:
        if not idx:
            return ONE
        if idx in memo:
            return memo[idx]
        first = idx[0]
        terms = []
        for k in range(1, len(idx)):
            a = A.entry(first, idx[k])
            if a == ZERO:
                continue
            rest = pf(idx[1:k] + idx[k + 1:])
            if rest == ZERO:
                continue
            terms.append(Mul((Const(1 if k % 2 else -1), a, rest)))
        val = simplify(Add(tuple(terms)))
        memo[idx] = val
        return val

    return pf(tuple(range(A.size)))


def pfaffian_numeric(M: np.ndarray) -> float:
    """Same expansion on a float matrix (used for normalisation reports)."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n % 2:
        return 0.0
    if n == 0:
        return 1.0
    total = 0.0
    for k in range(1, n):
        if M[0, k] == 0.0:
            continue
        keep = [i for i in range(1, n) if i != k]
        total += (1 if k % 2 else -1) * M[0, k] * pfaffian_numeric(M[np.ix_(keep, keep)])
    return total


@dataclass(frozen=True, eq=False)
class PfaffianSequence:
    forms: tuple
    path: str
    system: HamiltonianSystem

    def __len__(self):
        return len(self.forms)

    def __getitem__(self, i: int) -> KForm:
        """1-based access, omega_i = seq[i]."""
        if not 1 <= i <= len(self.forms):
            raise IndexError(f"forms are numbered 1..{len(self.forms)}")
        return self.forms[i - 1]

    def replace(self, i: int, form: KForm) -> "PfaffianSequence":
        forms = list(self.forms)
        forms[i - 1] = form
        return PfaffianSequence(tuple(forms), self.path + "+modified", self.system)


def all_functions(sys: HamiltonianSystem) -> tuple:
    sys.require_complete()
    if sys.auxiliary is None:
        raise PathUnavailable("the bracket matrix needs an auxiliary function f_{m-1}")
    return sys.functions() + (sys.auxiliary,)


def bracket_matrix(sys: HamiltonianSystem) -> SkewExprMatrix:
    fs = all_functions(sys)
    m = len(fs)
    return SkewExprMatrix(m, {(a, b): jacobi_bracket(sys.structure, fs[a], fs[b])
                              for a in range(m) for b in range(a + 1, m)})


def forms_minor(sys: HamiltonianSystem) -> PfaffianSequence:
    """omega_i = sum_{k != i} (-1)^k sgn(i-k) Pf(F without rows/cols i,k) df_k."""
    m = sys.m
    if m % 2 or not sys.structure.is_poisson:
        raise PathUnavailable(
            "the Pfaffian-minor construction needs an even-dimensional Poisson system; "
            "use the contraction path")
    fs = all_functions(sys)
    F = bracket_matrix(sys)
    xs = sys.structure.coords
    grads = [[diff(f, x) for x in xs] for f in fs]
    forms = []
    for i in range(1, m):
        coeffs = []
        for k in range(m):
            if k == i:
                continue
            sign = (-1) ** k * (1 if i > k else -1)
            pf = pfaffian(F.delete(i, k))
            if pf != ZERO:
                coeffs.append((sign, pf, k))
        comps = []
        for a in range(m):
            terms = [Mul((Const(s), pf, grads[k][a])) for s, pf, k in coeffs]
            comps.append(simplify(Add(tuple(terms))))
        forms.append(KForm.one_form(xs, comps))
    return PfaffianSequence(tuple(forms), "minor", sys)


def forms_contraction(sys: HamiltonianSystem) -> PfaffianSequence:
    """dx^a coefficient of omega_i is det(Y_0..^Y_i..Y_{m-1}, e_a), coordinate volume."""
    Y = sys.fields()
    m = sys.m
    xs = sys.structure.coords
    forms = []
    for i in range(1, m):
        rows = [list(Y[k].components) for k in range(m) if k != i]
        comps = []
        for a in range(m):
            minor = [[r[c] for c in range(m) if c != a] for r in rows]
            d = sym_det(minor)
            comps.append(simplify(d if (m - 1 + a) % 2 == 0 else -d))
        forms.append(KForm.one_form(xs, comps))
    return PfaffianSequence(tuple(forms), "contraction", sys)


def form_matrix_values(seq_forms: Sequence[KForm], X: np.ndarray) -> np.ndarray:
    """Array (len(forms), n, m) of 1-form components at the rows of X."""
    if not seq_forms:
        return np.zeros((0, len(X), 0))
    coords = seq_forms[0].coords
    exprs = [c for f in seq_forms for c in f.components()]
    vals = compile_exprs(exprs, coords)(X)
    return vals.reshape(len(seq_forms), len(coords), len(X)).transpose(0, 2, 1)


def proportionality(A: np.ndarray, B: np.ndarray) -> tuple:
    """Best single factor c with A ~ c*B and the largest relative deviation."""
    A = np.asarray(A, float).reshape(-1, A.shape[-1])
    B = np.asarray(B, float).reshape(-1, B.shape[-1])
    den = float(np.sum(B * B))
    if den == 0.0:
        return (0.0, 0.0 if not np.any(A) else float("inf"))
    c = float(np.sum(A * B)) / den
    scale = np.maximum(np.linalg.norm(A, axis=1), np.abs(c) * np.linalg.norm(B, axis=1))
    scale = np.where(scale == 0.0, 1.0, scale)
    dev = float(np.max(np.linalg.norm(A - c * B, axis=1) / scale))
    return c, dev


def compare_forms(got: Sequence[KForm], expected: Sequence[KForm], X: np.ndarray,
                  per_form: bool = True) -> dict:
    """Factors relating computed to reference forms, one per form or one global."""
    G = form_matrix_values(got, X)
    R = form_matrix_values(expected, X)
    if per_form:
        res = [proportionality(G[i], R[i]) for i in range(len(got))]
        return {"factors": [r[0] for r in res], "max_deviation": max(r[1] for r in res)}
    c, dev = proportionality(G, R)
    return {"factors": [c], "max_deviation": dev}


def cross_check_paths(sys: HamiltonianSystem, n_samples: int = 100, seed: int = 0,
                      tol: float = 1e-8) -> CheckReport:
    """Minor-path forms must equal one constant times the contraction-path forms."""
    a = forms_minor(sys)
    b = forms_contraction(sys)
    exprs = [c for f in a.forms + b.forms for c in f.coeffs.values()]
    exprs += list(all_functions(sys))
    X = sample_points(sys.chart, exprs, n_samples, seed)
    A = form_matrix_values(a.forms, X)
    B = form_matrix_values(b.forms, X)
    c, dev = proportionality(A, B)
    # pointwise factors, to expose a non-constant normalisation directly
    num = np.sum(A * B, axis=2)
    den = np.sum(B * B, axis=2)
    mask = den > 1e-24
    local = num[mask] / den[mask]
    spread = float(np.max(np.abs(local - c)) / max(abs(c), 1e-300)) if local.size else 0.0
    # the Liouville prediction: Pf of the symplectic matrix W = -L^-1
    L = sys.structure.matrix()
    Wexpr = [[simplify(-v) for v in row] for row in sym_inverse(L)[0]]
    flat = compile_exprs([v for row in Wexpr for v in row], sys.structure.coords)(X)
    m = sys.m
    pf = np.array([pfaffian_numeric(flat[:, p].reshape(m, m)) for p in range(len(X))])
    liouville = float(np.mean(pf))
    passed = dev <= tol and spread <= tol
    return CheckReport("cross_check_paths", passed, {
        "factor": c, "max_deviation": dev, "factor_spread": spread,
        "liouville_pfaffian": liouville,
        "liouville_match": bool(np.allclose(pf, c, rtol=1e-8, atol=0.0)),
        "samples": len(X), "tolerance": tol})
