"""Charts, Jacobi structures, Hamiltonian fields and exterior calculus.

Sign convention used throughout:

* bracket  {f,g} = sum_{a<b} L^ab (f_a g_b - f_b g_a) + f E(g) - g E(f)
* field    X_f^a = sum_b L^ab d_b f + f E^a, so X_f(g) = {g,f} when E = 0
* symplectic data is turned into L = -W^-1 (W the coefficient matrix of the
  2-form), which gives {q,p} = 1 for dq^dp.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .expr import (ONE, ZERO, Add, Const, Expr, Mul, as_expr, compile_exprs,
                   diff, domain_guards, render, simplify)
from .report import CheckReport

# normalisation of the Schouten term, calibrated on the contact fixture
KAPPA = 1


class GeometryError(Exception):
    pass


class DimensionError(GeometryError):
    pass


class DegeneracyError(GeometryError):
    pass


class NotLCSError(GeometryError):
    pass


class SamplingError(GeometryError):
    pass


@dataclass(frozen=True)
class Chart:
    coords: tuple
    box: tuple
    eps_dom: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        object.__setattr__(self, "box", tuple(tuple(map(float, b)) for b in self.box))
        if len(set(self.coords)) != len(self.coords):
            raise GeometryError(f"duplicate coordinate names in {self.coords}")
        if len(self.box) != len(self.coords):
            raise GeometryError("sample box must give one interval per coordinate")
        for name, (lo, hi) in zip(self.coords, self.box):
            if not lo < hi:
                raise GeometryError(f"degenerate interval for {name}: [{lo}, {hi}]")

    @classmethod
    def from_mapping(cls, coords: Sequence[str], box: Mapping[str, Sequence[float]] | None = None,
                     eps_dom: float = 1e-6) -> "Chart":
        box = box or {}
        return cls(tuple(coords), tuple(box.get(c, (-1.0, 1.0)) for c in coords), eps_dom)

    @property
    def m(self) -> int:
        return len(self.coords)

    def index(self, name: str) -> int:
        try:
            return self.coords.index(name)
        except ValueError:
            raise GeometryError(f"unknown coordinate {name!r}") from None

    def uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        return lo + (hi - lo) * rng.random((n, self.m))

    def inside(self, X: np.ndarray) -> np.ndarray:
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        return np.all((X >= lo) & (X <= hi), axis=-1)


def guard_mask(exprs: Sequence[Expr], coords: Sequence[str], X: np.ndarray,
               eps: float) -> np.ndarray:
    """True where every expression is finite and away from its singular set."""
    guards = []
    for e in exprs:
        guards.extend(domain_guards(e))
    kinds = [k for k, _ in guards]
    f = compile_exprs(list(exprs) + [g for _, g in guards], coords)
    vals = f(X)
    ok = np.all(np.isfinite(vals), axis=0) if len(vals) else np.ones(len(X), bool)
    gv = vals[len(exprs):]
    for kind, v in zip(kinds, gv):
        with np.errstate(invalid="ignore"):
            if kind == "nonzero":
                ok &= np.abs(v) > eps
            elif kind == "positive":
                ok &= v > eps
            else:
                ok &= np.abs(v) < 1.0 - eps
    return ok


def sample_points(chart: Chart, exprs: Sequence[Expr], n: int, seed: int,
                  oversample: int = 100) -> np.ndarray:
    """Seeded box samples avoiding the singular sets of ``exprs``."""
    rng = np.random.default_rng(seed)
    exprs = [simplify(as_expr(e)) for e in exprs]
    got = []
    total = 0
    batch = max(n, 16)
    while sum(len(g) for g in got) < n and total < oversample * n:
        X = chart.uniform(batch, rng)
        total += batch
        got.append(X[guard_mask(exprs, chart.coords, X, chart.eps_dom)])
    pts = np.concatenate(got) if got else np.zeros((0, chart.m))
    if len(pts) < n:
        raise SamplingError(
            f"only {len(pts)} of {n} sample points survived the domain guards")
    return pts[:n]


# --------------------------------------------------------------------------
# vector fields and forms


@dataclass(frozen=True)
class VectorField:
    coords: tuple
    components: tuple

    def __post_init__(self):
        comps = tuple(simplify(as_expr(c)) for c in self.components)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "coords", tuple(self.coords))
        if len(comps) != len(self.coords):
            raise DimensionError("vector field needs one component per coordinate")

    def __getitem__(self, a):
        return self.components[a]

    def __len__(self):
        return len(self.components)

    def apply(self, f: Expr) -> Expr:
        """Directional derivative X(f)."""
        f = as_expr(f)
        return simplify(Add(tuple(Mul((c, diff(f, x)))
                                  for c, x in zip(self.components, self.coords))))

    def render(self) -> str:
        parts = [f"({render(c)})*d_{x}" for c, x in zip(self.components, self.coords)
                 if c != ZERO]
        return " + ".join(parts) if parts else "0"


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """[X,Y]^a = X(Y^a) - Y(X^a)."""
    return VectorField(X.coords, tuple(
        simplify(X.apply(Y[a]) - Y.apply(X[a])) for a in range(len(X))))


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@dataclass(frozen=True)
class KForm:
    """Differential k-form; coefficients keyed by increasing index tuples."""

    degree: int
    coords: tuple
    coeffs: Mapping

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        clean = {}
        for idx, c in dict(self.coeffs).items():
            idx = tuple(idx)
            if len(idx) != self.degree:
                raise DimensionError(f"index {idx} does not match degree {self.degree}")
            if len(set(idx)) < len(idx):
                continue
            if any(not 0 <= i < len(self.coords) for i in idx):
                raise DimensionError(f"index {idx} outside chart")
            key = tuple(sorted(idx))
            val = simplify(as_expr(c) * _perm_sign(idx))
            clean[key] = simplify(clean.get(key, ZERO) + val)
        object.__setattr__(self, "coeffs", {k: v for k, v in sorted(clean.items())
                                            if v != ZERO})

    @classmethod
    def one_form(cls, coords: Sequence[str], components: Sequence) -> "KForm":
        return cls(1, coords, {(a,): c for a, c in enumerate(components)})

    @classmethod
    def from_names(cls, degree: int, coords: Sequence[str], terms: Mapping) -> "KForm":
        """Build from keys like ("x","y") or "x,y" naming coordinates."""
        coords = tuple(coords)
        out = {}
        for key, c in terms.items():
            names = key.split(",") if isinstance(key, str) else key
            names = [n.strip() for n in names]
            try:
                idx = tuple(coords.index(n) for n in names)
            except ValueError:
                raise GeometryError(f"form key {key!r} names an unknown coordinate") from None
            out[idx] = simplify(out.get(idx, ZERO) + as_expr(c)) if idx in out else as_expr(c)
        return cls(degree, coords, out)

    def get(self, idx) -> Expr:
        idx = tuple(idx)
        if len(set(idx)) < len(idx):
            return ZERO
        return simplify(self.coeffs.get(tuple(sorted(idx)), ZERO) * _perm_sign(idx))

    def components(self) -> tuple:
        """1-form coefficients in chart order."""
        if self.degree != 1:
            raise DimensionError("components() is for 1-forms")
        return tuple(self.coeffs.get((a,), ZERO) for a in range(len(self.coords)))

    def matrix(self) -> list:
        """Full skew coefficient matrix of a 2-form."""
        if self.degree != 2:
            raise DimensionError("matrix() is for 2-forms")
        m = len(self.coords)
        W = [[ZERO] * m for _ in range(m)]
        for (a, b), c in self.coeffs.items():
            W[a][b] = c
            W[b][a] = simplify(-c)
        return W

    def scale(self, factor) -> "KForm":
        f = as_expr(factor)
        return KForm(self.degree, self.coords, {k: simplify(f * v) for k, v in self.coeffs.items()})

    def is_zero(self) -> bool:
        return not self.coeffs

    def contract(self, X: VectorField) -> "KForm":
        """Interior product X _| alpha (first slot)."""
        if self.degree == 0:
            raise DimensionError("cannot contract a 0-form")
        out = {}
        m = len(self.coords)
        for idx in itertools.combinations(range(m), self.degree - 1):
            terms = [Mul((X[a], self.get((a,) + idx))) for a in range(m) if a not in idx]
            if terms:
                out[idx] = simplify(Add(tuple(terms)))
        return KForm(self.degree - 1, self.coords, out)

    def render(self) -> str:
        if not self.coeffs:
            return "0"
        parts = []
        for idx, c in self.coeffs.items():
            basis = "^".join("d" + self.coords[i] for i in idx)
            parts.append(f"({render(c)})*{basis}" if basis else render(c))
        return " + ".join(parts)


def exterior_derivative(alpha: KForm) -> KForm:
    """Coefficient of dx^{a0..ak} is the alternating sum of partials."""
    m = len(alpha.coords)
    if alpha.degree >= m:
        raise DimensionError("exterior derivative of a top-degree form")
    out: dict = {}
    for idx, c in alpha.coeffs.items():
        for a, x in enumerate(alpha.coords):
            if a in idx:
                continue
            dc = diff(c, x)
            if dc == ZERO:
                continue
            key = (a,) + idx
            sk = tuple(sorted(key))
            val = simplify(dc * _perm_sign(key))
            out[sk] = simplify(out.get(sk, ZERO) + val)
    return KForm(alpha.degree + 1, alpha.coords, out)


def differential(f: Expr, coords: Sequence[str]) -> KForm:
    f = as_expr(f)
    return KForm.one_form(coords, [diff(f, x) for x in coords])


def wedge(alpha: KForm, beta: KForm) -> KForm:
    out: dict = {}
    for I, a in alpha.coeffs.items():
        for J, b in beta.coeffs.items():
            if set(I) & set(J):
                continue
            key = I + J
            sk = tuple(sorted(key))
            out[sk] = simplify(out.get(sk, ZERO) + Mul((Const(_perm_sign(key)), a, b)))
    return KForm(alpha.degree + beta.degree, alpha.coords, out)


def wedge_numeric(values: Sequence[Mapping], degrees: Sequence[int], indices: tuple):
    """(a1^...^ar)(e_i1,...,e_ik) from per-form coefficient values.

    ``values[j]`` maps sorted index tuples to numbers or equally shaped arrays.
    """
    if not values:
        return 1.0
    d = degrees[0]
    total = 0.0
    for pos in itertools.combinations(range(len(indices)), d):
        rest_pos = [i for i in range(len(indices)) if i not in pos]
        first = tuple(indices[i] for i in pos)
        coef = values[0].get(first)
        if coef is None:
            continue
        sign = _perm_sign(list(pos) + rest_pos)
        rest = tuple(indices[i] for i in rest_pos)
        total = total + sign * coef * wedge_numeric(values[1:], degrees[1:], rest)
    return total


def form_values(alpha: KForm, X: np.ndarray) -> dict:
    """Evaluate every coefficient of a form at the rows of X."""
    keys = list(alpha.coeffs)
    f = compile_exprs([alpha.coeffs[k] for k in keys], alpha.coords)
    vals = f(X)
    return {k: vals[i] for i, k in enumerate(keys)}


def wedge_evaluate(forms: Sequence[KForm], point, indices: tuple) -> float:
    """Value of the wedge of ``forms`` on coordinate vectors at one point."""
    if not forms:
        return 1.0
    coords = forms[0].coords
    if sum(f.degree for f in forms) != len(indices):
        raise DimensionError("degree sum must equal the number of indices")
    if list(indices) != sorted(set(indices)):
        raise DimensionError("indices must be strictly increasing")
    if isinstance(point, Mapping):
        X = np.array([[float(point[c]) for c in coords]])
    else:
        X = np.atleast_2d(np.asarray(point, dtype=float))
    vals = [form_values(f, X) for f in forms]
    out = wedge_numeric(vals, [f.degree for f in forms], tuple(indices))
    return float(np.asarray(out).reshape(-1)[0])


# --------------------------------------------------------------------------
# symbolic linear algebra (cofactor expansion, fine for m <= 8)


def sym_det(M: Sequence[Sequence[Expr]]) -> Expr:
    n = len(M)
    memo: dict = {}

    def det(rows: tuple, cols: tuple) -> Expr:
        if not rows:
            return ONE
        key = (rows, cols)
        if key in memo:
            return memo[key]
        r = rows[0]
        terms = []
        for j, c in enumerate(cols):
            a = M[r][c]
            if a == ZERO:
                continue
            sub = det(rows[1:], cols[:j] + cols[j + 1:])
            if sub == ZERO:
                continue
            terms.append(Mul((Const(-1 if j % 2 else 1), a, sub)))
        val = simplify(Add(tuple(terms)))
        memo[key] = val
        return val

    return det(tuple(range(n)), tuple(range(n)))


def sym_inverse(M: Sequence[Sequence[Expr]]) -> tuple:
    """Return (inverse, determinant) via the adjugate."""
    n = len(M)
    D = sym_det(M)
    if D == ZERO:
        raise DegeneracyError("matrix is symbolically singular")
    inv = [[ZERO] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [[M[r][c] for c in range(n) if c != i] for r in range(n) if r != j]
            cof = sym_det(minor)
            if (i + j) % 2:
                cof = simplify(-cof)
            inv[i][j] = simplify(cof / D)
    return inv, D


# --------------------------------------------------------------------------
# Jacobi structures


@dataclass(frozen=True, eq=False)
class JacobiStructure:
    chart: Chart
    lam: Mapping
    E: tuple
    kind: str = "jacobi"
    info: Mapping = field(default_factory=dict)

    def __post_init__(self):
        m = self.chart.m
        clean = {}
        for (a, b), v in dict(self.lam).items():
            if a == b:
                continue
            if not (0 <= a < m and 0 <= b < m):
                raise DimensionError(f"bivector index ({a},{b}) outside chart")
            v = simplify(as_expr(v))
            if a > b:
                a, b, v = b, a, simplify(-v)
            clean[(a, b)] = simplify(clean.get((a, b), ZERO) + v)
        object.__setattr__(self, "lam", {k: v for k, v in sorted(clean.items()) if v != ZERO})
        E = tuple(simplify(as_expr(e)) for e in self.E) if self.E else (ZERO,) * m
        if len(E) != m:
            raise DimensionError("E needs one component per coordinate")
        object.__setattr__(self, "E", E)

    @property
    def coords(self) -> tuple:
        return self.chart.coords

    @property
    def m(self) -> int:
        return self.chart.m

    @property
    def is_poisson(self) -> bool:
        return all(e == ZERO for e in self.E)

    def entry(self, a: int, b: int) -> Expr:
        if a == b:
            return ZERO
        if a < b:
            return self.lam.get((a, b), ZERO)
        return simplify(-self.lam.get((b, a), ZERO))

    def matrix(self) -> list:
        return [[self.entry(a, b) for b in range(self.m)] for a in range(self.m)]

    def reeb(self) -> VectorField:
        return VectorField(self.coords, self.E)


def jacobi_bracket(S: JacobiStructure, f, g) -> Expr:
    """{f,g} = L(df,dg) + f E(g) - g E(f)."""
    f, g = as_expr(f), as_expr(g)
    xs = S.coords
    df = [diff(f, x) for x in xs]
    dg = [diff(g, x) for x in xs]
    terms = []
    for (a, b), L in S.lam.items():
        terms.append(Mul((L, Add((Mul((df[a], dg[b])), Mul((Const(-1), df[b], dg[a])))))))
    if not S.is_poisson:
        Eg = Add(tuple(Mul((e, d)) for e, d in zip(S.E, dg)))
        Ef = Add(tuple(Mul((e, d)) for e, d in zip(S.E, df)))
        terms.append(Mul((f, Eg)))
        terms.append(Mul((Const(-1), g, Ef)))
    return simplify(Add(tuple(terms)))


def hamiltonian_vf(S: JacobiStructure, f) -> VectorField:
    """X_f^a = sum_b L^ab d_b f + f E^a."""
    f = as_expr(f)
    xs = S.coords
    df = [diff(f, x) for x in xs]
    comps = []
    for a in range(S.m):
        terms = [Mul((S.entry(a, b), df[b])) for b in range(S.m) if b != a]
        terms.append(Mul((f, S.E[a])))
        comps.append(simplify(Add(tuple(terms))))
    return VectorField(xs, tuple(comps))


def _nonsingular_on_box(chart: Chart, D: Expr, n_samples: int, seed: int, what: str):
    X = sample_points(chart, [D], n_samples, seed) if n_samples else None
    if X is None:
        return
    vals = compile_exprs([D], chart.coords)(X)[0]
    bad = ~(np.abs(vals) > chart.eps_dom)
    if np.any(bad):
        i = int(np.argmax(bad))
        pt = dict(zip(chart.coords, X[i].tolist()))
        raise DegeneracyError(f"{what} is degenerate near {pt} (det={vals[i]!r})")


def symplectic_to_jacobi(omega: KForm, chart: Chart, n_samples: int = 20,
                         seed: int = 0) -> JacobiStructure:
    """Poisson tensor of a symplectic form, L = -W^-1 with W the form's matrix."""
    if omega.degree != 2:
        raise DimensionError("symplectic form must have degree 2")
    if chart.m % 2:
        raise DimensionError("symplectic charts are even dimensional")
    W = omega.matrix()
    inv, D = sym_inverse(W)
    _nonsingular_on_box(chart, D, n_samples, seed, "symplectic form")
    lam = {(a, b): simplify(-inv[a][b]) for a in range(chart.m) for b in range(a + 1, chart.m)}
    return JacobiStructure(chart, lam, (), kind="symplectic",
                           info={"det": render(D)})


def lcs_to_jacobi(Omega: KForm, theta: KForm, chart: Chart, n_samples: int = 20,
                  seed: int = 0, tol: float = 1e-9) -> JacobiStructure:
    """Jacobi pair of a locally conformally symplectic form: L = W^-1, E = L(theta)."""
    if Omega.degree != 2 or theta.degree != 1:
        raise DimensionError("expected a 2-form and a 1-form")
    m = chart.m
    dtheta = exterior_derivative(theta)
    dOmega = exterior_derivative(Omega)
    tw = wedge(theta, Omega)
    exprs = list(dtheta.coeffs.values()) + list(dOmega.coeffs.values()) + list(tw.coeffs.values())
    X = sample_points(chart, exprs + list(Omega.coeffs.values()), n_samples, seed)
    dth = form_values(dtheta, X)
    worst_dtheta = max((float(np.max(np.abs(v))) for v in dth.values()), default=0.0)
    if worst_dtheta > tol:
        raise NotLCSError(f"Lee form is not closed (|d theta| = {worst_dtheta:.3g})")
    dO = form_values(dOmega, X)
    worst = 0.0
    for idx in itertools.combinations(range(m), 3):
        a = wedge_numeric([dO], [3], idx)
        b = wedge_numeric([form_values(theta, X), form_values(Omega, X)], [1, 2], idx)
        diffv = np.asarray(a) - np.asarray(b)
        worst = max(worst, float(np.max(np.abs(diffv))) if np.size(diffv) else 0.0)
    if worst > tol:
        raise NotLCSError(f"d Omega != theta ^ Omega (residual {worst:.3g})")
    W = Omega.matrix()
    inv, D = sym_inverse(W)
    _nonsingular_on_box(chart, D, n_samples, seed, "LCS form")
    lam = {(a, b): inv[a][b] for a in range(m) for b in range(a + 1, m)}
    th = theta.components()
    E = tuple(simplify(Add(tuple(Mul((inv[a][b], th[b])) for b in range(m)))) for a in range(m))
    return JacobiStructure(chart, lam, E, kind="lcs",
                           info={"dtheta_residual": worst_dtheta, "lcs_residual": worst})


def contact_to_jacobi(eta: KForm, chart: Chart, n_samples: int = 20,
                      seed: int = 0) -> JacobiStructure:
    """Jacobi pair of a contact form: Reeb field E = R and L = M^-1 D M^-T.

    D is the matrix of d(eta) and M = D + eta eta^T is the matrix of the
    bundle map X -> X _| d(eta) + eta(X) eta.
    """
    if eta.degree != 1:
        raise DimensionError("contact form must be a 1-form")
    m = chart.m
    if m % 2 == 0:
        raise DimensionError("contact charts are odd dimensional")
    D = exterior_derivative(eta).matrix() if m > 1 else [[ZERO]]
    e = eta.components()
    M = [[simplify(D[a][b] + e[a] * e[b]) for b in range(m)] for a in range(m)]
    Minv, det = sym_inverse(M)
    _nonsingular_on_box(chart, det, n_samples, seed, "contact form")
    # R solves M^T R = eta
    R = [simplify(Add(tuple(Mul((Minv[b][a], e[b])) for b in range(m)))) for a in range(m)]
    lam = {}
    for a in range(m):
        for b in range(a + 1, m):
            terms = [Mul((Minv[a][c], D[c][d], Minv[b][d]))
                     for c in range(m) for d in range(m) if D[c][d] != ZERO]
            lam[(a, b)] = simplify(Add(tuple(terms)))
    return JacobiStructure(chart, lam, tuple(R), kind="contact",
                           info={"reeb": [render(r) for r in R]})


def schouten_residuals(S: JacobiStructure) -> tuple:
    """Symbolic residuals of [L,E] = 0 and [L,L] = 2 E^L in components."""
    m, xs = S.m, S.coords
    L = S.matrix()
    E = S.E
    dL = {(a, b, d): diff(L[a][b], xs[d]) for a in range(m) for b in range(m) for d in range(m)}
    dE = {(a, d): diff(E[a], xs[d]) for a in range(m) for d in range(m)}
    lie = {}
    for a in range(m):
        for b in range(a + 1, m):
            terms = []
            for d in range(m):
                terms.append(Mul((E[d], dL[(a, b, d)])))
                terms.append(Mul((Const(-1), L[d][b], dE[(a, d)])))
                terms.append(Mul((Const(-1), L[a][d], dE[(b, d)])))
            lie[(a, b)] = simplify(Add(tuple(terms)))
    jac = {}
    for a, b, c in itertools.combinations(range(m), 3):
        terms = []
        for d in range(m):
            terms.append(Mul((L[d][a], dL[(b, c, d)])))
            terms.append(Mul((L[d][b], dL[(c, a, d)])))
            terms.append(Mul((L[d][c], dL[(a, b, d)])))
        for (i, j, k) in ((a, b, c), (b, c, a), (c, a, b)):
            terms.append(Mul((Const(-KAPPA), E[i], L[j][k])))
        jac[(a, b, c)] = simplify(Add(tuple(terms)))
    return lie, jac


def check_jacobi_axioms(S: JacobiStructure, n_samples: int = 100, seed: int = 0,
                        tol: float = 1e-9) -> CheckReport:
    lie, jac = schouten_residuals(S)
    exprs = list(lie.values()) + list(jac.values())
    base = [v for v in S.lam.values()] + list(S.E)
    X = sample_points(S.chart, exprs + base, n_samples, seed)
    vals = compile_exprs(exprs, S.coords)(X) if exprs else np.zeros((0, len(X)))
    nl = len(lie)
    lie_max = float(np.max(np.abs(vals[:nl]))) if nl else 0.0
    jac_max = float(np.max(np.abs(vals[nl:]))) if len(jac) else 0.0
    passed = lie_max <= tol and jac_max <= tol
    return CheckReport("structure_axioms", passed, {
        "lie_E_residual": lie_max, "jacobiator_residual": jac_max,
        "tolerance": tol, "kappa": KAPPA, "samples": n_samples})
