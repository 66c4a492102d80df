"""Frobenius certification, first-integral chains, separable solving and RK4 flow."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .cinf import HamiltonianSystem
from .expr import (ONE, ZERO, Add, Apply, Const, EvaluationError, Expr, Mul, Pow, Var,
                   as_expr, compile_exprs, compile_scalar, diff, expand, free_symbols,
                   render, simplify, substitute)
from .forms import PfaffianSequence
from .geometry import (Chart, KForm, SamplingError, exterior_derivative, form_values,
                       guard_mask, hamiltonian_vf, sample_points, wedge_numeric)
from .report import CheckReport, numeric_rank


class SparseLevelSetError(SamplingError):
    pass


# --------------------------------------------------------------------------
# Frobenius


def check_frobenius(seq: PfaffianSequence, n_samples: int = 100, seed: int = 0,
                    tol: float = 1e-8) -> CheckReport:
    """d(omega_i) ^ omega_i ^ ... ^ omega_{m-1} must vanish for every i."""
    forms = list(seq.forms)
    coords = forms[0].coords
    m = len(coords)
    exprs = [c for f in forms for c in f.coeffs.values()]
    X = sample_points(seq.system.chart, exprs, n_samples, seed)
    vals = [form_values(f, X) for f in forms]
    items = []
    for i in range(1, len(forms) + 1):
        degree = 2 + (len(forms) - i + 1)
        if degree > m:
            items.append({"i": i, "degree": degree, "vacuous": True,
                          "max_value": 0.0, "scale": 0.0, "passed": True})
            continue
        dw = exterior_derivative(forms[i - 1])
        factors = [form_values(dw, X)] + vals[i - 1:]
        degrees = [2] + [1] * (len(forms) - i + 1)
        worst, worst_scale, ok = 0.0, 0.0, True
        # natural size of the wedge: product of the factors' largest coefficients
        scale = np.ones(len(X))
        for fv in factors:
            mags = [np.abs(v) for v in fv.values()]
            scale = scale * (np.max(mags, axis=0) if mags else np.zeros(len(X)))
        for idx in itertools.combinations(range(m), degree):
            v = np.abs(np.asarray(wedge_numeric(factors, degrees, idx), dtype=float))
            v = np.broadcast_to(v, (len(X),))
            bad = v > tol * np.maximum(scale, 1e-300)
            if np.any(bad) or not np.all(np.isfinite(v)):
                ok = False
            rel = v / np.maximum(scale, 1e-300)
            if np.max(rel) > worst:
                worst = float(np.max(rel))
                worst_scale = float(scale[int(np.argmax(rel))])
        items.append({"i": i, "degree": degree, "vacuous": False,
                      "max_relative_value": worst, "scale": worst_scale, "passed": ok})
    passed = all(it["passed"] for it in items)
    failed = [it["i"] for it in items if not it["passed"]]
    return CheckReport("frobenius", passed, {"tolerance": tol, "samples": len(X),
                                             "failed_indices": failed}, items)


# --------------------------------------------------------------------------
# level sets


@dataclass(frozen=True)
class Constraint:
    expr: Expr
    value: float
    name: str | None = None  # symbol standing for the level value


@dataclass(frozen=True)
class LevelSet:
    chart: Chart
    constraints: tuple = ()

    def __post_init__(self):
        cons = []
        for c in self.constraints:
            if not isinstance(c, Constraint):
                c = Constraint(*c)
            cons.append(Constraint(simplify(as_expr(c.expr)), float(c.value), c.name))
        object.__setattr__(self, "constraints", tuple(cons))
        if len(cons) > self.chart.m - 1:
            raise ValueError("a level set takes at most m-1 constraints")

    def constants(self) -> dict:
        return {c.name: c.value for c in self.constraints if c.name}

    def bound(self) -> list:
        """Constraint expressions with earlier level constants replaced by numbers."""
        consts = self.constants()
        out = []
        for c in self.constraints:
            names = free_symbols(c.expr) & consts.keys()
            out.append(substitute(c.expr, {n: Const(float(consts[n])) for n in names})
                       if names else c.expr)
        return out

    def add(self, expr, value, name=None) -> "LevelSet":
        return LevelSet(self.chart, self.constraints + (Constraint(expr, value, name),))


def sample_level_set(L: LevelSet, n_points: int = 100, seed: int = 0,
                     newton_tol: float = 1e-10, max_iter: int = 50,
                     oversample: int = 100, guards: Sequence[Expr] = ()) -> np.ndarray:
    """Gauss-Newton projection of random box seeds onto all constraints."""
    chart = L.chart
    guards = [simplify(as_expr(g)) for g in guards]
    if not L.constraints:
        return sample_points(chart, guards, n_points, seed, oversample)
    xs = chart.coords
    gs = L.bound()
    target = np.array([c.value for c in L.constraints])
    G = compile_exprs(gs, xs)
    J = compile_exprs([diff(g, x) for g in gs for x in xs], xs)
    k, m = len(gs), len(xs)
    rng = np.random.default_rng(seed)
    found = []
    tried = 0
    batch = max(4 * n_points, 64)

    def resid(X):
        return (G(X).T - target)

    while sum(len(f) for f in found) < n_points and tried < oversample * n_points:
        X = chart.uniform(batch, rng)
        tried += batch
        r = resid(X)
        nr = np.linalg.norm(r, axis=1)
        for _ in range(max_iter):
            active = np.isfinite(nr) & (nr > newton_tol)
            if not np.any(active):
                break
            Ja = J(X[active]).T.reshape(-1, k, m)
            Ja = np.where(np.isfinite(Ja), Ja, 0.0)
            step = np.einsum("bmk,bk->bm", np.linalg.pinv(Ja), r[active])
            Xa, ra, na = X[active], r[active], nr[active]
            t = np.ones(len(Xa))
            for _half in range(30):
                trial = Xa - t[:, None] * step
                rt = resid(trial)
                nt = np.linalg.norm(rt, axis=1)
                worse = ~(np.isfinite(nt) & (nt <= na))
                if not np.any(worse):
                    break
                t = np.where(worse, t / 2, t)
            trial = Xa - t[:, None] * step
            rt = resid(trial)
            nt = np.linalg.norm(rt, axis=1)
            improved = np.isfinite(nt) & (nt <= na)
            Xa = np.where(improved[:, None], trial, Xa)
            X[active] = Xa
            r[active] = np.where(improved[:, None], rt, ra)
            nr[active] = np.where(improved, nt, na)
        ok = np.isfinite(nr) & (nr <= newton_tol) & chart.inside(X)
        if guards:
            ok &= guard_mask(guards, xs, X, chart.eps_dom)
        found.append(X[ok])
    pts = np.concatenate(found) if found else np.zeros((0, m))
    if len(pts) < n_points:
        raise SparseLevelSetError(
            f"found {len(pts)} of {n_points} level-set points after {tried} seeds")
    return pts[:n_points]


def bind_constants(e: Expr, L: LevelSet) -> Expr:
    consts = L.constants()
    names = free_symbols(e) & consts.keys()
    return substitute(e, {n: Const(float(consts[n])) for n in names}) if names else e


def check_pfaffian_solution(omega: KForm, I, L: LevelSet, n_samples: int = 100,
                            seed: int = 0, rank_tol: float = 1e-8) -> CheckReport:
    """omega and dI, restricted to the leaf's tangent space, must be parallel."""
    I = bind_constants(simplify(as_expr(I)), L)
    coords = L.chart.coords
    extra = free_symbols(I) - set(coords)
    if extra:
        raise ValueError(f"integral uses unbound symbols {sorted(extra)}")
    om = KForm(1, coords, {k: bind_constants(v, L) for k, v in omega.coeffs.items()})
    dI = [diff(I, x) for x in coords]
    comps = list(om.components())
    guards = comps + dI + [I]
    pts = sample_level_set(L, n_samples, seed, guards=guards)
    cons = L.bound()
    m, k = len(coords), len(cons)
    vals = compile_exprs(comps + dI, coords)(pts)
    Jc = compile_exprs([diff(g, x) for g in cons for x in coords], coords)(pts) if k else None
    worst, irregular, bad = 0.0, 0, 0
    for p in range(len(pts)):
        if k:
            A = Jc[:, p].reshape(k, m)
            _, s, Vt = np.linalg.svd(A)
            r = int(np.sum(s > 1e-8 * s[0])) if s.size and s[0] > 0 else 0
            if r < k:
                irregular += 1
            T = Vt[r:].T
        else:
            T = np.eye(m)
        w = vals[:m, p] @ T
        d = vals[m:, p] @ T
        s = np.linalg.svd(np.vstack([w, d]), compute_uv=False)
        ratio = 0.0 if s[0] == 0 or len(s) < 2 else float(s[1] / s[0])
        worst = max(worst, ratio)
        if ratio > rank_tol:
            bad += 1
    return CheckReport("pfaffian_solution", bad == 0, {
        "integral": render(I), "constraints": k, "samples": len(pts),
        "max_sigma_ratio": worst, "rank_tolerance": rank_tol,
        "failing_points": bad, "irregular_points": irregular})


# --------------------------------------------------------------------------
# symbolic restriction and separable solving


@dataclass(frozen=True)
class NotSeparable:
    reason: str

    def __bool__(self):
        return False


_S = "_s_"


def _linear_in(e: Expr, v: str):
    """(a, b) with e = a*v + b, a and b free of v, else None."""
    a = diff(e, v)
    if v in free_symbols(a) or a == ZERO:
        return None
    b = simplify(e - a * Var(v))
    if v in free_symbols(b):
        b = simplify(expand(b))
        if v in free_symbols(b):
            return None
    return a, b


def solve_for(e: Expr, rhs: Expr, v: str, branch: int = 1):
    """Explicit solution of e = rhs for v (linear, exp or square patterns)."""
    lin = _linear_in(e, v)
    if lin:
        a, b = lin
        return simplify((rhs - b) / a)
    s = Var(_S)
    e2 = substitute(e, {v: Apply("log", s)})
    if v not in free_symbols(e2):
        lin = _linear_in(e2, _S)
        if lin:
            a, b = lin
            return simplify(Apply("log", (rhs - b) / a))
    e3 = substitute(e, {v: Pow(s, Fraction(1, 2))})
    if v not in free_symbols(e3):
        lin = _linear_in(e3, _S)
        if lin:
            a, b = lin
            return simplify(Const(branch) * Pow((rhs - b) / a, Fraction(1, 2)))
    return None


def _pattern_rank(e: Expr, v: str) -> int:
    if _linear_in(e, v):
        return 0
    return 1


def solve_level_set(L: LevelSet, branch: int = 1) -> dict | None:
    """Solve the constraints one after another for distinct coordinates."""
    coords = list(L.chart.coords)
    sols: dict = {}
    for c in L.constraints:
        rhs = Var(c.name) if c.name else Const(c.value)
        e = substitute(c.expr, sols) if sols else c.expr
        cands = [x for x in coords if x not in sols and x in free_symbols(e)]
        # linear solves first, then the exp and square patterns
        cands.sort(key=lambda x: _pattern_rank(e, x))
        sol = None
        for x in cands:
            sol = solve_for(e, rhs, x, branch)
            if sol is not None:
                break
        if sol is None:
            return None
        sols = {k: substitute(v, {x: sol}) for k, v in sols.items()}
        sols[x] = sol
    return sols


def restrict_form(omega: KForm, L: LevelSet, branch: int = 1):
    """Pull omega back to the leaf by substitution; returns ({coord: coeff}, solutions)."""
    sols = solve_level_set(L, branch)
    if sols is None:
        return None
    coords = omega.coords
    comps = dict(zip(coords, omega.components()))
    out = {}
    for a in coords:
        if a in sols:
            continue
        terms = [comps[a]]
        for v, sol in sols.items():
            terms.append(Mul((comps[v], diff(sol, a))))
        out[a] = substitute(simplify(Add(tuple(terms))), sols)
    return out, sols


def _numeric_zero(e: Expr, coords, L: LevelSet, seed: int = 0) -> bool:
    e = simplify(e)
    if e == ZERO:
        return True
    consts = L.constants()
    rng = np.random.default_rng(seed)
    X = L.chart.uniform(64, rng)
    bound = substitute(e, {n: Const(float(v)) for n, v in consts.items()
                           if n in free_symbols(e)})
    extra = free_symbols(bound) - set(coords)
    if extra:
        return False
    vals = compile_exprs([bound], coords)(X)[0]
    vals = vals[np.isfinite(vals)]
    return vals.size > 0 and bool(np.all(np.abs(vals) < 1e-12))


def _const_value(e: Expr, consts: Mapping) -> float | None:
    e = substitute(e, {n: Const(float(v)) for n, v in consts.items()})
    e = simplify(e)
    if isinstance(e, Const):
        return float(e.value)
    if free_symbols(e):
        return None
    try:
        from .expr import evaluate
        return evaluate(e, {})
    except EvaluationError:
        return None


def _quadratic(base: Expr, u: str):
    """(alpha, beta) with base = alpha*u^2 + beta, else None."""
    d1 = diff(base, u)
    alpha = simplify(diff(d1, u) / 2)
    if u in free_symbols(alpha) or alpha == ZERO:
        return None
    if simplify(expand(d1 - 2 * alpha * Var(u))) != ZERO:
        return None
    beta = simplify(expand(base - alpha * Pow(Var(u), Fraction(2))))
    if u in free_symbols(beta):
        return None
    return alpha, beta


def antiderivative(g: Expr, u: str, consts: Mapping | None = None):
    """Table-driven antiderivative in u, or None when no rule applies."""
    consts = consts or {}
    g = simplify(g)
    if u not in free_symbols(g):
        return simplify(g * Var(u))
    r = _integrate(g, u, consts)
    if r is None:
        ge = expand(g)
        if ge != g:
            r = _integrate(ge, u, consts)
    return simplify(r) if r is not None else None


def _integrate(g: Expr, u: str, consts) -> Expr | None:
    U = Var(u)
    if u not in free_symbols(g):
        return g * U
    if isinstance(g, Add):
        parts = [_integrate(t, u, consts) for t in g.terms]
        return None if any(p is None for p in parts) else Add(tuple(parts))
    if isinstance(g, Mul):
        const = [f for f in g.factors if u not in free_symbols(f)]
        dep = [f for f in g.factors if u in free_symbols(f)]
        if const:
            inner = dep[0] if len(dep) == 1 else Mul(tuple(dep))
            r = _integrate(simplify(inner), u, consts)
            return None if r is None else Mul(tuple(const) + (r,))
        return None
    if g == U:
        return Pow(U, Fraction(2)) / 2
    if isinstance(g, Apply) and g.func == "exp":
        lin = _linear_in(g.arg, u)
        if lin:
            return g / lin[0]
        return None
    if isinstance(g, Pow):
        k, base = g.exp, g.base
        lin = _linear_in(base, u)
        if lin:
            a = lin[0]
            if k == -1:
                return Apply("log", base) / a
            return Pow(base, k + 1) / (a * (k + 1))
        quad = _quadratic(base, u)
        if quad and k in (-1, Fraction(-1, 2)):
            alpha, beta = quad
            av = _const_value(alpha, consts)
            bv = _const_value(beta, consts)
            if av is None or bv is None:
                return None
            if k == -1:
                if av * bv > 0:
                    ab = Pow(alpha * beta, Fraction(1, 2))
                    return Apply("atan", U * Pow(alpha / beta, Fraction(1, 2))) / ab
                if av < 0:  # beta - |alpha| u^2
                    ab = Pow(-alpha * beta, Fraction(1, 2))
                    return Apply("atanh", U * Pow(-alpha / beta, Fraction(1, 2))) / ab
                ab = Pow(-alpha * beta, Fraction(1, 2))
                return -Apply("atanh", U * Pow(alpha / -beta, Fraction(1, 2))) / ab
            if av < 0 < bv:
                ra = Pow(-alpha, Fraction(1, 2))
                return Apply("asin", U * Pow(-alpha / beta, Fraction(1, 2))) / ra
            if av > 0:
                ra = Pow(alpha, Fraction(1, 2))
                return Apply("log", U * ra + Pow(base, Fraction(1, 2))) / ra
    return None


def _tidy(e: Expr) -> Expr:
    e = simplify(e)
    x = simplify(expand(e))
    return x if len(render(x)) < len(render(e)) else e


def _depends_only(e: Expr, coord: str, coords) -> bool:
    return not ((free_symbols(e) & set(coords)) - {coord})


def solve_separable(omega: KForm, L: LevelSet, branch: int = 1):
    """First integral of a restricted 1-form of separable type, or NotSeparable."""
    res = restrict_form(omega, L, branch)
    if res is None:
        return NotSeparable("level set is not explicitly solvable for its coordinates")
    coeffs, sols = res
    coords = list(coeffs)
    live = [(x, c) for x, c in coeffs.items() if not _numeric_zero(c, omega.coords, L)]
    if not live:
        return NotSeparable("form vanishes on the leaf")
    if len(live) == 1:
        return Var(live[0][0])
    if len(live) > 2:
        return NotSeparable(f"form has {len(live)} nonzero coefficients on the leaf")
    consts = L.constants()
    (u, A), (v, B) = live

    def free_of_coords(e):
        return not (free_symbols(e) & set(coords))

    attempts = []
    if free_of_coords(B):
        attempts.append(("quotient", v, u, simplify(A / B)))
    if free_of_coords(A):
        attempts.append(("quotient", u, v, simplify(B / A)))
    if _depends_only(A, u, coords) and _depends_only(B, v, coords):
        attempts.append(("sum", u, v, None))
    attempts.append(("quotient", v, u, simplify(A / B)))
    attempts.append(("quotient", u, v, simplify(B / A)))
    for kind, x, y, q in attempts:
        if kind == "sum":
            Ga = antiderivative(A, u, consts)
            Gb = antiderivative(B, v, consts)
            if Ga is not None and Gb is not None:
                return _tidy(Ga + Gb)
            continue
        if not _depends_only(q, y, coords):
            continue
        G = antiderivative(q, y, consts)
        if G is not None:
            return _tidy(Var(x) + G)
    return NotSeparable("no antiderivative rule applies")


# --------------------------------------------------------------------------
# integral chains


@dataclass(frozen=True)
class ChainEntry:
    expr: Expr | None
    value: float | None
    name: str


def run_chain(seq: PfaffianSequence, entries: Sequence[ChainEntry], n_samples: int = 100,
              seed: int = 0, solve: bool = False) -> CheckReport:
    """Walk omega_{m-1}, ..., omega_1 checking (or finding) an integral at each stage.

    Without ``solve`` only the supplied entries are checked; a shorter chain
    passes with ``complete`` set to False.
    """
    chart = seq.system.chart
    n = len(seq.forms)
    L = LevelSet(chart)
    items, ok = [], True
    stages = n if solve else min(n, len(entries))
    for s in range(stages):
        k = n - s
        if s < len(entries):
            entry = entries[s]
        else:
            name = f"c{k}" if f"c{k}" not in chart.coords else f"K{k}"
            entry = ChainEntry(None, None, name)
        omega = seq[k]
        item = {"stage": k, "constant": entry.name}
        I = entry.expr
        if I is None and solve:
            found = solve_separable(omega, L)
            if found:
                I = found
                item["solved"] = render(found)
            else:
                item["not_separable"] = found.reason
        if I is None:
            item["passed"] = False
            item["message"] = "no integral supplied or found"
            items.append(item)
            ok = False
            break
        try:
            rep = check_pfaffian_solution(omega, I, L, n_samples, seed)
        except (SamplingError, EvaluationError, ValueError) as exc:
            item.update(passed=False, message=str(exc), integral=render(I))
            items.append(item)
            ok = False
            break
        item.update(rep.metrics)
        item["integral"] = render(I)
        item["integral_bound"] = rep.metrics["integral"]
        item["passed"] = rep.passed
        items.append(item)
        if not rep.passed:
            ok = False
            break
        value = entry.value
        if value is None:
            pts = sample_level_set(L, 1, seed + 7919, guards=[bind_constants(I, L)])
            value = float(compile_exprs([bind_constants(I, L)], chart.coords)(pts)[0, 0])
            item["value"] = value
        L = L.add(I, value, entry.name)
    return CheckReport("integral_chain", ok, {
        "stages": len(items), "complete": ok and len(items) == n, "samples": n_samples}, items)


# --------------------------------------------------------------------------
# flow


@dataclass(frozen=True)
class Trajectory:
    coords: tuple
    t0: float
    dt: float
    states: np.ndarray
    truncated: bool = False
    message: str = ""

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.states))

    @property
    def steps(self) -> int:
        return len(self.states) - 1


def flow(sys: HamiltonianSystem, x0, T: float, dt: float, guard_box=None,
         t0: float = 0.0) -> Trajectory:
    """Classical fixed-step RK4 on X_H."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    coords = sys.structure.coords
    if isinstance(x0, Mapping):
        x = np.array([float(x0[c]) for c in coords])
    else:
        x = np.asarray(x0, dtype=float)
    X = hamiltonian_vf(sys.structure, sys.hamiltonian)
    f = compile_scalar(list(X.components), coords)
    n = int(round(T / dt))
    states = np.empty((n + 1, len(coords)))
    states[0] = x
    lo = hi = None
    if guard_box is not None:
        lo = np.array([b[0] for b in guard_box])
        hi = np.array([b[1] for b in guard_box])
    with np.errstate(all="ignore"):
        return _rk4(f, x, n, dt, states, lo, hi, coords, t0)


def _rk4(f, x, n, dt, states, lo, hi, coords, t0) -> Trajectory:
    for i in range(n):
        try:
            k1 = np.array(f(x))
            k2 = np.array(f(x + 0.5 * dt * k1))
            k3 = np.array(f(x + 0.5 * dt * k2))
            k4 = np.array(f(x + dt * k3))
        except (EvaluationError, OverflowError) as exc:
            return Trajectory(coords, t0, dt, states[: i + 1], True,
                              f"domain error after t={t0 + i * dt:.10g}: {exc}")
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            return Trajectory(coords, t0, dt, states[: i + 1], True,
                              f"non-finite state after t={t0 + i * dt:.10g}")
        if lo is not None and (np.any(x < lo) or np.any(x > hi)):
            return Trajectory(coords, t0, dt, states[: i + 1], True,
                              f"left the guard box after t={t0 + i * dt:.10g}")
        states[i + 1] = x
    return Trajectory(coords, t0, dt, states)


def _values(traj: Trajectory, g: Expr) -> np.ndarray:
    g = simplify(as_expr(g))
    extra = free_symbols(g) - set(traj.coords)
    if extra:
        raise EvaluationError(f"unbound symbols {sorted(extra)}")
    return compile_exprs([g], traj.coords)(traj.states)[0]


def conservation(traj: Trajectory, g) -> float:
    """max |g(x(t)) - g(x(0))| / (1 + |g(x(0))|)."""
    v = _values(traj, g)
    bad = np.where(~np.isfinite(v))[0]
    if bad.size:
        raise EvaluationError(f"{render(as_expr(g))} undefined at state index {int(bad[0])}")
    return float(np.max(np.abs(v - v[0])) / (1.0 + abs(v[0])))


def check_rate(traj: Trajectory, f, h, tol: float = 1e-5) -> CheckReport:
    """Fourth-order central differences of f against +-h, sign picked per point."""
    fv = _values(traj, f)
    hv = _values(traj, h)
    if len(fv) < 5:
        return CheckReport("rate", False, {}, message="trajectory too short")
    d = (fv[:-4] - 8 * fv[1:-3] + 8 * fv[3:-1] - fv[4:]) / (12 * traj.dt)
    hi = hv[2:-2]
    usable = np.isfinite(d) & np.isfinite(hi)
    dp = np.abs(d - hi)
    dm = np.abs(d + hi)
    sign = np.where(dp <= dm, 1, -1)
    dev = np.minimum(dp, dm)[usable]
    flips = int(np.sum(sign[usable][1:] != sign[usable][:-1])) if usable.sum() > 1 else 0
    frac = float(np.mean(usable))
    worst = float(np.max(dev)) if dev.size else float("inf")
    passed = bool(dev.size and worst <= tol and frac >= 0.95)
    return CheckReport("rate", passed, {
        "f": render(as_expr(f)), "h": render(as_expr(h)), "max_deviation": worst,
        "tolerance": tol, "evaluated_fraction": frac, "sign_changes": flips})
