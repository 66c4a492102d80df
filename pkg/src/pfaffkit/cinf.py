"""Hamiltonian systems with ordered families and their structure checks."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .expr import (ZERO, Const, Expr, Var, as_expr, compile_exprs, diff,
                   free_symbols, render, simplify, substitute)
from .geometry import (Chart, GeometryError, JacobiStructure, VectorField,
                       hamiltonian_vf, jacobi_bracket, sample_points)
from .report import CheckReport, numeric_rank

_U = re.compile(r"u(\d+)\Z")


class SystemDefinitionError(GeometryError):
    """Malformed Hamiltonian system."""


class ClosureSchemaError(SystemDefinitionError):
    pass


class NeedsClosureTable(SystemDefinitionError):
    pass


def closure_var(k: int) -> str:
    return f"u{k}"


@dataclass(frozen=True, eq=False)
class HamiltonianSystem:
    structure: JacobiStructure
    hamiltonian: Expr
    family: tuple = ()
    auxiliary: Expr | None = None
    auxiliary_field: VectorField | None = None
    closure: Mapping | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "hamiltonian", simplify(as_expr(self.hamiltonian)))
        object.__setattr__(self, "family", tuple(simplify(as_expr(f)) for f in self.family))
        if self.auxiliary is not None:
            object.__setattr__(self, "auxiliary", simplify(as_expr(self.auxiliary)))
        m = self.structure.m
        if len(self.family) > m - 2:
            raise SystemDefinitionError(f"family has {len(self.family)} entries, at most {m - 2} allowed")
        coords = set(self.structure.coords)
        for f in (self.hamiltonian,) + self.family + ((self.auxiliary,) if self.auxiliary is not None else ()):
            extra = free_symbols(f) - coords
            if extra:
                raise SystemDefinitionError(f"{render(f)} uses symbols outside the chart: {sorted(extra)}")
        if self.closure is not None:
            table = {}
            for (j, i), F in dict(self.closure).items():
                j, i = int(j), int(i)
                if not (0 <= i < j <= m - 2):
                    raise ClosureSchemaError(f"closure entry ({j},{i}) needs j > i >= 0 and j <= {m - 2}")
                F = simplify(as_expr(F))
                for s in free_symbols(F):
                    mt = _U.match(s)
                    if not mt or int(mt.group(1)) > j:
                        raise ClosureSchemaError(
                            f"closure entry ({j},{i}) may only use u0..u{j}, found {s!r}")
                table[(j, i)] = F
            object.__setattr__(self, "closure", table)

    @property
    def chart(self) -> Chart:
        return self.structure.chart

    @property
    def m(self) -> int:
        return self.structure.m

    @property
    def complete(self) -> bool:
        return len(self.family) == self.m - 2

    def require_complete(self):
        if not self.complete:
            raise SystemDefinitionError(
                f"family has {len(self.family)} entries; {self.m - 2} are needed")

    def functions(self) -> tuple:
        """(f_0 = H, f_1, ..., f_{m-2})."""
        return (self.hamiltonian,) + self.family

    def fields(self) -> list:
        """Hamiltonian fields of f_0..f_{m-2} followed by the auxiliary field."""
        self.require_complete()
        out = [hamiltonian_vf(self.structure, f) for f in self.functions()]
        if self.auxiliary_field is not None:
            out.append(self.auxiliary_field)
        elif self.auxiliary is not None:
            out.append(hamiltonian_vf(self.structure, self.auxiliary))
        else:
            raise SystemDefinitionError("an auxiliary function or field is needed to build forms")
        return out

    def with_family(self, family: Sequence, **changes) -> "HamiltonianSystem":
        return replace(self, family=tuple(as_expr(f) for f in family), **changes)

    def closure_value(self, j: int, i: int) -> Expr | None:
        """F_ji composed with the family, or None if the table lacks it."""
        if not self.closure or (j, i) not in self.closure:
            return None
        fs = self.functions()
        return substitute(self.closure[(j, i)], {closure_var(k): fs[k] for k in range(j + 1)})


def _pairs(sys: HamiltonianSystem):
    k = len(sys.functions())
    return [(j, i) for j in range(1, k) for i in range(j)]


def check_independence(sys: HamiltonianSystem, n_samples: int = 100, seed: int = 0,
                       mode: str | None = None, fraction: float = 0.95,
                       rank_tol: float = 1e-8) -> CheckReport:
    """Gradient rank and Hamiltonian-field rank of (f_0, ..., f_{m-2})."""
    mode = mode or ("poisson" if sys.structure.is_poisson else "jacobi")
    fs = sys.functions()
    xs = sys.structure.coords
    k, m = len(fs), sys.m
    grads = [diff(f, x) for f in fs for x in xs]
    vfs = [c for f in fs for c in hamiltonian_vf(sys.structure, f).components]
    X = sample_points(sys.chart, list(fs) + grads + vfs, n_samples, seed)
    G = compile_exprs(grads, xs)(X).T.reshape(len(X), k, m)
    V = compile_exprs(vfs, xs)(X).T.reshape(len(X), k, m)
    gr = np.array([numeric_rank(g, rank_tol) for g in G])
    vr = np.array([numeric_rank(v, rank_tol) for v in V])
    grad_frac = float(np.mean(gr == k))
    vf_frac = float(np.mean(vr == k))
    gate = grad_frac if mode == "poisson" else vf_frac
    passed = gate >= fraction and sys.complete
    return CheckReport("independence", passed, {
        "mode": mode, "functions": k, "target_rank": m - 1,
        "gradient_rank_min": int(gr.min()), "gradient_full_fraction": grad_frac,
        "field_rank_min": int(vr.min()), "field_full_fraction": vf_frac,
        "required_fraction": fraction, "rank_tolerance": rank_tol, "samples": len(X)},
        message="" if sys.complete else "family is incomplete")


def _numeric_pair(sys, j, i, X, rank_tol):
    fs = sys.functions()
    xs = sys.structure.coords
    g = jacobi_bracket(sys.structure, fs[j], fs[i])
    rows = [diff(f, x) for f in fs[: j + 1] for x in xs]
    grow = [diff(g, x) for x in xs]
    vals = compile_exprs(rows + grow, xs)(X).T.reshape(len(X), j + 2, len(xs))
    before = np.array([numeric_rank(v[:-1], rank_tol) for v in vals])
    after = np.array([numeric_rank(v, rank_tol) for v in vals])
    jumps = after > before
    return {
        "pair": [j, i], "mode": "numeric", "bracket": render(g),
        "rank_before_min": int(before.min()), "rank_after_max": int(after.max()),
        "jump_fraction": float(np.mean(jumps)), "passed": bool(not jumps.any()),
    }


def _pair_exprs(sys, pairs):
    fs = sys.functions()
    xs = sys.structure.coords
    out = list(fs)
    for j, i in pairs:
        g = jacobi_bracket(sys.structure, fs[j], fs[i])
        out.append(g)
        out.extend(diff(g, x) for x in xs)
        F = sys.closure_value(j, i)
        if F is not None:
            out.append(F)
    out.extend(diff(f, x) for f in fs for x in xs)
    return out


def check_closure_numeric(sys: HamiltonianSystem, n_samples: int = 100, seed: int = 0,
                          rank_tol: float = 1e-8) -> CheckReport:
    """d{f_j,f_i} must lie in span(df_0..df_j) at every sample."""
    pairs = _pairs(sys)
    X = sample_points(sys.chart, _pair_exprs(sys, pairs), n_samples, seed)
    items = [_numeric_pair(sys, j, i, X, rank_tol) for j, i in pairs]
    passed = all(it["passed"] for it in items)
    failed = [it["pair"] for it in items if not it["passed"]]
    return CheckReport("closure", passed, {
        "mode": "numeric", "pairs": len(items), "failed_pairs": failed,
        "samples": len(X), "rank_tolerance": rank_tol}, items)


def check_closure_symbolic(sys: HamiltonianSystem, n_samples: int = 100, seed: int = 0,
                           tol: float = 1e-9, rank_tol: float = 1e-8) -> CheckReport:
    """Compare {f_j,f_i} with the tabulated F_ji(f_0..f_j) at samples.

    Pairs missing from the table fall back to the numeric rank test.
    """
    if sys.closure is None:
        raise NeedsClosureTable("symbolic closure check needs a closure table")
    pairs = _pairs(sys)
    X = sample_points(sys.chart, _pair_exprs(sys, pairs), n_samples, seed)
    fs = sys.functions()
    xs = sys.structure.coords
    items = []
    for j, i in pairs:
        F = sys.closure_value(j, i)
        if F is None:
            items.append(_numeric_pair(sys, j, i, X, rank_tol))
            continue
        g = jacobi_bracket(sys.structure, fs[j], fs[i])
        gv, Fv = compile_exprs([g, F], xs)(X)
        r = np.abs(gv - Fv)
        ratio = r / (1.0 + np.abs(gv))
        worst = float(np.nanmax(ratio)) if np.all(np.isfinite(ratio)) else float("inf")
        items.append({"pair": [j, i], "mode": "symbolic", "bracket": render(g),
                      "table": render(sys.closure[(j, i)]),
                      "max_residual": float(np.max(r)) if np.all(np.isfinite(r)) else None,
                      "max_scaled_residual": worst, "passed": bool(worst <= tol)})
    passed = all(it["passed"] for it in items)
    failed = [it["pair"] for it in items if not it["passed"]]
    return CheckReport("closure", passed, {
        "mode": "symbolic", "pairs": len(items), "failed_pairs": failed,
        "samples": len(X), "tolerance": tol}, items)


def check_reeb_compatibility(sys: HamiltonianSystem, n_samples: int = 100, seed: int = 0,
                             tol: float = 1e-8) -> CheckReport:
    """(F_ji - sum_k u_k dF_ji/du_k)(f) * E must lie in span(X_f0..X_fj)."""
    S = sys.structure
    if S.is_poisson:
        return CheckReport("reeb_compatibility", True, {"auto": True},
                           message="E = 0, correction term vanishes")
    if sys.closure is None:
        raise NeedsClosureTable("Reeb compatibility needs a closure table")
    fs = sys.functions()
    xs = S.coords
    pairs = _pairs(sys)
    corr = {}
    for j, i in pairs:
        if (j, i) not in sys.closure:
            raise NeedsClosureTable(f"closure table lacks entry ({j},{i})")
        F = sys.closure[(j, i)]
        us = [closure_var(k) for k in range(j + 1)]
        euler = F
        for u in us:
            euler = euler - Var(u) * diff(F, u)
        val = substitute(euler, {u: fs[k] for k, u in enumerate(us)})
        corr[(j, i)] = [simplify(val * e) for e in S.E]
    vfs = [hamiltonian_vf(S, f) for f in fs]
    vf_exprs = [c for v in vfs for c in v.components]
    allc = [c for v in corr.values() for c in v]
    X = sample_points(sys.chart, list(fs) + vf_exprs + allc, n_samples, seed)
    VF = compile_exprs(vf_exprs, xs)(X).T.reshape(len(X), len(fs), len(xs))
    items = []
    for (j, i), comps in corr.items():
        C = compile_exprs(comps, xs)(X).T
        worst = 0.0
        for p in range(len(X)):
            target = C[p]
            nrm = np.linalg.norm(target)
            if nrm <= 1e-14:
                continue
            A = VF[p, : j + 1].T
            coef, *_ = np.linalg.lstsq(A, target, rcond=None)
            worst = max(worst, float(np.linalg.norm(A @ coef - target) / nrm))
        items.append({"pair": [j, i], "correction": [render(c) for c in comps],
                      "max_relative_residual": worst, "passed": worst <= tol})
    passed = all(it["passed"] for it in items)
    return CheckReport("reeb_compatibility", passed, {
        "pairs": len(items), "tolerance": tol, "samples": len(X)}, items)


def extend_time_dependent(H, structure: JacobiStructure, time_name: str = "t",
                          energy_name: str = "Ecoord", time_box=(0.0, 1.0),
                          energy_box=(-1.0, 1.0)) -> HamiltonianSystem:
    """Autonomous system on (t, q..., E, p...) with H_ext = H + E and f_1 = t.

    The input chart is read as (q_1..q_n, p_1..p_n); {t,E} = 1 is added to
    its bivector and the first family slot is seeded with t.
    """
    H = simplify(as_expr(H))
    coords = structure.coords
    if not structure.is_poisson:
        raise SystemDefinitionError("time extension needs a Poisson structure (E = 0)")
    if len(coords) % 2:
        raise SystemDefinitionError("time extension needs an even-dimensional chart")
    for name in (time_name, energy_name):
        if name in coords:
            raise SystemDefinitionError(f"reserved name {name!r} collides with a coordinate")
    if energy_name in free_symbols(H):
        raise SystemDefinitionError(f"Hamiltonian already uses the reserved energy name {energy_name!r}")
    extra = free_symbols(H) - set(coords) - {time_name}
    if extra:
        raise SystemDefinitionError(f"Hamiltonian uses unknown symbols {sorted(extra)}")
    n = len(coords) // 2
    new = (time_name,) + coords[:n] + (energy_name,) + coords[n:]
    box = dict(zip(coords, structure.chart.box))
    box[time_name] = tuple(time_box)
    box[energy_name] = tuple(energy_box)
    chart = Chart(new, tuple(box[c] for c in new), structure.chart.eps_dom)
    pos = {c: new.index(c) for c in coords}
    lam = {(pos[coords[a]], pos[coords[b]]): v for (a, b), v in structure.lam.items()}
    lam[(0, n + 1)] = Const(1)
    S = JacobiStructure(chart, lam, (), kind=structure.kind)
    return HamiltonianSystem(S, simplify(H + Var(energy_name)), (Var(time_name),),
                             name="extended")
