"""Command line front end: pfaffkit {verify,forms,integrals,flow,extend,pfaffian}."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cinf import (check_closure_numeric, check_closure_symbolic, check_independence,
                   check_reeb_compatibility)
from .document import DocumentError, dump_document, extended_document, load_document
from .expr import (Const, EvaluationError, ExprError, compile_exprs, free_symbols, parse, render,
                   substitute)
from .forms import SkewExprMatrix, cross_check_paths, forms_contraction, forms_minor, pfaffian
from .geometry import GeometryError, check_jacobi_axioms
from .integration import check_frobenius, check_rate, conservation, flow, run_chain
from .report import CheckReport, clean

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
RANK_TOL = 1e-8


class InputError(Exception):
    pass


def _report(command: str, doc, settings: dict, checks: list, extra: dict | None = None) -> dict:
    out = {"command": command, "settings": settings,
           "checks": [c.to_dict() for c in checks],
           "passed": all(bool(c) for c in checks)}
    if doc is not None:
        out["system"] = doc.system.name or doc.source
        out["coordinates"] = list(doc.coords)
    if extra:
        out.update(extra)
    return clean(out)


def _emit(report: dict, args, lines=()) -> int:
    if args.json:
        sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    else:
        for line in lines:
            print(line)
        for c in report["checks"]:
            flag = "PASS" if c["passed"] else "FAIL"
            bits = [f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}"
                    for k, v in c["metrics"].items() if isinstance(v, (int, float, str))]
            tail = f" ({', '.join(bits)})" if bits else ""
            print(f"[{flag}] {c['name']}{tail}" + (f" - {c['message']}" if c.get("message") else ""))
            for it in c.get("items", []):
                if not it.get("passed", True):
                    label = it.get("pair", it.get("stage", it.get("i", "")))
                    print(f"    failed at {label}: {_short(it)}")
        print("PASS" if report["passed"] else "FAIL")
    return EXIT_OK if report["passed"] else EXIT_FAIL


def _short(item: dict) -> str:
    keys = [k for k in item if k not in ("passed",)]
    return ", ".join(f"{k}={item[k]}" for k in keys[:6])


def _load(args):
    doc = load_document(args.document)
    if args.seed is not None:
        doc.seed = args.seed
    return doc


def _settings(args, doc, **more) -> dict:
    s = {"samples": args.samples, "seed": doc.seed, "rank_tolerance": RANK_TOL}
    s.update(more)
    return s


# --------------------------------------------------------------------------


def cmd_verify(args) -> int:
    doc = _load(args)
    sys_ = doc.system
    sys_.require_complete()
    mode = args.mode or ("poisson" if sys_.structure.is_poisson else "jacobi")
    n, seed = args.samples, doc.seed
    checks = [check_jacobi_axioms(sys_.structure, n, seed, tol=1e-9),
              check_independence(sys_, n, seed, mode=mode, rank_tol=RANK_TOL)]
    if sys_.closure is not None:
        checks.append(check_closure_symbolic(sys_, n, seed, tol=1e-9, rank_tol=RANK_TOL))
    else:
        checks.append(check_closure_numeric(sys_, n, seed, rank_tol=RANK_TOL))
    if mode == "jacobi":
        checks.append(check_reeb_compatibility(sys_, n, seed, tol=1e-8))
    rep = _report("verify", doc, _settings(args, doc, mode=mode, axiom_tolerance=1e-9,
                                           closure_tolerance=1e-9), checks)
    return _emit(rep, args)


def _sequences(doc, path: str) -> dict:
    sys_ = doc.system
    sys_.require_complete()
    out = {}
    if path in ("minor", "both"):
        out["minor"] = forms_minor(sys_)
    if path in ("contraction", "both"):
        out["contraction"] = forms_contraction(sys_)
    for key, seq in out.items():
        for i, form in sorted(doc.overrides.items()):
            seq = seq.replace(i, form)
        out[key] = seq
    return out


def _form_table(seq) -> dict:
    return {f"omega_{i}": {c: render(v) for c, v in zip(seq[i].coords, seq[i].components())}
            for i in range(1, len(seq) + 1)}


def cmd_forms(args) -> int:
    doc = _load(args)
    seqs = _sequences(doc, args.path)
    checks = []
    if args.path == "both":
        checks.append(cross_check_paths(doc.system, args.samples, doc.seed, tol=1e-8))
    if args.frobenius:
        for key, seq in seqs.items():
            rep = check_frobenius(seq, args.samples, doc.seed, tol=1e-8)
            rep.name = f"frobenius[{key}]"
            checks.append(rep)
    lines = []
    for key, seq in seqs.items():
        lines.append(f"# {key} path")
        for i in range(1, len(seq) + 1):
            lines.append(f"omega_{i} = {seq[i].render()}")
    if doc.overrides:
        lines.append(f"# forms replaced from the document: {sorted(doc.overrides)}")
    rep = _report("forms", doc, _settings(args, doc, path=args.path, frobenius_tolerance=1e-8),
                  checks, {"forms": {k: _form_table(s) for k, s in seqs.items()}})
    return _emit(rep, args, lines)


def cmd_integrals(args) -> int:
    doc = _load(args)
    if not doc.chain and not args.solve_separable:
        raise InputError("document has no integral_chain; pass --solve-separable to search")
    seq = _sequences(doc, "contraction")["contraction"]
    rep = run_chain(seq, doc.chain, args.samples, doc.seed, solve=args.solve_separable)
    lines = []
    for it in rep.items:
        found = f"  (solved: {it['solved']})" if "solved" in it else ""
        if "not_separable" in it:
            found = f"  (not separable: {it['not_separable']})"
        flag = "ok" if it.get("passed") else "FAILED"
        lines.append(f"stage {it['stage']}: {it.get('integral', '?')} = {it['constant']} "
                     f"{flag}{found}")
    if not rep.passed and rep.items:
        rep.message = f"stage {rep.items[-1]['stage']} failed"
    out = _report("integrals", doc, _settings(args, doc, solve_separable=args.solve_separable,
                                              path="contraction"), [rep])
    return _emit(out, args, lines)


def _split(text: str) -> list:
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return [p.strip() for p in parts if p.strip()]


def _initial_point(doc, text: str) -> dict:
    x0 = {}
    for part in _split(text or ""):
        if "=" not in part:
            raise InputError(f"--x0 entry {part!r} must be name=value")
        k, v = part.split("=", 1)
        k = k.strip()
        if k not in doc.coords:
            raise InputError(f"--x0 names unknown coordinate {k!r}")
        try:
            x0[k] = float(v)
        except ValueError:
            raise InputError(f"--x0 value for {k!r} is not a number") from None
    missing = [c for c in doc.coords if c not in x0]
    if missing:
        raise InputError(f"--x0 lacks values for {missing}")
    return x0


def _flow_expression(doc, text: str, x0: dict):
    """Definitions and H are available; NAMEc is NAME evaluated at x0."""
    named = doc.named()
    consts = {}
    X = np.array([[x0[c] for c in doc.coords]])
    for name, e in named.items():
        consts[f"{name}c"] = float(compile_exprs([e], doc.coords)(X)[0, 0])
    e = doc.expression(text, f"expression {text!r}", extra=consts.keys())
    used = free_symbols(e) & consts.keys()
    return substitute(e, {n: Const(consts[n]) for n in used}) if used else e


def cmd_flow(args) -> int:
    doc = _load(args)
    if args.dt <= 0 or args.T <= 0:
        raise InputError("--T and --dt must be positive")
    x0 = _initial_point(doc, args.x0)
    X = np.array([[x0[c] for c in doc.coords]])
    if not bool(doc.system.chart.inside(X)[0]):
        raise InputError("x0 lies outside the sample box")
    conserve = [(t, _flow_expression(doc, t, x0)) for t in _split(args.conserve or "")]
    rates = []
    for spec in args.rate or []:
        if ":" not in spec:
            raise InputError(f"--rate {spec!r} must be f:h")
        f, h = spec.split(":", 1)
        rates.append((spec, _flow_expression(doc, f, x0), _flow_expression(doc, h, x0)))
    guard = doc.system.chart.box if args.guard_box else None
    traj = flow(doc.system, x0, args.T, args.dt, guard_box=guard)
    checks = []
    if traj.truncated:
        last = float(traj.times[-1])
        checks.append(CheckReport("flow", False, {"last_good_time": last,
                                                  "steps": traj.steps},
                                  message=traj.message))
    else:
        checks.append(CheckReport("flow", True, {"steps": traj.steps,
                                                 "final_time": float(traj.times[-1])}))
    half = None
    if args.order_check and conserve:
        half = flow(doc.system, x0, args.T, 2 * args.dt, guard_box=guard)
    for text, g in conserve:
        try:
            drift = conservation(traj, g)
        except EvaluationError as exc:
            checks.append(CheckReport(f"conserve[{text}]", False, {}, message=str(exc)))
            continue
        metrics = {"drift": drift, "tolerance": args.tol}
        if half is not None and not half.truncated:
            coarse = conservation(half, g)
            metrics["drift_at_double_dt"] = coarse
            metrics["order_ratio"] = coarse / drift if drift > 0 else float("inf")
        checks.append(CheckReport(f"conserve[{text}]", drift <= args.tol, metrics))
    for spec, f, h in rates:
        try:
            rep = check_rate(traj, f, h, tol=args.tol)
        except EvaluationError as exc:
            rep = CheckReport("rate", False, {}, message=str(exc))
        rep.name = f"rate[{spec}]"
        checks.append(rep)
    if args.csv:
        _write_csv(traj, args.csv)
    rep = _report("flow", doc, _settings(args, doc, T=args.T, dt=args.dt, tol=args.tol,
                                         x0=x0, integrator="rk4",
                                         guard_box=bool(args.guard_box)), checks,
                  {"final_state": dict(zip(doc.coords, traj.states[-1].tolist()))})
    return _emit(rep, args)


def _write_csv(traj, target: str):
    rows = [",".join(("t",) + tuple(traj.coords))]
    for t, x in zip(traj.times, traj.states):
        rows.append(",".join(format(float(v), ".17g") for v in (t, *x)))
    text = "\n".join(rows) + "\n"
    if target == "-":
        sys.stdout.write(text)
    else:
        Path(target).write_text(text, encoding="utf-8")


def cmd_extend(args) -> int:
    path = Path(args.document)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DocumentError(f"cannot read file: {exc.strerror}", str(path)) from None
    except json.JSONDecodeError as exc:
        raise DocumentError(f"invalid JSON at line {exc.lineno}: {exc.msg}", str(path)) from None
    out = extended_document(raw, args.time_name, args.energy_name,
                            tuple(args.time_box), tuple(args.energy_box))
    text = dump_document(out)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def read_skew_matrix(payload) -> SkewExprMatrix:
    """Rows (lower triangle ignored, may be null) or {"size", "upper": {"i,j": expr}}."""
    def ex(v, where):
        if isinstance(v, bool) or not isinstance(v, (str, int, float)):
            raise InputError(f"{where}: expected an expression")
        try:
            return parse(str(v))
        except ExprError as exc:
            raise InputError(f"{where}: {exc}") from None

    if isinstance(payload, dict):
        size = payload.get("size")
        if not isinstance(size, int) or size < 0:
            raise InputError("'size' must be a non-negative integer")
        up = {}
        for k, v in (payload.get("upper") or {}).items():
            parts = str(k).split(",")
            if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
                raise InputError(f"upper key {k!r} must be 'i,j'")
            i, j = (int(p) for p in parts)
            if not (0 <= i < j < size):
                raise InputError(f"upper key {k!r} must satisfy 0 <= i < j < size")
            up[(i, j)] = ex(v, f"upper[{k!r}]")
        return SkewExprMatrix(size, up)
    if not isinstance(payload, list) or not all(isinstance(r, list) for r in payload):
        raise InputError("matrix must be a list of rows or an object with 'size' and 'upper'")
    n = len(payload)
    up = {}
    for i, row in enumerate(payload):
        if len(row) != n:
            raise InputError(f"row {i} has {len(row)} entries, expected {n}")
        for j in range(i + 1, n):
            up[(i, j)] = ex(row[j], f"row {i}, column {j}")
    return SkewExprMatrix(n, up)


def cmd_pfaffian(args) -> int:
    path = Path(args.matrix)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"{path}: cannot read file: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    A = read_skew_matrix(payload)
    pf = pfaffian(A)
    if args.json:
        sys.stdout.write(json.dumps({"size": A.size, "pfaffian": render(pf)}, sort_keys=True) + "\n")
    else:
        print(render(pf))
    return EXIT_OK


# --------------------------------------------------------------------------


def _interval(text: str) -> tuple:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo,hi, got {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError("interval needs lo < hi")
    return (lo, hi)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pfaffkit", description=(
        "Verify C-infinity structures of Hamiltonian systems, build their Pfaffian "
        "1-forms and check integral chains and flows."))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("document", help="system document (JSON)")
        sp.add_argument("--samples", type=int, default=100, help="sample points (default 100)")
        sp.add_argument("--seed", type=int, default=None,
                        help="overrides PFAFF_SEED and the document seed")
        sp.add_argument("--json", action="store_true", help="print the JSON report")

    sp = sub.add_parser("verify", help="structure axioms, independence, closure, Reeb")
    common(sp)
    sp.add_argument("--mode", choices=("poisson", "jacobi"), default=None)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("forms", help="print the Pfaffian 1-forms")
    common(sp)
    sp.add_argument("--path", choices=("minor", "contraction", "both"), default="contraction")
    sp.add_argument("--frobenius", action="store_true", help="certify complete integrability")
    sp.set_defaults(func=cmd_forms)

    sp = sub.add_parser("integrals", help="check the integral chain stage by stage")
    common(sp)
    sp.add_argument("--solve-separable", action="store_true",
                    help="try to find integrals for stages without one")
    sp.set_defaults(func=cmd_integrals)

    sp = sub.add_parser("flow", help="RK4 trajectory with conservation and rate checks")
    common(sp)
    sp.add_argument("--x0", required=True, help="initial point, name=value,...")
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--dt", type=float, required=True)
    sp.add_argument("--conserve", default="", help="comma separated expressions")
    sp.add_argument("--rate", action="append", help="f:h, repeatable")
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--csv", default=None, help="write the trajectory ('-' for stdout)")
    sp.add_argument("--guard-box", action="store_true",
                    help="stop when the state leaves the sample box")
    sp.add_argument("--order-check", action="store_true",
                    help="rerun at 2*dt and report drift ratios")
    sp.set_defaults(func=cmd_flow)

    sp = sub.add_parser("extend", help="autonomous extension of a time-dependent Hamiltonian")
    sp.add_argument("document")
    sp.add_argument("--time-name", default="t")
    sp.add_argument("--energy-name", default="Ecoord")
    sp.add_argument("--time-box", type=_interval, default=(0.0, 1.0))
    sp.add_argument("--energy-box", type=_interval, default=(-1.0, 1.0))
    sp.add_argument("-o", "--output", default=None)
    sp.set_defaults(func=cmd_extend)

    sp = sub.add_parser("pfaffian", help="Pfaffian of a skew matrix of expressions")
    sp.add_argument("matrix")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_pfaffian)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DocumentError, InputError, GeometryError, ExprError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
