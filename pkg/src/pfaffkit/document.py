"""JSON system documents: loading, validation and serialization."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .cinf import ClosureSchemaError, HamiltonianSystem, SystemDefinitionError, extend_time_dependent
from .expr import ExprError, Expr, ParseError, free_symbols, parse, render, substitute
from .geometry import (Chart, GeometryError, JacobiStructure, KForm, VectorField,
                       contact_to_jacobi, lcs_to_jacobi, symplectic_to_jacobi)
from .integration import ChainEntry

KINDS = ("poisson", "symplectic", "lcs", "contact", "jacobi")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_KNOWN_KEYS = {"name", "coordinates", "structure", "hamiltonian", "family", "auxiliary",
               "auxiliary_field", "closure", "sample_box", "seed", "integral_chain",
               "definitions", "description", "form_overrides"}


class DocumentError(Exception):
    """Invalid document; ``location`` points at the offending key."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


@dataclass
class SystemDocument:
    raw: dict
    system: HamiltonianSystem
    seed: int = 0
    chain: list = field(default_factory=list)
    definitions: dict = field(default_factory=dict)
    source: str = ""
    overrides: dict = field(default_factory=dict)

    @property
    def coords(self) -> tuple:
        return self.system.structure.coords

    def expression(self, text: str, where: str = "expression", extra=()) -> Expr:
        """Parse text over the chart, expanding definitions and the name H."""
        return _expr(text, where, self.coords, self.named(), extra)

    def named(self) -> dict:
        names = dict(self.definitions)
        if "H" not in names and "H" not in self.coords:
            names["H"] = self.system.hamiltonian
        return names


def _expr(text, where, coords, defs: Mapping, extra=()) -> Expr:
    if not isinstance(text, (str, int, float)) or isinstance(text, bool):
        raise DocumentError(f"expected an expression string, got {type(text).__name__}", where)
    try:
        e = parse(str(text))
    except ParseError as exc:
        raise DocumentError(f"parse error: {exc}", where) from None
    except ExprError as exc:
        raise DocumentError(str(exc), where) from None
    used = free_symbols(e) & defs.keys()
    if used:
        e = substitute(e, {n: defs[n] for n in used})
    unknown = free_symbols(e) - set(coords) - set(extra)
    if unknown:
        raise DocumentError(f"unknown symbols {sorted(unknown)}", where)
    return e


def _pair_key(key: str, coords, where) -> tuple:
    parts = [p.strip() for p in str(key).split(",")]
    if len(parts) != 2:
        raise DocumentError(f"key {key!r} must look like 'a,b'", where)
    out = []
    for p in parts:
        if p in coords:
            out.append(coords.index(p))
        elif p.isdigit() and int(p) < len(coords):
            out.append(int(p))
        else:
            raise DocumentError(f"{p!r} is not a coordinate", where)
    if out[0] == out[1]:
        raise DocumentError(f"key {key!r} repeats a coordinate", where)
    return tuple(out)


def _coord_key(key: str, coords, where) -> int:
    k = str(key).strip()
    if k in coords:
        return coords.index(k)
    raise DocumentError(f"{k!r} is not a coordinate", where)


def _require(raw: Mapping, key: str, kind, where=""):
    if key not in raw:
        raise DocumentError("missing required key", f"{where}{key}")
    val = raw[key]
    if not isinstance(val, kind):
        raise DocumentError(f"expected {getattr(kind, '__name__', kind)}", f"{where}{key}")
    return val


def _two_form(payload, coords, defs, where) -> KForm:
    if not isinstance(payload, Mapping):
        raise DocumentError("expected a map 'a,b' -> expression", where)
    comps = {}
    for k, v in payload.items():
        a, b = _pair_key(k, coords, where)
        e = _expr(v, f"{where}[{k!r}]", coords, defs)
        if a > b:
            a, b, e = b, a, -e
        comps[(a, b)] = comps[(a, b)] + e if (a, b) in comps else e
    return KForm(2, coords, comps)


def _one_form(payload, coords, defs, where) -> KForm:
    if not isinstance(payload, Mapping):
        raise DocumentError("expected a map coordinate -> expression", where)
    comps = {}
    for k, v in payload.items():
        comps[(_coord_key(k, coords, where),)] = _expr(v, f"{where}[{k!r}]", coords, defs)
    return KForm(1, coords, comps)


def build_structure(spec: Mapping, chart: Chart, defs: Mapping) -> JacobiStructure:
    if not isinstance(spec, Mapping):
        raise DocumentError("expected an object", "structure")
    kind = spec.get("kind")
    if kind not in KINDS:
        raise DocumentError(f"kind must be one of {', '.join(KINDS)}", "structure.kind")
    coords = list(chart.coords)
    try:
        if kind in ("poisson", "jacobi"):
            lam = {}
            payload = spec.get("lambda", {})
            if not isinstance(payload, Mapping):
                raise DocumentError("expected a map 'a,b' -> expression", "structure.lambda")
            for k, v in payload.items():
                a, b = _pair_key(k, coords, "structure.lambda")
                e = _expr(v, f"structure.lambda[{k!r}]", coords, defs)
                lam[(a, b)] = e
            E = ()
            if kind == "jacobi":
                Es = spec.get("E", [])
                if not isinstance(Es, list) or (Es and len(Es) != len(coords)):
                    raise DocumentError("E must list one expression per coordinate", "structure.E")
                E = tuple(_expr(v, f"structure.E[{i}]", coords, defs) for i, v in enumerate(Es))
            elif spec.get("E"):
                raise DocumentError("a poisson structure has no E; use kind 'jacobi'",
                                    "structure.E")
            return JacobiStructure(chart, lam, E, kind=kind)
        if kind == "symplectic":
            om = _two_form(spec.get("omega"), coords, defs, "structure.omega")
            return symplectic_to_jacobi(om, chart)
        if kind == "lcs":
            om = _two_form(spec.get("omega"), coords, defs, "structure.omega")
            th = _one_form(spec.get("theta"), coords, defs, "structure.theta")
            return lcs_to_jacobi(om, th, chart)
        eta = _one_form(spec.get("eta"), coords, defs, "structure.eta")
        return contact_to_jacobi(eta, chart)
    except GeometryError as exc:
        raise DocumentError(str(exc), "structure") from None


def _chart(raw, coords) -> Chart:
    box = raw.get("sample_box", {})
    if not isinstance(box, Mapping):
        raise DocumentError("expected a map coordinate -> [lo, hi]", "sample_box")
    for k in box:
        if k not in coords:
            raise DocumentError(f"{k!r} is not a coordinate", "sample_box")
    missing = [c for c in coords if c not in box]
    if missing:
        raise DocumentError(f"no interval for {missing}", "sample_box")
    ivs = []
    for c in coords:
        iv = box[c]
        if (not isinstance(iv, list) or len(iv) != 2
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in iv)):
            raise DocumentError("expected [lo, hi]", f"sample_box.{c}")
        ivs.append(tuple(iv))
    try:
        return Chart(tuple(coords), tuple(ivs))
    except GeometryError as exc:
        raise DocumentError(str(exc), "sample_box") from None


def _definitions(raw, coords) -> dict:
    defs: dict = {}
    payload = raw.get("definitions", {})
    if not isinstance(payload, Mapping):
        raise DocumentError("expected a map name -> expression", "definitions")
    for name, text in payload.items():
        if not _NAME.match(name) or name in coords:
            raise DocumentError("definition names must be identifiers distinct from coordinates",
                                f"definitions.{name}")
        # earlier definitions may be used by later ones
        defs[name] = _expr(text, f"definitions.{name}", coords, defs)
    return defs


def _seed(raw) -> int:
    env = os.environ.get("PFAFF_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise DocumentError(f"PFAFF_SEED={env!r} is not an integer", "PFAFF_SEED") from None
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise DocumentError("seed must be an integer", "seed")
    return seed


def load_document(source, require_hamiltonian: bool = True) -> SystemDocument:
    """Read a path, JSON text or already-decoded mapping into a system."""
    label = ""
    if isinstance(source, Mapping):
        raw = dict(source)
    else:
        path = Path(source)
        label = str(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise DocumentError(f"cannot read file: {exc.strerror}", label) from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DocumentError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                                label) from None
    if not isinstance(raw, dict):
        raise DocumentError("top level must be a JSON object")
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise DocumentError(f"unknown keys {sorted(unknown)}")
    coords = _require(raw, "coordinates", list)
    if not coords or not all(isinstance(c, str) and _NAME.match(c) for c in coords):
        raise DocumentError("coordinates must be a non-empty list of identifiers", "coordinates")
    if len(set(coords)) != len(coords):
        raise DocumentError("duplicate coordinate names", "coordinates")
    chart = _chart(raw, coords)
    defs = _definitions(raw, coords)
    S = build_structure(_require(raw, "structure", dict), chart, defs)
    if "hamiltonian" not in raw and not require_hamiltonian:
        H = parse("0")
    else:
        H = _expr(_require(raw, "hamiltonian", (str, int, float)), "hamiltonian", coords, defs)
    fam_raw = raw.get("family", [])
    if not isinstance(fam_raw, list):
        raise DocumentError("expected a list of expressions", "family")
    family = [_expr(f, f"family[{i}]", coords, defs) for i, f in enumerate(fam_raw)]
    aux = None
    if raw.get("auxiliary") is not None:
        aux = _expr(raw["auxiliary"], "auxiliary", coords, defs)
    aux_field = None
    if raw.get("auxiliary_field") is not None:
        af = raw["auxiliary_field"]
        if not isinstance(af, Mapping):
            raise DocumentError("expected a map coordinate -> expression", "auxiliary_field")
        comps = [parse("0")] * len(coords)
        for k, v in af.items():
            comps[_coord_key(k, coords, "auxiliary_field")] = _expr(
                v, f"auxiliary_field.{k}", coords, defs)
        aux_field = VectorField(tuple(coords), tuple(comps))
    closure = None
    if raw.get("closure") is not None:
        cl = raw["closure"]
        if not isinstance(cl, Mapping):
            raise DocumentError("expected a map 'j,i' -> expression", "closure")
        closure = {}
        for k, v in cl.items():
            parts = str(k).split(",")
            if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
                raise DocumentError(f"key {k!r} must be 'j,i' with integers", "closure")
            j, i = (int(p) for p in parts)
            try:
                closure[(j, i)] = parse(str(v))
            except (ParseError, ExprError) as exc:
                raise DocumentError(str(exc), f"closure[{k!r}]") from None
    try:
        sys = HamiltonianSystem(S, H, tuple(family), aux, aux_field, closure,
                                name=str(raw.get("name", "")))
    except ClosureSchemaError as exc:
        raise DocumentError(str(exc), "closure") from None
    except SystemDefinitionError as exc:
        raise DocumentError(str(exc), "family") from None
    doc = SystemDocument(raw, sys, _seed(raw), [], defs, label)
    doc.chain = _chain(raw, doc)
    doc.overrides = _overrides(raw, doc)
    return doc


def _overrides(raw, doc: SystemDocument) -> dict:
    """Replacement 1-forms keyed by their 1-based index (used for controls)."""
    payload = raw.get("form_overrides")
    if payload is None:
        return {}
    if not isinstance(payload, Mapping):
        raise DocumentError("expected a map index -> 1-form", "form_overrides")
    out = {}
    m = len(doc.coords)
    for k, form in payload.items():
        if not str(k).isdigit() or not 1 <= int(k) <= m - 1:
            raise DocumentError(f"index {k!r} outside 1..{m - 1}", "form_overrides")
        out[int(k)] = _one_form(form, list(doc.coords), doc.definitions, f"form_overrides.{k}")
    return out


def _chain(raw, doc: SystemDocument) -> list:
    items = raw.get("integral_chain")
    if items is None:
        return []
    if not isinstance(items, list):
        raise DocumentError("expected a list", "integral_chain")
    m = len(doc.coords)
    if len(items) > m - 1:
        raise DocumentError(f"at most {m - 1} stages", "integral_chain")
    out, names = [], []
    for s, item in enumerate(items):
        where = f"integral_chain[{s}]"
        if not isinstance(item, Mapping):
            raise DocumentError("expected an object with 'expr' and 'value'", where)
        k = m - 1 - s
        name = item.get("const", f"c{k}")
        if not isinstance(name, str) or not _NAME.match(name) or name in doc.coords \
                or name in doc.definitions:
            raise DocumentError(f"constant name {name!r} collides or is not an identifier",
                                f"{where}.const")
        expr = None
        if item.get("expr") is not None:
            expr = _expr(item["expr"], f"{where}.expr", doc.coords, doc.named(), extra=names)
        value = item.get("value")
        if value is not None and (not isinstance(value, (int, float)) or isinstance(value, bool)):
            raise DocumentError("value must be a number or null", f"{where}.value")
        out.append(ChainEntry(expr, None if value is None else float(value), name))
        names.append(name)
    return out


def extended_document(raw: Mapping, time_name: str = "t", energy_name: str = "Ecoord",
                      time_box=(0.0, 1.0), energy_box=(-1.0, 1.0)) -> dict:
    """Document for the autonomous extension of a time-dependent Hamiltonian."""
    if not isinstance(raw, Mapping):
        raise DocumentError("top level must be a JSON object")
    coords = _require(raw, "coordinates", list)
    for name in (time_name, energy_name):
        if name in coords:
            raise DocumentError(f"reserved name {name!r} collides with a coordinate", "coordinates")
    doc = load_document({k: v for k, v in raw.items() if k not in ("hamiltonian", "family",
                                                                  "auxiliary", "closure",
                                                                  "integral_chain")},
                        require_hamiltonian=False)
    H = _expr(_require(raw, "hamiltonian", (str, int, float)), "hamiltonian", doc.coords,
              doc.definitions, extra=(time_name, energy_name))
    try:
        ext = extend_time_dependent(H, doc.system.structure, time_name, energy_name,
                                    time_box, energy_box)
    except SystemDefinitionError as exc:
        raise DocumentError(str(exc), "hamiltonian") from None
    S = ext.structure
    out = {}
    if raw.get("name"):
        out["name"] = f"{raw['name']} (extended)"
    out["coordinates"] = list(S.coords)
    out["structure"] = {"kind": "poisson",
                        "lambda": {f"{S.coords[a]},{S.coords[b]}": render(v)
                                   for (a, b), v in S.lam.items()}}
    out["hamiltonian"] = render(ext.hamiltonian)
    out["family"] = [render(f) for f in ext.family]
    out["sample_box"] = {c: list(b) for c, b in zip(S.coords, S.chart.box)}
    out["seed"] = raw.get("seed", 0)
    return out


def dump_document(doc: Mapping) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
