"""TOML configuration: spaces, morphisms, candidates, collars and parameters."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .domain import Coord, Domain
from .errors import ConfigError, ConfigReferenceError, ExprError, ExprSyntaxError, SchemaError
from .exprlang import as_expr
from .lifting import ChartPiece, TMMorphism
from .strata import RADIUS, UNFOLDED, Cocycle, RegularChart, SmoothMapExpr, SpaceSpec, Transition, TubeChart
from .unfolder import CandidateUnfolding, Collar

SECTIONS = {"space", "chart", "cocycle", "regular", "morphism", "candidate", "collar", "params", "fixture"}


@dataclass(frozen=True)
class Params:
    samples: int = 1000
    tol: float = 1e-6
    smooth_tol: float = 1e-4
    fd_step: float = 1e-3
    seed: int = 42

    def __post_init__(self):
        if self.samples < 1:
            raise SchemaError(f"params.samples must be >= 1, got {self.samples}")
        for name in ("tol", "smooth_tol", "fd_step"):
            if not getattr(self, name) > 0:
                raise SchemaError(f"params.{name} must be positive, got {getattr(self, name)}")


@dataclass
class Config:
    path: Path | None
    spaces: dict = field(default_factory=dict)
    morphisms: dict = field(default_factory=dict)
    inverses: dict = field(default_factory=dict)  # morphism id -> inverse morphism id
    candidates: dict = field(default_factory=dict)
    collars: dict = field(default_factory=dict)  # id -> (space id, Collar)
    params: Params = field(default_factory=Params)
    fixture: dict = field(default_factory=dict)


def load_config(path) -> Config:
    """Read and cross-reference a configuration file."""
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SchemaError(f"{path}: not UTF-8 ({exc})") from exc
    return parse_config(text, path)


def parse_config(text: str, path=None) -> Config:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"{path or '<config>'}: {exc}") from exc
    unknown = set(doc) - SECTIONS
    if unknown:
        raise SchemaError(f"unknown section(s) {sorted(unknown)}")
    cfg = Config(Path(path) if path else None)
    cfg.params = _params(doc.get("params", {}))
    cfg.fixture = dict(doc.get("fixture", {}))
    chart_tables = _table(doc, "chart")
    cocycle_tables = _table(doc, "cocycle")
    regular_tables = _table(doc, "regular")
    for sid, t in _table(doc, "space").items():
        cfg.spaces[sid] = _space(sid, t, chart_tables, cocycle_tables, regular_tables)
    for cid, t in chart_tables.items():
        _need(t, "space", f"chart.{cid}")
        if t["space"] not in cfg.spaces:
            raise ConfigReferenceError(t["space"], f"chart.{cid}")
    for rid, t in regular_tables.items():
        _need(t, "space", f"regular.{rid}")
        if t["space"] not in cfg.spaces:
            raise ConfigReferenceError(t["space"], f"regular.{rid}")
    for a, inner in cocycle_tables.items():
        for b in inner:
            if a not in chart_tables:
                raise ConfigReferenceError(a, f"cocycle.{a}.{b}")
            if b not in chart_tables:
                raise ConfigReferenceError(b, f"cocycle.{a}.{b}")
    morphs = _table(doc, "morphism")
    for mid, t in morphs.items():
        cfg.morphisms[mid] = _morphism(mid, t, cfg.spaces)
        if "inverse" in t:
            if t["inverse"] not in morphs:
                raise ConfigReferenceError(t["inverse"], f"morphism.{mid}.inverse")
            cfg.inverses[mid] = t["inverse"]
    for cid, t in _table(doc, "candidate").items():
        cfg.candidates[cid] = _candidate(cid, t, cfg.spaces)
    for cid, t in _table(doc, "collar").items():
        cfg.collars[cid] = _collar(cid, t, cfg.spaces)
    return cfg


# --------------------------------------------------------------------------
# helpers

def _table(doc, key) -> dict:
    t = doc.get(key, {})
    if not isinstance(t, dict):
        raise SchemaError(f"[{key}] must be a table")
    return t


def _need(t, key, where):
    if key not in t:
        raise SchemaError(f"{where}: missing required field {key!r}")
    return t[key]


def _check_keys(t, allowed, where):
    extra = set(t) - set(allowed)
    if extra:
        raise SchemaError(f"{where}: unknown field(s) {sorted(extra)}")


def _params(t) -> Params:
    _check_keys(t, {"samples", "tol", "smooth_tol", "fd_step", "seed"}, "params")
    try:
        return Params(int(t.get("samples", 1000)), float(t.get("tol", 1e-6)),
                      float(t.get("smooth_tol", 1e-4)), float(t.get("fd_step", 1e-3)),
                      int(t.get("seed", 42)))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"params: {exc}") from exc


def _number(v, where) -> float:
    if isinstance(v, bool):
        raise SchemaError(f"{where}: expected a number, got {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        e = _expr(v, where)
        if e.free_vars():
            raise SchemaError(f"{where}: bound {v!r} must be a constant")
        try:
            return float(e.evaluate({}))
        except ExprError as exc:
            raise SchemaError(f"{where}: {exc}") from exc
    raise SchemaError(f"{where}: expected a number, got {v!r}")


def _expr(v, where):
    try:
        return as_expr(v)
    except ExprSyntaxError as exc:
        exc.args = (f"{where}: {exc.args[0]}",)
        raise
    except TypeError as exc:
        raise SchemaError(f"{where}: expected an expression string, got {v!r}") from exc


def _coord(name, v, where) -> Coord:
    periodic, period = False, None
    if isinstance(v, list):
        if len(v) not in (2, 3) or (len(v) == 3 and v[2] != "periodic"):
            raise SchemaError(f"{where}.{name}: expected [lo, hi] or [lo, hi, \"periodic\"]")
        lo, hi = _number(v[0], f"{where}.{name}"), _number(v[1], f"{where}.{name}")
        periodic = len(v) == 3
    elif isinstance(v, dict):
        _check_keys(v, {"lo", "hi", "periodic", "period"}, f"{where}.{name}")
        lo = _number(_need(v, "lo", f"{where}.{name}"), f"{where}.{name}.lo")
        hi = _number(_need(v, "hi", f"{where}.{name}"), f"{where}.{name}.hi")
        periodic = bool(v.get("periodic", False))
        if "period" in v:
            period = _number(v["period"], f"{where}.{name}.period")
            periodic = True
    else:
        raise SchemaError(f"{where}.{name}: expected a range")
    if periodic and period is None:
        period = hi - lo
    try:
        return Coord(name, lo, hi, period)
    except ConfigError as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def _domain(t, where) -> Domain:
    if not isinstance(t, dict):
        raise SchemaError(f"{where}: expected a table of coordinate ranges")
    return Domain(tuple(_coord(n, v, where) for n, v in t.items()))


def _box(t, parent: Domain, where) -> Domain:
    """Sub-box of ``parent``: named coordinates are narrowed, the rest kept; periods inherited."""
    if not isinstance(t, dict):
        raise SchemaError(f"{where}: expected a table of coordinate ranges")
    extra = set(t) - set(parent.names)
    if extra:
        raise SchemaError(f"{where}: unknown coordinate(s) {sorted(extra)}")
    out = []
    for c in parent.coords:
        if c.name not in t:
            out.append(c)
            continue
        v = t[c.name]
        if not (isinstance(v, list) and len(v) == 2):
            raise SchemaError(f"{where}.{c.name}: expected [lo, hi]")
        lo, hi = _number(v[0], f"{where}.{c.name}"), _number(v[1], f"{where}.{c.name}")
        try:
            out.append(c.sub(lo, hi))
        except ConfigError as exc:
            raise SchemaError(f"{where}: {exc}") from exc
    return Domain(tuple(out))


def _boxes(v, parent, where) -> tuple[Domain, ...]:
    if isinstance(v, dict):
        v = [v]
    if not isinstance(v, list):
        raise SchemaError(f"{where}: expected a table or a list of tables")
    return tuple(_box(b, parent, f"{where}[{i}]") for i, b in enumerate(v))


def _exprs(v, outputs, where) -> list:
    """Expression list for ``outputs``: a string, a list, or a table keyed by output name."""
    if isinstance(v, str):
        v = [v]
    if isinstance(v, dict):
        missing = [o for o in outputs if o not in v]
        if missing or set(v) - set(outputs):
            raise SchemaError(f"{where}: expected keys {list(outputs)}, got {sorted(v)}")
        v = [v[o] for o in outputs]
    if not isinstance(v, list):
        raise SchemaError(f"{where}: expected expression string(s)")
    if len(v) != len(outputs):
        raise SchemaError(f"{where}: expected {len(outputs)} expression(s) for {list(outputs)}, got {len(v)}")
    return [_expr(e, f"{where}[{i}]") for i, e in enumerate(v)]


def _smooth(inputs, outputs, v, where) -> SmoothMapExpr:
    try:
        return SmoothMapExpr(tuple(inputs), tuple(outputs), tuple(_exprs(v, outputs, where)))
    except ConfigError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{where}: {exc}") from exc


# --------------------------------------------------------------------------
# sections

def _space(sid, t, chart_tables, cocycle_tables, regular_tables) -> SpaceSpec:
    where = f"space.{sid}"
    _check_keys(t, {"name", "radius", "stratum", "link"}, where)
    radius = _number(t.get("radius", 1.0), f"{where}.radius")
    if not radius > 0:
        raise SchemaError(f"{where}.radius must be positive")
    stratum = _domain(t["stratum"], f"{where}.stratum") if "stratum" in t else None
    link = _domain(t.get("link", {}), f"{where}.link")
    for c in link.coords:
        if c.name in (RADIUS, UNFOLDED) or (stratum and c.name in stratum.names):
            raise SchemaError(f"{where}: coordinate name {c.name!r} is reserved or repeated")
    if stratum:
        for c in stratum.coords:
            if c.name in (RADIUS, UNFOLDED):
                raise SchemaError(f"{where}: coordinate name {c.name!r} is reserved")
    charts = {}
    mine = {cid: ct for cid, ct in chart_tables.items() if ct.get("space") == sid}
    for cid, ct in mine.items():
        cw = f"chart.{cid}"
        _check_keys(ct, {"space", "base", "overlaps", "r"}, cw)
        if stratum is None:
            raise SchemaError(f"{cw}: space {sid!r} declares no stratum")
        base = _box(ct.get("base", {}), stratum, f"{cw}.base")
        r_lo, r_hi = 0.0, radius
        if "r" in ct:
            rr = ct["r"]
            if not (isinstance(rr, list) and len(rr) == 2):
                raise SchemaError(f"{cw}.r: expected [lo, hi]")
            r_lo, r_hi = _number(rr[0], f"{cw}.r"), _number(rr[1], f"{cw}.r")
        overlaps = {}
        for other, v in ct.get("overlaps", {}).items():
            if other not in mine:
                raise ConfigReferenceError(other, f"{cw}.overlaps")
            overlaps[other] = _boxes(v, stratum, f"{cw}.overlaps.{other}")
        charts[cid] = TubeChart(cid, base, overlaps, r_lo, r_hi)
    u_names = stratum.names if stratum else ()
    cocycles = {}
    for a, inner in cocycle_tables.items():
        if not isinstance(inner, dict):
            raise SchemaError(f"cocycle.{a}: expected tables [cocycle.{a}.<chart>]")
        for b, ct in inner.items():
            cw = f"cocycle.{a}.{b}"
            if chart_tables.get(a, {}).get("space") != sid and chart_tables.get(b, {}).get("space") != sid:
                continue
            if a not in charts:
                raise ConfigReferenceError(a, cw)
            if b not in charts:
                raise ConfigReferenceError(b, cw)
            _check_keys(ct, {"g", "g_inv"}, cw)
            ins = u_names + link.names
            g = _smooth(ins, link.names, _need(ct, "g", cw), f"{cw}.g")
            g_inv = _smooth(ins, link.names, _need(ct, "g_inv", cw), f"{cw}.g_inv")
            try:
                cocycles[(a, b)] = Cocycle(a, b, g, g_inv)
            except ConfigError as exc:
                raise SchemaError(str(exc)) from exc
    regular = {}
    for rid, rt in regular_tables.items():
        if rt.get("space") != sid:
            continue
        rw = f"regular.{rid}"
        _check_keys(rt, {"space", "domain", "transitions"}, rw)
        dom = _domain(_need(rt, "domain", rw), f"{rw}.domain")
        trans = {}
        for tid, tt in rt.get("transitions", {}).items():
            tw = f"{rw}.transitions.{tid}"
            if tid not in charts:
                raise ConfigReferenceError(tid, tw)
            _check_keys(tt, {"overlap", "to_tube", "from_tube"}, tw)
            ov = _box(_need(tt, "overlap", tw), dom, f"{tw}.overlap")
            tube_names = u_names + link.names + (RADIUS,)
            to_tube = _smooth(dom.names, tube_names, _need(tt, "to_tube", tw), f"{tw}.to_tube")
            from_tube = _smooth(tube_names, dom.names, _need(tt, "from_tube", tw), f"{tw}.from_tube")
            trans[tid] = Transition(tid, ov, to_tube, from_tube)
        regular[rid] = RegularChart(rid, dom, trans)
    try:
        return SpaceSpec(t.get("name", sid), stratum, link, charts, cocycles, regular, radius)
    except ConfigError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{where}: {exc}") from exc


def _space_ref(t, key, spaces, where) -> SpaceSpec:
    sid = _need(t, key, where)
    if sid not in spaces:
        raise ConfigReferenceError(sid, f"{where}.{key}")
    return spaces[sid]


def _chart_ref(spec: SpaceSpec, cid, where):
    if cid not in spec.charts:
        raise ConfigReferenceError(cid, where)
    return cid


def _piece(name, t, src, tgt, where, defaults=None) -> ChartPiece:
    defaults = defaults or {}
    for key in ("a1", "a2", "a3"):
        if key not in t:
            raise SchemaError(f"{where}: missing required field {key!r}")
    sc = _chart_ref(src, t.get("source_chart", defaults.get("source_chart")), f"{where}.source_chart")
    tc = _chart_ref(tgt, t.get("target_chart", defaults.get("target_chart", sc)), f"{where}.target_chart")
    ins = src.u_names + src.l_names + (RADIUS,)
    a1 = _smooth(ins, tgt.u_names, t["a1"], f"{where}.a1").exprs
    a2 = _smooth(ins, tgt.l_names, t["a2"], f"{where}.a2").exprs
    a3 = _smooth(ins, (RADIUS,), t["a3"], f"{where}.a3").exprs
    where_box = _box(t["where"], src.charts[sc].base, f"{where}.where") if "where" in t else None
    return ChartPiece(name, sc, tc, a1, a2, a3, where_box)


def _morphism(mid, t, spaces) -> TMMorphism:
    where = f"morphism.{mid}"
    _check_keys(t, {"source", "target", "a1", "a2", "a3", "pieces", "regular", "inverse",
                    "target_chart", "preserves_tubes"}, where)
    src = _space_ref(t, "source", spaces, where)
    tgt = _space_ref(t, "target", spaces, where)
    pieces = []
    if "pieces" in t:
        for name, pt in t["pieces"].items():
            _check_keys(pt, {"source_chart", "target_chart", "where", "a1", "a2", "a3"}, f"{where}.pieces.{name}")
            _need(pt, "source_chart", f"{where}.pieces.{name}")
            pieces.append(_piece(f"{mid}.{name}", pt, src, tgt, f"{where}.pieces.{name}"))
    else:
        for cid in sorted(src.charts):
            defaults = {"source_chart": cid, "target_chart": t.get("target_chart", cid)}
            pieces.append(_piece(f"{mid}@{cid}", t, src, tgt, where, defaults))
        if not src.charts:
            for key in ("a1", "a2", "a3"):
                _need(t, key, where)
    regular = {}
    for rid, rt in t.get("regular", {}).items():
        rw = f"{where}.regular.{rid}"
        if rid not in src.regular:
            raise ConfigReferenceError(rid, rw)
        trid = _need(rt, "target", rw)
        if trid not in tgt.regular:
            raise ConfigReferenceError(trid, f"{rw}.target")
        m = _smooth(src.regular[rid].domain.names, tgt.regular[trid].domain.names, _need(rt, "map", rw), f"{rw}.map")
        regular[rid] = (trid, m)
    return TMMorphism(mid, src, tgt, tuple(pieces), regular, bool(t.get("preserves_tubes", True)))


def _candidate(cid, t, spaces) -> CandidateUnfolding:
    where = f"candidate.{cid}"
    _check_keys(t, {"target", "chart", "source", "map", "bubble", "sheets"}, where)
    tgt = _space_ref(t, "target", spaces, where)
    chart = _need(t, "chart", where)
    _chart_ref(tgt, chart, f"{where}.chart")
    src = _domain(_need(t, "source", where), f"{where}.source")
    lmap = _smooth(src.names, tgt.tube_names(RADIUS), _need(t, "map", where), f"{where}.map")
    bubble = _expr(_need(t, "bubble", where), f"{where}.bubble")
    extra = bubble.free_vars() - set(src.names)
    if extra:
        raise SchemaError(f"{where}.bubble uses undeclared variables {sorted(extra)}")
    sheets = int(t.get("sheets", 2))
    return CandidateUnfolding(cid, src, tgt, chart, lmap, bubble, sheets)


def _collar(cid, t, spaces):
    where = f"collar.{cid}"
    _check_keys(t, {"space", "map"}, where)
    spec = _space_ref(t, "space", spaces, where)
    gamma = _smooth(spec.tube_names(RADIUS), spec.tube_names(UNFOLDED), _need(t, "map", where), f"{where}.map")
    return t["space"], Collar(cid, gamma)
