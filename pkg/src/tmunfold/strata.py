"""Simple spaces with one singular stratum, given by tube charts and cocycles.

A tube chart ``alpha`` has coordinates ``(u, l, r)``: ``u`` on the singular
stratum (the base coordinates of every tube chart are stratum coordinates),
``l`` on the link and ``r >= 0`` the cone radius. Two charts ``alpha`` and
``beta`` are related on their overlap by

    (u, [l, r]) -> (u, [g_ab(u)(l), r])

with ``g_ab(u)`` a diffeomorphism of the link. Regular charts cover the
rest of the regular part and carry explicit transitions into tube charts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import permutations

import numpy as np

from .domain import Domain, stack_env
from .errors import ConfigError, NotInTube
from .exprlang import Expr, as_expr
from .numerics import fd_jacobian
from .report import Report

RADIUS = "r"
UNFOLDED = "t"
VERTEX_EPS = 1e-12


@dataclass(frozen=True)
class SmoothMapExpr:
    """A map given by one expression per output coordinate."""

    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    exprs: tuple[Expr, ...]

    def __post_init__(self):
        if len(self.outputs) != len(self.exprs):
            raise ConfigError(f"{len(self.exprs)} expressions for outputs {self.outputs}")
        allowed = set(self.inputs)
        for name, e in zip(self.outputs, self.exprs):
            extra = e.free_vars() - allowed
            if extra:
                raise ConfigError(f"expression for {name!r} uses undeclared variables {sorted(extra)}")

    @classmethod
    def build(cls, inputs, outputs, exprs):
        return cls(tuple(inputs), tuple(outputs), tuple(as_expr(e) for e in exprs))

    def __call__(self, pts) -> np.ndarray:
        pts = np.array(pts, dtype=float, ndmin=2)
        env = stack_env(self.inputs, pts)
        out = np.empty((len(pts), len(self.exprs)))
        for j, e in enumerate(self.exprs):
            out[:, j] = e.evaluate(env)
        return out

    def free_vars(self) -> frozenset:
        out = frozenset()
        for e in self.exprs:
            out |= e.free_vars()
        return out

    def substitute(self, mapping, inputs=None) -> "SmoothMapExpr":
        return SmoothMapExpr(tuple(inputs or self.inputs), self.outputs,
                             tuple(e.substitute(mapping) for e in self.exprs))


@dataclass(frozen=True, eq=False)
class ConePoint:
    """The class ``[l, r]`` in the open cone; every ``r == 0`` is the vertex."""

    link: tuple[float, ...]
    r: float

    def __post_init__(self):
        if self.r < 0:
            raise ValueError("cone radius must be nonnegative")

    @property
    def is_vertex(self) -> bool:
        return self.r == 0

    def __eq__(self, other):
        if not isinstance(other, ConePoint):
            return NotImplemented
        if self.is_vertex or other.is_vertex:
            return self.is_vertex and other.is_vertex
        return self.r == other.r and tuple(self.link) == tuple(other.link)

    def __hash__(self):
        return hash(0.0) if self.is_vertex else hash((tuple(self.link), self.r))


@dataclass(frozen=True)
class TubeSpacePoint:
    chart: str
    u: tuple[float, ...]
    cone: ConePoint


@dataclass(frozen=True)
class RegularSpacePoint:
    chart: str
    x: tuple[float, ...]


SpacePoint = TubeSpacePoint | RegularSpacePoint


@dataclass(frozen=True)
class Cocycle:
    """Link transition ``g`` from chart ``alpha`` to ``beta`` and its inverse."""

    alpha: str
    beta: str
    g: SmoothMapExpr
    g_inv: SmoothMapExpr

    def __post_init__(self):
        for m in (self.g, self.g_inv):
            if {RADIUS, UNFOLDED} & m.free_vars():
                raise ConfigError(f"cocycle {self.alpha}->{self.beta} depends on the radius")


@dataclass(frozen=True)
class TubeChart:
    id: str
    base: Domain
    overlaps: dict = field(default_factory=dict)  # other id -> tuple[Domain, ...]
    r_lo: float = 0.0
    r_hi: float = 1.0

    @property
    def meets_stratum(self) -> bool:
        return self.r_lo == 0.0


@dataclass(frozen=True)
class Transition:
    """Regular chart coordinates <-> tube chart coordinates on ``overlap``."""

    tube: str
    overlap: Domain
    to_tube: SmoothMapExpr
    from_tube: SmoothMapExpr


@dataclass(frozen=True)
class RegularChart:
    id: str
    domain: Domain
    transitions: dict = field(default_factory=dict)  # tube chart id -> Transition


@dataclass(frozen=True)
class SpaceSpec:
    name: str
    stratum: Domain | None
    link: Domain
    charts: dict
    cocycles: dict  # (alpha, beta) -> Cocycle
    regular: dict = field(default_factory=dict)
    radius: float = 1.0

    def __post_init__(self):
        for (a, b) in self.cocycles:
            for cid in (a, b):
                if cid not in self.charts:
                    raise ConfigError(f"cocycle {a}->{b} references missing chart {cid!r}")
        for ch in self.charts.values():
            for other in ch.overlaps:
                if other not in self.charts:
                    raise ConfigError(f"chart {ch.id!r} overlaps missing chart {other!r}")
        for rc in self.regular.values():
            for tid in rc.transitions:
                if tid not in self.charts:
                    raise ConfigError(f"regular chart {rc.id!r} has a transition to missing chart {tid!r}")
        if self.charts and self.stratum is None:
            raise ConfigError(f"space {self.name!r} has tube charts but no stratum")

    # -- coordinates ------------------------------------------------------
    @property
    def u_names(self) -> tuple[str, ...]:
        return () if self.stratum is None else self.stratum.names

    @property
    def l_names(self) -> tuple[str, ...]:
        return self.link.names

    @property
    def du(self) -> int:
        return len(self.u_names)

    @property
    def dl(self) -> int:
        return len(self.l_names)

    def tube_names(self, radial=RADIUS) -> tuple[str, ...]:
        return self.u_names + self.l_names + (radial,)

    def chart_box(self, chart_id, radial=RADIUS, r_hi=None) -> Domain:
        """Sampling box of a tube chart in ``(u, l, r)`` or ``(u, l, t)`` coordinates."""
        from .domain import Coord

        ch = self.charts[chart_id]
        hi = ch.r_hi if r_hi is None else r_hi
        if radial == RADIUS:
            rc = Coord(RADIUS, ch.r_lo, hi)
        else:
            rc = Coord(UNFOLDED, -hi, hi)
        return Domain(ch.base.coords + self.link.coords + (rc,))

    # -- overlaps and cocycles -------------------------------------------
    def overlap_boxes(self, a, b) -> tuple[Domain, ...]:
        if a == b:
            return (self.charts[a].base,)
        boxes = self.charts[a].overlaps.get(b)
        if boxes is None:
            boxes = self.charts[b].overlaps.get(a, ())
        return tuple(boxes)

    def in_overlap(self, a, b, U) -> np.ndarray:
        U = np.array(U, dtype=float, ndmin=2)
        ok = np.zeros(len(U), dtype=bool)
        for box in self.overlap_boxes(a, b):
            ok |= box.contains(U)
        ok &= self.charts[a].base.contains(U) & self.charts[b].base.contains(U)
        return ok

    def link_map(self, a, b, U, L) -> np.ndarray:
        """Apply ``g_ab`` to link coordinates (no overlap test)."""
        U = np.array(U, dtype=float, ndmin=2)
        L = np.array(L, dtype=float, ndmin=2)
        if a == b and (a, a) not in self.cocycles:
            return L.copy()
        pts = np.hstack([U, L])
        if (a, b) in self.cocycles:
            out = self.cocycles[(a, b)].g(pts)
        elif (b, a) in self.cocycles:
            out = self.cocycles[(b, a)].g_inv(pts)
        else:
            raise ConfigError(f"no cocycle between charts {a!r} and {b!r}")
        return self.link.reduce(out)

    def has_cocycle(self, a, b) -> bool:
        return a == b or (a, b) in self.cocycles or (b, a) in self.cocycles

    @cached_property
    def _path_table(self) -> dict:
        table = {}
        for a in self.charts:
            for b in self.charts:
                if a == b:
                    table[a, b] = [(a,)]
                    continue
                ids = [c for c in self.charts if c not in (a, b)]
                paths = []
                for k in range(len(ids) + 1):
                    for mid in permutations(ids, k):
                        path = (a,) + mid + (b,)
                        if all(self.has_cocycle(x, y) and self.overlap_boxes(x, y)
                               for x, y in zip(path, path[1:])):
                            paths.append(path)
                table[a, b] = paths
        return table

    def chart_paths(self, a, b) -> list[tuple[str, ...]]:
        """Simple chart paths from ``a`` to ``b`` along declared cocycles, shortest first."""
        return self._path_table[a, b]

    def transport(self, a, b, U, L):
        """Link coordinates of chart ``a`` expressed in chart ``b``.

        Each point uses the shortest cocycle path whose overlaps all contain
        its ``u``. Returns ``(L_b, ok)``.
        """
        U = np.array(U, dtype=float, ndmin=2)
        L = np.array(L, dtype=float, ndmin=2)
        out = np.array(L, dtype=float)
        done = np.zeros(len(U), dtype=bool)
        for path in self.chart_paths(a, b):
            todo = ~done
            for x, y in zip(path, path[1:]):
                todo &= self.in_overlap(x, y, U)
            if len(path) == 1:
                todo &= self.charts[a].base.contains(U)
            if not np.any(todo):
                continue
            cur = L[todo]
            for x, y in zip(path, path[1:]):
                cur = self.link_map(x, y, U[todo], cur)
            out[todo] = cur
            done |= todo
        return out, done

    def charts_containing(self, u) -> list[str]:
        u = np.array(u, dtype=float, ndmin=2)
        return [cid for cid, ch in self.charts.items() if ch.base.contains(u)[0]]

    # -- distances ---------------------------------------------------------
    def cone_distance(self, U1, L1, R1, U2, L2, R2) -> np.ndarray:
        """Coordinate distance of same-chart tube points; link ignored at the vertex."""
        du = self.stratum.distance(U1, U2) if self.du else np.zeros(len(np.atleast_1d(R1)))
        dr = np.abs(np.asarray(R1, dtype=float) - np.asarray(R2, dtype=float))
        dl = self.link.distance(L1, L2) if self.dl else np.zeros_like(dr)
        vertex = (np.asarray(R1) <= VERTEX_EPS) & (np.asarray(R2) <= VERTEX_EPS)
        dl = np.where(vertex, 0.0, dl)
        return np.maximum(np.maximum(du, dr), dl)

    def to_tube_point(self, p: SpacePoint, chart: str | None = None) -> TubeSpacePoint:
        """Express ``p`` in a tube chart (``chart`` if given)."""
        if isinstance(p, TubeSpacePoint):
            if chart is None or chart == p.chart:
                return p
            L, ok = self.transport(p.chart, chart, [p.u], [p.cone.link])
            if not ok[0]:
                raise NotInTube(f"point of chart {p.chart!r} is not in chart {chart!r}")
            return TubeSpacePoint(chart, p.u, ConePoint(tuple(L[0]), p.cone.r))
        rc = self.regular[p.chart]
        for tid, tr in rc.transitions.items():
            if chart is not None and tid != chart:
                continue
            if tr.overlap.contains([p.x])[0]:
                y = tr.to_tube([p.x])[0]
                u = tuple(self.stratum.reduce([y[: self.du]])[0]) if self.du else ()
                link = tuple(self.link.reduce([y[self.du: self.du + self.dl]])[0]) if self.dl else ()
                return TubeSpacePoint(tid, u, ConePoint(link, float(y[-1])))
        if chart is not None:
            # route through another tube chart
            for tid, tr in rc.transitions.items():
                if tr.overlap.contains([p.x])[0]:
                    return self.to_tube_point(self.to_tube_point(p, tid), chart)
        raise NotInTube(f"regular point {p.x} of chart {p.chart!r} has no tube transition")

    def distance(self, p: SpacePoint, q: SpacePoint) -> float:
        """Distance between two space points after expressing them in a common chart."""
        if isinstance(p, RegularSpacePoint) and isinstance(q, RegularSpacePoint) and p.chart == q.chart:
            return float(self.regular[p.chart].domain.distance([p.x], [q.x])[0])
        tp = self.to_tube_point(p)
        tq = self.to_tube_point(q, tp.chart)
        return float(self.cone_distance([tp.u], [tp.cone.link], [tp.cone.r],
                                        [tq.u], [tq.cone.link], [tq.cone.r])[0])


# --------------------------------------------------------------------------
# operations

ANCHOR_COCYCLE = "tube.structure-group"


def _sample_sets(domain: Domain, samples: int, seed: int):
    return {"grid": domain.grid(samples), "random": domain.random(samples, seed)}


def _witness(names, pt, **extra):
    w = {n: float(v) for n, v in zip(names, pt)}
    w.update(extra)
    return w


def _record(report, name, residuals, pts, names, tol, extra=None, lower_bound=False):
    """Add a max-residual (or min-value when ``lower_bound``) check."""
    if len(residuals) == 0:
        report.add(name, ANCHOR_COCYCLE, True, 0.0, detail="vacuous: no sample points")
        return
    if lower_bound:
        k = int(np.argmin(residuals))
        ok = bool(residuals[k] > tol)
    else:
        k = int(np.argmax(residuals))
        ok = bool(residuals[k] < tol)
    report.add(name, ANCHOR_COCYCLE, ok, float(residuals[k]),
               None if ok else _witness(names, pts[k], **(extra or {})))


def validate_cocycles(spec: SpaceSpec, samples: int = 1000, tol: float = 1e-6,
                      seed: int = 42, fd_step: float = 1e-3) -> Report:
    """Check the structure-group identities of every declared cocycle."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rep = Report()
    names = spec.u_names + spec.l_names
    link = spec.link

    def boxes_with_link(a, b):
        for box in spec.overlap_boxes(a, b):
            yield Domain(box.coords + link.coords)

    per_check = {k: {s: ([], []) for s in ("grid", "random")}
                 for k in ("identity", "inverse_pair", "g_inv", "triple", "jacobian")}

    def push(check, which, res, pts):
        per_check[check][which][0].append(np.asarray(res, dtype=float))
        per_check[check][which][1].append(np.asarray(pts, dtype=float).reshape(len(res), -1))

    for (a, b), coc in sorted(spec.cocycles.items()):
        for dom in boxes_with_link(a, b):
            for which, pts in _sample_sets(dom, samples, seed).items():
                pts = pts[spec.in_overlap(a, b, pts[:, : spec.du])] if spec.du else pts
                if len(pts) == 0:
                    continue
                U, L = pts[:, : spec.du], pts[:, spec.du:]
                gl = link.reduce(coc.g(pts))
                if a == b:
                    push("identity", which, link.distance(gl, L), pts)
                back = coc.g_inv(np.hstack([U, gl]))
                fwd = coc.g(np.hstack([U, coc.g_inv(pts)]))
                push("g_inv", which, np.maximum(link.distance(back, L), link.distance(fwd, L)), pts)
                if (b, a) in spec.cocycles and a != b:
                    other = spec.cocycles[(b, a)].g(np.hstack([U, gl]))
                    push("inverse_pair", which, link.distance(other, L), pts)
                if spec.dl:
                    jac = fd_jacobian(lambda q: coc.g(np.hstack([U, q])), L, fd_step)
                    push("jacobian", which, np.abs(np.linalg.det(jac)), pts)

    ids = sorted(spec.charts)
    for a in ids:
        for b in ids:
            for c in ids:
                if len({a, b, c}) < 3:
                    continue
                if not (spec.has_cocycle(a, b) and spec.has_cocycle(b, c) and spec.has_cocycle(a, c)):
                    continue
                for dom in boxes_with_link(a, b):
                    for which, pts in _sample_sets(dom, samples, seed).items():
                        U = pts[:, : spec.du]
                        keep = spec.in_overlap(a, b, U) & spec.in_overlap(b, c, U) & spec.in_overlap(a, c, U)
                        pts = pts[keep]
                        if len(pts) == 0:
                            continue
                        U, L = pts[:, : spec.du], pts[:, spec.du:]
                        two = spec.link_map(b, c, U, spec.link_map(a, b, U, L))
                        one = spec.link_map(a, c, U, L)
                        push("triple", which, link.distance(two, one), pts)

    labels = {
        "identity": "cocycle.identity",
        "inverse_pair": "cocycle.inverse-pair",
        "g_inv": "cocycle.two-sided-inverse",
        "triple": "cocycle.triple-overlap",
        "jacobian": "cocycle.local-diffeo",
    }
    for key, label in labels.items():
        for which in ("grid", "random"):
            res_list, pts_list = per_check[key][which]
            res = np.concatenate(res_list) if res_list else np.zeros(0)
            pts = np.vstack(pts_list) if pts_list else np.zeros((0, len(names)))
            _record(rep, f"{label}[{which}]", res, pts, names, tol, lower_bound=(key == "jacobian"))
    rep.add("cocycle.radium-independent", ANCHOR_COCYCLE, True, 0.0,
            detail="no cocycle expression mentions r or t")

    # regular charts: from_tube undoes to_tube and lands at positive radius
    for which in ("grid", "random"):
        res_list, pts_list, names_r = [], [], ()
        for rid in sorted(spec.regular):
            rc = spec.regular[rid]
            names_r = rc.domain.names
            for tid, tr in sorted(rc.transitions.items()):
                pts = _sample_sets(tr.overlap, samples, seed)[which]
                if len(pts) == 0:
                    continue
                y = tr.to_tube(pts)
                d = rc.domain.distance(pts, tr.from_tube(y))
                res_list.append(np.where(y[:, -1] > 0, d, np.inf))
                pts_list.append(pts)
        res = np.concatenate(res_list) if res_list else np.zeros(0)
        pts = np.vstack(pts_list) if pts_list else np.zeros((0, 0))
        _record(rep, f"regular.transition-inverse[{which}]", res, pts, names_r, tol)
    return rep


def radium(spec: SpaceSpec, p: SpacePoint) -> float:
    """Cone radius of ``p`` (zero exactly on the singular stratum)."""
    return spec.to_tube_point(p).cone.r


def stretch(spec: SpaceSpec, lam: float, p: SpacePoint) -> TubeSpacePoint:
    """Radium stretching ``(u, [l, r]) -> (u, [l, lam * r])``."""
    if not lam > 0:
        raise ValueError("stretch factor must be positive")
    if isinstance(p, RegularSpacePoint):
        p = spec.to_tube_point(p)
    return TubeSpacePoint(p.chart, p.u, ConePoint(p.cone.link, lam * p.cone.r))
