"""Primary unfoldings: construction, projection, fibres and axiom checks.

The unfolded tube is the quotient of the disjoint union of ``U_a x L x R``
by ``(a, u, l, t) ~ (b, u, g_ab(u)(l), t)``; two copies of the regular part
(bubbles ``+1`` and ``-1``) are glued to its ``t > 0`` and ``t < 0`` halves
through the regular chart transitions. Nothing is meshed: points carry
their chart and coordinates, and the gluing is resolved on demand.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .domain import Coord, Domain
from .errors import CollarError, EmptyRestriction, NotInTube, OutOfDomain, ValidationError
from .exprlang import Binary, Expr, Unary, as_expr
from .numerics import count_distinct, fd_jacobian, level_project, newton_paired, newton_solve
from .report import Report
from .strata import (
    RADIUS,
    UNFOLDED,
    VERTEX_EPS,
    ConePoint,
    RegularSpacePoint,
    SmoothMapExpr,
    SpacePoint,
    SpaceSpec,
    TubeChart,
    TubeSpacePoint,
    validate_cocycles,
)

ANCHOR_COVERING = "unfolding.trivial-covering"
ANCHOR_SQUARE = "unfolding.unfolded-chart"
ANCHOR_HYPER = "unfolding.singular-preimage"
ANCHOR_PROPER = "unfolding.proper"
ANCHOR_GLUE = "unfolding.bubble-gluing"
ANCHOR_TUBE = "tube.from-collar"


@dataclass(frozen=True)
class TubeLift:
    chart: str
    u: tuple[float, ...]
    l: tuple[float, ...]
    t: float

    @property
    def bubble(self) -> int:
        return int(np.sign(self.t))


@dataclass(frozen=True)
class RegularLift:
    bubble: int
    chart: str
    x: tuple[float, ...]

    def __post_init__(self):
        if self.bubble not in (1, -1):
            raise ValueError("bubble label must be +1 or -1")


UnfoldedPoint = TubeLift | RegularLift


@dataclass(frozen=True)
class UnfoldingModel:
    spec: SpaceSpec
    validation: Report = field(default_factory=Report, compare=False)
    bubbles: tuple[int, int] = (1, -1)

    @property
    def sheets(self) -> int:
        return len(self.bubbles)


@dataclass(frozen=True)
class CandidateUnfolding:
    """A user-supplied map from a manifold onto one tube chart of ``target``.

    ``lmap`` sends source coordinates to the chart's ``(u, l, r)``;
    the sign of ``bubble`` names the sheet a source point lies on.
    """

    name: str
    source: Domain
    target: SpaceSpec
    chart: str
    lmap: SmoothMapExpr
    bubble: Expr
    sheets: int = 2

    @property
    def signed_chart(self) -> SmoothMapExpr:
        """``(u, l, sign(bubble) * r)``: the would-be inverse of an unfolded chart."""
        *head, r_expr = self.lmap.exprs
        t_expr = Binary("*", Unary("sign", self.bubble), r_expr)
        return SmoothMapExpr(self.lmap.inputs, self.target.tube_names(UNFOLDED), tuple(head) + (t_expr,))


@dataclass(frozen=True)
class Collar:
    """``Gamma((u, l), r)`` in tube chart coordinates ``(u, l, t)`` of bubble +1."""

    name: str
    gamma: SmoothMapExpr


# --------------------------------------------------------------------------
# construction and pointwise operations

def canonical_chart_unfold(u, l, t) -> tuple[tuple, ConePoint]:
    """``c(u, l, t) = (u, [l, |t|])``."""
    return tuple(u), ConePoint(tuple(l), abs(float(t)))


def build_primary_unfolding(spec: SpaceSpec, report: Report | None = None, *,
                            samples: int = 1000, tol: float = 1e-6, seed: int = 42) -> UnfoldingModel:
    """Primary unfolding of ``spec``; cocycles are validated first unless a passing report is given."""
    if report is None:
        report = validate_cocycles(spec, samples=samples, tol=tol, seed=seed)
    if not report.passed:
        bad = ", ".join(c.name for c in report.failures())
        raise ValidationError(f"space {spec.name!r} failed cocycle validation: {bad}")
    return UnfoldingModel(spec, report)


def _tube_in_domain(spec: SpaceSpec, chart: str, u, l, radius) -> bool:
    if chart not in spec.charts:
        return False
    ch = spec.charts[chart]
    eps = 1e-9
    ok = bool(ch.base.contains([u])[0]) if spec.du else True
    ok &= bool(spec.link.contains([l])[0]) if spec.dl else True
    return ok and ch.r_lo - eps <= radius <= ch.r_hi + eps


def _check(model: UnfoldingModel, p):
    spec = model.spec
    if isinstance(p, TubeLift):
        if not _tube_in_domain(spec, p.chart, p.u, p.l, abs(p.t)):
            raise OutOfDomain(f"{p} is outside the unfolded chart {p.chart!r}")
    elif isinstance(p, RegularLift):
        rc = spec.regular.get(p.chart)
        if rc is None or not rc.domain.contains([p.x])[0]:
            raise OutOfDomain(f"{p} is outside regular chart {p.chart!r}")
    elif isinstance(p, TubeSpacePoint):
        if not _tube_in_domain(spec, p.chart, p.u, p.cone.link, p.cone.r):
            raise OutOfDomain(f"{p} is outside tube chart {p.chart!r}")
    elif isinstance(p, RegularSpacePoint):
        rc = spec.regular.get(p.chart)
        if rc is None or not rc.domain.contains([p.x])[0]:
            raise OutOfDomain(f"{p} is outside regular chart {p.chart!r}")
    else:
        raise TypeError(f"not a point: {p!r}")


def project(model: UnfoldingModel, p: UnfoldedPoint) -> SpacePoint:
    """The unfolding map: ``(a, u, l, t) -> (a, u, [l, |t|])``; bubbles are forgotten."""
    _check(model, p)
    if isinstance(p, TubeLift):
        u, cone = canonical_chart_unfold(p.u, p.l, p.t)
        return TubeSpacePoint(p.chart, u, cone)
    return RegularSpacePoint(p.chart, tuple(p.x))


def tau_tilde(model: UnfoldingModel, p: UnfoldedPoint) -> tuple:
    """Bundle projection of the unfolded tube onto the stratum."""
    tp = _as_tube(model, p)
    if tp is None:
        raise NotInTube(f"{p} does not lie in the unfolded tube")
    return tp.u


def _as_tube(model: UnfoldingModel, p, chart: str | None = None) -> TubeLift | None:
    """A tube representative of ``p`` (in ``chart`` when given), or None."""
    spec = model.spec
    if isinstance(p, RegularLift):
        rc = spec.regular[p.chart]
        for tid, tr in rc.transitions.items():
            if tr.overlap.contains([p.x])[0]:
                y = tr.to_tube([p.x])[0]
                u = tuple(spec.stratum.reduce([y[: spec.du]])[0]) if spec.du else ()
                l = tuple(spec.link.reduce([y[spec.du: spec.du + spec.dl]])[0]) if spec.dl else ()
                p = TubeLift(tid, u, l, p.bubble * float(y[-1]))
                break
        else:
            return None
    if chart is None or chart == p.chart:
        return p
    L, ok = spec.transport(p.chart, chart, [p.u], [p.l])
    if not ok[0]:
        return None
    return TubeLift(chart, p.u, tuple(L[0]), p.t)


def separation(model: UnfoldingModel, p: UnfoldedPoint, q: UnfoldedPoint) -> float:
    """Coordinate distance between two unfolded points after moving ``q`` into ``p``'s chart.

    Infinite when no common chart exists (e.g. different regular sheets).
    """
    spec = model.spec
    if isinstance(p, RegularLift) and isinstance(q, RegularLift) and p.chart == q.chart:
        if p.bubble != q.bubble:
            return math.inf
        return float(spec.regular[p.chart].domain.distance([p.x], [q.x])[0])
    tp = _as_tube(model, p)
    if tp is None:
        tp, q = _as_tube(model, q), p
        if tp is None:
            return math.inf
    tq = _as_tube(model, q, tp.chart)
    if tq is None:
        return math.inf
    d = abs(tp.t - tq.t)
    if spec.du:
        d = max(d, float(spec.stratum.distance([tp.u], [tq.u])[0]))
    if spec.dl:
        d = max(d, float(spec.link.distance([tp.l], [tq.l])[0]))
    return d


def equivalent(model: UnfoldingModel, p: UnfoldedPoint, q: UnfoldedPoint, tol: float = 1e-9) -> bool:
    """Whether ``p`` and ``q`` name the same point of the unfolding."""
    return separation(model, p, q) <= tol


def _link_samples(spec: SpaceSpec, samples: int) -> np.ndarray:
    if spec.dl == 0:
        return np.zeros((1, 0))
    return spec.link.grid(samples)[:samples]


def fiber(model: UnfoldingModel, x: SpacePoint, samples: int = 8) -> list[list[UnfoldedPoint]]:
    """Preimage of ``x`` grouped into equivalence classes.

    Over a regular point there are exactly two classes, one per bubble.
    Over a singular point the preimage is a copy of the link; ``samples``
    link points are returned, each class listing its representative in
    every tube chart containing the point.
    """
    _check(model, x)
    spec = model.spec
    if isinstance(x, RegularSpacePoint):
        classes = []
        for b in model.bubbles:
            reg = RegularLift(b, x.chart, tuple(x.x))
            cls = [reg]
            tp = _as_tube(model, reg)
            if tp is not None:
                cls.extend(_tube_reps(model, tp))
            classes.append(cls)
        return classes
    if x.cone.r > VERTEX_EPS:
        classes = []
        for b in model.bubbles:
            base = TubeLift(x.chart, tuple(x.u), tuple(x.cone.link), b * x.cone.r)
            cls = _tube_reps(model, base)
            cls.extend(_regular_reps(model, cls, b))
            classes.append(cls)
        return classes
    out = []
    for l in _link_samples(spec, samples):
        out.append(_tube_reps(model, TubeLift(x.chart, tuple(x.u), tuple(l), 0.0)))
    return out


def _tube_reps(model: UnfoldingModel, p: TubeLift) -> list[TubeLift]:
    spec = model.spec
    reps = [p]
    for cid, ch in spec.charts.items():
        if cid == p.chart:
            continue
        if abs(p.t) < ch.r_lo or abs(p.t) > ch.r_hi + 1e-9:
            continue
        q = _as_tube(model, p, cid)
        if q is not None:
            reps.append(q)
    return reps


def _regular_reps(model: UnfoldingModel, tube_reps: list[TubeLift], bubble: int) -> list[RegularLift]:
    spec = model.spec
    out = []
    seen = set()
    for tp in tube_reps:
        for rid, rc in spec.regular.items():
            tr = rc.transitions.get(tp.chart)
            if tr is None or rid in seen:
                continue
            xr = tr.from_tube([tp.u + tp.l + (abs(tp.t),)])[0]
            xr = rc.domain.reduce([xr])[0]
            if tr.overlap.contains([xr])[0]:
                out.append(RegularLift(bubble, rid, tuple(xr)))
                seen.add(rid)
    return out


# --------------------------------------------------------------------------
# restriction

def restrict(model: UnfoldingModel, region: dict) -> UnfoldingModel:
    """Restrict to an open set given as ``chart id -> sub-box``.

    Tube chart boxes may bound stratum coordinates and ``r``; charts not
    named in ``region`` are dropped.
    """
    spec = model.spec
    charts = {}
    for cid, ch in spec.charts.items():
        if cid not in region:
            continue
        box = region[cid]
        base = ch.base.intersect(Domain(tuple(c for c in box.coords if c.name != RADIUS)))
        if base is None:
            continue
        r_lo, r_hi = ch.r_lo, ch.r_hi
        if RADIUS in box.names:
            rc = box.coord(RADIUS)
            r_lo, r_hi = max(r_lo, rc.lo), min(r_hi, rc.hi)
            if not r_lo < r_hi:
                continue
        charts[cid] = TubeChart(cid, base, {}, r_lo, r_hi)
    for cid, ch in charts.items():
        overlaps = {}
        for other, boxes in spec.charts[cid].overlaps.items():
            if other not in charts:
                continue
            kept = tuple(b2 for b2 in (b.intersect(ch.base) for b in boxes) if b2 is not None)
            if kept:
                overlaps[other] = kept
        charts[cid] = replace(ch, overlaps=overlaps)
    regular = {}
    for rid, rc in spec.regular.items():
        if rid not in region:
            continue
        dom = rc.domain.intersect(region[rid])
        if dom is None:
            continue
        trans = {}
        for tid, tr in rc.transitions.items():
            if tid not in charts:
                continue
            ov = tr.overlap.intersect(dom)
            if ov is not None:
                trans[tid] = replace(tr, overlap=ov)
        regular[rid] = replace(rc, domain=dom, transitions=trans)
    if not charts and not regular:
        raise EmptyRestriction("the restricted region contains no chart")
    cocycles = {k: v for k, v in spec.cocycles.items() if k[0] in charts and k[1] in charts}
    new = replace(spec, charts=charts, cocycles=cocycles, regular=regular,
                  stratum=spec.stratum if charts else None)
    return UnfoldingModel(new, model.validation, model.bubbles)


# --------------------------------------------------------------------------
# axiom verification

def _sets(domain: Domain, samples: int, seed: int):
    return (("grid", domain.grid(samples)), ("random", domain.random(samples, seed)))


def _tube_sets(spec: SpaceSpec, cid: str, radial: str, samples: int, seed: int, regular_only=False):
    ch = spec.charts[cid]
    for which, pts in _sets(spec.chart_box(cid, radial), samples, seed):
        rad = np.abs(pts[:, -1])
        keep = rad >= ch.r_lo
        if regular_only:
            keep &= rad > VERTEX_EPS
        yield which, pts[keep]


def _split(spec, pts):
    du, dl = spec.du, spec.dl
    return pts[:, :du], pts[:, du:du + dl], pts[:, -1]


def _witness(names, pt, **extra):
    w = {n: float(v) for n, v in zip(names, pt)}
    w.update(extra)
    return w


class _MaxCheck:
    """Accumulate residuals of one named check over several batches."""

    def __init__(self, names):
        self.names = names
        self.worst = -np.inf
        self.point = None
        self.extra = {}
        self.count = 0

    def push(self, res, pts, **extra):
        res = np.asarray(res, dtype=float)
        if res.size == 0:
            return
        self.count += res.size
        k = int(np.argmax(res))
        if res[k] > self.worst:
            self.worst = float(res[k])
            self.point = np.asarray(pts)[k]
            self.extra = extra

    def add_to(self, report, name, anchor, tol, proxy=False, detail=""):
        if self.count == 0:
            report.add(name, anchor, True, 0.0, detail="vacuous: no sample points", proxy=proxy)
            return
        ok = self.worst < tol
        wit = None if ok else _witness(self.names, self.point, **self.extra)
        report.add(name, anchor, ok, self.worst, wit, detail=detail, proxy=proxy)


def verify_unfolding_axioms(target, samples: int = 1000, tol: float = 1e-6, seed: int = 42,
                            fd_step: float = 1e-3, jac_tol: float | None = None) -> Report:
    """Check the unfolding axioms on a model or a candidate unfolding."""
    if isinstance(target, CandidateUnfolding):
        return _verify_candidate(target, samples, tol, seed, fd_step,
                                 10 * fd_step if jac_tol is None else jac_tol)
    return _verify_model(target, samples, tol, seed)


def _verify_model(model: UnfoldingModel, samples: int, tol: float, seed: int) -> Report:
    spec = model.spec
    rep = Report()
    names = spec.tube_names(RADIUS)
    for which in ("grid", "random"):
        card = _MaxCheck(names)
        proj = _MaxCheck(names)
        distinct = _MaxCheck(names)
        proper = _MaxCheck(names)
        sizes = set()
        points = []
        for cid in sorted(spec.charts):
            pts = dict(_tube_sets(spec, cid, RADIUS, samples, seed, regular_only=True))[which]
            U, L, R = _split(spec, pts)
            for k in range(len(pts)):
                points.append((TubeSpacePoint(cid, tuple(U[k]), ConePoint(tuple(L[k]), float(R[k]))), pts[k]))
        for rid in sorted(spec.regular):
            dom = spec.regular[rid].domain
            pts = dict(_sets(dom, samples, seed))[which]
            for k in range(len(pts)):
                points.append((RegularSpacePoint(rid, tuple(pts[k])), None))
        for x, raw in points:
            wit = raw if raw is not None else np.array(x.x)
            classes = fiber(model, x)
            sizes.add(len(classes))
            card.push([abs(len(classes) - model.sheets)], [wit], classes=len(classes))
            worst = max(spec.distance(project(model, q), x) for cls in classes for q in cls)
            proj.push([worst], [wit])
            # classes must be internally equivalent and mutually distinct
            bad = 0.0
            for i, ci in enumerate(classes):
                if not all(equivalent(model, ci[0], q, tol) for q in ci[1:]):
                    bad = 1.0
                for cj in classes[i + 1:]:
                    if equivalent(model, ci[0], cj[0], tol):
                        bad = 1.0
            distinct.push([bad], [wit])
            if isinstance(x, TubeSpacePoint):
                # preimage of {r <= r(x)} stays inside {|t| <= r(x)}
                over = max(abs(q.t) - x.cone.r for cls in classes for q in cls if isinstance(q, TubeLift))
                proper.push([max(over, 0.0)], [wit])
        card.add_to(rep, f"unfold.covering.fiber-cardinality[{which}]", ANCHOR_COVERING, 0.5,
                    detail=f"expected {model.sheets} sheets; observed {sorted(sizes)}")
        proj.add_to(rep, f"unfold.covering.fiber-projects-to-point[{which}]", ANCHOR_COVERING, tol)
        distinct.add_to(rep, f"unfold.covering.classes-distinct[{which}]", ANCHOR_COVERING, 0.5)
        proper.add_to(rep, f"unfold.properness[{which}]", ANCHOR_PROPER, tol, proxy=True,
                      detail="bounded preimages of sampled compact boxes; not a proof of properness")

        square = _MaxCheck(spec.tube_names(UNFOLDED))
        single = _MaxCheck(spec.tube_names(UNFOLDED))
        tau = _MaxCheck(spec.tube_names(UNFOLDED))
        for cid in sorted(spec.charts):
            pts = dict(_tube_sets(spec, cid, UNFOLDED, samples, seed))[which]
            U, L, T = _split(spec, pts)
            # chart unfolding c followed by the chart vs the quotient map
            RU, RL, RR = _project_batch(spec, cid, U, L, T)
            square.push(spec.cone_distance(U, L, np.abs(T), RU, RL, RR), pts)
            tau.push(spec.stratum.distance(RU, U) if spec.du else np.zeros(len(U)), pts)
            for other in sorted(spec.charts):
                if other == cid:
                    continue
                L2, ok = spec.transport(cid, other, U, L)
                ok &= (np.abs(T) >= spec.charts[other].r_lo) & (np.abs(T) <= spec.charts[other].r_hi)
                if not np.any(ok):
                    continue
                # project the other representative and bring it back
                QU, QL, QR = _project_batch(spec, other, U[ok], L2[ok], T[ok])
                back, ok2 = spec.transport(other, cid, QU, QL)
                d = spec.cone_distance(U[ok], L[ok], np.abs(T[ok]), QU, back, QR)
                d = np.where(ok2, d, np.inf)
                single.push(d, pts[ok])
        square.add_to(rep, f"unfold.chart-square[{which}]", ANCHOR_SQUARE, tol)
        single.add_to(rep, f"unfold.projection-single-valued[{which}]", ANCHOR_SQUARE, tol)
        tau.add_to(rep, f"unfold.tau-tilde-base[{which}]", ANCHOR_SQUARE, tol)

        glue = _MaxCheck(())
        for rid in sorted(spec.regular):
            rc = spec.regular[rid]
            for tid, tr in sorted(rc.transitions.items()):
                pts = dict(_sets(tr.overlap, samples, seed))[which]
                glue.names = rc.domain.names
                if len(pts) == 0:
                    continue
                y = tr.to_tube(pts)
                back = tr.from_tube(y)
                d = rc.domain.distance(pts, back)
                d = np.where(y[:, -1] > 0, d, np.inf)
                glue.push(d, pts)
        glue.add_to(rep, f"unfold.bubble-gluing[{which}]", ANCHOR_GLUE, tol)

        hyper = _MaxCheck(spec.u_names)
        link_count = _MaxCheck(spec.u_names)
        off = _MaxCheck(spec.tube_names(UNFOLDED))
        n_link = 16
        expect = len(_link_samples(spec, n_link))
        for cid in sorted(spec.charts):
            ch = spec.charts[cid]
            if not ch.meets_stratum:
                continue
            ub = dict(_sets(ch.base, min(samples, 64), seed))[which] if spec.du else np.zeros((1, 0))
            for u in ub:
                classes = fiber(model, TubeSpacePoint(cid, tuple(u), ConePoint((0.0,) * spec.dl, 0.0)), n_link)
                worst = max(max(abs(q.t), spec.to_tube_point(project(model, q)).cone.r)
                            for cls in classes for q in cls)
                hyper.push([worst], [u])
                link_count.push([abs(len(classes) - expect)], [u], classes=len(classes))
            pts = dict(_tube_sets(spec, cid, UNFOLDED, samples, seed))[which]
            U, L, T = _split(spec, pts)
            nz = np.abs(T) > VERTEX_EPS
            _, _, RR = _project_batch(spec, cid, U[nz], L[nz], T[nz])
            # off the slice t = 0 nothing lands in the stratum
            off.push(np.where(RR > 0, 0.0, 1.0), pts[nz])
        hyper.add_to(rep, f"unfold.hypersurface.t-slice[{which}]", ANCHOR_HYPER, tol)
        link_count.add_to(rep, f"unfold.hypersurface.link-fiber[{which}]", ANCHOR_HYPER, 0.5,
                          detail=f"expected {expect} link classes per singular point")
        off.add_to(rep, f"unfold.hypersurface.codim-one[{which}]", ANCHOR_HYPER, 0.5)
    return rep


def _project_batch(spec: SpaceSpec, cid: str, U, L, T):
    """Coordinates of the projections of tube lifts of chart ``cid``."""
    U = np.array(U, dtype=float, ndmin=2).reshape(len(T), spec.du)
    L = spec.link.reduce(np.array(L, dtype=float).reshape(len(T), spec.dl))
    return U, L, np.abs(np.asarray(T, dtype=float))


# --------------------------------------------------------------------------
# candidate unfoldings

def _verify_candidate(cand: CandidateUnfolding, samples, tol, seed, fd_step, jac_tol) -> Report:
    spec = cand.target
    if cand.chart not in spec.charts:
        raise OutOfDomain(f"candidate {cand.name!r} targets unknown chart {cand.chart!r}")
    ch = spec.charts[cand.chart]
    src = cand.source
    rep = Report()
    lmap = cand.lmap
    kappa = cand.signed_chart
    periods_x = [c.period for c in ch.base.coords] + [c.period for c in spec.link.coords] + [None]
    seeds = src.grid(6 ** max(src.dim, 1))
    names_x = spec.tube_names(RADIUS)
    names_y = spec.tube_names(UNFOLDED)
    kappa_t = lambda z: kappa(z)[:, -1]  # noqa: E731

    # range: the candidate lands in the chart with r >= 0
    rng = _MaxCheck(src.names)
    for which, z in _sets(src, samples, seed):
        x = lmap(z)
        U, L, R = _split(spec, x)
        bad = np.maximum(-R, 0.0)
        if spec.du:
            bad = np.maximum(bad, np.where(ch.base.contains(U), 0.0, 1.0))
        rng.push(bad, z)
    rng.add_to(rep, "candidate.range", ANCHOR_COVERING, tol)

    box = spec.chart_box(cand.chart, RADIUS)
    r_min = max(ch.r_lo, 1e-3 * ch.r_hi)
    for which, x in _sets(box, samples, seed):
        x = x[x[:, -1] >= r_min]
        roots, ok, owner = newton_solve(lmap, x, seeds, src, periods_x)
        reps = count_distinct(src, roots, ok, owner, len(x))
        counts = np.array([len(r) for r in reps])
        card = _MaxCheck(names_x)
        card.push(np.abs(counts - cand.sheets), x)
        card.add_to(rep, f"candidate.covering.fiber-cardinality[{which}]", ANCHOR_COVERING, 0.5,
                    detail=f"expected {cand.sheets}; observed {sorted(set(counts.tolist()))}")
        balance = _MaxCheck(names_x)
        proper = _MaxCheck(names_x)
        bubble_env = src.names
        for k, rr in enumerate(reps):
            if not rr:
                continue
            zs = np.array(rr)
            signs = np.sign(cand.bubble.evaluate({n: zs[:, j] for j, n in enumerate(bubble_env)}))
            signs = np.broadcast_to(signs, (len(zs),))
            pos, neg = int(np.sum(signs > 0)), int(np.sum(signs < 0))
            balance.push([abs(pos - neg)], [x[k]], positive=pos, negative=neg)
            proper.push([0.0 if np.all(src.contains(zs, 1e-9)) else 1.0], [x[k]])
        balance.add_to(rep, f"candidate.covering.bubble-balance[{which}]", ANCHOR_COVERING, 0.5)
        proper.add_to(rep, f"candidate.properness[{which}]", ANCHOR_PROPER, 0.5, proxy=True,
                      detail="preimages of sampled compact boxes stay in the source box; not a proof")

    # unfolded chart: invert the signed chart and compare both routes round the square
    ybox = spec.chart_box(cand.chart, UNFOLDED)
    periods_y = periods_x
    for which, y in _sets(ybox, samples, seed):
        y = y[np.abs(y[:, -1]) >= ch.r_lo]
        roots, ok, owner = newton_solve(kappa, y, seeds, src, periods_y)
        reps = count_distinct(src, roots, ok, owner, len(y))
        square = _MaxCheck(names_y)
        inj = _MaxCheck(names_y)
        found = [r[0] if r else None for r in reps]
        counts = np.array([len(r) for r in reps])
        inj.push(np.abs(counts - 1), y, preimages=-1)
        have = np.array([f is not None for f in found])
        if np.any(have):
            z = np.array([f for f in found if f is not None])
            x = lmap(z)
            yy = y[have]
            U, L, T = _split(spec, yy)
            XU, XL, XR = _split(spec, x)
            d = spec.cone_distance(U, L, np.abs(T), XU, spec.link.reduce(XL), XR)
            square.push(d, yy)
        if np.any(~have):
            square.push(np.full(int(np.sum(~have)), np.inf), y[~have])
        square.add_to(rep, f"candidate.chart-square[{which}]", ANCHOR_SQUARE, tol)
        inj.add_to(rep, f"candidate.chart-injective[{which}]", ANCHOR_SQUARE, 0.5,
                   detail="local checks only; global diffeomorphism is not decided")

    # hypersurface: project source samples onto sign(bubble) * r = 0
    for which, z in _sets(src, samples, seed):
        zs = level_project(kappa_t, z, src)
        on = np.abs(kappa_t(zs)) <= tol
        on &= src.contains(zs, 1e-9)
        hyper = _MaxCheck(src.names)
        jac = _MaxCheck(src.names)
        grad = _MaxCheck(src.names)
        if not np.any(on):
            rep.add(f"candidate.hypersurface.t-slice[{which}]", ANCHOR_HYPER, False, math.inf,
                    detail="no preimage of the stratum found")
            continue
        zs = zs[on]
        x = lmap(zs)
        hyper.push(np.maximum(np.abs(x[:, -1]), np.abs(kappa_t(zs))), zs)
        interior = _interior(src, zs, fd_step)
        zi = zs[interior]
        if len(zi):
            J = fd_jacobian(kappa, zi, fd_step)
            det = np.abs(np.linalg.det(J)) if J.shape[1] == J.shape[2] else np.zeros(len(zi))
            jac.push(jac_tol - det, zi, det=float(np.min(det)))
            g = fd_jacobian(lambda q: kappa(q)[:, -1:], zi, fd_step)[:, 0, :]
            grad.push(jac_tol - np.linalg.norm(g, axis=1), zi)
        hyper.add_to(rep, f"candidate.hypersurface.t-slice[{which}]", ANCHOR_HYPER, tol)
        jac.add_to(rep, f"candidate.chart-jacobian[{which}]", ANCHOR_SQUARE, 0.0,
                   detail=f"|det| of the signed chart must exceed {jac_tol:g} on the singular preimage")
        grad.add_to(rep, f"candidate.hypersurface.codim-one[{which}]", ANCHOR_HYPER, 0.0)
    return rep


def _interior(domain: Domain, pts, h):
    ok = np.ones(len(pts), dtype=bool)
    for j, c in enumerate(domain.coords):
        if c.periodic:
            continue
        ok &= (pts[:, j] - 2 * h >= c.lo) & (pts[:, j] + 2 * h <= c.hi)
    return ok


# --------------------------------------------------------------------------
# tube recovery from a collar

def tube_from_unfolding(model: UnfoldingModel, collar: Collar, samples: int = 1000,
                        tol: float = 1e-6, seed: int = 42) -> Report:
    """Rebuild the tube projection and bundle charts induced by ``collar``."""
    spec = model.spec
    gamma = collar.gamma
    rep = Report()
    names = spec.tube_names(RADIUS)
    periods = [c.period for c in spec.stratum.coords] if spec.du else []
    periods += [c.period for c in spec.link.coords] + [None]

    def hyper_pts(cid, which):
        box = Domain(spec.charts[cid].base.coords + spec.link.coords)
        pts = dict(_sets(box, samples, seed))[which]
        return np.hstack([pts, np.zeros((len(pts), 1))])

    # collar condition Gamma(m, 0) = m
    worst, where = 0.0, None
    for cid in sorted(spec.charts):
        if not spec.charts[cid].meets_stratum:
            continue
        for which in ("grid", "random"):
            m = hyper_pts(cid, which)
            d = _tube_coord_distance(spec, gamma(m), m)
            k = int(np.argmax(d)) if len(d) else 0
            if len(d) and d[k] > worst:
                worst, where = float(d[k]), m[k]
    if worst > tol:
        raise CollarError(f"collar {collar.name!r} moves the boundary: |Gamma(m,0) - m| = {worst:g} "
                          f"at {_witness(names, where)}")
    rep.add("tube.collar-boundary", ANCHOR_TUBE, True, worst)

    for which in ("grid", "random"):
        section = _MaxCheck(names)
        tau = _MaxCheck(names)
        lpart = _MaxCheck(names)
        rpart = _MaxCheck(names)
        mono = _MaxCheck(names)
        trans = _MaxCheck(names)
        for cid in sorted(spec.charts):
            if not spec.charts[cid].meets_stratum:
                continue
            m = hyper_pts(cid, which)
            U, L, _ = _split(spec, m)
            # tau is the identity on the stratum
            g0 = gamma(m)
            GU, GL, GT = _split(spec, g0)
            d = np.abs(GT)
            if spec.du:
                d = np.maximum(d, spec.stratum.distance(GU, U))
            section.push(d, m)
            # radial grid shared by every (u, l) so the r-part can be compared
            rs = np.linspace(0.0, spec.charts[cid].r_hi, 9)
            ul = m[:, :-1]
            rows = np.repeat(ul, len(rs), axis=0)
            rcol = np.tile(rs, len(ul))[:, None]
            z = np.hstack([rows, rcol])
            g = gamma(z)
            GU, GL, GT = _split(spec, g)
            RU, RL = rows[:, : spec.du], rows[:, spec.du:]
            # tau(L(Gamma(z, r))) = L(z) against the original tube projection
            tau.push(spec.stratum.distance(GU, RU) if spec.du else np.zeros(len(z)), z)
            # link part independent of r
            GL0 = np.repeat(gamma(np.hstack([ul, np.zeros((len(ul), 1))]))[:, spec.du: spec.du + spec.dl],
                            len(rs), axis=0)
            lpart.push(spec.link.distance(GL, GL0) if spec.dl else np.zeros(len(z)), z)
            # radial part independent of (u, l)
            rad = np.abs(GT).reshape(len(ul), len(rs))
            rpart.push(np.max(np.abs(rad - rad[0]), axis=0), np.column_stack([np.zeros((len(rs), len(names) - 1)), rs]))
            mono.push(np.where(np.diff(rad[0]) > 0, 0.0, 1.0), np.column_stack(
                [np.zeros((len(rs) - 1, len(names) - 1)), rs[1:]]))
            # transitions between induced charts keep the bundle form
            for other in sorted(spec.charts):
                if other == cid or not spec.charts[other].meets_stratum:
                    continue
                trans.push(*_collar_transition(spec, gamma, cid, other, z, periods))
        section.add_to(rep, f"tube.section[{which}]", ANCHOR_TUBE, tol)
        tau.add_to(rep, f"tube.projection[{which}]", ANCHOR_TUBE, tol)
        lpart.add_to(rep, f"tube.chart-form.link-radium-free[{which}]", ANCHOR_TUBE, tol)
        rpart.add_to(rep, f"tube.chart-form.radial-reparametrisation[{which}]", ANCHOR_TUBE, tol)
        mono.add_to(rep, f"tube.chart-form.radial-increasing[{which}]", ANCHOR_TUBE, 0.5)
        trans.add_to(rep, f"tube.transition-form[{which}]", ANCHOR_TUBE, tol)
    return rep


def _tube_coord_distance(spec, a, b):
    AU, AL, AT = _split(spec, a)
    BU, BL, BT = _split(spec, b)
    d = np.abs(AT - BT)
    if spec.du:
        d = np.maximum(d, spec.stratum.distance(AU, BU))
    if spec.dl:
        d = np.maximum(d, spec.link.distance(AL, BL))
    return d


def _collar_transition(spec, gamma, a, b, z, periods):
    """Residual of the transition between the induced charts of ``a`` and ``b``.

    A point ``(u, l, r)`` of chart ``a`` is pushed through the induced chart,
    re-expressed in chart ``b`` and pulled back through ``b``'s induced
    chart by Newton inversion of the collar. The result must have the same
    ``u``, a link part independent of ``r`` and an ``r`` part independent
    of ``(u, l)``.
    """
    U = z[:, : spec.du]
    keep = spec.in_overlap(a, b, U)
    if not np.any(keep):
        return np.zeros(0), np.zeros((0, z.shape[1]))
    z = z[keep]
    g = gamma(z)
    GU, GL, GT = _split(spec, g)
    Lb, ok = spec.transport(a, b, GU, spec.link.reduce(GL) if spec.dl else GL)
    target = np.hstack([GU, Lb, np.abs(GT)[:, None]])
    box = Domain(spec.stratum.coords + spec.link.coords + (Coord(RADIUS, -1e9, 1e9),))
    w, res = newton_paired(lambda q: np.hstack([gamma(q)[:, :-1], np.abs(gamma(q)[:, -1:])]),
                           target, target, box, periods)
    WU, WL, WR = _split(spec, w)
    d = np.where(ok & (res < 1e-9), 0.0, np.inf)
    if spec.du:
        d = np.maximum(d, spec.stratum.distance(WU, z[:, : spec.du]))
    # the transition's link part at r against its value at r = 0
    z0 = z.copy()
    z0[:, -1] = 0.0
    g0 = gamma(z0)
    G0U, G0L, _ = _split(spec, g0)
    L0, _ = spec.transport(a, b, G0U, spec.link.reduce(G0L) if spec.dl else G0L)
    if spec.dl:
        d = np.maximum(d, spec.link.distance(WL, L0))
    # radial part: same collar on both sides, so r' must equal r
    d = np.maximum(d, np.abs(WR - z[:, -1]))
    return d, z


# --------------------------------------------------------------------------
# export

def export_pointcloud(model: UnfoldingModel, samples: int, path, seed: int = 42) -> int:
    """Write sampled unfolded points and their projections as CSV to a path or stream; returns row count."""
    spec = model.spec
    rng = np.random.default_rng(seed)
    rows = []
    if spec.charts:
        ids = sorted(spec.charts)
        header = ["chart", "bubble", *spec.tube_names(UNFOLDED),
                  *(f"X_{n}" for n in spec.tube_names(RADIUS))]
        which = rng.integers(0, len(ids), size=samples)
        for k in range(samples):
            cid = ids[which[k]]
            box = spec.chart_box(cid, UNFOLDED)
            lo = np.array([c.lo for c in box.coords])
            hi = np.array([c.hi for c in box.coords])
            p = lo + rng.random(len(lo)) * (hi - lo)
            U, L, T = p[: spec.du], p[spec.du: spec.du + spec.dl], float(p[-1])
            q = project(model, TubeLift(cid, tuple(U), tuple(L), T))
            rows.append([cid, int(np.sign(T)), *p, *q.u, *q.cone.link, q.cone.r])
    else:
        ids = sorted(spec.regular)
        names = spec.regular[ids[0]].domain.names if ids else ()
        if any(spec.regular[i].domain.names != names for i in ids):
            raise OutOfDomain("regular charts with different coordinate names cannot share one CSV")
        header = ["chart", "bubble", *names, *(f"X_{n}" for n in names)]
        for k in range(samples):
            rid = ids[int(rng.integers(0, len(ids)))]
            dom = spec.regular[rid].domain
            lo = np.array([c.lo for c in dom.coords])
            hi = np.array([c.hi for c in dom.coords])
            x = lo + rng.random(len(lo)) * (hi - lo)
            b = 1 if rng.random() < 0.5 else -1
            q = project(model, RegularLift(b, rid, tuple(x)))
            rows.append([rid, b, *x, *q.x])
    if hasattr(path, "write"):
        _write_csv(path, header, rows)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            _write_csv(fh, header, rows)
    return len(rows)


def _write_csv(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, (str, int)) else f"{v:.17g}" for v in row])


__all__ = [
    "Collar",
    "CandidateUnfolding",
    "RegularLift",
    "TubeLift",
    "UnfoldedPoint",
    "UnfoldingModel",
    "as_expr",
    "build_primary_unfolding",
    "canonical_chart_unfold",
    "equivalent",
    "export_pointcloud",
    "fiber",
    "project",
    "restrict",
    "separation",
    "tau_tilde",
    "tube_from_unfolding",
    "verify_unfolding_axioms",
]
