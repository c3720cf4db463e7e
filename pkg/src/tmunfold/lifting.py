"""Lifting morphisms of cone bundles to their primary unfoldings.

A chart-wise morphism ``f(u, [l, r]) = (a1, [a2, a3])`` lifts to the
unfolded charts when ``a1`` and ``a2`` extend evenly across ``r = 0`` and
``a3`` extends oddly (or evenly while vanishing on the stratum). The lift
replaces ``r`` by ``|t|`` and, for an odd ``a3``, carries the sign of ``t``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import Coord, Domain, stack_env
from .errors import ConfigError, InconsistentLift, NotLiftable, OutOfDomain
from .exprlang import Binary, Expr, Unary, Var, diff_fd
from .numerics import fd_jacobian
from .report import Report
from .strata import RADIUS, UNFOLDED, SmoothMapExpr, SpaceSpec, TubeSpacePoint, ConePoint
from .unfolder import RegularLift, TubeLift, UnfoldingModel, build_primary_unfolding, project, separation

ANCHOR_PARITY = "lifting.parity-rule"
ANCHOR_COMPAT = "lifting.cocycle-commutation"
ANCHOR_GLOBAL = "lifting.global-lift"
ANCHOR_DIFFEO = "lifting.diffeomorphism"
ANCHOR_UNIQUE = "unfolding.uniqueness"

IDENTITY, SWAP = "identity", "swap"
PERMUTATIONS = (IDENTITY, SWAP)


class LiftKind(enum.Enum):
    ODD_A3 = "OddA3"
    EVEN_A3_ZERO = "EvenA3Zero"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class PemMorphism:
    """``U x c(L) -> U' x c(L')`` written as ``(a1, [a2, a3])`` in ``(u, l, r)``."""

    base: Domain
    link: Domain
    target_base: Domain
    target_link: Domain
    a1: SmoothMapExpr
    a2: SmoothMapExpr
    a3: SmoothMapExpr
    r_hi: float = 1.0

    def __post_init__(self):
        want = self.base.names + self.link.names + (RADIUS,)
        for name, m, outs in (("a1", self.a1, self.target_base.names),
                              ("a2", self.a2, self.target_link.names),
                              ("a3", self.a3, (RADIUS,))):
            if m.inputs != want:
                raise ConfigError(f"{name} must take inputs {want}, got {m.inputs}")
            if m.outputs != outs:
                raise ConfigError(f"{name} must produce {outs}, got {m.outputs}")

    @classmethod
    def build(cls, base, link, target_base, target_link, a1, a2, a3, r_hi=1.0):
        ins = base.names + link.names + (RADIUS,)
        return cls(base, link, target_base, target_link,
                   SmoothMapExpr.build(ins, target_base.names, a1),
                   SmoothMapExpr.build(ins, target_link.names, a2),
                   SmoothMapExpr.build(ins, (RADIUS,), a3), r_hi)

    @property
    def inputs(self) -> tuple[str, ...]:
        return self.a1.inputs

    @property
    def du(self) -> int:
        return self.base.dim

    def __call__(self, pts) -> np.ndarray:
        """Apply to rows ``(u, l, r)``; returns ``(u', l', r')`` with reduced link."""
        pts = np.array(pts, dtype=float, ndmin=2)
        l2 = self.a2(pts)
        if self.target_link.dim:
            l2 = self.target_link.reduce(l2)
        return np.hstack([self.a1(pts), l2, self.a3(pts)])

    def sample_box(self, radial=RADIUS, r_lo=0.0) -> Domain:
        rc = Coord(RADIUS, r_lo, self.r_hi) if radial == RADIUS else Coord(UNFOLDED, -self.r_hi, self.r_hi)
        return Domain(self.base.coords + self.link.coords + (rc,))


def pem_identity(base: Domain, link: Domain, r_hi: float = 1.0) -> PemMorphism:
    return PemMorphism.build(base, link, base, link, list(base.names), list(link.names), [RADIUS], r_hi)


def pem_invariants(f: PemMorphism, samples: int = 1000, tol: float = 1e-6, seed: int = 42) -> Report:
    """``a3`` vanishes on the stratum and is nonnegative."""
    rep = Report()
    names = f.base.names + f.link.names
    ul = Domain(f.base.coords + f.link.coords)
    for which, pts in (("grid", ul.grid(samples)), ("random", ul.random(samples, seed))):
        z = np.hstack([pts, np.zeros((len(pts), 1))])
        v = np.abs(f.a3(z)[:, 0])
        k = int(np.argmax(v))
        rep.add(f"pem.a3-vanishes-on-stratum[{which}]", ANCHOR_PARITY, v[k] < tol, v[k],
                None if v[k] < tol else _witness(names + (RADIUS,), z[k]))
    for which, z in _sets(f.sample_box(), samples, seed):
        neg = np.maximum(-f.a3(z)[:, 0], 0.0)
        k = int(np.argmax(neg))
        rep.add(f"pem.a3-nonnegative[{which}]", ANCHOR_PARITY, neg[k] < tol, neg[k],
                None if neg[k] < tol else _witness(f.inputs, z[k]))
    return rep


@dataclass(frozen=True)
class Rejection:
    """Why a morphism has no smooth lift: the first parity condition that failed."""

    component: str
    output: str
    point: dict
    residual: float
    order: int
    detail: str = ""

    def __str__(self):
        at = ", ".join(f"{k}={v:.6g}" for k, v in self.point.items())
        return (f"{self.component} ({self.output}) fails the parity rule: order-{self.order} "
                f"mismatch {self.residual:.6g} at {at}" + (f"; {self.detail}" if self.detail else ""))


def _sets(domain: Domain, samples: int, seed: int):
    return (("grid", domain.grid(samples)), ("random", domain.random(samples, seed)))


def _witness(names, pt, **extra):
    w = {n: float(v) for n, v in zip(names, pt)}
    w.update(extra)
    return w


def _abs_t():
    return Unary("abs", Var(UNFOLDED))


def even_extension(e: Expr) -> Expr:
    """``a(|t|)``."""
    return e.substitute({RADIUS: _abs_t()})


def odd_extension(e: Expr) -> Expr:
    """``sign(t) * a(|t|)``."""
    return Binary("*", Unary("sign", Var(UNFOLDED)), even_extension(e))


def _mismatch(ext: Expr, env: dict, order: int, h: float) -> np.ndarray:
    """Right minus left one-sided ``order``-th derivative of ``ext`` at ``t = 0``."""
    right = diff_fd(ext, UNFOLDED, env, order, "right", h)
    left = diff_fd(ext, UNFOLDED, env, order, "left", h)
    return np.broadcast_to(np.asarray(right - left, dtype=float), env[UNFOLDED].shape)


def _scale(e: Expr, env: dict) -> np.ndarray:
    v = np.broadcast_to(np.asarray(e.evaluate(env), dtype=float), env[UNFOLDED].shape)
    return np.maximum(1.0, np.abs(v))


def check_liftable(f: PemMorphism, samples: int = 1000, tol: float = 1e-4,
                   fd_step: float = 1e-3, seed: int = 42) -> LiftKind | Rejection:
    """Decide the parity pattern of ``f`` on sampled ``(u, l)`` at ``r = 0``.

    Smoothness of an extension is tested up to order 3 by comparing
    derivatives from both sides of ``t = 0``; tolerances scale with the
    local magnitude of the component.
    """
    names = f.base.names + f.link.names
    ul = Domain(f.base.coords + f.link.coords)
    pts = np.vstack([p for _, p in _sets(ul, samples, seed)])
    env = stack_env(names, pts)
    env[UNFOLDED] = np.zeros(len(pts))

    def witness(k):
        w = _witness(names, pts[k])
        w[RADIUS] = 0.0
        return w

    def worst(res, scale):
        rel = np.abs(res) / scale
        k = int(np.argmax(rel))
        return k, float(np.abs(res[k])), bool(rel[k] > tol)

    for comp, m in (("a1", f.a1), ("a2", f.a2)):
        for out, e in zip(m.outputs, m.exprs):
            ext = even_extension(e)
            scale = _scale(ext, env)
            for order in (1, 3):
                k, res, bad = worst(_mismatch(ext, env, order, fd_step), scale)
                if bad:
                    return Rejection(comp, out, witness(k), res, order,
                                     "one-sided r-derivatives of the even extension differ")

    e3 = f.a3.exprs[0]
    odd = odd_extension(e3)
    value = np.broadcast_to(np.asarray(e3.evaluate({**env, RADIUS: env[UNFOLDED]}), dtype=float), env[UNFOLDED].shape)
    k_v = int(np.argmax(np.abs(value)))
    value_ok = abs(value[k_v]) <= tol
    k_o, res_o, bad_o = worst(_mismatch(odd, env, 2, fd_step), _scale(even_extension(e3), env))
    if value_ok and not bad_o:
        return LiftKind.ODD_A3
    even = even_extension(e3)
    scale = _scale(even, env)
    even_fail = None
    for order in (1, 3):
        k, res, bad = worst(_mismatch(even, env, order, fd_step), scale)
        if bad:
            even_fail = (k, res, order)
            break
    if value_ok and even_fail is None:
        return LiftKind.EVEN_A3_ZERO
    if not value_ok:
        return Rejection("a3", RADIUS, witness(k_v), float(abs(value[k_v])), 0,
                         "a3 does not vanish on the stratum")
    k, res, order = even_fail
    if res_o >= res:
        # report the failure of the default (odd) pattern unless the even one is worse
        return Rejection("a3", RADIUS, witness(k_o), res_o, 2,
                         "the odd extension has a kink in its second derivative; the even one fails too")
    return Rejection("a3", RADIUS, witness(k), res, order,
                     "neither the odd nor the even extension of a3 is smooth")


@dataclass(frozen=True)
class LiftedMap:
    """Chart lift ``(u, l, t) -> (u', l', t')`` of a pem morphism."""

    source: PemMorphism
    kind: LiftKind
    sigma: str
    a1: SmoothMapExpr
    a2: SmoothMapExpr
    a3: SmoothMapExpr
    square: Report = field(default_factory=Report, compare=False)

    def __call__(self, pts) -> np.ndarray:
        pts = np.array(pts, dtype=float, ndmin=2)
        return np.hstack([self.a1(pts), self.a2(pts), self.a3(pts)])

    def reduced(self, pts) -> np.ndarray:
        out = self(pts)
        tl = self.source.target_link
        du = self.source.target_base.dim
        if tl.dim:
            out[:, du:du + tl.dim] = tl.reduce(out[:, du:du + tl.dim])
        return out


def lift_morphism(f: PemMorphism, kind, sigma: str = IDENTITY, samples: int = 1000,
                  tol: float = 1e-9, seed: int = 42) -> LiftedMap:
    """Build the lift of ``f`` for ``kind`` and check ``c' o f~ = f o c`` on samples."""
    if isinstance(kind, Rejection):
        raise NotLiftable(str(kind), rejection=kind)
    if not isinstance(kind, LiftKind):
        raise NotLiftable(f"not a lift kind: {kind!r}")
    if sigma not in PERMUTATIONS:
        raise ValueError(f"bubble permutation must be one of {PERMUTATIONS}")
    ins = f.base.names + f.link.names + (UNFOLDED,)
    a1 = SmoothMapExpr(ins, f.a1.outputs, tuple(even_extension(e) for e in f.a1.exprs))
    a2 = SmoothMapExpr(ins, f.a2.outputs, tuple(even_extension(e) for e in f.a2.exprs))
    e3 = f.a3.exprs[0]
    t3 = odd_extension(e3) if kind is LiftKind.ODD_A3 else even_extension(e3)
    if sigma == SWAP:
        t3 = Unary("neg", t3)
    a3 = SmoothMapExpr(ins, (UNFOLDED,), (t3,))
    lifted = LiftedMap(f, kind, sigma, a1, a2, a3)
    _square(lifted, samples, tol, seed)
    return lifted


def _square(lifted: LiftedMap, samples, tol, seed):
    f = lifted.source
    du, dl = f.target_base.dim, f.target_link.dim
    names = f.base.names + f.link.names + (UNFOLDED,)
    for which, y in _sets(f.sample_box(UNFOLDED), samples, seed):
        top = lifted(y)
        z = y.copy()
        z[:, -1] = np.abs(z[:, -1])
        bottom = f(z)
        d = _cone_gap(f.target_base, f.target_link, top[:, :du], top[:, du:du + dl], np.abs(top[:, -1]),
                      bottom[:, :du], bottom[:, du:du + dl], bottom[:, -1])
        k = int(np.argmax(d))
        ok = bool(d[k] < tol)
        lifted.square.add(f"lift.square[{which}]", ANCHOR_PARITY, ok, float(d[k]),
                          None if ok else _witness(names, y[k]))


def _cone_gap(base, link, U1, L1, R1, U2, L2, R2) -> np.ndarray:
    d = np.abs(R1 - R2)
    if base.dim:
        d = np.maximum(d, base.distance(U1, U2))
    if link.dim:
        dl = link.distance(L1, L2)
        d = np.maximum(d, np.where((R1 <= 1e-12) & (R2 <= 1e-12), 0.0, dl))
    return d


# --------------------------------------------------------------------------
# cocycle commutation

def check_cocycle_compat(f: PemMorphism, f2: PemMorphism, phi: SmoothMapExpr | None,
                         phi2: SmoothMapExpr | None, samples: int = 1000, tol: float = 1e-6,
                         seed: int = 42, region: Domain | None = None, agree_tol: float = 1e-8,
                         keep=None) -> Report:
    """Compare the three commutation equations with the direct ``f' o phi = phi' o f`` check.

    ``phi`` and ``phi2`` are link maps ``(u, l) -> l`` of the source and
    target (None for the identity). Points are drawn with ``r > 0``: at the
    vertex the link coordinate is not part of the point. ``region`` is the
    ``(u, l)`` sampling box and ``keep`` an optional filter on ``u``.
    """
    if (f.base.names, f.link.names, f.target_base.names, f.target_link.names) != \
            (f2.base.names, f2.link.names, f2.target_base.names, f2.target_link.names):
        raise ConfigError("cocycle compatibility needs pem morphisms of matching dimensions")
    du, dl = f.target_base.dim, f.target_link.dim
    sdu = f.base.dim
    tl = f.target_link
    rep = Report()
    if region is None:
        region = Domain(f.base.coords + f.link.coords)
    box = Domain(region.coords + (Coord(RADIUS, 1e-3 * f.r_hi, f.r_hi),))
    names = box.names

    def link_apply(g, U, L, dom):
        if g is None:
            return L
        out = g(np.hstack([U, L]))
        return dom.reduce(out) if dom.dim else out

    eq_res = {k: {} for k in ("eq1", "eq2", "eq3", "direct", "agree", "verdict")}
    for which, z in _sets(box, samples, seed):
        if keep is not None:
            z = z[keep(z[:, :sdu])]
        U, L, R = z[:, :sdu], z[:, sdu:sdu + f.link.dim], z[:, -1:]
        zphi = np.hstack([U, link_apply(phi, U, L, f.link), R])
        a1, a2, a3 = f.a1(z), f.a2(z), f.a3(z)
        b1, b2, b3 = f2.a1(zphi), f2.a2(zphi), f2.a3(zphi)
        # the three equations, component by component
        r1 = f.target_base.distance(a1, b1) if du else np.zeros(len(z))
        ga2 = link_apply(phi2, a1, a2, tl)
        r2 = tl.distance(ga2, b2) if dl else np.zeros(len(z))
        r3 = np.abs(a3 - b3)[:, 0]
        # direct check: compose whole maps and compare cone points
        left = f2(zphi)
        fz = f(z)
        right = np.hstack([fz[:, :du], link_apply(phi2, fz[:, :du], fz[:, du:du + dl], tl), fz[:, -1:]])
        rd = _cone_gap(f.target_base, tl, left[:, :du], left[:, du:du + dl], left[:, -1],
                       right[:, :du], right[:, du:du + dl], right[:, -1])
        eq_max = np.maximum(np.maximum(r1, r2), r3)
        v_eq = eq_max < tol
        v_direct = rd < tol
        eq_res["eq1"][which] = (r1, z)
        eq_res["eq2"][which] = (r2, z)
        eq_res["eq3"][which] = (r3, z)
        eq_res["direct"][which] = (rd, z)
        eq_res["agree"][which] = (np.abs(eq_max - rd), z)
        eq_res["verdict"][which] = ((v_eq != v_direct).astype(float), z)
    labels = {"eq1": "compat.eq-base", "eq2": "compat.eq-link", "eq3": "compat.eq-radius",
              "direct": "compat.direct"}
    for key, label in labels.items():
        for which in ("grid", "random"):
            res, z = eq_res[key][which]
            if len(res) == 0:
                rep.add(f"{label}[{which}]", ANCHOR_COMPAT, True, 0.0, detail="vacuous: no sample points")
                continue
            k = int(np.argmax(res))
            ok = bool(res[k] < tol)
            rep.add(f"{label}[{which}]", ANCHOR_COMPAT, ok, float(res[k]), None if ok else _witness(names, z[k]))
    for which in ("grid", "random"):
        res, z = eq_res["agree"][which]
        flips, _ = eq_res["verdict"][which]
        if len(res) == 0:
            rep.add(f"compat.equations-match-direct[{which}]", ANCHOR_COMPAT, True, 0.0,
                    detail="vacuous: no sample points")
            continue
        k = int(np.argmax(res))
        ok = bool(res[k] < agree_tol and not np.any(flips))
        rep.add(f"compat.equations-match-direct[{which}]", ANCHOR_COMPAT, ok, float(res[k]),
                None if ok else _witness(names, z[k], disagreements=float(np.sum(flips))),
                detail="per-point verdicts of the two checks must coincide")
    return rep


# --------------------------------------------------------------------------
# global morphisms

@dataclass(frozen=True)
class ChartPiece:
    """Chart-wise pem morphism from ``source_chart`` into ``target_chart``, valid on ``where``."""

    name: str
    source_chart: str
    target_chart: str
    a1: tuple
    a2: tuple
    a3: tuple
    where: Domain | None = None


@dataclass(frozen=True)
class TMMorphism:
    name: str
    source: SpaceSpec
    target: SpaceSpec
    pieces: tuple[ChartPiece, ...]
    regular: dict = field(default_factory=dict)  # source regular id -> (target regular id, SmoothMapExpr)
    preserves_tubes: bool = True

    def pem(self, piece: ChartPiece) -> PemMorphism:
        src, tgt = self.source, self.target
        base = src.charts[piece.source_chart].base
        if piece.where is not None:
            cut = base.intersect(piece.where)
            if cut is None:
                raise ConfigError(f"piece {piece.name!r} has an empty domain")
            base = cut
        return PemMorphism.build(base, src.link, tgt.charts[piece.target_chart].base, tgt.link,
                                 piece.a1, piece.a2, piece.a3, src.charts[piece.source_chart].r_hi)


@dataclass
class LiftedTM:
    """Global lift assembled from chart lifts and the regular-part maps."""

    morphism: TMMorphism
    sigma: str
    source_model: UnfoldingModel
    target_model: UnfoldingModel
    pieces: list = field(default_factory=list)  # (ChartPiece, PemMorphism, LiftedMap)

    def _piece_for(self, chart, u):
        for piece, pem, lifted in self.pieces:
            if piece.source_chart == chart and (pem.du == 0 or pem.base.contains([u])[0]):
                return piece, lifted
        return None

    def __call__(self, p):
        if isinstance(p, RegularLift):
            entry = self.morphism.regular.get(p.chart)
            if entry is not None:
                rid, m = entry
                x = m([p.x])[0]
                dom = self.morphism.target.regular[rid].domain
                b = p.bubble if self.sigma == IDENTITY else -p.bubble
                return RegularLift(b, rid, tuple(dom.reduce([x])[0]))
            from .unfolder import _as_tube
            tp = _as_tube(self.source_model, p)
            if tp is None:
                raise OutOfDomain(f"no piece of {self.morphism.name!r} covers {p}")
            p = tp
        spec = self.source_model.spec
        for chart in [p.chart] + sorted(c for c in spec.charts if c != p.chart):
            q = p if chart == p.chart else _move(self.source_model, p, chart)
            if q is None:
                continue
            hit = self._piece_for(chart, q.u)
            if hit is None:
                continue
            piece, lifted = hit
            y = lifted.reduced([q.u + q.l + (q.t,)])[0]
            tgt = self.target_model.spec
            du, dl = tgt.du, tgt.dl
            u = tuple(tgt.stratum.reduce([y[:du]])[0]) if du else ()
            return TubeLift(piece.target_chart, u, tuple(y[du:du + dl]), float(y[-1]))
        raise OutOfDomain(f"no piece of {self.morphism.name!r} covers {p}")


def _move(model, p, chart):
    from .unfolder import _as_tube
    return _as_tube(model, p, chart)


def lift_tm_morphism(psi: TMMorphism, source_model: UnfoldingModel | None = None,
                     target_model: UnfoldingModel | None = None, sigma: str = IDENTITY,
                     samples: int = 1000, tol: float = 1e-9, smooth_tol: float = 1e-4,
                     fd_step: float = 1e-3, seed: int = 42, compat_tol: float = 1e-6):
    """Lift a Thom-Mather morphism to the primary unfoldings; returns ``(LiftedTM, Report)``."""
    if not psi.preserves_tubes:
        raise NotLiftable(f"morphism {psi.name!r} does not preserve the tubes")
    src = source_model or build_primary_unfolding(psi.source, samples=samples, seed=seed)
    tgt = target_model or build_primary_unfolding(psi.target, samples=samples, seed=seed)
    rep = Report()
    lifted = LiftedTM(psi, sigma, src, tgt)
    pems = []
    for piece in psi.pieces:
        pem = psi.pem(piece)
        kind = check_liftable(pem, samples, smooth_tol, fd_step, seed)
        pair = f"{piece.source_chart}->{piece.target_chart}"
        if isinstance(kind, Rejection):
            raise NotLiftable(f"piece {piece.name!r} ({pair}): {kind}", rejection=kind, pair=(piece.name,))
        rep.add(f"lift.parity[{piece.name}]", ANCHOR_PARITY, True, 0.0, detail=f"kind {kind}")
        rep.extend(pem_invariants(pem, samples, compat_tol, seed), prefix=f"{piece.name}.")
        lm = lift_morphism(pem, kind, sigma, samples, tol, seed)
        rep.extend(lm.square, prefix=f"{piece.name}.")
        lifted.pieces.append((piece, pem, lm))
        pems.append((piece, pem))

    # chart pieces must commute with the cocycles wherever their domains meet
    for i, (p, f) in enumerate(pems):
        for q, f2 in pems[i + 1:]:
            a, b = p.source_chart, q.source_chart
            if a != b and not psi.source.has_cocycle(a, b):
                continue
            ta, tb = p.target_chart, q.target_chart

            def keep(U, a=a, b=b, f=f, f2=f2):
                ok = psi.source.in_overlap(a, b, U)
                if f.du:
                    ok &= f.base.contains(U) & f2.base.contains(U)
                return ok

            for box in psi.source.overlap_boxes(a, b):
                region = Domain(box.coords + psi.source.link.coords)
                probe = region.grid(samples)
                if f.du and not np.any(keep(probe[:, :f.du])):
                    continue
                if ta != tb and not psi.target.has_cocycle(ta, tb):
                    raise NotLiftable(f"pieces {p.name!r} and {q.name!r} meet but target charts "
                                      f"{ta!r} and {tb!r} share no cocycle", pair=(p.name, q.name))
                phi = _cocycle_map(psi.source, a, b)
                phi2 = _cocycle_map(psi.target, ta, tb)
                cr = check_cocycle_compat(f, f2, phi, phi2, samples, compat_tol, seed, region, keep=keep)
                if not cr.passed:
                    bad = ", ".join(c.name for c in cr.failures())
                    raise NotLiftable(f"pieces {p.name!r} ({a}->{ta}) and {q.name!r} ({b}->{tb}) "
                                      f"do not commute with the cocycles: {bad}", pair=(p.name, q.name))
                rep.extend(cr, prefix=f"{p.name}~{q.name}.")

    _global_checks(lifted, rep, samples, tol, seed)
    return lifted, rep


def _cocycle_map(spec: SpaceSpec, a, b):
    if a == b and (a, a) not in spec.cocycles:
        return None
    if (a, b) in spec.cocycles:
        return spec.cocycles[(a, b)].g
    return spec.cocycles[(b, a)].g_inv


def _unfolded_samples(model: UnfoldingModel, samples: int, seed: int):
    """Sampled unfolded points per set, tube charts and both regular sheets."""
    spec = model.spec
    out = {}
    for which in ("grid", "random"):
        pts = []
        for cid in sorted(spec.charts):
            box = spec.chart_box(cid, UNFOLDED)
            y = box.grid(samples) if which == "grid" else box.random(samples, seed)
            ch = spec.charts[cid]
            y = y[np.abs(y[:, -1]) >= ch.r_lo]
            du, dl = spec.du, spec.dl
            for row in y:
                pts.append(TubeLift(cid, tuple(row[:du]), tuple(row[du:du + dl]), float(row[-1])))
        for rid in sorted(spec.regular):
            dom = spec.regular[rid].domain
            x = dom.grid(samples) if which == "grid" else dom.random(samples, seed)
            for k, row in enumerate(x):
                pts.append(RegularLift(1 if k % 2 == 0 else -1, rid, tuple(row)))
        out[which] = pts
    return out


def _in_target(model, p) -> bool:
    from .unfolder import _check
    try:
        _check(model, p)
    except OutOfDomain:
        return False
    return True


def _space_map(lifted: LiftedTM, x):
    """Psi on a space point, through the chart piece or regular map covering it."""
    psi = lifted.morphism
    if not isinstance(x, TubeSpacePoint) and x.chart in psi.regular:
        from .strata import RegularSpacePoint
        rid, m = psi.regular[x.chart]
        dom = psi.target.regular[rid].domain
        return RegularSpacePoint(rid, tuple(dom.reduce(m([x.x]))[0]))
    spec = psi.source
    tp = spec.to_tube_point(x)
    for chart in [tp.chart] + sorted(c for c in spec.charts if c != tp.chart):
        try:
            q = spec.to_tube_point(tp, chart)
        except Exception:
            continue
        for piece, pem, _ in lifted.pieces:
            if piece.source_chart == chart and (pem.du == 0 or pem.base.contains([q.u])[0]):
                y = pem([q.u + q.cone.link + (q.cone.r,)])[0]
                tgt = psi.target
                du, dl = tgt.du, tgt.dl
                u = tuple(tgt.stratum.reduce([y[:du]])[0]) if du else ()
                return TubeSpacePoint(piece.target_chart, u, ConePoint(tuple(y[du:du + dl]), max(float(y[-1]), 0.0)))
    raise OutOfDomain(f"no piece covers {x}")


def _global_checks(lifted: LiftedTM, rep: Report, samples, tol, seed):
    src, tgt = lifted.source_model, lifted.target_model
    tspec = tgt.spec
    names = ("sample",)
    for which, pts in _unfolded_samples(src, samples, seed).items():
        sq, wd, skipped = [], [], 0
        sq_w, wd_w = None, None
        for p in pts:
            img = lifted(p)
            if not _in_target(tgt, img):
                skipped += 1
                continue
            d = tspec.distance(project(tgt, img), _space_map(lifted, project(src, p)))
            sq.append(d)
            if d == max(sq):
                sq_w = p
            # every other representative of p must map to an equivalent point
            worst = 0.0
            for q in _representatives(src, p):
                worst = max(worst, separation(tgt, img, lifted(q)))
            wd.append(worst)
            if worst == max(wd):
                wd_w = p
        detail = f"{skipped} samples whose image leaves the target charts were skipped" if skipped else ""
        res = max(sq) if sq else 0.0
        rep.add(f"lift.projection-square[{which}]", ANCHOR_GLOBAL, res < tol, res,
                None if res < tol or sq_w is None else _point_witness(sq_w), detail=detail)
        res = max(wd) if wd else 0.0
        rep.add(f"lift.well-defined[{which}]", ANCHOR_GLOBAL, res < tol, res,
                None if res < tol or wd_w is None else _point_witness(wd_w), detail=detail)
        if res >= tol:
            raise InconsistentLift(f"lift of {lifted.morphism.name!r} is not well defined on the quotient: "
                                   f"separation {res:.3g} at {_point_witness(wd_w)}")
    return rep


def _representatives(model, p):
    from .unfolder import _as_tube, _regular_reps, _tube_reps
    tp = _as_tube(model, p)
    if tp is None:
        return []
    reps = _tube_reps(model, tp)
    if tp.t != 0:
        reps = reps + _regular_reps(model, reps, int(np.sign(tp.t)))
    return [q for q in reps if q != p]


def _point_witness(p):
    if isinstance(p, TubeLift):
        w = {f"u{i}": v for i, v in enumerate(p.u)}
        w.update({f"l{i}": v for i, v in enumerate(p.l)})
        w["t"] = p.t
        return w
    w = {f"x{i}": v for i, v in enumerate(p.x)}
    w["bubble"] = float(p.bubble)
    return w


# --------------------------------------------------------------------------
# diffeomorphism and uniqueness

def verify_diffeomorphism(psi_t: LiftedTM, phi_t: LiftedTM, samples: int = 1000, tol: float = 1e-8,
                          fd_step: float = 1e-3, seed: int = 42, jac_tol: float | None = None) -> Report:
    """Check that two lifts are mutually inverse and locally invertible."""
    rep = Report()
    jac_tol = tol if jac_tol is None else jac_tol
    for label, first, second in (("left-inverse", psi_t, phi_t), ("right-inverse", phi_t, psi_t)):
        model = first.source_model
        for which, pts in _unfolded_samples(model, samples, seed).items():
            worst, wit, flips, skipped = 0.0, None, 0, 0
            for p in pts:
                img = first(p)
                if not _in_target(first.target_model, img):
                    skipped += 1
                    continue
                back = second(img)
                d = separation(model, p, back)
                if _bubble(model, back) != _bubble(model, p):
                    flips += 1
                if d > worst or wit is None:
                    worst, wit = max(worst, d), p
            ok = worst < tol
            detail = f"{flips} samples changed bubble" if flips else ""
            if skipped:
                detail = (detail + "; " if detail else "") + f"{skipped} samples left the target charts"
            rep.add(f"diffeo.{label}[{which}]", ANCHOR_DIFFEO, ok, worst,
                    None if ok else _point_witness(wit), detail=detail)
    for label, lt in (("forward", psi_t), ("backward", phi_t)):
        for which in ("grid", "random"):
            worst, wit, detail = math.inf, None, "minimum |det| of the chart lifts, t = 0 slice included"
            for piece, pem, lm in lt.pieces:
                y = _jacobian_points(pem, samples, seed, which)
                if len(lm.a1.outputs) + len(lm.a2.outputs) + 1 != y.shape[1]:
                    worst, wit, detail = 0.0, None, f"piece {piece.name!r} changes dimension"
                    break
                # at t = 0 differentiate from the t > 0 side
                one = np.zeros_like(y, dtype=bool)
                one[:, -1] = y[:, -1] == 0.0
                det = np.abs(np.linalg.det(fd_jacobian(lm, y, fd_step, one_sided=one)))
                k = int(np.argmin(det))
                if det[k] < worst:
                    worst = float(det[k])
                    wit = _witness(pem.base.names + pem.link.names + (UNFOLDED,), y[k])
            if not lt.pieces:
                worst = 0.0
            ok = worst > jac_tol
            rep.add(f"diffeo.jacobian-{label}[{which}]", ANCHOR_DIFFEO, ok, worst,
                    None if ok else wit, detail=detail)
    rep.add("diffeo.global-bijectivity", ANCHOR_DIFFEO, True, None, proxy=True,
            detail="sampled inverse composites and local Jacobians only; global bijectivity is not proved")
    return rep


def _jacobian_points(pem: PemMorphism, samples, seed, which):
    box = pem.sample_box(UNFOLDED)
    y = box.grid(samples) if which == "grid" else box.random(samples, seed)
    ul = Domain(pem.base.coords + pem.link.coords)
    s = ul.grid(samples) if which == "grid" else ul.random(samples, seed)
    return np.vstack([y, np.hstack([s, np.zeros((len(s), 1))])])


def _bubble(model, p) -> int:
    if isinstance(p, RegularLift):
        return p.bubble
    return int(np.sign(p.t))


def permutation_reports(spec_a: SpaceSpec, spec_b: SpaceSpec, iota: TMMorphism, iota_inv: TMMorphism,
                        samples: int = 1000, tol: float = 1e-8, fd_step: float = 1e-3, seed: int = 42,
                        smooth_tol: float = 1e-4):
    """Diffeomorphism reports of ``(lift(iota), lift(iota_inv, sigma))`` for each ``sigma``."""
    ma = build_primary_unfolding(spec_a, samples=samples, seed=seed)
    mb = build_primary_unfolding(spec_b, samples=samples, seed=seed)
    psi_t, psi_rep = lift_tm_morphism(iota, ma, mb, IDENTITY, samples, tol, smooth_tol, fd_step, seed)
    out = {}
    for sigma in PERMUTATIONS:
        phi_t, phi_rep = lift_tm_morphism(iota_inv, mb, ma, sigma, samples, tol, smooth_tol, fd_step, seed)
        out[sigma] = (psi_rep, phi_rep, verify_diffeomorphism(psi_t, phi_t, samples, tol, fd_step, seed))
    return out


def uniqueness_check(spec_a: SpaceSpec, spec_b: SpaceSpec, iota: TMMorphism, iota_inv: TMMorphism,
                     samples: int = 1000, tol: float = 1e-8, fd_step: float = 1e-3, seed: int = 42,
                     smooth_tol: float = 1e-4) -> Report:
    """Lift ``iota`` and its inverse and look for a bubble permutation making them inverse diffeomorphisms.

    The report carries the full checks of the matching permutation(s);
    the others are summarised in the verdict line's detail.
    """
    per = permutation_reports(spec_a, spec_b, iota, iota_inv, samples, tol, fd_step, seed, smooth_tol)
    rep = Report()
    good = [s for s, (_, _, d) in per.items() if d.passed]
    for sigma, (psi_rep, phi_rep, diff) in per.items():
        if sigma in good:
            rep.extend(psi_rep, prefix=f"lift.{iota.name}.")
            rep.extend(phi_rep, prefix=f"lift.{iota_inv.name}[{sigma}].")
            rep.extend(diff, prefix=f"uniqueness[{sigma}].")
    notes = []
    for sigma, (_, _, diff) in per.items():
        if sigma not in good:
            worst = max(diff.failures(), key=lambda c: c.residual if c.residual is not None else 0.0)
            notes.append(f"{sigma} rejected by {worst.name} (residual {worst.residual:.3g})")
    rep.add("uniqueness.matching-permutation", ANCHOR_UNIQUE, bool(good), float(len(good)),
            detail=f"matching: {', '.join(good) or 'none'}" + (f"; {'; '.join(notes)}" if notes else ""))
    return rep


def cocycle_morphisms(spec: SpaceSpec) -> list[tuple[str, PemMorphism]]:
    """Pem morphisms ``(u, [l, r]) -> (u, [g_ab(u)(l), r])`` induced by every declared cocycle."""
    out = []
    for (a, b), coc in sorted(spec.cocycles.items()):
        for i, box in enumerate(spec.overlap_boxes(a, b)):
            r_hi = min(spec.charts[a].r_hi, spec.charts[b].r_hi)
            out.append((f"{a}->{b}#{i}", PemMorphism.build(
                box, spec.link, box, spec.link, list(spec.u_names), list(coc.g.exprs), [RADIUS], r_hi)))
    return out
