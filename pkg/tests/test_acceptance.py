"""End-to-end acceptance runs on the bundled configurations."""

import json
import math
import time

import numpy as np
import pytest

from conftest import TWO_PI, circle
from tmunfold.cli import run
from tmunfold.domain import Coord, Domain
from tmunfold.lifting import (
    LiftKind,
    PemMorphism,
    Rejection,
    check_cocycle_compat,
    check_liftable,
    cocycle_morphisms,
    lift_morphism,
    lift_tm_morphism,
    uniqueness_check,
    verify_diffeomorphism,
)
from tmunfold.numerics import fd_jacobian
from tmunfold.strata import ConePoint, RegularSpacePoint, SmoothMapExpr, TubeSpacePoint
from tmunfold.unfolder import build_primary_unfolding, fiber, project, tube_from_unfolding, verify_unfolding_axioms

N = 1000


def _max_residual(rep, fragment):
    checks = rep.find(fragment)
    assert checks, fragment
    return max(c.residual for c in checks)


@pytest.mark.criterion(1, "cone unfolding: fibre 2, chart square < 1e-9, < 5 s")
def test_cone_unfolding(fixtures):
    spec = fixtures("cone_s1").spaces["cone"]
    start = time.perf_counter()
    model = build_primary_unfolding(spec, samples=N)
    rep = verify_unfolding_axioms(model, samples=N)
    elapsed = time.perf_counter() - start
    assert rep.passed, [c.name for c in rep.failures()]
    assert _max_residual(rep, "unfold.covering.fiber-cardinality") == 0
    assert _max_residual(rep, "unfold.chart-square") < 1e-9
    assert elapsed < 5.0
    # independent count over 10^3 regular points
    pts = Domain((circle(), Coord("r", 1e-3, 1.0))).random(N, 5)
    for l, r in pts:
        assert len(fiber(model, TubeSpacePoint("a", (), ConePoint((l,), r)))) == 2


@pytest.mark.criterion(2, "double of a manifold with boundary: fibres 2 and 1, residual < 1e-12")
def test_interval_double(fixtures):
    spec = fixtures("interval_double").spaces["interval"]
    model = build_primary_unfolding(spec, samples=N)
    rep = verify_unfolding_axioms(model, samples=N)
    assert rep.passed
    for x in np.linspace(0.4, 1.0, 50):
        classes = fiber(model, RegularSpacePoint("x", (float(x),)))
        assert len(classes) == 2
        for cls in classes:
            assert all(spec.distance(project(model, q), RegularSpacePoint("x", (float(x),))) < 1e-12
                       for q in cls)
    for r in np.linspace(0.01, 0.59, 30):
        assert len(fiber(model, TubeSpacePoint("a", (), ConePoint((), float(r))))) == 2
    assert len(fiber(model, TubeSpacePoint("a", (), ConePoint((), 0.0)))) == 1
    assert _max_residual(rep, "unfold.chart-square") < 1e-12
    assert _max_residual(rep, "unfold.projection-single-valued") < 1e-12


@pytest.mark.criterion(3, "torus candidate: regular fibre 2, chart checks, hypersurface at t = 0")
def test_torus_candidate(fixtures, tmp_path):
    cfg = fixtures("torus_rp2")
    rep = verify_unfolding_axioms(cfg.candidates["torus"], samples=N)
    assert rep.passed, [c.name for c in rep.failures()]
    assert _max_residual(rep, "candidate.covering.fiber-cardinality") == 0
    for name in ("candidate.chart-square", "candidate.chart-injective", "candidate.chart-jacobian"):
        assert all(c.status == "pass" for c in rep.find(name)), name
    assert _max_residual(rep, "candidate.hypersurface.t-slice") < cfg.params.tol
    out = tmp_path / "r.json"
    assert run(["check-unfolding", "--config", "fixture:torus_rp2", "--candidate", "torus",
                "--format", "json", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["verdict"] == "pass"


@pytest.mark.criterion(4, "rotation cocycles lift with kind OddA3, square < 1e-9")
def test_rotation_cocycles(fixtures):
    spec = fixtures("rotation_tube").spaces["rotation"]
    morphisms = cocycle_morphisms(spec)
    assert len(morphisms) == 2
    for _, f in morphisms:
        kind = check_liftable(f, samples=N)
        assert kind is LiftKind.ODD_A3
        lm = lift_morphism(f, kind, samples=N)
        assert all(c.residual < 1e-9 for c in lm.square.checks)


def _one_sided_mismatch(fun, h=1e-3):
    """Right minus left first derivative at 0 from second-order one-sided stencils."""
    right = (-3 * fun(0.0) + 4 * fun(h) - fun(2 * h)) / (2 * h)
    left = (3 * fun(0.0) - 4 * fun(-h) + fun(-2 * h)) / (2 * h)
    return right - left


@pytest.mark.criterion(5, "a2 = l + r rejected with one-sided mismatch 2 +- 1e-3")
def test_bad_morphism(fixtures):
    cfg = fixtures("bad_morphism")
    psi = cfg.morphisms["bad"]
    rej = check_liftable(psi.pem(psi.pieces[0]), samples=N)
    assert isinstance(rej, Rejection)
    assert rej.component == "a2" and rej.order == 1 and rej.point["r"] == 0.0
    assert rej.residual == pytest.approx(2.0, abs=1e-3)
    l0 = rej.point["l"]
    oracle = _one_sided_mismatch(lambda t: l0 + abs(t))
    assert abs(rej.residual - oracle) < 1e-3
    assert run(["lift", "--config", "fixture:bad_morphism", "--morphism", "bad"]) == 1


def _rotation_family(rng):
    """Source and target rotation cocycles g, h and a chart map f with its partner."""
    box = Domain((Coord("u", -0.5, 0.5),))
    link = Domain((circle(),))
    c = rng.uniform(-1.0, 1.0, size=6)
    alpha = f"{c[0]:.17g}*sin(u) + {c[1]:.17g}"
    beta = f"{c[2]:.17g}*cos(u) + {c[3]:.17g}*u"
    gamma = f"{c[4]:.17g}*u^2 + {c[5]:.17g}"
    ins = ("u", "l")
    g = SmoothMapExpr.build(ins, ("l",), [f"l + {alpha}"])
    h = SmoothMapExpr.build(ins, ("l",), [f"l + {beta}"])
    f = PemMorphism.build(box, link, box, link, ["u"], [f"l + {gamma}"], ["r"])
    # rotations commute, so f' = h f g^-1 adds gamma + beta - alpha
    shift = rng.uniform(0.05, 0.5) if rng.random() < 0.5 else 0.0
    f2 = PemMorphism.build(box, link, box, link, ["u"], [f"l + {gamma} + {beta} - ({alpha}) + {shift:.17g}"], ["r"])
    return f, f2, g, h, shift > 0, Domain(box.coords + link.coords)


@pytest.mark.criterion(6, "three-equation and direct commutation verdicts agree on 10^3 fixtures")
def test_commutation_equivalence():
    rng = np.random.default_rng(2024)
    perturbed = 0
    for i in range(N):
        f, f2, g, h, bad, region = _rotation_family(rng)
        rep = check_cocycle_compat(f, f2, g, h, samples=24, seed=i, region=region)
        for which in ("grid", "random"):
            agree = rep.get(f"compat.equations-match-direct[{which}]")
            assert agree.status == "pass" and agree.residual < 1e-8, (i, agree)
        assert rep.get("compat.direct[grid]").status == ("fail" if bad else "pass"), i
        assert rep.get("compat.eq-link[grid]").status == ("fail" if bad else "pass"), i
        perturbed += bad
    assert 400 < perturbed < 600


@pytest.mark.criterion(7, "stretch lifts: projection square < 1e-9, Jacobian >= 0.5 including t = 0")
def test_stretch_lift(fixtures):
    cfg = fixtures("cone_stretch")
    lifted, rep = lift_tm_morphism(cfg.morphisms["stretch"], samples=N)
    assert rep.passed
    assert _max_residual(rep, "lift.projection-square") < 1e-9
    back, _ = lift_tm_morphism(cfg.morphisms["shrink"], lifted.target_model, lifted.source_model, samples=N)
    diff = verify_diffeomorphism(lifted, back, samples=N)
    for c in diff.find("diffeo.jacobian-forward"):
        assert c.residual >= 0.5
    # independent check on the t = 0 slice with central differences
    _, _, lm = lifted.pieces[0]
    y = np.column_stack([np.linspace(0, TWO_PI, 64, endpoint=False), np.zeros(64)])
    det = np.abs(np.linalg.det(fd_jacobian(lm, y, 1e-4)))
    assert det.min() >= 0.5


@pytest.mark.criterion(8, "uniqueness: exactly one bubble permutation, composite < 1e-8, < 30 s")
def test_uniqueness(fixtures):
    cfg = fixtures("rotation_tube")
    iota, inv = cfg.morphisms["iota"], cfg.morphisms["iota_inv"]
    start = time.perf_counter()
    rep = uniqueness_check(iota.source, iota.target, iota, inv, samples=N)
    elapsed = time.perf_counter() - start
    verdict = rep.get("uniqueness.matching-permutation")
    assert verdict.status == "pass" and verdict.residual == 1.0, verdict.detail
    assert _max_residual(rep, "-inverse[") < 1e-8
    assert elapsed < 30.0


@pytest.mark.criterion(9, "tube recovery: canonical collar exact, reparametrised collar within 1e-6")
def test_tube_recovery(fixtures):
    cfg = fixtures("rotation_tube")
    sid, canonical = cfg.collars["canonical"]
    model = build_primary_unfolding(cfg.spaces[sid], samples=N)
    rep = tube_from_unfolding(model, canonical, samples=N)
    assert rep.passed
    assert _max_residual(rep, "tube.projection") == 0.0
    assert _max_residual(rep, "tube.section") == 0.0
    _, quadratic = cfg.collars["quadratic"]
    rep = tube_from_unfolding(model, quadratic, samples=N)
    assert rep.passed
    assert _max_residual(rep, "tube.transition-form") < 1e-6


SUBCOMMANDS = [
    ("validate", "rotation_tube", []),
    ("unfold", "cone_s1", []),
    ("check-unfolding", "torus_rp2", ["--candidate", "torus"]),
    ("lift", "cone_stretch", ["--morphism", "stretch"]),
    ("lift", "bad_morphism", []),
    ("tube-from-unfolding", "rotation_tube", []),
    ("uniqueness", "rotation_tube", ["--morphism", "iota"]),
]


@pytest.mark.criterion(10, "identical runs give byte-identical json reports and CSV exports")
@pytest.mark.parametrize("command,fixture,extra", SUBCOMMANDS)
def test_determinism(command, fixture, extra, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"{i}.json"
        run([command, "--config", f"fixture:{fixture}", *extra, "--samples", "120", "--seed", "7",
             "--format", "json", "--out", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] and outs[0]


@pytest.mark.criterion(10, "identical runs give byte-identical json reports and CSV exports")
@pytest.mark.parametrize("fixture,space", [("cone_s1", "cone"), ("rotation_tube", "rotation"),
                                           ("interval_double", "interval")])
def test_export_determinism(fixture, space, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"{i}.csv"
        assert run(["export", "--config", f"fixture:{fixture}", "--space", space, "--samples", "300",
                    "--seed", "7", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] and len(outs[0].splitlines()) > 1
