import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TWO_PI, circle, cone_space, rotation_space
from tmunfold.domain import Coord, Domain
from tmunfold.errors import CollarError, EmptyRestriction, OutOfDomain, ValidationError
from tmunfold.exprlang import parse_expr
from tmunfold.strata import (
    ConePoint,
    RegularChart,
    RegularSpacePoint,
    SmoothMapExpr,
    SpaceSpec,
    TubeSpacePoint,
    validate_cocycles,
)
from tmunfold.unfolder import (
    CandidateUnfolding,
    Collar,
    RegularLift,
    TubeLift,
    build_primary_unfolding,
    canonical_chart_unfold,
    equivalent,
    export_pointcloud,
    fiber,
    project,
    restrict,
    separation,
    tau_tilde,
    tube_from_unfolding,
    verify_unfolding_axioms,
)


@pytest.fixture(scope="module")
def cone():
    return build_primary_unfolding(cone_space(), samples=100)


@pytest.fixture(scope="module")
def rot():
    return build_primary_unfolding(rotation_space(), samples=200)


@pytest.fixture(scope="module")
def interval(fixtures):
    return build_primary_unfolding(fixtures("interval_double").spaces["interval"], samples=100)


def test_chart_unfolding_examples():
    u, c = canonical_chart_unfold((0.3,), (1.0,), -2.0)
    assert u == (0.3,) and c == ConePoint((1.0,), 2.0)
    assert canonical_chart_unfold((0.3,), (1.0,), 0.0)[1].is_vertex


@given(st.floats(-5, 5), st.floats(0, 6), st.floats(-3, 3))
def test_chart_unfolding_is_even_in_t(u, l, t):
    assert canonical_chart_unfold((u,), (l,), t) == canonical_chart_unfold((u,), (l,), -t)


def test_projection_examples(cone, rot):
    assert project(cone, TubeLift("a", (), (1.0,), -0.5)) == TubeSpacePoint("a", (), ConePoint((1.0,), 0.5))
    p = project(rot, TubeLift("a", (0.2,), (1.0,), -0.5))
    assert p == TubeSpacePoint("a", (0.2,), ConePoint((1.0,), 0.5))
    with pytest.raises(OutOfDomain):
        project(cone, TubeLift("a", (), (1.0,), 3.0))
    with pytest.raises(OutOfDomain):
        project(cone, TubeLift("zz", (), (1.0,), 0.5))


def test_regular_projection_forgets_the_bubble(interval):
    assert project(interval, RegularLift(-1, "x", (0.8,))) == RegularSpacePoint("x", (0.8,))


def test_equivalent_points_project_together(rot):
    spec = rot.spec
    box = Domain(spec.overlap_boxes("a", "b")[1].coords + spec.link.coords + (Coord("t", -1, 1),))
    for u, l, t in box.random(200, 11):
        p = TubeLift("a", (u,), (l,), t)
        L, _ = spec.transport("a", "b", [[u]], [[l]])
        q = TubeLift("b", (u,), (L[0, 0],), t)
        assert equivalent(rot, p, q)
        assert spec.distance(project(rot, p), project(rot, q)) < 1e-9


def test_equivalence_examples(rot):
    p = TubeLift("a", (math.pi,), (0.5,), 0.4)
    assert equivalent(rot, p, p)
    assert equivalent(rot, p, TubeLift("b", (math.pi,), (0.5 + math.pi,), 0.4))
    assert not equivalent(rot, p, TubeLift("a", (math.pi,), (0.5,), -0.4))
    assert not equivalent(rot, p, TubeLift("b", (math.pi,), (0.5,), 0.4))


@given(st.floats(-0.5, 0.5), st.floats(0, TWO_PI), st.floats(1e-6, 1.0), st.sampled_from(["a", "b"]))
@settings(max_examples=200, deadline=None)
def test_equivalence_never_crosses_bubbles(u, l, t, chart):
    rot = build_primary_unfolding(rotation_space(), samples=20)
    if chart == "b":
        u += TWO_PI
    p = TubeLift(chart, (u,), (l,), t)
    for q in (TubeLift("a", (u,), (l,), -t), TubeLift("b", (u,), (l + u,), -t)):
        assert not equivalent(rot, p, q)


def test_tau_tilde_is_the_base_coordinate(rot, interval):
    assert tau_tilde(rot, TubeLift("b", (4.0,), (1.0,), -0.2)) == (4.0,)
    assert tau_tilde(interval, RegularLift(1, "x", (0.5,))) == ()


def test_cone_fibres(cone):
    classes = fiber(cone, TubeSpacePoint("a", (), ConePoint((1.0,), 0.4)))
    assert len(classes) == 2
    assert sorted(c[0].t for c in classes) == [-0.4, 0.4]
    vertex = fiber(cone, TubeSpacePoint("a", (), ConePoint((0.0,), 0.0)), samples=8)
    assert len(vertex) == 8
    for cls in vertex:
        assert cls[0].t == 0.0 and project(cone, cls[0]).cone.is_vertex
    assert len({cls[0].l for cls in vertex}) == 8


def test_interval_double_fibres(interval):
    inner = fiber(interval, RegularSpacePoint("x", (0.5,)))
    assert len(inner) == 2
    assert {len(c) for c in inner} == {2}  # regular and tube representative
    assert len(fiber(interval, RegularSpacePoint("x", (0.9,)))) == 2
    assert len(fiber(interval, TubeSpacePoint("a", (), ConePoint((), 0.0)))) == 1


def test_singular_fibre_in_two_charts(rot):
    classes = fiber(rot, TubeSpacePoint("a", (math.pi,), ConePoint((0.0,), 0.0)), samples=6)
    assert len(classes) == 6
    for cls in classes:
        assert {q.chart for q in cls} == {"a", "b"}
        assert all(equivalent(rot, cls[0], q) for q in cls)
    for i, ci in enumerate(classes):
        for cj in classes[i + 1:]:
            assert not equivalent(rot, ci[0], cj[0])


def test_pure_manifold_unfolds_to_two_copies():
    spec = SpaceSpec("m", None, Domain(()), {}, {}, {"v": RegularChart("v", Domain((Coord("x", 0, 1), circle("y"))))})
    model = build_primary_unfolding(spec, samples=50)
    classes = fiber(model, RegularSpacePoint("v", (0.3, 1.0)))
    assert [c[0].bubble for c in classes] == [1, -1]
    assert all(project(model, c[0]) == RegularSpacePoint("v", (0.3, 1.0)) for c in classes)
    assert verify_unfolding_axioms(model, samples=50).passed


def test_invalid_cocycles_block_construction():
    with pytest.raises(ValidationError):
        build_primary_unfolding(rotation_space(g_inv="l + u"), samples=50)


def test_cone_axioms(cone):
    rep = verify_unfolding_axioms(cone, samples=300)
    assert rep.passed
    assert rep.get("unfold.chart-square[grid]").residual < 1e-9
    assert rep.get("unfold.properness[grid]").status == "proxy"


def test_two_chart_axioms(rot):
    rep = verify_unfolding_axioms(rot, samples=200)
    assert rep.passed
    assert rep.get("unfold.projection-single-valued[random]").residual < 1e-9


def _candidate(map_r, sheets=2):
    spec = cone_space()
    src = Domain((circle("s"), Coord("w", -1.0, 1.0)))
    lmap = SmoothMapExpr.build(("s", "w"), ("l", "r"), ["s", map_r])
    return CandidateUnfolding("c", src, spec, "a", lmap, parse_expr("w"), sheets)


def test_canonical_candidate_passes():
    assert verify_unfolding_axioms(_candidate("abs(w)"), samples=200).passed


def test_squared_candidate_fails_on_the_singular_slice():
    rep = verify_unfolding_axioms(_candidate("w^2"), samples=200)
    assert not rep.passed
    jac = rep.get("candidate.chart-jacobian[grid]")
    assert jac.status == "fail" and abs(jac.witness["w"]) < 1e-6 and jac.witness["det"] < 1e-2


def test_wrong_sheet_count_is_reported():
    rep = verify_unfolding_axioms(_candidate("abs(w)", sheets=3), samples=100)
    assert rep.get("candidate.covering.fiber-cardinality[grid]").status == "fail"


def test_restrict_to_everything_keeps_the_model(cone):
    same = restrict(cone, {"a": Domain((Coord("r", 0, 1),))})
    assert same.spec.charts["a"] == cone.spec.charts["a"]


def test_restrict_to_half_tube(cone):
    half = restrict(cone, {"a": Domain((Coord("r", 0, 0.5),))})
    rep = verify_unfolding_axioms(half, samples=200)
    assert rep.passed and rep.get("unfold.chart-square[grid]").residual < 1e-9
    x = TubeSpacePoint("a", (), ConePoint((2.0,), 0.3))
    assert fiber(half, x) == fiber(cone, x)
    with pytest.raises(OutOfDomain):
        fiber(half, TubeSpacePoint("a", (), ConePoint((2.0,), 0.8)))


def test_restrict_off_the_stratum(interval):
    reg = restrict(interval, {"x": Domain((Coord("x", 0.7, 1.0),))})
    assert not reg.spec.charts
    rep = verify_unfolding_axioms(reg, samples=100)
    assert rep.passed
    assert rep.get("unfold.covering.fiber-cardinality[grid]").residual == 0
    with pytest.raises(EmptyRestriction):
        restrict(interval, {"zz": Domain(())})


def test_separation_is_infinite_between_regular_sheets(interval):
    assert separation(interval, RegularLift(1, "x", (0.9,)), RegularLift(-1, "x", (0.9,))) == math.inf


def _collar(spec, t_expr, l_expr="l"):
    return Collar("g", SmoothMapExpr.build(spec.tube_names("r"), spec.tube_names("t"), ["u", l_expr, t_expr]))


def test_canonical_collar_recovers_the_tube(rot):
    rep = tube_from_unfolding(rot, _collar(rot.spec, "r"), samples=200)
    assert rep.passed
    assert rep.get("tube.projection[grid]").residual == 0.0
    assert rep.get("tube.section[random]").residual == 0.0


def test_reparametrised_collar(rot):
    rep = tube_from_unfolding(rot, _collar(rot.spec, "r + r^2"), samples=200)
    assert rep.passed
    assert rep.get("tube.transition-form[grid]").residual < 1e-6


def test_collar_that_moves_the_boundary(rot):
    with pytest.raises(CollarError):
        tube_from_unfolding(rot, _collar(rot.spec, "r", "l + 0.1"), samples=50)


def test_collar_with_link_twist_fails_the_chart_form(rot):
    rep = tube_from_unfolding(rot, _collar(rot.spec, "r", "l + r"), samples=100)
    assert rep.get("tube.chart-form.link-radium-free[grid]").status == "fail"


def test_export_columns_and_determinism(cone, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert export_pointcloud(cone, 100, a, seed=7) == 100
    export_pointcloud(cone, 100, b, seed=7)
    data = a.read_bytes()
    assert data == b.read_bytes()
    assert b"\r" not in data
    lines = data.decode().splitlines()
    assert lines[0] == "chart,bubble,l,t,X_l,X_r"
    assert len(lines) == 101
    row = lines[1].split(",")
    # the projection keeps l and takes |t|
    assert float(row[4]) == float(row[2]) and float(row[5]) == abs(float(row[3]))
    assert int(row[1]) == (1 if float(row[3]) > 0 else -1)


def test_export_with_zero_samples(cone):
    buf = io.StringIO()
    assert export_pointcloud(cone, 0, buf) == 0
    assert buf.getvalue() == "chart,bubble,l,t,X_l,X_r\n"


def test_export_uses_round_trip_precision(cone):
    buf = io.StringIO()
    export_pointcloud(cone, 5, buf, seed=1)
    for line in buf.getvalue().splitlines()[1:]:
        for field in line.split(",")[2:]:
            assert repr(float(field)) == repr(float(np.float64(field)))
