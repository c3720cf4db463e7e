import math

import pytest

from tmunfold.cli import fixture_path
from tmunfold.config import load_config
from tmunfold.domain import Coord, Domain
from tmunfold.strata import Cocycle, SmoothMapExpr, SpaceSpec, TubeChart

TWO_PI = 2 * math.pi

_criteria: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _criteria.setdefault(m.args[0], (m.args[1], []))


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for key, value in report.user_properties:
        if key == "criterion":
            _criteria[value][1].append(report.outcome)


@pytest.fixture(autouse=True)
def _tag_criterion(request, record_property):
    m = request.node.get_closest_marker("criterion")
    if m is not None:
        record_property("criterion", m.args[0])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, outcomes = _criteria[n]
        ok = bool(outcomes) and all(o == "passed" for o in outcomes)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def fixtures():
    """Loaded bundled configurations by name."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = load_config(fixture_path(name))
        return cache[name]

    return get


def circle(name="l"):
    return Coord(name, 0.0, TWO_PI, TWO_PI)


def rotation_space(g="l + u", g_inv="l - u", name="rot"):
    """Circle stratum covered by two arcs, circle link, one cocycle a->b."""
    stratum = Domain((Coord("u", 0.0, TWO_PI, TWO_PI),))
    link = Domain((circle(),))
    a = stratum.coords[0].sub(-0.5, math.pi + 0.5)
    b = stratum.coords[0].sub(math.pi - 0.5, TWO_PI + 0.5)
    ov = (Domain((a.sub(math.pi - 0.5, math.pi + 0.5),)), Domain((a.sub(-0.5, 0.5),)))
    charts = {"a": TubeChart("a", Domain((a,)), {"b": ov}), "b": TubeChart("b", Domain((b,)), {})}
    ins = ("u", "l")
    coc = Cocycle("a", "b", SmoothMapExpr.build(ins, ("l",), [g]), SmoothMapExpr.build(ins, ("l",), [g_inv]))
    return SpaceSpec(name, stratum, link, charts, {("a", "b"): coc})


def cone_space(radius=1.0):
    return SpaceSpec("cone", Domain(()), Domain((circle(),)), {"a": TubeChart("a", Domain(()), {}, 0.0, radius)}, {},
                     radius=radius)
