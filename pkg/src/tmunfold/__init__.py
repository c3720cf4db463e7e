"""Unfoldings of Thom-Mather simple spaces, checked numerically.

Modules:

* ``exprlang``: closed-form expressions with finite differences;
* ``strata``: spaces given by tube charts, cocycles and regular charts;
* ``unfolder``: primary unfoldings and their axiom checks;
* ``lifting``: liftability, lifts of morphisms, uniqueness;
* ``config`` and ``cli``: TOML input and the command-line driver.
"""

from .config import Config, Params, load_config
from .exprlang import diff_fd, evaluate, parse_expr
from .lifting import (
    LiftKind,
    LiftedMap,
    PemMorphism,
    Rejection,
    TMMorphism,
    check_cocycle_compat,
    check_liftable,
    lift_morphism,
    lift_tm_morphism,
    uniqueness_check,
    verify_diffeomorphism,
)
from .report import Report, emit_report
from .strata import SmoothMapExpr, SpaceSpec, radium, stretch, validate_cocycles
from .unfolder import (
    CandidateUnfolding,
    Collar,
    UnfoldingModel,
    build_primary_unfolding,
    export_pointcloud,
    fiber,
    project,
    restrict,
    tube_from_unfolding,
    verify_unfolding_axioms,
)

__version__ = "0.1.0"
