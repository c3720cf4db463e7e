"""Command-line driver: ``tmunfold <command> --config FILE [flags]``.

Exit codes: 0 when every check passes (proxy checks pass with a warning),
1 when a verification fails, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from .config import Config, Params, load_config
from .errors import (
    CollarError,
    ConfigError,
    ExprError,
    InconsistentLift,
    NotLiftable,
    OutOfDomain,
    ValidationError,
)
from .lifting import (
    IDENTITY,
    Rejection,
    check_liftable,
    cocycle_morphisms,
    lift_morphism,
    lift_tm_morphism,
    uniqueness_check,
    verify_diffeomorphism,
)
from .report import PROXY, Report, emit_report
from .strata import validate_cocycles
from .unfolder import build_primary_unfolding, export_pointcloud, tube_from_unfolding, verify_unfolding_axioms

log = logging.getLogger("tmunfold")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
COMMANDS = ("validate", "unfold", "check-unfolding", "lift", "tube-from-unfolding", "uniqueness", "export")


def fixture_path(name: str) -> Path:
    """Path of a bundled example configuration (``cone_s1``, ``rotation_tube``, ...)."""
    return Path(str(resources.files("tmunfold") / "fixtures" / f"{name}.toml"))


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="configuration file (TOML), or fixture:<name>")
    common.add_argument("--samples", type=int, help="sample count per set")
    common.add_argument("--tol", type=float, help="tolerance for algebraic identities")
    common.add_argument("--smooth-tol", type=float, help="tolerance for finite-difference smoothness tests")
    common.add_argument("--fd-step", type=float, help="finite-difference step")
    common.add_argument("--seed", type=int, help="seed of the quasi-random samples")
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tmunfold", description="Verify unfoldings of stratified spaces.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check cocycles and regular transitions") \
        .add_argument("--space", action="append")
    sub.add_parser("unfold", parents=[common], help="build the primary unfolding and check its axioms") \
        .add_argument("--space", action="append")
    sub.add_parser("check-unfolding", parents=[common], help="check a candidate unfolding") \
        .add_argument("--candidate", action="append")
    lp = sub.add_parser("lift", parents=[common], help="decide liftability and lift morphisms")
    lp.add_argument("--morphism", action="append")
    lp.add_argument("--cocycles", action="store_true", help="lift the morphisms induced by the cocycles")
    sub.add_parser("tube-from-unfolding", parents=[common], help="rebuild the tube from a collar") \
        .add_argument("--collar", action="append")
    sub.add_parser("uniqueness", parents=[common], help="compare the unfoldings of two presentations") \
        .add_argument("--morphism", action="append")
    sub.add_parser("export", parents=[common], help="write a CSV point cloud of the unfolding") \
        .add_argument("--space")
    return p


def _params(cfg: Config, args) -> Params:
    over = {k: v for k, v in (("samples", args.samples), ("tol", args.tol), ("smooth_tol", args.smooth_tol),
                              ("fd_step", args.fd_step), ("seed", args.seed)) if v is not None}
    return replace(cfg.params, **over)


def _select(table: dict, wanted, kind: str) -> list:
    if not wanted:
        return sorted(table)
    missing = [w for w in wanted if w not in table]
    if missing:
        raise ConfigError(f"unknown {kind} {missing[0]!r}")
    return list(wanted)


def _prefix(ids, i):
    return f"{i}." if len(ids) > 1 else ""


# --------------------------------------------------------------------------
# commands

def cmd_validate(cfg, prm, args) -> Report:
    rep = Report()
    ids = _select(cfg.spaces, args.space, "space")
    for sid in ids:
        rep.extend(validate_cocycles(cfg.spaces[sid], prm.samples, prm.tol, prm.seed, prm.fd_step), _prefix(ids, sid))
    return rep


def cmd_unfold(cfg, prm, args) -> Report:
    rep = Report()
    ids = _select(cfg.spaces, args.space, "space")
    for sid in ids:
        pre = _prefix(ids, sid)
        val = validate_cocycles(cfg.spaces[sid], prm.samples, prm.tol, prm.seed, prm.fd_step)
        rep.extend(val, pre)
        try:
            model = build_primary_unfolding(cfg.spaces[sid], val)
        except ValidationError as exc:
            rep.add(f"{pre}unfold.build", "unfolding.construction", False, detail=str(exc))
            continue
        rep.extend(verify_unfolding_axioms(model, prm.samples, prm.tol, prm.seed, prm.fd_step), pre)
    return rep


def cmd_check_unfolding(cfg, prm, args) -> Report:
    rep = Report()
    ids = _select(cfg.candidates, args.candidate, "candidate")
    for cid in ids:
        rep.extend(verify_unfolding_axioms(cfg.candidates[cid], prm.samples, prm.tol, prm.seed, prm.fd_step),
                   _prefix(ids, cid))
    return rep


def _rejection_check(rep, name, rej: Rejection):
    rep.add(name, "lifting.parity-rule", False, rej.residual, rej.point, detail=str(rej))


def cmd_lift(cfg, prm, args) -> Report:
    rep = Report()
    if args.cocycles:
        for sid in sorted(cfg.spaces):
            for label, f in cocycle_morphisms(cfg.spaces[sid]):
                name = f"{sid}.cocycle[{label}]"
                kind = check_liftable(f, prm.samples, prm.smooth_tol, prm.fd_step, prm.seed)
                if isinstance(kind, Rejection):
                    _rejection_check(rep, f"lift.parity[{name}]", kind)
                    continue
                rep.add(f"lift.parity[{name}]", "lifting.parity-rule", True, 0.0, detail=f"kind {kind}")
                lm = lift_morphism(f, kind, IDENTITY, prm.samples, prm.tol, prm.seed)
                rep.extend(lm.square, f"{name}.")
    ids = _select(cfg.morphisms, args.morphism, "morphism") if (args.morphism or not args.cocycles) else []
    for mid in ids:
        psi = cfg.morphisms[mid]
        # report every parity verdict, not only the first failure
        rejected = False
        for piece in psi.pieces:
            kind = check_liftable(psi.pem(piece), prm.samples, prm.smooth_tol, prm.fd_step, prm.seed)
            if isinstance(kind, Rejection):
                _rejection_check(rep, f"lift.parity[{piece.name}]", kind)
                rejected = True
        if rejected:
            continue
        try:
            lifted, lrep = lift_tm_morphism(psi, sigma=IDENTITY, samples=prm.samples, tol=prm.tol,
                                            smooth_tol=prm.smooth_tol, fd_step=prm.fd_step, seed=prm.seed)
        except (NotLiftable, InconsistentLift, ValidationError) as exc:
            rep.add(f"lift.{mid}", "lifting.global-lift", False, detail=str(exc))
            continue
        rep.extend(lrep, f"{mid}.")
        inv = cfg.inverses.get(mid)
        if inv is not None:
            try:
                back, brep = lift_tm_morphism(cfg.morphisms[inv], lifted.target_model, lifted.source_model,
                                              IDENTITY, prm.samples, prm.tol, prm.smooth_tol, prm.fd_step, prm.seed)
            except (NotLiftable, InconsistentLift) as exc:
                rep.add(f"lift.{inv}", "lifting.global-lift", False, detail=str(exc))
                continue
            rep.extend(verify_diffeomorphism(lifted, back, prm.samples, prm.tol, prm.fd_step, prm.seed),
                       f"{mid}.")
    return rep


def cmd_tube(cfg, prm, args) -> Report:
    rep = Report()
    ids = _select(cfg.collars, args.collar, "collar")
    for cid in ids:
        sid, collar = cfg.collars[cid]
        pre = _prefix(ids, cid)
        try:
            model = build_primary_unfolding(cfg.spaces[sid], samples=prm.samples, tol=prm.tol, seed=prm.seed)
            rep.extend(tube_from_unfolding(model, collar, prm.samples, prm.tol, prm.seed), pre)
        except (CollarError, ValidationError) as exc:
            rep.add(f"{pre}tube.collar-boundary", "tube.from-collar", False, detail=str(exc))
    return rep


def cmd_uniqueness(cfg, prm, args) -> Report:
    rep = Report()
    ids = _select(cfg.inverses, args.morphism, "morphism with an inverse")
    if not args.morphism:
        # each pair once
        ids = [m for m in ids if m < cfg.inverses[m] or cfg.inverses[m] not in cfg.inverses]
    for mid in ids:
        iota, inv = cfg.morphisms[mid], cfg.morphisms[cfg.inverses[mid]]
        try:
            rep.extend(uniqueness_check(iota.source, iota.target, iota, inv, prm.samples, prm.tol,
                                        prm.fd_step, prm.seed, prm.smooth_tol), _prefix(ids, mid))
        except (NotLiftable, InconsistentLift, ValidationError) as exc:
            rep.add(f"{_prefix(ids, mid)}uniqueness.lift", "unfolding.uniqueness", False, detail=str(exc))
    return rep


HANDLERS = {
    "validate": cmd_validate,
    "unfold": cmd_unfold,
    "check-unfolding": cmd_check_unfolding,
    "lift": cmd_lift,
    "tube-from-unfolding": cmd_tube,
    "uniqueness": cmd_uniqueness,
}


def _export(cfg, prm, args) -> int:
    sid = args.space or (sorted(cfg.spaces)[0] if len(cfg.spaces) == 1 else None)
    if sid is None:
        raise ConfigError("--space is required when the configuration declares several spaces")
    if sid not in cfg.spaces:
        raise ConfigError(f"unknown space {sid!r}")
    model = build_primary_unfolding(cfg.spaces[sid], samples=prm.samples, tol=prm.tol, seed=prm.seed)
    n = export_pointcloud(model, prm.samples, args.out if args.out else sys.stdout, prm.seed)
    log.info("wrote %d rows", n)
    return EXIT_OK


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        src = args.config
        path = fixture_path(src.split(":", 1)[1]) if src.startswith("fixture:") else Path(src)
        cfg = load_config(path)
        prm = _params(cfg, args)
        if args.command == "export":
            return _export(cfg, prm, args)
        report = HANDLERS[args.command](cfg, prm, args)
    except (ConfigError, ExprError, OutOfDomain) as exc:
        print(f"tmunfold: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"tmunfold: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    emit_report(report, args.format, args.out)
    proxies = [c.name for c in report.checks if c.status == PROXY]
    if proxies:
        log.warning("%d check(s) are proxies, not proofs: %s", len(proxies), ", ".join(sorted(proxies)))
    return EXIT_OK if report.passed else EXIT_FAIL


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
