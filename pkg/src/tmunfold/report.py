"""Verification reports: one entry per check plus an aggregate verdict."""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field

PASS, FAIL, PROXY = "pass", "fail", "proxy"


@dataclass
class Check:
    name: str
    anchor: str
    status: str
    residual: float | None = None
    witness: dict | None = None
    detail: str = ""

    def as_dict(self):
        return {
            "name": self.name,
            "anchor": self.anchor,
            "status": self.status,
            "residual": _num(self.residual),
            "witness": None if self.witness is None else {k: _num(v) for k, v in self.witness.items()},
            "detail": self.detail,
        }


def _num(x):
    if x is None or isinstance(x, str):
        return x
    x = float(x)
    if math.isfinite(x):
        return x
    return "inf" if x > 0 else ("-inf" if x < 0 else "nan")


@dataclass
class Report:
    checks: list[Check] = field(default_factory=list)

    def add(self, name, anchor, ok, residual=None, witness=None, detail="", proxy=False):
        if proxy and ok:
            status = PROXY
        else:
            status = PASS if ok else FAIL
        self.checks.append(Check(name, anchor, status, residual, witness, detail))
        return self.checks[-1]

    def extend(self, other: "Report", prefix: str = ""):
        for c in other.checks:
            self.checks.append(Check(prefix + c.name, c.anchor, c.status, c.residual, c.witness, c.detail))
        return self

    @property
    def passed(self) -> bool:
        return all(c.status != FAIL for c in self.checks)

    @property
    def verdict(self) -> str:
        return PASS if self.passed else FAIL

    def get(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def find(self, fragment) -> list[Check]:
        return [c for c in self.checks if fragment in c.name]

    def failures(self) -> list[Check]:
        return [c for c in self.checks if c.status == FAIL]

    def sorted_checks(self) -> list[Check]:
        return sorted(self.checks, key=lambda c: c.name)

    def to_json(self) -> str:
        doc = {"checks": [c.as_dict() for c in self.sorted_checks()], "verdict": self.verdict}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = []
        for c in self.sorted_checks():
            res = "" if c.residual is None else f" residual={_num(c.residual)!s}"
            line = f"[{c.status.upper():5}] {c.name} ({c.anchor}){res}"
            if c.status == FAIL and c.witness:
                wit = ", ".join(f"{k}={_num(v)}" for k, v in c.witness.items())
                line += f" witness: {wit}"
            if c.detail:
                line += f" -- {c.detail}"
            lines.append(line)
        lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines) + "\n"


def emit_report(report: Report, fmt: str = "text", path=None):
    """Write ``report`` as text or json to ``path`` (stdout when None)."""
    if fmt == "json":
        out = report.to_json()
    elif fmt == "text":
        out = report.to_text()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is None:
        sys.stdout.write(out)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(out)
    return out
