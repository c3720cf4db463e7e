"""Rectangular parameter boxes with optional periodic coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .errors import ConfigError


@dataclass(frozen=True)
class Coord:
    """One coordinate ``name`` ranging over ``[lo, hi]``.

    If ``period`` is set the coordinate is an angle taken modulo
    ``period``; ``hi - lo`` may then be shorter than the period (an arc).
    """

    name: str
    lo: float
    hi: float
    period: float | None = None

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"coordinate {self.name!r}: lower bound {self.lo} must be below upper {self.hi}")
        if self.period is not None and self.hi - self.lo > self.period * (1 + 1e-12):
            raise ConfigError(f"coordinate {self.name!r}: arc longer than its period")

    @property
    def periodic(self) -> bool:
        return self.period is not None

    @property
    def full_circle(self) -> bool:
        return self.period is not None and math.isclose(self.hi - self.lo, self.period)

    def reduce(self, x):
        """Representative of ``x`` in ``[lo, lo + period)``; identity if not periodic."""
        if self.period is None:
            return x
        return self.lo + np.mod(np.asarray(x, dtype=float) - self.lo, self.period)

    def contains(self, x, eps=1e-12):
        x = np.asarray(x, dtype=float)
        if self.period is None:
            return (x >= self.lo - eps) & (x <= self.hi + eps)
        off = np.mod(x - self.lo + eps, self.period)
        return off <= self.hi - self.lo + 2 * eps

    def distance(self, a, b):
        d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
        if self.period is None:
            return d
        d = np.mod(d, self.period)
        return np.minimum(d, self.period - d)

    def sub(self, lo, hi) -> "Coord":
        return Coord(self.name, lo, hi, self.period)


@dataclass(frozen=True)
class Domain:
    coords: tuple[Coord, ...] = ()

    def __post_init__(self):
        names = [c.name for c in self.coords]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate coordinate names in {names}")

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.coords)

    def coord(self, name) -> Coord:
        for c in self.coords:
            if c.name == name:
                return c
        raise KeyError(name)

    def reduce(self, pts: np.ndarray) -> np.ndarray:
        pts = np.array(pts, dtype=float, ndmin=2)
        for j, c in enumerate(self.coords):
            pts[:, j] = c.reduce(pts[:, j])
        return pts

    def contains(self, pts, eps=1e-12) -> np.ndarray:
        pts = np.array(pts, dtype=float, ndmin=2)
        ok = np.ones(len(pts), dtype=bool)
        for j, c in enumerate(self.coords):
            ok &= c.contains(pts[:, j], eps)
        return ok

    def distance(self, a, b) -> np.ndarray:
        """Max-norm distance, circular on periodic coordinates."""
        a = np.array(a, dtype=float, ndmin=2)
        b = np.array(b, dtype=float, ndmin=2)
        n = max(len(a), len(b))
        out = np.zeros(n)
        for j, c in enumerate(self.coords):
            out = np.maximum(out, c.distance(a[:, j], b[:, j]))
        return out

    def grid(self, n_total: int) -> np.ndarray:
        """Tensor grid with about ``n_total`` points; periodic axes omit the endpoint."""
        if self.dim == 0:
            return np.zeros((1, 0))
        k = max(2, math.ceil(n_total ** (1.0 / self.dim)))
        axes = []
        for c in self.coords:
            if c.full_circle:
                axes.append(np.linspace(c.lo, c.hi, k, endpoint=False))
            else:
                axes.append(np.linspace(c.lo, c.hi, k))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def random(self, n: int, seed: int) -> np.ndarray:
        """``n`` scrambled Halton points in the box (deterministic in ``seed``)."""
        if self.dim == 0:
            return np.zeros((min(n, 1), 0))
        if n <= 0:
            return np.zeros((0, self.dim))
        unit = qmc.Halton(d=self.dim, scramble=True, seed=seed).random(n)
        lo = np.array([c.lo for c in self.coords])
        hi = np.array([c.hi for c in self.coords])
        return lo + unit * (hi - lo)

    def intersect(self, other: "Domain") -> "Domain | None":
        """Coordinate-wise intersection; ``other`` may restrict a subset of names."""
        out = []
        for c in self.coords:
            try:
                o = other.coord(c.name)
            except KeyError:
                out.append(c)
                continue
            lo, hi = o.lo, o.hi
            if c.periodic:
                if c.full_circle:
                    # an arc of a full circle is its own intersection
                    lo, hi = o.lo, min(o.hi, o.lo + c.period)
                else:
                    # pick the lift of the restricting arc that overlaps this one most
                    best = None
                    for k in range(-2, 3):
                        a, b = max(c.lo, lo + k * c.period), min(c.hi, hi + k * c.period)
                        if best is None or b - a > best[1] - best[0]:
                            best = (a, b)
                    lo, hi = best
            else:
                lo, hi = max(c.lo, lo), min(c.hi, hi)
            if not lo < hi:
                return None
            out.append(c.sub(lo, hi))
        return Domain(tuple(out))


def stack_env(names, pts) -> dict:
    """Bind coordinate columns of ``pts`` to ``names``."""
    pts = np.asarray(pts, dtype=float)
    return {n: pts[:, j] for j, n in enumerate(names)}
