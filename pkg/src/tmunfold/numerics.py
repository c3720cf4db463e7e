"""Vectorised Jacobians and Newton solves used by the verification sweeps."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .domain import Domain

VecFn = Callable[[np.ndarray], np.ndarray]


def fd_jacobian(fn: VecFn, pts: np.ndarray, h: float, one_sided: np.ndarray | None = None) -> np.ndarray:
    """Central-difference Jacobian of ``fn`` at each row of ``pts``.

    ``one_sided`` is an optional ``(n, d)`` boolean mask; where set, a
    forward three-point stencil replaces the central one on that axis.
    Returns an ``(n, m, d)`` array.
    """
    pts = np.asarray(pts, dtype=float)
    n, d = pts.shape
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        fp, fm = fn(pts + e), fn(pts - e)
        col = (fp - fm) / (2 * h)
        if one_sided is not None and np.any(one_sided[:, j]):
            f0, f2 = fn(pts), fn(pts + 2 * e)
            fwd = (-3 * f0 + 4 * fp - f2) / (2 * h)
            col = np.where(one_sided[:, j][:, None], fwd, col)
        cols.append(col)
    return np.stack(cols, axis=2)


def wrap_residual(res: np.ndarray, periods) -> np.ndarray:
    """Map residual components on periodic outputs into ``[-p/2, p/2)``."""
    res = np.array(res, dtype=float)
    for j, p in enumerate(periods):
        if p is not None:
            res[:, j] = np.mod(res[:, j] + p / 2, p) - p / 2
    return res


def newton_solve(fn: VecFn, targets: np.ndarray, seeds: np.ndarray, domain: Domain,
                 out_periods, iters: int = 60, tol: float = 1e-11, h: float = 1e-7):
    """Solve ``fn(z) = target`` from every seed for every target.

    Returns ``(roots, ok, owner)`` where ``owner[k]`` is the target index of
    row ``k``. Rows whose iterate leaves a non-periodic coordinate range or
    that fail to converge are marked not ok.
    """
    targets = np.asarray(targets, dtype=float)
    seeds = np.asarray(seeds, dtype=float)
    m, s = len(targets), len(seeds)
    z = np.tile(seeds, (m, 1))
    owner = np.repeat(np.arange(m), s)
    y = targets[owner]
    alive = np.ones(len(z), dtype=bool)
    for _ in range(iters):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        zi = z[idx]
        r = wrap_residual(fn(zi) - y[idx], out_periods)
        if np.max(np.abs(r)) < tol:
            break
        jac = fd_jacobian(fn, zi, h)
        step = np.einsum("nij,nj->ni", np.linalg.pinv(jac, rcond=1e-12), r)
        zi = domain.reduce(zi - step)
        z[idx] = zi
        alive[idx] = domain.contains(zi, eps=1e-9)
    res = np.full(len(z), np.inf)
    good = np.flatnonzero(alive)
    if good.size:
        r = wrap_residual(fn(z[good]) - y[good], out_periods)
        res[good] = np.max(np.abs(r), axis=1) if r.shape[1] else 0.0
    ok = alive & (res < max(tol * 100, 1e-9))
    return z, ok, owner


def count_distinct(domain: Domain, roots: np.ndarray, ok: np.ndarray, owner: np.ndarray,
                   m: int, sep: float = 1e-6):
    """Distinct roots per target (greedy clustering at distance ``sep``)."""
    reps: list[list[np.ndarray]] = [[] for _ in range(m)]
    for k in np.flatnonzero(ok):
        i = owner[k]
        z = roots[k]
        if not any(domain.distance(z, q)[0] < sep for q in reps[i]):
            reps[i].append(z)
    return reps


def level_project(fn: Callable[[np.ndarray], np.ndarray], pts: np.ndarray, domain: Domain,
                  iters: int = 200, tol: float = 1e-12, h: float = 1e-7) -> np.ndarray:
    """Minimal-norm Newton projection of ``pts`` onto the zero set of scalar ``fn``."""
    z = np.array(pts, dtype=float)
    for _ in range(iters):
        v = fn(z)
        if np.max(np.abs(v)) < tol:
            break
        g = fd_jacobian(lambda q: fn(q)[:, None], z, h)[:, 0, :]
        nrm = np.sum(g * g, axis=1)
        safe = nrm > 1e-300
        step = np.zeros_like(z)
        step[safe] = (v[safe] / nrm[safe])[:, None] * g[safe]
        z = domain.reduce(z - step)
    return z


def newton_paired(fn: VecFn, targets: np.ndarray, seeds: np.ndarray, domain: Domain,
                  out_periods, iters: int = 60, tol: float = 1e-12, h: float = 1e-7):
    """Row-wise Newton solve of ``fn(z_k) = target_k`` from ``seeds[k]``.

    Returns ``(z, residual)`` with the max-norm residual per row.
    """
    y = np.asarray(targets, dtype=float)
    z = np.array(seeds, dtype=float)
    for _ in range(iters):
        r = wrap_residual(fn(z) - y, out_periods)
        if r.size == 0 or np.max(np.abs(r)) < tol:
            break
        jac = fd_jacobian(fn, z, h)
        step = np.einsum("nij,nj->ni", np.linalg.pinv(jac, rcond=1e-12), r)
        z = domain.reduce(z - step)
    r = wrap_residual(fn(z) - y, out_periods)
    res = np.max(np.abs(r), axis=1) if r.shape[1] else np.zeros(len(z))
    return z, res
