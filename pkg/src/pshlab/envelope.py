"""Largest discrete subsolution below an obstacle.

The operator is the obstacle-problem fixed point u = min(f, S u) where S is
the stencil mean from the subharmonicity module ("subharmonic": weighted
nearest-neighbour ring; "psh": minimum over complex-line averages).  Unknowns
are the inside nodes whose full stencil is readable; every other node is
pinned to the obstacle, so the band acts as Dirichlet data.

Two solvers:

- "policy": active-set (Howard) iteration.  Each round freezes the contact
  set (and, for "psh", one line per free node), solves the resulting linear
  M-matrix system with a sparse LU, and re-derives the sets.  Converges in a
  handful of rounds and is the default for the ring stencil.
- "jacobi": damped-free fixed-point sweeps u <- min(f, S u).  Slow on fine
  grids but simple and monotone; default for the directional stencil where
  the policy space is larger.

Every iterate of either solver dominates every exact discrete subsolution
below f, so the converged output is the discrete envelope up to the solver
tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import INSIDE, OUTSIDE, ScalarField
from .subharmonic import psh_line_offsets, stencil_average, stencil_testable


@dataclass
class EnvelopeProblem:
    obstacle: ScalarField
    mode: str = "subharmonic"
    tolerance: float = 1e-8
    max_iterations: int = 0  # 0 means pick per method
    method: str = "auto"

    def __post_init__(self):
        if self.mode not in ("subharmonic", "psh"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "psh" and self.obstacle.spec.rank not in (2, 4):
            raise ValueError("psh mode needs rank 2 or 4")
        ins = self.obstacle.inside()
        if not ins.any():
            raise ValueError("empty mask")
        if not np.isfinite(self.obstacle.values[ins]).all():
            raise ValueError("obstacle must be finite on the mask")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")

    def unknown(self) -> np.ndarray:
        """Nodes solved for; the rest of the mask is pinned to the obstacle."""
        return stencil_testable(self.obstacle, self.mode)


@dataclass
class EnvelopeSolution:
    field: ScalarField
    residual: float
    iterations: int
    converged: bool
    method: str
    contact: np.ndarray = dc_field(repr=False, default=None)


def _stencils(problem: EnvelopeProblem):
    """List of (offsets, weights) stencils; S u = min over stencils."""
    spec = problem.obstacle.spec
    if problem.mode == "subharmonic" or spec.rank == 2:
        w = np.array([1.0 / h ** 2 for h in spec.spacing])
        w = w / w.sum()
        offs, wts = [], []
        for ax in range(spec.rank):
            o = [0] * spec.rank
            o[ax] = 1
            offs.append(tuple(o))
            wts.append(0.5 * w[ax])
            offs.append(tuple(-c for c in o))
            wts.append(0.5 * w[ax])
        return [(offs, np.array(wts))]
    out = []
    h = np.array(spec.spacing)
    for o1, o2 in psh_line_offsets(spec.rank):
        l1 = float(np.linalg.norm(np.array(o1) * h))
        l2 = float(np.linalg.norm(np.array(o2) * h))
        w1, w2 = 1.0 / l1 ** 2, 1.0 / l2 ** 2
        s = 2.0 * (w1 + w2)
        offs = [tuple(o1), tuple(-c for c in o1), tuple(o2), tuple(-c for c in o2)]
        out.append((offs, np.array([w1, w1, w2, w2]) / s))
    return out


def lcp_residual(u: np.ndarray, problem: EnvelopeProblem,
                 unknown: np.ndarray = None) -> float:
    """max |min(f - u, S u - u)| over the unknown nodes."""
    if unknown is None:
        unknown = problem.unknown()
    f = problem.obstacle.values
    su = stencil_average(u, problem.obstacle.spec, problem.mode)
    r = np.minimum(f - u, su - u)
    return float(np.abs(r[unknown]).max()) if unknown.any() else 0.0


def envelope_residual(v: ScalarField, problem: EnvelopeProblem) -> float:
    """Subsolution defect of an arbitrary field against the problem:
    positive part of max(v - f, v - S v).  Zero for admissible candidates."""
    if v.spec != problem.obstacle.spec:
        raise ValueError("grid mismatch")
    unknown = problem.unknown()
    f = problem.obstacle.values
    reg = v.inside()
    over_f = float(np.maximum(v.values - f, 0.0)[reg].max()) if reg.any() else 0.0
    sv = stencil_average(v.values, v.spec, problem.mode)
    over_s = float(np.maximum(v.values - sv, 0.0)[unknown].max()) if unknown.any() else 0.0
    return max(over_f, over_s)


def _neighbor_flat(spec, idx_nd, offset):
    nd = idx_nd + np.array(offset)
    return np.ravel_multi_index(tuple(nd.T), spec.shape)


def _policy_solve(problem: EnvelopeProblem, unknown: np.ndarray,
                  max_iter: int) -> EnvelopeSolution:
    spec = problem.obstacle.spec
    f = problem.obstacle.values
    stencils = _stencils(problem)
    u = f.copy()
    idx_nd = np.argwhere(unknown)
    n = len(idx_nd)
    flat_unknown = np.ravel_multi_index(tuple(idx_nd.T), spec.shape)
    col_of = np.full(int(np.prod(spec.shape)), -1, dtype=np.int64)
    col_of[flat_unknown] = np.arange(n)
    nb_flat = []      # per stencil: (n_off, n) flat neighbor indices
    for offs, wts in stencils:
        nb_flat.append(np.stack([_neighbor_flat(spec, idx_nd, o) for o in offs]))
    f_flat = f.ravel()
    tol = problem.tolerance
    # cheap relaxation sweeps first; they place the initial contact set within
    # a few layers of the final one, after which Howard needs only a handful
    # of factorizations instead of shedding one contact layer per round
    for _ in range(160):
        su = stencil_average(u, spec, problem.mode)
        u[unknown] = np.minimum(f[unknown], np.minimum(su[unknown], u[unknown]))
    prev_key = None
    iterations = 0
    for it in range(1, max_iter + 1):
        iterations = it
        means = [stencil_average(u, spec, problem.mode)] if len(stencils) == 1 else None
        if means is None:
            from .subharmonic import _line_average

            per_line = [_line_average(u, spec, offs)
                        for offs in psh_line_offsets(spec.rank)]
            su = np.min(per_line, axis=0)
            pol = np.argmin(per_line, axis=0)
        else:
            su = means[0]
            pol = None
        contact_arr = np.zeros(spec.shape, dtype=bool)
        contact_arr[unknown] = su[unknown] >= f[unknown]
        free = unknown & ~contact_arr
        u_new = f.copy()
        if free.any():
            free_rows = col_of[np.ravel_multi_index(tuple(np.argwhere(free).T),
                                                    spec.shape)]
            free_mask_cols = np.zeros(n, dtype=bool)
            free_mask_cols[free_rows] = True
            row_of = np.full(n, -1, dtype=np.int64)
            row_of[free_rows] = np.arange(len(free_rows))
            m = len(free_rows)
            rows_l, cols_l, data_l = [], [], []
            rhs = np.zeros(m)
            if pol is None:
                choice = np.zeros(n, dtype=np.int64)
            else:
                choice = pol.ravel()[flat_unknown]
            for s_idx, (offs, wts) in enumerate(stencils):
                sel = np.nonzero((choice[free_rows] == s_idx))[0]
                if len(sel) == 0:
                    continue
                urows = free_rows[sel]
                for o_idx in range(len(offs)):
                    nb = nb_flat[s_idx][o_idx][urows]
                    ucol = col_of[nb]
                    w = wts[o_idx]
                    is_free = np.zeros(len(nb), dtype=bool)
                    valid = ucol >= 0
                    is_free[valid] = free_mask_cols[ucol[valid]]
                    rows_l.append(sel[is_free])
                    cols_l.append(row_of[ucol[is_free]])
                    data_l.append(np.full(is_free.sum(), -w))
                    pin = ~is_free
                    np.add.at(rhs, sel[pin], w * f_flat[nb[pin]])
            rows = np.concatenate(rows_l) if rows_l else np.zeros(0, dtype=np.int64)
            cols = np.concatenate(cols_l) if cols_l else np.zeros(0, dtype=np.int64)
            data = np.concatenate(data_l) if data_l else np.zeros(0)
            mat = sp.csc_matrix((np.concatenate([np.ones(m), data]),
                                 (np.concatenate([np.arange(m), rows]),
                                  np.concatenate([np.arange(m), cols]))),
                                shape=(m, m))
            sol = spla.splu(mat).solve(rhs)
            u_new.ravel()[np.ravel_multi_index(tuple(np.argwhere(free).T),
                                               spec.shape)] = sol
        step = float(np.abs(u_new - u)[unknown].max()) if unknown.any() else 0.0
        u = u_new
        key = contact_arr.tobytes()
        if key == prev_key or step < tol / 10.0:
            res = lcp_residual(u, problem, unknown)
            if res <= tol:
                u = np.minimum(u, f)
                out = problem.obstacle.copy_with(values=u)
                return EnvelopeSolution(out, res, iterations, True, "policy",
                                        contact_arr)
        prev_key = key
    res = lcp_residual(u, problem, unknown)
    u = np.minimum(u, f)
    out = problem.obstacle.copy_with(values=u)
    return EnvelopeSolution(out, res, iterations, res <= tol, "policy",
                            contact_arr)


def _jacobi_solve(problem: EnvelopeProblem, unknown: np.ndarray,
                  max_iter: int) -> EnvelopeSolution:
    spec = problem.obstacle.spec
    f = problem.obstacle.values
    u = f.copy()
    tol = problem.tolerance
    iterations = 0
    res = np.inf
    while iterations < max_iter:
        su = stencil_average(u, spec, problem.mode)
        u_new = u.copy()
        u_new[unknown] = np.minimum(f[unknown],
                                    np.minimum(su[unknown], u[unknown]))
        step = float(np.abs(u_new - u)[unknown].max()) if unknown.any() else 0.0
        u = u_new
        iterations += 1
        if step < tol / 10.0:
            res = lcp_residual(u, problem, unknown)
            if res <= tol:
                break
    if not np.isfinite(res) or res > tol:
        res = lcp_residual(u, problem, unknown)
    su = stencil_average(u, spec, problem.mode)
    contact = np.zeros(spec.shape, dtype=bool)
    contact[unknown] = su[unknown] >= f[unknown]
    out = problem.obstacle.copy_with(values=np.minimum(u, f))
    return EnvelopeSolution(out, res, iterations, res <= tol, "jacobi", contact)


def solve_envelope(problem: EnvelopeProblem) -> EnvelopeSolution:
    """Largest stencil subsolution below the obstacle, to the stated tolerance."""
    unknown = problem.unknown()
    method = problem.method
    if method == "auto":
        method = "policy" if (problem.mode == "subharmonic"
                              or problem.obstacle.spec.rank == 2) else "jacobi"
    if method == "policy":
        max_iter = problem.max_iterations or 120
        return _policy_solve(problem, unknown, max_iter)
    if method == "jacobi":
        max_iter = problem.max_iterations or 200000
        return _jacobi_solve(problem, unknown, max_iter)
    raise ValueError(f"unknown method {method!r}")
