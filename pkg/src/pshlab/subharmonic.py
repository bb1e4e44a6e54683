"""Discrete subharmonicity tests, mollification, sup-convolution, cone shifts.

Defect conventions: a defect is u(center) minus a stencil average, so
nonpositive defects certify a discrete subsolution.  Stencil kinds:

- "ring": the weighted nearest-neighbour average (weights 1/h_j^2,
  normalized).  This is the exact stencil the envelope solver drives to
  zero, so envelope outputs test clean against it.
- "sphere": circle/sphere quadrature at a physical radius r >= 2h with
  multilinear interpolation; carries O(h^2) interpolation error.
- "psh": minimum over complex-line averages (4-point integer stencils in
  R^4, or line discs at a radius); a necessary condition for
  plurisubharmonicity, not a sufficient one.

Nodes whose stencil touches an OUTSIDE node or a -inf value are not
testable and are skipped; -inf is legal only at isolated inside nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .grid import INSIDE, OUTSIDE, GridSpec, ScalarField, mask_from_inside


@dataclass(frozen=True)
class ModulusOfContinuity:
    """Nondecreasing sampled modulus on (0, t_max], linear between breakpoints."""

    ts: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.ts, dtype=np.float64)
        vals = np.asarray(self.vals, dtype=np.float64)
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "vals", vals)
        if len(ts) < 1 or len(ts) != len(vals):
            raise ValueError("modulus needs matching breakpoints and values")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("modulus breakpoints must increase")
        if np.any(ts <= 0):
            raise ValueError("modulus breakpoints must be positive")
        if np.any(vals < 0) or np.any(np.diff(vals) < 0):
            raise ValueError("modulus values must be nonnegative and nondecreasing")

    def __call__(self, t):
        return np.interp(t, self.ts, self.vals)

    def vanishes_at_zero(self, tol: float) -> bool:
        """Secant extrapolation of the first segment down to t = 0.

        Sampled data cannot exhibit the limit itself; the first-segment
        trend is the honest surrogate, and it is exact for data that is
        linear near the origin.
        """
        if len(self.ts) < 2:
            return bool(self.vals[0] <= tol)
        slope = (self.vals[1] - self.vals[0]) / (self.ts[1] - self.ts[0])
        v0 = max(0.0, float(self.vals[0] - slope * self.ts[0]))
        return v0 <= tol

    @classmethod
    def from_function(cls, fn, t_max: float, n: int = 32) -> "ModulusOfContinuity":
        ts = t_max * (np.arange(1, n + 1) / n)
        return cls(ts, np.asarray([fn(t) for t in ts], dtype=np.float64))


def measured_modulus(field: ScalarField, region: np.ndarray, t_max: float,
                     n_levels: int = 24, max_nodes: int = 1400) -> ModulusOfContinuity:
    """Empirical modulus of continuity of a field over a node region.

    Pairwise increments on a deterministic subsample, accumulated into a
    nondecreasing envelope on geometric radius levels up to t_max.
    """
    region = np.asarray(region, dtype=bool)
    idx = np.argwhere(region & np.isfinite(field.values))
    if len(idx) < 2:
        raise ValueError("region too small to measure a modulus")
    if len(idx) > max_nodes:
        stride = int(np.ceil(len(idx) / max_nodes))
        idx = idx[::stride]
    h = np.array(field.spec.spacing)
    pts = np.array(field.spec.origin) + idx * h
    vals = field.values[tuple(idx.T)]
    diff = np.abs(vals[:, None] - vals[None, :])
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    iu = np.triu_indices(len(idx), k=1)
    diff, dist = diff[iu], dist[iu]
    keep = dist <= t_max
    diff, dist = diff[keep], dist[keep]
    ts = t_max * (np.arange(1, n_levels + 1) / n_levels)
    out = np.zeros(n_levels)
    if len(dist):
        order = np.argsort(dist, kind="stable")
        run = np.maximum.accumulate(diff[order])
        pos = np.searchsorted(dist[order], ts, side="right") - 1
        out = np.where(pos >= 0, run[np.clip(pos, 0, None)], 0.0)
    out = np.maximum.accumulate(out)
    return ModulusOfContinuity(ts, out)


@dataclass
class DefectReport:
    worst_node: tuple
    worst_defect: float
    above_tolerance: int
    kind: str
    testable: int
    tolerance: float = 0.0
    worst_offset: tuple = None
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.above_tolerance == 0


# ---------------------------------------------------------------------------
# stencils

def _interior_with_margin(mask: np.ndarray, cells) -> np.ndarray:
    """Inside nodes whose full box neighbourhood of the given per-axis cell
    counts stays inside the mask region.  Box erosion composes per axis."""
    out = mask != OUTSIDE
    for ax, c in enumerate(cells):
        acc = out.copy()
        for step in range(1, int(c) + 1):
            for sgn in (-1, 1):
                shifted = np.zeros_like(out)
                src = [slice(None)] * mask.ndim
                dst = [slice(None)] * mask.ndim
                if sgn > 0:
                    src[ax] = slice(step, None)
                    dst[ax] = slice(None, -step)
                else:
                    src[ax] = slice(None, -step)
                    dst[ax] = slice(step, None)
                shifted[tuple(dst)] = out[tuple(src)]
                acc &= shifted
        out = acc
    return out


def _ring_average(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Weighted nearest-neighbour average, weights 1/h_j^2 normalized.
    Valid only where all axis neighbours exist; edges hold garbage."""
    w = np.array([1.0 / h ** 2 for h in spec.spacing])
    w = w / w.sum()
    out = np.zeros_like(values)
    for ax in range(spec.rank):
        up = np.roll(values, -1, axis=ax)
        dn = np.roll(values, 1, axis=ax)
        out += 0.5 * w[ax] * (up + dn)
    return out


_PSH_LINES_4D = (
    (((1, 0, 0, 0), (0, 1, 0, 0)),),
    (((0, 0, 1, 0), (0, 0, 0, 1)),),
    (((1, 0, 1, 0), (0, 1, 0, 1)),),
    (((1, 0, -1, 0), (0, 1, 0, -1)),),
    (((1, 0, 0, 1), (0, 1, -1, 0)),),
    (((1, 0, 0, -1), (0, 1, 1, 0)),),
)


def psh_line_offsets(rank: int):
    """Integer offset pairs per complex line of the directional stencil."""
    if rank == 2:
        return [((1, 0), (0, 1))]
    if rank == 4:
        return [line[0] for line in _PSH_LINES_4D]
    raise ValueError("directional stencil needs rank 2 or 4")


def _line_average(values: np.ndarray, spec: GridSpec, offsets) -> np.ndarray:
    o1, o2 = offsets
    h = np.array(spec.spacing)
    l1 = float(np.linalg.norm(np.array(o1) * h))
    l2 = float(np.linalg.norm(np.array(o2) * h))
    w1, w2 = 1.0 / l1 ** 2, 1.0 / l2 ** 2
    s = 2.0 * (w1 + w2)
    out = np.zeros_like(values)
    for o, w in ((o1, w1), (o2, w2)):
        out += w * (np.roll(values, [-c for c in o], axis=tuple(range(spec.rank)))
                    + np.roll(values, list(o), axis=tuple(range(spec.rank))))
    return out / s


def stencil_average(field_values: np.ndarray, spec: GridSpec, mode: str) -> np.ndarray:
    """The envelope operator's stencil mean S u (garbage near edges)."""
    if mode == "subharmonic" or spec.rank == 2:
        return _ring_average(field_values, spec)
    if mode == "psh":
        means = [_line_average(field_values, spec, offs)
                 for offs in psh_line_offsets(spec.rank)]
        return np.min(means, axis=0)
    raise ValueError(f"unknown mode {mode!r}")


def stencil_testable(field: ScalarField, mode: str) -> np.ndarray:
    """Nodes where the integer stencil is fully readable and finite."""
    finite = np.isfinite(field.values) | (field.mask == OUTSIDE)
    ok_neighbor = (field.mask != OUTSIDE) & finite
    out = field.mask == INSIDE
    offsets = []
    for ax in range(field.spec.rank):
        o = [0] * field.spec.rank
        o[ax] = 1
        offsets.append(tuple(o))
    if mode == "psh" and field.spec.rank == 4:
        for pair in psh_line_offsets(4):
            offsets.extend(pair)
    for o in offsets:
        for sgn in (1, -1):
            shifted = np.zeros_like(ok_neighbor)
            src = [slice(None)] * field.spec.rank
            dst = [slice(None)] * field.spec.rank
            for ax, c in enumerate(o):
                c = c * sgn
                if c > 0:
                    src[ax] = slice(c, None)
                    dst[ax] = slice(None, -c)
                elif c < 0:
                    src[ax] = slice(None, c)
                    dst[ax] = slice(-c, None)
            shifted[tuple(dst)] = ok_neighbor[tuple(src)]
            out &= shifted
    return out & np.isfinite(field.values)


def _sphere_dirs(m: int, n: int):
    if m == 2:
        th = 2.0 * np.pi * (np.arange(4 * n) + 0.5) / (4 * n)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        w = np.full(4 * n, 1.0 / (4 * n))
        return dirs, w
    if m == 3:
        x, gw = np.polynomial.legendre.leggauss(n)
        phi = 2.0 * np.pi * (np.arange(2 * n) + 0.5) / (2 * n)
        st = np.sqrt(1.0 - x ** 2)
        dirs = np.stack([np.outer(st, np.cos(phi)).ravel(),
                         np.outer(st, np.sin(phi)).ravel(),
                         np.outer(x, np.ones_like(phi)).ravel()], axis=1)
        w = np.outer(gw, np.full_like(phi, 1.0)).ravel()
        return dirs, w / w.sum()
    raise ValueError("sphere stencil supports m in {2, 3}")


def submean_defect(field: ScalarField, mode: str = "subharmonic",
                   radius: float = None, tolerance: float = 0.0,
                   quadrature_n: int = 24) -> DefectReport:
    """Worst positive sub-mean-value defect of a field.

    radius None selects the integer ring (or directional) stencil; a
    physical radius >= 2h selects circle/sphere quadrature with multilinear
    interpolation (mode "psh" then averages over complex-line circles).
    """
    spec = field.spec
    if mode not in ("subharmonic", "psh"):
        raise ValueError(f"unknown mode {mode!r}")
    if radius is None:
        testable = stencil_testable(field, mode)
        if not testable.any():
            raise ValueError("no testable nodes")
        avg = stencil_average(field.values, spec, mode)
        defect = np.where(testable, field.values - avg, -np.inf)
        kind = "ring" if (mode == "subharmonic" or spec.rank == 2) else "psh"
    else:
        hmax = max(spec.spacing)
        if radius < 2.0 * hmax:
            raise ValueError(f"radius {radius} < 2h = {2 * hmax}")
        cells = [int(np.ceil(radius / h)) + 1 for h in spec.spacing]
        testable = _interior_with_margin(field.mask, cells)
        # stencils that would read a pole are not testable either
        pole = np.isneginf(field.values) & (field.mask != OUTSIDE)
        if pole.any():
            near_pole = ~_interior_with_margin(
                np.where(pole, OUTSIDE, INSIDE).astype(np.uint8), cells)
            testable &= ~near_pole
        testable &= np.isfinite(field.values)
        if not testable.any():
            raise ValueError("no testable nodes")
        centers = np.argwhere(testable)
        phys = np.array(spec.origin) + centers * np.array(spec.spacing)
        if mode == "subharmonic":
            if spec.rank > 3:
                raise ValueError("sphere quadrature limited to rank <= 3")
            dirs, w = _sphere_dirs(spec.rank, quadrature_n)
            pts = phys[:, None, :] + radius * dirs[None, :, :]
            vals = _interp_grid(field, pts.reshape(-1, spec.rank)).reshape(len(phys), -1)
            means = vals @ w
            kind = "sphere"
        else:
            th = 2.0 * np.pi * (np.arange(4 * quadrature_n) + 0.5) / (4 * quadrature_n)
            circ = np.stack([np.cos(th), np.sin(th)], axis=1)
            h = np.array(spec.spacing)
            line_means = []
            for o1, o2 in psh_line_offsets(spec.rank):
                v1 = np.array(o1) * h
                v2 = np.array(o2) * h
                v1 = v1 / np.linalg.norm(v1)
                v2 = v2 / np.linalg.norm(v2)
                ring = circ[:, :1] * v1 + circ[:, 1:] * v2
                pts = phys[:, None, :] + radius * ring[None, :, :]
                vals = _interp_grid(field, pts.reshape(-1, spec.rank))
                line_means.append(vals.reshape(len(phys), -1).mean(axis=1))
            means = np.min(line_means, axis=0)
            kind = "psh-disc"
        defect = np.full(spec.shape, -np.inf)
        defect[testable] = field.values[testable] - means
    worst_flat = int(np.argmax(defect))
    worst_node = tuple(int(i) for i in np.unravel_index(worst_flat, spec.shape))
    worst = float(defect[worst_node])
    above = int(np.count_nonzero(defect > tolerance))
    return DefectReport(worst_node, worst, above, kind,
                        int(testable.sum()), tolerance)


def _interp_grid(field: ScalarField, pts: np.ndarray) -> np.ndarray:
    from .grid import interpolate

    return interpolate(field, pts)


# ---------------------------------------------------------------------------
# mollification

def mollify_interior(field: ScalarField, sigma: float) -> ScalarField:
    """Convolve with the C^2 bump (1 - (t/sigma)^2)^3 on the sigma-shrunk mask.

    The kernel is normalized discretely; -inf nodes are dropped from the
    kernel mass (per-node renormalization over the finite support), which
    keeps log poles from annihilating their neighbourhoods.
    """
    spec = field.spec
    hmax = max(spec.spacing)
    if sigma < 2.0 * hmax:
        raise ValueError(f"sigma {sigma} < 2h = {2 * hmax}")
    cells = [int(np.ceil(sigma / h)) for h in spec.spacing]
    inside = _interior_with_margin(field.mask, cells)
    if not inside.any():
        raise ValueError("sigma-shrunk mask is empty")
    rng = [np.arange(-c, c + 1) for c in cells]
    mesh = np.meshgrid(*rng, indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=1)
    t2 = ((flat * np.array(spec.spacing)) ** 2).sum(axis=1) / sigma ** 2
    keep = t2 < 1.0
    offs = flat[keep]
    kw = (1.0 - t2[keep]) ** 3
    num = np.zeros(spec.shape)
    den = np.zeros(spec.shape)
    finite = np.isfinite(field.values) & (field.mask != OUTSIDE)
    vals = np.where(finite, field.values, 0.0)
    fin = finite.astype(np.float64)
    for o, w in zip(offs, kw):
        shifted_v = _shift(vals, o)
        shifted_f = _shift(fin, o)
        num += w * shifted_v * shifted_f
        den += w * shifted_f
    out = np.zeros(spec.shape)
    out[inside] = num[inside] / den[inside]
    return ScalarField(spec, out, mask_from_inside(inside))


def _shift(a: np.ndarray, offset) -> np.ndarray:
    out = np.zeros_like(a)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    for ax, c in enumerate(offset):
        c = int(c)
        if c > 0:
            src[ax] = slice(c, None)
            dst[ax] = slice(None, -c)
        elif c < 0:
            src[ax] = slice(None, c)
            dst[ax] = slice(-c, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


# ---------------------------------------------------------------------------
# sup-convolution

@njit(cache=True)
def _supconv2d_kernel(c, pyr, level_off, level_shape, ha, hx, k, qi, qj, out):
    n0, n1 = c.shape
    nlev = len(level_off)
    stack = np.empty((4 * nlev + 8, 3), dtype=np.int64)
    shrink = 1.0 - 1e-12
    for q in range(len(qi)):
        zi = qi[q]
        zj = qj[q]
        best = c[zi, zj]
        top = 0
        stack[0, 0] = nlev - 1
        stack[0, 1] = 0
        stack[0, 2] = 0
        top = 1
        while top > 0:
            top -= 1
            lev = stack[top, 0]
            bi = stack[top, 1]
            bj = stack[top, 2]
            rows = level_shape[lev, 0]
            cols = level_shape[lev, 1]
            if bi >= rows or bj >= cols:
                continue
            blockmax = pyr[level_off[lev] + bi * cols + bj]
            if blockmax == -np.inf:
                continue
            size = 1 << lev
            rlo = bi * size
            rhi = rlo + size - 1
            clo = bj * size
            chi = clo + size - 1
            if rhi > n0 - 1:
                rhi = n0 - 1
            if chi > n1 - 1:
                chi = n1 - 1
            dr = 0.0
            if zi < rlo:
                dr = (rlo - zi) * ha
            elif zi > rhi:
                dr = (zi - rhi) * ha
            dc = 0.0
            if zj < clo:
                dc = (clo - zj) * hx
            elif zj > chi:
                dc = (zj - chi) * hx
            bound = blockmax - k * np.sqrt(dr * dr + dc * dc) * shrink
            if bound <= best:
                continue
            if lev == 0:
                di = (zi - rlo) * ha
                dj = (zj - clo) * hx
                cand = blockmax - k * np.sqrt(di * di + dj * dj)
                if cand > best:
                    best = cand
            else:
                for ci in range(2):
                    for cj in range(2):
                        stack[top, 0] = lev - 1
                        stack[top, 1] = 2 * bi + ci
                        stack[top, 2] = 2 * bj + cj
                        top += 1
        out[q] = best


def _build_pyramid(c: np.ndarray):
    levels = [c]
    while levels[-1].shape[0] > 1 or levels[-1].shape[1] > 1:
        a = levels[-1]
        m = (a.shape[0] + 1) // 2
        n = (a.shape[1] + 1) // 2
        b = np.full((m, n), -np.inf)
        for di in range(2):
            for dj in range(2):
                part = a[di::2, dj::2]
                b[:part.shape[0], :part.shape[1]] = np.maximum(
                    b[:part.shape[0], :part.shape[1]], part)
        levels.append(b)
    offs = np.zeros(len(levels), dtype=np.int64)
    shapes = np.zeros((len(levels), 2), dtype=np.int64)
    total = 0
    for i, a in enumerate(levels):
        offs[i] = total
        shapes[i] = a.shape
        total += a.size
    flat = np.concatenate([a.ravel() for a in levels])
    return flat, offs, shapes


def sup_convolution(field: ScalarField, k: float) -> ScalarField:
    """phi_k(z) = max over inside nodes w of [max(u(w), -k) - k |z - w|] + 1/k.

    Exact nodewise maximum (branch-and-bound over a max pyramid in rank 2,
    chunked brute force otherwise).  Every ingredient is monotone in k in
    floating point, so k' >= k gives phi_{k'} <= phi_k bit-for-bit, and
    phi_k >= u always.
    """
    if k <= 0:
        raise ValueError("need k > 0")
    spec = field.spec
    ins = field.inside()
    if not ins.any():
        raise ValueError("empty mask")
    k = float(k)
    c = np.where(ins, np.maximum(field.values, -k), -np.inf)
    out = np.zeros(spec.shape)
    if spec.rank == 2:
        flat, offs, shapes = _build_pyramid(c)
        q = np.argwhere(ins)
        res = np.empty(len(q))
        _supconv2d_kernel(c, flat, offs, shapes,
                          spec.spacing[0], spec.spacing[1], k,
                          q[:, 0].copy(), q[:, 1].copy(), res)
        out[ins] = res + 1.0 / k
    else:
        if ins.sum() > 20000:
            raise ValueError("brute-force sup-convolution limited to 20000 nodes")
        idx = np.argwhere(ins)
        h = np.array(spec.spacing)
        pts = idx * h
        cv = c[ins]
        res = np.full(len(idx), -np.inf)
        chunk = 2048
        for s in range(0, len(idx), chunk):
            d = np.linalg.norm(pts[s:s + chunk, None, :] - pts[None, :, :], axis=2)
            res[s:s + chunk] = np.max(cv[None, :] - k * d, axis=1)
        out[ins] = res + 1.0 / k
    return field.copy_with(values=out)


def sup_convolution_brute(field: ScalarField, k: float) -> ScalarField:
    """Reference implementation: plain max over all inside nodes."""
    spec = field.spec
    ins = field.inside()
    k = float(k)
    c = np.where(ins, np.maximum(field.values, -k), -np.inf)
    idx = np.argwhere(ins)
    h = np.array(spec.spacing)
    pts = idx * h
    cv = c[ins]
    out = np.zeros(spec.shape)
    res = np.full(len(idx), -np.inf)
    for s in range(0, len(idx), 1024):
        diffs = pts[s:s + 1024, None, :] - pts[None, :, :]
        d = np.sqrt((diffs ** 2).sum(axis=2))
        res[s:s + 1024] = np.max(cv[None, :] - k * d, axis=1)
    out[ins] = res + 1.0 / k
    return field.copy_with(values=out)


# ---------------------------------------------------------------------------
# cone-shift comparison

def cone_shift_check(field: ScalarField, cone, delta: ModulusOfContinuity,
                     base: np.ndarray, tolerance: float = 0.0,
                     on_exit: str = "error") -> DefectReport:
    """max over x in base, grid-aligned y in the open cone of
    u(x + y) - u(x) - delta(|y|); nonpositive certifies the cone hypothesis.

    base is a boolean node array.  With on_exit="error" every x + y must stay
    in the mask region and a shift that exits is an error naming the witness
    pair.  With on_exit="skip" exiting pairs are dropped and counted in the
    report's skipped field.
    """
    if on_exit not in ("error", "skip"):
        raise ValueError("on_exit must be 'error' or 'skip'")
    spec = field.spec
    base = np.asarray(base, dtype=bool) & field.inside()
    if not base.any():
        raise ValueError("empty base region")
    h = np.array(spec.spacing)
    cells = [int(np.floor(cone.depth / (cone.slope * h[ax]) + 1e-9)) if ax < spec.rank - 1
             else int(np.floor(cone.depth / h[ax] + 1e-9)) for ax in range(spec.rank)]
    if not np.isfinite(cone.depth):
        raise ValueError("cone must have finite depth")
    rngs = [np.arange(-c, c + 1) for c in cells[:-1]] + [np.arange(-cells[-1], 0)]
    mesh = np.meshgrid(*rngs, indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=1)
    if len(flat) == 0:
        raise ValueError("no grid-aligned cone offsets at this resolution")
    phys = flat * h
    keep = cone.strictly_contains(phys)
    offs = flat[keep]
    if len(offs) == 0:
        raise ValueError("no grid-aligned cone offsets at this resolution")
    ok = field.inside()
    worst = -np.inf
    worst_node = None
    worst_off = None
    above = 0
    checked = 0
    skipped = 0
    for o, p in zip(offs, phys[keep]):
        shifted_ok = _shift(ok.astype(np.float64), o) > 0.5
        reach = base & ~shifted_ok
        if reach.any():
            if on_exit == "error":
                idx = tuple(int(i) for i in np.argwhere(reach)[0])
                raise ValueError(
                    f"shift {tuple(map(float, p))} from node {idx} exits the region")
            skipped += int(reach.sum())
        use = base & shifted_ok
        if not use.any():
            continue
        use_idx = np.argwhere(use)
        shifted_u = _shift(field.values, o)
        d = shifted_u[use] - field.values[use] - delta(float(np.linalg.norm(p)))
        checked += int(use.sum())
        above += int(np.count_nonzero(d > tolerance))
        i = int(np.argmax(d))
        if d[i] > worst:
            worst = float(d[i])
            worst_node = tuple(int(v) for v in use_idx[i])
            worst_off = tuple(float(v) for v in p)
    if checked == 0:
        raise ValueError("every cone shift exits the region; nothing to check")
    return DefectReport(worst_node, worst, above, "cone-shift",
                        int(checked), tolerance, worst_offset=worst_off,
                        skipped=skipped)
