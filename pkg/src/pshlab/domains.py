"""Cap-domain geometry: Lipschitz graphs, ellipsoid caps, cones, erosions.

The working domain is the cap Omega = {z in U : x < F(a)} where z = (a, x),
F: [-1,1] -> [3C,4C] is Lipschitz with constant C, and U is the ellipsoid
{|a|^2 + (x/5C)^2 < 1}.  This module owns the modified graph
max{F, 5C sqrt(1-|a|^2)}, shift cones, cone erosions of the cap, the compact
core where cone shifts may fail to increase boundary distance, exact distance
functions to the two boundaries, and the convex exhaustion profiles p used to
build rho = p(-log dist).

Distances to the ellipsoid boundary are computed once per grid and reused, so
that the inequality dist(., bd Omega) <= dist(., bd U) holds bit-for-bit
wherever the ellipsoid part is the nearer one.  Downstream seam checks rely on
that exact equality.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .grid import GridSpec, ScalarField, mask_from_inside

_RANGE_TOL = 1e-9


class CoreError(Exception):
    """Raised when no compact core exists at the current resolution."""

    def __init__(self, message, pairs=()):
        super().__init__(message)
        self.pairs = list(pairs)


# ---------------------------------------------------------------------------
# Lipschitz graphs over the base interval [-1, 1]

@dataclass(frozen=True, eq=False)
class LipschitzGraph:
    """Piecewise-linear Lipschitz function F: [-1,1] -> [3C, 4C].

    All supported descriptors (const, abs kink, explicit pwl) are
    canonicalized to breakpoints, so evaluation is a single np.interp and
    the range / Lipschitz certificates are exact at breakpoints.
    """

    C: float
    kind: str
    params: tuple
    bx: np.ndarray
    by: np.ndarray

    def __call__(self, t):
        return np.interp(t, self.bx, self.by)

    @property
    def segments(self):
        return self.bx[:-1], self.bx[1:], self.by[:-1], self.by[1:]


def _validate_graph(C, kind, params, bx, by):
    if C <= 0 or not np.isfinite(C):
        raise ValueError(f"need C > 0, got {C}")
    if len(bx) < 2 or np.any(np.diff(bx) <= 0):
        raise ValueError("breakpoints must be strictly increasing")
    if bx[0] > -1.0 + 1e-12 or bx[-1] < 1.0 - 1e-12:
        raise ValueError("breakpoints must cover [-1, 1]")
    lo, hi = 3.0 * C - _RANGE_TOL, 4.0 * C + _RANGE_TOL
    if by.min() < lo or by.max() > hi:
        raise ValueError(
            f"range breach: F in [{by.min():.6g}, {by.max():.6g}], need [3C,4C] = [{3*C:.6g},{4*C:.6g}]")
    slopes = np.abs(np.diff(by) / np.diff(bx))
    if slopes.max(initial=0.0) > C * (1.0 + 1e-9):
        raise ValueError(f"Lipschitz breach: max slope {slopes.max():.6g} > C = {C:.6g}")
    # sampled cross-check of the same certificates
    t = np.linspace(-1.0, 1.0, 257)
    v = np.interp(t, bx, by)
    if v.min() < lo or v.max() > hi:
        raise ValueError("sampled range breach")
    q = np.abs(np.diff(v) / np.diff(t))
    if q.max() > C * (1.0 + 1e-9):
        raise ValueError("sampled Lipschitz breach")
    return LipschitzGraph(float(C), kind, params, bx, by)


def const_graph(C: float, c: float) -> LipschitzGraph:
    bx = np.array([-1.0, 1.0])
    by = np.array([float(c), float(c)])
    return _validate_graph(C, "const", (float(c),), bx, by)


def abs_graph(C: float, c: float, s: float, a0: float) -> LipschitzGraph:
    """F(a) = clip(c + s|a - a0|, 3C, 4C); the clip keeps range and slope."""
    C = float(C)
    xs = {-1.0, 1.0, float(a0)}
    # clip crossings are genuine breakpoints
    for bound in (3.0 * C, 4.0 * C):
        if s != 0.0:
            dt = (bound - c) / s
            if dt > 0:
                for t in (a0 - dt, a0 + dt):
                    if -1.0 < t < 1.0:
                        xs.add(float(t))
    bx = np.array(sorted(t for t in xs if -1.0 <= t <= 1.0))
    by = np.clip(c + s * np.abs(bx - a0), 3.0 * C, 4.0 * C)
    return _validate_graph(C, "abs", (float(c), float(s), float(a0)), bx, by)


def pwl_graph(C: float, xs, ys) -> LipschitzGraph:
    bx = np.asarray(xs, dtype=np.float64)
    by = np.asarray(ys, dtype=np.float64)
    if bx[0] > -1.0:
        bx = np.concatenate([[-1.0], bx])
        by = np.concatenate([[by[0]], by])
    if bx[-1] < 1.0:
        bx = np.concatenate([bx, [1.0]])
        by = np.concatenate([by, [by[-1]]])
    return _validate_graph(C, "pwl", (tuple(map(float, bx)), tuple(map(float, by))), bx, by)


def random_graph(C: float, rng: np.random.Generator, kind=None) -> LipschitzGraph:
    """Random admissible graph; kinds cycle const / abs / pwl when unset."""
    if kind is None:
        kind = ("const", "abs", "pwl")[int(rng.integers(3))]
    if kind == "const":
        return const_graph(C, rng.uniform(3.0 * C, 4.0 * C))
    if kind == "abs":
        return abs_graph(C, rng.uniform(3.0 * C, 4.0 * C),
                         rng.uniform(-C, C), rng.uniform(-0.9, 0.9))
    if kind == "pwl":
        nseg = int(rng.integers(3, 9))
        bx = np.linspace(-1.0, 1.0, nseg + 1)
        bx[1:-1] += rng.uniform(-0.3, 0.3, nseg - 1) * (2.0 / nseg)
        by = np.empty(nseg + 1)
        by[0] = rng.uniform(3.0 * C, 4.0 * C)
        for i in range(nseg):
            step = rng.uniform(-0.95, 0.95) * C * (bx[i + 1] - bx[i])
            by[i + 1] = np.clip(by[i] + step, 3.0 * C, 4.0 * C)
        return pwl_graph(C, bx, by)
    raise ValueError(f"unknown graph kind {kind!r}")


# ---------------------------------------------------------------------------
# cones

@dataclass(frozen=True)
class Cone:
    """Open cone {w: -depth < w_m < -slope |w'|} pointing down the last axis.

    kind "theorem" cones are the shift cones of the cap construction
    (slope tied to 7C); kind "lemma" cones carry an optional ball radius
    used by the continuity certificate.
    """

    depth: float
    slope: float
    kind: str = "lemma"
    ball_radius: float = None

    def __post_init__(self):
        if self.depth < 0 or self.slope < 0:
            raise ValueError("cone needs depth >= 0 and slope >= 0")

    @property
    def is_empty(self) -> bool:
        return not self.depth > 0

    def strictly_contains(self, w) -> np.ndarray:
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        xm = w[:, -1]
        perp = np.linalg.norm(w[:, :-1], axis=1)
        return (xm > -self.depth) & (xm < -self.slope * perp)

    def contains_closure(self, w) -> np.ndarray:
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        xm = w[:, -1]
        perp = np.linalg.norm(w[:, :-1], axis=1)
        return (xm >= -self.depth) & (xm <= -self.slope * perp)

    def hull_points(self, spacing) -> np.ndarray:
        """Discrete hull of the closed cone: lattice at the grid spacing,
        the apex, and the bottom rim."""
        rank = len(spacing)
        if self.is_empty:
            return np.zeros((1, rank))
        if not np.isfinite(self.depth):
            raise ValueError("hull of an unbounded cone")
        if self.slope == 0:
            raise ValueError("hull needs positive slope")
        amax = self.depth / self.slope
        ha = min(spacing[:-1])
        hx = spacing[-1]
        ax1 = np.arange(0.0, amax + 0.5 * ha, ha)
        ax1 = np.unique(np.concatenate([-ax1, ax1]))
        xs = -np.arange(0.0, self.depth + 0.5 * hx, hx)
        pts = [np.zeros((1, rank))]
        if rank == 2:
            A, X = np.meshgrid(ax1, xs, indexing="ij")
            keep = (X >= -self.depth) & (X <= -self.slope * np.abs(A))
            pts.append(np.stack([A[keep], X[keep]], axis=1))
            rim = np.array([[-amax, -self.depth], [amax, -self.depth]])
            pts.append(rim)
        else:
            grids = np.meshgrid(*([ax1] * (rank - 1) + [xs]), indexing="ij")
            flat = np.stack([g.ravel() for g in grids], axis=1)
            perp = np.linalg.norm(flat[:, :-1], axis=1)
            keep = (flat[:, -1] >= -self.depth) & (flat[:, -1] <= -self.slope * perp)
            pts.append(flat[keep])
            # bottom rim sphere |a| = amax at x = -depth, Fibonacci points
            n_rim = max(16, int(np.ceil(4.0 * np.pi * amax ** 2 / ha ** 2)))
            n_rim = min(n_rim, 512)
            i = np.arange(n_rim)
            if rank == 4:
                phi = np.pi * (3.0 - np.sqrt(5.0)) * i
                ct = 1.0 - 2.0 * (i + 0.5) / n_rim
                st = np.sqrt(1.0 - ct ** 2)
                rim = np.stack([amax * st * np.cos(phi), amax * st * np.sin(phi),
                                amax * ct, np.full(n_rim, -self.depth)], axis=1)
            else:
                th = 2.0 * np.pi * (i + 0.5) / n_rim
                rim = np.stack([amax * np.cos(th), amax * np.sin(th),
                                np.full(n_rim, -self.depth)], axis=1)
            pts.append(rim)
        out = np.concatenate(pts, axis=0)
        return np.unique(out, axis=0)

    def interior_points(self, spacing) -> np.ndarray:
        """Deterministic sample of the open cone (for distance comparisons)."""
        rank = len(spacing)
        if self.is_empty:
            return np.zeros((0, rank))
        hull = self.hull_points(spacing)
        keep = self.strictly_contains(hull)
        pts = [hull[keep]]
        amax = self.depth / self.slope
        for f in (0.2, 0.45, 0.7):
            for g in (0.35, 0.65):
                a = f * amax
                x = -(self.slope * a * (1 - g) + self.depth * g)
                if -self.depth < x < -self.slope * a:
                    if rank == 2:
                        pts.append(np.array([[a, x], [-a, x]]))
                    else:
                        row = np.zeros((2, rank))
                        row[0, 0], row[1, 0] = a, -a
                        row[:, -1] = x
                        pts.append(row)
        pts.append(np.array([[0.0] * (rank - 1) + [-0.5 * self.depth]]))
        out = np.concatenate(pts, axis=0)
        out = out[self.strictly_contains(out)]
        return np.unique(out, axis=0)


# ---------------------------------------------------------------------------
# the cap domain

def _ellipse_distance(p, q, A: float, B: float) -> np.ndarray:
    """Distance from interior points (p, q) to the ellipse p^2/A^2 + q^2/B^2 = 1.

    Solved through the projection parameter t: the closest boundary point is
    (A^2 u/(t+A^2), B^2 v/(t+B^2)) where t is the unique root of the standard
    rational equation on (-min(A,B)^2, 0].  Bisection, fully vectorized.
    """
    u = np.abs(np.asarray(p, dtype=np.float64))
    v = np.abs(np.asarray(q, dtype=np.float64))
    shape = np.broadcast_shapes(u.shape, v.shape)
    u = np.broadcast_to(u, shape).ravel().copy()
    v = np.broadcast_to(v, shape).ravel().copy()
    out = np.empty(u.shape)
    tol = 1e-10 * (A + B)

    on_u = u <= tol
    on_v = v <= tol
    both = on_u & on_v
    out[both] = min(A, B)

    m = on_u & ~both
    if m.any():
        vv = v[m]
        d = B - vv
        if B > A:
            cut = (B * B - A * A) / B
            off = vv < cut
            yc = B * B * vv / (B * B - A * A)
            xc = A * np.sqrt(np.clip(1.0 - (yc / B) ** 2, 0.0, None))
            d2 = np.hypot(xc, yc - vv)
            d = np.where(off, np.minimum(d, d2), d)
        out[m] = d

    m = on_v & ~both
    if m.any():
        uu = u[m]
        d = A - uu
        if A > B:
            cut = (A * A - B * B) / A
            off = uu < cut
            xc = A * A * uu / (A * A - B * B)
            yc = B * np.sqrt(np.clip(1.0 - (xc / A) ** 2, 0.0, None))
            d2 = np.hypot(xc - uu, yc)
            d = np.where(off, np.minimum(d, d2), d)
        out[m] = d

    g = ~(on_u | on_v)
    if g.any():
        uu, vv = u[g], v[g]
        a2, b2 = A * A, B * B
        lo = np.full(uu.shape, -min(a2, b2) * (1.0 - 1e-12))
        hi = np.zeros(uu.shape)
        for _ in range(108):
            mid = 0.5 * (lo + hi)
            f = (a2 * uu ** 2) / (mid + a2) ** 2 + (b2 * vv ** 2) / (mid + b2) ** 2 - 1.0
            pos = f > 0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
        t = 0.5 * (lo + hi)
        x = a2 * uu / (t + a2)
        y = b2 * vv / (t + b2)
        out[g] = np.hypot(x - uu, y - vv)
    return out.reshape(shape)


def _polyline_distance(p, q, ax0, ax1, ay0, ay1) -> np.ndarray:
    """Distance from points (p, q) to the polyline with segment endpoints
    (ax0, ay0)-(ax1, ay1), vectorized over points and segments."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    best = np.full(p.shape, np.inf)
    dx = ax1 - ax0
    dy = ay1 - ay0
    den = dx * dx + dy * dy
    chunk = 1 << 16
    for s in range(0, p.size, chunk):
        pp = p[s:s + chunk, None]
        qq = q[s:s + chunk, None]
        t = ((pp - ax0) * dx + (qq - ay0) * dy) / np.where(den > 0, den, 1.0)
        t = np.clip(t, 0.0, 1.0)
        px = ax0 + t * dx
        py = ay0 + t * dy
        d = np.hypot(pp - px, qq - py)
        best[s:s + chunk] = d.min(axis=1)
    return best


@dataclass(eq=False)
class CapDomain:
    """Cap Omega = {z in U : x < F(a)}, U = {|a|^2 + (x/5C)^2 < 1}.

    rank is the ambient real dimension (2 or 4); for rank 4 the graph must
    be even in |a| and the geometry is rotationally symmetric in a.
    """

    graph: LipschitzGraph
    rank: int = 2

    def __post_init__(self):
        if self.rank not in (2, 4):
            raise ValueError("rank must be 2 or 4")

    @property
    def C(self) -> float:
        return self.graph.C

    @property
    def x_semi_axis(self) -> float:
        return 5.0 * self.C

    @property
    def inner_base_radius(self) -> float:
        # the inner base ball {|a| < 4/5}
        return 0.8

    def arc(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return 5.0 * self.C * np.sqrt(np.clip(1.0 - t * t, 0.0, None))

    def hat(self, t) -> np.ndarray:
        return np.maximum(self.graph(t), self.arc(t))

    def upper_boundary(self, t) -> np.ndarray:
        """True upper boundary height of Omega above base point t:
        membership in Omega flips across x = min(F, arc)."""
        return np.minimum(self.graph(t), self.arc(t))

    def base_coordinate(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.rank == 2:
            return pts[:, 0]
        return np.linalg.norm(pts[:, :-1], axis=1)

    def membership(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if pts.shape[1] != self.rank:
            raise ValueError(f"points must have {self.rank} columns")
        t = self.base_coordinate(pts)
        x = pts[:, -1]
        r2 = (pts[:, :-1] ** 2).sum(axis=1)
        in_u = r2 + (x / (5.0 * self.C)) ** 2 < 1.0
        return in_u & (x < self.graph(np.clip(t, -1.0, 1.0)))

    def inside_fn(self, *coords):
        x = coords[-1]
        r2 = sum(c * c for c in coords[:-1])
        if self.rank == 2:
            t = coords[0]
        else:
            t = np.sqrt(r2)
        in_u = r2 + (x / (5.0 * self.C)) ** 2 < 1.0
        return in_u & (x < self.graph(np.clip(t, -1.0, 1.0)))

    def default_spec(self, n: int = 256) -> GridSpec:
        B = self.x_semi_axis
        shape = (n,) * self.rank
        origin = (-1.0,) * (self.rank - 1) + (-B,)
        spacing = (2.0 / (n - 1),) * (self.rank - 1) + (2.0 * B / (n - 1),)
        return GridSpec(shape, origin, spacing)

    def theorem_cone(self, epsilon: float) -> Cone:
        return Cone(depth=float(epsilon), slope=7.0 * self.C, kind="theorem")

    # -- distances ---------------------------------------------------------

    def _fold(self, points: np.ndarray):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.rank == 2:
            return pts[:, 0], pts[:, 1]
        return np.linalg.norm(pts[:, :-1], axis=1), pts[:, -1]

    def boundary_distance_split(self, points: np.ndarray):
        """(distance to bd Omega, distance to bd U) at interior points.

        The bd Omega distance is the exact minimum of the graph-polyline
        distance and the very same bd U values returned second, so the
        comparison dist_omega <= dist_U is bitwise.
        """
        p, q = self._fold(points)
        e = _ellipse_distance(p, q, 1.0, 5.0 * self.C)
        x0, x1, y0, y1 = self.graph.segments
        g = _polyline_distance(p, q, x0, x1, y0, y1)
        return np.minimum(g, e), e

    def distance_to_boundary(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        inside = self.membership(pts)
        if not inside.all():
            k = int(np.argwhere(~inside)[0][0])
            raise ValueError(f"point {pts[k]} is not inside the cap")
        d, _ = self.boundary_distance_split(pts)
        if np.asarray(points).ndim == 1:
            return float(d[0])
        return d

    def c_prime(self) -> float:
        """Measured Lipschitz constant of hat F on the contact set {F >= arc};
        always < 7C because hat = F there."""
        t = np.linspace(-1.0, 1.0, 4097)
        on = self.graph(t) >= self.arc(t)
        best = 0.0
        i = 0
        while i < len(t):
            if not on[i]:
                i += 1
                continue
            j = i
            while j + 1 < len(t) and on[j + 1]:
                j += 1
            if j > i:
                best = max(best, lipschitz_estimate(
                    self.hat, (float(t[i]), float(t[j])), pair_count=512))
            i = j + 1
        if best >= 7.0 * self.C:
            raise AssertionError(f"contact-set slope {best} >= 7C")
        return best


def hat_F(graph: LipschitzGraph, a):
    """max{F(a), 5C sqrt(1 - |a|^2)}; rejects |a| > 1."""
    arr = np.asarray(a, dtype=np.float64)
    if np.any(np.abs(arr) > 1.0):
        raise ValueError("base point outside the closed unit ball")
    val = np.maximum(graph(arr), 5.0 * graph.C * np.sqrt(np.clip(1.0 - arr * arr, 0.0, None)))
    return float(val) if np.isscalar(a) or arr.ndim == 0 else val


# ---------------------------------------------------------------------------
# Lipschitz estimation

def lipschitz_estimate(fn, region, pair_count: int = 4096) -> float:
    """Lower bound on the Lipschitz constant of fn over an interval or box.

    Deterministic: Halton pairs across the region, geometric two-point
    refinements anchored at fixed stations (including the endpoints), and a
    multi-scale beam zoom along each axis.  The zoom keeps the best few
    centers per scale and halves the scale, so slope suprema attained
    one-sidedly at interior kinks are reached to near machine precision,
    not just suprema at the region boundary.
    """
    region = np.asarray(region, dtype=np.float64)
    if region.ndim == 1:
        region = region[None, :]
    lo, hi = region[:, 0], region[:, 1]
    dim = len(lo)
    if np.any(hi - lo <= 1e-12):
        raise ValueError("degenerate region")
    if pair_count < 8:
        raise ValueError("need pair_count >= 8")

    def ratio(a, b):
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        gap = np.linalg.norm(a - b, axis=1)
        ok = gap > 1e-13 * np.linalg.norm(hi - lo)
        if not ok.any():
            return 0.0
        fa = np.asarray(fn(a[ok, 0] if dim == 1 else a[ok]), dtype=np.float64)
        fb = np.asarray(fn(b[ok, 0] if dim == 1 else b[ok]), dtype=np.float64)
        return float(np.max(np.abs(fa - fb) / gap[ok]))

    eng = qmc.Halton(d=2 * dim, scramble=False)
    pts = eng.random(pair_count)
    a = lo + pts[:, :dim] * (hi - lo)
    b = lo + pts[:, dim:] * (hi - lo)
    best = ratio(a, b)

    # geometric refinements around fixed anchors; endpoint anchors make
    # boundary-attained slopes reachable to near machine precision
    stations = np.concatenate([np.array([0.0, 1.0]), (np.arange(31) + 0.5) / 31])
    scales = 2.0 ** -np.arange(3, 44, dtype=np.float64)
    for ax in range(dim):
        span = hi[ax] - lo[ax]
        anchors = lo[ax] + stations * span
        A = np.repeat(anchors, len(scales))
        H = np.tile(scales * span, len(anchors))
        for left in (False, True):
            aa = np.clip(A - H if left else A, lo[ax], hi[ax])
            bb = np.clip(A if left else A + H, lo[ax], hi[ax])
            base = np.repeat(lo[None, :] + 0.5 * (hi - lo)[None, :], len(aa), axis=0)
            pa = base.copy()
            pb = base.copy()
            pa[:, ax] = aa
            pb[:, ax] = bb
            best = max(best, ratio(pa, pb))

    # beam zoom: per axis, keep the 8 best centers, try one-sided and
    # centered pairs at the current scale, re-seed the beam from the
    # children of the winners, halve the scale
    for ax in range(dim):
        span = hi[ax] - lo[ax]
        base = lo + 0.5 * (hi - lo)
        centers = lo[ax] + np.linspace(0.0, 1.0, 129) * span
        s = span / 128.0
        # stop well above cancellation scale: ratio noise is ~2 ulp(f)/gap
        for _ in range(30):
            cand = np.unique(np.clip(
                np.concatenate([centers - 0.5 * s, centers, centers + 0.5 * s]),
                lo[ax], hi[ax]))
            offs = np.array([[-s, 0.0], [0.0, s], [-0.5 * s, 0.5 * s]])
            aa = np.clip(cand[:, None] + offs[None, :, 0], lo[ax], hi[ax])
            bb = np.clip(cand[:, None] + offs[None, :, 1], lo[ax], hi[ax])
            pa = np.repeat(base[None, :], aa.size, axis=0)
            pb = pa.copy()
            pa[:, ax] = aa.ravel()
            pb[:, ax] = bb.ravel()
            gap = pb[:, ax] - pa[:, ax]
            ok = gap > 1e-13 * span
            score = np.full(aa.size, -np.inf)
            if ok.any():
                fa = np.asarray(fn(pa[ok, 0] if dim == 1 else pa[ok]),
                                dtype=np.float64)
                fb = np.asarray(fn(pb[ok, 0] if dim == 1 else pb[ok]),
                                dtype=np.float64)
                score[ok] = np.abs(fa - fb) / gap[ok]
                best = max(best, float(score[ok].max()))
            per_center = score.reshape(len(cand), len(offs)).max(axis=1)
            keep = np.argsort(per_center)[::-1][:8]
            centers = cand[keep]
            s *= 0.5
    return best


# ---------------------------------------------------------------------------
# erosions

@dataclass(eq=False)
class ErosionMask:
    """Nodes z with z + j w in Omega for all hull points w and j = 1..level."""

    level: int
    cone: Cone
    spec: GridSpec
    inside: np.ndarray

    @property
    def epsilon(self) -> float:
        return self.cone.depth

    def node_count(self) -> int:
        return int(self.inside.sum())


def erosion_set(domain: CapDomain, cone: Cone, k: int, spec: GridSpec) -> ErosionMask:
    """Erode the cap by the k-scaled discrete cone hull.

    Shifts use every j*w for j = 1..k so the erosion levels nest exactly:
    the scaled hulls are subsets of the closed scaled cone, which is
    star-shaped, hence level 2 implies level 1 node by node.
    """
    if k not in (1, 2):
        raise ValueError("erosion level must be 1 or 2")
    if cone.kind == "theorem" and cone.slope != 7.0 * domain.C:
        warnings.warn(f"cone slope {cone.slope} differs from 7C = {7.0 * domain.C}",
                      stacklevel=2)
    coords = spec.meshgrid()
    inside = domain.inside_fn(*coords)
    eroded = inside.copy()
    if cone.is_empty:
        return ErosionMask(k, cone, spec, eroded)
    hull = cone.hull_points(spec.spacing)
    for j in range(1, k + 1):
        for w in hull:
            if not np.any(w):
                continue
            shifted = [coords[i] + j * w[i] for i in range(spec.rank)]
            eroded &= domain.inside_fn(*shifted)
    return ErosionMask(k, cone, spec, eroded)


@dataclass(eq=False)
class CoreReport:
    """Compact core (violating nodes) of the distance-increase comparison."""

    core: np.ndarray
    cone: Cone
    spec: GridSpec
    checked: int
    shifts: np.ndarray
    violations: list = field(default_factory=list)

    def node_count(self) -> int:
        return int(self.core.sum())


def compact_core(domain: CapDomain, cone: Cone, masks) -> CoreReport:
    """Find the node set where some cone shift fails to increase boundary
    distance, and certify it is compactly inside the level-1 erosion.

    masks is the pair (level-1 mask, level-2 mask).  Every level-2 node z is
    tested against a deterministic sample of open-cone shifts w; z joins the
    core when dist(z + w, bd Omega) <= dist(z, bd Omega) for some w.  Core
    nodes touching the complement of the level-1 erosion make the core
    non-compact: that is an error carrying the offending pairs.
    """
    m1, m2 = masks
    if m1.spec is not m2.spec and m1.spec != m2.spec:
        raise ValueError("erosion masks live on different grids")
    spec = m2.spec
    if m2.node_count() == 0:
        raise CoreError("level-2 erosion is empty; cone too large for the cap")
    ws = cone.interior_points(spec.spacing)
    if len(ws) == 0:
        raise CoreError("no interior cone sample; cone too small for the grid")
    coords = spec.meshgrid()
    nodes = np.stack([c[m2.inside] for c in coords], axis=1)
    base = domain.distance_to_boundary(nodes)
    viol = np.zeros(len(nodes), dtype=bool)
    worst = [None] * len(nodes)
    for w in ws:
        shifted, _ = domain.boundary_distance_split(nodes + w)
        bad = shifted <= base
        newly = bad & ~viol
        for i in np.nonzero(newly)[0]:
            worst[i] = w
        viol |= bad
    core = np.zeros(spec.shape, dtype=bool)
    core[m2.inside] = viol

    # compactness: core nodes and their axis neighbours stay in the level-1 set
    inner1 = m1.inside.copy()
    for ax in range(spec.rank):
        shift_lo = np.ones_like(inner1)
        shift_hi = np.ones_like(inner1)
        sl_a = [slice(None)] * spec.rank
        sl_b = [slice(None)] * spec.rank
        sl_a[ax] = slice(1, None)
        sl_b[ax] = slice(None, -1)
        shift_lo[tuple(sl_a)] = m1.inside[tuple(sl_b)]
        shift_hi[tuple(sl_b)] = m1.inside[tuple(sl_a)]
        shift_lo[tuple([slice(None)] * ax + [slice(0, 1)])] = False
        shift_hi[tuple([slice(None)] * ax + [slice(-1, None)])] = False
        inner1 &= shift_lo & shift_hi
    escapes = core & ~inner1
    pairs = []
    if escapes.any():
        flat_idx = {tuple(i): n for n, i in enumerate(np.argwhere(m2.inside))}
        for idx in np.argwhere(escapes):
            n = flat_idx[tuple(idx)]
            pairs.append((tuple(int(v) for v in idx), tuple(map(float, worst[n]))))
        raise CoreError(
            f"{len(pairs)} core nodes escape the level-1 erosion interior", pairs)
    return CoreReport(core, cone, spec, checked=len(nodes), shifts=ws)


# ---------------------------------------------------------------------------
# exhaustion profiles

@dataclass(eq=False)
class ExhaustionProfile:
    """Convex nondecreasing piecewise-linear profile p, stored as breakpoints
    with per-segment slopes and evaluated as a max of affine pieces.

    The max-of-affines evaluation is monotone in floating point (positive
    slopes, then max), so t <= t' implies p(t) <= p(t') bit-for-bit; equal
    inputs give bit-equal outputs.  Seam arguments downstream rely on this.
    """

    breaks: np.ndarray
    values: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        self.breaks = np.asarray(self.breaks, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.slopes = np.asarray(self.slopes, dtype=np.float64)
        if not (len(self.breaks) == len(self.values) == len(self.slopes)):
            raise ValueError("breaks, values, slopes must align")
        if np.any(np.diff(self.slopes) < -1e-12):
            raise ValueError("profile slopes must be nondecreasing")
        if np.any(self.slopes < 0):
            raise ValueError("profile must be nondecreasing")

    def intercepts(self) -> np.ndarray:
        return self.values - self.slopes * self.breaks

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        c = self.intercepts()
        vals = c + self.slopes * t[..., None]
        return np.max(vals, axis=-1)


def choose_profile(phi1: ScalarField, d: ScalarField, k_max: int = 8,
                   headroom: float = 1.0, levels: int = 32,
                   anchor_quantile: float = 0.9,
                   anchor: tuple | None = None) -> ExhaustionProfile:
    """Profile p with p(t) >= sup{phi1 on {d <= t}} + t at the breakpoints.

    Built greedily left to right with nondecreasing slopes, so p is convex
    and keeps its interior values as small as the constraints allow.  A
    headroom anchor lifts p by k_max + headroom above sup phi1 from the
    anchor_quantile level of d onward; that is what lets obstacles glued at
    level k stay equal to rho' - k on the outer shell.

    An explicit ``anchor=(t, v)`` replaces the quantile anchor with the
    requirement p(t) >= v.  Callers that know where the outer shell sits
    use this to pin the lift exactly there.
    """
    if phi1.spec != d.spec:
        raise ValueError("phi1 and d live on different grids")
    ins = phi1.inside() & d.inside()
    pv = phi1.values[ins]
    dv = d.values[ins]
    if not np.all(np.isfinite(pv)):
        raise ValueError("phi1 must be finite (bounded on sublevel sets)")
    if not np.all(np.isfinite(dv)):
        raise ValueError("d must be finite on inside nodes")
    order = np.argsort(dv, kind="stable")
    dv_s = dv[order]
    run_max = np.maximum.accumulate(pv[order])
    qs = np.linspace(0.0, 1.0, levels)
    ts = np.unique(np.quantile(dv_s, qs))
    idx = np.searchsorted(dv_s, ts, side="right") - 1
    g = run_max[np.clip(idx, 0, len(dv_s) - 1)] + ts

    if anchor is not None:
        t_anchor, v_anchor = float(anchor[0]), float(anchor[1])
    else:
        t_anchor = float(np.quantile(dv_s, anchor_quantile))
        v_anchor = float(pv.max()) + k_max + headroom
    ts = np.append(ts, t_anchor)
    g = np.append(g, v_anchor)
    order2 = np.argsort(ts, kind="stable")
    ts, g = ts[order2], g[order2]

    breaks = [ts[0]]
    values = [g[0]]
    slopes = []
    cur = 0.0
    for j in range(1, len(ts)):
        dt = ts[j] - breaks[-1]
        if dt <= 1e-12:
            values[-1] = max(values[-1], g[j])
            continue
        need = (g[j] - values[-1]) / dt
        cur = max(cur, need, 0.0)
        breaks.append(ts[j])
        values.append(values[-1] + cur * dt)
        slopes.append(cur)
    slopes.append(max(cur, 1.0))  # keep growing past the last breakpoint
    prof = ExhaustionProfile(np.array(breaks), np.array(values), np.array(slopes))
    pv_check = prof(ts)
    if np.any(pv_check + 1e-9 < g):
        raise AssertionError("profile failed its own majorant constraint")
    return prof


def build_exhaustion_fields(domain: CapDomain, spec: GridSpec):
    """d = -log dist(., bd Omega) and d' = -log dist(., bd U) on the grid.

    Shares one ellipse-distance evaluation, so d >= d' holds exactly and
    d == d' bit-for-bit wherever the ellipsoid is the nearest boundary part.
    """
    coords = spec.meshgrid()
    inside = domain.inside_fn(*coords)
    mask = mask_from_inside(inside)
    pts = np.stack([c[inside] for c in coords], axis=1)
    dist_om, dist_u = domain.boundary_distance_split(pts)
    # strict float membership can leave a node at zero computed distance
    # (sums of squares rounding to just under 1); clamp at ulp scale so the
    # log stays finite and such nodes read as deep shell nodes
    dist_om = np.maximum(dist_om, 1e-16)
    dist_u = np.maximum(dist_u, 1e-16)
    d = np.zeros(spec.shape)
    dp = np.zeros(spec.shape)
    d[inside] = -np.log(dist_om)
    dp[inside] = -np.log(dist_u)
    # guard the 1-ulp monotonicity of log: d must dominate d'
    d[inside] = np.maximum(d[inside], dp[inside])
    return ScalarField(spec, d, mask), ScalarField(spec, dp, mask)


# ---------------------------------------------------------------------------
# descriptor files

def write_domain(path, domain: CapDomain, spec: GridSpec = None, epsilon: float = None):
    lines = [f"C = {domain.C!r}", f"rank = {domain.rank}",
             f"F.kind = {domain.graph.kind}"]
    if domain.graph.kind == "pwl":
        xs, ys = domain.graph.params
        body = ";".join(f"{x!r}:{y!r}" for x, y in zip(xs, ys))
    else:
        body = ",".join(repr(v) for v in domain.graph.params)
    lines.append(f"F.params = {body}")
    if spec is not None:
        lines.append("grid.shape = " + ",".join(str(s) for s in spec.shape))
        lines.append("grid.origin = " + ",".join(repr(x) for x in spec.origin))
        lines.append("grid.spacing = " + ",".join(repr(x) for x in spec.spacing))
    if epsilon is not None:
        lines.append(f"epsilon = {epsilon!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


_DOMAIN_KEYS = {"C", "rank", "F.kind", "F.params",
                "grid.shape", "grid.origin", "grid.spacing", "epsilon"}


def read_domain(path):
    """Parse a domain descriptor; returns (CapDomain, GridSpec|None, epsilon|None)."""
    kv = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key = value")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in _DOMAIN_KEYS:
                raise ValueError(f"{path}:{ln}: unknown key {key!r}")
            kv[key] = val.strip()
    if "C" not in kv or "F.kind" not in kv or "F.params" not in kv:
        raise ValueError(f"{path}: C, F.kind, F.params are required")
    C = float(kv["C"])
    kind = kv["F.kind"]
    if kind == "const":
        graph = const_graph(C, float(kv["F.params"]))
    elif kind == "abs":
        c, s, a0 = (float(v) for v in kv["F.params"].split(","))
        graph = abs_graph(C, c, s, a0)
    elif kind == "pwl":
        xs, ys = [], []
        for part in kv["F.params"].split(";"):
            xstr, _, ystr = part.partition(":")
            xs.append(float(xstr))
            ys.append(float(ystr))
        graph = pwl_graph(C, xs, ys)
    else:
        raise ValueError(f"{path}: unknown F.kind {kind!r}")
    rank = int(kv.get("rank", 2))
    domain = CapDomain(graph, rank=rank)
    spec = None
    if "grid.shape" in kv:
        shape = tuple(int(s) for s in kv["grid.shape"].split(","))
        origin = tuple(float(s) for s in kv["grid.origin"].split(","))
        spacing = tuple(float(s) for s in kv["grid.spacing"].split(","))
        spec = GridSpec(shape, origin, spacing)
    eps = float(kv["epsilon"]) if "epsilon" in kv else None
    return domain, spec, eps
