"""A domain where boundary regularization provably fails, checked by machine.

The construction: atoms x_k in (0,1) accumulating exactly at A = {1/m} and 0,
a log potential lambda = sum c_k log|z - x_k| with certified lambda|_A >= -1/2,
discs D_k around the atoms on which lambda < -1, and the ball minus the
Hartogs-type cone K = {|z'| = |z_n|, z_n outside every D_k}.  The function
u = max{lambda(z_n), -1} inside {|z'| < |z_n|} and -1 outside is psh on the
domain, but any sequence of continuous psh-along-slices functions decreasing
to it runs into a maximum-principle contradiction near (0, 1/k); `falsify`
executes that chain mechanically against concrete candidate sequences.

Everything radial in z' is reduced to r = |z'|, so the grid is
(r, Re z_n, Im z_n).  The z_n window is centered at 1/4 with spacing
(sqrt(2)/2) * 4^-7, which places the three atoms accumulating at 1/4 on grid
nodes bit-exactly: the cone K then has genuine one-column pinholes at them,
and the slices through the pinholes are complete discs where the maximum
principle applies.

Certified bounds (the weight sum, s_k, disc radii, lambda on A) are computed
with outward-rounded interval arithmetic; float evaluation is used only for
grid fields, where the truncation tail is below double resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from mpmath import iv, mp

from .grid import GridSpec, ScalarField, mask_from_inside

mp.dps = 40
iv.dps = 40

SQRT2_HALF = math.sqrt(2.0) / 2.0

# grid constants for the standard window at 1/4: spacing is an exact power
# of two times sqrt(2)/2, so multiples of it add to 1/4 with one rounding,
# the same rounding the atom formula performs
ATOM_BASE_M = 4
ZN_SPACING = SQRT2_HALF * 4.0 ** (-7)


# ---------------------------------------------------------------------------
# the atom sequence

def build_sequence_x(count: int):
    """First `count` atoms x = 1/m + 4^-(m+j) * sqrt(2)/2, diagonal order.

    Pairs (m, j) are enumerated along diagonals m + j = s; the m = 1 row
    always lands at 1 + offset > 1 and is rejected, so the enumeration
    effectively starts at m = 2.  Every 1/m receives infinitely many atoms
    (offsets shrink geometrically in j), hence the limit set of the full
    sequence is A together with 0.
    """
    if count < 1:
        raise ValueError("need count >= 1")
    points = []
    pairs = []
    s = 2
    while len(points) < count:
        s += 1
        for m in range(1, s):
            j = s - m
            x = 1.0 / m + 4.0 ** (-(m + j)) * SQRT2_HALF
            if x >= 1.0:
                continue
            points.append(x)
            pairs.append((m, j))
            if len(points) == count:
                break
    return np.asarray(points), pairs


def _atom_value(m: int, j: int):
    return iv.mpf(1) / m + iv.mpf(4) ** (-(m + j)) * iv.sqrt(2) / 2


# ---------------------------------------------------------------------------
# the potential

@dataclass(eq=False)
class LogPotential:
    """lambda(z) = sum c_k log|z - x_k| with certified bookkeeping.

    weights carry floats for field evaluation; the interval columns
    (s_lo/s_hi, c_lo/c_hi) carry the outward-rounded versions behind the
    certificates.  tail_bound dominates sum_{k > K} c_k s_k for the
    untruncated series, so bounds on A transfer to the full potential.
    """

    points: np.ndarray
    weights: np.ndarray
    pairs: list
    s_lo: np.ndarray
    s_hi: np.ndarray
    c_lo: np.ndarray
    c_hi: np.ndarray
    cert_sum: float
    tail_bound: float

    @property
    def truncation(self) -> int:
        return len(self.points)

    @classmethod
    def from_terms(cls, points, weights) -> "LogPotential":
        """Ad-hoc potential with given terms and no certificates."""
        pts = np.asarray(points, dtype=np.float64)
        w = np.asarray(weights, dtype=np.float64)
        nan = np.full(len(pts), np.nan)
        return cls(points=pts, weights=w, pairs=[], s_lo=nan.copy(),
                   s_hi=nan.copy(), c_lo=nan.copy(), c_hi=nan.copy(),
                   cert_sum=math.nan, tail_bound=0.0)

    def value(self, z) -> float:
        """Truncated float evaluation; -inf exactly at an atom.

        The dropped tail is below 2^-K * max s, which for the default
        truncation is under double resolution at every point we evaluate.
        """
        z = complex(z)
        total = 0.0
        for xk, ck in zip(self.points, self.weights):
            d = abs(z - xk)
            if d == 0.0:
                return -math.inf
            total += ck * math.log(d)
        return total

    def value_grid(self, zs: np.ndarray) -> np.ndarray:
        d = np.abs(zs[..., None] - self.points)
        with np.errstate(divide="ignore"):
            terms = self.weights * np.log(d)
        return np.where((d == 0.0).any(axis=-1), -np.inf, terms.sum(axis=-1))

    def value_interval(self, x):
        """Certified enclosure of the full series at a real point of A.

        Valid wherever every term obeys |log|x - x_k|| <= s_k, which is the
        definition of s_k for x in A; the tail is then within +-tail_bound.
        """
        total = iv.mpf(0)
        for k in range(self.truncation):
            xk = _atom_value(*self.pairs[k])
            ck = iv.mpf([self.c_lo[k], self.c_hi[k]])
            total += ck * iv.log(abs(iv.mpf(x) - xk))
        total += iv.mpf([-self.tail_bound, self.tail_bound])
        return float(total.a), float(total.b)

    def lower_bound_on_A(self, m: int) -> float:
        lo, _ = self.value_interval(iv.mpf(1) / m)
        return lo


def _sup_log_distance(k: int, pairs: list):
    """Certified s_k = sup_m |log|1/m - x_k||, as an interval.

    The sup over m beyond ceil(2/x_k) is dominated by -log(x_k/2) because
    those 1/m sit in (0, x_k/2]; the finitely many nearer m are evaluated
    directly.  Distances are never zero (the sqrt(2)/2 offset is irrational).
    """
    xk = _atom_value(*pairs[k])
    m_cap = int(mp.ceil(2 / mp.mpf(xk.a))) + 1
    tail = -iv.log(xk / 2)
    lo, hi = tail.a, tail.b
    for m in range(1, m_cap + 1):
        d = abs(iv.mpf(1) / m - xk)
        cand = abs(iv.log(d))
        lo = max(lo, cand.a)
        hi = max(hi, cand.b)
    return iv.mpf([lo, hi])


def build_weights(points: np.ndarray, pairs: list) -> LogPotential:
    """Weights c_k = 2^-(k+1) / (1 + s_k), with the sum certificate.

    c_k s_k = 2^-(k+1) s_k/(1+s_k) < 2^-(k+1), so the full series satisfies
    sum c_k s_k <= 1/2 and lambda >= -1/2 holds term-by-term on A.  The
    recorded cert_sum is an outward-rounded upper bound over the built
    prefix plus the analytic tail.
    """
    n = len(points)
    s_lo = np.empty(n)
    s_hi = np.empty(n)
    c_lo = np.empty(n)
    c_hi = np.empty(n)
    weights = np.empty(n)
    total = iv.mpf(0)
    for k in range(n):
        s = _sup_log_distance(k, pairs)
        if not mp.isfinite(mp.mpf(s.b)):
            raise ValueError(f"atom {k} sits on the limit set; s_k is not finite")
        c = iv.mpf(2) ** (-(k + 2)) / (1 + s)
        s_lo[k], s_hi[k] = float(s.a), float(s.b)
        c_lo[k], c_hi[k] = float(c.a), float(c.b)
        weights[k] = 0.5 * (c_lo[k] + c_hi[k])
        total += c * s
    tail = mp.mpf(2) ** (-(n + 1))
    cert = float((total + iv.mpf([0, tail])).b)
    # tail of the lambda bounds on A: c_k s_k < 2^-(k+1) term-wise
    return LogPotential(points=np.asarray(points, dtype=np.float64),
                        weights=weights, pairs=list(pairs),
                        s_lo=s_lo, s_hi=s_hi, c_lo=c_lo, c_hi=c_hi,
                        cert_sum=cert, tail_bound=float(tail))


# ---------------------------------------------------------------------------
# the disc family

@dataclass(eq=False)
class DiscFamily:
    """Discs D_k around the atoms with the certificate lambda|_{D_k} <= -1.

    log_radii always holds the certified log radius; radii holds exp of it
    where that is a positive double and 0.0 where it underflows, in which
    case numeric sampling is skipped and `representable` is False.
    """

    potential: LogPotential
    radii: np.ndarray
    log_radii: np.ndarray
    representable: np.ndarray
    shrunk: np.ndarray
    rest_bounds: np.ndarray

    def contains(self, z, k: int) -> bool:
        """Exact membership used by the K test: atoms are centers, so a
        bit-equal z_n is inside its disc even when the radius underflows."""
        d = abs(complex(z) - self.potential.points[k])
        if d == 0.0:
            return True
        if self.radii[k] > 0.0:
            return d <= self.radii[k]
        return self.log_radii[k] >= math.log(d)

    def any_contains(self, z) -> bool:
        return any(self.contains(z, k) for k in range(len(self.radii)))


def _dist_to_A(x: float) -> float:
    m = max(1, int(round(1.0 / x)))
    cands = [abs(x - 1.0 / mm) for mm in (m - 1, m, m + 1, m + 2) if mm >= 1]
    cands.append(x)
    return min(cands)


def build_discs(potential: LogPotential) -> DiscFamily:
    """Radii r_k = exp(-(1 + B_k)/c_k), B_k bounding the other terms by
    c_j log 2; on D_k then lambda <= c_k log r_k + B_k = -1.

    Radii are additionally clamped under half the distance from x_k to A so
    no disc can swallow a limit point.  Most radii underflow double
    precision; those discs are kept through their log radius only.
    """
    n = potential.truncation
    log2 = iv.log(iv.mpf(2))
    radii = np.zeros(n)
    log_radii = np.empty(n)
    representable = np.zeros(n, dtype=bool)
    shrunk = np.zeros(n, dtype=bool)
    rest_bounds = np.empty(n)
    c_hi_sum = float(np.sum(potential.c_hi)) + potential.tail_bound
    for k in range(n):
        rest = iv.mpf([0, c_hi_sum - potential.c_lo[k]]) * log2
        b_hi = float(rest.b)
        rest_bounds[k] = b_hi
        log_r = -(1.0 + b_hi) / potential.c_lo[k]
        cap = math.log(_dist_to_A(potential.points[k]) / 2.0)
        if log_r > cap:
            log_r = cap
            shrunk[k] = True
        log_radii[k] = log_r
        r = math.exp(log_r)
        if r > 0.0:
            radii[k] = r
            representable[k] = True
    return DiscFamily(potential=potential, radii=radii, log_radii=log_radii,
                      representable=representable, shrunk=shrunk,
                      rest_bounds=rest_bounds)


def sample_disc_boundary(discs: DiscFamily, k: int, n: int = 64) -> np.ndarray:
    """lambda at n points of the circle |z - x_k| = r_k; requires a
    representable radius."""
    if not discs.representable[k]:
        raise ValueError(f"disc {k} radius underflows; only the log radius is kept")
    th = 2.0 * np.pi * np.arange(n) / n
    zs = discs.potential.points[k] + discs.radii[k] * np.exp(1j * th)
    return np.asarray([discs.potential.value(z) for z in zs])


def sample_disc_ray(discs: DiscFamily, k: int, n: int = 16) -> np.ndarray:
    """lambda along the center ray x_k + (i/n) r_k, i = 1..n."""
    if not discs.representable[k]:
        raise ValueError(f"disc {k} radius underflows; only the log radius is kept")
    ts = discs.radii[k] * np.arange(1, n + 1) / n
    return np.asarray([discs.potential.value(discs.potential.points[k] + t)
                       for t in ts])


# ---------------------------------------------------------------------------
# the domain

@dataclass(eq=False)
class CounterDomain:
    """Ball minus the cone K on the radial (r, Re z_n, Im z_n) grid.

    The window keeps |z_n - 1/k0| <= window_radius and |z'| <= 2/k0 with the
    ring {r = 2/k0} as the last r row.  Nodes within one r-spacing of the
    cone r = |z_n| are removed unless the sampled z_n lies in some disc;
    with the bit-exact atom placement that leaves one-column pinholes.
    """

    potential: LogPotential
    discs: DiscFamily
    k0: int
    spec: GridSpec
    inside: np.ndarray
    zn: np.ndarray
    abs_zn: np.ndarray
    window_radius: float
    atom_columns: list
    u: ScalarField = None

    @property
    def ring_row(self) -> int:
        return self.spec.shape[0] - 1


def build_domain(potential: LogPotential, discs: DiscFamily, k0: int = 4,
                 shape=(96, 96, 96)) -> CounterDomain:
    if 1.0 / k0 != float(ATOM_BASE_M) ** -1 and k0 != ATOM_BASE_M:
        raise ValueError("the standard grid window is built around 1/4; k0 must be 4")
    n_r, n_x, n_y = shape
    h = ZN_SPACING
    h_r = (2.0 / k0) / (n_r - 1)
    cx = 1.0 / k0
    # axes are built center-out so that 1/4 + (small power of 4) * sqrt(2)/2
    # rounds identically in the atom formula and in the node coordinate;
    # that is what puts the near atoms on nodes bit-exactly
    x_ax = cx + (np.arange(n_x) - n_x // 2) * h
    y_ax = (np.arange(n_y) - n_y // 2) * h
    spec = GridSpec((n_r, n_x, n_y), (0.0, float(x_ax[0]), float(y_ax[0])),
                    (h_r, h, h))
    r_ax = spec.axis(0)
    zn = x_ax[:, None] + 1j * y_ax[None, :]
    abs_zn = np.abs(zn)
    window = np.abs(zn - cx) <= (n_x // 2) * h

    # ball membership is strict but the whole window sits deep inside it
    ball = (r_ax[:, None, None] ** 2 + np.abs(zn - 1.0)[None, :, :] ** 2) < 1.0
    if not ball[:, window].all():
        raise ValueError("window leaves the ball; shrink the grid")

    in_disc = np.zeros_like(window)
    atom_columns = []
    for k, xk in enumerate(potential.points):
        d = np.abs(zn - xk)
        hit = d == 0.0
        if discs.representable[k]:
            hit |= d <= discs.radii[k]
        in_disc |= hit
        if hit.any() and abs(xk - cx) <= (n_x // 2) * h:
            ij = np.argwhere(hit)
            for i, j in ij:
                atom_columns.append((k, int(i), int(j)))
    near_cone = np.abs(r_ax[:, None, None] - abs_zn[None, :, :]) <= h_r
    removed = near_cone & ~in_disc[None, :, :]
    inside = window[None, :, :] & ~removed & np.ones((n_r, 1, 1), dtype=bool)
    dom = CounterDomain(potential=potential, discs=discs, k0=k0, spec=spec,
                        inside=inside, zn=zn, abs_zn=abs_zn,
                        window_radius=(n_x // 2) * h,
                        atom_columns=atom_columns)
    dom.u = build_u_field(dom)
    return dom


def u_counterexample(potential: LogPotential, r: float, zn,
                     discs: DiscFamily = None) -> float:
    """max{lambda(z_n), -1} inside {|z'| < |z_n|}, -1 on the rest.

    With a disc family supplied, points of the removed cone (r = |z_n| with
    z_n outside every disc) are rejected; they are not in the domain.
    """
    if r < 0:
        raise ValueError("need r >= 0")
    zn = complex(zn)
    if discs is not None and r == abs(zn) and not discs.any_contains(zn):
        raise ValueError("point lies on the removed cone; not in the domain")
    if r < abs(zn):
        return max(potential.value(zn), -1.0)
    return -1.0


def build_u_field(dom: CounterDomain) -> ScalarField:
    lam = dom.potential.value_grid(dom.zn)
    inner_val = np.maximum(lam, -1.0)
    r_ax = dom.spec.axis(0)
    in_d = r_ax[:, None, None] < dom.abs_zn[None, :, :]
    vals = np.where(in_d, inner_val[None, :, :], -1.0)
    vals = np.where(dom.inside, vals, 0.0)
    return ScalarField(dom.spec, vals, mask_from_inside(dom.inside))


# ---------------------------------------------------------------------------
# slice machinery: the radial subharmonic stencil and its envelope

def _radial_weights(n: int):
    i = np.arange(1, n - 1, dtype=np.float64)
    beta = 1.0 / (2.0 * i)
    return (1.0 - beta) / 2.0, (1.0 + beta) / 2.0


def _harmonic_coordinate(n: int) -> np.ndarray:
    """Discrete analogue of log r: the exact kernel of the radial stencil,
    used to reduce slice subharmonicity to convexity.

    The stencil at node 1 reaches the center, so the center gets the knot
    the backward recurrence assigns it, g_0 = (g_1 - w_plus g_2)/w_minus
    with beta_1 = 1/2; affine data in g then has zero defect at node 1 too.
    """
    w_minus, w_plus = _radial_weights(n)
    g = np.empty(n)
    g[1] = 0.0
    if n > 2:
        g[2] = 1.0
        g[0] = (g[1] - w_plus[0] * g[2]) / w_minus[0]
    else:
        g[0] = -3.0
    for i in range(2, n - 1):
        g[i + 1] = (g[i] - w_minus[i - 1] * g[i - 1]) / w_plus[i - 1]
    return g


def slice_defect(values: np.ndarray) -> np.ndarray:
    """Sub-mean defect of a radial profile: positive entries violate the
    discrete radial Laplacian, entry 0 tests the center rule v0 <= v1."""
    n = len(values)
    out = np.full(n, -np.inf)
    out[0] = values[0] - values[1]
    if n > 2:
        w_minus, w_plus = _radial_weights(n)
        out[1:-1] = values[1:-1] - (w_minus * values[:-2] + w_plus * values[2:])
    return out


def slice_max_principle(values: np.ndarray, bound: float,
                        tolerance: float = 1e-9):
    """Discrete maximum principle on a full radial slice.

    Returns (ok, center value) with ok true iff the center does not exceed
    `bound` plus the tolerance; refuses to conclude anything when the
    profile is not subharmonic along the slice.
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 3:
        raise ValueError("slice too short for the radial stencil")
    defect = slice_defect(values)
    worst = int(np.argmax(defect))
    if defect[worst] > tolerance:
        raise ValueError(
            f"not subharmonic on slice: defect {defect[worst]:.3e} at radial "
            f"node {worst}")
    center = float(values[0])
    return center <= bound + tolerance, center


def _lower_hull(g: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Largest convex minorant of the points (g_i, v_i), evaluated at g."""
    n = len(g)
    if n <= 2:
        return v.copy()
    hx = [g[0]]
    hy = [v[0]]
    for i in range(1, n):
        while len(hx) >= 2 and (
                (hy[-1] - hy[-2]) * (g[i] - hx[-1])
                >= (v[i] - hy[-1]) * (hx[-1] - hx[-2])):
            hx.pop()
            hy.pop()
        hx.append(g[i])
        hy.append(v[i])
    return np.interp(g, hx, hy)


def slice_envelope(values: np.ndarray, start: int, g: np.ndarray) -> np.ndarray:
    """Largest slice-subharmonic minorant of a profile on indices
    start..start+len(values)-1 of a radial column.

    For segments away from the center this is the convex hull in the
    harmonic coordinate.  A segment containing the center adds the rule
    v0 <= v1, which for a g-convex profile forces it to be nondecreasing
    outright, so there the hull is taken under the suffix minimum.
    """
    m = len(values)
    if m == 1:
        return values.copy()
    if start == 0:
        body = np.minimum.accumulate(values[::-1])[::-1]
        return _lower_hull(g[:m], body)
    return _lower_hull(g[start:start + m], values)


# ---------------------------------------------------------------------------
# candidates and the falsification chain

@dataclass(eq=False)
class Candidate:
    """Ordered list of fields on the domain grid plus declared properties.

    The declarations mirror what an approximating sequence would promise;
    `falsify` verifies each against the data before using it in the chain.
    """

    name: str
    fields: list
    continuous: bool = True
    slice_subharmonic: bool = True
    decreasing: bool = True
    above_u: bool = True


@dataclass(eq=False)
class ContradictionCertificate:
    k: int
    window_radius: float
    q0: int
    ring_max: float
    atoms: list
    y_ps: list
    centers: list
    transfer_bound: float
    spread: float
    actual_center: float
    u_value: float
    steps: dict


@dataclass(eq=False)
class Witness:
    kind: str              # "hypothesis" | "rejection" | "contradiction"
    detail: str
    node: tuple = None
    q: int = None
    certificate: ContradictionCertificate = None

    @property
    def verdict(self) -> str:
        if self.kind == "contradiction":
            return "contradiction"
        return f"{self.kind}:{self.detail}"


def _component_slices(col_mask: np.ndarray):
    idx = np.flatnonzero(col_mask)
    if len(idx) == 0:
        return
    breaks = np.flatnonzero(np.diff(idx) > 1)
    start = 0
    for b in breaks:
        yield idx[start], idx[b]
        start = b + 1
    yield idx[start], idx[-1]


def naive_candidate(dom: CounterDomain, deltas=(16, 8, 4)) -> Candidate:
    """Sup-mollification of u in the z_n plane at shrinking lattice radii,
    clamped at -1, then corrected per slice to its largest slice-subharmonic
    minorant (severed components keep their mollified values).

    The correction is what any psh-along-slices competitor must satisfy on
    the complete pinhole slices; it drags them down to the outer value -1
    while the severed slices next to them keep the high inner plateau.
    """
    lam = dom.potential.value_grid(dom.zn)
    inner = np.maximum(lam, -1.0)
    n_r, n_x, n_y = dom.spec.shape
    r_ax = dom.spec.axis(0)
    in_d = r_ax[:, None, None] < dom.abs_zn[None, :, :]
    window = dom.inside.any(axis=0)
    g = _harmonic_coordinate(n_r)
    fields = []
    for delta in deltas:
        sup2d = np.full((n_x, n_y), -np.inf)
        for di in range(-delta, delta + 1):
            for dj in range(-delta, delta + 1):
                if di * di + dj * dj > delta * delta:
                    continue
                src = np.full((n_x, n_y), -np.inf)
                xs = slice(max(0, -di), min(n_x, n_x - di))
                xt = slice(max(0, di), min(n_x, n_x + di))
                ys = slice(max(0, -dj), min(n_y, n_y - dj))
                yt = slice(max(0, dj), min(n_y, n_y + dj))
                src[xt, yt] = np.where(window[xs, ys], inner[xs, ys], -np.inf)
                sup2d = np.maximum(sup2d, src)
        vals = np.where(in_d & dom.inside, sup2d[None, :, :], -1.0)
        vals = np.where(dom.inside, vals, 0.0)
        # pinhole rows in the cone band see only other pinholes at the same
        # radius; their u is -1, so the honest sup there is -1
        band = np.abs(r_ax[:, None, None] - dom.abs_zn[None, :, :]) <= dom.spec.spacing[0]
        vals = np.where(dom.inside & band & in_d, -1.0, vals)
        out = vals.copy()
        for i in range(n_x):
            for j in range(n_y):
                col = dom.inside[:, i, j]
                if not col.any():
                    continue
                prof = vals[:, i, j]
                for a, b in _component_slices(col):
                    out[a:b + 1, i, j] = slice_envelope(prof[a:b + 1], a, g)
        fields.append(np.where(dom.inside, out, 0.0))
    return Candidate(name="naive-mollification", fields=fields)


def constant_candidate(dom: CounterDomain, value: float = -1.0) -> Candidate:
    vals = np.where(dom.inside, value, 0.0)
    return Candidate(name=f"constant({value})", fields=[vals.copy(), vals.copy()])


def clamped_candidate(dom: CounterDomain, floor: float = -0.6) -> Candidate:
    """max(u, floor): passes every hypothesis but never comes down to u on
    the ring, so the chain stops at the ring search."""
    vals = np.where(dom.inside, np.maximum(dom.u.values, floor), 0.0)
    return Candidate(name=f"clamped({floor})", fields=[vals.copy(), vals.copy()])


def shuffled_candidate(candidate: Candidate) -> Candidate:
    if len(candidate.fields) < 2:
        raise ValueError("need at least two fields to break monotonicity")
    fields = list(candidate.fields)[::-1]
    return Candidate(name=candidate.name + "/shuffled", fields=fields,
                     continuous=candidate.continuous,
                     slice_subharmonic=candidate.slice_subharmonic,
                     decreasing=candidate.decreasing,
                     above_u=candidate.above_u)


def _hypothesis_checks(candidate: Candidate, dom: CounterDomain,
                       tolerance: float):
    inside = dom.inside
    for flag, name in ((candidate.continuous, "continuity"),
                       (candidate.slice_subharmonic, "slice subharmonicity"),
                       (candidate.decreasing, "monotonicity"),
                       (candidate.above_u, "lower bound vs u")):
        if not flag:
            return Witness("hypothesis", f"{name} not declared")
    u = dom.u.values
    n_r, n_x, n_y = dom.spec.shape
    w_minus, w_plus = _radial_weights(n_r)
    for q, vals in enumerate(candidate.fields):
        if not np.isfinite(vals[inside]).all():
            node = tuple(np.argwhere(inside & ~np.isfinite(vals))[0])
            return Witness("hypothesis", "continuity", node=node, q=q)
        diff = np.where(inside, u - vals, -np.inf)
        worst = np.unravel_index(np.argmax(diff), diff.shape)
        if diff[worst] > tolerance:
            return Witness("hypothesis", "lower bound vs u",
                           node=tuple(int(t) for t in worst), q=q)
        if q + 1 < len(candidate.fields):
            nxt = candidate.fields[q + 1]
            diff = np.where(inside, nxt - vals, -np.inf)
            worst = np.unravel_index(np.argmax(diff), diff.shape)
            if diff[worst] > tolerance:
                return Witness("hypothesis", "monotonicity",
                               node=tuple(int(t) for t in worst), q=q + 1)
        ok3 = inside[:-2] & inside[1:-1] & inside[2:]
        defect = np.where(
            ok3,
            vals[1:-1] - (w_minus[:, None, None] * vals[:-2]
                          + w_plus[:, None, None] * vals[2:]),
            -np.inf)
        worst = np.unravel_index(np.argmax(defect), defect.shape)
        if defect[worst] > tolerance:
            node = (int(worst[0]) + 1, int(worst[1]), int(worst[2]))
            return Witness("hypothesis", "slice subharmonicity", node=node, q=q)
        ok0 = inside[0] & inside[1]
        d0 = np.where(ok0, vals[0] - vals[1], -np.inf)
        worst = np.unravel_index(np.argmax(d0), d0.shape)
        if d0[worst] > tolerance:
            return Witness("hypothesis", "slice subharmonicity",
                           node=(0, int(worst[0]), int(worst[1])), q=q)
    return None


def window_atoms(dom: CounterDomain):
    """Atom columns strictly inside the window, nearest to 1/k0 last."""
    cx = 1.0 / dom.k0
    cols = []
    for k, i, j in dom.atom_columns:
        xk = dom.potential.points[k]
        if abs(xk - cx) < dom.window_radius and xk != cx:
            cols.append((abs(xk - cx), k, i, j))
    cols.sort(reverse=True)
    return [(k, i, j) for _, k, i, j in cols]


def falsify(candidate: Candidate, dom: CounterDomain, k: int = None,
            tolerance: float = 1e-9, _disable_step: int = None) -> Witness:
    """Run the contradiction chain against a candidate sequence.

    Steps: (1) verify the declared hypotheses on the data; (2) find the
    first q with the candidate <= -3/4 on the outer ring, where u is -1;
    (3) maximum principle on the complete slices through the window atoms,
    forcing the centers under -3/4; (4) transfer the bound along the atoms
    to (0, 1/k) via the declared continuity, with the observed spread of
    the centers as slack; (5) compare with u(0, 1/k) >= -1/2.

    A contradiction is emitted only when all five steps ran and passed.
    `_disable_step` skips one step for mutation testing of that gate; it is
    not part of the public contract.
    """
    if k is None:
        k = dom.k0
    if k != dom.k0:
        return Witness("rejection",
                       f"grid window is built at 1/{dom.k0}, not 1/{k}; "
                       f"rebuild the domain")
    for vals in candidate.fields:
        if vals.shape != dom.inside.shape:
            raise ValueError("candidate fields do not match the domain grid")
    steps = {}
    completed = set()

    if _disable_step == 1:
        steps[1] = "disabled"
    else:
        bad = _hypothesis_checks(candidate, dom, tolerance)
        if bad is not None:
            return bad
        steps[1] = "hypotheses verified"
        completed.add(1)

    ring_row = dom.ring_row
    ring_mask = dom.inside[ring_row]
    q0 = 0
    ring_max = math.nan
    if _disable_step == 2:
        steps[2] = "disabled"
    else:
        q0 = None
        for q, vals in enumerate(candidate.fields):
            m = float(vals[ring_row][ring_mask].max())
            if m <= -0.75 + tolerance:
                q0, ring_max = q, m
                break
        if q0 is None:
            worst = float(candidate.fields[-1][ring_row][ring_mask].max())
            return Witness(
                "rejection",
                f"no candidate reaches -3/4 on the ring (last max {worst:.4f}); "
                f"the sequence does not decrease to u there")
        steps[2] = f"q0={q0} ring max {ring_max:.6f}"
        completed.add(2)

    atoms = window_atoms(dom)
    if len(atoms) < 3:
        return Witness("rejection",
                       f"only {len(atoms)} atoms inside the window; "
                       f"choose a larger k or a wider window")
    v0 = candidate.fields[q0]
    centers = []
    if _disable_step == 3:
        steps[3] = "disabled"
    else:
        for kk, i, j in atoms:
            if not dom.inside[:, i, j].all():
                return Witness("rejection",
                               f"slice through atom {kk} is not complete")
            try:
                ok, center = slice_max_principle(v0[:, i, j], -0.75,
                                                 tolerance=tolerance)
            except ValueError as err:
                return Witness("hypothesis",
                               f"slice subharmonicity at atom {kk}: {err}",
                               node=(0, i, j), q=q0)
            if not ok:
                return Witness("hypothesis",
                               f"maximum principle fails on the slice of atom "
                               f"{kk} (center {center:.4f})",
                               node=(0, i, j), q=q0)
            centers.append(center)
        steps[3] = "centers " + ", ".join(f"{c:.6f}" for c in centers)
        completed.add(3)

    spread = math.nan
    bound = math.inf
    if _disable_step == 4 or not centers:
        steps[4] = "disabled" if _disable_step == 4 else "skipped: no centers"
    else:
        spread = max(centers) - min(centers)
        bound = max(centers) + spread + tolerance
        steps[4] = f"transfer bound {bound:.6f} (spread {spread:.2e})"
        completed.add(4)

    # u at (0, 1/k): the center column of the window
    ci = int(np.argmin(np.abs(dom.spec.axis(1) - 1.0 / k)))
    cj = int(np.argmin(np.abs(dom.spec.axis(2))))
    u_val = float(dom.u.values[0, ci, cj])
    actual = float(v0[0, ci, cj])
    if _disable_step == 5:
        steps[5] = "disabled"
    elif bound <= -0.75 + tolerance and u_val >= -0.5 - tolerance:
        steps[5] = f"bound {bound:.6f} <= -3/4 < -1/2 <= u {u_val:.6f}"
        completed.add(5)
    else:
        return Witness("rejection",
                       f"chain completed without contradiction: bound "
                       f"{bound:.4f}, u(0,1/{k}) = {u_val:.4f}")

    if completed != {1, 2, 3, 4, 5}:
        missing = sorted(set(range(1, 6)) - completed)
        return Witness("rejection",
                       "chain incomplete: step "
                       + ", ".join(str(s) for s in missing) + " not verified")
    cert = ContradictionCertificate(
        k=k, window_radius=dom.window_radius, q0=q0, ring_max=ring_max,
        atoms=[kk for kk, _, _ in atoms],
        y_ps=[float(dom.potential.points[kk]) for kk, _, _ in atoms],
        centers=centers, transfer_bound=bound, spread=spread,
        actual_center=actual, u_value=u_val, steps=steps)
    return Witness(
        "contradiction",
        f"continuity forces v(0,1/{k}) <= {bound:.4f} <= -3/4, but "
        f"u(0,1/{k}) = {u_val:.4f} >= -1/2 and the candidate is declared "
        f">= u", certificate=cert)
