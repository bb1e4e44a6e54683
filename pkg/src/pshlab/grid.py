"""Rectilinear grids, masked scalar fields and sphere quadrature.

Axis-aligned grids with exact node coordinates (``origin + index * spacing``,
never accumulated), masked fields with an inside/outside/band tagging, a small
binary field format for persistence, and deterministic sphere quadrature with
cone-sector tagging.  Everything here is plain numpy; all node orderings and
quadrature weights are fixed so repeated runs are bit-identical.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

OUTSIDE = 0
INSIDE = 1
BAND = 2

_MAGIC = b"PSHF1"


class FieldFormatError(Exception):
    """Raised when a field file has a bad header or truncated payload."""


@dataclass(frozen=True)
class GridSpec:
    """Rectilinear grid: per-axis shape, origin and spacing.

    Node ``i = (i_0, ..., i_{m-1})`` sits at ``origin[j] + i_j * spacing[j]``.
    """

    shape: tuple
    origin: tuple
    spacing: tuple

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        origin = tuple(float(x) for x in self.origin)
        spacing = tuple(float(x) for x in self.spacing)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        if not (len(shape) == len(origin) == len(spacing)):
            raise ValueError("shape, origin, spacing must have equal rank")
        if any(s < 3 for s in shape):
            raise ValueError(f"every axis needs >= 3 nodes, got {shape}")
        if any(not np.isfinite(h) or h <= 0 for h in spacing):
            raise ValueError(f"spacings must be positive, got {spacing}")
        if any(not np.isfinite(x) for x in origin):
            raise ValueError(f"origin must be finite, got {origin}")

    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.shape))

    def axis(self, j: int) -> np.ndarray:
        """Coordinates along axis j, computed as origin + i * spacing."""
        return self.origin[j] + np.arange(self.shape[j]) * self.spacing[j]

    def meshgrid(self) -> list:
        """Coordinate arrays of full grid shape, one per axis."""
        axes = [self.axis(j) for j in range(self.rank)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def min_spacing(self) -> float:
        return float(min(self.spacing))


@dataclass
class ScalarField:
    """Grid samples plus node mask (OUTSIDE / INSIDE / BAND).

    Values are finite on inside nodes except that -inf is tolerated at
    isolated inside nodes (logarithmic poles).  Values at OUTSIDE nodes are
    never read; they are stored as 0.
    """

    spec: GridSpec
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.values.shape != self.spec.shape:
            raise ValueError("values shape does not match grid spec")
        if self.mask.shape != self.spec.shape:
            raise ValueError("mask shape does not match grid spec")

    def inside(self) -> np.ndarray:
        """Boolean array: nodes in the INSIDE region (including BAND)."""
        return self.mask != OUTSIDE

    def interior(self) -> np.ndarray:
        """Boolean array: INSIDE nodes that are not BAND."""
        return self.mask == INSIDE

    def copy_with(self, values=None, mask=None) -> "ScalarField":
        v = self.values.copy() if values is None else np.asarray(values, dtype=np.float64)
        m = self.mask.copy() if mask is None else np.asarray(mask, dtype=np.uint8)
        return ScalarField(self.spec, v, m)


def mask_from_inside(inside: np.ndarray) -> np.ndarray:
    """Mask array from a boolean inside indicator.

    INSIDE nodes with an axis-adjacent outside node (the array edge counts
    as outside) are tagged BAND.
    """
    inside = np.asarray(inside, dtype=bool)
    mask = np.where(inside, INSIDE, OUTSIDE).astype(np.uint8)
    # a node is interior only if all its axis neighbours are inside
    interior = inside.copy()
    for ax in range(inside.ndim):
        lo = np.ones_like(inside)
        hi = np.ones_like(inside)
        sl_lo = [slice(None)] * inside.ndim
        sl_hi = [slice(None)] * inside.ndim
        sl_lo[ax] = slice(1, None)
        sl_hi[ax] = slice(None, -1)
        lo[tuple(sl_lo)] = inside[tuple(sl_hi)]
        hi[tuple(sl_hi)] = inside[tuple(sl_lo)]
        lo[tuple([slice(None)] * ax + [slice(0, 1)])] = False
        hi[tuple([slice(None)] * ax + [slice(-1, None)])] = False
        interior &= lo & hi
    mask[inside & ~interior] = BAND
    return mask


def build_field(spec: GridSpec, fn, inside_fn=None) -> ScalarField:
    """Sample a pointwise function into a masked field.

    Parameters
    ----------
    spec : GridSpec
    fn : callable
        Called with one coordinate array per axis (broadcasting), returns
        values.  -inf is legal at isolated inside nodes; any other
        non-finite value is rejected with the offending node index.
    inside_fn : callable, optional
        Same calling convention, returns a boolean membership array.  When
        omitted the whole grid is inside.
    """
    coords = spec.meshgrid()
    if inside_fn is None:
        inside = np.ones(spec.shape, dtype=bool)
    else:
        inside = np.asarray(inside_fn(*coords), dtype=bool)
        if inside.shape != spec.shape:
            raise ValueError("inside_fn returned wrong shape")
    values = np.asarray(fn(*coords), dtype=np.float64)
    if values.shape != spec.shape:
        values = np.broadcast_to(values, spec.shape).astype(np.float64)
    mask = mask_from_inside(inside)
    bad = inside & ~np.isfinite(values) & ~np.isneginf(values)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"non-finite value (not -inf) at inside node {idx}")
    neg = inside & np.isneginf(values)
    if neg.any():
        # poles must be isolated: no two axis-adjacent -inf nodes
        for ax in range(spec.rank):
            a = [slice(None)] * spec.rank
            b = [slice(None)] * spec.rank
            a[ax] = slice(1, None)
            b[ax] = slice(None, -1)
            if (neg[tuple(a)] & neg[tuple(b)]).any():
                raise ValueError("-inf values must sit at isolated nodes")
    out = np.where(inside, values, 0.0)
    return ScalarField(spec, out, mask)


# ---------------------------------------------------------------------------
# binary field format
#
# magic "PSHF1"; little-endian u32 rank; per axis u64 shape, f64 origin,
# f64 spacing; f64 values row-major; one u8 mask byte per node.

def write_field(field: ScalarField, path) -> None:
    spec = field.spec
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", spec.rank))
        for j in range(spec.rank):
            fh.write(struct.pack("<Qdd", spec.shape[j], spec.origin[j], spec.spacing[j]))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(field.mask, dtype=np.uint8).tobytes())


def read_field(path) -> ScalarField:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != _MAGIC:
        raise FieldFormatError(f"bad magic {data[:5]!r}")
    off = 5
    if len(data) < off + 4:
        raise FieldFormatError("truncated header")
    (rank,) = struct.unpack_from("<I", data, off)
    off += 4
    if not 1 <= rank <= 8:
        raise FieldFormatError(f"implausible rank {rank}")
    shape, origin, spacing = [], [], []
    for _ in range(rank):
        if len(data) < off + 24:
            raise FieldFormatError("truncated axis header")
        s, o, h = struct.unpack_from("<Qdd", data, off)
        off += 24
        shape.append(s)
        origin.append(o)
        spacing.append(h)
    n = int(np.prod(shape))
    need = off + 8 * n + n
    if len(data) != need:
        raise FieldFormatError(f"payload size {len(data)} != expected {need}")
    values = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape)
    mask = np.frombuffer(data, dtype=np.uint8, count=n, offset=off + 8 * n).reshape(shape)
    if not np.isin(mask, [OUTSIDE, INSIDE, BAND]).all():
        raise FieldFormatError("mask bytes outside {0,1,2}")
    try:
        spec = GridSpec(tuple(shape), tuple(origin), tuple(spacing))
    except ValueError as exc:
        raise FieldFormatError(str(exc)) from exc
    return ScalarField(spec, values.astype(np.float64), mask.copy())


# ---------------------------------------------------------------------------
# multilinear interpolation

def interpolate(field: ScalarField, points: np.ndarray, check_inside=True) -> np.ndarray:
    """Multilinear interpolation of a field at physical points.

    points has shape (N, rank).  Every interpolation corner that carries
    nonzero weight must be an inside node; violations raise with the first
    offending point.
    """
    spec = field.spec
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != spec.rank:
        raise ValueError(f"points must have {spec.rank} columns")
    t = (pts - np.array(spec.origin)) / np.array(spec.spacing)
    i0 = np.floor(t).astype(np.int64)
    hi = np.array(spec.shape, dtype=np.int64) - 1
    oob = (i0 < 0) | (i0 + 1 > hi)
    # points exactly on the top node of an axis are pulled into the last cell
    top = (i0 >= hi) & np.isclose(t, i0, atol=0.0)
    i0 = np.where(top & (i0 >= hi), hi - 1, i0)
    oob = (i0 < 0) | (i0 + 1 > hi)
    if oob.any():
        k = int(np.argwhere(oob.any(axis=1))[0][0])
        raise ValueError(f"point {pts[k]} leaves the grid")
    frac = t - i0
    out = np.zeros(len(pts))
    for corner in range(1 << spec.rank):
        w = np.ones(len(pts))
        idx = []
        for ax in range(spec.rank):
            bit = (corner >> ax) & 1
            w = w * (frac[:, ax] if bit else 1.0 - frac[:, ax])
            idx.append(i0[:, ax] + bit)
        idx = tuple(idx)
        vals = field.values[idx]
        if check_inside:
            bad = (w > 0.0) & (field.mask[idx] == OUTSIDE)
            if bad.any():
                k = int(np.argwhere(bad)[0][0])
                raise ValueError(
                    f"interpolation stencil for point {pts[k]} touches an OUTSIDE node")
        out = out + np.where(w > 0.0, w * vals, 0.0)
    return out


# ---------------------------------------------------------------------------
# sphere quadrature

_SECTOR_B = 0
_SECTOR_A = 1


@dataclass
class SphereSample:
    """Quadrature nodes and weights on a sphere, with optional sector tags.

    Weights are positive and sum to the surface measure of the sphere.
    When a cone and apex are supplied, node x is tagged A iff x - apex lies
    in the open cone; nodes on the cone boundary count as B.
    """

    center: np.ndarray
    radius: float
    nodes: np.ndarray
    weights: np.ndarray
    tags: np.ndarray = field(default=None)

    @property
    def measure(self) -> float:
        return float(self.weights.sum())

    def alpha(self) -> float:
        """Fraction of the sphere measure carried by sector A."""
        if self.tags is None:
            raise ValueError("sample has no sector tags")
        return float(self.weights[self.tags == _SECTOR_A].sum() / self.weights.sum())


def sphere_measure(m: int, radius: float) -> float:
    """Surface measure of the (m-1)-sphere of given radius in R^m."""
    if m == 2:
        return 2.0 * np.pi * radius
    if m == 3:
        return 4.0 * np.pi * radius ** 2
    if m == 4:
        return 2.0 * np.pi ** 2 * radius ** 3
    raise ValueError(f"unsupported ambient dimension m={m}")


def sphere_sample(center, radius: float, n: int = 32, cone=None, apex=None) -> SphereSample:
    """Deterministic quadrature sample of the sphere S(center, radius).

    m = 2 uses a uniform angular grid of 4n nodes.  m = 3 uses
    Gauss-Legendre nodes in the polar cosine crossed with a uniform
    azimuth (n x 2n).  m = 4 extends the product by one more
    Gauss-Legendre factor with the sin^2 surface weight folded in.
    Raw weights are rescaled so their sum is the exact sphere measure.

    cone, when given, must expose strictly_contains(offsets); tags are
    computed against apex (defaults to the center).
    """
    center = np.asarray(center, dtype=np.float64)
    m = center.size
    if radius <= 0 or not np.isfinite(radius):
        raise ValueError(f"radius must be positive, got {radius}")
    if n < 4:
        raise ValueError("need n >= 4 quadrature resolution")
    if m == 2:
        theta = 2.0 * np.pi * (np.arange(4 * n) + 0.5) / (4 * n)
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        w = np.full(4 * n, 2.0 * np.pi * radius / (4 * n))
    elif m == 3:
        x, gw = np.polynomial.legendre.leggauss(n)  # cos(polar)
        phi = 2.0 * np.pi * (np.arange(2 * n) + 0.5) / (2 * n)
        st = np.sqrt(1.0 - x ** 2)
        dirs = np.stack([
            np.outer(st, np.cos(phi)).ravel(),
            np.outer(st, np.sin(phi)).ravel(),
            np.outer(x, np.ones_like(phi)).ravel(),
        ], axis=1)
        w = np.outer(gw, np.full_like(phi, np.pi / n)).ravel() * radius ** 2
    elif m == 4:
        xp, wp = np.polynomial.legendre.leggauss(n)      # psi in (0, pi)
        psi = 0.5 * np.pi * (xp + 1.0)
        wpsi = wp * (0.5 * np.pi) * np.sin(psi) ** 2
        xt, wt = np.polynomial.legendre.leggauss(n)      # cos(theta)
        phi = 2.0 * np.pi * (np.arange(2 * n) + 0.5) / (2 * n)
        st = np.sqrt(1.0 - xt ** 2)
        sp, cp = np.sin(psi), np.cos(psi)
        dirs = np.empty((n * n * 2 * n, 4))
        w = np.empty(n * n * 2 * n)
        k = 0
        block = 2 * n
        for i in range(n):
            for j in range(n):
                dirs[k:k + block, 0] = sp[i] * st[j] * np.cos(phi)
                dirs[k:k + block, 1] = sp[i] * st[j] * np.sin(phi)
                dirs[k:k + block, 2] = sp[i] * xt[j]
                dirs[k:k + block, 3] = cp[i]
                w[k:k + block] = wpsi[i] * wt[j] * (np.pi / n)
                k += block
        w = w * radius ** 3
    else:
        raise ValueError(f"unsupported ambient dimension m={m}")
    w = w * (sphere_measure(m, radius) / w.sum())
    nodes = center + radius * dirs
    tags = None
    if cone is not None:
        ap = center if apex is None else np.asarray(apex, dtype=np.float64)
        tags = np.where(cone.strictly_contains(nodes - ap), _SECTOR_A, _SECTOR_B)
        tags = tags.astype(np.uint8)
    return SphereSample(center, float(radius), nodes, w, tags)


def sphere_average(field: ScalarField, sample: SphereSample):
    """Weighted means of an interpolated field over a sphere sample.

    Returns (mean_total, mean_A, mean_B, alpha).  Sector means are taken
    with the sample's weights; an empty sector reports mean 0 with its
    fraction 0 (or 1), so that
    mean_total = alpha * mean_A + (1 - alpha) * mean_B always holds.
    Requires every interpolation stencil to stay inside the mask.
    """
    vals = interpolate(field, sample.nodes)
    w = sample.weights
    total = float((w * vals).sum() / w.sum())
    if sample.tags is None:
        return total, total, total, 1.0
    a = sample.tags == _SECTOR_A
    wa = float(w[a].sum())
    wb = float(w[~a].sum())
    alpha = wa / float(w.sum())
    mean_a = float((w[a] * vals[a]).sum() / wa) if wa > 0 else 0.0
    mean_b = float((w[~a] * vals[~a]).sum() / wb) if wb > 0 else 0.0
    return total, mean_a, mean_b, alpha


# ---------------------------------------------------------------------------
# cone solid angles

def cone_solid_angle_fraction(b: float, m: int) -> float:
    """Fraction of the unit sphere in R^m lying in {x_m < -b |x'|}.

    Closed form for m = 2; adaptive quadrature of the sin^(m-2) polar
    density for m >= 3.  Strictly decreasing in b, equals 1/2 at b = 0.
    """
    if not isinstance(m, (int, np.integer)) or m < 2:
        raise ValueError(f"need integer m >= 2, got {m}")
    b = float(b)
    if not np.isfinite(b) or b < 0:
        raise ValueError(f"need finite b >= 0, got {b}")
    theta_c = np.pi / 2 if b == 0 else float(np.arctan(1.0 / b))
    if m == 2:
        return theta_c / np.pi
    dens = lambda t: np.sin(t) ** (m - 2)
    num, _ = integrate.quad(dens, 0.0, theta_c, epsabs=1e-14, epsrel=1e-13)
    den, _ = integrate.quad(dens, 0.0, np.pi, epsabs=1e-14, epsrel=1e-13)
    return num / den


def cone_fraction_mc(b: float, m: int, samples: int = 10 ** 7,
                     seed: int = 0, chunk: int = 2 ** 20) -> float:
    """Monte Carlo check of cone_solid_angle_fraction.

    Isotropic gaussian directions from a seeded generator; the cone test
    is scale invariant, so the vectors are not normalized.  Fixed chunking
    and integer hit counts keep the estimate reproducible bit-for-bit.
    """
    if not isinstance(m, (int, np.integer)) or m < 2:
        raise ValueError(f"need integer m >= 2, got {m}")
    if samples < 1:
        raise ValueError("need at least one sample")
    b = float(b)
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    hits = 0
    done = 0
    while done < samples:
        n = int(min(chunk, samples - done))
        x = rng.standard_normal((n, m))
        hits += int(np.count_nonzero(
            x[:, -1] < -b * np.linalg.norm(x[:, :-1], axis=1)))
        done += n
    return hits / samples


def sector_fraction_floor(b: float, m: int, ratio: float = 0.5, n_dirs: int = 181,
                          n_quad: int = 96) -> float:
    """Worst-case sector fraction for a displaced cone apex.

    For a probe x with |x - P| = ratio * R, the sphere S(P, R) is tagged
    against the cone translated to x.  The fraction depends on the probe
    direction and can fall below the apex-centred cone fraction; this
    scans directions (by symmetry only the angle to the cone axis
    matters) and returns the minimum observed fraction.
    """
    if not 0 < ratio < 1:
        raise ValueError("displacement ratio must be in (0, 1)")
    from .domains import Cone  # local import; domains builds on grid

    cone = Cone(kind="lemma", slope=float(b), depth=np.inf)
    best = 1.0
    for gamma in np.linspace(0.0, np.pi, n_dirs):
        d = np.zeros(m)
        d[0] = np.sin(gamma)
        d[-1] = -np.cos(gamma)  # gamma = 0 points along the cone axis
        apex = ratio * d
        s = sphere_sample(np.zeros(m), 1.0, n=n_quad, cone=cone, apex=apex)
        best = min(best, s.alpha())
    return best
