import numpy as np
import pytest

from pshlab.grid import (FieldFormatError, GridSpec, ScalarField, build_field,
                         cone_fraction_mc, cone_solid_angle_fraction,
                         interpolate, mask_from_inside, read_field,
                         sphere_average, sphere_measure, sphere_sample,
                         write_field)
from pshlab.domains import Cone


def unit_square(n=17):
    h = 1.0 / (n - 1)
    return GridSpec((n, n), (0.0, 0.0), (h, h))


def test_node_coordinates_reproduce_exactly():
    spec = GridSpec((5, 9), (-1.0, 2.5), (0.25, 0.125))
    xs, ys = spec.meshgrid()
    assert xs[3, 0] == -1.0 + 3 * 0.25
    assert ys[0, 7] == 2.5 + 7 * 0.125


def test_spec_validation():
    with pytest.raises(ValueError):
        GridSpec((2, 5), (0.0, 0.0), (0.1, 0.1))
    with pytest.raises(ValueError):
        GridSpec((5, 5), (0.0, 0.0), (0.1, 0.0))


def test_build_field_constant():
    f = build_field(unit_square(5), lambda x, y: np.full(x.shape, 7.0))
    assert (f.values == 7.0).all()
    assert f.inside().all()


def test_build_field_log_pole_sentinel():
    # -inf allowed only at the isolated pole node
    spec = unit_square(5)
    pole = np.array([0.5, 0.5])

    def ev(x, y):
        with np.errstate(divide="ignore"):
            return np.log(np.hypot(x - pole[0], y - pole[1]))

    f = build_field(spec, ev)
    assert f.values[2, 2] == -np.inf
    assert np.isfinite(np.delete(f.values.ravel(), 12)).all()


def test_build_field_rejects_plus_inf_and_nan():
    spec = unit_square(5)
    with pytest.raises(ValueError):
        build_field(spec, lambda x, y: np.where(x > 0.9, np.inf, 0.0))
    with pytest.raises(ValueError):
        build_field(spec, lambda x, y: np.full(x.shape, np.nan))


def test_build_field_mask_matches_predicate():
    spec = GridSpec((9, 9), (-2.0, -2.0), (0.5, 0.5))
    inside = lambda x, y: np.hypot(x, y) < 1.0
    f = build_field(spec, lambda x, y: np.zeros(x.shape), inside_fn=inside)
    xs, ys = spec.meshgrid()
    want = np.hypot(xs, ys) < 1.0
    assert (f.inside() == want).all()


def test_sphere_average_constant():
    f = build_field(unit_square(33), lambda x, y: np.full(x.shape, 3.25))
    s = sphere_sample(np.array([0.5, 0.5]), 0.2, n=48)
    total, mean_a, mean_b, alpha = sphere_average(f, s)
    assert total == pytest.approx(3.25, abs=1e-12)
    assert mean_b == pytest.approx(3.25, abs=1e-12)


def test_circular_mean_of_log_is_log_radius():
    # exact circular mean of log|x - P| around P; interpolation error O(h^2)
    n = 257
    spec = unit_square(n)
    pole = np.array([0.5, 0.5])

    def ev(x, y):
        with np.errstate(divide="ignore"):
            return np.log(np.hypot(x - pole[0], y - pole[1]))

    f = build_field(spec, ev)
    r = 0.25
    s = sphere_sample(pole, r, n=128)
    total, _, _, _ = sphere_average(f, s)
    assert total == pytest.approx(np.log(r), abs=5e-4)


def test_circular_mean_odd_function_vanishes():
    f = build_field(GridSpec((33, 33), (-1.0, -1.0), (1 / 16, 1 / 16)),
                    lambda x, y: x.copy())
    s = sphere_sample(np.zeros(2), 0.5, n=64)
    total, _, _, _ = sphere_average(f, s)
    assert abs(total) < 1e-12


def test_sector_partition_identity():
    # alpha*mean_A + (1-alpha)*mean_B = mean_total, all spheres and cones
    rng = np.random.default_rng(7)
    f = build_field(GridSpec((65, 65), (-1.0, -1.0), (1 / 32, 1 / 32)),
                    lambda x, y: np.sin(3 * x) + y ** 2)
    for _ in range(10):
        c = rng.uniform(-0.4, 0.4, size=2)
        r = rng.uniform(0.05, 0.3)
        cone = Cone(depth=1.0, slope=rng.uniform(0.3, 3.0), kind="lemma",
                    ball_radius=1.0)
        apex = c + np.array([0.0, r * rng.uniform(0.2, 0.9)])
        s = sphere_sample(c, r, n=96, cone=cone, apex=apex)
        total, mean_a, mean_b, alpha = sphere_average(f, s)
        assert 0.0 <= alpha <= 1.0
        assert total == pytest.approx(alpha * mean_a + (1 - alpha) * mean_b,
                                      abs=1e-10)


def test_sphere_sample_weights_sum_to_measure():
    for m, n in ((2, 64), (3, 24), (4, 12)):
        s = sphere_sample(np.zeros(m), 1.5, n=n)
        assert s.weights.sum() == pytest.approx(sphere_measure(m, 1.5),
                                                rel=1e-10)


def test_sphere_average_rejects_exiting_node():
    f = build_field(unit_square(17), lambda x, y: np.zeros(x.shape))
    s = sphere_sample(np.array([0.5, 0.5]), 0.9, n=32)
    with pytest.raises(ValueError):
        sphere_average(f, s)


def test_cone_fraction_halfspace_is_half():
    for m in (2, 3, 4):
        assert cone_solid_angle_fraction(0.0, m) == pytest.approx(0.5,
                                                                  abs=1e-12)


def test_cone_fraction_plane_quarter():
    assert cone_solid_angle_fraction(1.0, 2) == pytest.approx(0.25,
                                                              abs=1e-12)


def test_cone_fraction_space_cap():
    want = (1.0 - np.sqrt(2.0) / 2.0) / 2.0
    assert cone_solid_angle_fraction(1.0, 3) == pytest.approx(want, abs=1e-6)


def test_cone_fraction_monte_carlo_agrees():
    got = cone_fraction_mc(1.0, 3, samples=10 ** 5, seed=0)
    want = (1.0 - np.sqrt(2.0) / 2.0) / 2.0
    assert got == pytest.approx(want, abs=0.02)


def test_cone_fraction_decreasing_in_slope():
    for m in (2, 3):
        vals = [cone_solid_angle_fraction(b, m)
                for b in (0.0, 0.5, 1.0, 2.0, 5.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


def test_cone_fraction_rejects_negative_slope():
    with pytest.raises(ValueError):
        cone_solid_angle_fraction(-0.1, 2)


def test_quadrature_refinement_converges():
    # the interpolated field is piecewise-bilinear, so the circle integrand
    # has kinks about h/r apart; once n resolves them, doubling the node
    # count shrinks refinement differences like n^-2
    f = build_field(GridSpec((65, 65), (-1.0, -1.0), (1 / 32, 1 / 32)),
                    lambda x, y: np.exp(2 * x) * np.cos(5 * y))
    avgs = [sphere_average(f, sphere_sample(np.zeros(2), 0.7, n=n))[0]
            for n in (1024, 2048, 4096)]
    d1 = abs(avgs[1] - avgs[0])
    d2 = abs(avgs[2] - avgs[1])
    assert d1 < 1e-5
    assert d2 < d1 / 3.0


def test_field_round_trip_bit_exact(tmp_path):
    spec = GridSpec((9, 7), (-1.0, 0.25), (0.125, 0.5))
    vals = np.arange(63, dtype=np.float64).reshape(9, 7) * np.pi
    vals[4, 3] = -np.inf
    inside = np.ones((9, 7), dtype=bool)
    inside[0, :] = False
    f = ScalarField(spec, vals, mask_from_inside(inside))
    path = tmp_path / "f.pshf"
    write_field(f, path)
    g = read_field(path)
    assert g.spec == spec
    assert np.array_equal(g.values, vals)
    assert np.array_equal(g.mask, f.mask)


def test_corrupted_magic_is_structured_error(tmp_path):
    f = build_field(unit_square(5), lambda x, y: np.zeros(x.shape))
    path = tmp_path / "f.pshf"
    write_field(f, path)
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FieldFormatError):
        read_field(path)


def test_truncated_payload_is_structured_error(tmp_path):
    f = build_field(unit_square(5), lambda x, y: np.zeros(x.shape))
    path = tmp_path / "f.pshf"
    write_field(f, path)
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(FieldFormatError):
        read_field(path)


def test_interpolate_multilinear_exact_on_affine():
    f = build_field(unit_square(9), lambda x, y: 2 * x - 3 * y + 1)
    pts = np.array([[0.33, 0.47], [0.01, 0.99], [0.5, 0.5]])
    got = interpolate(f, pts)
    want = 2 * pts[:, 0] - 3 * pts[:, 1] + 1
    assert got == pytest.approx(want, abs=1e-12)
