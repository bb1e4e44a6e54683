import numpy as np
import pytest

from pshlab.domains import Cone
from pshlab.grid import GridSpec, ScalarField, build_field
from pshlab.subharmonic import (ModulusOfContinuity, cone_shift_check,
                                measured_modulus, mollify_interior,
                                submean_defect, sup_convolution,
                                sup_convolution_brute)

SPEC = GridSpec(origin=(-1.0, -1.0), spacing=(2 / 128, 2 / 128),
                shape=(129, 129))


def tiny_modulus(v=1e-9):
    t = np.linspace(1e-4, 1.0, 32)
    return ModulusOfContinuity(t, np.full(32, v))


# -- sub-mean-value defects --------------------------------------------------

def test_harmonic_field_has_mean_value_equality():
    f = build_field(SPEC, lambda x, y: x * x - y * y)
    rep = submean_defect(f, mode="subharmonic", radius=0.1)
    assert abs(rep.worst_defect) <= 1e-9


def test_square_norm_defect_is_minus_r_squared():
    f = build_field(SPEC, lambda x, y: x * x + y * y)
    rep = submean_defect(f, mode="subharmonic", radius=0.1)
    assert rep.worst_defect == pytest.approx(-0.01, abs=2e-4)
    assert rep.above_tolerance == 0


def test_superharmonic_log_pole_flagged():
    f = build_field(SPEC, lambda x, y: -np.log(
        np.maximum(np.hypot(x, y), 1e-300)))
    rep = submean_defect(f, mode="subharmonic", radius=0.1)
    assert rep.worst_defect > 0.01
    assert rep.above_tolerance > 0


def test_submean_rejects_radius_larger_than_grid():
    f = build_field(SPEC, lambda x, y: x)
    with pytest.raises(ValueError, match="testable"):
        submean_defect(f, radius=5.0)


# -- mollification -----------------------------------------------------------

def test_mollify_preserves_constants():
    f = build_field(SPEC, lambda x, y: np.full(x.shape, 2.5))
    m = mollify_interior(f, 0.1)
    assert (m.values[m.inside()] == 2.5).all()


def test_mollify_dominates_subharmonic_input():
    f = build_field(SPEC, lambda x, y: x * x + y * y)
    m = mollify_interior(f, 0.1)
    ins = m.inside()
    assert (m.values[ins] >= f.values[ins] - 1e-12).all()


def test_mollify_log_pole_matches_radial_quadrature():
    with np.errstate(divide="ignore"):
        f = build_field(SPEC, lambda x, y: np.log(np.hypot(x, y)))
    assert f.values[64, 64] == -np.inf
    sigma = 0.25
    m = mollify_interior(f, sigma)
    got = m.values[64, 64]
    # int (1-(t/s)^2)^3 t log t dt / int (1-(t/s)^2)^3 t dt = log s - 25/24
    assert np.isfinite(got)
    assert got == pytest.approx(np.log(sigma) - 25 / 24, abs=0.05)


def test_mollify_monotone_in_input():
    fu = build_field(SPEC, lambda x, y: x * x)
    fv = build_field(SPEC, lambda x, y: x * x + np.abs(y))
    mu = mollify_interior(fu, 0.2)
    mv = mollify_interior(fv, 0.2)
    ins = mu.inside()
    assert (mu.values[ins] <= mv.values[ins] + 1e-12).all()


def test_mollify_commutes_with_constants():
    fu = build_field(SPEC, lambda x, y: x * x + y * y)
    fc = build_field(SPEC, lambda x, y: x * x + y * y + 1.0)
    mu = mollify_interior(fu, 0.15)
    mc = mollify_interior(fc, 0.15)
    ins = mu.inside()
    assert np.abs(mc.values[ins] - mu.values[ins] - 1.0).max() <= 1e-12


def test_mollify_decreases_with_sigma_on_subharmonic():
    f = build_field(SPEC, lambda x, y: x * x + y * y)
    wide = mollify_interior(f, 0.3)
    narrow = mollify_interior(f, 0.15)
    both = wide.inside() & narrow.inside()
    slack = 2 * SPEC.spacing[0]
    assert (wide.values[both] >= narrow.values[both] - slack).all()


def test_mollify_rejects_kernel_wider_than_domain():
    f = build_field(SPEC, lambda x, y: x)
    with pytest.raises(ValueError, match="empty"):
        mollify_interior(f, 3.0)


# -- sup-convolution ---------------------------------------------------------

def test_sup_convolution_constant_shift():
    f = build_field(SPEC, lambda x, y: np.full(x.shape, 2.5))
    s = sup_convolution(f, 4.0)
    assert (s.values[s.inside()] == 2.75).all()


def test_sup_convolution_fixes_lipschitz_functions():
    # slope 0.56 < k and min value > -k: Pasch-Hausdorff leaves u + 1/k
    f = build_field(SPEC, lambda x, y: 0.5 * x + 0.25 * y)
    s = sup_convolution(f, 8.0)
    ins = s.inside()
    assert np.abs(s.values[ins] - f.values[ins] - 0.125).max() == 0.0


def test_sup_convolution_two_candidate_oracle():
    spec = GridSpec(origin=(-1.0, -1.0), spacing=(2 / 64, 2 / 64),
                    shape=(65, 65))
    base = build_field(spec, lambda x, y: np.zeros(x.shape))
    vals = np.full(spec.shape, -1.0)
    vals[32, 32] = 0.0
    f = ScalarField(spec, vals, base.mask)
    s = sup_convolution(f, 3.0)
    xs, ys = spec.meshgrid()
    want = np.maximum(-3.0 * np.hypot(xs, ys), -1.0) + 1 / 3
    assert np.abs(s.values - want).max() == 0.0


def test_sup_convolution_decreasing_in_k_and_above_input():
    rng = np.random.default_rng(7)
    vals = rng.normal(size=SPEC.shape)
    f = ScalarField(SPEC, vals,
                    build_field(SPEC, lambda x, y: x).mask)
    prev = None
    for k in (1.0, 2.0, 4.0, 8.0):
        s = sup_convolution(f, k)
        assert (s.values >= f.values).all()
        if prev is not None:
            assert (s.values <= prev.values).all()
        prev = s


def test_sup_convolution_fast_matches_brute():
    spec = GridSpec(origin=(0.0, 0.0), spacing=(0.05, 0.05), shape=(21, 21))
    rng = np.random.default_rng(5)
    f = ScalarField(spec, rng.normal(size=spec.shape),
                    build_field(spec, lambda x, y: x).mask)
    for k in (0.5, 3.0):
        a = sup_convolution(f, k)
        b = sup_convolution_brute(f, k)
        assert np.array_equal(a.values, b.values)


# -- cone-shift comparison ---------------------------------------------------

def cone_and_base(spec):
    cone = Cone(depth=0.4, slope=2.0, kind="theorem")
    base = np.zeros(spec.shape, dtype=bool)
    base[20:45, 30:45] = True
    return cone, base


def test_cone_shift_accepts_decay_along_axis():
    # cone shifts have negative last coordinate, so +y falls along them
    spec = GridSpec(origin=(-1.0, -1.0), spacing=(2 / 64, 2 / 64),
                    shape=(65, 65))
    cone, base = cone_and_base(spec)
    f = build_field(spec, lambda x, y: y.copy())
    rep = cone_shift_check(f, cone, tiny_modulus(), base)
    assert rep.worst_defect <= 0
    assert rep.above_tolerance == 0


def test_cone_shift_accepts_one_lipschitz_with_linear_modulus():
    spec = GridSpec(origin=(-1.0, -1.0), spacing=(2 / 64, 2 / 64),
                    shape=(65, 65))
    cone, base = cone_and_base(spec)
    t = np.linspace(1e-4, 1.0, 32)
    f = build_field(spec, lambda x, y: np.hypot(x, y))
    rep = cone_shift_check(f, cone, ModulusOfContinuity(t, t.copy()), base)
    assert rep.worst_defect <= 0
    assert rep.above_tolerance == 0


def test_cone_shift_catches_jump_with_witness():
    spec = GridSpec(origin=(-1.0, -1.0), spacing=(2 / 64, 2 / 64),
                    shape=(65, 65))
    cone, base = cone_and_base(spec)
    f = build_field(spec, lambda x, y: np.where(y < -0.2, 5.0, 0.0))
    rep = cone_shift_check(f, cone, tiny_modulus(), base)
    assert rep.worst_defect == pytest.approx(5.0, abs=1e-8)
    assert rep.above_tolerance > 0
    assert base[rep.worst_node]
    assert rep.worst_offset[-1] < 0


def test_cone_shift_exit_policy():
    spec = GridSpec(origin=(-1.0, -1.0), spacing=(2 / 64, 2 / 64),
                    shape=(65, 65))
    cone, _ = cone_and_base(spec)
    everything = np.ones(spec.shape, dtype=bool)
    f = build_field(spec, lambda x, y: y.copy())
    with pytest.raises(ValueError, match="exits"):
        cone_shift_check(f, cone, tiny_modulus(), everything, on_exit="error")
    rep = cone_shift_check(f, cone, tiny_modulus(), everything,
                           on_exit="skip")
    assert rep.skipped > 0
    assert rep.worst_defect <= 0


# -- empirical modulus -------------------------------------------------------

def test_measured_modulus_nondecreasing_and_bounded():
    f = build_field(SPEC, lambda x, y: np.hypot(x, y))
    mod = measured_modulus(f, f.inside(), t_max=0.5)
    assert (np.diff(mod.vals) >= 0).all()
    assert (mod.vals <= mod.ts * 1.01 + 1e-12).all()
    assert mod.vanishes_at_zero(1e-6)


def test_modulus_gate_rejects_constant_offset():
    mod = ModulusOfContinuity(np.array([0.1, 0.2]), np.array([1.0, 1.0]))
    assert not mod.vanishes_at_zero(1e-6)
