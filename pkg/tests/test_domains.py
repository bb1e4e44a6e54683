import numpy as np
import pytest

from pshlab.domains import (CapDomain, Cone, CoreError, ExhaustionProfile,
                            abs_graph, build_exhaustion_fields, choose_profile,
                            compact_core, const_graph, erosion_set, hat_F,
                            lipschitz_estimate, pwl_graph, random_graph,
                            read_domain, write_domain)
from pshlab.grid import ScalarField, build_field


def flat_cap(C=1.0, c=3.0):
    return CapDomain(const_graph(C, c), rank=2)


# -- the modified graph ------------------------------------------------------

def test_hat_flat_graph_center_takes_arc():
    assert hat_F(const_graph(1.0, 3.0), 0.0) == 5.0


def test_hat_high_graph_at_rim():
    assert hat_F(const_graph(1.0, 4.0), 1.0) == 4.0


def test_hat_branch_crossing_at_four_fifths():
    # 5C sqrt(1-t^2) = 3C at t = 4/5
    g = const_graph(1.0, 3.0)
    assert hat_F(g, 0.8) == pytest.approx(3.0, abs=1e-12)
    assert hat_F(g, 0.79) > 3.0
    assert hat_F(g, 0.81) == 3.0


def test_hat_rejects_outside_base():
    with pytest.raises(ValueError):
        hat_F(const_graph(1.0, 3.0), 1.2)


def test_hat_dominates_both_branches():
    g = abs_graph(0.7, 2.5, 0.6, -0.3)
    t = np.linspace(-1.0, 1.0, 2001)
    hat = hat_F(g, t)
    arc = 5 * 0.7 * np.sqrt(np.clip(1 - t * t, 0, None))
    assert (hat >= g(t) - 1e-15).all()
    assert (hat >= arc - 1e-15).all()
    on = g(t) >= arc
    assert np.array_equal(hat[on], g(t)[on])


def test_membership_flips_across_upper_boundary():
    dom = flat_cap()
    t = np.linspace(-0.95, 0.95, 41)
    ub = dom.upper_boundary(t)
    below = np.stack([t, ub - 1e-6], axis=1)
    above = np.stack([t, ub + 1e-6], axis=1)
    assert dom.membership(below).all()
    assert not dom.membership(above).any()


# -- graph validation --------------------------------------------------------

def test_range_breach_is_hard_error():
    with pytest.raises(ValueError, match="range"):
        const_graph(1.0, 2.9)
    with pytest.raises(ValueError, match="range"):
        const_graph(1.0, 4.1)


def test_lipschitz_breach_is_hard_error():
    with pytest.raises(ValueError, match="Lipschitz"):
        pwl_graph(1.0, [-1.0, -0.9, 1.0], [3.0, 3.5, 3.0])


# -- lipschitz_estimate ------------------------------------------------------

def test_estimate_exact_on_linear():
    got = lipschitz_estimate(lambda t: 2.5 * t + 1.0, (-1.0, 1.0))
    assert got == pytest.approx(2.5, abs=1e-9)


def test_estimate_zero_on_constant():
    assert lipschitz_estimate(lambda t: np.full_like(np.asarray(t, float), 4.0),
                              (0.0, 1.0)) == 0.0


def test_estimate_rejects_degenerate_region():
    with pytest.raises(ValueError):
        lipschitz_estimate(lambda t: t, (1.0, 1.0))


def test_flat_graph_attains_twenty_thirds():
    # the slope sup of hat F for F = 3C sits at the interior kink |a| = 4/5
    dom = flat_cap()
    got = lipschitz_estimate(dom.hat, (-0.8, 0.8))
    assert 20.0 / 3.0 - 0.05 <= got <= 20.0 / 3.0 + 0.05


def test_random_graphs_respect_the_bound():
    rng = np.random.default_rng(3)
    for _ in range(10):
        dom = CapDomain(random_graph(1.0, rng), rank=2)
        got = lipschitz_estimate(dom.hat, (-0.8, 0.8))
        assert got <= 20.0 / 3.0 + 0.05


def test_c_prime_below_seven_c():
    dom = CapDomain(abs_graph(1.0, 3.5, 0.8, 0.1), rank=2)
    assert dom.c_prime() < 7.0


# -- distances ---------------------------------------------------------------

def test_distance_at_origin_matches_brute_force():
    # nearest boundary part from the origin is the ellipse a-semi-axis
    dom = flat_cap()
    th = np.linspace(0, 2 * np.pi, 400001)
    ell = np.stack([np.cos(th), 5 * np.sin(th)], axis=1)
    ell = ell[ell[:, 1] < 3.0]
    a = np.linspace(-1, 1, 400001)
    gr = np.stack([a, np.full_like(a, 3.0)], axis=1)
    gr = gr[gr[:, 0] ** 2 + (gr[:, 1] / 5.0) ** 2 < 1.0]
    brute = min(np.linalg.norm(ell, axis=1).min(),
                np.linalg.norm(gr, axis=1).min())
    assert dom.distance_to_boundary(np.zeros(2)) == pytest.approx(brute,
                                                                  abs=1e-8)


def test_dprime_at_center_is_log_of_small_semiaxis():
    for C in (1.0, 0.1):
        dom = flat_cap(C, 3.0 * C)
        spec = dom.default_spec(65)
        _, dp = build_exhaustion_fields(dom, spec)
        want = -np.log(min(1.0, 5.0 * C))
        assert dp.values[32, 32] == pytest.approx(want, abs=1e-9)


def test_distance_rejects_outside_point():
    with pytest.raises(ValueError):
        flat_cap().distance_to_boundary(np.array([0.0, 10.0]))


def test_exhaustion_d_dominates_dprime():
    dom = flat_cap()
    d, dp = build_exhaustion_fields(dom, dom.default_spec(97))
    ins = d.inside()
    assert (d.values[ins] >= dp.values[ins]).all()
    assert np.isfinite(d.values[ins]).all()


# -- erosion -----------------------------------------------------------------

def test_erosion_empty_cone_is_identity():
    dom = flat_cap()
    spec = dom.default_spec(65)
    inside = build_field(spec, lambda x, y: np.zeros(x.shape),
                         inside_fn=dom.inside_fn).inside()
    m = erosion_set(dom, dom.theorem_cone(0.0), 1, spec)
    assert np.array_equal(m.inside, inside)


def test_erosion_levels_nest():
    dom = flat_cap()
    spec = dom.default_spec(65)
    inside = build_field(spec, lambda x, y: np.zeros(x.shape),
                         inside_fn=dom.inside_fn).inside()
    cone = dom.theorem_cone(0.3)
    m1 = erosion_set(dom, cone, 1, spec)
    m2 = erosion_set(dom, cone, 2, spec)
    assert (m2.inside <= m1.inside).all()
    assert (m1.inside <= inside).all()
    assert m2.inside.sum() < m1.inside.sum() < inside.sum()


def test_erosion_monotone_in_epsilon():
    dom = flat_cap()
    spec = dom.default_spec(65)
    small = erosion_set(dom, dom.theorem_cone(0.1), 2, spec)
    large = erosion_set(dom, dom.theorem_cone(0.3), 2, spec)
    assert (large.inside <= small.inside).all()


def test_erosion_matches_per_node_membership():
    # direct oracle: shift every node by every hull point, query membership
    dom = flat_cap()
    spec = dom.default_spec(33)
    cone = dom.theorem_cone(0.4)
    m1 = erosion_set(dom, cone, 1, spec)
    hull = cone.hull_points(spec.spacing)
    xs, ys = spec.meshgrid()
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    want = dom.membership(pts)
    for w in hull:
        if not w.any():
            continue
        want &= dom.membership(pts + w)
    assert np.array_equal(m1.inside.ravel(), want)


def test_erosion_warns_on_foreign_slope():
    dom = flat_cap(0.2, 0.7)
    with pytest.warns(UserWarning, match="7C"):
        erosion_set(dom, Cone(depth=0.1, slope=1.0, kind="theorem"), 1,
                    dom.default_spec(33))


def test_erosion_level_validated():
    dom = flat_cap()
    with pytest.raises(ValueError):
        erosion_set(dom, dom.theorem_cone(0.1), 3, dom.default_spec(33))


# -- compact core ------------------------------------------------------------

def core_at(dom, spec, eps):
    cone = dom.theorem_cone(eps)
    m1 = erosion_set(dom, cone, 1, spec)
    m2 = erosion_set(dom, cone, 2, spec)
    return compact_core(dom, cone, (m1, m2))


def test_core_certifies_and_grows_toward_the_flanks():
    dom = flat_cap(0.2, 0.7)
    spec = dom.default_spec(129)
    xs, _ = spec.meshgrid()
    sizes = []
    spans = []
    for eps in (0.4, 0.2, 0.1):
        rep = core_at(dom, spec, eps)
        assert not rep.violations
        sizes.append(int(rep.core.sum()))
        spans.append(float(np.abs(xs[rep.core]).max()))
    assert sizes[0] < sizes[1] < sizes[2]
    # growth is toward the ellipse flanks (the bd U side)
    assert spans[0] < spans[1] < spans[2]


def test_core_error_when_margin_under_grid():
    dom = flat_cap(0.2, 0.7)
    with pytest.raises(CoreError):
        core_at(dom, dom.default_spec(129), 0.05)


def test_core_error_when_cone_exits_domain():
    dom = flat_cap(0.2, 0.7)
    with pytest.raises(CoreError, match="empty"):
        core_at(dom, dom.default_spec(65), 3.0)


# -- exhaustion profile ------------------------------------------------------

def test_profile_majorizes_zero_input():
    dom = flat_cap()
    spec = dom.default_spec(65)
    d, _ = build_exhaustion_fields(dom, spec)
    phi1 = ScalarField(spec, np.zeros(spec.shape), d.mask)
    prof = choose_profile(phi1, d)
    ins = d.inside()
    for t in np.linspace(d.values[ins].min(),
                         np.quantile(d.values[ins], 0.999), 25):
        assert prof(np.asarray(t)) >= t - 1e-9


def test_profile_majorizes_growing_input():
    dom = flat_cap()
    spec = dom.default_spec(65)
    d, _ = build_exhaustion_fields(dom, spec)
    phi1 = ScalarField(spec, 0.5 * d.values, d.mask)
    prof = choose_profile(phi1, d)
    ins = d.inside()
    dv = d.values[ins]
    for t in np.quantile(dv, np.linspace(0.0, 0.999, 25)):
        sup = dv[dv <= t].max()
        assert prof(np.asarray(t)) >= 0.5 * sup + t - 1e-9


def test_profile_convexity_enforced():
    with pytest.raises(ValueError):
        ExhaustionProfile(np.array([0.0, 1.0]), np.array([0.0, 2.0]),
                          np.array([2.0, 1.0]))
    prof = ExhaustionProfile(np.array([0.0, 1.0]), np.array([0.0, 1.0]),
                             np.array([1.0, 3.0]))
    assert (np.diff(prof.slopes) >= 0).all()


# -- persistence and sampling ------------------------------------------------

def test_domain_descriptor_round_trip(tmp_path):
    dom = CapDomain(abs_graph(0.5, 1.8, 0.3, 0.2), rank=2)
    spec = dom.default_spec(33)
    path = tmp_path / "dom.txt"
    write_domain(path, dom, spec, epsilon=0.125)
    got, spec2, eps = read_domain(path)
    assert got.graph.kind == "abs"
    assert got.graph.C == 0.5
    assert got.graph.params == dom.graph.params
    assert spec2 == spec
    assert eps == 0.125


def test_random_graph_reproducible_and_admissible():
    a = random_graph(1.0, np.random.default_rng(11))
    b = random_graph(1.0, np.random.default_rng(11))
    assert a.kind == b.kind and a.params == b.params
    kinds = {random_graph(1.0, np.random.default_rng(s)).kind
             for s in range(30)}
    assert kinds == {"const", "abs", "pwl"}
