import time
import numpy as np
from pshlab.counterexample import (
    build_sequence_x, build_weights, build_discs, build_domain,
    naive_candidate, constant_candidate, clamped_candidate,
    shuffled_candidate, falsify, slice_max_principle, slice_defect,
    u_counterexample, sample_disc_boundary, sample_disc_ray,
    LogPotential, ZN_SPACING)

t0 = time.time()
pts, pairs = build_sequence_x(60)
print("pairs[:14] =", pairs[:14])
print("x[:6] =", [f"{x:.6f}" for x in pts[:6]])
assert all(0 < x < 1 for x in pts)
assert pairs[5] == (4, 1) and pairs[8] == (4, 2) and pairs[12] == (4, 3)

pot = build_weights(pts, pairs)
print(f"[{time.time()-t0:.2f}s] weights built")
print("s_hi[:8] =", [f"{s:.4f}" for s in pot.s_hi[:8]])
print("c[:8]    =", [f"{c:.6e}" for c in pot.weights[:8]])
print("cert_sum =", pot.cert_sum, " tail =", pot.tail_bound)
assert pot.cert_sum < 0.5
lo_on_A = [pot.lower_bound_on_A(m) for m in range(1, 31)]
print("min over m<=30 of certified lambda(1/m) lower bound:", min(lo_on_A))
assert min(lo_on_A) >= -0.5
print("lambda(1/4) float =", pot.value(0.25))
print("lambda(1/4) interval =", pot.value_interval(0.25))

discs = build_discs(pot)
rep = np.flatnonzero(discs.representable)
print(f"[{time.time()-t0:.2f}s] discs: representable idx {rep}, "
      f"radii {[f'{discs.radii[k]:.3e}' for k in rep]}")
print("log_radii[:8] =", [f"{v:.1f}" for v in discs.log_radii[:8]])
print("shrunk:", np.flatnonzero(discs.shrunk))
for k in rep:
    b = sample_disc_boundary(discs, int(k))
    r = sample_disc_ray(discs, int(k))
    print(f"  disc {k}: max boundary {b.max():.4f} max ray {r.max():.4f}")
    assert b.max() <= -1.0 and r.max() <= -1.0

# pointwise op checks
adhoc = LogPotential.from_terms([0.5], [1.0])
v = u_counterexample(adhoc, 0.0, 0.5 + np.exp(-2.0))
print("single-term u(0, 0.5+e^-2) =", v)
assert abs(v - (-1.0)) < 1e-12  # max(log e^-2, -1) = max(-2,-1) = -1
assert adhoc.value(0.5 + np.exp(-2.0)) == -2.0
for m in range(1, 31):
    assert u_counterexample(pot, 0.0, 1.0 / m) >= -0.5
try:
    u_counterexample(pot, 0.3, 0.3, discs=discs)
    raise SystemExit("K rejection missing")
except ValueError as e:
    print("K rejection:", e)
zin = pot.points[0] + discs.radii[0] / 2
print("seam at disc-0 interior: lam =", pot.value(zin),
      " u(r=|z|) =", u_counterexample(pot, abs(zin), zin, discs=discs),
      " u(r<|z|) =", u_counterexample(pot, 0.0, zin, discs=discs))

# slice_max_principle unit checks
rr = np.linspace(0, 1, 50)
ok, c = slice_max_principle(rr**2 - 1, 0.0)
print("r^2-1:", ok, c); assert ok and c == -1.0
ok, c = slice_max_principle(np.full(50, -2.0), -1.99)
assert ok and c == -2.0
try:
    slice_max_principle(-(rr**2), 0.0)
    raise SystemExit("superharmonic gate missing")
except ValueError as e:
    print("superharmonic gate:", e)

dom = build_domain(pot, discs, k0=4)
print(f"[{time.time()-t0:.2f}s] domain built")
print("atom_columns =", dom.atom_columns)
assert [(a, b, c) for a, b, c in dom.atom_columns] == \
    [(5, 64, 48), (8, 52, 48), (12, 49, 48)]
n_in = int(dom.inside.sum())
print("inside nodes:", n_in, "of", dom.inside.size)
col = dom.inside[:, 64, 48]
assert col.all(), "pinhole column must be complete"
ncol = dom.inside[:, 48, 48]
print("center column rows removed:", np.flatnonzero(~ncol))
print("u(0,1/4) =", dom.u.values[0, 48, 48])
print("u on pinhole col unique:", np.unique(dom.u.values[:, 64, 48]))
print("ring row inside count:", int(dom.inside[dom.ring_row].sum()))
assert np.all(dom.u.values[dom.ring_row][dom.inside[dom.ring_row]] == -1.0)

t1 = time.time()
naive = naive_candidate(dom)
print(f"naive built in {time.time()-t1:.2f}s")
for q, f in enumerate(naive.fields):
    print(f"  q={q}: v(0,1/4) = {f[0,48,48]:.6f}  pinhole v(0,y_p) = "
          f"{f[0,64,48]:.6f} {f[0,52,48]:.6f} {f[0,49,48]:.6f}")

t1 = time.time()
w = falsify(naive, dom)
print(f"falsify(naive) in {time.time()-t1:.2f}s ->", w.kind)
print("  detail:", w.detail)
cert = w.certificate
assert w.kind == "contradiction"
print("  cert: q0 =", cert.q0, " ring_max =", cert.ring_max)
print("  atoms:", cert.atoms, " y_ps:", [f"{y:.8f}" for y in cert.y_ps])
print("  centers:", cert.centers, " bound:", cert.transfer_bound,
      " spread:", cert.spread)
print("  actual_center:", cert.actual_center, " u_value:", cert.u_value)
for s in sorted(cert.steps):
    print("   step", s, "->", cert.steps[s])

w = falsify(constant_candidate(dom), dom)
print("constant(-1):", w.kind, "|", w.detail, "| node", w.node)
assert w.kind == "hypothesis" and "lower bound" in w.detail

w = falsify(clamped_candidate(dom), dom)
print("clamped(-0.6):", w.kind, "|", w.detail)
assert w.kind == "rejection" and "ring" in w.detail

w = falsify(shuffled_candidate(naive), dom)
print("shuffled:", w.kind, "|", w.detail, "| node", w.node, "q", w.q)
assert w.kind == "hypothesis" and "monotonicity" in w.detail

for s in range(1, 6):
    w = falsify(naive, dom, _disable_step=s)
    print(f"disable step {s}: {w.kind} | {w.detail}")
    assert w.kind != "contradiction"

print(f"total {time.time()-t0:.2f}s")
