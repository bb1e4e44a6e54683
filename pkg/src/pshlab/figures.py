"""Figure rendering for the report path (opt-in).

Everything draws through the Agg backend so runs never need a display.
Figures are diagnostic companions to the CSV output, not part of the
pass/fail contract, and are only produced when asked for.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, out_dir, name) -> str:
    path = str(out_dir / name)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def regularize_figures(seq, out_dir) -> list:
    """Approximant profiles through the graph point and their gap to the
    input, per index k."""
    u = seq.u
    spec = u.spec
    ins = u.inside()
    icol = spec.shape[0] // 2  # a = 0 column runs into the graph point
    xs = spec.axis(1)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    colsel = ins[icol]
    ax1.plot(xs[colsel], u.values[icol][colsel], "k-", lw=2, label="input")
    for e in seq.entries:
        ax1.plot(xs[colsel], e.u_hat.values[icol][colsel], lw=1,
                 label=f"k={e.k}")
    ax1.set_xlabel("x on the a = 0 line")
    ax1.set_ylabel("value")
    ax1.legend(fontsize=8)
    ax1.set_title("approximants through the graph point")
    ks = [e.k for e in seq.entries]
    sup = [float(np.max(e.u_hat.values[ins] - u.values[ins]))
           for e in seq.entries]
    eps = [e.epsilon for e in seq.entries]
    ax2.semilogy(ks, sup, "o-", label="sup(u_hat - u)")
    ax2.semilogy(ks, eps, "s--", label="erosion depth")
    ax2.set_xlabel("k")
    ax2.legend(fontsize=8)
    ax2.set_title("decay with k")
    return [_save(fig, out_dir, "regularize.png")]


def envelope_figures(problem, solution, out_dir) -> list:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for ax, fld, title in ((ax1, problem.obstacle, "obstacle"),
                           (ax2, solution.field, "envelope")):
        vals = np.where(fld.mask > 0, fld.values, np.nan)
        im = ax.imshow(vals.T, origin="lower", cmap="viridis")
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title(title)
    return [_save(fig, out_dir, "envelope.png")]


def lemma_figures(cert, out_dir) -> list:
    fig, ax = plt.subplots(figsize=(5, 4))
    ts = [p.t for p in cert.probes]
    margins = [p.margin for p in cert.probes]
    alphas = [p.alpha for p in cert.probes]
    ax.plot(ts, margins, "o", label="chain margin")
    ax.plot(ts, alphas, "x", label="sector fraction")
    ax.axhline(cert.alpha_floor, color="r", lw=0.8, label="fraction floor")
    ax.set_xlabel("probe distance t")
    ax.legend(fontsize=8)
    ax.set_title("continuity certificate probes")
    return [_save(fig, out_dir, "lemma.png")]


def counterexample_figures(dom, candidate, out_dir) -> list:
    """The potential on the real axis and the radial profiles where the
    chain bites: a pinhole column against the window center."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    xs = np.real(dom.zn[:, dom.spec.shape[2] // 2])
    lam = dom.potential.value_grid(xs.astype(complex))
    ax1.plot(xs, np.maximum(lam, -1.2), "b-", lw=1)
    ax1.axhline(-0.5, color="g", lw=0.8, label="-1/2")
    ax1.axhline(-0.75, color="orange", lw=0.8, label="-3/4")
    ax1.axhline(-1.0, color="r", lw=0.8, label="-1")
    ax1.set_xlabel("Re z_n on the real axis")
    ax1.set_title("potential through the window (clipped)")
    ax1.legend(fontsize=8)
    rr = dom.spec.axis(0)
    ci = dom.spec.shape[1] // 2
    cj = dom.spec.shape[2] // 2
    k0, i0, j0 = dom.atom_columns[-1]
    v = candidate.fields[0]
    sel_c = dom.inside[:, ci, cj]
    ax2.plot(rr[sel_c], v[sel_c, ci, cj], "o-", ms=2, label="v at 1/k")
    ax2.plot(rr, v[:, i0, j0], "s-", ms=2, label="v at pinhole y_p")
    ax2.plot(rr[sel_c], dom.u.values[sel_c, ci, cj], "k--", lw=0.8,
             label="u at 1/k")
    ax2.set_xlabel("|z'|")
    ax2.legend(fontsize=8)
    ax2.set_title("radial slices of the candidate")
    return [_save(fig, out_dir, "counterexample.png")]


def q2_figures(problem, solution, out_dir) -> list:
    return [_save_q2(problem, solution, out_dir)]


def _save_q2(problem, solution, out_dir) -> str:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    vals_f = np.where(problem.obstacle.mask > 0, problem.obstacle.values,
                      np.nan)
    vals_e = np.where(solution.field.mask > 0, solution.field.values, np.nan)
    im = ax1.imshow(vals_f.T, origin="lower", cmap="magma")
    fig.colorbar(im, ax=ax1, shrink=0.8)
    ax1.set_title("continuous obstacle f")
    im = ax2.imshow(vals_e.T, origin="lower", cmap="magma")
    fig.colorbar(im, ax=ax2, shrink=0.8)
    ax2.set_title("its envelope")
    return _save(fig, out_dir, "q2-demo.png")
