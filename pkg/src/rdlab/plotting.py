"""Figure rendering for CLI reports (non-interactive backend, PNG files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "savefig.dpi": 120,
}
plt.rcParams.update(STYLE)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _figure():
    return plt.subplots()


def norms(traj, path):
    fig, ax = _figure()
    t = traj.log["time"]
    for key, label in (("l2", "L2"), ("linf", "max"), ("h1", "H1 seminorm")):
        ax.plot(t, traj.log[key], label=label)
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("norm")
    ax.legend()
    return _save(fig, path)


def profiles(fields, labels, path):
    """Nodal profiles (1D) or the first field as an image (2D)."""
    fig, ax = _figure()
    dom = fields[0].domain
    if dom.dim == 1:
        x = dom.axes()[0]
        for u, lab in zip(fields, labels):
            ax.plot(x, u.nodal, label=lab)
        ax.set_xlabel("x")
        ax.legend(fontsize=7)
    else:
        i = int(np.argmax([np.abs(u.nodal).max() for u in fields]))
        im = ax.imshow(fields[i].nodal[(...,) + (0,) * (dom.dim - 2)].T, origin="lower",
                       extent=(0, dom.lengths[0], 0, dom.lengths[1]))
        fig.colorbar(im, ax=ax)
        ax.set_title(labels[i])
    return _save(fig, path)


def sample_projection(coords, kinds, path):
    """Scatter of sample points on the first two mode coordinates."""
    fig, ax = _figure()
    kinds = np.asarray(kinds)
    for kind, marker in (("manifold-shoot", "."), ("equilibrium", "o")):
        sel = kinds == kind
        if np.any(sel):
            ax.plot(coords[sel, 0], coords[sel, 1], marker, ms=2 if marker == "." else 6,
                    ls="none", label=kind)
    ax.set_xlabel("mode 1")
    ax.set_ylabel("mode 2")
    ax.legend()
    return _save(fig, path)


def rung_quotients(ms, quotients, envelope, path):
    fig, ax = _figure()
    ax.plot(ms, quotients, ".", alpha=0.4, label="rung quotient")
    grid = np.unique(ms)
    ax.plot(grid, [envelope(m) for m in grid], "-", label="fitted envelope")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("m")
    ax.set_ylabel("quotient")
    ax.legend()
    return _save(fig, path)


def distance_histories(times_list, dist_list, path):
    fig, ax = _figure()
    for t, d in zip(times_list, dist_list):
        ax.plot(t, np.maximum(d, 1e-16), lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("distance to equilibria")
    return _save(fig, path)


def box_counts(eps, counts, window, slope, path):
    fig, ax = _figure()
    eps = np.asarray(eps)
    counts = np.asarray(counts)
    ax.loglog(1 / eps, counts, "o", label="n_eps")
    if len(window) and np.isfinite(slope):
        w = np.asarray(window)
        sel = np.isin(eps, w)
        c0 = np.exp(np.mean(np.log(counts[sel]) - slope * np.log(1 / w)))
        ax.loglog(1 / w, c0 * (1 / w) ** slope, "-", label=f"slope {slope:.3f}")
    ax.set_xlabel("1/eps")
    ax.set_ylabel("occupied cells")
    ax.legend()
    return _save(fig, path)


def dimension_search(L, spectrum, path):
    """delta(t, N) against t for the leading N, with the 1/sqrt2 threshold."""
    from .dimension import DELTA_MAX, contraction_delta
    fig, ax = _figure()
    t = np.geomspace(1e-3, 10, 200)
    for N in range(1, min(8, len(spectrum) - 1) + 1):
        lam = spectrum[N + 1]
        ax.plot(t, [contraction_delta(L, lam, s) for s in t], label=f"N={N}")
    ax.axhline(DELTA_MAX, color="k", ls="--", lw=0.8)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("delta(t, N)")
    ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)
