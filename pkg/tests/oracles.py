"""Independent reference computations used by the tests.

Densities come from scipy.stats and integrals from the trapezoid rule on
grids fine enough that discretization error is far below the tolerances
under test (for Gaussians the trapezoid error decays like
exp(-2 pi^2 sigma^2 / h^2)).
"""

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import multivariate_normal


def mixture_pdf(g, pts):
    pts = np.asarray(pts, dtype=float).reshape(-1, g.dim)
    out = np.zeros(pts.shape[0])
    for w, m, S in zip(g.weights, g.means, g.covariances):
        out += w * np.atleast_1d(multivariate_normal(m, S).pdf(pts))
    return out


def _min_sd(gs):
    return min(np.sqrt(np.linalg.eigvalsh(g.covariances).min()) for g in gs)


def quadrature_grid(gs, half_width=10.0, per_sd=4.0):
    """Per-axis grids spanning every component of every mixture."""
    h = _min_sd(gs) / per_sd
    d = gs[0].dim
    axes = []
    for k in range(d):
        lo = min((g.means[:, k] - half_width * np.sqrt(g.covariances[:, k, k])).min() for g in gs)
        hi = max((g.means[:, k] + half_width * np.sqrt(g.covariances[:, k, k])).max() for g in gs)
        axes.append(np.linspace(lo, hi, int(np.ceil((hi - lo) / h)) + 1))
    return axes


def integrate(values, axes):
    out = values.reshape([len(a) for a in axes])
    for ax in reversed(axes):
        out = trapezoid(out, ax, axis=-1)
    return float(out)


def _on_grid(g, axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return mixture_pdf(g, pts)


def evidence(ga, gb):
    """int pdf_a * pdf_b."""
    axes = quadrature_grid([ga, gb])
    return integrate(_on_grid(ga, axes) * _on_grid(gb, axes), axes)


def l2_distance(ga, gb):
    axes = quadrature_grid([ga, gb])
    diff = _on_grid(ga, axes) - _on_grid(gb, axes)
    return float(np.sqrt(integrate(diff * diff, axes)))


def marginal_pdf(g, keep, xs):
    """Density of coordinate ``keep`` of a 2-D mixture, by integrating the other one out."""
    drop = 1 - keep
    (t,) = quadrature_grid([g])[drop : drop + 1]
    out = np.empty(len(xs))
    for n, x in enumerate(xs):
        pts = np.empty((t.shape[0], 2))
        pts[:, keep] = x
        pts[:, drop] = t
        out[n] = trapezoid(mixture_pdf(g, pts), t)
    return out


def conditional_pdf(g, observed_dim, y_star, xs):
    """Bayes slice p(x, y*) / int p(x', y*) dx' for a 2-D mixture."""
    free = 1 - observed_dim
    (t,) = quadrature_grid([g])[free : free + 1]

    def joint(v):
        pts = np.empty((len(v), 2))
        pts[:, free] = v
        pts[:, observed_dim] = y_star
        return mixture_pdf(g, pts)

    return joint(np.asarray(xs)) / trapezoid(joint(t), t)


def ks_statistic(samples, cdf):
    x = np.sort(np.asarray(samples).ravel())
    n = x.shape[0]
    F = cdf(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))
