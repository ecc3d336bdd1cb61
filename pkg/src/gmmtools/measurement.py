"""Measurement systems modeled by a joint mixture over (measurand, observable).

Typical flow::

    curve = CurveSpec.from_expression("x-0.2*x^2", 0.0, 1.0, 0.0025)
    data = simulate_device(curve, 1000, SeededStream(7))
    model = fit_device(data, 10, EmConfig(k=10, seed=7))
    posterior = posterior_from_observation(model, 0.5)
"""

from dataclasses import dataclass, replace
import math

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import ndtr

from .algebra import condition
from .core import BlockIndex, GaussianMixture
from .errors import DimensionError, DisjointSupportError, ValidationError
from .expr import compile_curve
from .fitting import Dataset, EmConfig, FitReport, as_points, em_fit, select_model
from .sampling import sample_points, standard_normals

__all__ = [
    "CurveSpec",
    "MeasurementModel",
    "ConditionalStats",
    "Box",
    "Predicate",
    "QcEstimate",
    "simulate_device",
    "fit_device",
    "conditional_stats",
    "validation_norms",
    "posterior_from_observation",
    "product_samples",
    "propagate_product",
    "qc_probability",
]


@dataclass(frozen=True)
class CurveSpec:
    """Scalar device curve y = f(x) + w on [lo, hi] with w ~ N(0, noise_var)."""

    f: object
    lo: float
    hi: float
    noise_var: float
    expression: str = None

    def __post_init__(self):
        problems = []
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            problems.append(f"range [{self.lo}, {self.hi}] must be finite with lo < hi")
        if not self.noise_var > 0:
            problems.append("noise variance must be positive")
        if problems:
            raise ValidationError(problems)

    @classmethod
    def from_expression(cls, text, lo, hi, noise_var):
        return cls(compile_curve(text), float(lo), float(hi), float(noise_var), text)


def simulate_device(curve, n, stream):
    """n pairs (x, y): x uniform on the curve range, y = f(x) + Gaussian noise.

    Consumes n uniforms for x, then n Box-Muller pairs for the noise.
    """
    if n < 1:
        raise ValidationError("n must be at least 1")
    x = curve.lo + (curve.hi - curve.lo) * stream.uniforms(n)
    w = math.sqrt(curve.noise_var) * standard_normals(stream, n, 1)[:, 0]
    y = np.asarray(curve.f(x), dtype=float) + w
    return Dataset(np.column_stack([x, y]), seed=stream.seed)


@dataclass(frozen=True)
class MeasurementModel:
    """Joint mixture p(x, y); ``blocks.x_dims`` are measurands, ``blocks.y_dims`` observables."""

    joint: GaussianMixture
    blocks: BlockIndex
    fit: FitReport = None

    def __post_init__(self):
        self.blocks.check(self.joint.dim)


def fit_device(data, k, cfg=None, criterion="bic", measurand_dims=(0,)):
    """Fit the joint mixture of a device from (x, y) data.

    ``k`` is either a component count or a list of candidates, in which case
    the candidate minimizing ``criterion`` ("aic" or "bic") is kept.
    """
    x = as_points(data)
    if x.shape[1] < 2:
        raise DimensionError("device data needs at least one measurand and one observable column")
    blocks = BlockIndex.complement(x.shape[1], [i for i in range(x.shape[1]) if i not in measurand_dims])
    if np.ndim(k) == 0:
        cfg = replace(cfg, k=int(k)) if cfg is not None else EmConfig(k=int(k))
        report = em_fit(x, cfg)
    else:
        sel = select_model(x, k, cfg)
        best = sel.best_bic if criterion == "bic" else sel.best_aic
        report = sel.reports[best]
    return MeasurementModel(report.model, blocks, report)


@dataclass(frozen=True)
class ConditionalStats:
    """E(Y | X = x) and V(Y | X = x) along a grid of measurand values.

    ``mean`` has shape (n, dy) and ``covariance`` (n, dy, dy); rows where the
    grid point lies outside the model support are NaN and ``flagged``.
    """

    x: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    flagged: np.ndarray

    @property
    def variance(self):
        return np.diagonal(self.covariance, axis1=1, axis2=2)


def conditional_stats(model, x_grid):
    """Moments of the observable given each measurand value on ``x_grid``."""
    grid = np.asarray(x_grid, dtype=float)
    dx = len(model.blocks.x_dims)
    pts = grid.reshape(-1, dx)
    dy = len(model.blocks.y_dims)
    given_x = BlockIndex(model.blocks.y_dims, model.blocks.x_dims)
    mean = np.full((pts.shape[0], dy), np.nan)
    cov = np.full((pts.shape[0], dy, dy), np.nan)
    flagged = np.zeros(pts.shape[0], dtype=bool)
    for n, xv in enumerate(pts):
        try:
            mom = condition(model.joint, given_x, xv).moments()
        except DisjointSupportError:
            flagged[n] = True
            continue
        mean[n], cov[n] = mom.mean, mom.covariance
    return ConditionalStats(grid, mean, cov, flagged)


def validation_norms(model, curve, n_grid=201):
    """L2 norms over the curve range of E(Y|X) - f and V(Y|X) - noise variance.

    Integrals use the trapezoid rule on ``n_grid`` equally spaced points.
    """
    xs = np.linspace(curve.lo, curve.hi, n_grid)
    st = conditional_stats(model, xs)
    e = st.mean[:, 0] - curve.f(xs)
    v = st.variance[:, 0] - curve.noise_var
    return math.sqrt(trapezoid(e * e, xs)), math.sqrt(trapezoid(v * v, xs))


def posterior_from_observation(model, y_star):
    """Measurement result p(x | y*) as a mixture over the measurand block."""
    y_star = np.atleast_1d(np.asarray(y_star, dtype=float))
    return condition(model.joint, model.blocks, y_star)


def product_samples(gx, gy, n, stream):
    """n Monte Carlo draws of X * Y: n draws from gx first, then n from gy."""
    if gx.dim != 1 or gy.dim != 1:
        raise DimensionError("product propagation needs one-dimensional inputs")
    x = sample_points(stream, gx, n)
    y = sample_points(stream, gy, n)
    return x * y


def propagate_product(gx, gy, n_mc, stream, k=None, cfg=None):
    """Fit a mixture to the distribution of X * Y for independent X, Y.

    The product has no closed form, so it is sampled by forward Monte Carlo
    and fitted by EM.  ``k`` defaults to K_X * K_Y, the number of distinct
    products when every component is a point mass.  Without ``cfg`` a
    single EM run of at most 200 iterations is used, seeded from ``stream``.
    """
    z = product_samples(gx, gy, int(n_mc), stream)
    k = gx.n_components * gy.n_components if k is None else int(k)
    if cfg is None:
        cfg = EmConfig(k=k, max_iters=200, restarts=0, seed=int(stream.raw(1)[0]))
    else:
        cfg = replace(cfg, k=k)
    return em_fit(z, cfg)


@dataclass(frozen=True)
class Box:
    """Axis-aligned acceptance region; infinite bounds are allowed."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValidationError("box bounds must be vectors of equal length")
        if np.any(lo > hi):
            raise ValidationError("box bounds must satisfy lo <= hi")
        object.__setattr__(self, "lo", tuple(lo.tolist()))
        object.__setattr__(self, "hi", tuple(hi.tolist()))

    @property
    def dim(self):
        return len(self.lo)

    def contains(self, points):
        p = np.asarray(points, dtype=float)
        return np.all((p >= np.array(self.lo)) & (p <= np.array(self.hi)), axis=1)


@dataclass(frozen=True)
class Predicate:
    """General acceptance set given by a vectorized membership function."""

    member: object
    dim: int

    def contains(self, points):
        return np.asarray(self.member(np.asarray(points, dtype=float)), dtype=bool)


@dataclass(frozen=True)
class QcEstimate:
    """Monte Carlo acceptance probability with its binomial standard error.

    ``closed_form`` is filled for boxes when every component covariance is
    diagonal (the box probability then factorizes into normal CDFs).
    """

    estimate: float
    standard_error: float
    closed_form: float = None

    def __iter__(self):
        return iter((self.estimate, self.standard_error))


def _box_probability(g, box):
    lo, hi = np.array(box.lo), np.array(box.hi)
    sd = np.sqrt(np.diagonal(g.covariances, axis1=1, axis2=2))
    per_dim = ndtr((hi - g.means) / sd) - ndtr((lo - g.means) / sd)
    return float(g.weights @ np.prod(per_dim, axis=1))


def qc_probability(g, region, n_mc, stream):
    """Probability that X ~ g falls into the acceptance region, by Monte Carlo."""
    if region.dim != g.dim:
        raise DimensionError(f"region dimension {region.dim} does not match mixture dimension {g.dim}")
    n_mc = int(n_mc)
    if n_mc < 1:
        raise ValidationError("n_mc must be at least 1")
    inside = np.count_nonzero(region.contains(sample_points(stream, g, n_mc)))
    p = inside / n_mc
    se = math.sqrt(p * (1.0 - p) / n_mc)
    closed = None
    if isinstance(region, Box):
        off = g.covariances * (1 - np.eye(g.dim))
        if not np.any(off):
            closed = _box_probability(g, region)
    return QcEstimate(p, se, closed)
