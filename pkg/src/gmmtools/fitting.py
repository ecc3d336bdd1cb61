"""Maximum-likelihood fitting of Gaussian mixtures by EM, and AIC/BIC selection."""

from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np

from . import _linalg as la
from .core import GaussianMixture, component_logpdf, param_count
from .errors import DimensionError, GmmError, ValidationError
from .sampling import SeededStream, choose_components

__all__ = [
    "Dataset",
    "EmConfig",
    "FitReport",
    "ModelSelection",
    "as_points",
    "log_likelihood",
    "em_fit",
    "select_model",
]

log = logging.getLogger(__name__)

EMPTY_MASS = 1e-10
MONOTONE_SLACK = 1e-8
CHUNK = 1 << 15
# log of the smallest subnormal double; below it a density is 0.0 in floating point
LOG_UNDERFLOW = math.log(5e-324)


@dataclass(frozen=True)
class Dataset:
    """Observed points, shape (N, d), with the seed that produced them (if simulated)."""

    points: np.ndarray
    seed: int = None

    def __post_init__(self):
        object.__setattr__(self, "points", as_points(self.points))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def as_points(data):
    """Coerce a Dataset, a flat sample or an (N, d) array to a float (N, d) array."""
    if isinstance(data, Dataset):
        return data.points
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValidationError(f"data must be a nonempty (N, d) array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("data contains non-finite values")
    return x


def log_likelihood(g, data):
    """Sum of log pdf over the data points, evaluated per point in log space.

    Returns ``-inf`` when the density of some point underflows to zero in
    double precision.
    """
    x = as_points(data)
    if x.shape[1] != g.dim:
        raise DimensionError(f"data dimension {x.shape[1]} does not match mixture dimension {g.dim}")
    lp = component_logpdf(g, x)
    with np.errstate(divide="ignore"):
        lp += np.log(g.weights)
    per_point = la.logsumexp(lp, axis=1)
    if not np.all(per_point >= LOG_UNDERFLOW):
        log.warning("some points have zero density; log-likelihood is -inf")
        return -math.inf
    return float(np.sum(per_point))


@dataclass(frozen=True)
class EmConfig:
    """EM hyperparameters.

    ``loglik_tol`` defaults to 1e-8 * N and ``covariance_floor`` to 1e-6 times
    the mean per-dimension variance of the data.  The run count is
    ``restarts + 1``.
    """

    k: int
    max_iters: int = 500
    loglik_tol: float = None
    covariance_floor: float = None
    restarts: int = 4
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.k < 1:
            problems.append("k must be positive")
        if self.max_iters < 1:
            problems.append("max_iters must be positive")
        if self.loglik_tol is not None and not self.loglik_tol > 0:
            problems.append("loglik_tol must be positive")
        if self.covariance_floor is not None and not self.covariance_floor > 0:
            problems.append("covariance_floor must be positive")
        if self.restarts < 0:
            problems.append("restarts must be nonnegative")
        if problems:
            raise ValidationError(problems)


@dataclass(frozen=True)
class FitReport:
    model: GaussianMixture
    final_loglik: float
    loglik_trace: tuple
    iterations_used: int
    aic: float
    bic: float
    n_params: int
    n_points: int
    converged: bool
    rescues: int = 0
    floored: int = 0
    restart: int = 0


def _information_criteria(loglik, p, n):
    return -2.0 * loglik + 2.0 * p, -2.0 * loglik + p * math.log(n)


def _seed_means(x, k, stream):
    """D^2-weighted farthest-point seeding (k-means++ style)."""
    n = x.shape[0]
    first = min(int(stream.uniforms(1)[0] * n), n - 1)
    centers = [x[first]]
    d2 = np.sum((x - x[first]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        u = stream.uniforms(1)
        if total > 0:
            idx = int(choose_components(d2 / total, u)[0])
        else:
            idx = min(int(u[0] * n), n - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _factor(S, floor):
    """Cholesky factor of S, adding ``floor`` to the diagonal until it is usable."""
    d = S.shape[0]
    floored = False
    for _ in range(60):
        try:
            la.check_condition(S)
            return np.linalg.cholesky(S), S, floored
        except (np.linalg.LinAlgError, GmmError):
            S = S + floor * np.eye(d)
            floor *= 2.0
            floored = True
    raise la.SingularCovarianceError("covariance could not be regularized")


def _sweep(x, w, means, chol, ll_out, buf):
    """One pass over the data: E-step plus M-step sufficient statistics.

    Works chunk by chunk in a reused (K, CHUNK) buffer.  Writes per-point
    log densities into ``ll_out`` and returns the responsibility masses
    (K,), first moments (K, d) and second moments (K, d, d).  Chunks are
    reduced in index order, so the result is deterministic.
    """
    n, d = x.shape
    K = w.shape[0]
    nk = np.zeros(K)
    sx = np.zeros((K, d))
    sxx = np.zeros((K, d, d))
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    for lo in range(0, n, CHUNK):
        xc = x[lo : lo + CHUNK]
        c = xc.shape[0]
        lp = buf[:, :c]
        for i in range(K):
            lp[i] = la.gaussian_logpdf(xc, means[i], chol[i])
            lp[i] += logw[i]
        mx = lp.max(axis=0)
        lp -= mx
        np.exp(lp, out=lp)
        tot = lp.sum(axis=0)
        lp /= tot
        ll_out[lo : lo + c] = np.log(tot) + mx
        nk += lp.sum(axis=1)
        sx += lp @ xc
        if d == 1:
            sxx[:, 0, 0] += lp @ (xc[:, 0] * xc[:, 0])
        else:
            sxx += (lp[:, :, None] * xc[None]).transpose(0, 2, 1) @ xc
    return nk, sx, sxx


def _m_step(n, nk, sx, sxx):
    w = nk / n
    means = sx / nk[:, None]
    covs = sxx / nk[:, None, None] - means[:, :, None] * means[:, None, :]
    return w, means, la.symmetrize(covs)


def _run(x, cfg, stream, floor, tol, data_cov):
    n, d = x.shape
    k = cfg.k
    means = _seed_means(x, k, stream)
    w = np.full(k, 1.0 / k)
    covs = np.repeat(data_cov[None], k, axis=0)
    chol = np.empty_like(covs)
    floored = 0
    for i in range(k):
        chol[i], covs[i], f = _factor(covs[i], floor)
        floored += f
    ll_n = np.empty(n)
    buf = np.empty((k, min(n, CHUNK)))
    stats = _sweep(x, w, means, chol, ll_n, buf)
    trace = [float(ll_n.sum())]
    rescues = 0
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        prev = (w, means, covs)
        nk = stats[0]
        w, means, covs = _m_step(n, *stats)
        empty = np.flatnonzero(nk < EMPTY_MASS * n)
        if empty.size:
            # re-seed dead components at the worst-explained points
            worst = np.argsort(ll_n, kind="stable")
            for slot, i in enumerate(empty):
                means[i] = x[worst[slot % n]]
                covs[i] = data_cov
                w[i] = 1.0 / n
            w /= w.sum()
            rescues += empty.size
        step_floored = 0
        for i in range(k):
            chol[i], covs[i], f = _factor(covs[i], floor)
            step_floored += f
        floored += step_floored
        stats = _sweep(x, w, means, chol, ll_n, buf)
        ll = float(ll_n.sum())
        if (empty.size or step_floored) and ll < trace[-1] - MONOTONE_SLACK:
            # a rescue or floor is not an EM step; keep the last EM iterate
            w, means, covs = prev
            it -= 1
            log.warning("EM stopped after %d iterations: regularizing a degenerate component "
                        "lowered the log-likelihood", it)
            break
        trace.append(ll)
        if abs(trace[-1] - trace[-2]) < tol and not empty.size:
            converged = True
            break
    return w, means, covs, trace, it, converged, rescues, floored


def em_fit(data, cfg):
    """Fit a ``cfg.k``-component mixture by expectation-maximization.

    Each restart seeds the means from the data with a child stream of
    ``cfg.seed``, starts every component at the data covariance with equal
    weight, and iterates until the log-likelihood changes by less than the
    tolerance.  The restart with the highest final log-likelihood wins.

    The covariance floor is added only to M-step covariances that are not
    numerically positive definite, so ordinary iterations are exact EM
    steps and the log-likelihood trace is non-decreasing.  Components whose
    responsibility mass drops below 1e-10 N are re-seeded at the point with
    the lowest model density; such rescues are counted in the report.  A
    floored or rescued step that lowers the log-likelihood is discarded and
    the run stops at the previous iterate (reported as not converged), so the
    trace stays monotone.
    """
    x = as_points(data)
    n, d = x.shape
    if n < cfg.k:
        raise ValidationError(f"need at least k={cfg.k} points, got {n}")
    data_cov = np.atleast_2d(np.cov(x, rowvar=False, bias=True))
    mean_var = float(np.mean(np.diag(data_cov)))
    floor = cfg.covariance_floor
    if floor is None:
        floor = 1e-6 * mean_var if mean_var > 0 else 1e-12
    tol = cfg.loglik_tol if cfg.loglik_tol is not None else 1e-8 * n
    if not np.all(np.linalg.eigvalsh(data_cov) > 0):
        data_cov = data_cov + floor * np.eye(d)

    # second moments are accumulated about the data mean to limit cancellation
    shift = x.mean(axis=0)
    xc = x - shift
    root = SeededStream(cfg.seed)
    best = None
    for r in range(cfg.restarts + 1):
        run = _run(xc, cfg, root.split(r), floor, tol, data_cov)
        if best is None or run[3][-1] > best[0][3][-1]:
            best = (run, r)
    (w, means, covs, trace, it, converged, rescues, floored), r = best
    model = GaussianMixture(w, means + shift, covs)
    p = param_count(cfg.k, d)
    aic, bic = _information_criteria(trace[-1], p, n)
    return FitReport(
        model=model,
        final_loglik=trace[-1],
        loglik_trace=tuple(trace),
        iterations_used=it,
        aic=aic,
        bic=bic,
        n_params=p,
        n_points=n,
        converged=converged,
        rescues=rescues,
        floored=floored,
        restart=r,
    )


@dataclass(frozen=True)
class ModelSelection:
    """Per-candidate fit results and the K minimizing each criterion.

    ``rows`` holds one dict per candidate with keys ``k``, ``n_params``,
    ``loglik``, ``aic``, ``bic`` and ``error`` (None unless the fit failed).
    """

    rows: tuple
    best_aic: int
    best_bic: int
    reports: dict = field(default_factory=dict, repr=False)


def select_model(data, candidates, template=None):
    """Fit each candidate K and pick the minimizer of AIC and of BIC.

    A failing candidate is recorded with its error message instead of
    aborting the sweep.  Ties go to the smaller K.
    """
    x = as_points(data)
    candidates = sorted({int(k) for k in candidates})
    if not candidates:
        raise ValidationError("at least one candidate K is required")
    template = template or EmConfig(k=candidates[0])
    rows, reports = [], {}
    for k in candidates:
        try:
            rep = em_fit(x, replace(template, k=k))
        except GmmError as exc:
            rows.append(dict(k=k, n_params=param_count(k, x.shape[1]), loglik=math.nan,
                             aic=math.nan, bic=math.nan, error=str(exc)))
            continue
        reports[k] = rep
        rows.append(dict(k=k, n_params=rep.n_params, loglik=rep.final_loglik,
                         aic=rep.aic, bic=rep.bic, error=None))
    ok = [r for r in rows if r["error"] is None]
    if not ok:
        raise GmmError("every candidate fit failed: " + "; ".join(r["error"] for r in rows))
    # candidates are sorted, so min() returns the smallest K among ties
    best_aic = min(ok, key=lambda r: r["aic"])["k"]
    best_bic = min(ok, key=lambda r: r["bic"])["k"]
    return ModelSelection(tuple(rows), best_aic, best_bic, reports)
