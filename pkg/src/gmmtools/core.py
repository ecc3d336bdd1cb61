"""Gaussian mixture value type and its basic functionals.

A mixture is stored as three read-only arrays::

    weights      (K,)
    means        (K, d)
    covariances  (K, d, d)

Instances are immutable; every operation in the package returns a new one.
"""

from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np

from . import _linalg as la
from .errors import DimensionError, ValidationError

__all__ = [
    "GaussianComponent",
    "GaussianMixture",
    "BlockIndex",
    "MomentSummary",
    "validate",
    "pdf",
    "logpdf",
    "moments",
    "gaussian_fallback",
    "affine",
    "param_count",
]

WEIGHT_TOL = 1e-9
SYMMETRY_TOL = 1e-10
JITTER = 1e-12


@dataclass(frozen=True)
class GaussianComponent:
    """One weighted multivariate normal."""

    weight: float
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class MomentSummary:
    mean: np.ndarray
    covariance: np.ndarray


def _readonly(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def _coerce(weights, means, covariances):
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    m = np.asarray(means, dtype=float)
    S = np.asarray(covariances, dtype=float)
    if m.ndim == 1 and S.ndim == 1:
        # scalar components: K means and K variances
        m = m[:, None]
        S = S[:, None, None]
    elif m.ndim == 1:
        m = m[None, :]
    if S.ndim == 2 and m.shape[0] == 1 and S.shape == (m.shape[1], m.shape[1]):
        S = S[None]
    return w, m, S


def _violations(w, m, S):
    out = []
    if w.ndim != 1 or w.shape[0] == 0:
        return ["mixture needs at least one component"]
    K = w.shape[0]
    if m.ndim != 2 or m.shape[0] != K:
        return [f"means must have shape (K={K}, d), got {m.shape}"]
    d = m.shape[1]
    if d == 0:
        return ["dimension must be positive"]
    if S.shape != (K, d, d):
        return [f"covariances must have shape ({K}, {d}, {d}), got {S.shape}"]
    if not np.all(np.isfinite(w)):
        out.append("weights must be finite")
    if not np.all(np.isfinite(m)):
        out.append("means must be finite")
    if not np.all(np.isfinite(S)):
        out.append("covariances must be finite")
        return out
    for i in np.flatnonzero(w < 0):
        out.append(f"component {i}: negative weight {w[i]:.12g}")
    total = math.fsum(w.tolist())
    if abs(total - 1.0) > WEIGHT_TOL:
        out.append(f"weights sum to {total:.12g}")
    for i in range(K):
        if w[i] == 0:
            continue
        Si = S[i]
        norm = np.linalg.norm(Si)
        if np.linalg.norm(Si - Si.T) > SYMMETRY_TOL * max(norm, np.finfo(float).tiny):
            out.append(f"component {i}: covariance not symmetric")
            continue
        if _pd_factor(la.symmetrize(Si)) is None:
            out.append(f"component {i}: covariance not positive definite")
    return out


def _pd_factor(S):
    """Cholesky factor of S, allowing a 1e-12 relative diagonal jitter; None if not PD."""
    try:
        return np.linalg.cholesky(S), S
    except np.linalg.LinAlgError:
        pass
    d = S.shape[0]
    scale = np.trace(S) / d
    if not scale > 0:
        return None
    Sj = S + JITTER * scale * np.eye(d)
    try:
        return np.linalg.cholesky(Sj), Sj
    except np.linalg.LinAlgError:
        return None


class GaussianMixture:
    """Finite mixture of multivariate normal densities.

    Parameters
    ----------
    weights : array_like, shape (K,)
        Mixture weights.  Zero weights are allowed and the corresponding
        components are dropped.  A sum within 1e-9 of one is renormalized,
        anything further off is rejected.
    means : array_like, shape (K, d)
        Component means.  For one-dimensional mixtures a flat array of K
        means is accepted together with a flat array of K variances.
    covariances : array_like, shape (K, d, d)
        Component covariances; symmetrized on construction and required to be
        positive definite.
    check : bool
        Normalize and validate.  ``check=False`` stores the arrays verbatim,
        which is only useful for feeding :func:`validate`.
    """

    def __init__(self, weights, means, covariances, *, check=True):
        w, m, S = _coerce(weights, means, covariances)
        if check:
            problems = _violations(w, m, S)
            if problems:
                raise ValidationError(problems)
            keep = w > 0
            w, m, S = w[keep], m[keep], la.symmetrize(S[keep])
            total = math.fsum(w.tolist())
            # skip when already normalized to rounding so construction is idempotent
            if w.shape[0] == 1:
                w = np.ones(1)
            elif abs(total - 1.0) > w.shape[0] * np.finfo(float).eps:
                w = w / total
            factors = []
            for i in range(w.shape[0]):
                L, S[i] = _pd_factor(S[i])
                factors.append(L)
            self.__dict__["chol"] = _readonly(np.stack(factors))
        self.weights = _readonly(w)
        self.means = _readonly(m)
        self.covariances = _readonly(S)

    @classmethod
    def gaussian(cls, mean, covariance):
        """Single-component mixture."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(covariance, dtype=float).reshape(mean.shape[0], mean.shape[0])
        return cls([1.0], mean[None], cov[None])

    @classmethod
    def from_components(cls, components):
        components = list(components)
        return cls(
            [c.weight for c in components],
            np.stack([np.atleast_1d(c.mean) for c in components]),
            np.stack([np.atleast_2d(c.covariance) for c in components]),
        )

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @cached_property
    def chol(self):
        """Lower Cholesky factors of the component covariances, shape (K, d, d)."""
        return _readonly(la.cholesky(self.covariances))

    @property
    def components(self):
        return tuple(
            GaussianComponent(float(w), m, S)
            for w, m, S in zip(self.weights, self.means, self.covariances)
        )

    def __len__(self):
        return self.n_components

    def __iter__(self):
        return iter(self.components)

    def __eq__(self, other):
        if not isinstance(other, GaussianMixture):
            return NotImplemented
        return (
            self.weights.shape == other.weights.shape
            and self.means.shape == other.means.shape
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.covariances, other.covariances)
        )

    __hash__ = None

    def allclose(self, other, rtol=1e-12, atol=1e-12):
        return (
            self.weights.shape == other.weights.shape
            and self.means.shape == other.means.shape
            and np.allclose(self.weights, other.weights, rtol=rtol, atol=atol)
            and np.allclose(self.means, other.means, rtol=rtol, atol=atol)
            and np.allclose(self.covariances, other.covariances, rtol=rtol, atol=atol)
        )

    def __repr__(self):
        return f"GaussianMixture(K={self.n_components}, d={self.dim})"

    # convenience wrappers around the module functions
    def pdf(self, x):
        return pdf(self, x)

    def logpdf(self, x):
        return logpdf(self, x)

    def moments(self):
        return moments(self)


@dataclass(frozen=True)
class BlockIndex:
    """Partition of the dimensions of a joint mixture into an X and a Y block."""

    x_dims: tuple
    y_dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "x_dims", tuple(int(i) for i in np.atleast_1d(self.x_dims)))
        object.__setattr__(self, "y_dims", tuple(int(i) for i in np.atleast_1d(self.y_dims)))

    @classmethod
    def complement(cls, dim, y_dims):
        """Blocks with the given Y dimensions and everything else as X."""
        y = tuple(int(i) for i in np.atleast_1d(y_dims))
        return cls(tuple(i for i in range(dim) if i not in y), y)

    def check(self, dim):
        x, y = set(self.x_dims), set(self.y_dims)
        problems = []
        if not self.x_dims or not self.y_dims:
            problems.append("both blocks must be nonempty")
        if len(x) != len(self.x_dims) or len(y) != len(self.y_dims):
            problems.append("block indices repeat")
        if x & y:
            problems.append(f"blocks overlap in {sorted(x & y)}")
        if x | y != set(range(dim)):
            problems.append(f"blocks do not partition dimensions 0..{dim - 1}")
        if problems:
            raise ValidationError(problems)
        return self


def validate(g):
    """List every violated mixture invariant; empty means valid.

    Works on instances built with ``check=False`` as well as on raw
    ``(weights, means, covariances)`` tuples.
    """
    if isinstance(g, GaussianMixture):
        w, m, S = g.weights, g.means, g.covariances
    else:
        w, m, S = _coerce(*g)
    return _violations(w, m, S)


def _points(g, x):
    """Normalize evaluation points to shape (n, d); also return the output shape."""
    x = np.asarray(x, dtype=float)
    d = g.dim
    if d == 1 and x.ndim <= 1:
        return x.reshape(-1, 1), x.shape
    if x.ndim == 1:
        if x.shape[0] != d:
            raise DimensionError(f"point has length {x.shape[0]}, mixture dimension is {d}")
        return x[None], ()
    if x.shape[-1] != d:
        raise DimensionError(f"points have dimension {x.shape[-1]}, mixture dimension is {d}")
    return x.reshape(-1, d), x.shape[:-1]


def component_logpdf(g, x):
    """Per-component log densities log N(x_n | m_i, S_i), shape (n, K)."""
    pts, _ = _points(g, x)
    out = np.empty((pts.shape[0], g.n_components))
    for i in range(g.n_components):
        out[:, i] = la.gaussian_logpdf(pts, g.means[i], g.chol[i])
    return out


def logpdf(g, x):
    """Log density of the mixture at one point or a stack of points."""
    pts, shape = _points(g, x)
    lp = component_logpdf(g, pts)
    with np.errstate(divide="ignore"):
        lp = lp + np.log(g.weights)
    return la.logsumexp(lp, axis=1).reshape(shape)


def pdf(g, x):
    """Mixture density sum_i w_i N(x | m_i, S_i) at one point or a stack of points."""
    out = np.exp(logpdf(g, x))
    return float(out) if out.ndim == 0 else out


def moments(g):
    """Mean and covariance of the mixture.

    The covariance is accumulated in the centered form
    sum_i w_i (S_i + (m_i - mean)(m_i - mean)^T), which equals
    sum_i w_i (S_i + m_i m_i^T) - mean mean^T without its cancellation.
    """
    w = g.weights
    mean = la.compensated_sum(w[:, None] * g.means)
    dev = g.means - mean
    terms = w[:, None, None] * (g.covariances + dev[:, :, None] * dev[:, None, :])
    cov = la.symmetrize(la.compensated_sum(terms))
    return MomentSummary(mean, cov)


def gaussian_fallback(g):
    """Single Gaussian with the same mean and covariance as ``g``."""
    if g.n_components == 1:
        return g
    mom = moments(g)
    return GaussianMixture([1.0], mom.mean[None], mom.covariance[None])


def affine(g, A, b=None):
    """Image of the mixture under x -> A x + b.

    ``A`` must be k x d with full row rank k <= d so that every mapped
    covariance A S A^T stays positive definite.  Weights are unchanged.
    """
    d = g.dim
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A * np.eye(d)
    A = np.atleast_2d(A)
    if A.shape[1] != d:
        raise DimensionError(f"matrix has {A.shape[1]} columns, mixture dimension is {d}")
    k = A.shape[0]
    if k > d or np.linalg.matrix_rank(A) < k:
        raise ValidationError(f"affine map must have full row rank (got {k}x{d} of rank {np.linalg.matrix_rank(A)})")
    b = np.zeros(k) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    if b.shape != (k,):
        raise DimensionError(f"offset has length {b.shape[0]}, expected {k}")
    means = g.means @ A.T + b
    covs = np.einsum("ij,kjl,ml->kim", A, g.covariances, A)
    return GaussianMixture(g.weights, means, covs)


def param_count(n_components, dim):
    """Number of free scalars in a K-component mixture in d dimensions:
    K - 1 weights, K d means and K d (d + 1) / 2 covariance entries."""
    K, d = int(n_components), int(dim)
    if K < 1 or d < 1:
        raise ValidationError("n_components and dim must be positive")
    return K - 1 + K * d + K * d * (d + 1) // 2
