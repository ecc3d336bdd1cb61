"""Small dense linear-algebra kernels shared by the mixture operations.

Everything here works on stacks of tiny matrices (leading batch axes, trailing
d x d), which is the shape mixture parameters come in.  No explicit inverses
are formed; every "Sigma^-1 v" is a pair of triangular solves against a
Cholesky factor.
"""

import math

import numpy as np

from .errors import SingularCovarianceError

LOG_2PI = math.log(2.0 * math.pi)
MAX_CONDITION = 1e12
TINY = np.finfo(float).tiny


def symmetrize(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def cholesky(a, what="covariance"):
    """Lower Cholesky factor of a stack of SPD matrices.

    Raises SingularCovarianceError instead of LinAlgError so callers see a
    domain error.
    """
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"{what} is not positive definite") from exc


def check_condition(a, what="covariance", limit=MAX_CONDITION):
    """Raise if any matrix in the stack has 2-norm condition number > limit."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] == 1:
        bad = ~(a[..., 0, 0] > 0)
    else:
        ev = np.linalg.eigvalsh(a)
        lo, hi = ev[..., 0], ev[..., -1]
        bad = ~(lo > 0) | (hi > limit * lo)
    if np.any(bad):
        raise SingularCovarianceError(f"{what} is singular or has condition number above {limit:g}")


def solve_lower(L, b):
    """Solve L x = b for lower-triangular L, batched.

    L has shape (..., d, d); b has shape (..., d) or (..., d, m) and must
    broadcast against L's batch axes.
    """
    vec = b.ndim == L.ndim - 1
    if vec:
        b = b[..., None]
    d = L.shape[-1]
    shape = np.broadcast_shapes(L.shape[:-2], b.shape[:-2]) + b.shape[-2:]
    x = np.empty(shape, dtype=np.result_type(L, b, float))
    for i in range(d):
        acc = b[..., i, :]
        if i:
            acc = acc - np.einsum("...k,...km->...m", L[..., i, :i], x[..., :i, :])
        x[..., i, :] = acc / L[..., i, i : i + 1]
    return x[..., 0] if vec else x


def solve_upper_t(L, b):
    """Solve L^T x = b for lower-triangular L, batched (same shapes as solve_lower)."""
    vec = b.ndim == L.ndim - 1
    if vec:
        b = b[..., None]
    d = L.shape[-1]
    shape = np.broadcast_shapes(L.shape[:-2], b.shape[:-2]) + b.shape[-2:]
    x = np.empty(shape, dtype=np.result_type(L, b, float))
    for i in range(d - 1, -1, -1):
        acc = b[..., i, :]
        if i < d - 1:
            acc = acc - np.einsum("...k,...km->...m", L[..., i + 1 :, i], x[..., i + 1 :, :])
        x[..., i, :] = acc / L[..., i, i : i + 1]
    return x[..., 0] if vec else x


def cho_solve(L, b):
    """Solve (L L^T) x = b."""
    return solve_upper_t(L, solve_lower(L, b))


def logdet_from_cholesky(L):
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def gaussian_logpdf(x, mean, L):
    """log N(x | mean, L L^T) for points x of shape (n, d) and one component.

    Returns an array of shape (n,).
    """
    d = mean.shape[-1]
    diff = x - mean
    if d == 1:
        z2 = (diff[:, 0] / L[0, 0]) ** 2
    else:
        z = solve_lower(L, diff.T)
        z2 = np.einsum("in,in->n", z, z)
    return -0.5 * (z2 + d * LOG_2PI) - 0.5 * logdet_from_cholesky(L)


def log_overlap(m1, S1, m2, S2, what="pairwise covariance sum"):
    """log of the Gaussian overlap integral  int N(x|m1,S1) N(x|m2,S2) dx.

    The integral equals N(m1 | m2, S1 + S2).  Arguments broadcast over
    leading batch axes.  Returns (log_c, L) where L is the Cholesky factor of
    S1 + S2, reused by callers that also need the fused moments.
    """
    S = symmetrize(S1 + S2)
    check_condition(S, what)
    L = cholesky(S, what)
    z = solve_lower(L, m1 - m2)
    d = S.shape[-1]
    log_c = -0.5 * np.sum(z * z, axis=-1) - 0.5 * (d * LOG_2PI + logdet_from_cholesky(L))
    return log_c, L


def logsumexp(a, axis=None):
    a = np.asarray(a, dtype=float)
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True)) + amax
    if axis is None:
        return out.reshape(())[()]
    return np.squeeze(out, axis=axis)


def compensated_sum(terms):
    """Neumaier-compensated sum over axis 0, strictly left to right.

    Works for a stack of scalars, vectors or matrices; the reduction order is
    fixed so results are reproducible bit for bit.
    """
    terms = np.asarray(terms, dtype=float)
    s = np.zeros(terms.shape[1:])
    c = np.zeros(terms.shape[1:])
    for t in terms:
        u = s + t
        big = np.abs(s) >= np.abs(t)
        c += np.where(big, (s - u) + t, (t - u) + s)
        s = u
    return s + c


def fsum_rows(values):
    """math.fsum of a 1-D sequence, returned as float."""
    return math.fsum(float(v) for v in values)
