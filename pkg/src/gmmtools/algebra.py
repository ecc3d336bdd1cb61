"""Closed-form operations between Gaussian mixtures.

Product-type operations (convolution, fusion) order their output components
row-major over the operand pairs: the component built from ``a[i]`` and
``b[j]`` sits at index ``i * K_b + j``.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import _linalg as la
from .core import GaussianMixture, affine
from .errors import DimensionError, DisjointSupportError, NumericalError, ValidationError

__all__ = [
    "FusionResult",
    "SourceWeights",
    "convolve",
    "negate",
    "fuse",
    "mix",
    "marginalize",
    "condition",
    "overlap_matrix",
    "l2_distance",
]

LOG_MIN_EVIDENCE = math.log(1e-300)


def _same_dim(ga, gb):
    if ga.dim != gb.dim:
        raise DimensionError(f"dimension mismatch: {ga.dim} vs {gb.dim}")


def convolve(gx, gy):
    """Distribution of X + Y for independent X ~ gx and Y ~ gy."""
    _same_dim(gx, gy)
    d = gx.dim
    w = np.outer(gx.weights, gy.weights).ravel()
    m = (gx.means[:, None, :] + gy.means[None, :, :]).reshape(-1, d)
    S = (gx.covariances[:, None] + gy.covariances[None, :]).reshape(-1, d, d)
    return GaussianMixture(w, m, S)


def negate(g):
    """Distribution of -X: means flip sign, weights and covariances stay."""
    return affine(g, -np.eye(g.dim))


@dataclass(frozen=True)
class FusionResult:
    """Normalized product of two densities plus the normalizing constant.

    ``evidence`` is the integral of pdf(ga) * pdf(gb); ``log_evidence`` is
    kept separately because the evidence is often far below 1.
    """

    posterior: GaussianMixture
    evidence: float
    log_evidence: float


def _pair_overlaps(ga, gb):
    """log c_ij and the Cholesky factors of S_a,i + S_b,j over all pairs."""
    ma, Sa = ga.means[:, None, :], ga.covariances[:, None]
    mb, Sb = gb.means[None, :, :], gb.covariances[None, :]
    return la.log_overlap(ma, Sa, mb, Sb)


def fuse(ga, gb):
    """Bayesian fusion: the normalized product pdf(ga) * pdf(gb).

    Each pair (i, j) contributes a Gaussian with covariance
    (S_a^-1 + S_b^-1)^-1 and unnormalized weight c_ij w_a,i w_b,j, where
    c_ij = N(m_a,i | m_b,j, S_a,i + S_b,j).  The sum of the unnormalized
    weights is the evidence.

    Raises
    ------
    DisjointSupportError
        If the evidence is below 1e-300, i.e. the two densities practically
        do not overlap.
    """
    _same_dim(ga, gb)
    d = ga.dim
    log_c, L = _pair_overlaps(ga, gb)
    Sa = np.broadcast_to(ga.covariances[:, None], L.shape)
    Sb = np.broadcast_to(gb.covariances[None, :], L.shape)
    ma = np.broadcast_to(ga.means[:, None, :], L.shape[:-1])
    mb = np.broadcast_to(gb.means[None, :, :], L.shape[:-1])
    # (Sa^-1 + Sb^-1)^-1 = Sa (Sa + Sb)^-1 Sb, and the fused mean
    # Sb (Sa + Sb)^-1 ma + Sa (Sa + Sb)^-1 mb, with no explicit inverse
    cov = la.symmetrize(Sa @ la.cho_solve(L, Sb))
    mean = np.einsum("...ij,...j->...i", Sb, la.cho_solve(L, ma)) + np.einsum(
        "...ij,...j->...i", Sa, la.cho_solve(L, mb)
    )
    with np.errstate(divide="ignore"):
        log_u = log_c + np.log(ga.weights)[:, None] + np.log(gb.weights)[None, :]
    log_ev = la.logsumexp(log_u)
    if not log_ev >= LOG_MIN_EVIDENCE:
        raise DisjointSupportError(
            f"fusion evidence {math.exp(log_ev) if np.isfinite(log_ev) else 0.0:.3g} is below 1e-300; "
            "the densities have practically disjoint support"
        )
    w = np.exp(log_u - log_ev).ravel()
    post = GaussianMixture(w, mean.reshape(-1, d), cov.reshape(-1, d, d))
    return FusionResult(post, math.exp(log_ev), float(log_ev))


@dataclass(frozen=True)
class SourceWeights:
    """Probabilities with which each source is active; sums to one."""

    weights: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        problems = [f"share {i} is negative" for i, x in enumerate(w) if not x >= 0]
        if not w:
            problems.append("at least one source share is required")
        elif abs(math.fsum(w) - 1.0) > 1e-9:
            problems.append(f"source weights sum to {math.fsum(w):.12g}")
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_shares(cls, shares):
        """Normalize raw nonnegative shares (e.g. delivery percentages)."""
        shares = [float(s) for s in shares]
        if any(not s >= 0 for s in shares):
            raise ValidationError("shares must be nonnegative")
        total = math.fsum(shares)
        if not total > 0:
            raise ValidationError("shares must not all be zero")
        return cls(tuple(s / total for s in shares))


def mix(sources, shares):
    """Pool several sources of the same quantity.

    The result concatenates the components of all sources in order and
    scales each source's weights by its share.  ``shares`` may be a
    :class:`SourceWeights` or raw nonnegative numbers that get normalized.
    """
    sources = list(sources)
    if not sources:
        raise ValidationError("at least one source is required")
    if not isinstance(shares, SourceWeights):
        shares = SourceWeights.from_shares(shares)
    if len(shares.weights) != len(sources):
        raise ValidationError(f"{len(shares.weights)} shares for {len(sources)} sources")
    for g in sources[1:]:
        _same_dim(sources[0], g)
    w = np.concatenate([s * g.weights for s, g in zip(shares.weights, sources)])
    m = np.concatenate([g.means for g in sources])
    S = np.concatenate([g.covariances for g in sources])
    return GaussianMixture(w, m, S)


def _block_dims(blocks, keep):
    if keep == "x":
        return list(blocks.x_dims)
    if keep == "y":
        return list(blocks.y_dims)
    raise ValidationError("keep must be 'x' or 'y'")


def marginalize(g, blocks, keep="x"):
    """Marginal of one block: drop the other block's rows and columns."""
    blocks.check(g.dim)
    idx = _block_dims(blocks, keep)
    return GaussianMixture(g.weights, g.means[:, idx], g.covariances[:, idx][:, :, idx])


def condition(g, blocks, observed):
    """Distribution of the X block given the Y block equals ``observed``.

    Each component is conditioned with the Gaussian rule; its weight is
    multiplied by the component's Y-marginal density at the observation and
    the weights are renormalized (in log space).

    Raises
    ------
    DisjointSupportError
        If the mixture's Y-marginal density at ``observed`` is below 1e-300.
    """
    blocks.check(g.dim)
    x, y = list(blocks.x_dims), list(blocks.y_dims)
    ystar = np.atleast_1d(np.asarray(observed, dtype=float))
    if ystar.shape != (len(y),):
        raise DimensionError(f"observation has length {ystar.shape[0]}, Y block has {len(y)} dims")
    S = g.covariances
    Sxx, Sxy, Syy = S[:, x][:, :, x], S[:, x][:, :, y], S[:, y][:, :, y]
    la.check_condition(Syy, "Y-block covariance")
    L = la.cholesky(Syy, "Y-block covariance")
    resid = ystar - g.means[:, y]
    z = la.solve_lower(L, resid)  # (K, dy)
    W = la.solve_lower(L, np.swapaxes(Sxy, 1, 2))  # L^-1 Syx, (K, dy, dx)
    mean = g.means[:, x] + np.einsum("kji,kj->ki", W, z)
    cov = Sxx - np.einsum("kji,kjl->kil", W, W)
    log_lik = -0.5 * np.sum(z * z, axis=1) - 0.5 * (len(y) * la.LOG_2PI + la.logdet_from_cholesky(L))
    with np.errstate(divide="ignore"):
        log_w = np.log(g.weights) + log_lik
    log_norm = la.logsumexp(log_w)
    if not log_norm >= LOG_MIN_EVIDENCE:
        raise DisjointSupportError("observed value lies outside the support of the Y-marginal")
    return GaussianMixture(np.exp(log_w - log_norm), mean, cov)


def overlap_matrix(ga, gb):
    """Matrix of pairwise overlap integrals c_ij = int N_a,i N_b,j dx."""
    _same_dim(ga, gb)
    log_c, _ = _pair_overlaps(ga, gb)
    return np.exp(log_c)


def l2_distance(ga, gb):
    """Closed-form L2 distance sqrt(int (pdf_a - pdf_b)^2 dx).

    Expands the square into I_aa - 2 I_ab + I_bb, each a weighted double sum
    of overlap integrals.  A radicand that is negative only by rounding is
    clamped to zero.
    """
    _same_dim(ga, gb)
    I_aa = ga.weights @ overlap_matrix(ga, ga) @ ga.weights
    I_ab = ga.weights @ overlap_matrix(ga, gb) @ gb.weights
    I_bb = gb.weights @ overlap_matrix(gb, gb) @ gb.weights
    r = I_aa - 2.0 * I_ab + I_bb
    if r < 0:
        if r < -1e-12 * max(1.0, I_aa + I_bb):
            raise NumericalError(f"negative squared L2 distance {r:.3g}")
        r = 0.0
    return math.sqrt(r)
