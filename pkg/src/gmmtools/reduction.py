"""Mixture reduction by minimizing the closed-form L2 distance.

Two stages:

1. Greedy merging.  While there are too many components, try every pair,
   replace it by its moment-matched merge and keep the pair whose merge gives
   the smallest L2 distance to the *original* mixture.  Ties go to the
   lexicographically smallest pair.
2. Refinement.  Quasi-Newton descent on the squared L2 distance over
   unconstrained parameters: softmax logits for the weights, the means, and
   lower-triangular covariance factors with log-parameterized diagonals.
   Gradients are central finite differences.  Every iterate is a valid
   mixture, and the refined result is only accepted if it is not worse.
"""

from dataclasses import dataclass
import logging
import math

import numpy as np
from scipy import optimize

from . import _linalg as la
from .core import GaussianComponent, GaussianMixture
from .errors import GmmError, ValidationError

__all__ = ["ReductionReport", "moment_match_merge", "reduce", "l2_squared"]

log = logging.getLogger(__name__)

FD_STEP = 1e-5
STATIONARY = 1e-5


@dataclass(frozen=True)
class ReductionReport:
    """Outcome of :func:`reduce`.

    ``gradient_ratio`` is max |finite-difference gradient| of the squared L2
    objective at the returned parameters divided by the objective value
    (0 when nothing was refined).
    """

    reduced: GaussianMixture
    l2_before_refine: float
    l2_final: float
    refine_iterations: int
    gradient_ratio: float = 0.0


def moment_match_merge(c1, c2):
    """Single Gaussian with the total weight, mean and covariance of two components."""
    w = c1.weight + c2.weight
    if not w > 0:
        raise ValidationError("cannot merge components with zero total weight")
    a, b = c1.weight / w, c2.weight / w
    m1, m2 = np.asarray(c1.mean, dtype=float), np.asarray(c2.mean, dtype=float)
    m = a * m1 + b * m2
    d1, d2 = m1 - m, m2 - m
    S = a * (c1.covariance + np.outer(d1, d1)) + b * (c2.covariance + np.outer(d2, d2))
    return GaussianComponent(w, m, la.symmetrize(S))


def _cross(wa, ma, Sa, wb, mb, Sb):
    """sum_ij wa_i wb_j N(ma_i | mb_j, Sa_i + Sb_j)."""
    log_c, _ = la.log_overlap(ma[:, None], Sa[:, None], mb[None], Sb[None])
    return wa @ np.exp(log_c) @ wb


def l2_squared(ga, gb):
    """Squared L2 distance from raw parameter arrays; no validation."""
    return _l2sq(ga.weights, ga.means, ga.covariances, gb.weights, gb.means, gb.covariances)


def _l2sq(wa, ma, Sa, wb, mb, Sb, ga_self=None):
    I_aa = _cross(wa, ma, Sa, wa, ma, Sa) if ga_self is None else ga_self
    return I_aa - 2.0 * _cross(wa, ma, Sa, wb, mb, Sb) + _cross(wb, mb, Sb, wb, mb, Sb)


def _greedy(g, target_k, I_aa):
    w, m, S = g.weights.copy(), g.means.copy(), g.covariances.copy()
    while w.shape[0] > target_k:
        K = w.shape[0]
        best = None
        for i in range(K - 1):
            for j in range(i + 1, K):
                c = moment_match_merge(
                    GaussianComponent(w[i], m[i], S[i]), GaussianComponent(w[j], m[j], S[j])
                )
                keep = [t for t in range(K) if t != j]
                cw, cm, cS = w[keep], m[keep], S[keep]
                pos = keep.index(i)
                cw[pos], cm[pos], cS[pos] = c.weight, c.mean, c.covariance
                val = _l2sq(g.weights, g.means, g.covariances, cw, cm, cS, ga_self=I_aa)
                if best is None or val < best[0]:
                    best = (val, cw, cm, cS)
        _, w, m, S = best
    return w, m, S


class _Packing:
    """Map between mixture arrays and a flat unconstrained parameter vector."""

    def __init__(self, K, d, length_scale):
        self.K, self.d = K, d
        self.tril = np.tril_indices(d)
        self.diag = self.tril[0] == self.tril[1]
        nt = len(self.tril[0])
        # typical magnitudes per entry, used to size finite-difference steps
        entry = np.where(self.diag, 1.0, length_scale)
        self.typical = np.concatenate([np.ones(K), np.full(K * d, length_scale), np.tile(entry, K)])
        self.size = K + K * d + K * nt

    def pack(self, w, m, S):
        L = np.linalg.cholesky(S)
        vals = L[:, self.tril[0], self.tril[1]]
        vals[:, self.diag] = np.log(vals[:, self.diag])
        return np.concatenate([np.log(w), m.ravel(), vals.ravel()])

    def unpack(self, theta):
        K, d = self.K, self.d
        logits = theta[:K]
        w = np.exp(logits - logits.max())
        w /= w.sum()
        m = theta[K : K + K * d].reshape(K, d)
        vals = theta[K + K * d :].reshape(K, -1).copy()
        vals[:, self.diag] = np.exp(vals[:, self.diag])
        L = np.zeros((K, d, d))
        L[:, self.tril[0], self.tril[1]] = vals
        return w, m, L @ np.swapaxes(L, 1, 2)


def _fd_gradient(f, theta, typical):
    h = FD_STEP * np.maximum(np.abs(theta), typical)
    grad = np.empty_like(theta)
    for i in range(theta.shape[0]):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h[i]
        tm[i] -= h[i]
        grad[i] = (f(tp) - f(tm)) / (tp[i] - tm[i])
    return grad


def _refine(g, w, m, S, I_aa, budget):
    K, d = m.shape
    scale = math.sqrt(float(np.mean(np.diagonal(g.covariances, axis1=1, axis2=2))))
    pk = _Packing(K, d, scale)
    wa, ma, Sa = g.weights, g.means, g.covariances

    def f(theta):
        try:
            return float(_l2sq(wa, ma, Sa, *pk.unpack(theta), ga_self=I_aa))
        except GmmError:
            return math.inf

    def grad(theta):
        return _fd_gradient(f, theta, pk.typical)

    theta0 = pk.pack(w, m, S)
    f0 = f(theta0)
    history = [f0]

    def monitor(xk):
        fk = f(xk)
        if fk > history[-1] + 1e-15:
            log.warning("refinement step increased the objective (%g > %g)", fk, history[-1])
        history.append(fk)
        # relative improvement below 1e-10 ends the refinement
        if len(history) > 2 and history[-2] - fk <= 1e-10 * abs(history[-2]) and np.max(np.abs(grad(xk))) < 1e-6 * fk:
            raise StopIteration

    theta, iters = theta0, 0
    for method in ("BFGS", "Nelder-Mead", "BFGS"):
        remaining = budget - iters
        if remaining <= 0:
            break
        kw = dict(jac=grad, options=dict(maxiter=remaining, gtol=1e-6 * max(f0, 1e-300))) if method == "BFGS" \
            else dict(options=dict(maxiter=remaining, xatol=1e-10, fatol=1e-14 * max(f0, 1e-300)))
        # the callback may stop the run early; scipy then returns the last iterate
        res = optimize.minimize(f, theta, method=method, callback=monitor, **kw)
        if f(res.x) <= f(theta):
            theta = res.x
        iters += int(res.nit)
        fv = f(theta)
        if fv <= 0 or np.max(np.abs(grad(theta))) < STATIONARY * fv:
            break
    fv = f(theta)
    ratio = float(np.max(np.abs(grad(theta))) / fv) if fv > 0 else 0.0
    return pk.unpack(theta), fv, iters, ratio


def reduce(g, target_k, budget=500):
    """Approximate ``g`` by a mixture with ``target_k`` components.

    Parameters
    ----------
    g : GaussianMixture
    target_k : int
        Number of components to keep, ``1 <= target_k <= K``.  ``target_k == K``
        returns ``g`` unchanged.
    budget : int
        Cap on refinement iterations.  ``budget=0`` returns the greedy result.

    Returns
    -------
    ReductionReport
    """
    K = g.n_components
    if not 1 <= int(target_k) <= K:
        raise ValidationError(f"target_k must lie in [1, {K}], got {target_k}")
    if target_k == K:
        return ReductionReport(g, 0.0, 0.0, 0)
    I_aa = _cross(g.weights, g.means, g.covariances, g.weights, g.means, g.covariances)
    w, m, S = _greedy(g, int(target_k), I_aa)
    greedy_val = _l2sq(g.weights, g.means, g.covariances, w, m, S, ga_self=I_aa)
    before = math.sqrt(max(greedy_val, 0.0))
    if budget <= 0:
        return ReductionReport(GaussianMixture(w, m, S), before, before, 0)
    (rw, rm, rS), val, iters, ratio = _refine(g, w, m, S, I_aa, budget)
    if val > greedy_val:
        rw, rm, rS, val = w, m, S, greedy_val
    reduced = GaussianMixture(rw, rm, rS)
    return ReductionReport(reduced, before, math.sqrt(max(val, 0.0)), iters, ratio)
