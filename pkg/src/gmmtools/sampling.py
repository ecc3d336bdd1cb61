"""Seeded, platform-independent sampling.

Uniforms come from SplitMix64 (Steele, Lea & Flood, "Fast splittable
pseudorandom number generators", OOPSLA 2014).  The generator is evaluated in
counter form: draw number ``i`` (1-based) is ``mix64(seed + i * GOLDEN)``
with 64-bit wrap-around, which is exactly the sequential reference algorithm
but lets a whole batch be produced with vectorized integer arithmetic.  Only
integer operations are involved, so the uniform sequence is bit-identical on
every platform.

Normals are produced with the Box-Muller transform, two uniforms per pair.

Uniform budget per draw:

* ``sample_gaussian`` in d dimensions: ``2 * ceil(d / 2)`` (an odd spare
  normal is discarded, never cached);
* ``sample_gmm``: one more for the component choice.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import _linalg as la
from .core import GaussianMixture
from .errors import DimensionError, ValidationError

__all__ = [
    "SeededStream",
    "SampleBatch",
    "box_muller",
    "standard_normals",
    "sample_gaussian",
    "sample_gmm",
    "choose_components",
    "sample_points",
]

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SPLIT = np.uint64(0xD1B54A32D192ED03)
_MASK64 = (1 << 64) - 1
TINY = np.finfo(float).tiny


def mix64(z):
    """SplitMix64 output function on a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SeededStream:
    """Counter-addressed SplitMix64 stream.

    ``position`` counts the 64-bit words consumed so far.  A stream must
    not be shared between concurrent consumers; use :meth:`split` to derive
    independent child streams instead.
    """

    def __init__(self, seed, position=0):
        seed = int(seed)
        if not 0 <= seed <= _MASK64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        if position < 0:
            raise ValidationError("position must be nonnegative")
        self.seed = seed
        self.position = int(position)

    def __repr__(self):
        return f"SeededStream(seed={self.seed}, position={self.position})"

    def raw(self, n):
        """Next ``n`` 64-bit words."""
        idx = np.arange(self.position + 1, self.position + n + 1, dtype=np.uint64)
        self.position += n
        with np.errstate(over="ignore"):
            return mix64(np.uint64(self.seed) + idx * GOLDEN)

    def uniforms(self, n):
        """Next ``n`` doubles in [0, 1) with 53 random bits each."""
        return (self.raw(n) >> np.uint64(11)).astype(float) * 2.0**-53

    def split(self, key):
        """Independent child stream number ``key``.

        The child seed is ``mix64(mix64(seed) ^ ((key + 1) * 0xD1B54A32D192ED03))``;
        the parent is not advanced.
        """
        with np.errstate(over="ignore"):
            k = np.uint64((int(key) + 1) & _MASK64) * _SPLIT
            child = mix64(mix64(np.uint64(self.seed)) ^ k)
        return SeededStream(int(child))


@dataclass(frozen=True)
class SampleBatch:
    """Sampled points, shape (n, d), with the component index of each draw."""

    points: np.ndarray
    component_labels: np.ndarray = None

    def __len__(self):
        return self.points.shape[0]


def _box_muller(u, v):
    u = np.where(u == 0.0, TINY, u)
    r = np.sqrt(-2.0 * np.log(u))
    theta = 2.0 * math.pi * v
    return r * np.cos(theta), r * np.sin(theta)


def box_muller(stream, n_pairs=None):
    """Standard normal pair(s) from two uniforms each.

    With ``n_pairs=None`` returns one ``(x, y)`` tuple, otherwise an array
    of shape (n_pairs, 2).
    """
    u = stream.uniforms(2 if n_pairs is None else 2 * n_pairs).reshape(-1, 2)
    x, y = _box_muller(u[:, 0], u[:, 1])
    if n_pairs is None:
        return float(x[0]), float(y[0])
    return np.column_stack([x, y])


def _normals_from_uniforms(u, d):
    """Turn rows of 2*ceil(d/2) uniforms into rows of d standard normals."""
    x, y = _box_muller(u[:, 0::2], u[:, 1::2])
    z = np.empty((u.shape[0], x.shape[1] * 2))
    z[:, 0::2] = x
    z[:, 1::2] = y
    return z[:, :d]


def standard_normals(stream, n, d):
    """n independent standard normal d-vectors, shape (n, d)."""
    c = (d + 1) // 2
    return _normals_from_uniforms(stream.uniforms(n * 2 * c).reshape(n, 2 * c), d)


def sample_gaussian(stream, mean, covariance, n=None):
    """Draw m + A z with A the lower Cholesky factor of ``covariance``.

    Returns one d-vector when ``n`` is None, otherwise an (n, d) array.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = mean.shape[0]
    cov = np.asarray(covariance, dtype=float).reshape(d, d)
    A = la.cholesky(la.symmetrize(cov))
    z = standard_normals(stream, 1 if n is None else n, d)
    x = mean + z @ A.T
    return x[0] if n is None else x


def choose_components(weights, u):
    """Categorical choice by cumulative-weight inversion.

    Component i is chosen when cum[i-1] <= u < cum[i]; a ``u`` landing
    exactly on an edge goes to the higher index.
    """
    cum = np.cumsum(weights)
    return np.minimum(np.searchsorted(cum, u, side="right"), len(weights) - 1)


def sample_gmm(stream, g, n):
    """Composition sampling: pick a component by weight, then draw from it."""
    if not isinstance(g, GaussianMixture):
        raise TypeError("expected a GaussianMixture")
    n = int(n)
    if n < 1:
        raise ValidationError("n must be at least 1")
    d = g.dim
    per_draw = 1 + 2 * ((d + 1) // 2)
    u = stream.uniforms(n * per_draw).reshape(n, per_draw)
    labels = choose_components(g.weights, u[:, 0])
    z = _normals_from_uniforms(u[:, 1:], d)
    if d == 1:
        pts = g.means[labels] + g.chol[labels, :, 0] * z
    else:
        pts = g.means[labels] + np.einsum("nij,nj->ni", g.chol[labels], z)
    return SampleBatch(pts, labels)


def sample_points(stream, g, n):
    """Just the (n, d) points of :func:`sample_gmm`."""
    return sample_gmm(stream, g, n).points


def check_points(points, dim):
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None] if dim == 1 else points[None]
    if points.shape[1] != dim:
        raise DimensionError(f"points have dimension {points.shape[1]}, expected {dim}")
    return points
