"""State kernels, MMD between state distributions and the model kernel.

State distributions are probability vectors over a finite state set, so the
MMD between two of them is the exact quadratic form ``(p - q)^T K (p - q)``
over the Gram matrix of the state kernel.  The U-statistic estimator is kept
for sample-based checks.

The model kernel compares state distributions through the inverse
multiquadric of their MMD, ``k(p, q) = (1 + MMD^2(p, q) / sigma^2)^(-1/2)``,
and lifts to an MMD between equally weighted collections of state
distributions.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, NumericError
from ._rng import stream
from .io import write_matrix_csv
from .mdp import _frozen

DEFAULT_ALPHAS = (0.2, 0.5, 1.0, 2.0, 5.0)
SIGMA2_FLOOR = 1e-8
NEGATIVE_SLACK = 1e-10


@dataclass(frozen=True)
class StateKernelSpec:
    """Kernel on embedded states.

    ``rational_quadric_mixture`` evaluates ``sum_a (1 + d / (2 a))^-a`` with
    ``d`` the squared Euclidean distance; ``gaussian`` evaluates
    ``exp(-d / (2 length_scale^2))``.
    """

    family: str = "rational_quadric_mixture"
    mixture_alphas: tuple = DEFAULT_ALPHAS
    length_scale: float = 1.0

    def __post_init__(self):
        if self.family not in ("rational_quadric_mixture", "gaussian"):
            raise DomainError(f"unknown state kernel family {self.family!r}")
        alphas = tuple(float(a) for a in self.mixture_alphas)
        if not alphas or min(alphas) <= 0:
            raise DomainError("mixture alphas must be positive")
        if self.length_scale <= 0:
            raise DomainError("length_scale must be positive")
        object.__setattr__(self, "mixture_alphas", alphas)

    def profile(self, sqdist):
        sqdist = np.asarray(sqdist, dtype=float)
        if self.family == "gaussian":
            return np.exp(-sqdist / (2.0 * self.length_scale**2))
        return sum((1.0 + sqdist / (2.0 * a)) ** (-a) for a in self.mixture_alphas)

    def to_dict(self):
        return {
            "family": self.family,
            "mixture_alphas": list(self.mixture_alphas),
            "length_scale": self.length_scale,
        }


def state_kernel_eval(spec, z1, z2):
    z1 = np.atleast_1d(np.asarray(z1, dtype=float))
    z2 = np.atleast_1d(np.asarray(z2, dtype=float))
    if z1.shape != z2.shape:
        raise DomainError("embeddings must have equal dimension")
    if not (np.all(np.isfinite(z1)) and np.all(np.isfinite(z2))):
        raise DomainError("embeddings must be finite")
    return float(spec.profile(np.sum((z1 - z2) ** 2)))


def _sqdist(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass(frozen=True, eq=False)
class GramCache:
    """Kernel matrix over every pair of states."""

    gram: np.ndarray

    @classmethod
    def build(cls, spec, embedding):
        emb = np.asarray(embedding, dtype=float)
        if emb.ndim == 1:
            emb = emb[:, None]
        if not np.all(np.isfinite(emb)):
            raise DomainError("embeddings must be finite")
        k = spec.profile(_sqdist(emb, emb))
        return cls(_frozen(0.5 * (k + k.T)))

    def __post_init__(self):
        k = _frozen(self.gram)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise DomainError("gram must be square")
        object.__setattr__(self, "gram", k)

    @property
    def n_states(self):
        return self.gram.shape[0]

    def scaled(self, factor):
        return GramCache(self.gram * factor)

    def to_csv(self, path_or_buf):
        write_matrix_csv(path_or_buf, "gram", self.gram)


def _clamp(value):
    if value < -NEGATIVE_SLACK:
        raise NumericError("squared MMD is significantly negative", value=float(value))
    return max(float(value), 0.0)


def mmd2_exact(p, q, gram):
    """Exact squared MMD between two state distributions."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (gram.n_states,) or q.shape != (gram.n_states,):
        raise DomainError("distributions must match the gram size")
    diff = p - q
    return _clamp(diff @ gram.gram @ diff)


def pairwise_mmd2(a, b, gram):
    """Matrix of squared MMDs between the rows of ``a`` ``[m1, S]`` and ``b`` ``[m2, S]``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    k = gram.gram
    ka = a @ k
    kb = b @ k
    sa = np.einsum("is,is->i", ka, a)
    sb = np.einsum("is,is->i", kb, b)
    d = sa[:, None] + sb[None, :] - 2.0 * ka @ b.T
    return np.maximum(d, 0.0)


def mmd2_unbiased(xs, ys, kernel):
    """U-statistic estimate of the squared MMD from two samples.

    ``kernel`` is either a :class:`StateKernelSpec`, in which case ``xs`` and
    ``ys`` are arrays of embedded coordinates ``[n, d]``, or a
    :class:`GramCache`, in which case they are state indices.  The result may
    be negative and is never clamped.
    """
    if isinstance(kernel, GramCache):
        xs = np.asarray(xs, dtype=np.int64)
        ys = np.asarray(ys, dtype=np.int64)
        kxx = kernel.gram[np.ix_(xs, xs)]
        kyy = kernel.gram[np.ix_(ys, ys)]
        kxy = kernel.gram[np.ix_(xs, ys)]
    else:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None]
        if ys.ndim == 1:
            ys = ys[:, None]
        kxx = kernel.profile(_sqdist(xs, xs))
        kyy = kernel.profile(_sqdist(ys, ys))
        kxy = kernel.profile(_sqdist(xs, ys))
    n1, n2 = len(xs), len(ys)
    if n1 < 2 or n2 < 2:
        raise DomainError("the unbiased estimator needs at least 2 samples per side")
    within_x = (kxx.sum() - np.trace(kxx)) / (n1 * (n1 - 1))
    within_y = (kyy.sum() - np.trace(kyy)) / (n2 * (n2 - 1))
    return float(within_x + within_y - 2.0 * kxy.mean())


@dataclass(frozen=True)
class ModelKernelSpec:
    """Bandwidth policy of the inverse-multiquadric model kernel.

    ``sigma=None`` selects the median heuristic; a positive float fixes it.
    """

    sigma: float = None

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise DomainError("fixed sigma must be positive")

    @property
    def sigma_policy(self):
        return "median_heuristic" if self.sigma is None else "fixed"

    def bandwidth(self, source, target, gram):
        if self.sigma is not None:
            return float(self.sigma)
        return median_bandwidth(source, target, gram)

    def to_dict(self):
        return {"sigma_policy": self.sigma_policy, "sigma": self.sigma}


def imq(sqmmd, sigma):
    """Inverse multiquadric of ``MMD / sigma`` given the squared MMD."""
    return (1.0 + np.maximum(sqmmd, 0.0) / sigma**2) ** -0.5


def model_kernel(theta1, theta2, gram, mks=None, sigma=None):
    """Model kernel between two state distributions (value in ``(0, 1]``)."""
    if sigma is None:
        sigma = (mks or ModelKernelSpec()).sigma
    if sigma is None or not sigma > 0:
        raise DomainError("model kernel needs sigma > 0")
    return float((1.0 + mmd2_exact(theta1, theta2, gram) / sigma**2) ** -0.5)


def median_bandwidth(source_atoms, target_atoms, gram):
    """Median-heuristic bandwidth over source, target and cross pairs.

    ``sigma^2`` is the lower-middle element of the sorted concatenation of all
    pairwise squared MMDs within the source atoms, within the target atoms and
    across them (each an ``m x m'`` block including the diagonal), floored at
    ``1e-8``.  Returns ``sigma``.
    """
    source = np.atleast_2d(np.asarray(source_atoms, dtype=float))
    target = np.atleast_2d(np.asarray(target_atoms, dtype=float))
    if len(source) + len(target) < 2:
        raise DomainError("the median heuristic needs at least two atoms")
    d = np.concatenate(
        [
            pairwise_mmd2(source, source, gram).ravel(),
            pairwise_mmd2(target, target, gram).ravel(),
            pairwise_mmd2(source, target, gram).ravel(),
        ]
    )
    return float(np.sqrt(max(lower_median(d), SIGMA2_FLOOR)))


def lower_median(values):
    values = np.sort(np.asarray(values, dtype=float).ravel())
    return float(values[(len(values) - 1) // 2])


def model_mmd2(model_a, model_b, gram, mks=None, sigma=None, weights_b=None):
    """Squared MMD between two collections of state distributions.

    Biased V-statistic over equally weighted atoms (``i == j`` terms included).
    ``weights_b`` lets the second collection be a weighted mixture, as needed
    when comparing a projection with its target.
    """
    a = np.atleast_2d(np.asarray(model_a, dtype=float))
    b = np.atleast_2d(np.asarray(model_b, dtype=float))
    if weights_b is None and len(a) != len(b):
        raise DomainError("models must have the same number of atoms", m_a=len(a), m_b=len(b))
    if sigma is None:
        sigma = (mks or ModelKernelSpec()).bandwidth(a, b, gram)
    wa = np.full(len(a), 1.0 / len(a))
    wb = np.full(len(b), 1.0 / len(b)) if weights_b is None else np.asarray(weights_b, dtype=float)
    kaa = imq(pairwise_mmd2(a, a, gram), sigma)
    kbb = imq(pairwise_mmd2(b, b, gram), sigma)
    kab = imq(pairwise_mmd2(a, b, gram), sigma)
    value = wa @ kaa @ wa + wb @ kbb @ wb - 2.0 * wa @ kab @ wb
    return _clamp(value)


def mmd_permutation_test(sample_a, sample_b, gram, n_permutations=500, seed=0, sigma=None):
    """Two-sample permutation test on the model-level squared MMD.

    ``sample_a`` and ``sample_b`` are collections of state distributions
    (for instance occupancy particles).  The bandwidth is fixed once on the
    observed split (median heuristic unless ``sigma`` is given), then the
    pooled sample is relabelled ``n_permutations`` times.  Returns
    ``(statistic, p_value)`` with ``p = (1 + #{perm >= observed}) / (1 + n_permutations)``.
    """
    a = np.atleast_2d(np.asarray(sample_a, dtype=float))
    b = np.atleast_2d(np.asarray(sample_b, dtype=float))
    if len(a) < 1 or len(b) < 1:
        raise DomainError("both samples need at least one element")
    if int(n_permutations) < 1:
        raise DomainError("n_permutations must be positive")
    if sigma is None:
        sigma = median_bandwidth(a, b, gram)
    pooled = np.concatenate([a, b])
    k = imq(pairwise_mmd2(pooled, pooled, gram), sigma)
    na, n = len(a), len(pooled)

    def statistic(labels):
        # v^T K v with v = 1_a / n_a - 1_b / n_b, one column per labelling
        v = np.where(labels, 1.0 / na, -1.0 / (n - na))
        return np.einsum("ip,ip->p", v, k @ v)

    observed = float(statistic(np.arange(n)[:, None] < na)[0])
    rng = stream(seed, 0x7E57)
    perms = rng.permuted(np.tile(np.arange(n)[:, None], (1, int(n_permutations))), axis=0)
    null = statistic(perms < na)
    p_value = (1.0 + np.count_nonzero(null >= observed - 1e-12 * abs(observed))) / (1.0 + int(n_permutations))
    return max(observed, 0.0), float(p_value)
