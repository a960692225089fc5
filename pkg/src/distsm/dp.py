"""Equally weighted particle models and projected dynamic programming.

A :class:`DeltaModel` stores, for each source state, ``m`` state
distributions ("atoms") with equal weights.  The distributional Bellman
operator maps every atom ``theta`` at successor ``x'`` to
``(1 - gamma) e_x + gamma theta`` and mixes over successors, producing a
weighted mixture whose atom count is ``m`` times the successor count.
``project_ewp`` reduces the mixture back to ``m`` equally weighted atoms.
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import stream
from .exceptions import ConfigurationError, DomainError, NumericError
from .kernels import ModelKernelSpec, imq, pairwise_mmd2
from .mdp import _frozen
from .transport import _emd, wasserstein_outer, wbar

SIMPLEX_ATOL = 1e-10
CLAMP_ATOL = 1e-14
MAX_EXPANDED_ATOMS = 20_000


def _as_simplex_rows(atoms, what="atoms"):
    atoms = np.array(atoms, dtype=float, copy=True)
    if not np.all(np.isfinite(atoms)):
        raise NumericError(f"{what} contain non-finite values")
    if atoms.min(initial=0.0) < -CLAMP_ATOL:
        raise DomainError(f"{what} have negative entries", min=float(atoms.min()))
    atoms = np.clip(atoms, 0.0, None)
    err = np.abs(atoms.sum(axis=-1) - 1.0)
    if err.size and err.max() > SIMPLEX_ATOL:
        raise DomainError(f"{what} are not probability vectors", max_row_error=float(err.max()))
    return atoms


@dataclass(frozen=True, eq=False)
class DeltaModel:
    """``atoms[x, i]`` is the ``i``-th state distribution at source state ``x``."""

    atoms: np.ndarray
    gamma: float

    def __post_init__(self):
        atoms = _as_simplex_rows(self.atoms)
        if atoms.ndim != 3 or atoms.shape[0] != atoms.shape[2] or atoms.shape[1] < 1:
            raise DomainError("atoms must have shape [n_states, m, n_states]")
        object.__setattr__(self, "atoms", _frozen(atoms))

    @classmethod
    def initial(cls, n_states, m, gamma):
        """Every atom at ``x`` is the point mass ``e_x``."""
        atoms = np.repeat(np.eye(n_states)[:, None, :], m, axis=1)
        return cls(atoms, gamma)

    @property
    def n_states(self):
        return self.atoms.shape[0]

    @property
    def m(self):
        return self.atoms.shape[1]

    def per_state(self):
        return [(self.atoms[x], None) for x in range(self.n_states)]

    def atom_mean(self):
        return self.atoms.mean(axis=1)


@dataclass(frozen=True, eq=False)
class WeightedMixture:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = _frozen(np.atleast_2d(self.atoms))
        w = _frozen(self.weights)
        if len(atoms) == 0:
            raise DomainError("mixture is empty")
        if w.shape != (len(atoms),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DomainError("mixture weights must be a probability vector over the atoms")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    def deduplicated(self):
        uniq, inverse = np.unique(self.atoms, axis=0, return_inverse=True)
        w = np.bincount(inverse.ravel(), weights=self.weights, minlength=len(uniq))
        return WeightedMixture(uniq, w)


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """Per-state weighted mixtures; the un-projected iterates of exact DP."""

    mixtures: tuple
    gamma: float

    @classmethod
    def from_delta(cls, model):
        m = model.m
        return cls(
            tuple(WeightedMixture(model.atoms[x], np.full(m, 1.0 / m)) for x in range(model.n_states)),
            model.gamma,
        )

    @property
    def n_states(self):
        return len(self.mixtures)

    @property
    def total_atoms(self):
        return sum(len(mix.atoms) for mix in self.mixtures)

    def per_state(self):
        return [(mix.atoms, mix.weights) for mix in self.mixtures]

    def atom_mean(self):
        return np.stack([mix.weights @ mix.atoms for mix in self.mixtures])


def pushforward(theta, x, gamma):
    """``(1 - gamma) e_x + gamma theta``; applies row-wise to an atom array."""
    theta = np.asarray(theta, dtype=float)
    out = gamma * theta
    out[..., int(x)] += 1.0 - gamma
    return out


def _state_mixtures(model):
    if isinstance(model, DeltaModel):
        return MixtureModel.from_delta(model).mixtures
    return model.mixtures


def apply_operator(model, dm):
    """Exact Bellman image of ``model``: one :class:`WeightedMixture` per state.

    The mixture at ``x`` holds ``pushforward(theta_i(x'), x)`` with weight
    ``p(x'|x) w_i(x')`` for every successor ``x'`` with positive probability.
    """
    mixtures = _state_mixtures(model)
    if len(mixtures) != dm.n_states:
        raise DomainError("model and MDP have different state counts")
    gamma = dm.gamma
    out = []
    for x in range(dm.n_states):
        succ = np.flatnonzero(dm.p_pi[x] > 0)
        atoms = np.concatenate([pushforward(mixtures[y].atoms, x, gamma) for y in succ])
        weights = np.concatenate([dm.p_pi[x, y] * mixtures[y].weights for y in succ])
        out.append(WeightedMixture(atoms, weights / weights.sum()))
    return out


def expand(model, dm, max_atoms=MAX_EXPANDED_ATOMS):
    """One exact (un-projected) operator step, merging duplicate atoms."""
    mixtures = tuple(mix.deduplicated() for mix in apply_operator(model, dm))
    out = MixtureModel(mixtures, dm.gamma)
    if out.total_atoms > max_atoms:
        raise ConfigurationError(
            "exact expansion exceeds the atom cap", total_atoms=out.total_atoms, cap=max_atoms
        )
    return out


def _herding(kmat, weights, m):
    """Greedy equal-weight selection minimising the model MMD to the mixture,
    followed by single-swap improvement until no swap lowers it."""
    k = len(weights)
    kw = kmat @ weights
    diag = np.diag(kmat)
    sel = np.empty(m, dtype=np.int64)
    ksum = np.zeros(k)  # sum of kernel values between selected atoms and each candidate
    ss = cross = 0.0
    for t in range(m):
        obj = (ss + 2.0 * ksum + diag) / (t + 1) ** 2 - 2.0 * (cross + kw) / (t + 1)
        c = int(np.argmin(obj))
        sel[t] = c
        ss += 2.0 * ksum[c] + diag[c]
        cross += kw[c]
        ksum += kmat[c]

    improved = True
    while improved:
        improved = False
        for p in range(m):
            old = sel[p]
            rest = ksum - kmat[old]  # kernel sums against the other m - 1 atoms
            delta_ss = 2.0 * (rest - rest[old]) + diag - diag[old]
            delta = delta_ss / m**2 - 2.0 * (kw - kw[old]) / m
            c = int(np.argmin(delta))
            if delta[c] < -1e-13 * max(1.0, abs(ss) / m**2):
                sel[p] = c
                ksum += kmat[c] - kmat[old]
                ss += delta_ss[c]
                improved = True
    return np.sort(sel)


EXACT_SEARCH_LIMIT = 4096


def _exact_search(kmat, weights, m):
    """Best equal-weight multiset of size ``m`` by enumeration (tiny problems only)."""
    combos = np.array(list(itertools.combinations_with_replacement(range(len(weights)), m)))
    kw = kmat @ weights
    self_term = kmat[combos[:, :, None], combos[:, None, :]].sum(axis=(1, 2)) / m**2
    obj = self_term - 2.0 * kw[combos].sum(axis=1) / m
    return combos[int(np.argmin(obj))]


PROJECTIONS = ("barycentric", "herding", "resample")


def _one_hot(idx, k):
    out = np.zeros((len(idx), k))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def _select(mix, m, gram, mks, mode, rng):
    """Projection as an ``[m, k]`` row-stochastic matrix over the mixture's atoms."""
    if m < 1:
        raise DomainError("m must be >= 1")
    if len(mix.atoms) == 0:
        raise DomainError("cannot project an empty mixture")
    k = len(mix.atoms)
    if mode == "resample":
        rng = rng if isinstance(rng, np.random.Generator) else stream(rng)
        return _one_hot(rng.choice(k, size=m, p=mix.weights), k)
    if mode not in PROJECTIONS:
        raise ConfigurationError(f"unknown projection mode {mode!r}")
    if k == 1:
        return np.ones((m, 1))
    mks = mks or ModelKernelSpec()
    sigma = mks.bandwidth(mix.atoms, mix.atoms, gram)
    kmat = imq(pairwise_mmd2(mix.atoms, mix.atoms, gram), sigma)
    w = np.asarray(mix.weights)
    if math.comb(k + m - 1, m) <= EXACT_SEARCH_LIMIT:
        idx = _exact_search(kmat, w, m)
    else:
        idx = _herding(kmat, w, m)
    if mode == "herding":
        return _one_hot(idx, k)
    # squared model-kernel feature distance between mixture atoms and the selected slots
    diag = np.diag(kmat)
    dist = np.maximum(diag[:, None] + diag[idx][None, :] - 2.0 * kmat[:, idx], 0.0)
    plan = _emd(w / w.sum(), np.full(m, 1.0 / m), dist)
    return m * plan.T


def project_ewp(mix, m, gram, mks=None, mode="barycentric", seed=0):
    """Reduce a weighted mixture to ``m`` equally weighted atoms.

    ``herding`` selects atoms (with replacement) from the mixture greedily so
    the model MMD between the selection and the mixture decreases at every
    step, then refines by single swaps; ties go to the lowest index.  When
    there are at most ``EXACT_SEARCH_LIMIT`` candidate multisets the best one
    is found by enumeration instead.

    ``barycentric`` starts from the herding selection, couples the mixture to
    the ``m`` selected slots by optimal transport under the model-kernel
    feature distance, and replaces each slot by the barycentre of the mass
    it receives.  The atom mean then equals the mixture mean exactly.

    ``resample`` draws ``m`` atoms i.i.d. from the mixture weights on the
    stream ``seed``.
    """
    return _select(mix, m, gram, mks, mode, seed) @ mix.atoms


def default_max_iter(gamma, tol=1e-6):
    if gamma <= 0.0:
        return 1
    return int(math.ceil(math.log(tol) / math.log(gamma)))


def default_freeze_after(gamma):
    """Iteration after which projected DP stops re-selecting atoms.

    Chosen so that ``gamma ** k <= 0.01``: by then the atoms have moved to
    within a percent of their fixed-point scale.
    """
    return default_max_iter(gamma, 1e-2)


@dataclass
class DpTrace:
    iteration: list = field(default_factory=list)
    successive_wbar: list = field(default_factory=list)
    ref_wbar: list = field(default_factory=list)
    max_state: list = field(default_factory=list)
    converged: bool = False
    frozen_at: int = None
    projection_residual: float = float("nan")
    residual_state: int = -1

    def rows(self):
        return list(zip(self.iteration, self.successive_wbar, self.ref_wbar, self.max_state))


def projection_residual(model, mixtures, cost):
    """Largest outer distance between a model's atoms and their Bellman targets."""
    per_state = np.array(
        [
            wasserstein_outer(model.atoms[x], mix.atoms, cost, None, mix.weights)
            for x, mix in enumerate(mixtures)
        ]
    )
    x = int(np.argmax(per_state))
    return float(per_state[x]), x


def dp_iterate(
    init,
    dm,
    gram,
    cost,
    mks=None,
    iters=None,
    projection="barycentric",
    tol=1e-6,
    reference=None,
    seed=0,
    freeze_after="auto",
    max_atoms=MAX_EXPANDED_ATOMS,
    threads=1,
    report_residual=True,
):
    """Iterate the (projected) distributional Bellman operator.

    ``projection`` is one of :data:`PROJECTIONS` or ``"none"``; the last
    applies the exact operator and returns a :class:`MixtureModel`, subject to
    the ``max_atoms`` cap.

    Projected runs re-select atoms at every iteration up to ``freeze_after``
    and then keep the projection matrix (how much of each successor atom
    feeds each slot) fixed.  The frozen map is an affine contraction with modulus ``gamma``, so
    the iterates converge geometrically to a fixed point of the projected
    operator.  ``freeze_after=None`` never freezes.

    Iteration stops early once the successive-iterate distance falls below
    ``tol``.  Returns ``(model, DpTrace)``; projected runs also report the
    projection residual, the largest outer distance between the final model
    and its exact Bellman image, unless ``report_residual`` is false (it then
    stays NaN).
    """
    if projection not in PROJECTIONS + ("none",):
        raise ConfigurationError(f"unknown projection mode {projection!r}")
    if freeze_after == "auto":
        freeze_after = default_freeze_after(dm.gamma)
    if iters is None:
        iters = 6 if projection == "none" else default_max_iter(dm.gamma, tol) + (freeze_after or 0)
    iters = int(iters)
    if iters < 1:
        raise DomainError("iters must be >= 1")
    mks = mks or ModelKernelSpec()
    pool = ThreadPoolExecutor(int(threads)) if int(threads) > 1 else None
    try:
        model, trace = _dp_loop(
            init, dm, gram, cost, mks, iters, projection, tol, reference, seed, freeze_after, max_atoms, pool
        )
    finally:
        if pool is not None:
            pool.shutdown()
    if projection != "none" and report_residual:
        trace.projection_residual, trace.residual_state = projection_residual(
            model, apply_operator(model, dm), cost
        )
    return model, trace


def _dp_loop(init, dm, gram, cost, mks, iters, projection, tol, reference, seed, freeze_after, max_atoms, pool):
    trace = DpTrace()
    model = init
    frozen = None
    for k in range(1, iters + 1):
        if projection == "none":
            new = expand(model, dm, max_atoms)
        else:
            mixtures = apply_operator(model, dm)
            if frozen is None:
                jobs = [
                    (mix, init.m, gram, mks, projection, stream(seed, k, x))
                    for x, mix in enumerate(mixtures)
                ]
                if pool is None:
                    sel = [_select(*job) for job in jobs]
                else:
                    sel = list(pool.map(lambda job: _select(*job), jobs))
                if freeze_after is not None and k >= freeze_after:
                    frozen, trace.frozen_at = sel, k
            else:
                sel = frozen
            atoms = np.stack([a @ mix.atoms for mix, a in zip(mixtures, sel)])
            if not np.all(np.isfinite(atoms)):
                raise NumericError("non-finite atoms", iteration=k)
            new = DeltaModel(atoms, dm.gamma)
        dist, x_max = wbar(new, model, cost)
        if not np.isfinite(dist):
            raise NumericError("non-finite successive distance", iteration=k)
        trace.iteration.append(k)
        trace.successive_wbar.append(dist)
        trace.max_state.append(x_max)
        trace.ref_wbar.append(wbar(new, reference, cost)[0] if reference is not None else float("nan"))
        model = new
        if dist < tol:
            trace.converged = True
            break
    return model, trace
