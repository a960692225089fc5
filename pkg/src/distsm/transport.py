"""Exact discrete optimal transport between state distributions and models.

``wasserstein_inner`` is the 1-Wasserstein distance between two state
distributions with the Euclidean distance between state embeddings as the
ground cost.  ``wasserstein_outer`` lifts it to collections of state
distributions, and ``wbar`` takes the maximum over source states.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import DomainError, NumericError
from .mdp import _frozen

for _backend in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")
import ot  # noqa: E402

SIMPLEX_TOL = 1e-9
MASS_TOL = 1e-15


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Ground metric ``d(x, y)`` between states.

    ``embedding`` is set when the cost is the Euclidean distance between state
    embeddings; it sharpens the lower bounds used by lazy outer solves.
    """

    cost: np.ndarray
    embedding: np.ndarray = None

    @classmethod
    def from_embedding(cls, embedding):
        emb = np.asarray(embedding, dtype=float)
        if emb.ndim == 1:
            emb = emb[:, None]
        diff = emb[:, None, :] - emb[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        return cls(0.5 * (d + d.T), _frozen(emb))

    def __post_init__(self):
        c = _frozen(self.cost)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DomainError("cost matrix must be square")
        if np.any(c < 0) or np.any(np.diag(c) != 0):
            raise DomainError("cost must be nonnegative with a zero diagonal")
        object.__setattr__(self, "cost", c)
        off = c[~np.eye(len(c), dtype=bool)]
        uniform = off.size > 0 and np.ptp(off) <= 1e-15 * max(off.max(), 1.0)
        # d(x, y) = c for all x != y: W1 is c times the total variation distance
        object.__setattr__(self, "_uniform", float(off[0]) if uniform else None)

    @property
    def n_states(self):
        return self.cost.shape[0]

    @property
    def diameter(self):
        return float(self.cost.max())


@dataclass(frozen=True, eq=False)
class TransportResult:
    distance: float
    plan: np.ndarray = None


def _check_simplex(p, n, what):
    p = np.asarray(p, dtype=float)
    if p.shape != (n,):
        raise DomainError(f"{what} must have length {n}")
    if np.any(p < -SIMPLEX_TOL) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise DomainError(f"{what} is not a probability vector", total=float(p.sum()))
    return np.clip(p, 0.0, None)


def _check_rows(atoms, n, what):
    if atoms.shape[1] != n:
        raise DomainError(f"{what} atoms must have length {n}")
    if np.any(atoms < -SIMPLEX_TOL) or np.abs(atoms.sum(axis=1) - 1.0).max() > SIMPLEX_TOL:
        raise DomainError(f"{what} has an atom that is not a probability vector")
    return np.clip(atoms, 0.0, None)


def _emd(a, b, m):
    plan, log = ot.emd(a, b, m, numItermax=10_000_000, log=True, center_dual=False)
    if log.get("result_code", 1) != 1:
        raise NumericError("network simplex did not converge", warning=log.get("warning"))
    return plan


def wasserstein_inner(p, q, cost, return_plan=False):
    """Exact 1-Wasserstein distance between state distributions ``p`` and ``q``.

    Mass shared by ``p`` and ``q`` stays in place (optimal for a metric cost);
    the remaining excess is routed by the network simplex.  The pair is
    solved in a canonical order so the value is exactly symmetric.
    """
    n = cost.n_states
    return _ordered_inner(_check_simplex(p, n, "p"), _check_simplex(q, n, "q"), cost, return_plan)


def _ordered_inner(p, q, cost, return_plan=False):
    if tuple(q) < tuple(p):
        res = _inner(q, p, cost, return_plan)
        return TransportResult(res.distance, None if res.plan is None else res.plan.T)
    return _inner(p, q, cost, return_plan)


def _inner(p, q, cost, return_plan):
    common = np.minimum(p, q)
    src = p - common
    dst = q - common
    moved = src.sum()
    if moved <= MASS_TOL:
        return TransportResult(0.0, np.diag(p) if return_plan else None)
    i = np.flatnonzero(src > MASS_TOL)
    j = np.flatnonzero(dst > MASS_TOL)
    if len(i) == 0 or len(j) == 0:
        # the excess is spread below MASS_TOL per state: round-off, not transport
        return TransportResult(0.0, np.diag(p) if return_plan else None)
    if cost._uniform is not None and not return_plan:
        return TransportResult(cost._uniform * float(0.5 * np.abs(p - q).sum()))
    if (len(i) == 1 or len(j) == 1) and not return_plan:
        # one side is a single state, so the only feasible plan ships everything through it
        return TransportResult(float(src[i] @ cost.cost[np.ix_(i, j)] @ dst[j] / moved))
    a, b = src[i], dst[j]
    sub = _emd(a / a.sum(), b / b.sum(), cost.cost[np.ix_(i, j)])
    distance = float(moved * np.sum(sub * cost.cost[np.ix_(i, j)]))
    plan = None
    if return_plan:
        plan = np.diag(common)
        plan[np.ix_(i, j)] += moved * sub
    return TransportResult(distance, plan)


def inner_distance_matrix(atoms_a, atoms_b, cost):
    """Pairwise ``wasserstein_inner`` between rows of two atom arrays."""
    a = np.atleast_2d(np.asarray(atoms_a, dtype=float))
    b = np.atleast_2d(np.asarray(atoms_b, dtype=float))
    if cost._uniform is not None:
        return _tv_matrix(a, b) * cost._uniform
    a, b = _check_rows(a, cost.n_states, "atoms_a"), _check_rows(b, cost.n_states, "atoms_b")
    out = np.empty((len(a), len(b)))
    for r, pa in enumerate(a):
        for c, pb in enumerate(b):
            out[r, c] = _ordered_inner(pa, pb, cost).distance
    return out


def _tv_matrix(a, b):
    return 0.5 * np.abs(a[:, None, :] - b[None, :, :]).sum(axis=-1)


def inner_lower_bound(atoms_a, atoms_b, cost):
    """Entrywise lower bound on ``inner_distance_matrix``.

    The smallest off-diagonal ground distance times the total variation,
    sharpened for Euclidean costs by the distance between mean embeddings
    (W1 dominates every 1-Lipschitz linear functional).
    """
    a = np.atleast_2d(np.asarray(atoms_a, dtype=float))
    b = np.atleast_2d(np.asarray(atoms_b, dtype=float))
    off = cost.cost[~np.eye(cost.n_states, dtype=bool)]
    bound = (off.min() if off.size else 0.0) * _tv_matrix(a, b)
    if cost.embedding is not None:
        diff = (a @ cost.embedding)[:, None, :] - (b @ cost.embedding)[None, :, :]
        bound = np.maximum(bound, np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)))
    return bound


def wasserstein_outer(model_a, model_b, cost, weights_a=None, weights_b=None, lazy=True):
    """1-Wasserstein distance between two collections of state distributions.

    With equal atom counts and uniform weights this is ``1/m`` times the
    optimal assignment cost (Hungarian algorithm); otherwise the general
    transport problem between the weighted atoms is solved exactly.

    With ``lazy`` (and a non-uniform ground cost) inner distances are
    evaluated on demand: the outer problem is solved on a lower-bound matrix,
    exact inner distances replace the bounds on the entries the solution uses,
    and the loop repeats until the solution only uses exact entries.  That
    solution is optimal for the exact matrix, so the value is unchanged while
    far fewer inner problems are solved.
    """
    a = np.atleast_2d(np.asarray(model_a, dtype=float))
    b = np.atleast_2d(np.asarray(model_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise DomainError("models must be nonempty")
    a, b = _check_rows(a, cost.n_states, "model_a"), _check_rows(b, cost.n_states, "model_b")
    assignment = weights_a is None and weights_b is None and len(a) == len(b)
    wa = np.full(len(a), 1.0 / len(a)) if weights_a is None else np.asarray(weights_a, float)
    wb = np.full(len(b), 1.0 / len(b)) if weights_b is None else np.asarray(weights_b, float)
    if abs(wa.sum() - 1.0) > SIMPLEX_TOL or abs(wb.sum() - 1.0) > SIMPLEX_TOL:
        raise DomainError("model weights must sum to 1")

    def solve(d):
        if assignment:
            rows, cols = linear_sum_assignment(d)
            plan = np.zeros_like(d)
            plan[rows, cols] = 1.0 / len(a)
            return plan
        return _emd(wa / wa.sum(), wb / wb.sum(), d)

    if not lazy or cost._uniform is not None:
        d = inner_distance_matrix(a, b, cost)
        return float(np.sum(solve(d) * d))

    d = inner_lower_bound(a, b, cost)
    exact = np.zeros(d.shape, dtype=bool)
    while True:
        plan = solve(d)
        todo = np.argwhere((plan > 0) & ~exact)
        if len(todo) == 0:
            return float(np.sum(plan * d))
        for r, c in todo:
            d[r, c] = _ordered_inner(a[r], b[c], cost).distance
            exact[r, c] = True


def _per_state(model):
    if hasattr(model, "per_state"):
        return model.per_state()
    return [(np.asarray(atoms), None) for atoms in model]


def wbar(model_a, model_b, cost, return_all=False):
    """Supremal outer distance: maximum over source states of ``wasserstein_outer``.

    Returns ``(distance, argmax_state)``, or ``(distance, argmax_state,
    per_state_distances)`` with ``return_all``.
    """
    sa, sb = _per_state(model_a), _per_state(model_b)
    if len(sa) != len(sb):
        raise DomainError("models must cover the same state set")
    per_state = np.array(
        [wasserstein_outer(aa, ab, cost, wa, wb) for (aa, wa), (ab, wb) in zip(sa, sb)]
    )
    x = int(np.argmax(per_state))
    if return_all:
        return float(per_state[x]), x, per_state
    return float(per_state[x]), x
