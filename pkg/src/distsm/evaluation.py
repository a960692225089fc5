"""Return distributions from particle models, risk functionals and scoring.

A particle model turns any reward vector into a return distribution without
further learning: every atom ``theta`` at ``x`` yields the return
``<theta, r> / (1 - gamma)``.  The Monte Carlo oracle produces the matching
ground truth from sampled trajectories.
"""

import math
import re
from dataclasses import dataclass, field

import numpy as np

from ._rng import stream
from .exceptions import ConfigurationError, DomainError
from .io import write_csv
from .mdp import sample_trajectories

WEIGHT_TOL = 1e-9
TIE_RTOL = 1e-12
INIT_KEY = 0x1D0  # stream key for initial-state draws


@dataclass(frozen=True, eq=False)
class ReturnDistribution:
    """Particles of a return law; equal weights unless ``weights`` is given."""

    particles: np.ndarray
    source: str = "dsm"
    weights: np.ndarray = None

    def __post_init__(self):
        p = np.array(self.particles, dtype=float).ravel()
        if p.size == 0:
            raise DomainError("return distribution is empty")
        if not np.all(np.isfinite(p)):
            raise DomainError("return particles must be finite")
        p.flags.writeable = False
        object.__setattr__(self, "particles", p)
        if self.weights is not None:
            w = np.array(self.weights, dtype=float).ravel()
            if w.shape != p.shape or np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
                raise DomainError("weights must be a probability vector over the particles")
            w.flags.writeable = False
            object.__setattr__(self, "weights", w)

    @property
    def probs(self):
        if self.weights is None:
            return np.full(len(self.particles), 1.0 / len(self.particles))
        return self.weights

    @property
    def mean(self):
        if self.weights is None:
            return float(self.particles.mean())
        return float(self.weights @ self.particles)

    def to_csv(self, path_or_buf, meta=None):
        rows = ((i, v, w) for i, (v, w) in enumerate(zip(self.particles, self.probs)))
        write_csv(path_or_buf, "return_distribution", rows, {"source": self.source, **(meta or {})})


def _reward(r, n_states):
    r = np.asarray(r, dtype=float)
    if r.shape != (n_states,):
        raise DomainError(f"reward must have length {n_states}", shape=list(r.shape))
    if not np.all(np.isfinite(r)):
        raise DomainError("reward must be finite")
    return r


def returns_from_dsm(model, x, r):
    """Return particles ``<theta_i(x), r> / (1 - gamma)`` of a particle model at state ``x``.

    ``x`` may also be an initial-state distribution, giving the weighted
    mixture of the per-state particle sets.
    """
    r = _reward(r, model.n_states)
    scale = 1.0 / (1.0 - model.gamma)
    values = model.atoms @ r * scale  # [S, m]
    if np.ndim(x) == 0:
        x = int(x)
        if not 0 <= x < model.n_states:
            raise DomainError(f"state {x} out of range")
        return ReturnDistribution(values[x], "dsm")
    d0 = np.asarray(x, dtype=float)
    if d0.shape != (model.n_states,) or np.any(d0 < 0) or abs(d0.sum() - 1.0) > WEIGHT_TOL:
        raise DomainError("initial distribution must be a probability vector over states")
    support = np.flatnonzero(d0 > 0)
    weights = np.repeat(d0[support] / model.m, model.m)
    return ReturnDistribution(values[support].ravel(), "dsm", weights / weights.sum())


def cvar(dist, alpha):
    """Lower-tail conditional value at risk.

    With equal weights this is the mean of the ``ceil(alpha * m)`` smallest
    particles.  With general weights the smallest particles fill a tail of
    mass exactly ``alpha``, the boundary particle contributing only the
    weight still missing; both rules agree whenever ``alpha * m`` is an
    integer.
    """
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise DomainError("alpha must lie in (0, 1]", alpha=alpha)
    order = np.argsort(dist.particles, kind="stable")
    values = dist.particles[order]
    if dist.weights is None:
        k = math.ceil(alpha * len(values) - 1e-12)
        return float(values[:k].mean())
    w = dist.weights[order]
    before = np.concatenate([[0.0], np.cumsum(w)[:-1]])
    take = np.clip(alpha - before, 0.0, w)
    return float(take @ values / take.sum())


def cramer_distance(a, b):
    """``sqrt(integral (F_a - F_b)^2 dt)`` between two particle laws, exact."""
    support = np.union1d(a.particles, b.particles)
    if len(support) < 2:
        return 0.0

    def cdf(dist):
        order = np.argsort(dist.particles, kind="stable")
        cum = np.cumsum(dist.probs[order])
        idx = np.searchsorted(dist.particles[order], support[:-1], side="right")
        return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)

    diff = cdf(a) - cdf(b)
    return float(math.sqrt(np.sum(diff**2 * np.diff(support))))


@dataclass
class RiskReport:
    mean: float
    cvar: dict = field(default_factory=dict)
    policy: str = ""
    reward: str = ""

    def to_dict(self):
        return {
            "policy": self.policy,
            "reward": self.reward,
            "mean": self.mean,
            "cvar": {f"{a:g}": v for a, v in self.cvar.items()},
        }


def risk_report(dist, alphas=(0.4,), policy="", reward=""):
    return RiskReport(dist.mean, {float(a): cvar(dist, a) for a in alphas}, policy, reward)


_CVAR = re.compile(r"^cvar\(?\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*\)?$")


def parse_criterion(spec):
    """``"mean"`` or ``"cvar(0.4)"`` (also ``"cvar0.4"``, ``{"cvar": 0.4}``) to ``(name, alpha)``."""
    if isinstance(spec, dict):
        if spec.keys() == {"mean"} or spec.get("name") == "mean":
            return ("mean", None)
        alpha = spec.get("cvar", spec.get("alpha"))
        if alpha is None:
            raise ConfigurationError(f"cannot parse criterion {spec!r}")
        spec = f"cvar({alpha})"
    text = str(spec).strip().lower()
    if text == "mean":
        return ("mean", None)
    match = _CVAR.match(text)
    if not match:
        raise ConfigurationError(f"cannot parse criterion {spec!r}")
    alpha = float(match.group(1))
    if not 0.0 < alpha <= 1.0:
        raise ConfigurationError("CVaR level must lie in (0, 1]", alpha=alpha)
    return ("cvar", alpha)


def criterion_label(name, alpha):
    return "mean" if name == "mean" else f"cvar({alpha:g})"


def evaluate_criterion(dist, criterion):
    name, alpha = criterion
    return dist.mean if name == "mean" else cvar(dist, alpha)


def rank_by_statistics(stats, label):
    """Order policies by decreasing statistic; name order breaks ties, which are flagged.

    ``stats`` maps policy name to value.  Two values tie when they agree to
    a relative ``1e-12``.
    """
    names = sorted(stats)
    scale = max([abs(v) for v in stats.values()] + [1.0])
    order = sorted(names, key=lambda p: -stats[p])
    # stable sort on names first, then group values within the tie tolerance
    groups = []
    for p in order:
        if groups and abs(stats[groups[-1][0]] - stats[p]) <= TIE_RTOL * scale:
            groups[-1].append(p)
        else:
            groups.append([p])
    ordering = [p for g in groups for p in sorted(g)]
    ties = [sorted(g) for g in groups if len(g) > 1]
    return {
        "criterion": label,
        "ordering": ordering,
        "statistics": {p: stats[p] for p in ordering},
        "ties": ties,
        "tied": bool(ties),
    }


def rank_policies(models, r, x0, criteria=("mean", "cvar(0.4)")):
    """Rank policies by each criterion computed from their particle models.

    ``models`` maps policy name to a particle model (all sharing state set
    and discount).  Returns one ranking dict per criterion, best first.
    """
    if not models:
        raise DomainError("no models to rank")
    models = dict(models)
    gammas = {m.gamma for m in models.values()}
    sizes = {m.n_states for m in models.values()}
    if len(gammas) > 1 or len(sizes) > 1:
        raise DomainError("models must share state set and discount", gammas=sorted(gammas))
    parsed = [parse_criterion(c) for c in criteria]
    dists = {p: returns_from_dsm(m, x0, r) for p, m in models.items()}
    return rank_distributions(dists, parsed)


def rank_distributions(dists, criteria):
    parsed = [c if isinstance(c, tuple) else parse_criterion(c) for c in criteria]
    out = []
    for crit in parsed:
        stats = {p: evaluate_criterion(d, crit) for p, d in dists.items()}
        out.append(rank_by_statistics(stats, criterion_label(*crit)))
    return out


def default_horizon(gamma, tol=1e-6):
    """Smallest ``T`` with ``gamma^T <= tol``."""
    if gamma <= 0.0:
        return 1
    return max(1, int(math.ceil(math.log(tol) / math.log(gamma))))


def occupancy_particles(trajectories, n_states, gamma, horizon=None):
    """Truncated discounted occupancies ``sum_{t<T} (1 - gamma) gamma^t e_{X_t}``, renormalised to sum to one."""
    traj = np.atleast_2d(np.asarray(trajectories, dtype=np.int64))
    t = traj.shape[1] if horizon is None else int(horizon)
    traj = traj[:, :t]
    w = (1.0 - gamma) * gamma ** np.arange(t)
    w = w / w.sum()
    out = np.zeros((len(traj), n_states))
    rows = np.repeat(np.arange(len(traj)), t)
    np.add.at(out, (rows, traj.ravel()), np.tile(w, len(traj)))
    return out


def oracle_trajectories(dm, x0, n_traj, horizon=None, seed=0):
    """Trajectories ``[n_traj, horizon]`` used by :func:`mc_oracle`.

    ``x0`` is a state or an initial-state distribution; start states drawn
    from a distribution come from their own stream, and trajectory ``i``
    uses the stream ``(seed, i)``.
    """
    n_traj = int(n_traj)
    if n_traj < 1:
        raise DomainError("n_traj must be positive")
    horizon = default_horizon(dm.gamma) if horizon is None else int(horizon)
    if horizon < 1:
        raise DomainError("horizon must be positive")
    if np.ndim(x0) > 0:
        d0 = np.asarray(x0, dtype=float)
        if d0.shape != (dm.n_states,) or np.any(d0 < 0) or abs(d0.sum() - 1.0) > WEIGHT_TOL:
            raise DomainError("initial distribution must be a probability vector over states")
        u = stream(seed, INIT_KEY, 0).random(n_traj)
        x0 = np.minimum(np.searchsorted(np.cumsum(d0), u, side="right"), dm.n_states - 1)
    return sample_trajectories(dm, x0, n_traj, horizon, seed)


def discounted_returns(trajectories, r, gamma):
    """``sum_{t<T} gamma^t r(X_t)`` per trajectory."""
    traj = np.atleast_2d(trajectories)
    return np.asarray(r, dtype=float)[traj] @ (gamma ** np.arange(traj.shape[1]))


def mc_oracle(dm, x0, r, n_traj, horizon=None, seed=0):
    """Monte Carlo return distribution and occupancy particles from ``x0``.

    Each trajectory of length ``horizon`` (default: smallest ``T`` with
    ``gamma^T <= 1e-6``) gives the return ``sum_{t<T} gamma^t r(X_t)`` and the
    renormalised truncated occupancy vector.  ``x0`` is a state or an
    initial-state distribution; ``r`` may be ``None`` to skip returns.
    Returns ``(ReturnDistribution or None, occupancies [n_traj, S])``.
    """
    traj = oracle_trajectories(dm, x0, n_traj, horizon, seed)
    occ = occupancy_particles(traj, dm.n_states, dm.gamma)
    if r is None:
        return None, occ
    r = _reward(r, dm.n_states)
    return ReturnDistribution(discounted_returns(traj, r, dm.gamma), "monte_carlo"), occ


def return_range(r, gamma):
    """Width ``(max r - min r) / (1 - gamma)`` of the interval holding every return."""
    r = np.asarray(r, dtype=float)
    return float((r.max() - r.min()) / (1.0 - gamma))
