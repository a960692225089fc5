"""Tabular MDPs, policies and trajectory sampling."""

from dataclasses import dataclass, field

import numpy as np

from ._rng import stream
from .exceptions import ConfigurationError, DomainError
from .io import write_csv

STOCHASTIC_ATOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


def _check_stochastic(rows, what):
    if np.any(rows < 0):
        raise ConfigurationError(f"{what} has negative entries")
    err = np.abs(rows.sum(axis=-1) - 1.0)
    if err.size and err.max() > STOCHASTIC_ATOL:
        raise ConfigurationError(
            f"{what} rows must sum to 1", max_row_error=float(err.max())
        )


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with transition tensor ``p(x'|x,a)`` of shape ``[S, A, S]``.

    ``embedding`` holds one coordinate vector per state (shape ``[S, d]``); it
    feeds the state kernel and the base metric of the transport distances.
    ``reward_bank`` maps reward names to state-reward vectors.
    """

    transition: np.ndarray
    embedding: np.ndarray
    reward_bank: dict = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        p = _frozen(self.transition)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or p.shape[0] < 1 or p.shape[1] < 1:
            raise ConfigurationError(
                "transition must have shape [n_states, n_actions, n_states]",
                shape=list(p.shape),
            )
        _check_stochastic(p, "transition")
        emb = _frozen(self.embedding)
        if emb.ndim == 1:
            emb = _frozen(emb[:, None])
        if emb.ndim != 2 or emb.shape[0] != p.shape[0] or emb.shape[1] < 1:
            raise ConfigurationError("embedding must have shape [n_states, d]")
        if not np.all(np.isfinite(emb)):
            raise ConfigurationError("embedding coordinates must be finite")
        bank = {}
        for key, r in dict(self.reward_bank).items():
            r = _frozen(r)
            if r.shape != (p.shape[0],) or not np.all(np.isfinite(r)):
                raise ConfigurationError(f"reward {key!r} must be a finite vector of length {p.shape[0]}")
            bank[str(key)] = r
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "embedding", emb)
        object.__setattr__(self, "reward_bank", bank)

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    def reward(self, name):
        try:
            return self.reward_bank[name]
        except KeyError:
            raise ConfigurationError(
                f"unknown reward {name!r}", available=sorted(self.reward_bank)
            ) from None


@dataclass(frozen=True, eq=False)
class Policy:
    """Stochastic policy ``pi(a|x)`` stored as an ``[S, A]`` matrix."""

    probs: np.ndarray
    name: str = "policy"

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise ConfigurationError("policy probs must be a [n_states, n_actions] matrix")
        _check_stochastic(probs, "policy")
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen(self.states, dtype=np.int64))

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True, eq=False)
class DiscountedMdp:
    """An MDP, a policy, a discount and the policy-marginal kernel ``p_pi``."""

    mdp: TabularMdp
    policy: Policy
    gamma: float
    p_pi: np.ndarray

    @property
    def n_states(self):
        return self.mdp.n_states

    @property
    def embedding(self):
        return self.mdp.embedding


def check_gamma(gamma):
    gamma = float(gamma)
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"gamma must lie in [0, 1), got {gamma}")
    return gamma


def build_ppi(mdp, policy, gamma):
    """Marginalise the policy out of the transition tensor.

    Returns a :class:`DiscountedMdp` whose ``p_pi[x, x']`` equals
    ``sum_a pi(a|x) p(x'|x, a)``.
    """
    gamma = check_gamma(gamma)
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ConfigurationError(
            "policy shape does not match the MDP",
            policy_shape=list(policy.probs.shape),
            expected=[mdp.n_states, mdp.n_actions],
        )
    p_pi = np.einsum("xa,xay->xy", policy.probs, mdp.transition)
    # re-normalise away summation round-off so rows are stochastic to 1e-12
    p_pi = p_pi / p_pi.sum(axis=1, keepdims=True)
    return DiscountedMdp(mdp=mdp, policy=policy, gamma=gamma, p_pi=_frozen(p_pi))


def _cdf(p_pi):
    cdf = np.cumsum(p_pi, axis=1)
    return cdf / cdf[:, -1:]


def step_states(cdf, states, u):
    """Inverse-CDF successor draw for each ``states[i]`` with uniform ``u[i]``.

    The successor is the number of CDF entries that are ``<= u``; this never
    selects a zero-probability state.
    """
    return (cdf[states] <= u[:, None]).sum(axis=1)


def sample_trajectory(dm, x0, horizon, rng_stream):
    """Sample ``horizon`` states starting from ``x0`` on ``rng_stream``."""
    x0 = int(x0)
    if not 0 <= x0 < dm.n_states:
        raise DomainError(f"x0={x0} is not a state index")
    horizon = int(horizon)
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    cdf = _cdf(dm.p_pi)
    u = rng_stream.random(horizon - 1)
    states = np.empty(horizon, dtype=np.int64)
    states[0] = x0
    for t in range(1, horizon):
        states[t] = step_states(cdf, states[t - 1 : t], u[t - 1 : t])[0]
    return Trajectory(states)


def sample_trajectories(dm, x0, n_traj, horizon, seed, offset=0):
    """Sample ``n_traj`` trajectories as an ``[n_traj, horizon]`` int array.

    Trajectory ``i`` draws its uniforms from ``stream(seed, offset + i)``, so
    row ``i`` equals ``sample_trajectory(dm, x0, horizon, stream(seed, offset + i))``.
    ``x0`` may be a single state or one state per trajectory.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    x0 = np.broadcast_to(np.asarray(x0, dtype=np.int64), (n_traj,))
    if np.any((x0 < 0) | (x0 >= dm.n_states)):
        raise DomainError("x0 contains an invalid state index")
    u = np.empty((n_traj, max(horizon - 1, 0)))
    for i in range(n_traj):
        u[i] = stream(seed, offset + i).random(horizon - 1)
    cdf = _cdf(dm.p_pi)
    out = np.empty((n_traj, horizon), dtype=np.int64)
    out[:, 0] = x0
    for t in range(1, horizon):
        out[:, t] = step_states(cdf, out[:, t - 1], u[:, t - 1])
    return out


def write_trajectories_csv(path_or_buf, trajectories):
    """Write trajectories as CSV with columns ``trajectory_id, t, state``."""
    trajectories = np.atleast_2d(np.asarray(trajectories, dtype=np.int64))
    rows = ((i, t, s) for i, row in enumerate(trajectories) for t, s in enumerate(row))
    write_csv(path_or_buf, "trajectories", rows)
