"""Built-in environments and the environment-config loader.

Every builder returns ``(TabularMdp, Policy)`` with the embedding and the
reward bank populated.  Grid-shaped environments embed states as cell centres
in the unit square; abstract environments embed states one-hot.
"""

import json
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError
from .mdp import Policy, TabularMdp

# grid action order used by every grid environment
ACTIONS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}
UP, DOWN, LEFT, RIGHT = range(4)

WINDY_REWARDS = {
    # quadrant constants in reading order: top-left, top-right, bottom-left, bottom-right
    "lopsided_checkerboard": (15.0, -10.0, -2.0, 2.0),
    "hopscotch": (3.0, -1.0, -2.0, 2.0),
}

WINDY_POLICIES = {
    # action probabilities (up, down, left, right)
    "uniform": (0.25, 0.25, 0.25, 0.25),
    "up_left": (0.4, 0.1, 0.4, 0.1),
    "down_right": (0.1, 0.4, 0.1, 0.4),
    "up_right": (0.4, 0.1, 0.1, 0.4),
    "down_left": (0.1, 0.4, 0.4, 0.1),
}


def _unit_rewards(n):
    bank = {f"unit_s{i}": np.eye(n)[i] for i in range(n)}
    bank["constant"] = np.ones(n)
    return bank


def _single_action(matrix, name, policy_name="only"):
    p = np.asarray(matrix, dtype=float)[:, None, :]
    n = p.shape[0]
    mdp = TabularMdp(p, np.eye(n), _unit_rewards(n), name=name)
    return mdp, Policy(np.ones((n, 1)), name=policy_name)


def _reject_params(params, allowed):
    extra = set(params) - set(allowed)
    if extra:
        raise ConfigurationError(f"unknown parameters {sorted(extra)}", allowed=sorted(allowed))


def three_state_c1(**params):
    _reject_params(params, ())
    third = 1.0 / 3.0
    return _single_action(
        [[0.5, 0.5, 0.0], [0.0, 0.0, 1.0], [third, third, third]], "three_state_c1"
    )


def uniform_three(**params):
    _reject_params(params, ())
    return _single_action(np.full((3, 3), 1.0 / 3.0), "uniform_three")


def chain(k=5, **params):
    """Deterministic ``k``-state chain ``0 -> 1 -> ... -> k-1`` with absorbing end."""
    _reject_params(params, ())
    k = int(k)
    if k < 1:
        raise ConfigurationError("chain needs k >= 1")
    p = np.zeros((k, k))
    p[np.arange(k - 1), np.arange(1, k)] = 1.0
    p[k - 1, k - 1] = 1.0
    mdp, pol = _single_action(p, "chain")
    bank = dict(mdp.reward_bank)
    bank["end"] = np.eye(k)[k - 1]
    bank["linear"] = np.arange(k) / max(k - 1, 1)
    return TabularMdp(mdp.transition, mdp.embedding, bank, name="chain"), pol


def _grid_embedding(cells, n_rows, n_cols):
    cells = np.asarray(cells, dtype=float)
    x = (cells[:, 1] + 0.5) / n_cols
    y = 1.0 - (cells[:, 0] + 0.5) / n_rows
    return np.column_stack([x, y])


def t_maze(stem_length=3, arm_length=2, **params):
    """T-shaped maze: a vertical stem leading up to a fork with two arms.

    States are ordered stem (bottom to top), fork, left arm (inner to outer),
    right arm (inner to outer).  Arm ends absorb.  The bundled policy walks up
    the stem and, at the fork, goes back down, right or left with
    probabilities 1/6, 1/2 and 1/3; inside an arm it walks outward.
    """
    _reject_params(params, ())
    L, A = int(stem_length), int(arm_length)
    if L < 1 or A < 1:
        raise ConfigurationError("t_maze needs stem_length >= 1 and arm_length >= 1")
    cells = [(L - i, A) for i in range(L)]  # (row, col); fork is row 0
    cells.append((0, A))
    cells += [(0, A - j) for j in range(1, A + 1)]
    cells += [(0, A + j) for j in range(1, A + 1)]
    index = {c: s for s, c in enumerate(cells)}
    n = len(cells)
    fork = L
    left_end, right_end = L + A, L + 2 * A

    p = np.zeros((n, 4, n))
    for s, (r, c) in enumerate(cells):
        for a, (dr, dc) in enumerate(ACTIONS.values()):
            target = index.get((r + dr, c + dc), s)
            p[s, a, s if s in (left_end, right_end) else target] = 1.0

    pi = np.zeros((n, 4))
    pi[:fork, UP] = 1.0
    pi[fork, [DOWN, RIGHT, LEFT]] = (1 / 6, 1 / 2, 1 / 3)
    pi[fork + 1 : left_end + 1, LEFT] = 1.0
    pi[left_end + 1 :, RIGHT] = 1.0

    bank = {"constant": np.ones(n)}
    bank["left_goal"] = np.eye(n)[left_end]
    bank["right_goal"] = np.eye(n)[right_end]
    emb = _grid_embedding(cells, L + 1, 2 * A + 1)
    return TabularMdp(p, emb, bank, name="t_maze"), Policy(pi, name="fork_1_6_1_2_1_3")


def _wind_target(r, c, n):
    half = n // 2
    corner_r = 0 if r < half else n - 1
    corner_c = 0 if c < half else n - 1
    return r + int(np.sign(corner_r - r)), c + int(np.sign(corner_c - c))


def windy_grid_transition(n, wind):
    """Transition tensor of the ``n x n`` windy grid.

    The chosen move is applied first (moves into a wall leave the agent in
    place); then, with probability ``wind``, the agent is pushed one cell
    diagonally toward the corner of the quadrant it landed in.  Cell
    ``(row, col)`` has state index ``row * n + col``; row 0 is the top.
    """
    p = np.zeros((n * n, 4, n * n))
    for r in range(n):
        for c in range(n):
            for a, (dr, dc) in enumerate(ACTIONS.values()):
                r1 = min(max(r + dr, 0), n - 1)
                c1 = min(max(c + dc, 0), n - 1)
                r2, c2 = _wind_target(r1, c1, n)
                p[r * n + c, a, r1 * n + c1] += 1.0 - wind
                p[r * n + c, a, r2 * n + c2] += wind
    return p


def windy_grid(size=12, wind=0.3, policy="uniform", **params):
    _reject_params(params, ())
    n = int(size)
    wind = float(wind)
    if n < 2 or n % 2:
        raise ConfigurationError("windy_grid size must be an even integer >= 2", size=size)
    if not 0.0 <= wind <= 1.0:
        raise ConfigurationError("wind must lie in [0, 1]", wind=wind)
    if policy not in WINDY_POLICIES:
        raise ConfigurationError(f"unknown windy_grid policy {policy!r}", available=sorted(WINDY_POLICIES))
    cells = [(r, c) for r in range(n) for c in range(n)]
    quadrant = np.array([2 * (r >= n // 2) + (c >= n // 2) for r, c in cells])
    bank = {name: np.asarray(vals)[quadrant] for name, vals in WINDY_REWARDS.items()}
    bank["constant"] = np.ones(n * n)
    mdp = TabularMdp(
        windy_grid_transition(n, wind), _grid_embedding(cells, n, n), bank, name="windy_grid"
    )
    pi = np.tile(WINDY_POLICIES[policy], (n * n, 1))
    return mdp, Policy(pi, name=policy)


def windy_cell(size, row, col):
    """State index of grid cell ``(row, col)``."""
    return int(row) * int(size) + int(col)


ENVIRONMENTS = {
    "three_state_c1": three_state_c1,
    "uniform_three": uniform_three,
    "t_maze": t_maze,
    "windy_grid": windy_grid,
    "chain": chain,
}


def make_env(name, params=None):
    """Build a registered environment; returns ``(TabularMdp, Policy)``."""
    try:
        builder = ENVIRONMENTS[name]
    except KeyError:
        raise ConfigurationError(f"unknown environment {name!r}", available=sorted(ENVIRONMENTS)) from None
    try:
        return builder(**dict(params or {}))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid parameters for {name}: {exc}") from exc


def env_from_config(cfg):
    """Build an environment from a config mapping.

    Schema::

        {"name": "<registered name or 'custom'>",
         "params": {...},                       # builder keyword arguments
         "rewards": {"<name>": [r_0, ...]},     # optional, merged into the bank
         # custom only:
         "transition": [[[...]]], "embedding": [[...]], "policy": [[...]]}
    """
    if not isinstance(cfg, dict) or "name" not in cfg:
        raise ConfigurationError("environment config needs a 'name'")
    name = cfg["name"]
    if name == "custom":
        try:
            mdp = TabularMdp(cfg["transition"], cfg["embedding"], name="custom")
            policy = Policy(cfg.get("policy", np.full(mdp.transition.shape[:2], 1.0 / mdp.n_actions)))
        except KeyError as exc:
            raise ConfigurationError(f"custom environment is missing {exc}") from None
    else:
        mdp, policy = make_env(name, cfg.get("params"))
    extra = cfg.get("rewards") or {}
    if extra:
        bank = dict(mdp.reward_bank)
        bank.update({k: np.asarray(v, dtype=float) for k, v in extra.items()})
        mdp = TabularMdp(mdp.transition, mdp.embedding, bank, name=mdp.name)
    return mdp, policy


def load_env_config(path):
    """Read an environment config from a JSON or YAML file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        cfg = yaml.safe_load(text)
    else:
        cfg = json.loads(text)
    return env_from_config(cfg)
