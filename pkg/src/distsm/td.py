"""Sample-based temporal-difference learning of an equally weighted particle model.

Atoms are the row-softmax of free logits.  Each training step samples a batch
of ``n``-step trajectory windows, builds exact ``n``-step targets from the
slowly moving target logits, and takes a gradient step on the model-MMD loss
between the source atoms and their targets.  Gradients are analytic: the model
kernel ``(1 + D / sigma^2)^(-1/2)`` is differentiated through the quadratic
form ``D`` and the softmax, with ``sigma`` held fixed for the step.
"""

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._rng import stream
from .dp import DeltaModel
from .exceptions import ConfigurationError, DomainError, NumericError
from .kernels import ModelKernelSpec, SIGMA2_FLOOR
from .mdp import _cdf, step_states
from .transport import wbar


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ParamModel:
    """Logits of the online and target atoms, both ``[n_states, m, n_states]``."""

    logits: np.ndarray
    target_logits: np.ndarray
    gamma: float

    def __post_init__(self):
        for name in ("logits", "target_logits"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim != 3 or a.shape[0] != a.shape[2]:
                raise DomainError(f"{name} must have shape [n_states, m, n_states]")
            if not np.all(np.isfinite(a)):
                raise NumericError(f"{name} contain non-finite values")
        if np.shape(self.logits) != np.shape(self.target_logits):
            raise DomainError("online and target logits differ in shape")

    @classmethod
    def initial(cls, n_states, m, gamma, seed=0, scale=1.0):
        """Small random logits (``scale`` standard deviation); targets start equal."""
        logits = scale * stream(seed, 0xA7035).standard_normal((n_states, m, n_states))
        return cls(logits, logits.copy(), gamma)

    @property
    def n_states(self):
        return self.logits.shape[0]

    @property
    def m(self):
        return self.logits.shape[1]

    @property
    def atoms(self):
        return softmax(self.logits)

    @property
    def target_atoms(self):
        return softmax(self.target_logits)

    def to_delta(self, target=False):
        return DeltaModel(self.target_atoms if target else self.atoms, self.gamma)


@dataclass(frozen=True)
class TdConfig:
    gamma: float = 0.95
    n_step: int = 5
    learning_rate: float = 1e-2
    polyak_lambda: float = 0.01
    batch_size: int = 32
    steps: int = 10_000
    seed: int = 0
    m: int = 16
    sigma_policy: str = "median_heuristic"
    sigma: float = None
    init_scale: float = 1.0
    eval_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in [0, 1)", gamma=self.gamma)
        for name in ("n_step", "batch_size", "steps", "m"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer", value=getattr(self, name))
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0.0 <= self.polyak_lambda <= 1.0:
            raise ConfigurationError("polyak_lambda must lie in [0, 1]")
        if self.sigma_policy not in ("median_heuristic", "fixed"):
            raise ConfigurationError(f"unknown sigma policy {self.sigma_policy!r}")
        if self.sigma_policy == "fixed" and not (self.sigma and self.sigma > 0):
            raise ConfigurationError("a fixed sigma policy needs sigma > 0")
        if self.eval_every < 0:
            raise ConfigurationError("eval_every must be >= 0")

    @property
    def model_kernel(self):
        return ModelKernelSpec(self.sigma if self.sigma_policy == "fixed" else None)

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        return replace(self, **changes)


def nstep_weights(gamma, n):
    """Weights ``(1 - gamma) gamma^k`` of the first ``n`` window states and the bootstrap mass ``gamma^n``."""
    k = np.arange(n)
    return (1.0 - gamma) * gamma**k, gamma**n


def nstep_target_sample(window, target_atoms, gamma, mode="exact", rng=None):
    """``n``-step targets for one trajectory window ``(x_0, ..., x_n)``.

    ``exact`` returns, for every target atom ``theta`` at ``x_n``, the state
    distribution ``sum_{k<n} (1 - gamma) gamma^k e_{x_k} + gamma^n theta``.
    ``sample`` draws one state per atom with the geometric trick: ``Y`` is a
    ``Geometric(1 - gamma)`` draw counted from 0, and the atom's state is
    ``x_Y`` if ``Y < n`` and a draw from ``theta`` otherwise.
    """
    window = np.asarray(window, dtype=np.int64)
    target_atoms = np.atleast_2d(np.asarray(target_atoms, dtype=float))
    n = len(window) - 1
    if n < 1:
        raise DomainError("a window needs at least two states (n >= 1)")
    n_states = target_atoms.shape[1]
    if window.min() < 0 or window.max() >= n_states:
        raise DomainError("window state out of range")
    if mode == "exact":
        w, boot = nstep_weights(gamma, n)
        head = np.bincount(window[:n], weights=w, minlength=n_states)
        return head[None, :] + boot * target_atoms
    if mode != "sample":
        raise ConfigurationError(f"unknown target mode {mode!r}")
    rng = rng if isinstance(rng, np.random.Generator) else stream(0 if rng is None else rng)
    m = len(target_atoms)
    offsets = geometric_offsets(gamma, n, m, rng)
    out = np.empty(m, dtype=np.int64)
    head = offsets < n
    out[head] = window[offsets[head]]
    for i in np.flatnonzero(~head):
        out[i] = rng.choice(n_states, p=target_atoms[i])
    return out


def geometric_offsets(gamma, n, size, rng):
    """Draws of ``min(Y, n)`` with ``Y`` geometric on ``{0, 1, ...}``, ``P(Y = k) = (1 - gamma) gamma^k``.

    The value ``n`` marks a bootstrap draw.
    """
    if gamma == 0.0:
        return np.zeros(size, dtype=np.int64)
    y = rng.geometric(1.0 - gamma, size=size) - 1
    return np.minimum(y, n)


# The loss and gradient below work on a leading batch axis:
# source atoms theta [B, m, S], targets [B, m2, S], gram [S, S].


def _pair_sqmmd(a, b, gram):
    ka = a @ gram
    sa = np.einsum("bis,bis->bi", ka, a)
    sb = np.einsum("bjs,st,bjt->bj", b, gram, b)
    return np.maximum(sa[:, :, None] + sb[:, None, :] - 2.0 * np.einsum("bis,bjs->bij", ka, b), 0.0)


def _median_sigma2(dss, dst, dtt):
    b = len(dss)
    allv = np.concatenate([dss.reshape(b, -1), dtt.reshape(b, -1), dst.reshape(b, -1)], axis=1)
    k = (allv.shape[1] - 1) // 2
    return np.maximum(np.partition(allv, k, axis=1)[:, k], SIGMA2_FLOOR)


def batch_loss_and_grad(logits, targets, gram, sigma=None):
    """Per-window losses, full-MMD diagnostics and logit gradients.

    ``logits`` is ``[B, m, S]``; ``targets`` ``[B, m2, S]``.  The loss is
    ``mean_ij k(theta_i, theta_j) - 2 mean_ij k(theta_i, target_j)``; the
    full MMD adds the constant target-target term.  ``sigma`` ``None``
    applies the median heuristic per window.  Returns ``(loss [B],
    full_mmd2 [B], grad [B, m, S], sigma [B])``.
    """
    k = np.asarray(gram.gram if hasattr(gram, "gram") else gram, dtype=float)
    theta = softmax(logits)
    dss = _pair_sqmmd(theta, theta, k)
    dst = _pair_sqmmd(theta, targets, k)
    dtt = _pair_sqmmd(targets, targets, k)
    if sigma is None:
        s2 = _median_sigma2(dss, dst, dtt)
    else:
        s2 = np.full(len(theta), float(sigma) ** 2)
    c = (1.0 / s2)[:, None, None]
    base_ss = 1.0 + dss * c
    base_st = 1.0 + dst * c
    kss = base_ss**-0.5
    kst = base_st**-0.5
    ktt = (1.0 + dtt * c) ** -0.5
    m, m2 = theta.shape[1], targets.shape[1]
    loss = kss.mean(axis=(1, 2)) - 2.0 * kst.mean(axis=(1, 2))
    full = loss + ktt.mean(axis=(1, 2))

    # dk/dD = -(1/2) (1 + D/s2)^(-3/2) / s2 and dD(p, q)/dp = 2 K (p - q)
    gss = -0.5 * base_ss**-1.5 * c
    gst = -0.5 * base_st**-1.5 * c
    # self term: each unordered pair appears twice, so 4 / m^2
    a_ss = 4.0 / m**2 * gss
    a_st = -4.0 / (m * m2) * gst
    g_theta = (
        a_ss.sum(axis=2)[:, :, None] * theta
        - a_ss @ theta
        + a_st.sum(axis=2)[:, :, None] * theta
        - a_st @ targets
    ) @ k
    # softmax Jacobian: dtheta/dlogit = diag(theta) - theta theta^T
    grad = theta * (g_theta - np.sum(g_theta * theta, axis=-1, keepdims=True))
    if not np.all(np.isfinite(grad)):
        bad = np.argwhere(~np.isfinite(grad))[0]
        raise NumericError("non-finite gradient", window=int(bad[0]), atom=int(bad[1]))
    return loss, np.maximum(full, 0.0), grad, np.sqrt(s2)


def td_loss_and_grad(params, x, targets, gram, mks=None):
    """Loss, full-MMD diagnostic and gradient with respect to ``logits[x]``.

    ``params`` is a :class:`ParamModel` or a raw logits array; ``targets``
    are the target atoms ``[m2, S]`` for source state ``x``.  Returns
    ``(loss, full_mmd2, grad)`` with ``grad`` shaped ``[m, S]``.
    """
    logits = params.logits if isinstance(params, ParamModel) else np.asarray(params, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if targets.shape[1] != logits.shape[2]:
        raise DomainError("target atoms must live on the model's state set")
    sigma = (mks or ModelKernelSpec()).sigma
    loss, full, grad, _ = batch_loss_and_grad(logits[int(x)][None], targets[None], gram, sigma)
    return float(loss[0]), float(full[0]), grad[0]


@dataclass
class TdTrace:
    step: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    full_mmd: list = field(default_factory=list)
    wbar_ref: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.step, self.loss, self.full_mmd, self.wbar_ref))


def sample_windows(dm, cfg, step, init_dist=None):
    """Batch of ``n``-step windows ``[B, n + 1]`` for training step ``step``.

    Windows restart from ``init_dist`` (uniform by default).  All draws come
    from the stream ``(seed, step)``: one column of uniforms per batch element
    and time step.
    """
    b, n, s = cfg.batch_size, cfg.n_step, dm.n_states
    rng = stream(cfg.seed, 1, step)
    u = rng.random((n + 1, b))
    if init_dist is None:
        x = np.minimum((u[0] * s).astype(np.int64), s - 1)
    else:
        x = np.minimum(np.searchsorted(np.cumsum(init_dist), u[0], side="right"), s - 1)
    cdf = _cdf(dm.p_pi)
    out = np.empty((b, n + 1), dtype=np.int64)
    out[:, 0] = x
    for t in range(1, n + 1):
        x = step_states(cdf, x, u[t])
        out[:, t] = x
    return out


def train(dm, cfg, gram, init=None, reference=None, cost=None, init_dist=None, callback=None):
    """Train a :class:`ParamModel` with ``cfg.steps`` batched TD updates.

    Each step: sample windows, build exact ``n``-step targets from the target
    logits, descend the mean window loss, then move the target logits
    toward the online logits by ``polyak_lambda``.  With ``reference`` and
    ``cost`` the trace records the supremal outer distance to the reference
    every ``cfg.eval_every`` steps (and at the end).  Returns
    ``(ParamModel, TdTrace)``.
    """
    if abs(cfg.gamma - dm.gamma) > 0:
        raise ConfigurationError("config gamma differs from the MDP discount", cfg=cfg.gamma, mdp=dm.gamma)
    s = dm.n_states
    if init is None:
        init = ParamModel.initial(s, cfg.m, cfg.gamma, cfg.seed, cfg.init_scale)
    if init.n_states != s:
        raise DomainError("model and MDP have different state counts")
    if init_dist is not None:
        init_dist = np.asarray(init_dist, dtype=float)
        if init_dist.shape != (s,) or np.any(init_dist < 0) or abs(init_dist.sum() - 1) > 1e-9:
            raise DomainError("init_dist must be a probability vector over states")
    logits = np.array(init.logits, dtype=float)
    target = np.array(init.target_logits, dtype=float)
    w, boot = nstep_weights(cfg.gamma, cfg.n_step)
    eye = np.eye(s)
    sigma = cfg.model_kernel.sigma
    lam = cfg.polyak_lambda
    trace = TdTrace()
    b = cfg.batch_size

    def record(step, loss, full):
        trace.step.append(step)
        trace.loss.append(loss)
        trace.full_mmd.append(full)
        ref = float("nan")
        if reference is not None and cost is not None:
            ref = wbar(DeltaModel(softmax(logits), cfg.gamma), reference, cost)[0]
        trace.wbar_ref.append(ref)

    for step in range(cfg.steps):
        win = sample_windows(dm, cfg, step, init_dist)
        head = np.einsum("k,bks->bs", w, eye[win[:, :-1]])
        tgt = head[:, None, :] + boot * softmax(target[win[:, -1]])
        loss, full, grad, _ = batch_loss_and_grad(logits[win[:, 0]], tgt, gram, sigma)
        mean_loss = float(loss.mean())
        if not math.isfinite(mean_loss):
            raise NumericError("loss diverged", step=step)
        total = np.zeros_like(logits)
        np.add.at(total, win[:, 0], grad)
        logits -= cfg.learning_rate / b * total
        if lam == 1.0:
            target = logits.copy()
        elif lam > 0.0:
            target = (1.0 - lam) * target + lam * logits
        if not np.all(np.isfinite(logits)):
            raise NumericError("logits diverged", step=step)
        last = step + 1 == cfg.steps
        if (cfg.eval_every and (step + 1) % cfg.eval_every == 0) or last:
            record(step + 1, mean_loss, float(full.mean()))
        if callback is not None:
            callback(step, logits, target)
    return ParamModel(logits, target, cfg.gamma), trace
