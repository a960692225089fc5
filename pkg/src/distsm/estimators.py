"""scikit-learn style estimators.

``fit`` takes the environment: a :class:`~distsm.mdp.DiscountedMdp`, or a
row-stochastic transition matrix ``P[x, x']`` already marginalised over the
policy.  ``predict`` takes reward vectors (one per row of a 2-D array, or a
single 1-D vector) and returns values or return particles.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .dp import DeltaModel, dp_iterate
from .evaluation import cvar, returns_from_dsm
from .exceptions import DomainError
from .kernels import DEFAULT_ALPHAS, GramCache, ModelKernelSpec, StateKernelSpec
from .mdp import DiscountedMdp, Policy, TabularMdp, build_ppi
from .sr import compute_sm, recover_transition
from .td import TdConfig, train
from .transport import CostMatrix


def _as_discounted(X, gamma, embedding=None):
    if isinstance(X, DiscountedMdp):
        if gamma is not None and abs(X.gamma - gamma) > 0:
            raise DomainError("estimator gamma differs from the MDP discount", estimator=gamma, mdp=X.gamma)
        return X
    p = check_array(X, dtype=np.float64, ensure_min_samples=1)
    n = p.shape[0]
    if p.shape != (n, n):
        raise DomainError("transition matrix must be square", shape=list(p.shape))
    emb = np.eye(n) if embedding is None else embedding
    mdp = TabularMdp(p[:, None, :], emb)
    return build_ppi(mdp, Policy(np.ones((n, 1))), gamma)


def _rewards(R, n_states):
    R = np.asarray(R, dtype=float)
    single = R.ndim == 1
    R = check_array(np.atleast_2d(R), dtype=np.float64)
    if R.shape[1] != n_states:
        raise DomainError(f"rewards must have {n_states} columns", shape=list(R.shape))
    return R, single


class SuccessorMeasure(BaseEstimator):
    """Closed-form normalised successor measure.

    Attributes
    ----------
    psi_ : ndarray [n_states, n_states]
    n_states_ : int
    """

    def __init__(self, gamma=0.9):
        self.gamma = gamma

    def fit(self, X, y=None):
        dm = _as_discounted(X, self.gamma)
        self.sm_ = compute_sm(dm)
        self.psi_ = self.sm_.psi
        self.n_states_ = dm.n_states
        return self

    def predict(self, R):
        """Values ``(1 - gamma)^-1 psi r`` for each reward row, shape ``[n_rewards, n_states]``."""
        check_is_fitted(self, "psi_")
        R, single = _rewards(R, self.n_states_)
        v = R @ self.psi_.T / (1.0 - self.gamma)
        return v[0] if single else v

    def recover_transition(self):
        check_is_fitted(self, "psi_")
        return recover_transition(self.sm_).transition


class _ParticleEstimator(BaseEstimator):
    def _kernel(self, embedding):
        spec = StateKernelSpec(mixture_alphas=tuple(self.kernel_alphas))
        return GramCache.build(spec, embedding), CostMatrix.from_embedding(embedding)

    def predict(self, R):
        """Return particles ``[n_rewards, n_states, m]`` (or ``[n_states, m]`` for a 1-D reward)."""
        check_is_fitted(self, "model_")
        R, single = _rewards(R, self.model_.n_states)
        out = np.einsum("xis,rs->rxi", self.model_.atoms, R) / (1.0 - self.model_.gamma)
        return out[0] if single else out

    def predict_cvar(self, R, alpha=0.4):
        """Lower-tail CVaR of the return at every state, ``[n_rewards, n_states]``."""
        check_is_fitted(self, "model_")
        R, single = _rewards(R, self.model_.n_states)
        out = np.array(
            [[cvar(returns_from_dsm(self.model_, x, r), alpha) for x in range(self.model_.n_states)] for r in R]
        )
        return out[0] if single else out

    @property
    def atoms_(self):
        check_is_fitted(self, "model_")
        return self.model_.atoms


class DistributionalSuccessorDP(_ParticleEstimator):
    """Particle model of the distributional successor measure by projected dynamic programming.

    Parameters
    ----------
    gamma : float
    m : int
        Atoms per state.
    projection : {"barycentric", "herding", "resample", "none"}
    tol : float
        Early-stopping threshold on the successive-iterate distance.
    max_iter : int or None
        ``None`` uses the geometric bound plus the selection warm-up.
    sigma : float or None
        Fixed model-kernel bandwidth; ``None`` uses the median heuristic.
    freeze_after : int, "auto" or None
    kernel_alphas : tuple of float
    seed : int

    Attributes
    ----------
    model_ : DeltaModel
    trace_ : DpTrace
    n_iter_ : int
    projection_residual_ : float
    """

    def __init__(
        self,
        gamma=0.7,
        m=32,
        projection="barycentric",
        tol=1e-6,
        max_iter=None,
        sigma=None,
        freeze_after="auto",
        kernel_alphas=DEFAULT_ALPHAS,
        seed=0,
    ):
        self.gamma = gamma
        self.m = m
        self.projection = projection
        self.tol = tol
        self.max_iter = max_iter
        self.sigma = sigma
        self.freeze_after = freeze_after
        self.kernel_alphas = kernel_alphas
        self.seed = seed

    def fit(self, X, y=None, embedding=None, reference=None):
        dm = _as_discounted(X, self.gamma, embedding)
        gram, cost = self._kernel(dm.embedding)
        init = DeltaModel.initial(dm.n_states, int(self.m), dm.gamma)
        self.model_, self.trace_ = dp_iterate(
            init,
            dm,
            gram,
            cost,
            ModelKernelSpec(self.sigma),
            iters=self.max_iter,
            projection=self.projection,
            tol=self.tol,
            reference=reference,
            seed=self.seed,
            freeze_after=self.freeze_after,
        )
        self.n_iter_ = len(self.trace_.iteration)
        self.projection_residual_ = self.trace_.projection_residual
        self.diameter_ = cost.diameter
        return self


class DistributionalSuccessorTD(_ParticleEstimator):
    """Particle model learned from sampled trajectories by temporal differences.

    Parameters mirror :class:`~distsm.td.TdConfig`.

    Attributes
    ----------
    model_ : DeltaModel
        Online atoms after training.
    params_ : ParamModel
    trace_ : TdTrace
    """

    def __init__(
        self,
        gamma=0.95,
        m=16,
        n_step=5,
        learning_rate=1e-2,
        polyak_lambda=0.01,
        batch_size=32,
        steps=10_000,
        sigma=None,
        kernel_alphas=DEFAULT_ALPHAS,
        seed=0,
    ):
        self.gamma = gamma
        self.m = m
        self.n_step = n_step
        self.learning_rate = learning_rate
        self.polyak_lambda = polyak_lambda
        self.batch_size = batch_size
        self.steps = steps
        self.sigma = sigma
        self.kernel_alphas = kernel_alphas
        self.seed = seed

    def config(self):
        return TdConfig(
            gamma=self.gamma,
            n_step=self.n_step,
            learning_rate=self.learning_rate,
            polyak_lambda=self.polyak_lambda,
            batch_size=self.batch_size,
            steps=self.steps,
            seed=self.seed,
            m=self.m,
            sigma_policy="median_heuristic" if self.sigma is None else "fixed",
            sigma=self.sigma,
        )

    def fit(self, X, y=None, embedding=None, reference=None, eval_every=0):
        cfg = self.config().replace(eval_every=eval_every)
        dm = _as_discounted(X, cfg.gamma, embedding)
        gram, cost = self._kernel(dm.embedding)
        self.params_, self.trace_ = train(dm, cfg, gram, reference=reference, cost=cost)
        self.model_ = self.params_.to_delta()
        return self
