"""Closed-form successor measure and transition recovery."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import DomainError, NumericError
from .io import write_matrix_csv
from .mdp import _frozen, check_gamma

ROW_DRIFT_TOL = 1e-12


class AccuracyWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class SuccessorMatrix:
    """Normalised successor measure ``psi = (1 - gamma) (I - gamma P)^-1``.

    Row ``x`` is the discounted state-occupancy distribution from ``x``.
    """

    psi: np.ndarray
    gamma: float

    @property
    def n_states(self):
        return self.psi.shape[0]


@dataclass(frozen=True, eq=False)
class RecoveredTransition:
    transition: np.ndarray
    condition_number: float


def compute_sm(dm):
    """Successor matrix of a :class:`~distsm.mdp.DiscountedMdp`.

    Solves ``(I - gamma P) psi = (1 - gamma) I`` rather than forming an
    inverse.  Rows are re-normalised only when their sums drift by more than
    ``1e-12``, in which case an :class:`AccuracyWarning` is issued.
    """
    return _sm_from_kernel(dm.p_pi, dm.gamma)


def _sm_from_kernel(p_pi, gamma):
    gamma = check_gamma(gamma)
    n = p_pi.shape[0]
    eye = np.eye(n)
    try:
        psi = linalg.solve(eye - gamma * p_pi, (1.0 - gamma) * eye)
    except linalg.LinAlgError as exc:
        raise NumericError("successor-measure solve failed", gamma=gamma) from exc
    if not np.all(np.isfinite(psi)):
        raise NumericError("successor-measure solve produced non-finite values", gamma=gamma)
    drift = np.abs(psi.sum(axis=1) - 1.0).max()
    if drift > ROW_DRIFT_TOL:
        warnings.warn(
            f"successor rows drifted from 1 by {drift:.3e}; renormalising", AccuracyWarning
        )
        psi = psi / psi.sum(axis=1, keepdims=True)
    return SuccessorMatrix(_frozen(psi), gamma)


def value_from_sm(sm, r):
    """Value function ``(1 - gamma)^-1 psi r``."""
    r = np.asarray(r, dtype=float)
    if r.shape != (sm.n_states,):
        raise DomainError(f"reward must have length {sm.n_states}", shape=list(r.shape))
    if not np.all(np.isfinite(r)):
        raise DomainError("reward must be finite")
    return sm.psi @ r / (1.0 - sm.gamma)


def recover_transition(sm, max_condition=1e12):
    """Invert the successor matrix back to ``P = (I - (1 - gamma) psi^-1) / gamma``.

    The inverse is taken as a solve against the identity.  The 1-norm
    condition estimate of ``psi`` is attached to the result.
    """
    gamma = sm.gamma
    if gamma <= 0.0:
        raise DomainError("transition recovery needs gamma > 0")
    n = sm.n_states
    cond = float(np.linalg.cond(sm.psi, 1))
    if not np.isfinite(cond) or cond > max_condition:
        raise NumericError("successor matrix is ill-conditioned", condition_number=cond)
    eye = np.eye(n)
    psi_inv = linalg.solve(sm.psi, eye)
    p = (eye - (1.0 - gamma) * psi_inv) / gamma
    return RecoveredTransition(_frozen(p), cond)


def sm_to_csv(sm, path_or_buf):
    """One row per source state: ``state, psi_0, ..., psi_{n-1}``."""
    write_matrix_csv(path_or_buf, "successor_matrix", sm.psi, {"gamma": sm.gamma})
