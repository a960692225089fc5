"""Distributional successor measures for tabular MDPs.

The successor measure maps any reward to a value function; its
distributional counterpart maps any reward to a return distribution.  This
package computes the former in closed form and represents the latter as
``m`` equally weighted state distributions per state, learned either by
projected dynamic programming or by temporal differences from sampled
trajectories.
"""

__version__ = "0.1.0"

from .dp import DeltaModel, MixtureModel, WeightedMixture, apply_operator, dp_iterate, project_ewp
from .environments import ENVIRONMENTS, make_env
from .estimators import DistributionalSuccessorDP, DistributionalSuccessorTD, SuccessorMeasure
from .evaluation import (
    ReturnDistribution,
    RiskReport,
    cramer_distance,
    cvar,
    mc_oracle,
    rank_policies,
    returns_from_dsm,
)
from .exceptions import ConfigurationError, DomainError, DsmError, MissingArtifactError, NumericError
from .kernels import GramCache, ModelKernelSpec, StateKernelSpec, mmd2_exact, mmd_permutation_test, model_mmd2
from .mdp import DiscountedMdp, Policy, TabularMdp, build_ppi, sample_trajectories
from .sr import compute_sm, recover_transition, value_from_sm
from .td import ParamModel, TdConfig, td_loss_and_grad, train
from .transport import CostMatrix, wasserstein_inner, wasserstein_outer, wbar

__all__ = [
    "ConfigurationError",
    "CostMatrix",
    "DeltaModel",
    "DiscountedMdp",
    "DistributionalSuccessorDP",
    "DistributionalSuccessorTD",
    "DomainError",
    "DsmError",
    "ENVIRONMENTS",
    "GramCache",
    "MissingArtifactError",
    "MixtureModel",
    "ModelKernelSpec",
    "NumericError",
    "ParamModel",
    "Policy",
    "ReturnDistribution",
    "RiskReport",
    "StateKernelSpec",
    "SuccessorMeasure",
    "TabularMdp",
    "TdConfig",
    "WeightedMixture",
    "apply_operator",
    "build_ppi",
    "compute_sm",
    "cramer_distance",
    "cvar",
    "dp_iterate",
    "make_env",
    "mc_oracle",
    "mmd2_exact",
    "mmd_permutation_test",
    "model_mmd2",
    "project_ewp",
    "rank_policies",
    "recover_transition",
    "returns_from_dsm",
    "sample_trajectories",
    "td_loss_and_grad",
    "train",
    "value_from_sm",
    "wasserstein_inner",
    "wasserstein_outer",
    "wbar",
]
