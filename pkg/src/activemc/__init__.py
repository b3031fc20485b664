"""Active noisy matrix completion with SMG priors, Gibbs uncertainty and MaxEnt designs."""

from .coherence import (CoherenceProfile, coherence, conditional_covariance,
                        conditional_variance, cross_coherence, error_decay_lower_bound,
                        prior_variance, variance_after_update)
from .config import ChainSettings, ExperimentConfig
from .design import (DesignState, balance_bound, balanced_initial_design, latin_square,
                     log_observation_entropy, screen_candidates, select_batch, sequential_gain)
from .estimators import BayesianSMGCompleter, MaxEntSampler, SoftImputeCompleter
from .exceptions import (DomainError, IllConditionedError, IndexSetError, InvalidBasisError,
                         OracleError)
from .gibbs import (GibbsChain, GibbsDraws, GibbsState, PriorSpec, entry_uncertainty,
                    gibbs_step, posterior_mean, rank_posterior, run_all_ranks, run_chain,
                    sample_matrix_fisher, sample_quadrant_law)
from .harness import (load_csv_dataset, run_policy_comparison, summarize, write_results)
from .maxent import maxent_run
from .nuclear import (CompletionResult, complete_nuclear_norm, estimate_subspaces,
                      svd_soft_threshold)
from .smg import (ConditionalPosterior, ObservationSet, SMGModel, build_covariance_block,
                  conditional_posterior, observe_entries, projection_from_basis, sample_smg,
                  smg_log_density)

__all__ = [
    "balance_bound",
    "balanced_initial_design",
    "BayesianSMGCompleter",
    "build_covariance_block",
    "ChainSettings",
    "coherence",
    "CoherenceProfile",
    "complete_nuclear_norm",
    "CompletionResult",
    "conditional_covariance",
    "conditional_posterior",
    "conditional_variance",
    "ConditionalPosterior",
    "cross_coherence",
    "DesignState",
    "DomainError",
    "entry_uncertainty",
    "error_decay_lower_bound",
    "estimate_subspaces",
    "ExperimentConfig",
    "gibbs_step",
    "GibbsChain",
    "GibbsDraws",
    "GibbsState",
    "IllConditionedError",
    "IndexSetError",
    "InvalidBasisError",
    "latin_square",
    "load_csv_dataset",
    "log_observation_entropy",
    "maxent_run",
    "MaxEntSampler",
    "ObservationSet",
    "observe_entries",
    "OracleError",
    "posterior_mean",
    "prior_variance",
    "PriorSpec",
    "projection_from_basis",
    "rank_posterior",
    "run_all_ranks",
    "run_chain",
    "run_policy_comparison",
    "sample_matrix_fisher",
    "sample_quadrant_law",
    "sample_smg",
    "screen_candidates",
    "select_batch",
    "sequential_gain",
    "smg_log_density",
    "SMGModel",
    "SoftImputeCompleter",
    "summarize",
    "svd_soft_threshold",
    "variance_after_update",
    "write_results",
]

__version__ = "0.1.0"
