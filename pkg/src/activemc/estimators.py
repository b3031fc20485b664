"""scikit-learn style front ends over the functional modules.

The input to ``fit`` is a partially observed matrix with ``NaN`` marking the
missing cells; one matrix is one sample, so these estimators fit a single
matrix rather than a design matrix of rows.
"""

import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import ChainSettings
from .design import screen_candidates, select_batch
from .gibbs import PriorSpec, entry_uncertainty, posterior_mean, run_all_ranks
from .maxent import fit_empirical_bayes, fit_fully_bayes, weighted_profile
from .nuclear import complete_nuclear_norm
from .smg import ObservationSet


def _check_partial_matrix(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D matrix with NaN for missing cells, got ndim={X.ndim}")
    if np.isinf(X).any():
        raise ValueError("matrix contains infinite values")
    if not np.isfinite(X).any():
        raise ValueError("matrix has no observed cells")
    return X


class SoftImputeCompleter(TransformerMixin, BaseEstimator):
    """Nuclear-norm completion; ``transform`` returns the completed matrix.

    Parameters
    ----------
    lam : float, optional
        Nuclear-norm weight; ``None`` uses the MAD-scaled default.
    max_iters : int
    tol : float
    """

    def __init__(self, lam=None, max_iters=2000, tol=1e-9):
        self.lam = lam
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y=None):
        X = _check_partial_matrix(X)
        obs = ObservationSet.from_matrix(X, 0.0)
        res = complete_nuclear_norm(obs, lam=self.lam, max_iters=self.max_iters, tol=self.tol)
        self.completion_ = res.x_hat
        self.lam_ = res.lam
        self.effective_rank_ = res.effective_rank
        self.n_iter_ = res.n_iter
        self.shape_ = X.shape
        return self

    def transform(self, X):
        check_is_fitted(self, "completion_")
        X = _check_partial_matrix(X)
        if X.shape != self.shape_:
            raise ValueError(f"fitted on a {self.shape_} matrix, got {X.shape}")
        return np.where(np.isfinite(X), X, self.completion_)


class BayesianSMGCompleter(BaseEstimator):
    """Posterior mean and entry intervals from fixed-rank Gibbs chains mixed over rank.

    Parameters
    ----------
    eta2 : float
        Nominal noise variance stored with the observations.
    priors : PriorSpec, optional
    T, burn_in, thin : chain length settings
    imputation, sigma2_shape : sampler variants, see :func:`activemc.gibbs.gibbs_step`
    random_state : int
    """

    def __init__(self, eta2=1e-4, priors=None, T=1000, burn_in=None, thin=1,
                 imputation="smg", sigma2_shape="rank", random_state=0):
        self.eta2 = eta2
        self.priors = priors
        self.T = T
        self.burn_in = burn_in
        self.thin = thin
        self.imputation = imputation
        self.sigma2_shape = sigma2_shape
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _check_partial_matrix(X)
        obs = ObservationSet.from_matrix(X, self.eta2)
        priors = self.priors if self.priors is not None else PriorSpec()
        ranks = [r for r in priors.ranks if r < min(X.shape)]
        if not ranks:
            raise ValueError("no rank in the prior support is below min(m1, m2)")
        self.draws_ = run_all_ranks(
            obs, priors, self.T, self.burn_in, self.thin, seed=self.random_state, ranks=ranks,
            imputation=self.imputation, sigma2_shape=self.sigma2_shape,
        )
        self.observations_ = obs
        self.rank_posterior_ = dict(zip(self.draws_.ranks, self.draws_.rank_weights))
        self.posterior_mean_ = posterior_mean(self.draws_)
        return self

    def predict(self, indices=None):
        """Posterior mean matrix, or its entries at ``indices`` (0-based pairs)."""
        check_is_fitted(self, "posterior_mean_")
        if indices is None:
            return self.posterior_mean_.copy()
        idx = np.asarray(indices, dtype=np.intp).reshape(-1, 2)
        return self.posterior_mean_[idx[:, 0], idx[:, 1]]

    def predict_interval(self, indices=None, level=0.95):
        """``(mean, lower, upper)`` rows; defaults to every unobserved entry."""
        check_is_fitted(self, "draws_")
        idx = self.observations_.complement() if indices is None else indices
        return entry_uncertainty(self.draws_, idx, level, rng=self.random_state)


class MaxEntSampler(BaseEstimator):
    """Proposes the next entries to observe by maximum sequential entropy.

    Parameters
    ----------
    mode : {'empirical-bayes', 'fully-bayes'}
    batch_size : int
    sigma2, eta2 : float
        Variances of the plug-in model in empirical-Bayes mode.
    keep_fraction : float
        Coherence screening fraction (1 keeps every candidate).
    priors, T, design_draws, random_state : fully-Bayes settings
    """

    def __init__(self, mode="empirical-bayes", batch_size=1, sigma2=1.25, eta2=1.25e-4,
                 keep_fraction=1.0, lam=None, priors=None, T=500, design_draws=100,
                 random_state=0):
        self.mode = mode
        self.batch_size = batch_size
        self.sigma2 = sigma2
        self.eta2 = eta2
        self.keep_fraction = keep_fraction
        self.lam = lam
        self.priors = priors
        self.T = T
        self.design_draws = design_draws
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _check_partial_matrix(X)
        obs = ObservationSet.from_matrix(X, self.eta2)
        if self.mode == "empirical-bayes":
            state, _ = fit_empirical_bayes(obs, self.sigma2, self.eta2, lam=self.lam)
            self.states_, self.weights_ = [state], np.ones(1)
        elif self.mode == "fully-bayes":
            priors = self.priors if self.priors is not None else PriorSpec()
            rng = np.random.default_rng(self.random_state)
            self.states_, self.weights_, _ = fit_fully_bayes(
                obs, priors, ChainSettings(T=self.T), rng, n_draws=self.design_draws
            )
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.observations_ = obs
        return self

    def propose(self, n=None):
        """Next ``n`` (default ``batch_size``) indices, 0-based."""
        check_is_fitted(self, "states_")
        n = self.batch_size if n is None else n
        profile = weighted_profile(self.states_, self.weights_)
        cands = screen_candidates(profile, self.observations_.complement(), self.keep_fraction)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if len(self.states_) == 1:
                return select_batch(self.states_[0], cands, n)
            return select_batch(self.states_, cands, n, weights=self.weights_)
