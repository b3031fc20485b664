import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from activemc.estimators import BayesianSMGCompleter, MaxEntSampler, SoftImputeCompleter
from activemc.gibbs import PriorSpec
from activemc.smg import SMGModel, sample_smg


@pytest.fixture
def partial():
    rng = np.random.default_rng(0)
    x = sample_smg(SMGModel.random(6, 6, 1, 1.0, rng), rng)
    mask = rng.random((6, 6)) < 0.7
    return x, np.where(mask, x, np.nan)


def test_params_and_clone():
    est = BayesianSMGCompleter(T=5, imputation="conditional")
    params = clone(est).get_params()
    assert params["T"] == 5 and params["imputation"] == "conditional"
    assert set(SoftImputeCompleter().get_params()) == {"lam", "max_iters", "tol"}


def test_soft_impute_keeps_observed(partial):
    x, y = partial
    out = SoftImputeCompleter(lam=1e-4).fit_transform(y)
    obs = np.isfinite(y)
    np.testing.assert_array_equal(out[obs], y[obs])
    assert np.all(np.isfinite(out))
    assert np.linalg.norm(out - x) < np.linalg.norm(np.nan_to_num(y) - x)


def test_soft_impute_shape_mismatch(partial):
    _, y = partial
    est = SoftImputeCompleter().fit(y)
    with pytest.raises(ValueError):
        est.transform(y[:3])


@pytest.mark.parametrize("bad", [np.zeros(3), np.full((2, 2), np.nan),
                                 np.array([[np.inf, 1.0], [0.0, 1.0]])])
def test_input_validation(bad):
    with pytest.raises(ValueError):
        SoftImputeCompleter().fit(bad)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        BayesianSMGCompleter().predict()


def test_bayesian_completer(partial):
    x, y = partial
    est = BayesianSMGCompleter(T=30, burn_in=10, priors=PriorSpec(rank_prior=(0.5, 0.5)))
    est.fit(y)
    assert set(est.rank_posterior_) == {1, 2}
    assert sum(est.rank_posterior_.values()) == pytest.approx(1.0)
    pm = est.predict()
    assert pm.shape == x.shape
    np.testing.assert_allclose(est.predict([(0, 0), (5, 5)]), pm[[0, 5], [0, 5]])
    ci = est.predict_interval(level=0.9)
    assert ci.shape == (int(np.isnan(y).sum()), 3)


def test_maxent_sampler_proposes_unobserved(partial):
    _, y = partial
    picks = MaxEntSampler(batch_size=3).fit(y).propose()
    assert picks.shape == (3, 2)
    assert np.all(np.isnan(y[picks[:, 0], picks[:, 1]]))
    assert len({tuple(p) for p in picks.tolist()}) == 3


def test_maxent_sampler_fully_bayes(partial):
    _, y = partial
    est = MaxEntSampler(mode="fully-bayes", T=10, design_draws=2,
                        priors=PriorSpec(rank_prior=(0.5, 0.5))).fit(y)
    picks = est.propose(2)
    assert np.all(np.isnan(y[picks[:, 0], picks[:, 1]]))


def test_maxent_sampler_bad_mode(partial):
    with pytest.raises(ValueError):
        MaxEntSampler(mode="x").fit(partial[1])
