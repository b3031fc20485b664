import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activemc.coherence import (CoherenceProfile, coherence, coherences, conditional_covariance,
                                conditional_variance, cross_coherence, error_decay_lower_bound,
                                prior_variance, variance_after_update)
from activemc.exceptions import DomainError
from activemc.smg import ObservationSet, SMGModel, conditional_posterior, random_basis

from conftest import random_instance


def test_coherence_examples():
    assert coherence(np.eye(3)[:, :1], 0) == pytest.approx(1.0)
    u = np.ones((4, 1)) / 2.0
    np.testing.assert_allclose(coherences(u), 0.25)
    assert cross_coherence(u, 0, 3) == pytest.approx(0.25)


def test_basis_and_projector_agree(rng):
    u = random_basis(6, 2, rng)
    p = u @ u.T
    np.testing.assert_allclose(coherences(u), coherences(p), atol=1e-12)
    assert cross_coherence(u, 1, 4) == pytest.approx(cross_coherence(p, 1, 4), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(2, 12))
def test_coherences_sum_to_rank_and_bounded(seed, m):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, m))
    u = random_basis(m, r, rng)
    mu = coherences(u)
    assert mu.sum() == pytest.approx(r, abs=1e-10)
    assert np.all(mu >= -1e-12) and np.all(mu <= 1 + 1e-12)
    i, k = rng.integers(0, m, size=2)
    # Cauchy-Schwarz on projected basis vectors
    assert cross_coherence(u, i, k) ** 2 <= mu[i] * mu[k] + 1e-12


def test_coherence_index_error(rng):
    with pytest.raises(IndexError):
        coherence(random_basis(3, 1, rng), 3)


def test_profile_from_model(rng):
    model = SMGModel.random(5, 4, 2, 1.0, rng)
    prof = CoherenceProfile.from_model(model)
    assert prof.max_row == pytest.approx(np.diag(model.pu).max())
    assert prof.max_col == pytest.approx(np.diag(model.pv).max())


def test_prior_variance(rng):
    model = SMGModel.random(5, 4, 2, 3.0, rng)
    assert prior_variance(model, 2, 1) == pytest.approx(3.0 * model.pu[2, 2] * model.pv[1, 1])


def test_conditional_variance_matches_posterior(rng):
    model, obs = random_instance(rng, m1=6, m2=5, n=8)
    post = conditional_posterior(model, obs)
    direct = [conditional_variance(model, obs, i, j) for i, j in post.targets]
    np.testing.assert_allclose(direct, post.variance, rtol=1e-9, atol=1e-13)


def test_conditional_variance_rejects_observed(rng):
    model, obs = random_instance(rng, m1=4, m2=4, n=3)
    with pytest.raises(DomainError):
        conditional_variance(model, obs, *obs.indices[0])


def test_conditional_covariance_symmetric(rng):
    model, obs = random_instance(rng, m1=5, m2=5, n=6)
    comp = obs.complement()
    a, b = tuple(comp[0]), tuple(comp[-1])
    assert conditional_covariance(model, obs, a, b) == pytest.approx(
        conditional_covariance(model, obs, b, a), abs=1e-13)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_rank_one_update_identity(seed):
    rng = np.random.default_rng(seed)
    model, obs = random_instance(rng)
    comp = obs.complement()
    new = tuple(comp[rng.integers(len(comp))])
    target = tuple(comp[rng.integers(len(comp))])
    upd = variance_after_update(model, obs, new, target)
    grown = obs.extend([new], [0.0])
    direct = conditional_covariance(model, grown, target, target, check=False)
    assert upd == pytest.approx(direct, rel=1e-8, abs=1e-12)


def test_update_rejects_observed_new(rng):
    model, obs = random_instance(rng, m1=4, m2=4, n=2)
    with pytest.raises(DomainError):
        variance_after_update(model, obs, tuple(obs.indices[0]), tuple(obs.complement()[0]))


def test_lower_bound_empty_sequence_is_prior(rng):
    model = SMGModel.random(4, 4, 1, 2.0, rng)
    assert error_decay_lower_bound(model, np.empty((0, 2)), (1, 1), 1e-3) == pytest.approx(
        prior_variance(model, 1, 1))


def test_lower_bound_target_in_sequence(rng):
    model = SMGModel.random(4, 4, 1, 1.0, rng)
    with pytest.raises(DomainError):
        error_decay_lower_bound(model, [(0, 0), (1, 1)], (1, 1), 1e-3)


def test_lower_bound_flags_zero_variance():
    e1 = np.eye(3)[:, :1]
    model = SMGModel.from_bases(e1, e1, 1.0)
    # entry (1, 1) has zero variance under the spike model
    with pytest.warns(RuntimeWarning):
        _, flags = error_decay_lower_bound(model, [(1, 1), (0, 0)], (0, 1), 1e-3,
                                           return_flags=True)
    assert flags == [0]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_monotone_variance_and_bound(seed):
    rng = np.random.default_rng(seed)
    model, _ = random_instance(rng, n=0)
    m1, m2 = model.shape
    eta2 = float(10 ** rng.uniform(-4, -1))
    order = rng.permutation(m1 * m2)
    target = np.unravel_index(order[-1], (m1, m2))
    seq = np.column_stack(np.unravel_index(order[:-1], (m1, m2)))
    prev = np.inf
    for n in range(len(seq) + 1):
        obs = ObservationSet(seq[:n], np.zeros(n), eta2, (m1, m2))
        var = conditional_variance(model, obs, *target)
        assert var <= prev + 1e-10
        prev = var
        if n in (1, len(seq) // 2, len(seq)):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                lb = error_decay_lower_bound(model, seq, target, eta2, n_steps=n)
            assert var >= lb - 1e-10
