"""The MaxEnt sequential sampling loop.

A balanced Latin-square start is followed by rounds of: fit the subspaces
(posterior chains, or a nuclear-norm completion in the empirical-Bayes fast
path), screen candidates by coherence, pick a batch of maximum-entropy
indices, and query the oracle for their noisy values.
"""

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from .coherence import CoherenceProfile, coherences
from .design import DesignState, balanced_initial_design, screen_candidates, select_batch
from .exceptions import DomainError, OracleError
from .gibbs import run_all_ranks
from .nuclear import complete_nuclear_norm, estimate_subspaces
from .smg import ObservationSet, SMGModel

MODES = ("fully-bayes", "empirical-bayes")


@dataclass
class BatchRecord:
    step: int
    indices: np.ndarray
    values: np.ndarray
    error: float = float("nan")


@dataclass
class SamplingTrace:
    """Ordered queries of one run; ``batches[0]`` is the initial design."""

    shape: tuple
    batches: List[BatchRecord] = field(default_factory=list)

    @property
    def indices(self):
        if not self.batches:
            return np.empty((0, 2), dtype=np.intp)
        return np.vstack([b.indices for b in self.batches])

    @property
    def values(self):
        if not self.batches:
            return np.empty(0)
        return np.concatenate([b.values for b in self.batches])

    def to_csv(self, path):
        """One row per query: ``step,batch,row,col,value`` with 1-based indices."""
        path = Path(path)
        with open(path, "w") as fh:
            fh.write("step,batch,row,col,value\n")
            n = 0
            for b, rec in enumerate(self.batches):
                for (i, j), y in zip(rec.indices, rec.values):
                    n += 1
                    fh.write(f"{n},{b},{i + 1},{j + 1},{y:.17g}\n")
        return path


def initial_design(m1, m2, n_ini, rng, balanced=True):
    """``n_ini`` starting indices.

    Balanced: stacked Latin squares on the taller orientation, then uniform
    extra entries if ``n_ini > max(m1, m2)``.  Otherwise uniform without
    replacement.
    """
    if n_ini > m1 * m2:
        raise DomainError("n_ini exceeds the number of entries")
    if not balanced:
        flat = rng.choice(m1 * m2, size=n_ini, replace=False)
        return np.column_stack(np.unravel_index(flat, (m1, m2))).astype(np.intp)
    if n_ini < max(m1, m2):
        raise DomainError(f"a balanced start needs n_ini >= max(m1, m2) = {max(m1, m2)}")
    if m1 >= m2:
        idx = balanced_initial_design(m1, m2, rng)
    else:
        idx = balanced_initial_design(m2, m1, rng)[:, ::-1]
    extra = n_ini - len(idx)
    if extra:
        idx = np.vstack([idx, uniform_picks((m1, m2), idx, extra, rng)])
    return np.ascontiguousarray(idx, dtype=np.intp)


def uniform_picks(shape, taken, n, rng):
    """``n`` indices drawn uniformly without replacement from outside ``taken``."""
    mask = np.ones(shape, dtype=bool)
    taken = np.asarray(taken, dtype=np.intp).reshape(-1, 2)
    if len(taken):
        mask[taken[:, 0], taken[:, 1]] = False
    free = np.flatnonzero(mask.ravel())
    if n > len(free):
        raise DomainError(f"cannot draw {n} new indices, only {len(free)} remain")
    flat = rng.choice(free, size=n, replace=False)
    return np.column_stack(np.unravel_index(flat, shape)).astype(np.intp)


def fit_empirical_bayes(obs, sigma2, eta2, lam=None, rank=None, init=None):
    """Subspace snapshot from the SVD of a nuclear-norm completion.

    The rank defaults to the completion's effective rank, clamped to
    ``[1, min(m1, m2) - 1]``.  Returns ``(DesignState, CompletionResult)``.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = complete_nuclear_norm(obs, lam=lam, init=init)
        if rank is None:
            rank = res.effective_rank
        rank = int(min(max(rank, 1), min(obs.shape) - 1))
        u, v, _ = estimate_subspaces(res.x_hat, rank)
    model = SMGModel.from_bases(u, v, sigma2)
    return DesignState.build(model, obs.indices, eta2), res


def fit_fully_bayes(obs, priors, chain, rng, n_draws=100, init=None, min_weight=1e-12):
    """One design state per thinned posterior draw, weighted by ``pi_r^P / T'``.

    Ranks with posterior weight below ``min_weight`` are skipped.
    """
    draws = run_all_ranks(
        obs, priors, chain.T, burn_in=chain.burn_in, thin=chain.thin,
        seed=int(rng.integers(2**63)), init=init,
        imputation=chain.imputation, sigma2_shape=chain.sigma2_shape,
    )
    states, weights = [], []
    for w, r in zip(draws.rank_weights, draws.ranks):
        if w < min_weight:
            continue
        ch = draws.chains[r]
        k = min(n_draws, len(ch))
        pick = np.linspace(0, len(ch) - 1, k).round().astype(int)
        for t in pick:
            model = SMGModel.from_bases(ch.u[t], ch.v[t], ch.sigma2[t])
            states.append(DesignState.build(model, obs.indices, ch.eta2[t]))
            weights.append(w / k)
    return states, np.asarray(weights), draws


def weighted_profile(states, weights):
    """Coherence profile averaged over weighted design states."""
    rows = sum(w * coherences(s.model.row_factor) for s, w in zip(states, weights))
    cols = sum(w * coherences(s.model.col_factor) for s, w in zip(states, weights))
    tot = float(np.sum(weights))
    return CoherenceProfile(rows / tot, cols / tot)


def _query(oracle, picks, trace, trace_path):
    vals = []
    for i, j in picks:
        try:
            vals.append(float(oracle(int(i), int(j))))
        except Exception as exc:
            if vals:
                trace.batches.append(BatchRecord(-1, picks[: len(vals)], np.asarray(vals)))
            if trace_path is not None:
                trace.to_csv(trace_path)
            raise OracleError(
                f"oracle failed at entry ({i + 1}, {j + 1}): {exc}", trace, trace_path
            ) from exc
    return np.asarray(vals)


def maxent_run(config, oracle, mode="empirical-bayes", rng=None,
               evaluate: Optional[Callable] = None, trace_path=None):
    """Run the MaxEnt policy and return its :class:`SamplingTrace`.

    Parameters
    ----------
    config : ExperimentConfig
        Shape, budgets ``n_ini``/``n_seq``, ``batch_size``, priors, chain
        settings and screening fraction.
    oracle : callable ``(i, j) -> float``
        Noisy value of entry ``(i, j)`` (0-based).
    mode : {'fully-bayes', 'empirical-bayes'}
    rng : seed or Generator
    evaluate : callable ``ObservationSet -> float``, optional
        Error to record after the initial design and after every batch.
    trace_path : path, optional
        Where the partial trace is written if the oracle fails.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    rng = np.random.default_rng(rng)
    shape = (config.m1, config.m2)
    eta2_obs = config.eta2
    trace = SamplingTrace(shape)

    picks = initial_design(config.m1, config.m2, config.n_ini, rng, balanced=True)
    vals = _query(oracle, picks, trace, trace_path)
    obs = ObservationSet(picks, vals, eta2_obs, shape)
    trace.batches.append(BatchRecord(obs.n, picks, vals, _eval(evaluate, obs)))

    priors = config.priors
    x_prev = None
    remaining = config.n_seq
    while remaining > 0:
        b = min(config.batch_size, remaining)
        if mode == "empirical-bayes":
            state, res = fit_empirical_bayes(
                obs, priors.sigma2_mean, priors.eta2_mean, lam=config.lam, init=x_prev
            )
            x_prev = res.x_hat
            states, weights = [state], np.ones(1)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                x_prev = complete_nuclear_norm(obs, lam=config.lam, init=x_prev).x_hat
            states, weights, _ = fit_fully_bayes(
                obs, priors, config.chain, rng, n_draws=config.design_draws, init=x_prev
            )
        cands = screen_candidates(weighted_profile(states, weights), obs.complement(),
                                  config.screening_fraction)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if mode == "empirical-bayes":
                picks = select_batch(states[0], cands, b)
            else:
                picks = select_batch(states, cands, b, weights=weights)
        vals = _query(oracle, picks, trace, trace_path)
        obs = obs.extend(picks, vals)
        trace.batches.append(BatchRecord(obs.n, picks, vals, _eval(evaluate, obs)))
        remaining -= len(picks)
    return trace


def uniform_run(config, oracle, rng=None, balanced_start=False, evaluate=None, trace_path=None):
    """Baseline: uniform draws without replacement, optionally after a balanced start."""
    rng = np.random.default_rng(rng)
    shape = (config.m1, config.m2)
    trace = SamplingTrace(shape)
    picks = initial_design(config.m1, config.m2, config.n_ini, rng, balanced=balanced_start)
    vals = _query(oracle, picks, trace, trace_path)
    obs = ObservationSet(picks, vals, config.eta2, shape)
    trace.batches.append(BatchRecord(obs.n, picks, vals, _eval(evaluate, obs)))
    remaining = config.n_seq
    while remaining > 0:
        b = min(config.batch_size, remaining)
        picks = uniform_picks(shape, obs.indices, b, rng)
        vals = _query(oracle, picks, trace, trace_path)
        obs = obs.extend(picks, vals)
        trace.batches.append(BatchRecord(obs.n, picks, vals, _eval(evaluate, obs)))
        remaining -= b
    return trace


def _eval(evaluate, obs):
    return float("nan") if evaluate is None else float(evaluate(obs))
