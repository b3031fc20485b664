"""Maximum-entropy sampling designs for matrix completion.

The observation entropy of an index set is ``log det(sigma2 R_N + eta2 I)``;
adding a candidate ``(i, j)`` raises it by ``log(sigma2 * gain + eta2)`` where
``gain = mu_i mu_j - nu^T (R_N + gamma2 I)^{-1} nu`` is the candidate's
conditional variance over ``sigma2``.  :class:`DesignState` keeps a Cholesky
factor of ``R_N + gamma2 I`` and extends it by one row per accepted index.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from ._validation import check_index_array
from .exceptions import DomainError, IllConditionedError, IndexSetError
from .smg import JITTER_LADDER, build_covariance_block, cross_covariance, spd_factor


@dataclass(frozen=True, eq=False)
class DesignState:
    """Frozen subspace snapshot plus the factor of ``R_N(Omega) + gamma2 I``."""

    model: object
    indices: np.ndarray
    factor: np.ndarray
    gamma2: float

    @classmethod
    def build(cls, model, indices, eta2):
        idx = check_index_array(indices, shape=model.shape)
        gamma2 = eta2 / model.sigma2
        a = build_covariance_block(model, idx)
        a[np.diag_indices_from(a)] += gamma2
        return cls(model, idx, spd_factor(a, allow_jitter=True), gamma2)

    @property
    def n(self):
        return len(self.indices)

    @property
    def eta2(self):
        return self.gamma2 * self.model.sigma2

    def observed_mask(self):
        mask = np.zeros(self.model.shape, dtype=bool)
        if self.n:
            mask[self.indices[:, 0], self.indices[:, 1]] = True
        return mask

    def gains(self, candidates):
        """Conditional variance over ``sigma2`` of every candidate (vectorized)."""
        cand = np.asarray(candidates, dtype=np.intp).reshape(-1, 2)
        fu, fv = self.model.row_factor, self.model.col_factor
        prior = _diag_cross(fu, cand[:, 0]) * _diag_cross(fv, cand[:, 1])
        if self.n == 0:
            return prior
        xi = cross_covariance(fu, fv, self.indices, cand)
        w = la.solve_triangular(self.factor, xi, lower=True, check_finite=False)
        return prior - np.einsum("ij,ij->j", w, w)

    def extended(self, index):
        """State with ``index`` appended; the factor gains one row (O(N^2))."""
        idx = check_index_array([index], shape=self.model.shape)
        if self.n and np.any(np.all(self.indices == idx[0], axis=1)):
            raise IndexSetError(f"index {tuple(idx[0])} already in the design")
        fu, fv = self.model.row_factor, self.model.col_factor
        diag = float(cross_covariance(fu, fv, idx, idx)[0, 0]) + self.gamma2
        n = self.n
        new = np.zeros((n + 1, n + 1))
        if n:
            xi = cross_covariance(fu, fv, self.indices, idx)[:, 0]
            row = la.solve_triangular(self.factor, xi, lower=True, check_finite=False)
            new[:n, :n] = self.factor
            new[n, :n] = row
            d2 = diag - row @ row
        else:
            d2 = diag
        if d2 <= 0:
            for jit in JITTER_LADDER:
                if d2 + jit > 0:
                    d2 = d2 + jit
                    break
            else:
                raise IllConditionedError("rank-one extension lost positive definiteness", np.inf)
        new[n, n] = math.sqrt(d2)
        return DesignState(self.model, np.vstack([self.indices, idx]), new, self.gamma2)


def _diag_cross(f, a):
    if f.shape[0] == f.shape[1]:
        return f[a, a]
    return np.einsum("ij,ij->i", f[a], f[a])


def log_observation_entropy(state, sigma2=None, eta2=None):
    """``log det(sigma2 R_N + eta2 I)`` from the cached factor.

    ``sigma2``/``eta2`` default to the state's model; their ratio must match
    the ``gamma2`` the factor was built with.
    """
    sigma2 = state.model.sigma2 if sigma2 is None else float(sigma2)
    eta2 = state.gamma2 * sigma2 if eta2 is None else float(eta2)
    if not math.isclose(eta2 / sigma2, state.gamma2, rel_tol=1e-9, abs_tol=1e-300):
        raise DomainError(
            f"eta2/sigma2 = {eta2 / sigma2} does not match the state's gamma2 {state.gamma2}"
        )
    if state.n == 0:
        return 0.0
    return state.n * math.log(sigma2) + 2.0 * float(np.sum(np.log(np.diag(state.factor))))


def sequential_gain(state, candidate):
    """``mu_i mu_j - nu^T (R_N + gamma2 I)^{-1} nu`` for one unobserved candidate."""
    cand = check_index_array([candidate], shape=state.model.shape)
    if state.n and np.any(np.all(state.indices == cand[0], axis=1)):
        raise DomainError(f"candidate {tuple(cand[0])} is already observed")
    return float(state.gains(cand)[0])


def latin_square(m, rng):
    """Random ``m x m`` Latin square with symbols ``0..m-1``.

    Rows, columns and symbols of the cyclic square ``(i + j) mod m`` are
    permuted independently.
    """
    base = (np.arange(m)[:, None] + np.arange(m)[None, :]) % m
    square = base[rng.permutation(m)][:, rng.permutation(m)]
    return rng.permutation(m)[square]


def balanced_initial_design(m1, m2, rng=None):
    """One sample per row and a near-even column load (``m1 >= m2``).

    Stacks ``m1 // m2`` random Latin squares, keeps the cells holding symbol
    0, and puts one sample at a distinct random column in each leftover row.
    """
    if m2 > m1:
        raise DomainError(f"balanced design needs m1 >= m2; transpose the {m1}x{m2} problem")
    if m2 < 1:
        raise DomainError("matrix dimensions must be positive")
    rng = np.random.default_rng(rng)
    q = m1 // m2
    picks = []
    for block in range(q):
        sq = latin_square(m2, rng)
        rows, cols = np.nonzero(sq == 0)
        picks.extend(zip(rows + block * m2, cols))
    extra = m1 - q * m2
    if extra:
        cols = rng.choice(m2, size=extra, replace=False)
        picks.extend(zip(range(q * m2, m1), cols))
    return np.array(sorted(picks), dtype=np.intp).reshape(-1, 2)


def balance_bound(model, indices, sigma2=None, eta2=0.0):
    """Gershgorin-type lower bound on ``det(sigma2 R_N + eta2 I)^(1/N)``.

    Returns ``min_n [sigma2 mu mu + eta2 - sigma2 (N-1)/2 (max nu_U^2 + max nu_V^2)]``.
    For ``N < 2`` the max terms are vacuous and a warning is issued.
    """
    idx = check_index_array(indices, shape=model.shape)
    sigma2 = model.sigma2 if sigma2 is None else float(sigma2)
    n = len(idx)
    if n == 0:
        raise ValueError("balance bound needs at least one index")
    fu, fv = model.row_factor, model.col_factor
    ii, jj = idx[:, 0], idx[:, 1]
    nu_u = _nu_block(fu, ii)
    nu_v = _nu_block(fv, jj)
    diag = sigma2 * np.diag(nu_u) * np.diag(nu_v) + eta2
    if n < 2:
        warnings.warn("balance bound with N < 2 has no off-diagonal terms", RuntimeWarning, 2)
        return float(diag[0])
    off_u = nu_u**2
    off_v = nu_v**2
    np.fill_diagonal(off_u, -np.inf)
    np.fill_diagonal(off_v, -np.inf)
    penalty = 0.5 * sigma2 * (n - 1) * (off_u.max(axis=1) + off_v.max(axis=1))
    return float(np.min(diag - penalty))


def _nu_block(f, a):
    if f.shape[0] == f.shape[1]:
        return f[np.ix_(a, a)].copy()
    return f[a] @ f[a].T


def screen_candidates(profile, unobserved, keep_fraction):
    """Drop candidates whose row or column coherence is below the upper quantile.

    Keeps ``(i, j)`` with ``mu_i`` and ``mu_j`` at or above the
    ``(1 - keep_fraction)`` quantiles (linear interpolation) of the row and
    column coherence vectors.  When ties leave more than
    ``ceil(keep_fraction * len(unobserved))`` survivors, the survivors are
    ranked by ``mu_i mu_j`` (ties lexicographic in ``(i, j)``) and truncated.
    At least one candidate is always returned.
    """
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    cand = np.asarray(unobserved, dtype=np.intp).reshape(-1, 2)
    if len(cand) == 0:
        raise DomainError("no unobserved candidates: the matrix is fully observed")
    if keep_fraction == 1:
        return cand
    mu_r = np.asarray(profile.row_coherences)
    mu_c = np.asarray(profile.col_coherences)
    qr = np.quantile(mu_r, 1.0 - keep_fraction)
    qc = np.quantile(mu_c, 1.0 - keep_fraction)
    score = mu_r[cand[:, 0]] * mu_c[cand[:, 1]]
    keep = (mu_r[cand[:, 0]] >= qr) & (mu_c[cand[:, 1]] >= qc)
    limit = max(1, math.ceil(keep_fraction * len(cand)))
    if not keep.any():
        keep = np.zeros(len(cand), dtype=bool)
        keep[_ranked(cand, score)[0]] = True
    sel = np.flatnonzero(keep)
    if len(sel) > limit:
        order = _ranked(cand[sel], score[sel])[:limit]
        sel = np.sort(sel[order])
    return cand[sel]


def _ranked(cand, score):
    # descending score, then ascending (i, j)
    return np.lexsort((cand[:, 1], cand[:, 0], -score))


def select_batch(state, candidates, batch_size, weights=None, return_state=False):
    """Greedy batch of maximum-information-gain indices.

    Parameters
    ----------
    state : DesignState or sequence of DesignState
        A single subspace snapshot, or one state per posterior draw when
        ``weights`` is given.
    candidates : array-like of (row, col)
    batch_size : int
    weights : array-like, optional
        Per-draw weights (``pi_r / T``); the score is the weighted sum of
        per-draw gains.
    return_state : bool
        Also return the extended state(s).

    Every pick extends the factor(s) by one row before the next pick is
    scored, so near-duplicate candidates lose their gain.  Exact score ties
    go to the lexicographically smallest ``(i, j)``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    cand = np.asarray(candidates, dtype=np.intp).reshape(-1, 2)
    if len(cand) == 0:
        raise DomainError("no candidates to select from")
    cand = cand[np.lexsort((cand[:, 1], cand[:, 0]))]
    if weights is None:
        states = [state]
        w = np.ones(1)
    else:
        states = list(state)
        w = np.asarray(weights, dtype=float)
        if len(w) != len(states):
            raise ValueError(f"{len(w)} weights for {len(states)} states")
    if batch_size > len(cand):
        warnings.warn(
            f"batch of {batch_size} requested from {len(cand)} candidates; selecting all",
            RuntimeWarning,
            stacklevel=2,
        )
        batch_size = len(cand)
    alive = np.ones(len(cand), dtype=bool)
    picks = []
    for _ in range(batch_size):
        pool = cand[alive]
        scores = np.zeros(len(pool))
        for wk, st in zip(w, states):
            if wk != 0:
                scores += wk * st.gains(pool)
        best = int(np.argmax(scores))
        chosen = tuple(int(c) for c in pool[best])
        picks.append(chosen)
        alive[np.flatnonzero(alive)[best]] = False
        states = [st.extended(chosen) for st in states]
    picks = np.array(picks, dtype=np.intp)
    if return_state:
        return picks, (states[0] if weights is None else states)
    return picks
