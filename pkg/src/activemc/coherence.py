"""Subspace coherence and entrywise uncertainty under the SMG model.

Row coherence ``mu_i(U) = ||P_U e_i||^2`` and cross-coherence
``nu_{i,i'}(U) = e_{i'}^T P_U e_i`` are the only ingredients needed for
prior and conditional (co)variances of entries of ``X``.
"""

from dataclasses import dataclass
import warnings

import numpy as np
import scipy.linalg as la

from ._validation import index_pair
from .exceptions import DomainError
from .smg import observation_factor


@dataclass(frozen=True)
class CoherenceProfile:
    row_coherences: np.ndarray
    col_coherences: np.ndarray

    @property
    def max_row(self):
        return float(self.row_coherences.max())

    @property
    def max_col(self):
        return float(self.col_coherences.max())

    @classmethod
    def from_model(cls, model):
        return cls(coherences(model.row_factor), coherences(model.col_factor))

    @classmethod
    def from_bases(cls, u, v):
        return cls(coherences(u), coherences(v))


def _is_projector(f):
    return f.shape[0] == f.shape[1]


def coherences(basis_or_projector):
    """Vector of all ``mu_i`` (squared row norms of a basis, or the projector diagonal)."""
    f = np.asarray(basis_or_projector, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if _is_projector(f):
        return np.clip(np.diag(f).copy(), 0.0, 1.0)
    return np.einsum("ij,ij->i", f, f)


def coherence(basis_or_projector, i):
    f = np.asarray(basis_or_projector, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if not 0 <= i < f.shape[0]:
        raise IndexError(f"row index {i} out of range for dimension {f.shape[0]}")
    if _is_projector(f):
        return float(f[i, i])
    return float(f[i] @ f[i])


def cross_coherence(basis_or_projector, i, i2):
    f = np.asarray(basis_or_projector, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    m = f.shape[0]
    if not (0 <= i < m and 0 <= i2 < m):
        raise IndexError(f"indices ({i}, {i2}) out of range for dimension {m}")
    if _is_projector(f):
        return float(0.5 * (f[i, i2] + f[i2, i]))
    return float(f[i] @ f[i2])


def cross_coherence_vector(model, obs_indices, target):
    """``nu_{i,j} = nu_i(U) o nu_j(V)`` against every observed index."""
    i, j = target
    fu, fv = model.row_factor, model.col_factor
    ii, jj = obs_indices[:, 0], obs_indices[:, 1]
    if _is_projector(fu):
        nu_u = fu[i, ii]
    else:
        nu_u = fu[ii] @ fu[i]
    if _is_projector(fv):
        nu_v = fv[j, jj]
    else:
        nu_v = fv[jj] @ fv[j]
    return nu_u * nu_v


def prior_variance(model, i, j):
    """``sigma2 mu_i(U) mu_j(V)``."""
    i, j = index_pair((i, j), model.shape)
    return model.sigma2 * coherence(model.row_factor, i) * coherence(model.col_factor, j)


def _check_unobserved(obs, index, what="index"):
    if obs.contains(index):
        raise DomainError(f"{what} {index} is observed; quantity defined only on Omega^c")


def _whitened(model, obs, index):
    low = observation_factor(model, obs)
    nu = cross_coherence_vector(model, obs.indices, index)
    return la.solve_triangular(low, nu, lower=True, check_finite=False)


def conditional_covariance(model, obs, a, b, check=True):
    """``Cov(X_a, X_b | Y_Omega)``; both indices must be unobserved when ``check``."""
    a = index_pair(a, model.shape)
    b = index_pair(b, model.shape)
    if check:
        _check_unobserved(obs, a)
        _check_unobserved(obs, b)
    prior = cross_coherence(model.row_factor, a[0], b[0]) * cross_coherence(
        model.col_factor, a[1], b[1]
    )
    if obs.n == 0:
        return model.sigma2 * prior
    wa = _whitened(model, obs, a)
    wb = wa if a == b else _whitened(model, obs, b)
    return model.sigma2 * (prior - wa @ wb)


def conditional_variance(model, obs, i, j, check=True):
    """``sigma2 mu_i mu_j - sigma2 nu^T (R_N + gamma2 I)^{-1} nu``."""
    return conditional_covariance(model, obs, (i, j), (i, j), check=check)


def variance_after_update(model, obs, new, target):
    """Variance of ``X_target`` once ``new`` is added to Omega, by the rank-one identity.

    ``Var_new = Var - Cov^2 / (Var(X_new) + eta2)``; ``target`` may be observed.
    """
    new = index_pair(new, model.shape)
    target = index_pair(target, model.shape)
    _check_unobserved(obs, new, "new index")
    var_t = conditional_covariance(model, obs, target, target, check=False)
    if target == new:
        var_new = var_t
        cov = var_t
    else:
        var_new = conditional_covariance(model, obs, new, new, check=False)
        cov = conditional_covariance(model, obs, target, new, check=False)
    denom = var_new + obs.eta2
    if denom <= 0:
        return var_t
    return var_t - cov * cov / denom


def error_decay_lower_bound(model, sequence, target, eta2, n_steps=None, return_flags=False):
    """Product-form lower bound on ``Var(X_target | Y_{1:N})`` along ``sequence``.

    ``sigma2 mu_k mu_l * prod_n (1 - Corr_n^2 / (1 + gamma2))`` where ``Corr_n``
    is the correlation of the ``n``-th sample with the target given the first
    ``n-1``.  When the sample's conditional variance is below 1e-14 the
    correlation is taken as 0 and the step is flagged.
    """
    from .smg import ObservationSet

    seq = np.asarray(sequence, dtype=np.intp).reshape(-1, 2)
    n_steps = len(seq) if n_steps is None else int(n_steps)
    if n_steps > len(seq):
        raise ValueError(f"n_steps={n_steps} exceeds sequence length {len(seq)}")
    target = index_pair(target, model.shape)
    head = seq[:n_steps]
    if any(tuple(p) == target for p in head.tolist()):
        raise DomainError(f"target {target} is among the first {n_steps} samples")
    # variances do not depend on observed values, only on the index set
    bound = prior_variance(model, *target)
    flags = []
    for n in range(n_steps):
        obs = ObservationSet(head[:n], np.zeros(n), eta2, model.shape)
        nxt = tuple(head[n])
        var_n = conditional_covariance(model, obs, nxt, nxt, check=False)
        var_t = conditional_covariance(model, obs, target, target, check=False)
        if var_n < 1e-14:
            flags.append(n)
            continue
        if var_t < 1e-14:
            # target already pinned down: the most conservative factor keeps the bound valid
            corr2 = 1.0
        else:
            cov = conditional_covariance(model, obs, nxt, target, check=False)
            corr2 = min(cov * cov / (var_n * var_t), 1.0)
        bound *= 1.0 - corr2 / (1.0 + eta2 / model.sigma2)
    if flags:
        warnings.warn(
            f"zero conditional variance at steps {flags}; correlation set to 0",
            RuntimeWarning,
            stacklevel=2,
        )
    if return_flags:
        return bound, flags
    return bound

