"""Singular matrix-variate Gaussian (SMG) prior and its Gaussian conditionals.

A matrix ``X ~ SMG(P_U, P_V, sigma2, R)`` is distributed as ``P_U Z P_V`` for a
Gaussian ensemble ``Z`` with variance ``sigma2``.  Every entry of ``X`` is then
jointly Gaussian with covariance ``sigma2 * kron(P_V, P_U)`` (column-major
vectorisation), which makes conditioning on noisy entries closed form.

All indices are 0-based here; 1-based conversion happens in the I/O layer.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la

from ._validation import (
    check_index_array,
    check_orthonormal,
    complement_indices,
)
from .exceptions import DomainError, IllConditionedError, InvalidBasisError

JITTER_LADDER = (1e-10, 1e-8, 1e-6)


def projection_from_basis(basis):
    """Orthogonal projector ``U U^T`` onto the column span of ``basis``.

    Raises InvalidBasisError when the columns are not orthonormal to 1e-6.
    """
    u = check_orthonormal(basis)
    p = u @ u.T
    return 0.5 * (p + p.T)


def check_projection(p, rank=None, tol=1e-8):
    """Validate a projector and return ``(p, rank)``."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise InvalidBasisError("projection matrix must be square")
    if np.max(np.abs(p - p.T)) > 1e-10 * max(1.0, np.abs(p).max()):
        raise InvalidBasisError("projection matrix is not symmetric")
    if np.max(np.abs(p @ p - p)) > tol:
        raise InvalidBasisError("projection matrix is not idempotent")
    tr = float(np.trace(p))
    r = int(round(tr))
    if abs(tr - r) > tol:
        raise InvalidBasisError(f"projection trace {tr} is not an integer")
    if rank is not None and r != rank:
        raise InvalidBasisError(f"projection has rank {r}, expected {rank}")
    return p, r


def basis_from_projection(p, rank):
    """Orthonormal basis for the range of a projector (top eigenvectors)."""
    w, q = np.linalg.eigh(p)
    return q[:, np.argsort(w)[::-1][:rank]]


def random_basis(m, rank, rng):
    """Haar-uniform point on the Stiefel manifold (QR of a Gaussian matrix)."""
    g = rng.standard_normal((m, rank))
    q, r = np.linalg.qr(g)
    # sign fix makes the draw exactly Haar distributed
    return q * np.sign(np.diag(r))


@dataclass(frozen=True, eq=False)
class SMGModel:
    """Matrix prior ``SMG(P_U, P_V, sigma2, R)``.

    Build with :meth:`from_bases` when orthonormal factors are available: the
    covariance helpers then run in ``O(N^2 R)`` instead of ``O(N^2 m)``.
    """

    pu: np.ndarray
    pv: np.ndarray
    sigma2: float
    rank: int
    u: Optional[np.ndarray] = field(default=None, repr=False)
    v: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        m1, m2 = self.pu.shape[0], self.pv.shape[0]
        if not 1 <= self.rank < min(m1, m2):
            raise DomainError(
                f"rank must satisfy 1 <= R < min(m1, m2) = {min(m1, m2)}, got {self.rank}"
            )
        pu, ru = check_projection(self.pu)
        pv, rv = check_projection(self.pv)
        if ru != self.rank or rv != self.rank:
            raise InvalidBasisError(
                f"projector ranks ({ru}, {rv}) do not match model rank {self.rank}"
            )

    @classmethod
    def from_bases(cls, u, v, sigma2):
        u = check_orthonormal(u)
        v = check_orthonormal(v)
        if u.shape[1] != v.shape[1]:
            raise InvalidBasisError("row and column bases must have the same rank")
        return cls(
            pu=projection_from_basis(u),
            pv=projection_from_basis(v),
            sigma2=float(sigma2),
            rank=u.shape[1],
            u=u,
            v=v,
        )

    @classmethod
    def from_projections(cls, pu, pv, sigma2, rank=None):
        pu, ru = check_projection(pu, rank)
        pv, _ = check_projection(pv, ru)
        return cls(
            pu=pu,
            pv=pv,
            sigma2=float(sigma2),
            rank=ru,
            u=basis_from_projection(pu, ru),
            v=basis_from_projection(pv, ru),
        )

    @classmethod
    def random(cls, m1, m2, rank, sigma2=1.0, rng=None):
        """Model with subspaces drawn uniformly from the Grassmannians."""
        rng = np.random.default_rng(rng)
        return cls.from_bases(random_basis(m1, rank, rng), random_basis(m2, rank, rng), sigma2)

    @property
    def shape(self):
        return self.pu.shape[0], self.pv.shape[0]

    @property
    def row_factor(self):
        return self.u if self.u is not None else self.pu

    @property
    def col_factor(self):
        return self.v if self.v is not None else self.pv

    @property
    def key(self):
        """Content key used to cache factorizations."""
        return (self.pu.tobytes(), self.pv.tobytes(), self.sigma2)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Noisy observations ``Y_Omega`` at distinct indices of an ``m1 x m2`` matrix."""

    indices: np.ndarray
    values: np.ndarray
    eta2: float
    shape: tuple

    def __post_init__(self):
        idx = check_index_array(self.indices, shape=self.shape)
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if len(vals) != len(idx):
            raise ValueError(f"{len(vals)} values for {len(idx)} indices")
        if self.eta2 < 0:
            raise DomainError(f"eta2 must be non-negative, got {self.eta2}")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "shape", (int(self.shape[0]), int(self.shape[1])))
        idx.flags.writeable = False
        vals.flags.writeable = False

    @classmethod
    def empty(cls, shape, eta2):
        return cls(np.empty((0, 2), dtype=np.intp), np.empty(0), eta2, shape)

    @classmethod
    def from_matrix(cls, y, eta2):
        """Observations at the finite entries of ``y`` (NaN marks missing)."""
        y = np.asarray(y, dtype=float)
        idx = np.argwhere(np.isfinite(y))
        return cls(idx, y[idx[:, 0], idx[:, 1]], eta2, y.shape)

    def __len__(self):
        return len(self.indices)

    @property
    def n(self):
        return len(self.indices)

    def complement(self):
        return complement_indices(self.indices, self.shape)

    def contains(self, index):
        i, j = index
        return bool(np.any((self.indices[:, 0] == i) & (self.indices[:, 1] == j)))

    def extend(self, indices, values):
        idx = np.concatenate([self.indices, check_index_array(indices, self.shape)])
        vals = np.concatenate([self.values, np.atleast_1d(np.asarray(values, dtype=float))])
        return ObservationSet(idx, vals, self.eta2, self.shape)

    def to_matrix(self, fill=np.nan):
        out = np.full(self.shape, fill, dtype=float)
        out[self.indices[:, 0], self.indices[:, 1]] = self.values
        return out

    @property
    def key(self):
        return (self.indices.tobytes(), self.shape)


@dataclass(frozen=True, eq=False)
class ConditionalPosterior:
    """Gaussian law of the target entries given ``Y_Omega``."""

    targets: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    gamma2: float

    @property
    def variance(self):
        return np.diag(self.covariance).copy()


def sample_smg(model, rng=None):
    """Draw ``P_U Z P_V`` with ``Z_ij ~ N(0, sigma2)`` i.i.d."""
    rng = np.random.default_rng(rng)
    z = rng.normal(0.0, np.sqrt(model.sigma2), size=model.shape)
    return model.pu @ z @ model.pv


def smg_log_density(x, model, tol=1e-6):
    """Log density of an SMG matrix on the space ``T``.

    Equals ``-(R^2/2) log(2 pi sigma2) - ||X||_F^2 / (2 sigma2)`` for ``X`` in ``T``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != model.shape:
        raise DomainError(f"matrix shape {x.shape} does not match model {model.shape}")
    resid = np.max(np.abs(model.pu @ x @ model.pv - x)) if x.size else 0.0
    if resid > tol:
        raise DomainError(f"matrix is not in the model space T (residual {resid:.2e})")
    quad = np.trace((x @ model.pv).T @ (model.pu @ x))
    r = model.rank
    return -0.5 * r * r * np.log(2 * np.pi * model.sigma2) - quad / (2 * model.sigma2)


def observe_entries(x, indices, eta2, rng=None):
    """Noisy reads ``Y_ij = X_ij + eps``, ``eps ~ N(0, eta2)``."""
    x = np.asarray(x, dtype=float)
    idx = check_index_array(indices, shape=x.shape)
    rng = np.random.default_rng(rng)
    vals = x[idx[:, 0], idx[:, 1]]
    if eta2 > 0 and len(idx):
        vals = vals + rng.normal(0.0, np.sqrt(eta2), size=len(idx))
    return ObservationSet(idx, vals, eta2, x.shape)


def cross_covariance(row_factor, col_factor, rows, cols):
    """Block of ``kron(P_V, P_U)`` between two index lists.

    ``row_factor``/``col_factor`` are either orthonormal bases (``m x R``) or
    the projectors themselves; both give ``nu_{i,i'}(U) * nu_{j,j'}(V)``.
    """
    rows = np.asarray(rows, dtype=np.intp).reshape(-1, 2)
    cols = np.asarray(cols, dtype=np.intp).reshape(-1, 2)
    return _cross_factor(row_factor, rows[:, 0], cols[:, 0]) * _cross_factor(
        col_factor, rows[:, 1], cols[:, 1]
    )


def _cross_factor(f, a, b):
    # square factor = projector (a basis always has R < m columns)
    if f.shape[0] == f.shape[1]:
        return f[np.ix_(a, b)]
    return f[a] @ f[b].T


def build_covariance_block(model, indices, other=None):
    """``R_N(Omega) = kron(P_V, P_U)`` restricted to ``indices`` (unscaled)."""
    idx = check_index_array(indices, shape=model.shape, allow_duplicates=True)
    oth = idx if other is None else check_index_array(other, model.shape, allow_duplicates=True)
    return cross_covariance(model.row_factor, model.col_factor, idx, oth)


def spd_factor(a, allow_jitter=True, max_condition=1e14):
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    On failure, escalates diagonal jitter through ``JITTER_LADDER``.  With
    ``allow_jitter=False`` a numerically singular matrix raises instead.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 0:
        return np.empty((0, 0))
    try:
        low = la.cholesky(a, lower=True, check_finite=False)
        d = np.diag(low)
        cond = (d.max() / d.min()) ** 2 if d.min() > 0 else np.inf
        if allow_jitter or cond < max_condition:
            return low
        raise IllConditionedError("covariance system is numerically singular", cond)
    except la.LinAlgError as err:
        if isinstance(err, IllConditionedError):
            raise
        if not allow_jitter:
            raise IllConditionedError(
                "covariance system is numerically singular", np.linalg.cond(a)
            ) from err
    for jit in JITTER_LADDER:
        try:
            return la.cholesky(a + jit * np.eye(n), lower=True, check_finite=False)
        except la.LinAlgError:
            continue
    raise IllConditionedError("covariance not positive definite after jitter", np.linalg.cond(a))


def chol_solve(low, b):
    return la.cho_solve((low, True), b, check_finite=False)


_FACTOR_CACHE: "OrderedDict[tuple, np.ndarray]" = OrderedDict()
_FACTOR_CACHE_SIZE = 32


def observation_factor(model, obs):
    """Cached Cholesky factor of ``R_N(Omega) + gamma2 I`` for one snapshot."""
    gamma2 = obs.eta2 / model.sigma2
    key = (model.key, obs.key, gamma2)
    low = _FACTOR_CACHE.get(key)
    if low is not None:
        _FACTOR_CACHE.move_to_end(key)
        return low
    a = build_covariance_block(model, obs.indices)
    a[np.diag_indices_from(a)] += gamma2
    low = spd_factor(a, allow_jitter=gamma2 > 0)
    low.flags.writeable = False
    _FACTOR_CACHE[key] = low
    if len(_FACTOR_CACHE) > _FACTOR_CACHE_SIZE:
        _FACTOR_CACHE.popitem(last=False)
    return low


def conditional_posterior(model, obs, targets=None):
    """Gaussian conditional of ``X`` at ``targets`` given noisy ``Y_Omega``.

    Parameters
    ----------
    model : SMGModel
    obs : ObservationSet
    targets : array-like of (row, col), optional
        Defaults to the full unobserved set in row-major order.

    Returns
    -------
    ConditionalPosterior
        ``mean = B^T (R_N + g I)^{-1} Y`` and
        ``covariance = sigma2 (C - B^T (R_N + g I)^{-1} B)`` where ``g = eta2/sigma2``.
    """
    if obs.shape != model.shape:
        raise DomainError("observation shape does not match model")
    tg = obs.complement() if targets is None else check_index_array(targets, model.shape)
    if targets is not None and obs.n:
        observed = {tuple(p) for p in obs.indices.tolist()}
        for p in tg.tolist():
            if tuple(p) in observed:
                raise DomainError(f"target {tuple(p)} is already observed")
    gamma2 = obs.eta2 / model.sigma2
    c = build_covariance_block(model, tg)
    if obs.n == 0:
        return ConditionalPosterior(tg, np.zeros(len(tg)), model.sigma2 * c, gamma2)
    low = observation_factor(model, obs)
    b = build_covariance_block(model, obs.indices, tg)
    w = la.solve_triangular(low, b, lower=True, check_finite=False)
    alpha = chol_solve(low, obs.values)
    mean = b.T @ alpha
    cov = model.sigma2 * (c - w.T @ w)
    cov = 0.5 * (cov + cov.T)
    return ConditionalPosterior(tg, mean, cov, gamma2)


def sample_conditional_matrix(u, v, sigma2, obs, rng, low=None):
    """One draw of the whole matrix ``X`` from its SMG conditional given ``Y_Omega``.

    Uses pathwise conditioning: a prior draw ``U G V^T`` is corrected by the
    kriging weights of its simulated residual, costing ``O(N^3 + N m1 m2)``
    rather than a factorization over the unobserved block.
    """
    m1, m2 = obs.shape
    r = u.shape[1]
    g = rng.normal(0.0, np.sqrt(sigma2), size=(r, r))
    prior = (u @ g) @ v.T
    if obs.n == 0:
        return prior
    ii, jj = obs.indices[:, 0], obs.indices[:, 1]
    gamma2 = obs.eta2 / sigma2
    if low is None:
        a = (u[ii] @ u[ii].T) * (v[jj] @ v[jj].T)
        a[np.diag_indices_from(a)] += gamma2
        low = spd_factor(a, allow_jitter=True)
    noise = rng.normal(0.0, np.sqrt(obs.eta2), size=obs.n) if obs.eta2 > 0 else 0.0
    alpha = chol_solve(low, obs.values - prior[ii, jj] - noise)
    # sum_n alpha_n (P_U e_i)(P_V e_j)^T = U [U_I^T diag(alpha) V_J] V^T
    core = (u[ii].T * alpha) @ v[jj]
    return prior + (u @ core) @ v.T
