"""Fixed-rank Gibbs sampler for the SMG completion model, and rank mixing.

One sweep of :func:`gibbs_step` imputes the unobserved entries from their SMG
conditional, redraws the singular vectors from matrix von Mises-Fisher
conditionals, the singular values from the quadrant law by Metropolis-Hastings,
and the two variances from their inverse-gamma conditionals.  Chains for each
candidate rank are combined with :func:`rank_posterior`.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .exceptions import DomainError
from .nuclear import complete_nuclear_norm
from .smg import chol_solve, random_basis, spd_factor


# ---------------------------------------------------------------------------
# priors and chain containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorSpec:
    """Inverse-gamma priors on the two variances and a prior over ranks ``1..r_max``."""

    alpha_eta2: float = 9.0
    beta_eta2: float = 1e-3
    alpha_sigma2: float = 9.0
    beta_sigma2: float = 10.0
    rank_prior: Sequence[float] = (0.2, 0.2, 0.2, 0.2, 0.2)

    def __post_init__(self):
        for name in ("alpha_eta2", "beta_eta2", "alpha_sigma2", "beta_sigma2"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        pi = np.asarray(self.rank_prior, dtype=float)
        if pi.ndim != 1 or len(pi) == 0 or np.any(pi < 0) or abs(pi.sum() - 1) > 1e-9:
            raise DomainError("rank_prior must be a probability vector over ranks 1..r_max")
        object.__setattr__(self, "rank_prior", tuple(float(p) for p in pi))

    @property
    def ranks(self):
        return list(range(1, len(self.rank_prior) + 1))

    @property
    def sigma2_mean(self):
        return self.beta_sigma2 / (self.alpha_sigma2 - 1) if self.alpha_sigma2 > 1 else self.beta_sigma2

    @property
    def eta2_mean(self):
        return self.beta_eta2 / (self.alpha_eta2 - 1) if self.alpha_eta2 > 1 else self.beta_eta2

    def to_dict(self):
        return {
            "alpha_eta2": self.alpha_eta2,
            "beta_eta2": self.beta_eta2,
            "alpha_sigma2": self.alpha_sigma2,
            "beta_sigma2": self.beta_sigma2,
            "rank_prior": list(self.rank_prior),
        }


@dataclass
class GibbsState:
    u: np.ndarray
    v: np.ndarray
    d: np.ndarray
    sigma2: float
    eta2: float
    y_full: np.ndarray

    @property
    def x(self):
        return (self.u * self.d) @ self.v.T


@dataclass
class GibbsChain:
    """Retained draws for one rank; ``x[t] = u[t] diag(d[t]) v[t]^T``."""

    rank: int
    u: np.ndarray
    v: np.ndarray
    d: np.ndarray
    sigma2: np.ndarray
    eta2: np.ndarray
    acceptance: float = float("nan")
    ql_scale: float = float("nan")

    def __len__(self):
        return len(self.sigma2)

    @property
    def x(self):
        return np.einsum("tik,tk,tjk->tij", self.u, self.d, self.v)


@dataclass
class GibbsDraws:
    chains: Dict[int, GibbsChain]
    rank_weights: np.ndarray
    log_weights: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def ranks(self):
        return sorted(self.chains)

    @property
    def map_rank(self):
        return self.ranks[int(np.argmax(self.rank_weights))]


# ---------------------------------------------------------------------------
# manifold samplers
# ---------------------------------------------------------------------------


def _wood(kappa, p, rng):
    """Component along the mean direction of a vMF draw on S^{p-1}.

    Returns ``(w, 1 - w)``; the second value is computed without cancellation
    so very large concentrations stay accurate.
    """
    pm1 = p - 1.0
    b = pm1 / (2.0 * kappa + math.sqrt(4.0 * kappa * kappa + pm1 * pm1))
    x0 = (1.0 - b) / (1.0 + b)
    one_m_x0 = 2.0 * b / (1.0 + b)
    log_one_m_x0sq = math.log(4.0 * b) - 2.0 * math.log1p(b)
    a = 0.5 * pm1
    while True:
        z = rng.beta(a, a)
        denom = 1.0 - (1.0 - b) * z
        w = (1.0 - (1.0 + b) * z) / denom
        one_m_w = 2.0 * b * z / denom
        lhs = kappa * (one_m_x0 - one_m_w) + pm1 * (
            math.log(one_m_x0 + x0 * one_m_w) - log_one_m_x0sq
        )
        if lhs >= math.log(rng.random()):
            return w, one_m_w


def sample_vmf(f, rng):
    """One draw from the von Mises-Fisher density ``exp(f^T x)`` on the unit sphere."""
    f = np.asarray(f, dtype=float)
    p = f.shape[0]
    kappa = float(np.linalg.norm(f))
    g = rng.standard_normal(p)
    if kappa == 0.0:
        return g / np.linalg.norm(g)
    mu = f / kappa
    w, one_m_w = _wood(kappa, p, rng)
    g -= mu * (mu @ g)
    g /= np.linalg.norm(g)
    return w * mu + math.sqrt(one_m_w * (1.0 + w)) * g


def _mf_column_update(w, f, k, rng):
    """Redraw column ``k`` of ``w`` from its vMF conditional given the others."""
    m, r = w.shape
    fk = f[:, k]
    g = rng.standard_normal(m)
    if r > 1:
        others = np.delete(w, k, axis=1)
        fk = fk - others @ (others.T @ fk)
        g -= others @ (others.T @ g)
    kappa = float(np.linalg.norm(fk))
    if kappa == 0.0:
        w[:, k] = g / np.linalg.norm(g)
        return
    mu = fk / kappa
    wpar, one_m_w = _wood(kappa, m - r + 1, rng)
    g -= mu * (mu @ g)
    g /= np.linalg.norm(g)
    w[:, k] = wpar * mu + math.sqrt(one_m_w * (1.0 + wpar)) * g


def _mf_rotation_update(w, f, rng):
    """Redraw the in-plane angle of every column pair from its von Mises conditional.

    Single-column moves cannot turn a frame inside its own span, so the
    rotation mode mixes at a rate of order ``1 / kappa`` without this step.
    Rotating columns ``k, l`` by ``theta`` changes ``tr(F^T W)`` by
    ``a cos(theta) + b sin(theta)``, an exactly sampleable von Mises law.
    """
    r = w.shape[1]
    for k in range(r):
        for l in range(k + 1, r):
            wk, wl = w[:, k].copy(), w[:, l].copy()
            fk, fl = f[:, k], f[:, l]
            a = fk @ wk + fl @ wl
            b = fk @ wl - fl @ wk
            kappa = math.hypot(a, b)
            if kappa > 0:
                theta = rng.vonmises(math.atan2(b, a), kappa)
            else:
                theta = rng.uniform(-math.pi, math.pi)
            c, s = math.cos(theta), math.sin(theta)
            w[:, k] = c * wk + s * wl
            w[:, l] = c * wl - s * wk


def _reorthonormalize(w):
    gram = w.T @ w
    if np.max(np.abs(gram - np.eye(w.shape[1]))) > 1e-12:
        q, r = np.linalg.qr(w)
        w[:] = q * np.sign(np.diag(r))


def sample_matrix_fisher(m, R, concentration, rng=None, init=None, n_sweeps=2):
    """Draw from the matrix von Mises-Fisher law ``MF(m, R, F) ~ etr(F^T W)``.

    Column-at-a-time Gibbs updates on the Stiefel manifold: each column is a
    vector vMF draw on the sphere orthogonal to the remaining columns, and
    each sweep ends with von Mises redraws of the angle of every column pair.  The
    sweep starts from ``init`` (a uniform draw when omitted).
    """
    if m < R:
        raise DomainError(f"Stiefel manifold needs m >= R, got m={m}, R={R}")
    rng = np.random.default_rng(rng)
    f = np.asarray(concentration, dtype=float).reshape(m, R)
    if not np.all(np.isfinite(f)):
        raise DomainError("concentration matrix must be finite")
    w = random_basis(m, R, rng) if init is None else np.array(init, dtype=float)
    for _ in range(n_sweeps):
        for k in range(R):
            _mf_column_update(w, f, k, rng)
        _mf_rotation_update(w, f, rng)
        _reorthonormalize(w)
    return w


def sample_quadrant_law(mu, delta2, current, rng=None, n_mh_steps=5, step_size=None,
                        return_acceptance=False):
    """Metropolis-Hastings sweeps targeting the quadrant law ``QL(mu, delta2)``.

    Density on ``d > 0``: ``exp(-||d - mu||^2 / (2 delta2)) prod_{k<l} |d_k^2 - d_l^2|``.
    Each sweep proposes every coordinate in turn by a Gaussian random walk
    reflected at zero (a symmetric kernel), so rejections keep the state.
    """
    if not delta2 > 0:
        raise DomainError("delta2 must be positive")
    rng = np.random.default_rng(rng)
    d = [float(x) for x in np.asarray(current, dtype=float)]
    if any(x <= 0 for x in d):
        raise DomainError("current singular values must be positive")
    mu = [float(x) for x in np.asarray(mu, dtype=float)]
    r = len(d)
    scale = math.sqrt(delta2) if step_size is None else float(step_size)
    steps = rng.standard_normal(n_mh_steps * r) * scale
    logu = np.log(rng.random(n_mh_steps * r))
    inv2 = 0.5 / delta2
    accepted = 0
    n = 0
    for _ in range(n_mh_steps):
        for k in range(r):
            old = d[k]
            new = abs(old + steps[n])
            if new == 0.0:
                n += 1
                continue
            delta = ((old - mu[k]) ** 2 - (new - mu[k]) ** 2) * inv2
            o2, n2 = old * old, new * new
            ok = True
            for l in range(r):
                if l != k:
                    dl2 = d[l] * d[l]
                    gap_new = abs(n2 - dl2)
                    if gap_new == 0.0:
                        ok = False
                        break
                    delta += math.log(gap_new) - math.log(abs(o2 - dl2))
            if ok and delta >= logu[n]:
                d[k] = new
                accepted += 1
            n += 1
    out = np.array(d)
    if return_acceptance:
        return out, accepted / max(n, 1)
    return out


# ---------------------------------------------------------------------------
# one Gibbs sweep
# ---------------------------------------------------------------------------


IMPUTATIONS = ("smg", "conditional")
SIGMA2_SHAPES = ("rank", "core")


def _impute(state, obs, rng, imputation="smg"):
    """Fill ``Y_{Omega^c}``.

    ``"smg"`` draws from ``N(X^P, Sigma^P + eta2 I)``, the SMG conditional given
    ``Y_Omega`` with ``D`` integrated out.  ``"conditional"`` draws from
    ``N(U D V^T, eta2 I)``, the full conditional given the current state.
    """
    u, v = state.u, state.v
    if imputation == "conditional":
        y = (u * state.d) @ v.T + rng.normal(0.0, math.sqrt(state.eta2), size=obs.shape)
        if obs.n:
            y[obs.indices[:, 0], obs.indices[:, 1]] = obs.values
        return y
    sigma2, eta2 = state.sigma2, state.eta2
    m1, m2 = obs.shape
    r = u.shape[1]
    x = (u @ rng.normal(0.0, math.sqrt(sigma2), size=(r, r))) @ v.T
    x += rng.normal(0.0, math.sqrt(eta2), size=(m1, m2))
    if obs.n:
        ii, jj = obs.indices[:, 0], obs.indices[:, 1]
        ui, vj = u[ii], v[jj]
        a = (ui @ ui.T) * (vj @ vj.T)
        a[np.diag_indices_from(a)] += eta2 / sigma2
        low = spd_factor(a, allow_jitter=True)
        # x[ii, jj] already carries one N(0, eta2) draw, the pathwise noise term
        alpha = chol_solve(low, obs.values - x[ii, jj])
        x += (u @ ((ui.T * alpha) @ vj)) @ v.T
        x[ii, jj] = obs.values
    return x


def gibbs_step(state, obs, priors, rng, ql_scale=1.0, n_mh_steps=5, mf_sweeps=2,
               imputation="smg", sigma2_shape="rank", return_acceptance=False):
    """One full Gibbs sweep; returns the new :class:`GibbsState`.

    Order: impute ``Y_{Omega^c}``; ``U ~ MF(Y V D / eta2)``; ``V ~ MF(Y^T U D / eta2)``;
    ``D ~ QL(sigma2 diag(U^T Y V) / (eta2 + sigma2), eta2 sigma2 / (eta2 + sigma2))``;
    ``sigma2 ~ IG(a + R/2, b + tr(D^2)/2)``; ``eta2 ~ IG(a + m1 m2/2, b + ||Y - U D V^T||^2/2)``.
    """
    m1, m2 = obs.shape
    r = state.u.shape[1]
    sigma2, eta2 = state.sigma2, state.eta2
    if imputation not in IMPUTATIONS:
        raise ValueError(f"imputation must be one of {IMPUTATIONS}")
    if sigma2_shape not in SIGMA2_SHAPES:
        raise ValueError(f"sigma2_shape must be one of {SIGMA2_SHAPES}")
    y = _impute(state, obs, rng, imputation)

    u = state.u.copy()
    v = state.v.copy()
    d = state.d
    fu = (y @ v) * (d / eta2)
    for _ in range(mf_sweeps):
        for k in range(r):
            _mf_column_update(u, fu, k, rng)
        _mf_rotation_update(u, fu, rng)
    _reorthonormalize(u)
    fv = (y.T @ u) * (d / eta2)
    for _ in range(mf_sweeps):
        for k in range(r):
            _mf_column_update(v, fv, k, rng)
        _mf_rotation_update(v, fv, rng)
    _reorthonormalize(v)

    shrink = sigma2 / (eta2 + sigma2)
    mu = shrink * np.einsum("ik,ij,jk->k", u, y, v)
    delta2 = eta2 * shrink
    d, acc = sample_quadrant_law(
        mu, delta2, d, rng, n_mh_steps=n_mh_steps,
        step_size=ql_scale * math.sqrt(delta2), return_acceptance=True,
    )

    shape_inc = 0.5 * r if sigma2_shape == "rank" else 0.5 * r * r
    sigma2 = _inv_gamma(rng, priors.alpha_sigma2 + shape_inc, priors.beta_sigma2 + 0.5 * float(d @ d))
    resid = y - (u * d) @ v.T
    eta2 = _inv_gamma(
        rng, priors.alpha_eta2 + 0.5 * m1 * m2, priors.beta_eta2 + 0.5 * float(np.sum(resid * resid))
    )
    new = GibbsState(u, v, d, sigma2, eta2, y)
    if return_acceptance:
        return new, acc
    return new


def _inv_gamma(rng, shape, rate):
    return rate / rng.gamma(shape)


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------


def initial_state(obs, priors, rank, rng, init=None):
    """Starting point from a (nuclear-norm) completion truncated to ``rank``."""
    m1, m2 = obs.shape
    if init is None and obs.n:
        init = complete_nuclear_norm(obs).x_hat
    if init is None:
        u = random_basis(m1, rank, rng)
        v = random_basis(m2, rank, rng)
        d = np.sort(np.abs(rng.normal(0.0, math.sqrt(priors.sigma2_mean), size=rank)))[::-1]
    else:
        uu, s, vt = np.linalg.svd(np.asarray(init, dtype=float), full_matrices=False)
        u, v, d = uu[:, :rank].copy(), vt[:rank].T.copy(), s[:rank].copy()
    floor = 1e-3 * max(float(d.max()), 1.0)
    d = np.maximum(d, floor * np.arange(rank, 0, -1))
    y = obs.to_matrix(fill=0.0) if obs.n else np.zeros((m1, m2))
    if init is not None:
        y = np.where(np.isnan(obs.to_matrix()), init, y)
    return GibbsState(u, v, d, priors.sigma2_mean, priors.eta2_mean, y)


def run_chain(obs, priors, rank, T, burn_in=None, thin=1, rng=None, init=None,
              n_mh_steps=5, mf_sweeps=2, imputation="smg", sigma2_shape="rank"):
    """Run ``gibbs.mc`` at fixed rank and keep ``T`` draws after burn-in/thinning.

    The quadrant-law random-walk scale is tuned toward 30-45% acceptance
    during burn-in and frozen afterwards.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    m1, m2 = obs.shape
    if not 1 <= rank < min(m1, m2):
        raise DomainError(f"rank must satisfy 1 <= r < min(m1, m2), got {rank}")
    burn_in = T // 10 if burn_in is None else int(burn_in)
    rng = np.random.default_rng(rng)
    state = initial_state(obs, priors, rank, rng, init=init)
    out_u = np.empty((T, m1, rank))
    out_v = np.empty((T, m2, rank))
    out_d = np.empty((T, rank))
    out_s = np.empty(T)
    out_e = np.empty(T)
    scale = 1.0
    window_acc, window_n = 0.0, 0
    kept_acc = 0.0
    total = burn_in + T * thin
    t_keep = 0
    for it in range(total):
        state, acc = gibbs_step(state, obs, priors, rng, ql_scale=scale,
                                n_mh_steps=n_mh_steps, mf_sweeps=mf_sweeps,
                                imputation=imputation, sigma2_shape=sigma2_shape,
                                return_acceptance=True)
        if it < burn_in:
            window_acc += acc
            window_n += 1
            if window_n == 50:
                rate = window_acc / window_n
                if rate < 0.30:
                    scale *= 0.8
                elif rate > 0.45:
                    scale *= 1.25
                window_acc, window_n = 0.0, 0
            continue
        kept_acc += acc
        if (it - burn_in) % thin == thin - 1:
            out_u[t_keep] = state.u
            out_v[t_keep] = state.v
            out_d[t_keep] = state.d
            out_s[t_keep] = state.sigma2
            out_e[t_keep] = state.eta2
            t_keep += 1
    return GibbsChain(rank, out_u, out_v, out_d, out_s, out_e,
                      acceptance=kept_acc / max(T * thin, 1), ql_scale=scale)


def run_all_ranks(obs, priors, T, burn_in=None, thin=1, seed=0, init=None, ranks=None,
                  **kwargs):
    """Independent chains for every rank in the prior's support, then weight them."""
    ranks = priors.ranks if ranks is None else list(ranks)
    if obs.n and init is None:
        init = complete_nuclear_norm(obs).x_hat
    streams = np.random.SeedSequence(seed).spawn(len(ranks))
    chains = {}
    for r, ss in zip(ranks, streams):
        chains[r] = run_chain(obs, priors, r, T, burn_in, thin, np.random.default_rng(ss),
                              init=init, **kwargs)
    weights, logw = rank_posterior(chains, obs, priors, return_log=True)
    return GibbsDraws(chains, weights, logw)


# ---------------------------------------------------------------------------
# rank posterior and summaries
# ---------------------------------------------------------------------------


def log_stiefel_volume(m, r):
    """``log`` of the Haar volume of the Stiefel manifold ``V_{r,m}``."""
    k = np.arange(m - r + 1, m + 1)
    return float(np.sum(math.log(2.0) + 0.5 * k * math.log(math.pi) - gammaln(0.5 * k)))


_QL_CONST: Dict[tuple, float] = {}


def log_ql_constant(r, n_particles=100_000, seed=20240917):
    """``log E prod_{k<l} |s_k^2 - s_l^2|`` for i.i.d. half-normal ``s``.

    Monte Carlo with a fixed seed; combined with the exact scaling in the
    variance it gives the quadrant-law normalizer used in prior densities.
    """
    key = (r, n_particles, seed)
    if key not in _QL_CONST:
        if r == 1:
            _QL_CONST[key] = 0.0
        else:
            rng = np.random.default_rng(seed)
            s2 = rng.standard_normal((n_particles, r)) ** 2
            iu, ju = np.triu_indices(r, 1)
            logs = np.sum(np.log(np.abs(s2[:, iu] - s2[:, ju])), axis=1)
            _QL_CONST[key] = float(logsumexp(logs) - math.log(n_particles))
    return _QL_CONST[key]


def log_ql_density(d, mu, delta2):
    """Normalized quadrant-law log density with ``mu = 0`` (the prior on ``D``).

    Rows of ``d`` are evaluated independently; ``delta2`` may be a vector.
    """
    d = np.atleast_2d(np.asarray(d, dtype=float))
    delta2 = np.broadcast_to(np.asarray(delta2, dtype=float), (d.shape[0],))
    if np.any(np.asarray(mu) != 0):
        raise DomainError("only the centred quadrant law has a closed-form normalizer here")
    r = d.shape[1]
    if np.any(d <= 0):
        return np.full(d.shape[0], -np.inf)
    iu, ju = np.triu_indices(r, 1)
    d2 = d * d
    with np.errstate(divide="ignore"):
        rep = np.sum(np.log(np.abs(d2[:, iu] - d2[:, ju])), axis=1) if r > 1 else 0.0
    # integral over d > 0 of the unnormalized density is
    # 2^-r delta^(r(r-1)) E|prod| (2 pi delta2)^(r/2)
    log_z = -r * math.log(2.0) + 0.5 * r * (r - 1) * np.log(delta2) + log_ql_constant(r)
    return -np.sum(d2, axis=1) / (2 * delta2) + rep - log_z - 0.5 * r * np.log(2 * np.pi * delta2)


def log_inv_gamma(x, shape, rate):
    x = np.asarray(x, dtype=float)
    return shape * math.log(rate) - gammaln(shape) - (shape + 1) * np.log(x) - rate / x


def chain_log_weights(chain, obs, priors):
    """Per-draw ``log f(Y_Omega | theta_t) + log p(theta_t)``."""
    m1, m2 = obs.shape
    r = chain.rank
    ii, jj = obs.indices[:, 0], obs.indices[:, 1]
    xo = np.einsum("tnk,tk,tnk->tn", chain.u[:, ii, :], chain.d, chain.v[:, jj, :])
    resid = obs.values[None, :] - xo
    eta2 = chain.eta2
    loglik = -0.5 * obs.n * np.log(2 * np.pi * eta2) - np.sum(resid * resid, axis=1) / (2 * eta2)
    logp = (
        -log_stiefel_volume(m1, r)
        - log_stiefel_volume(m2, r)
        + log_ql_density(chain.d, 0.0, chain.sigma2)
        + log_inv_gamma(chain.sigma2, priors.alpha_sigma2, priors.beta_sigma2)
        + log_inv_gamma(chain.eta2, priors.alpha_eta2, priors.beta_eta2)
    )
    return loglik + logp


def rank_posterior(chains, obs, priors, return_log=False):
    """Posterior rank probabilities from fixed-rank chains.

    ``pi_r^P`` is proportional to ``pi_r * sum_t f(Y_Omega | theta_t) p(theta_t)``,
    evaluated in log space with a global max shift.
    """
    ranks = sorted(chains)
    pri = np.asarray(priors.rank_prior)
    logw = np.empty(len(ranks))
    for n, r in enumerate(ranks):
        if not 1 <= r <= len(pri):
            raise DomainError(f"rank {r} outside the prior support 1..{len(pri)}")
        lw = chain_log_weights(chains[r], obs, priors)
        logw[n] = (logsumexp(lw) if len(lw) else -np.inf) + (
            math.log(pri[r - 1]) if pri[r - 1] > 0 else -np.inf
        )
    if not np.any(np.isfinite(logw)):
        raise FloatingPointError("all rank weights are zero or undefined")
    shifted = logw - np.max(logw[np.isfinite(logw)])
    w = np.exp(shifted)
    w[~np.isfinite(w)] = 0.0
    w /= w.sum()
    if return_log:
        return w, logw
    return w


def posterior_mean(draws):
    """``sum_r pi_r^P * mean_t X_t^(r)``."""
    out = None
    for w, r in zip(draws.rank_weights, draws.ranks):
        if w == 0:
            continue
        ch = draws.chains[r]
        mean_r = np.einsum("tik,tk,tjk->ij", ch.u, ch.d, ch.v) / len(ch)
        out = w * mean_r if out is None else out + w * mean_r
    return out


def entry_uncertainty(draws, targets, level=0.95, rng=None, n_samples=None):
    """Point estimate and equal-tailed interval for each target entry.

    Samples are built by drawing a rank from ``pi^P`` and then a retained draw
    of that rank uniformly.  Returns an array of rows ``(mean, lower, upper)``.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    tg = np.asarray(targets, dtype=np.intp).reshape(-1, 2)
    ranks = draws.ranks
    n_samples = n_samples or max(len(draws.chains[r]) for r in ranks)
    pick_r = rng.choice(len(ranks), size=n_samples, p=np.asarray(draws.rank_weights))
    vals = np.empty((n_samples, len(tg)))
    for n, r in enumerate(ranks):
        sel = np.flatnonzero(pick_r == n)
        if not len(sel):
            continue
        ch = draws.chains[r]
        t = rng.integers(0, len(ch), size=len(sel))
        vals[sel] = np.einsum("snk,sk,snk->sn", ch.u[t][:, tg[:, 0], :], ch.d[t],
                              ch.v[t][:, tg[:, 1], :])
    lo, hi = np.quantile(vals, [(1 - level) / 2, (1 + level) / 2], axis=0)
    return np.column_stack([vals.mean(axis=0), lo, hi])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def write_checkpoint(draws, path, shape):
    """Write one ``rank_<r>.csv`` per rank plus ``manifest.json``.

    Each CSV row is ``draw, sigma2, eta2, d_1..d_r, u (row-major m1*r), v (row-major m2*r)``
    in ``%.17g``, which round-trips float64 exactly.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    m1, m2 = shape
    for r, ch in draws.chains.items():
        cols = ["draw", "sigma2", "eta2"] + [f"d_{k + 1}" for k in range(r)]
        cols += [f"u_{i + 1}_{k + 1}" for i in range(m1) for k in range(r)]
        cols += [f"v_{j + 1}_{k + 1}" for j in range(m2) for k in range(r)]
        table = np.column_stack([
            np.arange(len(ch)), ch.sigma2, ch.eta2, ch.d,
            ch.u.reshape(len(ch), -1), ch.v.reshape(len(ch), -1),
        ])
        np.savetxt(path / f"rank_{r}.csv", table, fmt="%.17g", delimiter=",",
                   header=",".join(cols), comments="")
    manifest = {
        "shape": [m1, m2],
        "ranks": draws.ranks,
        "rank_weights": [float(w) for w in draws.rank_weights],
        "acceptance": {str(r): draws.chains[r].acceptance for r in draws.ranks},
        "ql_scale": {str(r): draws.chains[r].ql_scale for r in draws.ranks},
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def read_checkpoint(path):
    path = Path(path)
    with open(path / "manifest.json") as fh:
        manifest = json.load(fh)
    m1, m2 = manifest["shape"]
    chains = {}
    for r in manifest["ranks"]:
        table = np.loadtxt(path / f"rank_{r}.csv", delimiter=",", skiprows=1, ndmin=2)
        t = table.shape[0]
        c = 3
        d = table[:, c:c + r]
        c += r
        u = table[:, c:c + m1 * r].reshape(t, m1, r)
        c += m1 * r
        v = table[:, c:c + m2 * r].reshape(t, m2, r)
        chains[r] = GibbsChain(
            r, u, v, d, table[:, 1].copy(), table[:, 2].copy(),
            acceptance=manifest["acceptance"][str(r)], ql_scale=manifest["ql_scale"][str(r)],
        )
    return GibbsDraws(chains, np.asarray(manifest["rank_weights"]))
