"""Nuclear-norm regularized completion by soft-impute.

Minimizes ``sum_Omega (Y_ij - X_ij)^2 + lam * ||X||_*``.  Each iteration fills
the unobserved entries from the current estimate and applies the singular
value soft-threshold at ``lam / 2``, which is a majorize-minimize step, so the
objective never increases.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np


@dataclass
class CompletionResult:
    x_hat: np.ndarray
    lam: float
    objective_trace: list = field(default_factory=list)
    effective_rank: int = 0
    converged: bool = True
    n_iter: int = 0


def svd_soft_threshold(m, tau):
    """Proximal map of ``tau * ||.||_*``: shrink every singular value by ``tau``."""
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    m = np.asarray(m, dtype=float)
    if tau == 0:
        return m.copy()
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (u[:, keep] * s[keep]) @ vt[keep]


def effective_rank(x, rel_tol=1e-8):
    s = np.linalg.svd(np.asarray(x, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def default_lambda(values, shape, c=1.0):
    """``c * sqrt(max(m1, m2)) * eta_hat`` with ``eta_hat`` the scaled MAD of the values."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return c * np.sqrt(max(shape)) * 1e-3
    mad = np.median(np.abs(values - np.median(values))) * 1.4826
    if mad <= 0:
        mad = np.std(values) or 1e-3
    return c * np.sqrt(max(shape)) * mad


def _objective(x, ii, jj, y, lam):
    r = y - x[ii, jj]
    nuc = np.linalg.svd(x, compute_uv=False).sum() if lam > 0 else 0.0
    return float(r @ r + lam * nuc)


def _soft_impute_step(x, ii, jj, y, tau, lam):
    filled = x.copy()
    filled[ii, jj] = y
    u, sv, vt = np.linalg.svd(filled, full_matrices=False)
    sv = np.maximum(sv - tau, 0.0)
    keep = sv > 0
    x = (u[:, keep] * sv[keep]) @ vt[keep]
    r = y - x[ii, jj]
    return x, float(r @ r + lam * sv.sum())


def _continuation_start(ii, jj, y, shape, lam, max_iters, tol):
    """Warm start from a geometric path of weights down to ``lam``.

    From a zero start a small ``lam`` barely moves the unobserved entries, so
    the path starts where the solution is zero and halves the decade gap per
    stage.  The last stage (``lam`` itself) is left to the caller.
    """
    x = np.zeros(shape)
    filled = x.copy()
    filled[ii, jj] = y
    lam_max = 2.0 * np.linalg.norm(filled, 2)
    if not lam < lam_max or lam <= 0:
        return x
    n_stages = int(np.ceil(2 * np.log10(lam_max / lam))) + 1
    for stage_lam in np.geomspace(lam_max, lam, n_stages)[1:-1]:
        prev = _objective(x, ii, jj, y, stage_lam)
        for _ in range(max_iters):
            x, obj = _soft_impute_step(x, ii, jj, y, stage_lam / 2.0, stage_lam)
            if prev - obj <= tol * max(abs(prev), 1e-300):
                break
            prev = obj
    return x


def complete_nuclear_norm(obs, m1=None, m2=None, lam=None, max_iters=2000, tol=1e-9, init=None):
    """Soft-impute completion of the observations in ``obs``.

    Parameters
    ----------
    obs : ObservationSet
    m1, m2 : int, optional
        Matrix shape; defaults to ``obs.shape``.
    lam : float, optional
        Nuclear-norm weight; see :func:`default_lambda` for the default.
    max_iters : int
    tol : float
        Stop when the relative objective decrease falls below ``tol``.
    init : ndarray, optional
        Warm start.  Without one, the iterate is warm-started along a
        decreasing path of weights ending at ``lam``.

    Returns
    -------
    CompletionResult
        Best iterate; ``converged`` is False when ``max_iters`` was reached.
    """
    if obs.n < 1:
        raise ValueError("nuclear-norm completion needs at least one observation")
    shape = obs.shape if m1 is None else (int(m1), int(m2))
    if lam is None:
        lam = default_lambda(obs.values, shape)
    if lam < 0:
        raise ValueError(f"lam must be non-negative, got {lam}")
    ii, jj = obs.indices[:, 0], obs.indices[:, 1]
    y = obs.values
    if init is None:
        x = _continuation_start(ii, jj, y, shape, lam, max_iters, tol)
    else:
        x = np.array(init, dtype=float)
    trace = [_objective(x, ii, jj, y, lam)]
    best, best_obj = x, trace[0]
    converged = False
    tau = lam / 2.0
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        x, obj = _soft_impute_step(x, ii, jj, y, tau, lam)
        trace.append(obj)
        if obj <= best_obj:
            best, best_obj = x, obj
        prev = trace[-2]
        if prev - obj <= tol * max(abs(prev), 1e-300):
            converged = True
            break
    if not converged:
        warnings.warn(
            f"soft-impute stopped at max_iters={max_iters} before reaching tol={tol}",
            RuntimeWarning,
            stacklevel=2,
        )
    return CompletionResult(
        x_hat=best,
        lam=float(lam),
        objective_trace=trace,
        effective_rank=effective_rank(best),
        converged=converged,
        n_iter=n_iter,
    )


def estimate_subspaces(x_hat, rank):
    """Top-``rank`` singular triplets of ``x_hat`` as ``(U, V, s)``.

    If ``rank`` exceeds the numerical rank the trailing singular directions
    pad the bases and a warning is emitted.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    if not 1 <= rank <= min(x_hat.shape):
        raise ValueError(f"rank must be in [1, {min(x_hat.shape)}], got {rank}")
    u, s, vt = np.linalg.svd(x_hat, full_matrices=False)
    if rank > effective_rank(x_hat):
        warnings.warn(
            f"rank {rank} exceeds numerical rank {effective_rank(x_hat)}; padding with "
            "trailing singular directions",
            RuntimeWarning,
            stacklevel=2,
        )
    return u[:, :rank].copy(), vt[:rank].T.copy(), s[:rank].copy()
