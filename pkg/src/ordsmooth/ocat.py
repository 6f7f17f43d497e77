"""Ordered-categorical (cumulative logit) likelihood.

An observed stage Z in 1..K is the categorisation of a latent logistic
variable at thresholds -inf = t0 < t1 < ... < t_{K-1} < tK = +inf, with
t1 fixed at -1 to anchor the latent location against the free intercept:

    P(Z <= k | eta) = F(t_k - eta),       F the standard logistic CDF,
    P(Z = k  | eta) = F(t_k - eta) - F(t_{k-1} - eta).

The free thresholds are parameterised by unconstrained reals a via
t_k = t_{k-1} + exp(a_{k-1}), which keeps them strictly increasing.

Category probabilities are evaluated through log-CDF differences,

    log[F(b) - F(a)] = log F(b) + log F(-a) + log(-expm1(a - b)),

which is exact and avoids catastrophic cancellation in the far tails.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

# Guards stated as part of the public numeric contract: latent distances are
# clamped before exponentiation and probabilities floored inside logs.
MAX_LATENT = 700.0
LOG_PROB_FLOOR = float(np.log(1e-290))


@dataclass(frozen=True)
class Thresholds:
    """Stage-boundary parameterisation with t1 = -1 fixed.

    ``raw`` holds the K-2 unconstrained reals a; ``theta`` the derived
    strictly increasing cut points (t1, ..., t_{K-1}).
    """

    K: int
    raw: np.ndarray

    def __post_init__(self):
        raw = np.atleast_1d(np.asarray(self.raw, dtype=float)).reshape(-1)
        object.__setattr__(self, "raw", raw)
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        if raw.size != self.K - 2:
            raise ValueError(f"raw threshold vector must have length K-2={self.K - 2}, got {raw.size}")
        steps = np.exp(np.clip(raw, -MAX_LATENT, MAX_LATENT))
        theta = -1.0 + np.concatenate([[0.0], np.cumsum(steps)])
        object.__setattr__(self, "theta", theta)

    @property
    def n_free(self) -> int:
        return self.K - 2


def thresholds_from_raw(raw, K: int) -> Thresholds:
    """Build Thresholds from the unconstrained vector (length K-2)."""
    return Thresholds(K=K, raw=np.asarray(raw, dtype=float))


def raw_from_thresholds(theta) -> Thresholds:
    """Inverse transform: exact round trip with :func:`thresholds_from_raw`.

    ``theta`` must be strictly increasing with theta[0] == -1.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size < 1:
        raise ValueError("theta must be a non-empty 1-d vector")
    if theta[0] != -1.0:
        raise ValueError(f"theta[0] must be -1 under this parameterisation, got {theta[0]}")
    diffs = np.diff(theta)
    if np.any(diffs <= 0):
        raise ValueError("thresholds must be strictly increasing")
    return Thresholds(K=theta.size + 1, raw=np.log(diffs))


def _theta_vector(th) -> np.ndarray:
    """Accept a Thresholds object or any strictly increasing cut-point vector."""
    theta = th.theta if isinstance(th, Thresholds) else np.asarray(th, dtype=float)
    if theta.ndim != 1 or theta.size < 1:
        raise ValueError("need at least one threshold")
    if np.any(np.diff(theta) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    return theta


def _log_prob_interval(x_hi, x_lo):
    """log[F(x_hi) - F(x_lo)] for x_hi > x_lo, both finite."""
    return log_expit(x_hi) + log_expit(-x_lo) + np.log(-np.expm1(x_lo - x_hi))


def category_probs(eta, th) -> np.ndarray:
    """Stage probabilities P(Z=k | eta) for k = 1..K.

    Scalar ``eta`` gives a length-K vector, a length-n vector an (n, K)
    matrix.  Rows sum to one by construction (telescoping CDF differences).
    """
    theta = _theta_vector(th)
    eta_arr = np.atleast_1d(np.asarray(eta, dtype=float))
    x = np.clip(theta[None, :] - eta_arr[:, None], -MAX_LATENT, MAX_LATENT)
    K = theta.size + 1
    logp = np.empty((eta_arr.size, K))
    logp[:, 0] = log_expit(x[:, 0])
    logp[:, K - 1] = log_expit(-x[:, K - 2])
    for k in range(1, K - 1):
        logp[:, k] = _log_prob_interval(x[:, k], x[:, k - 1])
    probs = np.exp(logp)
    return probs[0] if np.isscalar(eta) or np.ndim(eta) == 0 else probs


def cumulative_leq(eta, th) -> np.ndarray:
    """P(Z <= k | eta) for k = 1..K; the final column is exactly 1."""
    theta = _theta_vector(th)
    eta_arr = np.atleast_1d(np.asarray(eta, dtype=float))
    x = np.clip(theta[None, :] - eta_arr[:, None], -MAX_LATENT, MAX_LATENT)
    out = np.ones((eta_arr.size, theta.size + 1))
    out[:, :-1] = expit(x)
    return out[0] if np.ndim(eta) == 0 else out


def cumulative_geq(eta, th) -> np.ndarray:
    """P(Z >= k | eta) for k = 1..K; the first column is exactly 1."""
    theta = _theta_vector(th)
    eta_arr = np.atleast_1d(np.asarray(eta, dtype=float))
    x = np.clip(eta_arr[:, None] - theta[None, :], -MAX_LATENT, MAX_LATENT)
    out = np.ones((eta_arr.size, theta.size + 1))
    out[:, 1:] = expit(x)
    return out[0] if np.ndim(eta) == 0 else out


def cumulative_logodds(eta, th) -> np.ndarray:
    """logit P(Z <= k | eta) for the free k = 1..K-1, via stable log-CDFs."""
    theta = _theta_vector(th)
    eta_arr = np.atleast_1d(np.asarray(eta, dtype=float))
    x = theta[None, :] - eta_arr[:, None]
    out = log_expit(x) - log_expit(-x)
    return out[0] if np.ndim(eta) == 0 else out


def _stage_bounds(y, eta, theta):
    """Clamped latent distances (x_lo, x_hi) per observation plus boundary masks."""
    K = theta.size + 1
    y = np.asarray(y, dtype=int)
    if y.min() < 1 or y.max() > K:
        raise ValueError(f"stage values must lie in 1..{K}")
    has_hi = y < K
    has_lo = y > 1
    x_hi = np.zeros(y.size)
    x_lo = np.zeros(y.size)
    x_hi[has_hi] = theta[y[has_hi] - 1] - eta[has_hi]
    x_lo[has_lo] = theta[y[has_lo] - 2] - eta[has_lo]
    np.clip(x_hi, -MAX_LATENT, MAX_LATENT, out=x_hi)
    np.clip(x_lo, -MAX_LATENT, MAX_LATENT, out=x_lo)
    return x_lo, x_hi, has_lo, has_hi


def _log_stage_probs(y, eta, theta):
    x_lo, x_hi, has_lo, has_hi = _stage_bounds(y, eta, theta)
    logp = np.empty(eta.size)
    both = has_lo & has_hi
    logp[both] = _log_prob_interval(x_hi[both], x_lo[both])
    logp[~has_lo] = log_expit(x_hi[~has_lo])
    logp[~has_hi] = log_expit(-x_lo[~has_hi])
    return logp, (x_lo, x_hi, has_lo, has_hi)


def loglik(y, eta, th) -> float:
    """Sum of per-observation log stage probabilities.

    Finite for any finite inputs: latent distances are clamped at +-700 and
    log-probabilities floored at log(1e-290).
    """
    theta = _theta_vector(th)
    eta = np.asarray(eta, dtype=float)
    y = np.asarray(y, dtype=int)
    if y.shape != eta.shape:
        raise ValueError("y and eta must have matching lengths")
    logp, _ = _log_stage_probs(y, eta, theta)
    return float(np.sum(np.maximum(logp, LOG_PROB_FLOOR)))


@dataclass(frozen=True)
class OcatDerivs:
    """Analytic derivatives of the log-likelihood.

    Per-observation pieces for the linear predictor (``d_eta``, ``d2_eta``,
    and the eta-by-raw cross block), aggregated pieces for the raw threshold
    parameters (``d_raw``, ``d2_raw``).
    """

    loglik: float
    d_eta: np.ndarray          # (n,)
    d2_eta: np.ndarray         # (n,)
    d_raw: np.ndarray          # (K-2,)
    d2_raw: np.ndarray         # (K-2, K-2)
    cross: np.ndarray          # (n, K-2): d2 l_i / d eta_i d a_j


def loglik_derivs(y, eta, th: Thresholds) -> OcatDerivs:
    """First and second derivatives of :func:`loglik` in eta and raw a.

    Works through the threshold scale first (each observation touches at most
    its two bracketing cut points), then chains through the jacobian of the
    cumulative-exponential threshold transform.
    """
    if not isinstance(th, Thresholds):
        raise TypeError("loglik_derivs needs the raw-parameterised Thresholds")
    theta = th.theta
    K = theta.size + 1
    eta = np.asarray(eta, dtype=float)
    y = np.asarray(y, dtype=int)
    if y.shape != eta.shape:
        raise ValueError("y and eta must have matching lengths")
    n = eta.size

    logp, (x_lo, x_hi, has_lo, has_hi) = _log_stage_probs(y, eta, theta)
    ll = float(np.sum(np.maximum(logp, LOG_PROB_FLOOR)))

    def log_pdf(x):
        return log_expit(x) + log_expit(-x)

    # A = f(x_hi)/p and B = f(x_lo)/p, the two density-over-probability
    # ratios everything below is built from; zero at the boundary stages.
    A = np.zeros(n)
    B = np.zeros(n)
    A[has_hi] = np.exp(log_pdf(x_hi[has_hi]) - logp[has_hi])
    B[has_lo] = np.exp(log_pdf(x_lo[has_lo]) - logp[has_lo])
    Fu = np.where(has_hi, expit(x_hi), 1.0)
    Fv = np.where(has_lo, expit(x_lo), 0.0)

    d_eta = B - A
    d2_eta = A * (1.0 - 2.0 * Fu) - B * (1.0 - 2.0 * Fv) - d_eta**2

    n_free = K - 2
    if n_free == 0:
        return OcatDerivs(ll, d_eta, d2_eta,
                          np.zeros(0), np.zeros((0, 0)), np.zeros((n, 0)))

    # Per-observation derivatives on the theta scale; column m is t_{m+1}.
    hi_idx = y - 1          # theta column of the upper cut (valid where has_hi)
    lo_idx = y - 2          # theta column of the lower cut (valid where has_lo)
    d_theta_obs = np.zeros((n, K - 1))
    cross_theta = np.zeros((n, K - 1))
    rows = np.arange(n)
    d_theta_obs[rows[has_hi], hi_idx[has_hi]] += A[has_hi]
    d_theta_obs[rows[has_lo], lo_idx[has_lo]] += -B[has_lo]
    cross_theta[rows[has_hi], hi_idx[has_hi]] += -A[has_hi] * (1.0 - 2.0 * Fu[has_hi]) \
        - d_eta[has_hi] * A[has_hi]
    cross_theta[rows[has_lo], lo_idx[has_lo]] += B[has_lo] * (1.0 - 2.0 * Fv[has_lo]) \
        + d_eta[has_lo] * B[has_lo]

    d_theta = d_theta_obs.sum(axis=0)
    H_theta = np.zeros((K - 1, K - 1))
    hi_curv = A * (1.0 - 2.0 * Fu) - A**2
    lo_curv = -B * (1.0 - 2.0 * Fv) - B**2
    np.add.at(H_theta, (hi_idx[has_hi], hi_idx[has_hi]), hi_curv[has_hi])
    np.add.at(H_theta, (lo_idx[has_lo], lo_idx[has_lo]), lo_curv[has_lo])
    both = has_lo & has_hi
    ab = A[both] * B[both]
    np.add.at(H_theta, (hi_idx[both], lo_idx[both]), ab)
    np.add.at(H_theta, (lo_idx[both], hi_idx[both]), ab)

    # Chain through t_m(a): J[j, m] = exp(a_j) for m >= j+1, and the
    # curvature of the transform itself collapses to diag(d_raw).
    steps = np.exp(np.clip(th.raw, -MAX_LATENT, MAX_LATENT))
    J = np.zeros((n_free, K - 1))
    for j in range(n_free):
        J[j, j + 1:] = steps[j]
    d_raw = J @ d_theta
    d2_raw = J @ H_theta @ J.T + np.diag(d_raw)
    cross = cross_theta @ J.T
    return OcatDerivs(ll, d_eta, d2_eta, d_raw, d2_raw, cross)
