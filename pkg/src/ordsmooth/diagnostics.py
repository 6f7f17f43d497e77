"""Surrogate residuals for checking the latent-scale model.

For an observation in stage k with fitted linear predictor eta, a surrogate
latent value S is drawn from the logistic(eta, 1) distribution truncated to
the stage interval (t_{k-1}, t_k], and the residual is r = S - eta.  Under a
correctly specified model the residuals are marginally standard logistic,
which gives QQ and trend plots a clean reference.  Sampling is by inverse
CDF, so a fixed seed reproduces the residuals exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .basis import prediction_matrix
from .data import Dataset
from .errors import PredictionError
from .fitting import FitResult
from .ocat import Thresholds


@dataclass(frozen=True)
class SurrogateResiduals:
    r: np.ndarray               # replicates x n
    seed: int
    stage: np.ndarray
    eta: np.ndarray
    theta: np.ndarray
    covariates: dict

    @property
    def n(self) -> int:
        return self.r.shape[1]

    @property
    def replicates(self) -> int:
        return self.r.shape[0]

    def pooled(self) -> np.ndarray:
        return self.r.reshape(-1)

    def surrogate(self) -> np.ndarray:
        """Latent values S = r + eta; each lies inside its stage interval."""
        return self.r + self.eta[None, :]


def surrogate_sample(stage, eta, th, seed: int, replicates: int = 1) -> np.ndarray:
    """Truncated-logistic surrogate residuals at given parameters.

    Vectorised inverse-CDF sampling; the reconstructed latent value is
    nudged back into (t_{k-1}, t_k] where rounding would land on a boundary.
    """
    theta = th.theta if isinstance(th, Thresholds) else np.asarray(th, dtype=float)
    stage = np.asarray(stage, dtype=int)
    eta = np.asarray(eta, dtype=float)
    K = theta.size + 1
    if stage.min() < 1 or stage.max() > K:
        raise ValueError(f"stage values must lie in 1..{K}")
    lo_cut = np.where(stage > 1, theta[np.maximum(stage - 2, 0)], -np.inf)
    hi_cut = np.where(stage < K, theta[np.minimum(stage - 1, K - 2)], np.inf)
    u_lo = np.where(stage > 1, expit(lo_cut - eta), 0.0)
    u_hi = np.where(stage < K, expit(hi_cut - eta), 1.0)

    rng = np.random.default_rng(seed)
    U = rng.uniform(size=(replicates, stage.size))
    u = u_lo + U * (u_hi - u_lo)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    r = np.log(u) - np.log1p(-u)

    s = r + eta[None, :]
    open_lo = np.nextafter(lo_cut, np.inf)
    s = np.clip(s, open_lo[None, :], hi_cut[None, :])
    return s - eta[None, :]


def surrogate_residuals(fr: FitResult, d: Dataset, seed: int,
                        replicates: int = 1) -> SurrogateResiduals:
    """Surrogate residuals of a fitted model on compatible data."""
    if d.K != fr.K:
        raise PredictionError(f"data has K={d.K} stages but model has K={fr.K}")
    eta = prediction_matrix(fr.mm, d) @ fr.beta
    r = surrogate_sample(d.stage, eta, fr.thresholds, seed=seed, replicates=replicates)
    return SurrogateResiduals(
        r=r, seed=int(seed), stage=d.stage.copy(), eta=eta,
        theta=fr.thresholds.theta.copy(),
        covariates={k: v.copy() for k, v in d.covariates.items()},
    )


def qq_logistic(sr: SurrogateResiduals) -> tuple[np.ndarray, np.ndarray]:
    """(theoretical logistic quantile, ordered residual) pairs.

    Plotting positions (i - 0.5)/n; both coordinates ascend.
    """
    sample = np.sort(sr.pooled())
    n = sample.size
    pp = (np.arange(1, n + 1) - 0.5) / n
    theoretical = np.log(pp) - np.log1p(-pp)
    return theoretical, sample


def residual_plot_data(sr: SurrogateResiduals, against: str):
    """(x, residual) pairs plus a running-mean trend (window n/20).

    ``against`` is a covariate name or "linear_predictor".
    """
    if against == "linear_predictor":
        x = sr.eta
    elif against in sr.covariates:
        x = sr.covariates[against]
    else:
        raise PredictionError(
            f"unknown residual axis {against!r}; have 'linear_predictor' "
            f"or {sorted(sr.covariates)}"
        )
    x = np.tile(x, sr.replicates)
    r = sr.pooled()
    order = np.argsort(x, kind="stable")
    xs, rs = x[order], r[order]
    window = max(1, xs.size // 20)
    smooth = _running_mean(rs, window)
    return xs, rs, smooth


def _running_mean(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average, shrinking the window at the edges."""
    n = values.size
    csum = np.concatenate([[0.0], np.cumsum(values)])
    half = window // 2
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(lo + window, n)
    lo = np.minimum(lo, hi - 1)
    return (csum[hi] - csum[lo]) / (hi - lo)
