"""Prediction, uncertainty bands, posterior simulation and derived days.

Stage-transition timing works by sampling coefficient vectors from the
approximate posterior N((beta_hat, a_hat), Vb), evaluating each draw's
linear predictor on a day grid and recording every day it crosses a stage
threshold (up- and down-crossings both count, which is what captures
multiple flowering episodes as multimodal transition densities).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .basis import prediction_matrix
from .data import Dataset
from .errors import PredictionError
from .fitting import FitResult
from .ocat import Thresholds, category_probs, cumulative_geq, cumulative_leq


def _as_columns(fr: FitResult, newdata):
    if isinstance(newdata, Dataset):
        return newdata
    return dict(newdata)


def default_smooth_var(fr: FitResult) -> str:
    """The single smoothed covariate, when the model has exactly one."""
    names = {t.var for t in fr.spec.terms if hasattr(t, "var")}
    if len(names) != 1:
        raise PredictionError(
            f"model smooths {sorted(names)!r}; specify the grid variable explicitly"
        )
    return names.pop()


def grid_columns(fr: FitResult, var: str, values, at=None) -> dict:
    """Column map holding ``var`` at ``values`` and everything else fixed."""
    at = dict(at or {})
    values = np.asarray(values, dtype=float)
    cols: dict = {var: values}
    for name in fr.spec.variables:
        if name == var or name in cols:
            continue
        if name not in at:
            raise PredictionError(
                f"model needs a value for {name!r}; pass it via 'at'"
            )
        v = at[name]
        if name in fr.mm.factor_levels:
            cols[name] = np.asarray([str(v)] * values.size, dtype=object)
        else:
            cols[name] = np.full(values.size, float(v))
    return cols


@dataclass(frozen=True)
class LinearPrediction:
    eta: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


def predict_linear(fr: FitResult, newdata, level: float = 0.95,
                   band: str = "covariance", draws: int = 2000,
                   seed: int | None = None) -> LinearPrediction:
    """Linear predictor with pointwise standard errors and a band.

    ``band="covariance"`` uses the posterior covariance of the penalized fit
    (eta +- z * se); ``band="simulation"`` takes pointwise quantiles over
    posterior draws instead (requires a seed).
    """
    X = prediction_matrix(fr.mm, _as_columns(fr, newdata))
    eta = X @ fr.beta
    se = np.sqrt(np.einsum("ij,jk,ik->i", X, fr.Vb_beta, X))
    if band == "covariance":
        z = norm.ppf(0.5 + level / 2.0)
        lower, upper = eta - z * se, eta + z * se
    elif band == "simulation":
        if seed is None:
            raise PredictionError("simulation bands need a seed")
        pd = posterior_draws(fr, draws, seed)
        etas = pd.samples[:, : fr.mm.total_p] @ X.T
        alpha = (1.0 - level) / 2.0
        lower = np.quantile(etas, alpha, axis=0)
        upper = np.quantile(etas, 1.0 - alpha, axis=0)
    else:
        raise PredictionError(f"unknown band type {band!r}")
    return LinearPrediction(eta=eta, se=se, lower=lower, upper=upper, level=level)


@dataclass(frozen=True)
class CategoryPrediction:
    probs: np.ndarray   # n x K
    se: np.ndarray      # n x K, delta method with thresholds held fixed


def predict_category(fr: FitResult, newdata) -> CategoryPrediction:
    """Per-stage probabilities with delta-method standard errors."""
    lp = predict_linear(fr, newdata)
    th = fr.thresholds
    probs = np.atleast_2d(category_probs(lp.eta, th))
    dpdeta = _category_prob_gradient(lp.eta, th)
    return CategoryPrediction(probs=probs, se=np.abs(dpdeta) * lp.se[:, None])


def _logistic_pdf(x):
    p = expit(x)
    return p * (1.0 - p)


def _category_prob_gradient(eta, th: Thresholds) -> np.ndarray:
    """d P(Z=k | eta) / d eta, rows over eta values."""
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    theta = th.theta
    K = theta.size + 1
    dens = _logistic_pdf(theta[None, :] - eta[:, None])      # n x (K-1)
    out = np.empty((eta.size, K))
    out[:, 0] = -dens[:, 0]
    out[:, K - 1] = dens[:, K - 2]
    for k in range(1, K - 1):
        out[:, k] = dens[:, k - 1] - dens[:, k]
    return out


def predict_cumulative(fr: FitResult, newdata, direction: str = "leq") -> np.ndarray:
    """P(Z <= k) or P(Z >= k) row matrices at new covariate values."""
    lp = predict_linear(fr, newdata)
    if direction == "leq":
        return np.atleast_2d(cumulative_leq(lp.eta, fr.thresholds))
    if direction == "geq":
        return np.atleast_2d(cumulative_geq(lp.eta, fr.thresholds))
    raise PredictionError(f"direction must be 'leq' or 'geq', got {direction!r}")


@dataclass(frozen=True)
class PosteriorDraws:
    """Joint (beta, raw threshold) samples from the Gaussian posterior."""

    samples: np.ndarray      # n_draws x (p + K-2)
    mean: np.ndarray
    seed: int
    n_beta: int

    @property
    def n_draws(self) -> int:
        return self.samples.shape[0]

    def betas(self) -> np.ndarray:
        return self.samples[:, : self.n_beta]

    def raws(self) -> np.ndarray:
        return self.samples[:, self.n_beta:]


def posterior_draws(fr: FitResult, n_draws: int, seed: int) -> PosteriorDraws:
    """Sample N(mean, Vb) by Cholesky; identical output for identical seed."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    mean = fr.pf.params
    L = np.linalg.cholesky(fr.Vb)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_draws, mean.size))
    return PosteriorDraws(samples=mean + z @ L.T, mean=mean,
                          seed=int(seed), n_beta=fr.mm.total_p)


def find_crossings(grid, values, threshold: float) -> np.ndarray:
    """Every day a piecewise-linear curve meets ``threshold``.

    Exact grid hits are recorded once; strict sign changes are located by
    linear interpolation between the bracketing grid points.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if grid.size < 2:
        raise ValueError("grid needs at least 2 points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    d = values - threshold
    out = list(grid[d == 0.0])
    s = d[:-1] * d[1:]
    for i in np.nonzero(s < 0.0)[0]:
        frac = d[i] / (d[i] - d[i + 1])
        out.append(grid[i] + frac * (grid[i + 1] - grid[i]))
    return np.sort(np.asarray(out))


@dataclass(frozen=True)
class TransitionSamples:
    """Crossing-day samples per threshold (1-based threshold index)."""

    days: dict
    grid: np.ndarray
    var: str
    n_draws: int
    sampled_thresholds: bool


def crossing_days(fr: FitResult, draws: PosteriorDraws, grid, var: str | None = None,
                  at=None, sample_thresholds: bool = True) -> TransitionSamples:
    """Days where each posterior draw's linear predictor crosses each threshold.

    With ``sample_thresholds=False`` the point-estimate cut points are used
    for every draw, attributing all uncertainty to the covariate effects.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        raise ValueError("grid needs at least 2 points")
    if var is None:
        var = default_smooth_var(fr)
    X = prediction_matrix(fr.mm, grid_columns(fr, var, grid, at=at))
    etas = draws.betas() @ X.T                       # n_draws x n_grid
    theta_hat = fr.thresholds.theta
    days: dict[int, list] = {k: [] for k in range(1, fr.K)}
    raws = draws.raws()
    for d in range(draws.n_draws):
        if sample_thresholds and raws.shape[1] and fr.K > 2:
            theta = Thresholds(K=fr.K, raw=raws[d]).theta
        else:
            theta = theta_hat
        for k in range(1, fr.K):
            hits = find_crossings(grid, etas[d], theta[k - 1])
            if hits.size:
                days[k].append(hits)
    return TransitionSamples(
        days={k: (np.sort(np.concatenate(v)) if v else np.empty(0)) for k, v in days.items()},
        grid=grid, var=var, n_draws=draws.n_draws,
        sampled_thresholds=bool(sample_thresholds),
    )


def silverman_bandwidth(samples: np.ndarray) -> float:
    """0.9 min(sd, IQR/1.34) n^(-1/5), guarded for degenerate samples."""
    n = samples.size
    sd = float(np.std(samples, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(samples, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if (q75 > q25 and sd > 0) else max(sd, q75 - q25)
    if spread <= 0:
        spread = max(abs(float(samples[0])), 1.0) * 1e-6
    return 0.9 * spread * n ** (-0.2)


@dataclass(frozen=True)
class TransitionDensity:
    threshold: int
    days: np.ndarray
    density: np.ndarray
    bandwidth: float
    n_samples: int
    mean: float
    sd: float
    percentiles: dict


def transition_density(ts: TransitionSamples, bandwidth: float | None = None,
                       n_points: int = 512) -> list[TransitionDensity]:
    """Gaussian-kernel density of crossing days per threshold, plus sample
    mean, sd and 2.5/50/97.5 percentiles."""
    out = []
    for k, samples in sorted(ts.days.items()):
        if samples.size == 0:
            continue
        h = bandwidth if bandwidth is not None else silverman_bandwidth(samples)
        lo = samples.min() - 3.0 * h
        hi = samples.max() + 3.0 * h
        x = np.linspace(lo, hi, n_points)
        z = (x[:, None] - samples[None, :]) / h
        dens = np.exp(-0.5 * z**2).sum(axis=1) / (samples.size * h * np.sqrt(2.0 * np.pi))
        p = np.percentile(samples, [2.5, 50.0, 97.5])
        out.append(TransitionDensity(
            threshold=int(k), days=x, density=dens, bandwidth=float(h),
            n_samples=int(samples.size), mean=float(samples.mean()),
            sd=float(np.std(samples, ddof=1)) if samples.size > 1 else 0.0,
            percentiles={"2.5": float(p[0]), "50": float(p[1]), "97.5": float(p[2])},
        ))
    return out


@dataclass(frozen=True)
class QuantileDay:
    day: float
    achieved: float
    stage: int
    p: float


def quantile_day(fr: FitResult, k: int, p: float, grid, var: str | None = None,
                 at=None) -> QuantileDay:
    """Grid day where P(Z >= k) is closest to p (earliest on ties)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if not 1 <= k <= fr.K:
        raise ValueError(f"stage must lie in 1..{fr.K}, got {k}")
    grid = np.asarray(grid, dtype=float)
    if var is None:
        var = default_smooth_var(fr)
    probs = predict_cumulative(fr, grid_columns(fr, var, grid, at=at), "geq")[:, k - 1]
    i = int(np.argmin(np.abs(probs - p)))
    return QuantileDay(day=float(grid[i]), achieved=float(probs[i]), stage=int(k), p=float(p))


def rate_of_change(fr: FitResult, k: int, grid, var: str | None = None, at=None,
                   cumulative: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """d/d(day) of P(Z=k) (or P(Z<=k)) by central differences on the grid."""
    if not 1 <= k <= fr.K:
        raise ValueError(f"stage must lie in 1..{fr.K}, got {k}")
    grid = np.asarray(grid, dtype=float)
    if var is None:
        var = default_smooth_var(fr)
    cols = grid_columns(fr, var, grid, at=at)
    if cumulative:
        probs = predict_cumulative(fr, cols, "leq")[:, k - 1]
    else:
        probs = predict_category(fr, cols).probs[:, k - 1]
    deriv = np.gradient(probs, grid)
    return grid, deriv


def empirical_cumulative(d: Dataset, var: str) -> dict:
    """Observed P(Z <= k) per unique covariate value; the data overlay for
    cumulative-fit plots."""
    if var not in d.covariates:
        raise PredictionError(f"{var!r} is not a covariate of the dataset")
    x = d.covariates[var]
    xs = np.unique(x)
    K = d.K
    rows = np.zeros((xs.size, K))
    for i, v in enumerate(xs):
        sub = d.stage[x == v]
        for k in range(1, K + 1):
            rows[i, k - 1] = np.mean(sub <= k)
    return {"x": xs, "cumulative": rows}
