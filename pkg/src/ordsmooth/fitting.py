"""Penalized likelihood maximisation and smoothing-parameter selection.

The inner problem maximises l_p(beta, a) = l(beta, a) - 0.5 * sum_j
lambda_j beta' S_j beta jointly over coefficients and raw thresholds by full
Newton with step halving.  Smoothing parameters maximise the Laplace
approximate marginal likelihood

    laml = l_p + 0.5 log|S_lambda|_+ - 0.5 log|H + S_lambda| + (M_p/2) log 2 pi

over rho = log lambda, using a quasi-Newton search with central
finite-difference gradients (exact laml derivatives are deliberately out of
scope; correctness is carried by oracle tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.special import logit

from .basis import ColumnGroup, ModelMatrices
from .data import Dataset
from .errors import FitError
from .formula import ModelSpec, parse_formula
from .ocat import Thresholds, loglik_derivs

GRAD_TOL = 1e-8
MAX_NEWTON_ITER = 200
MAX_HALVINGS = 30
RHO_BOUNDS = (-12.0, 12.0)
FD_STEP = 1e-3


@dataclass
class PenalizedFit:
    """Inner-optimum state: estimates, curvature and convergence record.

    ``H`` is the negative Hessian of the *unpenalized* log-likelihood at the
    optimum, over the joint (beta, raw threshold) vector.
    """

    beta: np.ndarray
    raw_theta: np.ndarray
    K: int
    H: np.ndarray
    penalized_ll: float
    loglik: float
    converged: bool
    iterations: int
    grad_norm: float
    ridged: bool = False
    lp_path: list = field(default_factory=list)

    @property
    def thresholds(self) -> Thresholds:
        return Thresholds(K=self.K, raw=self.raw_theta)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.beta, self.raw_theta])


def penalty_matrix(m: ModelMatrices, lambdas) -> np.ndarray:
    """S_lambda over the coefficient space (thresholds are unpenalized)."""
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size != len(m.penalties):
        raise FitError(f"need {len(m.penalties)} smoothing parameters, got {lambdas.size}")
    if lambdas.size and lambdas.min() <= 0:
        raise FitError("smoothing parameters must be positive")
    S = np.zeros((m.total_p, m.total_p))
    for lam, entry in zip(lambdas, m.penalties):
        sl = slice(entry.offset, entry.offset + entry.ncol)
        S[sl, sl] += lam * entry.S
    return S


def _objective(m: ModelMatrices, S_lam: np.ndarray, beta: np.ndarray, raw: np.ndarray):
    """Penalized log-likelihood with its gradient and Hessian (both joint)."""
    th = Thresholds(K=m.K, raw=raw)
    eta = m.X @ beta
    d = loglik_derivs(m.y, eta, th)
    Sb = S_lam @ beta
    lp = d.loglik - 0.5 * float(beta @ Sb)
    grad = np.concatenate([m.X.T @ d.d_eta - Sb, d.d_raw])
    p, r = beta.size, raw.size
    Hp = np.empty((p + r, p + r))
    Hll = (m.X * d.d2_eta[:, None]).T @ m.X
    Hp[:p, :p] = Hll - S_lam
    if r:
        Hba = m.X.T @ d.cross
        Hp[:p, p:] = Hba
        Hp[p:, :p] = Hba.T
        Hp[p:, p:] = d.d2_raw
    return lp, grad, Hp, Hll, d


def _default_init(m: ModelMatrices):
    """Intercept matched to the empirical stage frequencies; smooths at zero."""
    counts = np.bincount(m.y, minlength=m.K + 1)[1:].astype(float) + 0.5
    cum = np.cumsum(counts) / counts.sum()
    cuts = logit(cum[:-1])
    beta = np.zeros(m.total_p)
    beta[0] = -1.0 - cuts[0]
    raw = np.log(np.diff(cuts)) if m.K > 2 else np.zeros(0)
    return beta, raw


def _newton_direction(Hp: np.ndarray, grad: np.ndarray):
    """Solve (-Hp) d = grad, ridging an indefinite Hessian as needed."""
    A = -Hp
    ridge = 0.0
    bump = 1e-6 * max(np.abs(np.diag(A)).max(), 1.0)
    for _ in range(30):
        try:
            cf = scipy.linalg.cho_factor(A + ridge * np.eye(A.shape[0]), lower=True)
            return scipy.linalg.cho_solve(cf, grad), ridge > 0.0
        except np.linalg.LinAlgError:
            ridge = bump if ridge == 0.0 else ridge * 10.0
    raise FitError("could not stabilise the Newton system", grad_norm=float(np.abs(grad).max()))


def inner_newton(m: ModelMatrices, lambdas, init=None) -> PenalizedFit:
    """Maximise the penalized log-likelihood for fixed smoothing parameters.

    Full Newton over (beta, raw thresholds) with up to 30 step halvings per
    iteration; an iteration that cannot improve escalates a Hessian ridge.
    Convergence: gradient inf-norm < 1e-8 * (1 + |l_p|).
    """
    S_lam = penalty_matrix(m, lambdas)
    if init is None:
        beta, raw = _default_init(m)
    else:
        beta = np.asarray(init[0], dtype=float).copy()
        raw = np.asarray(init[1], dtype=float).copy()
    ridged = False
    lp, grad, Hp, Hll, d = _objective(m, S_lam, beta, raw)
    lp_path = [lp]
    p = beta.size

    for it in range(MAX_NEWTON_ITER):
        gnorm = float(np.abs(grad).max()) if grad.size else 0.0
        if gnorm < GRAD_TOL * (1.0 + abs(lp)):
            H = np.empty_like(Hp)
            H[:p, :p] = -Hll
            if raw.size:
                H[:p, p:] = -Hp[:p, p:]
                H[p:, :p] = -Hp[p:, :p]
                H[p:, p:] = -Hp[p:, p:]
            return PenalizedFit(
                beta=beta, raw_theta=raw, K=m.K, H=H,
                penalized_ll=lp, loglik=d.loglik, converged=True,
                iterations=it, grad_norm=gnorm, ridged=ridged, lp_path=lp_path,
            )
        step, used_ridge = _newton_direction(Hp, grad)
        ridged = ridged or used_ridge
        improved = False
        extra_ridge = 0.0
        for _attempt in range(8):
            scale = 1.0
            for _ in range(MAX_HALVINGS + 1):
                cand_beta = beta + scale * step[:p]
                cand_raw = raw + scale * step[p:]
                cand = _objective(m, S_lam, cand_beta, cand_raw)
                if np.isfinite(cand[0]) and cand[0] > lp:
                    beta, raw = cand_beta, cand_raw
                    lp, grad, Hp, Hll, d = cand
                    lp_path.append(lp)
                    improved = True
                    break
                scale *= 0.5
            if improved:
                break
            # Step halving exhausted: bend the direction towards the
            # gradient with an escalating ridge and try again.
            ridged = True
            bump = 1e-6 * max(np.abs(np.diag(-Hp)).max(), 1.0)
            extra_ridge = bump if extra_ridge == 0.0 else extra_ridge * 10.0
            A = -Hp + extra_ridge * np.eye(Hp.shape[0])
            try:
                cf = scipy.linalg.cho_factor(A, lower=True)
                step = scipy.linalg.cho_solve(cf, grad)
            except np.linalg.LinAlgError:
                continue
        if not improved:
            raise FitError(
                "penalized Newton could not improve the objective",
                last_iterate=(beta, raw), grad_norm=float(np.abs(grad).max()),
            )
    raise FitError(
        f"no convergence in {MAX_NEWTON_ITER} Newton iterations",
        last_iterate=(beta, raw), grad_norm=float(np.abs(grad).max()),
    )


def _grouped_penalties(m: ModelMatrices):
    """Penalty entries grouped by design block (they share columns)."""
    groups: dict[tuple, list] = {}
    for j, entry in enumerate(m.penalties):
        groups.setdefault((entry.label, entry.offset), []).append(j)
    return groups


def log_det_penalty(m: ModelMatrices, lambdas) -> float:
    """log |S_lambda|_+ : generalized log-determinant over the penalty range.

    Computed block by block; the positive-eigenvalue count of each block is
    its structural rank (rank of the unit-lambda sum), which keeps the value
    continuous in lambda even with overlapping penalties.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    total = 0.0
    for (_, _), idxs in _grouped_penalties(m).items():
        S_unit = sum(m.penalties[j].S for j in idxs)
        rank = _structural_rank(S_unit)
        if rank == 0:
            continue
        S_block = sum(lambdas[j] * m.penalties[j].S for j in idxs)
        w = np.linalg.eigvalsh((S_block + S_block.T) / 2.0)
        w = np.sort(w)[::-1][:rank]
        if np.any(w <= 0):
            raise FitError("penalty block lost rank; smoothing parameters too extreme")
        total += float(np.sum(np.log(w)))
    return total


def _structural_rank(S: np.ndarray) -> int:
    w = np.linalg.eigvalsh((S + S.T) / 2.0)
    if w.size == 0:
        return 0
    return int(np.sum(w > 1e-10 * max(w.max(), 0.0) + 1e-300))


def unpenalized_dim(m: ModelMatrices) -> int:
    """M_p: coefficients the combined penalty ignores, plus raw thresholds."""
    rank = sum(_structural_rank(sum(m.penalties[j].S for j in idxs))
               for idxs in _grouped_penalties(m).values())
    return (m.total_p - rank) + (m.K - 2)


def laml(pf: PenalizedFit, m: ModelMatrices, lambdas) -> float:
    """Laplace approximate marginal likelihood at an inner optimum."""
    if not pf.converged:
        raise FitError("laml needs a converged inner fit")
    S_lam = penalty_matrix(m, np.asarray(lambdas, dtype=float))
    A = pf.H.copy()
    p = m.total_p
    A[:p, :p] += S_lam
    try:
        cf = scipy.linalg.cho_factor((A + A.T) / 2.0, lower=True)
    except np.linalg.LinAlgError:
        raise FitError("H + S_lambda is not positive definite") from None
    log_det_A = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    return (pf.penalized_ll + 0.5 * log_det_penalty(m, lambdas)
            - 0.5 * log_det_A + 0.5 * unpenalized_dim(m) * math.log(2.0 * math.pi))


@dataclass
class FitResult:
    """Fitted model: estimates, posterior covariance and fit summaries."""

    mm: ModelMatrices
    pf: PenalizedFit
    lambdas: np.ndarray
    Vb: np.ndarray                 # joint (beta, raw) posterior covariance
    edf_by_term: dict
    edf_total: float
    aic: float
    deviance_explained: float
    laml: float
    null_loglik: float
    pinned: list

    @property
    def spec(self) -> ModelSpec:
        return self.mm.spec

    @property
    def beta(self) -> np.ndarray:
        return self.pf.beta

    @property
    def thresholds(self) -> Thresholds:
        return self.pf.thresholds

    @property
    def K(self) -> int:
        return self.mm.K

    @property
    def n(self) -> int:
        return self.mm.n

    @property
    def Vb_beta(self) -> np.ndarray:
        p = self.mm.total_p
        return self.Vb[:p, :p]


def edf(pf: PenalizedFit, m: ModelMatrices, lambdas):
    """Effective degrees of freedom tau = tr[(H + S_lambda)^-1 H].

    Returns (per-term dict, total); raw thresholds appear as their own entry.
    """
    S_lam = penalty_matrix(m, lambdas)
    p = m.total_p
    A = pf.H.copy()
    A[:p, :p] += S_lam
    Vb = _chol_inverse(A)
    contrib = np.einsum("ij,ji->i", Vb, pf.H)
    by_term = {}
    for g in m.groups:
        by_term[g.label] = float(contrib[g.start:g.stop].sum())
    if m.K > 2:
        by_term["thresholds"] = float(contrib[p:].sum())
    return by_term, float(contrib.sum()), Vb


def _chol_inverse(A: np.ndarray) -> np.ndarray:
    try:
        cf = scipy.linalg.cho_factor((A + A.T) / 2.0, lower=True)
    except np.linalg.LinAlgError:
        raise FitError("H + S_lambda is not positive definite") from None
    inv = scipy.linalg.cho_solve(cf, np.eye(A.shape[0]))
    return (inv + inv.T) / 2.0


def _null_matrices(m: ModelMatrices) -> ModelMatrices:
    return ModelMatrices(
        X=np.ones((m.n, 1)), y=m.y, K=m.K,
        groups=[ColumnGroup("(intercept)", 0, 1)], penalties=[],
        spec=ModelSpec(response=m.spec.response, terms=(), K=m.K),
        stage_labels=m.stage_labels, factor_levels=m.factor_levels,
    )


def optimize_lambdas(m: ModelMatrices, rho0=None, rho_bounds=RHO_BOUNDS,
                     fd_step=FD_STEP) -> FitResult:
    """Select smoothing parameters by maximising laml over rho = log lambda.

    Inner fits are warm-started from the previous optimum; rho is bounded and
    boundary-pinned components are flagged on the result rather than fatal.
    """
    L = len(m.penalties)
    state = {"init": None}
    cache: dict[tuple, tuple] = {}

    def evaluate(rho: np.ndarray):
        key = tuple(np.round(rho, 12))
        if key not in cache:
            pf = inner_newton(m, np.exp(rho), init=state["init"])
            state["init"] = (pf.beta, pf.raw_theta)
            cache[key] = (pf, laml(pf, m, np.exp(rho)))
        return cache[key]

    if L == 0:
        pf = inner_newton(m, np.zeros(0))
        return _finalize(m, pf, np.zeros(0), laml(pf, m, np.zeros(0)), [])

    rho0 = np.zeros(L) if rho0 is None else np.asarray(rho0, dtype=float)

    def fun(rho):
        return -evaluate(rho)[1]

    def jac(rho):
        g = np.zeros(L)
        for j in range(L):
            hi = rho.copy(); hi[j] += fd_step
            lo = rho.copy(); lo[j] -= fd_step
            g[j] = -(evaluate(hi)[1] - evaluate(lo)[1]) / (2.0 * fd_step)
        return g

    res = scipy.optimize.minimize(
        fun, rho0, jac=jac, method="L-BFGS-B",
        bounds=[rho_bounds] * L,
        options={"maxiter": 200, "ftol": 1e-12, "gtol": 1e-5},
    )
    rho = np.clip(res.x, *rho_bounds)
    pf, value = evaluate(rho)
    pinned = [bool(abs(r - rho_bounds[0]) < 1e-6 or abs(r - rho_bounds[1]) < 1e-6)
              for r in rho]
    return _finalize(m, pf, np.exp(rho), value, pinned)


def _finalize(m: ModelMatrices, pf: PenalizedFit, lambdas, laml_value, pinned) -> FitResult:
    by_term, total, Vb = edf(pf, m, lambdas)
    null_pf = pf if m.total_p == 1 and not m.penalties else inner_newton(_null_matrices(m), np.zeros(0))
    dev_expl = 1.0 - pf.loglik / null_pf.loglik
    return FitResult(
        mm=m, pf=pf, lambdas=np.asarray(lambdas, dtype=float), Vb=Vb,
        edf_by_term=by_term, edf_total=total,
        aic=-2.0 * pf.loglik + 2.0 * total,
        deviance_explained=dev_expl, laml=laml_value,
        null_loglik=null_pf.loglik, pinned=list(pinned),
    )


def aic(fr: FitResult) -> float:
    return fr.aic


def deviance_explained(fr: FitResult) -> float:
    return fr.deviance_explained


def fit_model(d: Dataset, formula: str | ModelSpec, **opt_kwargs) -> FitResult:
    """Parse, assemble and fit in one call; the usual entry point."""
    from .basis import assemble_design

    spec = parse_formula(formula) if isinstance(formula, str) else formula
    mm = assemble_design(d, spec)
    return optimize_lambdas(mm, **opt_kwargs)


def summarize(fr: FitResult) -> dict:
    """Structured fit report (JSON-ready); see format_summary for text."""
    lam_by_term: dict[str, list] = {}
    for lam, entry in zip(fr.lambdas, fr.mm.penalties):
        lam_by_term.setdefault(entry.label, []).append(float(lam))
    terms = []
    for g in fr.mm.groups:
        terms.append({
            "term": g.label,
            "edf": fr.edf_by_term.get(g.label, float(g.stop - g.start)),
            "lambdas": lam_by_term.get(g.label, []),
        })
    if fr.K > 2:
        terms.append({"term": "thresholds", "edf": fr.edf_by_term.get("thresholds", 0.0),
                      "lambdas": []})
    return {
        "formula": str(fr.spec),
        "n": int(fr.n),
        "K": int(fr.K),
        "stage_labels": list(fr.mm.stage_labels),
        "terms": terms,
        "theta": [float(t) for t in fr.thresholds.theta],
        "edf_total": float(fr.edf_total),
        "aic": float(fr.aic),
        "deviance_explained": float(fr.deviance_explained),
        "laml": float(fr.laml),
        "loglik": float(fr.pf.loglik),
        "null_loglik": float(fr.null_loglik),
        "converged": bool(fr.pf.converged),
        "iterations": int(fr.pf.iterations),
        "lambda_pinned": list(fr.pinned),
    }


def format_summary(summary: dict) -> str:
    """Aligned plain-text rendering of a summarize() report."""
    lines = [
        f"Formula: {summary['formula']}",
        f"n = {summary['n']}, K = {summary['K']} "
        f"(stages: {', '.join(summary['stage_labels'])})",
        "",
        f"{'term':<24}{'edf':>10}  lambdas",
    ]
    for t in summary["terms"]:
        lams = ", ".join(f"{v:.4g}" for v in t["lambdas"]) if t["lambdas"] else "-"
        lines.append(f"{t['term']:<24}{t['edf']:>10.3f}  {lams}")
    theta = ", ".join(f"{v:.4f}" for v in summary["theta"])
    lines += [
        "",
        f"thresholds (theta): {theta}",
        f"total edf: {summary['edf_total']:.3f}",
        f"AIC: {summary['aic']:.2f}",
        f"deviance explained: {100 * summary['deviance_explained']:.2f}%",
        f"laml: {summary['laml']:.4f}",
        f"converged: {summary['converged']} ({summary['iterations']} iterations)",
    ]
    return "\n".join(lines)
