import numpy as np
import pytest
import scipy.optimize
from scipy.stats import logistic

from ordsmooth.basis import assemble_design, prediction_matrix
from ordsmooth.data import Dataset, StageCoding
from ordsmooth.errors import FitError
from ordsmooth.fitting import (FitResult, PenalizedFit, _null_matrices,
                               _objective, edf, fit_model, inner_newton, laml,
                               optimize_lambdas, penalty_matrix, summarize)
from ordsmooth.formula import ModelSpec, parse_formula
from ordsmooth.simulate import EtaSpec, TruthSpec, simulate_dataset


def make_dataset(stage, covariates=None, K=None, factors=None):
    stage = np.asarray(stage, dtype=int)
    K = K or stage.max()
    return Dataset(stage=stage,
                   stage_coding=StageCoding(tuple(f"s{i}" for i in range(1, K + 1))),
                   covariates=covariates or {}, factors=factors or {})


def test_intercept_only_balanced_binary():
    # P(Z=1) = 0.5 forces beta0 to sit on the fixed threshold at -1
    d = make_dataset([1, 2] * 40)
    fr = fit_model(d, ModelSpec(response="stage", terms=()))
    assert abs(fr.beta[0] - (-1.0)) < 1e-8
    assert fr.deviance_explained == 0.0


def test_unpenalized_fit_matches_brute_force():
    rng = np.random.default_rng(101)
    n = 50
    x = rng.uniform(-1, 1, n)
    eta = 0.4 + 1.3 * x
    u = rng.uniform(size=n)
    z = eta + np.log(u) - np.log1p(-u)
    stage = np.searchsorted([-1.0, 0.5], z) + 1
    d = make_dataset(stage, {"x": x}, K=3)
    fr = fit_model(d, "stage ~ x")

    # independent naive likelihood, maximised by simplex + quasi-Newton polish
    X = np.column_stack([np.ones(n), x])

    def negll(params):
        beta, raw = params[:2], params[2:]
        theta = -1.0 + np.concatenate([[0.0], np.cumsum(np.exp(raw))])
        cuts = np.concatenate([[-np.inf], theta, [np.inf]])
        lp = X @ beta
        p = logistic.cdf(cuts[stage] - lp) - logistic.cdf(cuts[stage - 1] - lp)
        return -np.sum(np.log(p))

    start = np.zeros(3)
    res = scipy.optimize.minimize(negll, start, method="Nelder-Mead",
                                  options={"xatol": 1e-10, "fatol": 1e-12,
                                           "maxiter": 20000})
    res = scipy.optimize.minimize(negll, res.x, method="BFGS",
                                  options={"gtol": 1e-10, "maxiter": 1000})
    ours = np.concatenate([fr.beta, fr.pf.raw_theta])
    assert np.abs(ours - res.x).max() < 1e-3
    assert abs(fr.pf.loglik - (-res.fun)) < 1e-4


def test_huge_lambda_matches_linear_fit():
    rng = np.random.default_rng(102)
    n = 400
    x = rng.uniform(0, 1, n)
    eta = -0.5 + 2.0 * x
    u = rng.uniform(size=n)
    z = eta + np.log(u) - np.log1p(-u)
    stage = np.searchsorted([-1.0, 0.0, 1.0], z) + 1
    d = make_dataset(stage, {"x": x}, K=4)

    mm_s = assemble_design(d, parse_formula("stage ~ s(x, k=8)"))
    pf_s = inner_newton(mm_s, [1e10])
    mm_l = assemble_design(d, parse_formula("stage ~ x"))
    pf_l = inner_newton(mm_l, [])
    eta_s = mm_s.X @ pf_s.beta
    eta_l = mm_l.X @ pf_l.beta
    assert np.abs(eta_s - eta_l).max() < 1e-4


def test_laml_equals_gaussian_integral():
    # a converged quadratic objective: laml must equal log int exp(l) dx
    from ordsmooth.basis import ColumnGroup, ModelMatrices

    rng = np.random.default_rng(103)
    for p in (1, 2, 3):
        A = rng.normal(size=(p, p))
        Q = A @ A.T + p * np.eye(p)
        lstar = -1.234
        mm = ModelMatrices(
            X=np.zeros((4, p)), y=np.array([1, 1, 2, 2]), K=2,
            groups=[ColumnGroup("(intercept)", 0, p)], penalties=[],
            spec=ModelSpec(response="y", terms=()),
        )
        pf = PenalizedFit(beta=np.zeros(p), raw_theta=np.zeros(0), K=2, H=Q,
                          penalized_ll=lstar, loglik=lstar, converged=True,
                          iterations=0, grad_norm=0.0)
        value = laml(pf, mm, np.zeros(0))
        closed = lstar + 0.5 * p * np.log(2 * np.pi) - 0.5 * np.linalg.slogdet(Q)[1]
        assert np.isclose(value, closed, rtol=1e-12)
        if p == 1:
            from scipy.integrate import quad
            num, _ = quad(lambda t: np.exp(lstar - 0.5 * Q[0, 0] * t * t), -40, 40)
            assert np.isclose(value, np.log(num), rtol=1e-9)


def test_laml_continuous_in_log_lambda(sine_fit):
    mm = sine_fit.mm
    rho = float(np.log(sine_fit.lambdas[0]))
    vals = []
    init = (sine_fit.beta, sine_fit.pf.raw_theta)
    for r in (rho, rho + 1e-6):
        pf = inner_newton(mm, [np.exp(r)], init=init)
        vals.append(laml(pf, mm, [np.exp(r)]))
    assert abs(vals[1] - vals[0]) < 1e-3


def test_unpenalized_direction_shifts_laml_by_constant():
    # rescaling the (unpenalized) intercept column is a pure null-space
    # reparameterisation: laml changes by a lambda-independent constant,
    # so differences across lambda are untouched
    rng = np.random.default_rng(104)
    n = 300
    x = rng.uniform(0, 1, n)
    u = rng.uniform(size=n)
    z = np.sin(5 * x) + np.log(u) - np.log1p(-u)
    stage = np.searchsorted([-1.0, 0.0], z) + 1
    d = make_dataset(stage, {"x": x}, K=3)
    mm = assemble_design(d, parse_formula("stage ~ s(x, k=6)"))

    import copy
    mm2 = copy.deepcopy(mm)
    mm2.X = mm.X.copy()
    mm2.X[:, 0] *= 2.0

    def laml_at(m, lam):
        pf = inner_newton(m, [lam])
        return laml(pf, m, [lam])

    lams = (0.01, 10.0)
    diff_a = laml_at(mm, lams[0]) - laml_at(mm, lams[1])
    diff_b = laml_at(mm2, lams[0]) - laml_at(mm2, lams[1])
    assert abs(diff_a - diff_b) < 1e-7
    shift = laml_at(mm2, lams[0]) - laml_at(mm, lams[0])
    assert abs(shift - (-np.log(2.0))) < 1e-7


def test_straight_line_truth_drives_lambda_up():
    truth = TruthSpec(eta=EtaSpec("linear", {"intercept": -0.5, "slope": 0.02}),
                      theta=(-1.0, 0.0), n=1200, x_range=(0.0, 100.0), seed=11,
                      var="x")
    d, _ = simulate_dataset(truth)
    fr = fit_model(d, "stage ~ s(x, k=10)")
    # edf collapses to the penalty null space + unpenalized parameters:
    # intercept (1) + smooth null space (1) + raw thresholds (K-2 = 1)
    assert fr.lambdas[0] > np.exp(6.0)
    assert abs(fr.edf_total - 3.0) < 0.2


def test_wiggly_truth_keeps_high_edf(sine_fit):
    assert sine_fit.edf_by_term["s(doy)"] >= 5.0


def test_edf_limits():
    rng = np.random.default_rng(105)
    n = 500
    x = rng.uniform(0, 1, n)
    u = rng.uniform(size=n)
    z = np.sin(6 * x) + np.log(u) - np.log1p(-u)

    # K=2: no raw thresholds, tau -> total_p as lambda -> 0
    d2 = make_dataset(np.searchsorted([-1.0], z) + 1, {"x": x}, K=2)
    mm2 = assemble_design(d2, parse_formula("stage ~ s(x, k=8)"))
    pf = inner_newton(mm2, [1e-12])
    _, tau, _ = edf(pf, mm2, [1e-12])
    assert abs(tau - mm2.total_p) < 1e-3

    # K=4: tau -> nullspace + non-smooth parameter count as lambda -> inf
    d4 = make_dataset(np.searchsorted([-1.0, 0.0, 1.0], z) + 1, {"x": x}, K=4)
    mm4 = assemble_design(d4, parse_formula("stage ~ s(x, k=8)"))
    pf = inner_newton(mm4, [1e10])
    _, tau, _ = edf(pf, mm4, [1e10])
    assert abs(tau - (1 + 1 + 2)) < 1e-3


def test_edf_bounds_random_instances():
    rng = np.random.default_rng(106)
    for seed in range(5):
        truth = TruthSpec(eta=EtaSpec("sine", {"amplitude": 1.5, "scale": 0.15}),
                          theta=(-1.0, 0.3), n=300, x_range=(0.0, 1.0),
                          seed=seed, var="x")
        d, _ = simulate_dataset(truth)
        mm = assemble_design(d, parse_formula("stage ~ s(x, k=7)"))
        lam = float(rng.uniform(0.01, 100.0))
        pf = inner_newton(mm, [lam])
        _, tau, _ = edf(pf, mm, [lam])
        assert 0.0 < tau < mm.total_p + (mm.K - 2)


def test_near_separation_gives_high_deviance_explained():
    rng = np.random.default_rng(107)
    n = 400
    x = rng.uniform(0, 1, n)
    stage = np.where(x > 0.5, 2, 1)
    d = make_dataset(stage, {"x": x}, K=2)
    mm = assemble_design(d, parse_formula("stage ~ s(x, k=8)"))
    pf = inner_newton(mm, [1e-3])
    null = inner_newton(_null_matrices(mm), [])
    dev = 1.0 - pf.loglik / null.loglik
    assert dev > 0.9


def test_sz_term_lowers_aic_on_site_shifted_data(site_data):
    d, _ = site_data
    fr_global = fit_model(d, "stage ~ s(doy, k=12)")
    fr_sz = fit_model(d, "stage ~ s(doy, k=12) + sz(doy, site, k=8)")
    assert fr_sz.aic < fr_global.aic
    assert fr_sz.edf_by_term["sz(doy,site)"] > 0.5


def test_objective_ascent_and_refit_fixed_point(sine_fit):
    path = sine_fit.pf.lp_path
    assert all(b >= a for a, b in zip(path, path[1:]))
    refit = inner_newton(sine_fit.mm, sine_fit.lambdas,
                         init=(sine_fit.beta, sine_fit.pf.raw_theta))
    assert refit.iterations <= 2


def test_gradient_small_at_reported_optimum(sine_fit):
    S = penalty_matrix(sine_fit.mm, sine_fit.lambdas)
    lp, grad, *_ = _objective(sine_fit.mm, S, sine_fit.beta, sine_fit.pf.raw_theta)
    assert np.abs(grad).max() < 1e-6 * (1 + abs(lp))


def test_posterior_covariance_symmetric_pd(sine_fit):
    Vb = sine_fit.Vb
    assert np.abs(Vb - Vb.T).max() < 1e-10
    assert np.linalg.eigvalsh(Vb).min() > 0


def test_nonconvergence_carries_iterate():
    # zero-information data for a linear coefficient: the likelihood is flat
    # in that direction, so the gradient tolerance is unreachable
    d = make_dataset([1, 2] * 10, {"x": np.zeros(20)}, K=2)
    mm = assemble_design(d, parse_formula("stage ~ x"))
    with pytest.raises(FitError):
        inner_newton(mm, [])


def test_summary_report_fields(sine_fit):
    report = summarize(sine_fit)
    assert report["K"] == 4 and report["n"] == 1500
    assert report["theta"][0] == -1.0
    assert any(t["term"] == "s(doy)" for t in report["terms"])
    assert 0.0 < report["deviance_explained"] < 1.0


def test_lambda_count_checked(sine_fit):
    with pytest.raises(FitError, match="smoothing parameters"):
        inner_newton(sine_fit.mm, [1.0, 2.0])
