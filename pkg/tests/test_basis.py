import numpy as np
import pytest

from ordsmooth.basis import (_tprs_marginal, assemble_design, build_sz,
                             build_tprs, prediction_matrix)
from ordsmooth.data import Dataset, StageCoding
from ordsmooth.errors import DesignError, PredictionError
from ordsmooth.formula import parse_formula


def dataset(n=120, seed=0, site=False, stage_K=4):
    rng = np.random.default_rng(seed)
    covs = {"doy": rng.uniform(100, 250, n)}
    facs = {}
    if site:
        facs["site"] = rng.choice(["1", "2", "3"], n).astype(object)
    return Dataset(stage=rng.integers(1, stage_K + 1, size=n),
                   stage_coding=StageCoding(tuple(f"s{i}" for i in range(1, stage_K + 1))),
                   covariates=covs, factors=facs)


def test_tprs_column_count_after_absorption():
    # 29 distinct covariate values, basis size 25 -> 24 columns
    x = np.repeat(np.linspace(0, 1, 29), 3)
    blk = build_tprs(x, k=25, var="doy")
    assert blk.X.shape[1] == 24
    assert blk.nullspace_dim == 1
    assert blk.penalty_ranks == [23]


def test_tprs_columns_sum_to_zero():
    rng = np.random.default_rng(1)
    blk = build_tprs(rng.uniform(0, 10, 200), k=12)
    assert np.abs(blk.X.sum(axis=0)).max() < 1e-10


def test_basis_size_limited_by_unique_values():
    x = np.repeat(np.linspace(0, 1, 29), 2)
    with pytest.raises(DesignError, match="29 unique"):
        build_tprs(x, k=30, var="doy")


def test_constant_covariate_rejected():
    with pytest.raises(DesignError, match="constant"):
        build_tprs(np.ones(50), k=5, var="doy")


def test_penalties_symmetric_psd():
    rng = np.random.default_rng(2)
    x = rng.uniform(-3, 7, 150)
    f = rng.choice(["a", "b", "c", "d"], 150).astype(object)
    for blk in (build_tprs(x, k=10), build_sz(x, f, k=6)):
        for S in blk.penalties:
            assert np.abs(S - S.T).max() < 1e-12
            assert np.linalg.eigvalsh(S).min() >= -1e-8


def test_huge_penalty_recovers_straight_line():
    # with lambda -> inf only the {1, x} null space survives, so a penalized
    # least-squares fit of straight-line data must reproduce the line
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, 300)
    y = 1.5 - 2.0 * x
    blk = build_tprs(x, k=10)
    X = np.column_stack([np.ones_like(x), blk.X])
    S = np.zeros((X.shape[1], X.shape[1]))
    S[1:, 1:] = blk.penalties[0]
    beta = np.linalg.solve(X.T @ X + 1e10 * S, X.T @ y)
    coef, *_ = np.linalg.lstsq(np.column_stack([np.ones_like(x), x]), y, rcond=None)
    line = np.column_stack([np.ones_like(x), x]) @ coef
    assert np.abs(X @ beta - line).max() < 1e-4
    assert np.abs(X @ beta - y).max() < 1e-4


def test_constraint_absorption_preserves_fitted_values():
    # centred-basis LS must match the uncentred basis solved under an
    # explicit sum-to-zero constraint (KKT oracle)
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 1, 80)
    y = np.sin(6 * x) + 0.1 * rng.normal(size=80)
    lam = 0.37

    X_raw, S_pen, meta = _tprs_marginal(x, 9, "x")
    p = X_raw.shape[1]
    S_raw = np.zeros((p, p))
    S_raw[: p - 2, : p - 2] = S_pen
    c = X_raw.sum(axis=0)
    KKT = np.zeros((p + 1, p + 1))
    KKT[:p, :p] = X_raw.T @ X_raw + lam * S_raw
    KKT[:p, p] = c
    KKT[p, :p] = c
    rhs = np.concatenate([X_raw.T @ y, [0.0]])
    beta_con = np.linalg.solve(KKT, rhs)[:p]

    blk = build_tprs(x, k=9)
    beta_cen = np.linalg.solve(blk.X.T @ blk.X + lam * blk.penalties[0], blk.X.T @ y)
    assert np.abs(X_raw @ beta_con - blk.X @ beta_cen).max() < 1e-8


def test_knot_thinning_bounds_eigendecomposition():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, 2000)            # ~2000 unique values
    blk = build_tprs(x, k=5)
    assert blk.knots.size <= 50


def test_sz_levels_sum_to_zero_everywhere():
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 10, 90)
    f = np.array(list("abc") * 30, dtype=object)
    blk = build_sz(x, f, k=6, var="x", factor="g")
    xe = np.array([0.41, 3.3, 9.87, 5.0])
    total = sum(blk.evaluate({"x": xe}, {"g": np.array([lev] * 4, dtype=object)})
                for lev in ("a", "b", "c"))
    assert np.abs(total).max() < 1e-10


def test_sz_huge_penalties_kill_deviations():
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 1, 120)
    f = rng.choice(["a", "b"], 120).astype(object)
    y = rng.normal(size=120)
    blk = build_sz(x, f, k=5)
    S = 1e10 * (blk.penalties[0] + blk.penalties[1])
    beta = np.linalg.solve(blk.X.T @ blk.X + S, blk.X.T @ y)
    assert np.abs(blk.X @ beta).max() < 1e-6


def test_sz_single_level_rejected():
    with pytest.raises(DesignError, match="2 levels"):
        build_sz(np.linspace(0, 1, 20), np.array(["a"] * 20, dtype=object), k=4)


def test_assemble_column_arithmetic():
    d = dataset(n=150, seed=8)
    mm = assemble_design(d, parse_formula("stage ~ s(doy, k=25)"))
    assert mm.total_p == 1 + 24


def test_assemble_intercept_only():
    from ordsmooth.formula import ModelSpec

    d = dataset(n=30, seed=9)
    mm0 = assemble_design(d, ModelSpec(response="stage", terms=()))
    assert mm0.total_p == 1
    assert mm0.penalties == []


def test_assemble_unknown_variable():
    d = dataset(n=40, seed=10)
    with pytest.raises(DesignError, match="elev"):
        assemble_design(d, parse_formula("stage ~ s(elev, k=5)"))


def test_penalty_offsets_reconstruct_block_diagonal():
    d = dataset(n=200, seed=11, site=True)
    mm = assemble_design(d, parse_formula("stage ~ s(doy, k=8) + sz(doy, site, k=5)"))
    assert len(mm.penalties) == 3          # one wiggliness + (wiggliness, ridge)
    full = sum(mm.embedded_penalties())
    manual = np.zeros((mm.total_p, mm.total_p))
    for entry in mm.penalties:
        sl = slice(entry.offset, entry.offset + entry.ncol)
        manual[sl, sl] += entry.S
    assert np.array_equal(full, manual)
    # offsets line up with the labelled column groups
    for entry in mm.penalties:
        g = mm.group(entry.label)
        assert g.start == entry.offset and g.stop - g.start == entry.ncol


def test_prediction_reproduces_training_design():
    d = dataset(n=180, seed=12, site=True)
    mm = assemble_design(d, parse_formula("stage ~ s(doy, k=9) + sz(doy, site, k=4)"))
    X2 = prediction_matrix(mm, d)
    assert np.abs(X2 - mm.X).max() < 1e-12


def test_prediction_single_row():
    d = dataset(n=90, seed=13)
    mm = assemble_design(d, parse_formula("stage ~ s(doy, k=7)"))
    row = prediction_matrix(mm, {"doy": [213.0]})
    assert row.shape == (1, mm.total_p)


def test_unseen_factor_level_rejected():
    d = dataset(n=90, seed=14, site=True)
    mm = assemble_design(d, parse_formula("stage ~ sz(doy, site, k=4)"))
    with pytest.raises(PredictionError, match="'4'"):
        prediction_matrix(mm, {"doy": np.array([150.0]), "site": np.array(["4"], dtype=object)})


def test_block_evaluation_deterministic():
    rng = np.random.default_rng(15)
    blk = build_tprs(rng.uniform(0, 5, 60), k=6)
    xe = {"x": np.array([0.2, 2.9, 4.4])}
    a = blk.evaluate(xe, {})
    b = blk.evaluate(xe, {})
    assert np.array_equal(a, b)


def test_linear_term_column():
    d = dataset(n=60, seed=16)
    d = d.with_covariate("elev", np.arange(60.0))
    mm = assemble_design(d, parse_formula("stage ~ elev + s(doy, k=5)"))
    assert mm.total_p == 1 + 1 + 4
    assert np.array_equal(mm.X[:, 1], d.covariates["elev"])
