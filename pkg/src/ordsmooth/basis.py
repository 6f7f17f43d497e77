"""Spline bases, penalties and identifiability constraints.

One-dimensional thin-plate regression splines: a cubic radial kernel at the
knots is eigen-truncated to the requested basis size (keeping the {1, x}
polynomial null space exact), and a sum-to-zero-over-rows constraint is then
absorbed into the columns so the model intercept is the sole level anchor.

Factor-smooth interaction blocks combine the same marginal spline with
orthonormal level contrasts, so the per-level curves sum to zero at every
covariate value; a wiggliness penalty plus a full-rank deviation ridge lets
the smoothing-parameter estimates shrink the whole term away if unneeded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import DesignError, PredictionError
from .formula import FactorSmooth, Linear, ModelSpec, Smooth

# Knots beyond this multiple of the basis size are thinned to quantiles,
# bounding the eigendecomposition cost.
KNOTS_PER_BASIS_DIM = 10

_CENTER_TOL = 1e-10


def _radial(r: np.ndarray) -> np.ndarray:
    """Cubic thin-plate kernel for one covariate (order-2 penalty)."""
    return r**3 / 12.0


def _radial_design(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    return _radial(np.abs(x[:, None] - knots[None, :]))


def _null_basis(x: np.ndarray) -> np.ndarray:
    """Penalty null space {1, x} evaluated at x."""
    return np.column_stack([np.ones_like(x), x])


def _center_transform(X: np.ndarray) -> np.ndarray | None:
    """Orthonormal basis of the coefficients satisfying sum_i f(x_i) = 0.

    Returns None when the columns already sum to zero (the constraint would
    be degenerate), e.g. a level-contrast block under balanced sampling.
    """
    c = X.sum(axis=0)
    norm = np.linalg.norm(c)
    scale = max(1.0, float(np.abs(X).max())) * np.sqrt(X.shape[0])
    if norm <= _CENTER_TOL * scale:
        return None
    Q, _ = np.linalg.qr(c.reshape(-1, 1), mode="complete")
    return Q[:, 1:]


def _penalty_rank(S: np.ndarray) -> int:
    w = np.linalg.eigvalsh((S + S.T) / 2.0)
    if w.size == 0:
        return 0
    tol = max(1e-10 * max(w.max(), 0.0), 1e-300)
    return int(np.sum(w > tol))


@dataclass
class DesignBlock:
    """A smooth term's columns, penalties and rebuild metadata.

    ``basis_map`` sends the radial evaluations at the knots to the penalized
    columns; ``center_transform`` (if any) is the absorbed sum-to-zero
    constraint.  Both are stored so prediction rebuilds the exact same
    constrained basis at new covariate values.
    """

    label: str
    kind: str                     # "tprs" | "sz"
    var: str
    k: int
    penalties: list[np.ndarray]
    penalty_ranks: list[int]
    nullspace_dim: int
    x_shift: float
    x_scale: float
    knots: np.ndarray             # on the scaled axis
    basis_map: np.ndarray         # M x (k-2), includes column normalisation
    null_scale: np.ndarray        # RMS normalisers of the {1, x} columns
    center_transform: np.ndarray | None
    X: np.ndarray | None = None   # training-row evaluation
    factor: str | None = None
    levels: tuple[str, ...] | None = None
    contrast: np.ndarray | None = None   # G x (G-1)

    @property
    def ncol(self) -> int:
        raw = self._raw_ncol()
        return raw if self.center_transform is None else self.center_transform.shape[1]

    def _raw_ncol(self) -> int:
        k = self.basis_map.shape[1] + 2
        if self.kind == "sz":
            return (len(self.levels) - 1) * k
        return k

    def _marginal(self, x: np.ndarray) -> np.ndarray:
        xs = (np.asarray(x, dtype=float) - self.x_shift) / self.x_scale
        return np.column_stack([_radial_design(xs, self.knots) @ self.basis_map,
                                _null_basis(xs) / self.null_scale])

    def evaluate(self, covariates, factors) -> np.ndarray:
        """Evaluate the constrained basis at new covariate/factor values."""
        if self.var not in covariates:
            raise PredictionError(f"model variable {self.var!r} missing from new data")
        Xm = self._marginal(covariates[self.var])
        if self.kind == "sz":
            if self.factor not in factors:
                raise PredictionError(f"model factor {self.factor!r} missing from new data")
            codes = _level_codes(factors[self.factor], self.levels, self.factor)
            D = self.contrast[codes, :]                    # n x (G-1)
            Xm = np.einsum("ij,ik->ijk", D, Xm).reshape(Xm.shape[0], -1)
        if self.center_transform is not None:
            Xm = Xm @ self.center_transform
        return Xm


def _level_codes(values, levels: tuple[str, ...], name: str) -> np.ndarray:
    lookup = {lab: i for i, lab in enumerate(levels)}
    codes = np.empty(len(values), dtype=int)
    for i, v in enumerate(values):
        try:
            codes[i] = lookup[v]
        except KeyError:
            raise PredictionError(
                f"factor {name!r} has unseen level {v!r}; training levels: {levels}"
            ) from None
    return codes


def _tprs_marginal(x: np.ndarray, k: int, var: str):
    """Eigen-truncated thin-plate pieces before any constraint absorption.

    Returns (X_raw n x k, S_pen (k-2)^2, metadata) with columns ordered
    penalized-then-null ({1, x} last).
    """
    x = np.asarray(x, dtype=float)
    if k < 3:
        raise DesignError(f"basis size must be >= 3, got k={k}")
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        raise DesignError(f"covariate {var!r} is constant; cannot build a smooth of it")
    shift, scale = lo, hi - lo
    xs = (x - shift) / scale
    knots = np.unique(xs)
    if knots.size > KNOTS_PER_BASIS_DIM * k:
        knots = np.unique(np.quantile(xs, np.linspace(0.0, 1.0, KNOTS_PER_BASIS_DIM * k)))
    if k > knots.size:
        raise DesignError(
            f"basis size k={k} exceeds the {knots.size} unique values of {var!r}"
        )
    M = knots.size
    E = _radial_design(knots, knots)
    T = _null_basis(knots)

    w, U = np.linalg.eigh(E)
    order = np.argsort(-np.abs(w), kind="stable")[:k]
    Uk = U[:, order]
    wk = w[order]

    # Restrict the radial coefficients to the subspace orthogonal to the
    # polynomial space (T' delta = 0), as in the truncated full spline.
    Q, _ = np.linalg.qr((T.T @ Uk).T, mode="complete")
    Z1 = Q[:, 2:]                                     # k x (k-2)
    basis_map = Uk @ Z1                               # M x (k-2)
    X_pen = _radial_design(xs, knots) @ basis_map
    X_null = _null_basis(xs)
    S_pen = Z1.T @ (wk[:, None] * Z1)

    # Normalise columns to unit RMS over the data rows.  The penalized fit
    # is invariant to this (the penalty transforms along), but it conditions
    # the eigen-truncated columns, whose raw norms decay with the kernel
    # spectrum, and puts ridge penalties in function-size units.
    pen_scale = np.sqrt((X_pen**2).mean(axis=0))
    null_scale = np.sqrt((X_null**2).mean(axis=0))
    X_pen /= pen_scale
    X_null = X_null / null_scale
    basis_map = basis_map / pen_scale
    S_pen = S_pen / np.outer(pen_scale, pen_scale)
    S_pen = (S_pen + S_pen.T) / 2.0

    X_raw = np.column_stack([X_pen, X_null])
    meta = dict(x_shift=shift, x_scale=scale, knots=knots,
                basis_map=basis_map, null_scale=null_scale)
    return X_raw, S_pen, meta


def build_tprs(x, k: int, var: str = "x") -> DesignBlock:
    """Thin-plate regression spline block with the sum-to-zero constraint
    absorbed: k columns collapse to k-1 and the constant direction drops."""
    X_raw, S_pen, meta = _tprs_marginal(x, k, var)
    kcols = X_raw.shape[1]
    S_raw = np.zeros((kcols, kcols))
    S_raw[: kcols - 2, : kcols - 2] = S_pen
    Z2 = _center_transform(X_raw)
    X = X_raw if Z2 is None else X_raw @ Z2
    S = S_raw if Z2 is None else Z2.T @ S_raw @ Z2
    S = (S + S.T) / 2.0
    rank = _penalty_rank(S)
    return DesignBlock(
        label=f"s({var})", kind="tprs", var=var, k=k,
        penalties=[S], penalty_ranks=[rank],
        nullspace_dim=X.shape[1] - rank,
        center_transform=Z2, X=X, **meta,
    )


def build_sz(x, f, k: int, var: str = "x", factor: str = "f",
             levels: tuple[str, ...] | None = None) -> DesignBlock:
    """Factor-smooth deviation block: per-level curves summing to zero over
    levels at every x, with a shared wiggliness penalty and a deviation ridge."""
    f = np.asarray(f, dtype=object)
    if levels is None:
        seen: dict = {}
        for v in f:
            seen.setdefault(v, None)
        levels = tuple(seen)
    G = len(levels)
    if G < 2:
        raise DesignError(f"factor {factor!r} needs >= 2 levels, got {G}")
    X_m, S_pen, meta = _tprs_marginal(x, k, var)
    kcols = X_m.shape[1]
    S_marg = np.zeros((kcols, kcols))
    S_marg[: kcols - 2, : kcols - 2] = S_pen

    # Orthonormal contrasts spanning the level space orthogonal to 1_G:
    # every represented function satisfies sum_g f_g(x) = 0 identically.
    Q, _ = np.linalg.qr(np.ones((G, 1)), mode="complete")
    C = Q[:, 1:]
    codes = _level_codes(f, levels, factor)
    D = C[codes, :]
    X_raw = np.einsum("ij,ik->ijk", D, X_m).reshape(X_m.shape[0], (G - 1) * kcols)
    S_wig_raw = np.kron(np.eye(G - 1), S_marg)
    S_ridge_raw = np.eye((G - 1) * kcols)

    Z2 = _center_transform(X_raw)
    if Z2 is None:
        X, S_wig, S_ridge = X_raw, S_wig_raw, S_ridge_raw
    else:
        X = X_raw @ Z2
        S_wig = Z2.T @ S_wig_raw @ Z2
        S_ridge = Z2.T @ S_ridge_raw @ Z2
    S_wig = (S_wig + S_wig.T) / 2.0
    S_ridge = (S_ridge + S_ridge.T) / 2.0
    ranks = [_penalty_rank(S_wig), _penalty_rank(S_ridge)]
    return DesignBlock(
        label=f"sz({var},{factor})", kind="sz", var=var, k=k,
        penalties=[S_wig, S_ridge], penalty_ranks=ranks,
        nullspace_dim=0,                      # the ridge is full rank
        center_transform=Z2, X=X,
        factor=factor, levels=levels, contrast=C, **meta,
    )


@dataclass(frozen=True)
class PenaltyEntry:
    """One penalty matrix and where its block sits in the full design."""

    label: str
    offset: int
    S: np.ndarray
    rank: int

    @property
    def ncol(self) -> int:
        return self.S.shape[0]

    def embed(self, total_p: int) -> np.ndarray:
        full = np.zeros((total_p, total_p))
        sl = slice(self.offset, self.offset + self.ncol)
        full[sl, sl] = self.S
        return full


@dataclass
class ColumnGroup:
    label: str
    start: int
    stop: int
    block: DesignBlock | None = None
    var: str | None = None        # linear terms only


@dataclass
class ModelMatrices:
    """Assembled design: intercept + linear columns + smooth blocks.

    Column order is deterministic (intercept first, then formula order);
    ``penalties`` carry their offsets into the full coefficient vector.
    """

    X: np.ndarray
    y: np.ndarray
    K: int
    groups: list[ColumnGroup]
    penalties: list[PenaltyEntry]
    spec: ModelSpec
    stage_labels: tuple[str, ...] = ()
    factor_levels: dict = field(default_factory=dict)
    n_obs: int | None = None      # survives archiving, where X is dropped

    @property
    def total_p(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.n_obs if self.n_obs is not None else self.X.shape[0]

    def embedded_penalties(self) -> list[np.ndarray]:
        return [p.embed(self.total_p) for p in self.penalties]

    def penalty_null_dim(self) -> int:
        """Dimension of the coefficient space the combined penalty ignores."""
        if not self.penalties:
            return self.total_p
        S = sum(self.embedded_penalties())
        return self.total_p - _penalty_rank(S)

    def group(self, label: str) -> ColumnGroup:
        for g in self.groups:
            if g.label == label:
                return g
        raise KeyError(label)


def assemble_design(d: Dataset, spec: ModelSpec) -> ModelMatrices:
    """Build the full model design for a parsed formula on a dataset."""
    K = d.K
    if spec.K is not None and spec.K != K:
        raise DesignError(f"formula stage count K={spec.K} but data has K={K}")
    cols: list[np.ndarray] = [np.ones((d.n, 1))]
    groups: list[ColumnGroup] = [ColumnGroup("(intercept)", 0, 1)]
    penalties: list[PenaltyEntry] = []
    offset = 1
    for term in spec.terms:
        if isinstance(term, Linear):
            if term.name not in d.covariates:
                raise DesignError(f"formula variable {term.name!r} not found in data")
            cols.append(d.covariates[term.name].reshape(-1, 1))
            groups.append(ColumnGroup(term.name, offset, offset + 1, var=term.name))
            offset += 1
            continue
        if isinstance(term, Smooth):
            if term.var not in d.covariates:
                raise DesignError(f"formula variable {term.var!r} not found in data")
            block = build_tprs(d.covariates[term.var], term.k, var=term.var)
        elif isinstance(term, FactorSmooth):
            if term.var not in d.covariates:
                raise DesignError(f"formula variable {term.var!r} not found in data")
            if term.factor not in d.factors:
                raise DesignError(f"formula factor {term.factor!r} not found in data")
            block = build_sz(
                d.covariates[term.var], d.factors[term.factor], term.k,
                var=term.var, factor=term.factor,
                levels=d.factor_levels[term.factor],
            )
        else:
            raise DesignError(f"unsupported term {term!r}")
        cols.append(block.X)
        stop = offset + block.X.shape[1]
        groups.append(ColumnGroup(block.label, offset, stop, block=block))
        for S, rank in zip(block.penalties, block.penalty_ranks):
            penalties.append(PenaltyEntry(block.label, offset, S, rank))
        block.X = None            # training evaluation lives in the big X
        offset = stop
    X = np.hstack(cols)
    mm = ModelMatrices(
        X=X, y=d.stage.copy(), K=K, groups=groups, penalties=penalties,
        spec=spec.with_stage_count(K) if spec.K is None else spec,
        stage_labels=d.stage_coding.labels,
        factor_levels={k: tuple(v) for k, v in d.factor_levels.items()},
    )
    return mm


def prediction_matrix(m: ModelMatrices, newdata: Dataset | dict) -> np.ndarray:
    """Evaluate the training-constrained design at new covariate values.

    ``newdata`` may be a Dataset or a plain mapping of column name -> values.
    Factor levels must be a subset of the training levels.
    """
    if isinstance(newdata, Dataset):
        covariates = newdata.covariates
        factors = newdata.factors
    else:
        covariates = {k: np.asarray(v, dtype=float) for k, v in newdata.items()
                      if np.asarray(v).dtype.kind in "fiu"}
        factors = {k: np.asarray(v, dtype=object) for k, v in newdata.items()
                   if k not in covariates}
    sizes = [len(v) for v in covariates.values()] + [len(v) for v in factors.values()]
    if not sizes:
        raise PredictionError("new data is empty")
    n_new = sizes[0]
    if any(s != n_new for s in sizes):
        raise PredictionError("new data columns have inconsistent lengths")
    out = np.empty((n_new, m.total_p))
    for g in m.groups:
        if g.label == "(intercept)":
            out[:, g.start:g.stop] = 1.0
        elif g.block is None:
            if g.var not in covariates:
                raise PredictionError(f"model variable {g.var!r} missing from new data")
            out[:, g.start:g.stop] = np.asarray(covariates[g.var], float).reshape(-1, 1)
        else:
            out[:, g.start:g.stop] = g.block.evaluate(covariates, factors)
    return out
