"""Generate ordered-categorical datasets from known truth.

Inverts the latent model: draw Z_tilde = eta(x) + e with e standard
logistic (inverse-CDF from uniforms), then categorise at the supplied cut
points.  Used throughout the test and acceptance suites as the ground-truth
side of recovery checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .data import Dataset, StageCoding
from .errors import SchemaError


@dataclass(frozen=True)
class EtaSpec:
    """Named analytic mean-function family.

    kinds: constant {value}; linear {intercept, slope}; sine {offset,
    amplitude, scale, shift}; tanh {offset, amplitude, center, scale};
    spline {xs, ys} (natural cubic through control points); per_level
    {base: EtaSpec, deviations: {level: EtaSpec}}.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __call__(self, x: np.ndarray, levels=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.full_like(x, float(p["value"]))
        if self.kind == "linear":
            return float(p.get("intercept", 0.0)) + float(p["slope"]) * x
        if self.kind == "sine":
            return (float(p.get("offset", 0.0))
                    + float(p["amplitude"])
                    * np.sin((x - float(p.get("shift", 0.0))) / float(p["scale"])))
        if self.kind == "tanh":
            return (float(p.get("offset", 0.0))
                    + float(p["amplitude"])
                    * np.tanh((x - float(p["center"])) / float(p["scale"])))
        if self.kind == "spline":
            cs = CubicSpline(np.asarray(p["xs"], float), np.asarray(p["ys"], float),
                             bc_type="natural")
            return cs(x)
        if self.kind == "per_level":
            if levels is None:
                raise ValueError("per_level eta needs the level vector")
            base = _eta_from_obj(p["base"])
            devs = {k: _eta_from_obj(v) for k, v in p["deviations"].items()}
            out = base(x)
            for lev, fn in devs.items():
                mask = np.asarray(levels) == lev
                if mask.any():
                    out[mask] += fn(x[mask])
            return out
        raise ValueError(f"unknown eta family {self.kind!r}")

    def to_obj(self) -> dict:
        params = dict(self.params)
        if self.kind == "per_level":
            params["base"] = _eta_to_obj(params["base"])
            params["deviations"] = {k: _eta_to_obj(v)
                                    for k, v in params["deviations"].items()}
        return {"kind": self.kind, "params": params}


def _eta_from_obj(obj) -> EtaSpec:
    if isinstance(obj, EtaSpec):
        return obj
    return EtaSpec(kind=obj["kind"], params=obj.get("params", {}))


def _eta_to_obj(obj):
    return obj.to_obj() if isinstance(obj, EtaSpec) else obj


@dataclass(frozen=True)
class TruthSpec:
    """Everything needed to generate one dataset: mean function, cut points,
    sample size, covariate range, optional factor and the master seed."""

    eta: EtaSpec
    theta: tuple
    n: int
    x_range: tuple
    seed: int
    var: str = "doy"
    factor: str | None = None
    levels: tuple = ()
    stage_labels: tuple = ()

    def __post_init__(self):
        theta = tuple(float(t) for t in self.theta)
        object.__setattr__(self, "theta", theta)
        if any(b <= a for a, b in zip(theta, theta[1:])):
            raise ValueError("theta must be strictly increasing")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.factor is not None and len(self.levels) < 2:
            raise ValueError("a factor needs at least 2 levels")

    @property
    def K(self) -> int:
        return len(self.theta) + 1

    def labels(self) -> tuple:
        if self.stage_labels:
            if len(self.stage_labels) != self.K:
                raise ValueError(f"need {self.K} stage labels")
            return tuple(self.stage_labels)
        return tuple(f"s{k}" for k in range(1, self.K + 1))


def simulate_dataset(ts: TruthSpec) -> tuple[Dataset, np.ndarray]:
    """Draw a dataset and return it with the true linear predictor values."""
    rng = np.random.default_rng(ts.seed)
    lo, hi = ts.x_range
    x = rng.uniform(float(lo), float(hi), size=ts.n)
    levels = None
    factors = {}
    if ts.factor is not None:
        levels = rng.choice(np.asarray(ts.levels, dtype=object), size=ts.n)
        factors[ts.factor] = levels
    eta = ts.eta(x, levels=levels)
    u = rng.uniform(size=ts.n)
    z = eta + (np.log(u) - np.log1p(-u))
    stage = np.searchsorted(np.asarray(ts.theta), z, side="left") + 1
    d = Dataset(
        stage=stage, stage_coding=StageCoding(ts.labels()),
        covariates={ts.var: x}, factors=factors,
        factor_levels={ts.factor: tuple(ts.levels)} if ts.factor else {},
    )
    return d, eta


def truth_to_json(ts: TruthSpec) -> dict:
    return {
        "eta": ts.eta.to_obj(),
        "theta": list(ts.theta),
        "n": ts.n,
        "x_range": list(ts.x_range),
        "seed": ts.seed,
        "var": ts.var,
        "factor": ts.factor,
        "levels": list(ts.levels),
        "stage_labels": list(ts.stage_labels),
    }


def truth_from_json(obj) -> TruthSpec:
    try:
        return TruthSpec(
            eta=_eta_from_obj(obj["eta"]),
            theta=tuple(obj["theta"]),
            n=int(obj["n"]),
            x_range=tuple(obj["x_range"]),
            seed=int(obj["seed"]),
            var=obj.get("var", "doy"),
            factor=obj.get("factor"),
            levels=tuple(obj.get("levels", ())),
            stage_labels=tuple(obj.get("stage_labels", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad truth specification: {exc}") from exc


def load_truth(path: str | Path) -> TruthSpec:
    with open(path, encoding="utf-8") as fh:
        return truth_from_json(json.load(fh))
