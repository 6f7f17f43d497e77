"""Versioned JSON persistence for fitted models.

Matrices are stored dense row-major with explicit dimensions and floats are
serialised with full round-trip precision, so a reloaded model reproduces
every prediction of the original.  The training design itself is not stored:
prediction rebuilds the constrained bases from knots and transforms.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np

from .basis import ColumnGroup, DesignBlock, ModelMatrices, PenaltyEntry
from .errors import ArchiveError
from .fitting import FitResult, PenalizedFit
from .formula import parse_formula

FORMAT_VERSION = 1


def _enc_matrix(a: np.ndarray | None):
    if a is None:
        return None
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return {"rows": a.shape[0], "cols": a.shape[1], "data": a.ravel().tolist()}


def _dec_matrix(obj) -> np.ndarray | None:
    if obj is None:
        return None
    return np.asarray(obj["data"], dtype=float).reshape(obj["rows"], obj["cols"])


def _enc_vector(a: np.ndarray) -> list:
    return np.asarray(a, dtype=float).ravel().tolist()


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH makes archives byte-reproducible on request.
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _enc_block(b: DesignBlock) -> dict:
    return {
        "label": b.label, "kind": b.kind, "var": b.var, "k": b.k,
        "factor": b.factor,
        "levels": list(b.levels) if b.levels else None,
        "x_shift": b.x_shift, "x_scale": b.x_scale,
        "knots": _enc_vector(b.knots),
        "basis_map": _enc_matrix(b.basis_map),
        "null_scale": _enc_vector(b.null_scale),
        "center_transform": _enc_matrix(b.center_transform),
        "contrast": _enc_matrix(b.contrast),
        "penalties": [_enc_matrix(S) for S in b.penalties],
        "penalty_ranks": list(b.penalty_ranks),
        "nullspace_dim": b.nullspace_dim,
    }


def _dec_block(obj) -> DesignBlock:
    return DesignBlock(
        label=obj["label"], kind=obj["kind"], var=obj["var"], k=obj["k"],
        factor=obj["factor"],
        levels=tuple(obj["levels"]) if obj["levels"] else None,
        x_shift=obj["x_shift"], x_scale=obj["x_scale"],
        knots=np.asarray(obj["knots"], dtype=float),
        basis_map=_dec_matrix(obj["basis_map"]),
        null_scale=np.asarray(obj["null_scale"], dtype=float),
        center_transform=_dec_matrix(obj["center_transform"]),
        contrast=_dec_matrix(obj["contrast"]),
        penalties=[_dec_matrix(S) for S in obj["penalties"]],
        penalty_ranks=list(obj["penalty_ranks"]),
        nullspace_dim=obj["nullspace_dim"],
        X=None,
    )


def save_model(fr: FitResult, path: str | Path, data_path: str | Path | None = None,
               seed_usage: str | None = None) -> None:
    """Write the fitted model as a versioned JSON archive."""
    mm = fr.mm
    groups = []
    for g in mm.groups:
        groups.append({
            "label": g.label, "start": g.start, "stop": g.stop,
            "var": g.var,
            "block": _enc_block(g.block) if g.block is not None else None,
        })
    doc = {
        "format_version": FORMAT_VERSION,
        "formula": str(mm.spec),
        "K": mm.K,
        "n": mm.n,
        "stage_labels": list(mm.stage_labels),
        "factor_levels": {k: list(v) for k, v in mm.factor_levels.items()},
        "groups": groups,
        "estimates": {
            "beta": _enc_vector(fr.beta),
            "raw_theta": _enc_vector(fr.pf.raw_theta),
            "theta": _enc_vector(fr.thresholds.theta),
        },
        "lambdas": _enc_vector(fr.lambdas),
        "lambda_pinned": list(fr.pinned),
        "Vb": _enc_matrix(fr.Vb),
        "diagnostics": {
            "edf_by_term": {k: float(v) for k, v in fr.edf_by_term.items()},
            "edf_total": float(fr.edf_total),
            "aic": float(fr.aic),
            "deviance_explained": float(fr.deviance_explained),
            "laml": float(fr.laml),
            "loglik": float(fr.pf.loglik),
            "penalized_ll": float(fr.pf.penalized_ll),
            "null_loglik": float(fr.null_loglik),
            "converged": bool(fr.pf.converged),
            "iterations": int(fr.pf.iterations),
        },
        "provenance": {
            "created": _timestamp(),
            "data_sha256": file_sha256(data_path) if data_path else None,
            "seed_usage": seed_usage,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path: str | Path) -> FitResult:
    """Reload an archive into a FitResult usable for all inference ops."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ArchiveError(f"not a model archive: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ArchiveError(f"unsupported archive version {version!r} (expected {FORMAT_VERSION})")
    try:
        groups = []
        penalties = []
        for g in doc["groups"]:
            block = _dec_block(g["block"]) if g["block"] else None
            groups.append(ColumnGroup(g["label"], g["start"], g["stop"],
                                      block=block, var=g["var"]))
            if block is not None:
                for S, rank in zip(block.penalties, block.penalty_ranks):
                    penalties.append(PenaltyEntry(block.label, g["start"], S, rank))
        total_p = groups[-1].stop
        mm = ModelMatrices(
            X=np.zeros((0, total_p)), y=np.zeros(0, dtype=int), K=int(doc["K"]),
            groups=groups, penalties=penalties,
            spec=parse_formula(doc["formula"]).with_stage_count(int(doc["K"])),
            stage_labels=tuple(doc["stage_labels"]),
            factor_levels={k: tuple(v) for k, v in doc["factor_levels"].items()},
            n_obs=int(doc["n"]),
        )
        diag = doc["diagnostics"]
        beta = np.asarray(doc["estimates"]["beta"], dtype=float)
        raw = np.asarray(doc["estimates"]["raw_theta"], dtype=float)
        Vb = _dec_matrix(doc["Vb"])
        pf = PenalizedFit(
            beta=beta, raw_theta=raw, K=mm.K,
            H=np.zeros((0, 0)),       # curvature is not archived; Vb is
            penalized_ll=diag["penalized_ll"], loglik=diag["loglik"],
            converged=diag["converged"], iterations=diag["iterations"],
            grad_norm=0.0,
        )
        return FitResult(
            mm=mm, pf=pf, lambdas=np.asarray(doc["lambdas"], dtype=float), Vb=Vb,
            edf_by_term=dict(diag["edf_by_term"]), edf_total=diag["edf_total"],
            aic=diag["aic"], deviance_explained=diag["deviance_explained"],
            laml=diag["laml"], null_loglik=diag["null_loglik"],
            pinned=list(doc["lambda_pinned"]),
        )
    except (KeyError, TypeError) as exc:
        raise ArchiveError(f"malformed model archive: {exc}") from exc
