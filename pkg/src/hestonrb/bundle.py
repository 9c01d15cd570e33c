"""Trained-model persistence.

One ``.npz`` file carries everything the online phase needs: the initial
reduced basis and its payoff-frame projection data, the evolution basis
with its Riesz Gram blocks, and a metadata record (format version, hash
and full text of the generating configuration, greedy log, timings).
Loaded models answer reduced queries without any mesh assembly; the
embedded configuration allows rebuilding the truth problem on demand.

Models with explicit source terms are not persisted: their rhs factors
are arbitrary callables.  The shipped application is source-free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .payoff import BezierKnots
from .rbm import EvolRB, GreedyEntry, InitRB, OnlineInitMap

__all__ = ["FORMAT_VERSION", "ModelFormatError", "ModelBundle", "save_model", "load_model"]

FORMAT_VERSION = 1


class ModelFormatError(Exception):
    """Unreadable or incompatible model file; maps to CLI exit code 3."""


@dataclass
class ModelBundle:
    """In-memory form of a persisted model."""

    config: RunConfig
    knots: BezierKnots
    init_rb: InitRB
    evol: EvolRB
    online_init: OnlineInitMap
    beta_LB: float
    rho_trained: tuple
    rho_domain: tuple
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_offline(cls, result) -> "ModelBundle":
        """Package a finished offline run."""
        cfg = result.problem.config
        meta = {
            "format_version": FORMAT_VERSION,
            "config_hash": cfg.config_hash(),
            "J": int(result.problem.mesh.J),
            "K": int(result.problem.grid.K),
            "M": int(result.init_rb.basis.shape[1]),
            "N0": int(result.init_rb.N0),
            "N1": int(result.evol.N1),
            "status": result.evol.status,
            "provenance": result.init_rb.provenance,
            "rel_truncation": float(result.init_rb.rel_truncation),
            "cand_errors": [float(x) for x in result.cand_errors],
            "theta_names": list(result.evol.theta_names),
            "greedy_log": [
                {
                    "iteration": e.iteration,
                    "cand_index": e.cand_index,
                    "rho": e.rho,
                    "estimator": e.estimator,
                }
                for e in result.evol.log
            ],
            "timings": {k: float(v) for k, v in result.timings.items()},
            "warnings": list(result.warnings),
        }
        return cls(
            config=cfg,
            knots=result.problem.knots,
            init_rb=result.init_rb,
            evol=result.evol,
            online_init=result.online_init,
            beta_LB=result.beta_LB,
            rho_trained=result.rho_trained,
            rho_domain=(cfg.get("domain", "rho_min"), cfg.get("domain", "rho_max")),
            meta=meta,
        )


def save_model(bundle: ModelBundle, path) -> None:
    """Write a model to ``path`` as a compressed npz archive."""
    evol = bundle.evol
    if getattr(evol, "Qg", 0):
        raise ValueError("models with source terms cannot be persisted")
    meta = dict(bundle.meta)
    meta.setdefault("format_version", FORMAT_VERSION)
    meta["beta_lb"] = float(bundle.beta_LB)
    meta["rho_trained"] = [float(x) for x in bundle.rho_trained]
    meta["rho_domain"] = [float(x) for x in bundle.rho_domain]
    meta["theta_names"] = list(evol.theta_names)
    meta["N0"] = int(evol.N0)
    meta["N1"] = int(evol.N1)
    meta["status"] = evol.status
    arrays = {
        "meta_json": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        "config_text": np.frombuffer(bundle.config.to_text().encode(), dtype=np.uint8),
        "knots": bundle.knots.array,
        "init_basis": np.asarray(bundle.init_rb.basis, dtype=float),
        "eigenvalues": (
            np.asarray(bundle.init_rb.eigenvalues, dtype=float)
            if bundle.init_rb.eigenvalues is not None
            else np.zeros(0)
        ),
        "evol_basis": (
            np.stack(evol.basis) if evol.N1 else np.zeros((0, 0, 0))
        ),
        "G_yy": evol.G_yy,
        "G_fy": evol.G_fy,
        "G_ff": evol.G_ff,
        "Theta": bundle.online_init.Theta,
        "G_B": bundle.online_init.G_B,
    }
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_model(path) -> ModelBundle:
    """Read a model written by :func:`save_model`.

    Raises ModelFormatError for missing files, foreign archives, or a
    format version this code does not understand.
    """
    import os
    import zipfile

    if not os.path.exists(path):
        raise ModelFormatError(f"model file {path} does not exist")
    try:
        if not zipfile.is_zipfile(path):
            raise ModelFormatError(f"{path} is not a model file (expected an npz archive)")
    except OSError as exc:
        raise ModelFormatError(f"cannot read model {path}: {exc}") from None
    try:
        data = np.load(path)
    except (OSError, ValueError) as exc:
        raise ModelFormatError(f"cannot read model {path}: {exc}") from None
    try:
        required = {"meta_json", "config_text", "knots", "init_basis",
                    "evol_basis", "G_yy", "G_fy", "G_ff", "Theta", "G_B"}
        missing = required - set(data.files)
        if missing:
            raise ModelFormatError(
                f"{path} is not a model file (missing {sorted(missing)})"
            )
        try:
            meta = json.loads(bytes(data["meta_json"]).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ModelFormatError(f"corrupt model metadata: {exc}") from None
        version = meta.get("format_version")
        if version != FORMAT_VERSION:
            raise ModelFormatError(
                f"model format version {version} not supported "
                f"(this build reads version {FORMAT_VERSION})"
            )
        config = RunConfig.from_text(bytes(data["config_text"]).decode())
        knots = BezierKnots(tuple(float(v) for v in data["knots"]))
        eig = data["eigenvalues"]
        init_rb = InitRB(
            basis=np.asarray(data["init_basis"], dtype=float),
            provenance=meta.get("provenance", "pod"),
            eigenvalues=None if eig.size == 0 else np.asarray(eig, dtype=float),
            rel_truncation=float(meta.get("rel_truncation", 0.0)),
        )
        log = [
            GreedyEntry(
                iteration=int(e["iteration"]), cand_index=int(e["cand_index"]),
                rho=float(e["rho"]), estimator=float(e["estimator"]),
            )
            for e in meta.get("greedy_log", [])
        ]
        evol_basis = np.asarray(data["evol_basis"], dtype=float)
        evol = EvolRB.from_blocks(
            Qb=len(meta["theta_names"]),
            N0=int(meta["N0"]),
            theta_names=meta["theta_names"],
            G_ff=data["G_ff"],
            G_fy=data["G_fy"],
            G_yy=data["G_yy"],
            basis=list(evol_basis) if evol_basis.size else [],
            log=log,
            status=meta.get("status", "loaded"),
        )
        online_init = OnlineInitMap(
            Theta=np.asarray(data["Theta"], dtype=float),
            G_B=np.asarray(data["G_B"], dtype=float),
        )
        return ModelBundle(
            config=config,
            knots=knots,
            init_rb=init_rb,
            evol=evol,
            online_init=online_init,
            beta_LB=float(meta["beta_lb"]),
            rho_trained=tuple(meta["rho_trained"]),
            rho_domain=tuple(meta["rho_domain"]),
            meta=meta,
        )
    finally:
        data.close()
