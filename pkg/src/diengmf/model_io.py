"""Flow model (de)serialization.

A model is a single self-describing JSON document: architecture fields,
per-layer masks and permutations, every weight array as base64-encoded
row-major float64 bytes, the global log-scale, and the calibrated
log-threshold (null until calibration).  The ``format`` tag is checked on
load and unknown versions are rejected.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .flow import Flow, FlowConfig

FORMAT_TAG = "diengmf-flow-v1"


@dataclass
class ModelInfo:
    """Everything stored alongside the weights."""

    log_tau: float | None
    provenance: dict = field(default_factory=dict)


def _encode(array: np.ndarray) -> dict:
    data = np.ascontiguousarray(array, dtype=np.float64)
    return {
        "shape": list(data.shape),
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def _decode(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    return np.frombuffer(raw, dtype=np.float64).reshape(blob["shape"]).copy()


def _named_arrays(flow: Flow) -> dict:
    arrays = {}
    for i, (coupling, plu) in enumerate(zip(flow.couplings, flow.plus)):
        mlp = coupling.conditioner
        for j, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            arrays[f"coupling{i}_w{j}"] = w
            arrays[f"coupling{i}_b{j}"] = b
        arrays[f"plu{i}_lower"] = plu.l_raw
        arrays[f"plu{i}_upper"] = plu.u_raw
        arrays[f"plu{i}_logdiag"] = plu.log_diag
    return arrays


def save_model(path, flow: Flow, log_tau: float | None = None,
               provenance: dict | None = None) -> None:
    cfg = flow.config
    document = {
        "format": FORMAT_TAG,
        "dim": cfg.dim,
        "n_layers": cfg.n_layers,
        "n_bins": cfg.n_bins,
        "depth": cfg.depth,
        "width": cfg.width,
        "bound": cfg.bound,
        "masks": [c.mask_idx.tolist() for c in flow.couplings],
        "permutations": [p.permutation.tolist() for p in flow.plus],
        "log_scale": float(flow.log_scale.data),
        "log_tau": None if log_tau is None else float(log_tau),
        "provenance": provenance or {},
        "arrays": {name: _encode(t.data) for name, t in _named_arrays(flow).items()},
    }
    Path(path).write_text(json.dumps(document, indent=1))


def load_model(path) -> tuple[Flow, ModelInfo]:
    try:
        document = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read model file {path}: {exc}") from exc
    if document.get("format") != FORMAT_TAG:
        raise ConfigurationError(
            f"unsupported model format {document.get('format')!r} in {path}"
        )
    cfg = FlowConfig(
        dim=document["dim"],
        n_layers=document["n_layers"],
        n_bins=document["n_bins"],
        depth=document["depth"],
        width=document["width"],
        bound=document["bound"],
    )
    masks = [np.asarray(m, dtype=int) for m in document["masks"]]
    perms = [np.asarray(p, dtype=int) for p in document["permutations"]]
    flow = Flow(cfg, masks, perms, rng=None, log_scale=document["log_scale"])
    arrays = _named_arrays(flow)
    stored = document["arrays"]
    if set(stored) != set(arrays):
        raise ConfigurationError(f"model file {path} has inconsistent weight arrays")
    for name, tensor in arrays.items():
        loaded = _decode(stored[name])
        if loaded.shape != tensor.data.shape:
            raise ConfigurationError(
                f"array {name} has shape {loaded.shape}, expected {tensor.data.shape}"
            )
        tensor.data = loaded
    info = ModelInfo(log_tau=document["log_tau"], provenance=document["provenance"])
    return flow, info


def update_log_tau(path, log_tau: float) -> None:
    """Rewrite a model file in place with a calibrated threshold."""
    document = json.loads(Path(path).read_text())
    if document.get("format") != FORMAT_TAG:
        raise ConfigurationError(f"unsupported model format in {path}")
    document["log_tau"] = float(log_tau)
    Path(path).write_text(json.dumps(document, indent=1))
