"""Model checkpoints as structured text (JSON).

A checkpoint records the architecture metadata, every parameter array
flattened in row-major order with an explicit shape header, the batch-norm
running statistics, the grid density used for curve quadrature, and
(optionally) the preprocessing statistics needed to transform raw data.

Top-level keys::

    format              "cthazard-checkpoint-v1"
    architecture        {covariate_dim, risks, hidden, encoder, embed_dim}
    parameters          {name: {shape: [...], data: [row-major floats]}}
    batchnorm           {bn1: {mean, var}, bn2: {mean, var}}
    grid_points         integration mesh density for predictions
    preprocess          PreprocessStats dict or null
"""

from __future__ import annotations

import json

import numpy as np

from .data import PreprocessStats
from .exceptions import InputError
from .model import HazardNetwork

FORMAT = "cthazard-checkpoint-v1"


def _array_entry(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}


def _array_from(entry: dict) -> np.ndarray:
    return np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])


def save_checkpoint(
    path,
    net: HazardNetwork,
    grid_points: int,
    preprocess: PreprocessStats | None = None,
) -> None:
    doc = {
        "format": FORMAT,
        "architecture": {
            "covariate_dim": net.covariate_dim,
            "risks": net.risks,
            "hidden": list(net.hidden),
            "encoder": net.encoder,
            "embed_dim": net.embed_dim,
        },
        "parameters": {p.name: _array_entry(p.value) for p in net.params},
        "batchnorm": {
            "bn1": {"mean": _array_entry(net.bn1.running_mean), "var": _array_entry(net.bn1.running_var)},
            "bn2": {"mean": _array_entry(net.bn2.running_mean), "var": _array_entry(net.bn2.running_var)},
        },
        "grid_points": int(grid_points),
        "preprocess": None if preprocess is None else preprocess.to_dict(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> tuple[HazardNetwork, int, PreprocessStats | None]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"checkpoint not found: {path}")
    except json.JSONDecodeError as exc:
        raise InputError(f"checkpoint {path} is not valid JSON: {exc}")
    if doc.get("format") != FORMAT:
        raise InputError(f"checkpoint {path}: unknown format {doc.get('format')!r}")
    arch = doc["architecture"]
    net = HazardNetwork(
        covariate_dim=int(arch["covariate_dim"]),
        risks=int(arch["risks"]),
        hidden=tuple(arch["hidden"]),
        encoder=arch["encoder"],
        embed_dim=int(arch["embed_dim"]),
        rng=np.random.default_rng(0),
    )
    stored = doc["parameters"]
    expected = set(net.params.names())
    if set(stored) != expected:
        raise InputError(
            f"checkpoint {path}: parameter names {sorted(stored)} do not match architecture {sorted(expected)}"
        )
    net.params.load_values({name: _array_from(entry) for name, entry in stored.items()})
    bn = doc["batchnorm"]
    net.bn1.restore({"mean": _array_from(bn["bn1"]["mean"]), "var": _array_from(bn["bn1"]["var"])})
    net.bn2.restore({"mean": _array_from(bn["bn2"]["mean"]), "var": _array_from(bn["bn2"]["var"])})
    preprocess = None if doc.get("preprocess") is None else PreprocessStats.from_dict(doc["preprocess"])
    return net, int(doc["grid_points"]), preprocess
