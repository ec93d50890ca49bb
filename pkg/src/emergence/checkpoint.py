"""Versioned JSON checkpoints: shape-tagged flat float arrays per named parameter.

Floats are written with ``repr`` precision, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

FORMAT = "emergence-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _flatten(state: dict) -> dict:
    out = {}
    for agent, params in state.items():
        for name, arr in params.items():
            arr = np.asarray(arr, dtype=np.float64)
            out[f"{agent}.{name}"] = {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
    return out


def encode(state: dict, step: int, config_hash: str) -> str:
    doc = {"format": FORMAT, "version": VERSION, "config_hash": config_hash, "step": int(step),
           "params": _flatten(state)}
    return json.dumps(doc) + "\n"


def save_checkpoint(path, state: dict, step: int, config_hash: str) -> None:
    text = encode(state, step, config_hash)
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns (state, meta) where state is {agent: {param: array}}."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is corrupt: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not an {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    params = doc.get("params")
    if not isinstance(params, dict):
        raise CheckpointError(f"{path}: missing parameter table")
    state: dict[str, dict] = {}
    for key, entry in params.items():
        try:
            agent, name = key.split(".", 1)
            shape = tuple(int(s) for s in entry["shape"])
            data = np.asarray(entry["data"], dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise CheckpointError(f"{path}: malformed entry {key!r}: {exc}") from None
        if data.ndim != 1 or data.size != math.prod(shape):
            raise CheckpointError(f"{path}: entry {key!r} has {data.size} values for shape {shape}")
        if not np.all(np.isfinite(data)):
            raise CheckpointError(f"{path}: entry {key!r} holds non-finite values")
        state.setdefault(agent, {})[name] = data.reshape(shape)
    meta = {"config_hash": doc.get("config_hash"), "step": doc.get("step")}
    return state, meta
