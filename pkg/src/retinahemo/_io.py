"""Small serialization helpers; every persisted float carries 12 significant digits."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FLOAT_FORMAT = "%.12g"


def sig12(x) -> float:
    return float(FLOAT_FORMAT % float(x))


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return sig12(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _round_floats(obj):
    if isinstance(obj, float):
        return sig12(obj)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist())
    if isinstance(obj, np.floating):
        return sig12(obj)
    return obj


def dump_json(path, payload) -> None:
    text = json.dumps(_round_floats(payload), indent=1, default=_default)
    Path(path).write_text(text + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())
