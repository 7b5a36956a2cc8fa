"""Checkpoint directories: a JSON manifest pointing at one PVT1 file per tensor.

Optimizer moments live under the reserved name prefix ``__adam__/``.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from ..tensor import read_pvt, write_pvt
from .optim import AdamState

OPT_PREFIX = "__adam__"
MANIFEST = "manifest.json"


def _filename(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name) + ".pvt"


def save_checkpoint(directory, params: dict[str, np.ndarray],
                    optimizers: dict[str, AdamState] | None = None, meta: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = dict(params)
    steps = {}
    for group, st in (optimizers or {}).items():
        steps[group] = st.t
        for name, arr in st.m.items():
            tensors[f"{OPT_PREFIX}/{group}/m/{name}"] = arr
        for name, arr in st.v.items():
            tensors[f"{OPT_PREFIX}/{group}/v/{name}"] = arr
    files = {}
    for name in sorted(tensors):
        fname = _filename(name)
        if fname in files.values():
            raise ValueError(f"file name collision for tensor {name!r}")
        write_pvt(directory / fname, np.asarray(tensors[name]))
        files[name] = fname
    manifest = {"format": "pvgan-checkpoint-1", "tensors": files, "optimizer_steps": steps,
                "meta": meta or {}}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return directory


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict[str, AdamState], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    params: dict[str, np.ndarray] = {}
    opts = {group: AdamState(t) for group, t in manifest["optimizer_steps"].items()}
    for name, fname in manifest["tensors"].items():
        arr = read_pvt(directory / fname)
        if name.startswith(OPT_PREFIX + "/"):
            _, group, which, pname = name.split("/", 3)
            getattr(opts[group], which)[pname] = arr
        else:
            params[name] = arr
    return params, opts, manifest["meta"]
