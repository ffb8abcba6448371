"""Checkpoint files: an uncompressed numpy ``.npz`` archive with a JSON header.

Layout of every ``*.ckpt`` file:

* ``__header__`` -- uint8 array holding UTF-8 JSON (``format``, ``version``
  and caller-supplied fields such as kind, dims, counts, session index);
* one entry per named array, stored with its exact dtype and shape.

Arrays are written raw, so loading returns bit-identical values.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def save(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"format": "ckge-checkpoint", "version": FORMAT_VERSION, **header}
    payload = {"__header__": np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)}
    for name, arr in arrays.items():
        if name == "__header__":
            raise ValueError("reserved array name")
        payload[name] = np.asarray(arr)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **payload)
    tmp.replace(path)


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(bytes(data["__header__"]).decode("utf-8"))
        arrays = {k: data[k] for k in data.files if k != "__header__"}
    if header.get("format") != "ckge-checkpoint":
        raise ValueError(f"{path}: not a ckge checkpoint")
    return header, arrays
