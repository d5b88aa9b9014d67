"""Checkpoint directories: ``manifest.json`` plus one raw little-endian blob per array.

A state tree is any nesting of dicts/lists whose leaves are JSON scalars or
numpy arrays. Arrays are lifted out under dotted names (``nets.actor.layers.0.weight``)
and written as ``<name>.bin`` in float64 or int64; the manifest records the
original dtype and shape so loading reproduces every array bit for bit.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .. import __version__

FORMAT = "autorl-bench-checkpoint"
FORMAT_VERSION = 1
_ARRAY = "__array__"


class CheckpointError(RuntimeError):
    pass


def _storage_dtype(dtype: np.dtype) -> str:
    if dtype.kind == "f":
        return "<f8"
    if dtype.kind in "iub":
        return "<i8"
    raise CheckpointError(f"unsupported array dtype {dtype}")


def split_arrays(tree, prefix: str = "", arrays: dict | None = None):
    """Replace arrays in ``tree`` by references; returns (json tree, {name: array})."""
    arrays = {} if arrays is None else arrays
    if isinstance(tree, np.ndarray):
        name = prefix or "value"
        if name in arrays:
            raise CheckpointError(f"duplicate array name {name}")
        arrays[name] = tree
        return {_ARRAY: name}, arrays
    if isinstance(tree, dict):
        out = {}
        for k, v in tree.items():
            if not isinstance(k, str):
                raise CheckpointError(f"non-string key {k!r}")
            out[k], _ = split_arrays(v, f"{prefix}.{k}" if prefix else k, arrays)
        return out, arrays
    if isinstance(tree, (list, tuple)):
        return [split_arrays(v, f"{prefix}.{i}", arrays)[0] for i, v in enumerate(tree)], arrays
    if isinstance(tree, np.generic):
        return tree.item(), arrays
    if tree is None or isinstance(tree, (bool, int, float, str)):
        return tree, arrays
    raise CheckpointError(f"cannot serialise {type(tree).__name__} at {prefix}")


def join_arrays(tree, arrays: dict):
    if isinstance(tree, dict):
        if set(tree) == {_ARRAY}:
            if tree[_ARRAY] not in arrays:
                raise CheckpointError(f"checkpoint is missing array {tree[_ARRAY]!r}")
            return arrays[tree[_ARRAY]]
        return {k: join_arrays(v, arrays) for k, v in tree.items()}
    if isinstance(tree, list):
        return [join_arrays(v, arrays) for v in tree]
    return tree


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tree(path, tree, meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    skeleton, arrays = split_arrays(tree)
    index = {}
    for i, (name, arr) in enumerate(arrays.items()):
        fname = f"{i:05d}.bin"
        store = _storage_dtype(arr.dtype)
        _atomic_write(path / fname, np.ascontiguousarray(arr).astype(store).tobytes())
        index[name] = {"file": fname, "dtype": arr.dtype.str, "shape": list(arr.shape)}
    manifest = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "versions": {"autorl_bench": __version__, "numpy": np.__version__},
        **(meta or {}),
        "arrays": index,
        "state": skeleton,
    }
    # manifest last: a directory with a manifest is complete
    _atomic_write(path / "manifest.json", json.dumps(manifest, indent=1).encode())
    return path


def load_tree(path):
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError as e:
        raise CheckpointError(f"no checkpoint at {path}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupted manifest at {path}: {e}") from e
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint directory")
    if "arrays" not in manifest or "state" not in manifest:
        raise CheckpointError(f"corrupted manifest at {path}: missing arrays/state")
    arrays = {}
    for name, info in manifest["arrays"].items():
        dtype = np.dtype(info["dtype"])
        try:
            blob = (path / info["file"]).read_bytes()
        except FileNotFoundError as e:
            raise CheckpointError(f"checkpoint is missing array {name!r} ({info['file']})") from e
        raw = np.frombuffer(blob, dtype=_storage_dtype(dtype))
        if raw.size != int(np.prod(info["shape"], dtype=np.int64)):
            raise CheckpointError(f"array {name!r} has {raw.size} values, manifest says shape {info['shape']}")
        arrays[name] = raw.astype(dtype).reshape(info["shape"])
    return join_arrays(manifest["state"], arrays), manifest
