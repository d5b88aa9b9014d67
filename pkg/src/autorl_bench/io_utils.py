"""Atomic file output and run manifests."""

from __future__ import annotations

import datetime as _dt
import json
import os
import platform
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__

MANIFEST = "manifest.json"


def atomic_write_bytes(path, data: bytes) -> Path:
    """Write to a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, command: str, params: dict, master_seed, started: str, outputs: list) -> Path:
    """One ``manifest.json`` per output directory: enough to replay the run."""
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "params": params,
        "tool_version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "master_seed": master_seed,
        "started": started,
        "finished": now(),
        "outputs": sorted(str(Path(p).relative_to(out_dir)) if Path(p).is_relative_to(out_dir) else str(p)
                          for p in outputs),
    }
    return atomic_write_text(out_dir / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def read_manifest(out_dir) -> dict:
    return json.loads((Path(out_dir) / MANIFEST).read_text())
