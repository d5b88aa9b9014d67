"""HPO-facing training sessions: ``step(config, budget) -> (objectives, state features)``.

Static sessions train every step from scratch; dynamic sessions keep one
training state alive and hot-swap hyperparameters between steps. Dynamic
sessions also checkpoint, restore and duplicate the state under their own
checkpoint directory, which is guarded by a lockfile so two live sessions
cannot share it.

The exploration schedule horizon of every run is the session's total budget,
so a static step of ``b`` steps reproduces the landscape record at fraction
``b / total_budget`` for the same configuration and seed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
import shutil
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import filelock
import numpy as np

from . import algos
from . import config_space as cs
from .algos import AlgorithmError, TrainingDiverged, TrainingState
from .envs import get_spec
from .seeding import derive_seed

MODES = ("static", "dynamic")
OBJECTIVES = ("mean_return", "runtime_seconds")
STATE_FEATURES = ("grad_norm_mean", "grad_norm_var", "loss_mean")
LOG_COLUMNS = ["step_index", "mode", "config_hash", "budget", "steps", "cumulative_steps", "mean_return",
               "runtime_seconds", "diverged", *STATE_FEATURES]


class SessionError(ValueError):
    pass


@dataclass
class AutoRLEnvConfig:
    algorithm: str
    env_name: str
    total_budget: int | None = None  # None: the registry budget for this algorithm
    mode: str = "static"
    n_eval_episodes: int = 128
    objectives: tuple[str, ...] = OBJECTIVES
    state_features: tuple[str, ...] = STATE_FEATURES
    checkpoint_dir: str | os.PathLike | None = None  # None: a private temporary directory
    checkpointing: bool = True
    log_path: str | os.PathLike | None = None

    def resolved(self) -> "AutoRLEnvConfig":
        """Validate and fill in registry defaults; raises SessionError."""
        if self.mode not in MODES:
            raise SessionError(f"mode must be one of {MODES}, got {self.mode!r}")
        try:
            spec = get_spec(self.env_name)
            algos.space_for(self.algorithm, spec.name)
        except (KeyError, AlgorithmError) as e:
            raise SessionError(str(e)) from e
        total = spec.timesteps_for(self.algorithm) if self.total_budget is None else int(self.total_budget)
        if total < 1:
            raise SessionError("total_budget must be >= 1")
        if self.n_eval_episodes < 1:
            raise SessionError("n_eval_episodes must be >= 1")
        if self.mode == "dynamic" and not self.checkpointing:
            raise SessionError("dynamic mode requires checkpointing")
        bad = [o for o in self.objectives if o not in OBJECTIVES]
        bad += [f for f in self.state_features if f not in STATE_FEATURES]
        if bad:
            raise SessionError(f"unknown objectives/features: {bad}")
        return AutoRLEnvConfig(self.algorithm, spec.name, total, self.mode, int(self.n_eval_episodes),
                               tuple(self.objectives), tuple(self.state_features), self.checkpoint_dir,
                               self.checkpointing, self.log_path)


@dataclass
class StepResult:
    objectives: dict
    features: dict  # None values for slices without any gradient update
    steps: int
    cumulative_steps: int
    diverged: bool = False
    reason: str = ""


def state_checksum(state: TrainingState) -> str:
    """Digest of every network parameter and optimizer moment, in a fixed key order."""
    h = hashlib.sha256()
    for tree in (state.nets, state.opts):
        for name in sorted(tree):
            item = tree[name]
            arrays = item.arrays() if hasattr(item, "arrays") else {**item.m, **{f"v.{k}": v for k, v in item.v.items()}}
            for key in sorted(arrays):
                h.update(f"{name}.{key}".encode())
                h.update(np.ascontiguousarray(arrays[key], dtype=np.float64).tobytes())
    return h.hexdigest()


class AutoRLSession:
    """One HPO-facing training session; use ``reset`` to create."""

    def __init__(self, cfg: AutoRLEnvConfig, seed: int):
        self.cfg = cfg.resolved()
        self.seed = int(seed)
        self.eval_seed = derive_seed(self.seed, "eval")
        self.space = algos.space_for(self.cfg.algorithm, self.cfg.env_name)
        self.floor = get_spec(self.cfg.env_name).floor
        self.state: TrainingState | None = None
        self.consumed = 0  # env steps consumed by the trainer over the whole session
        self.n_steps = 0
        self.diverged = False
        self.log: list[dict] = []
        self._tmp = None
        self._lock = None
        self._ckpt_counter = 0
        root = self.cfg.checkpoint_dir
        if self.cfg.checkpointing and self.cfg.mode == "dynamic":
            if root is None:
                self._tmp = tempfile.mkdtemp(prefix="arlb-session-")
                root = self._tmp
            self.root = Path(root)
            self.root.mkdir(parents=True, exist_ok=True)
            self._lock = filelock.FileLock(str(self.root / ".session.lock"))
            try:
                self._lock.acquire(timeout=0)
            except filelock.Timeout as e:
                raise SessionError(f"checkpoint directory {self.root} is in use by another session") from e
            self._ckpt_counter = len(self._checkpoint_ids())
        else:
            self.root = Path(root) if root is not None else None
        self._log_path = Path(self.cfg.log_path) if self.cfg.log_path else None
        if self._log_path is None and self.root is not None and self._lock is not None:
            self._log_path = self.root / "session_log.csv"

    # ------------------------------------------------------------------ steps

    @property
    def remaining(self) -> int:
        return self.cfg.total_budget - self.consumed if self.cfg.mode == "dynamic" else self.cfg.total_budget

    def step(self, config: cs.Configuration | dict, budget: int) -> StepResult:
        budget = int(budget)
        if budget < 1:
            raise SessionError("budget must be >= 1")
        if isinstance(config, dict):
            config = self.space.make(config)
        problems = cs.validate(self.space, config)
        if problems:
            raise SessionError("invalid configuration: " + "; ".join(problems))
        if self.cfg.mode == "dynamic":
            if self.consumed + budget > self.cfg.total_budget:
                raise SessionError(f"budget overrun: {self.consumed} consumed + {budget} requested "
                                   f"> total {self.cfg.total_budget}")
        elif budget > self.cfg.total_budget:
            raise SessionError(f"budget {budget} exceeds total budget {self.cfg.total_budget}")

        if self.cfg.mode == "static" or self.state is None:
            self.state = algos.init(self.cfg.algorithm, config, self.cfg.env_name, self.seed, self.cfg.total_budget)
            self.diverged = False
        elif not self.diverged:
            try:
                algos.apply_config(self.state, config)
            except AlgorithmError as e:
                raise SessionError(str(e)) from e

        start = self.state.step
        metrics = algos.Metrics()
        reason = ""
        t0 = time.perf_counter()
        if not self.diverged:
            try:
                _, metrics = algos.train(self.state, budget)
            except TrainingDiverged as e:
                self.diverged, reason, metrics = True, e.reason, e.metrics
        runtime = time.perf_counter() - t0
        steps = self.state.step - start
        self.consumed = self.state.step if self.cfg.mode == "dynamic" else self.consumed + steps

        if self.diverged:
            mean_return = float(self.floor)
            reason = reason or "state diverged in an earlier step"
        else:
            mean_return = algos.evaluate(self.state, self.cfg.n_eval_episodes, self.eval_seed)
        all_obj = {"mean_return": mean_return, "runtime_seconds": runtime}
        all_feat = {
            "grad_norm_mean": metrics.grad_norm_mean if metrics.n_updates else None,
            "grad_norm_var": metrics.grad_norm_var if metrics.n_updates else None,
            "loss_mean": metrics.loss_mean if metrics.n_updates else None,
        }
        result = StepResult(
            objectives={k: all_obj[k] for k in self.cfg.objectives},
            features={k: all_feat[k] for k in self.cfg.state_features},
            steps=steps,
            cumulative_steps=self.consumed,
            diverged=self.diverged,
            reason=reason,
        )
        self._record(config, budget, result, all_obj, all_feat)
        self.n_steps += 1
        return result

    def _record(self, config, budget, result: StepResult, obj: dict, feat: dict) -> None:
        row = {
            "step_index": self.n_steps, "mode": self.cfg.mode, "config_hash": cs.config_hash(config),
            "budget": budget, "steps": result.steps, "cumulative_steps": result.cumulative_steps,
            "mean_return": obj["mean_return"], "runtime_seconds": obj["runtime_seconds"],
            "diverged": int(result.diverged), **feat,
        }
        self.log.append(row)
        if self._log_path is not None:
            new = not self._log_path.exists()
            with open(self._log_path, "a", newline="") as f:
                w = csv.DictWriter(f, LOG_COLUMNS)
                if new:
                    w.writeheader()
                w.writerow({k: "" if v is None else v for k, v in row.items()})

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.log:
            w.writerow({k: "" if v is None else v for k, v in row.items()})
        return buf.getvalue()

    # ------------------------------------------------------------ checkpoints

    def _require_dynamic(self) -> None:
        if self.cfg.mode != "dynamic":
            raise SessionError("checkpoints are only supported in dynamic mode")
        if self._lock is None:
            raise SessionError("session is closed")

    def _checkpoint_ids(self) -> list[str]:
        d = self.root / "checkpoints"
        return sorted(p.name for p in d.iterdir() if (p / "manifest.json").exists()) if d.exists() else []

    def checkpoint_path(self, ckpt_id: str) -> Path:
        self._require_dynamic()
        path = self.root / "checkpoints" / ckpt_id
        if not (path / "manifest.json").exists():
            raise SessionError(f"unknown checkpoint id {ckpt_id!r}")
        return path

    def export(self, ckpt_id: str) -> Path:
        """Handle another session can ``adopt``."""
        return self.checkpoint_path(ckpt_id)

    def _new_id(self, tag: str | None) -> str:
        self._ckpt_counter += 1
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in (tag or ""))
        return f"{self._ckpt_counter:05d}" + (f"-{safe}" if safe else "")

    def checkpoint(self, tag: str | None = None) -> str:
        self._require_dynamic()
        if self.state is None:
            raise SessionError("nothing to checkpoint before the first step")
        ckpt_id = self._new_id(tag)
        meta = {"session": {"consumed": self.consumed, "diverged": self.diverged, "seed": self.seed}}
        algos.save_checkpoint(self.state, self.root / "checkpoints" / ckpt_id, meta)
        return ckpt_id

    def restore(self, ckpt_id: str) -> None:
        path = self.checkpoint_path(ckpt_id)
        state, manifest = algos.load_checkpoint(path, with_manifest=True)
        if state.algorithm != self.cfg.algorithm or state.env_name != self.cfg.env_name:
            raise SessionError(f"checkpoint {ckpt_id} belongs to {state.algorithm}/{state.env_name}")
        info = manifest.get("session", {})
        self.state = state
        self.consumed = int(info.get("consumed", state.step))
        self.diverged = bool(info.get("diverged", False))

    def duplicate(self, ckpt_id: str) -> str:
        """Independent copy of a checkpoint under a new id."""
        src = self.checkpoint_path(ckpt_id)
        new_id = self._new_id(f"dup-{ckpt_id}")
        _copy_dir(src, self.root / "checkpoints" / new_id)
        return new_id

    def adopt(self, path: str | os.PathLike, tag: str | None = None) -> str:
        """Copy a checkpoint directory from elsewhere (e.g. another session) into this store."""
        self._require_dynamic()
        path = Path(path)
        if not (path / "manifest.json").exists():
            raise SessionError(f"no checkpoint at {path}")
        new_id = self._new_id(tag or "adopted")
        _copy_dir(path, self.root / "checkpoints" / new_id)
        return new_id

    def checksum(self) -> str | None:
        return state_checksum(self.state) if self.state is not None else None

    # ------------------------------------------------------------- lifecycle

    def close(self) -> None:
        if self._lock is not None:
            self._lock.release()
            self._lock = None
        if self._tmp is not None:
            shutil.rmtree(self._tmp, ignore_errors=True)
            self._tmp = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def reset(cfg: AutoRLEnvConfig, seed: int) -> AutoRLSession:
    """Fresh session; a dynamic session creates its training state on the first step."""
    return AutoRLSession(cfg, seed)


def _copy_dir(src: Path, dst: Path) -> None:
    if dst.exists():
        raise SessionError(f"checkpoint {dst.name} already exists")
    tmp = dst.parent / f".tmp-{dst.name}"
    shutil.copytree(src, tmp)
    os.replace(tmp, dst)


__all__ = [
    "AutoRLEnvConfig", "AutoRLSession", "SessionError", "StepResult", "MODES", "OBJECTIVES",
    "STATE_FEATURES", "reset", "state_checksum",
]
