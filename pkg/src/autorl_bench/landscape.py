"""Landscape campaigns: train every (environment, Sobol configuration, seed) cell and
evaluate it at a list of budget fractions, then persist the records as CSV.

Each cell is one training run whose seed is ``derive_seed(master_seed, env, config_id, seed_index)``,
so any cell can be rerun in isolation. Evaluation at fraction ``f`` happens after
``round(f * total)`` steps of that run (the trainer rounds up to whole vector steps).
The exploration schedule horizon is the full budget, which makes the fraction-``f``
record equal a static session step of ``round(f * total)`` steps.

Completed cells are appended to a journal next to the output CSV so an interrupted
campaign resumes where it stopped; the final CSV is written in canonical order.
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import algos
from . import config_space as cs
from .envs import get_spec
from .io_utils import atomic_write_text
from .seeding import derive_seed

DEFAULT_FRACTIONS = (0.1, 0.25, 0.5, 0.75, 1.0)
NATIVE_COLUMNS = ["algorithm", "environment", "config_id", "seed", "budget_fraction", "steps", "mean_return",
                  "diverged", "runtime_seconds"]
# columns a foreign dataset must provide (after mapping); the rest get defaults
CORE_COLUMNS = ["environment", "config_id", "seed", "mean_return"]
_DEFAULTS = {"algorithm": "", "budget_fraction": "1.0", "steps": "0", "diverged": "0", "runtime_seconds": "nan"}
HP_PREFIX = "hp."
IGNORE = ("", "-")


class SchemaError(ValueError):
    pass


class CampaignError(ValueError):
    pass


@dataclass
class CampaignSpec:
    algorithm: str
    environments: list[str]
    n_configs: int = 256
    n_seeds: int = 10
    n_eval_episodes: int = 128
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    master_seed: int = 0
    sobol_seed: int = 0  # 0: unscrambled Sobol points
    budgets: dict[str, int] = field(default_factory=dict)  # per-env override of the registry budget

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        fr = self.fractions
        if not fr or any(not 0 < f <= 1 for f in fr) or any(b <= a for a, b in zip(fr, fr[1:])) or fr[-1] != 1.0:
            raise CampaignError("fractions must be strictly increasing in (0, 1] and end at 1.0")
        if self.n_configs < 1 or self.n_seeds < 1 or self.n_eval_episodes < 1:
            raise CampaignError("n_configs, n_seeds and n_eval_episodes must be >= 1")
        if not self.environments:
            raise CampaignError("no environments")

    def total_budget(self, env: str) -> int:
        return int(self.budgets.get(env, get_spec(env).timesteps_for(self.algorithm)))

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "environments": list(self.environments), "n_configs": self.n_configs,
                "n_seeds": self.n_seeds, "n_eval_episodes": self.n_eval_episodes, "fractions": list(self.fractions),
                "master_seed": self.master_seed, "sobol_seed": self.sobol_seed, "budgets": dict(self.budgets)}


@dataclass
class LandscapeRecord:
    algorithm: str
    environment: str
    config_id: int
    seed: int
    budget_fraction: float
    steps: int
    mean_return: float
    diverged: bool
    runtime_seconds: float
    hp: dict = field(default_factory=dict)

    @property
    def key(self) -> tuple:
        return (self.environment, self.config_id, self.seed, self.budget_fraction)


@dataclass
class LandscapeTable:
    records: list[LandscapeRecord]
    hp_names: list[str] = field(default_factory=list)
    missing: list[tuple] = field(default_factory=list)  # keys of cells that have no record

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return (isinstance(other, LandscapeTable) and self.hp_names == other.hp_names
                and _rows(self) == _rows(other))

    @property
    def environments(self) -> list[str]:
        return list(dict.fromkeys(r.environment for r in self.records))

    @property
    def config_ids(self) -> list[int]:
        return sorted({r.config_id for r in self.records})

    @property
    def fractions(self) -> list[float]:
        return sorted({r.budget_fraction for r in self.records})

    def index(self) -> dict[tuple, LandscapeRecord]:
        return {r.key: r for r in self.records}

    def config_matrix(self, environment: str | None = None) -> dict[int, dict]:
        """config_id -> hyperparameter values (first record seen, optionally for one environment)."""
        out = {}
        for r in self.records:
            if (environment is None or r.environment == environment) and r.config_id not in out:
                out[r.config_id] = dict(r.hp)
        return out

    def sorted(self, env_order: list[str] | None = None) -> "LandscapeTable":
        order = {e: i for i, e in enumerate(env_order or sorted(self.environments))}
        recs = sorted(self.records, key=lambda r: (order.get(r.environment, len(order)), r.environment,
                                                   r.config_id, r.seed, r.budget_fraction))
        return LandscapeTable(recs, list(self.hp_names), list(self.missing))


# ---------------------------------------------------------------------------
# running


def cell_seed(master_seed: int, env: str, config_id: int, seed_index: int) -> int:
    return derive_seed(master_seed, env, config_id, seed_index)


def campaign_configs(spec: CampaignSpec, env: str) -> list[cs.Configuration]:
    space = algos.space_for(spec.algorithm, env)
    return cs.sobol_sample(space, spec.n_configs, spec.sobol_seed)


def run_cell(algorithm: str, env: str, config: cs.Configuration, seed: int, total: int,
             fractions, n_eval_episodes: int) -> list[tuple[int, float, bool, float]]:
    """Train one run and evaluate at each fraction; returns (steps, mean_return, diverged, runtime) per fraction."""
    floor = get_spec(env).floor
    state = algos.init(algorithm, config, env, seed, total)
    eval_seed = derive_seed(seed, "eval")
    out = []
    diverged = False
    runtime = 0.0
    for f in fractions:
        target = int(round(f * total))
        if not diverged and target > state.step:
            t0 = time.perf_counter()
            try:
                algos.train(state, target - state.step)
            except algos.TrainingDiverged:
                diverged = True
            runtime += time.perf_counter() - t0
        ret = float(floor) if diverged else algos.evaluate(state, n_eval_episodes, eval_seed)
        out.append((target, ret, diverged, runtime))
    return out


def _cell_job(args):
    spec_d, env, config_id, config_values, seed_index = args
    spec = CampaignSpec(**spec_d)
    space = algos.space_for(spec.algorithm, env)
    config = cs.Configuration(config_values, space.name)
    seed = cell_seed(spec.master_seed, env, config_id, seed_index)
    res = run_cell(spec.algorithm, env, config, seed, spec.total_budget(env), spec.fractions, spec.n_eval_episodes)
    return [LandscapeRecord(spec.algorithm, env, config_id, seed_index, f, steps, ret, div, rt, dict(config_values))
            for f, (steps, ret, div, rt) in zip(spec.fractions, res)]


def grid_size(spec: CampaignSpec) -> int:
    return len(spec.environments) * spec.n_configs * spec.n_seeds * len(spec.fractions)


def run_campaign(spec: CampaignSpec, out_path=None, parallel: int = 1, resume: bool = True,
                 progress=None) -> LandscapeTable:
    """Run every missing cell; with ``out_path`` records are journaled and the final CSV written."""
    for env in spec.environments:
        algos.space_for(spec.algorithm, env)  # raises on incompatible pairs
    space0 = algos.space_for(spec.algorithm, spec.environments[0])
    existing: dict[tuple, LandscapeRecord] = {}
    journal = None
    if out_path is not None:
        out_path = Path(out_path)
        journal = out_path.with_name(out_path.name + ".journal")
        if resume:
            for p in (out_path, journal):
                if p.exists():
                    for r in load_csv(p, partial_ok=True).records:
                        existing[r.key] = r
        elif journal.exists():
            journal.unlink()
    jobs = []
    for env in spec.environments:
        configs = campaign_configs(spec, env)
        for cid, config in enumerate(configs):
            for s in range(spec.n_seeds):
                if all((env, cid, s, f) in existing for f in spec.fractions):
                    continue
                jobs.append((spec.to_dict(), env, cid, dict(config.values), s))

    def done(recs):
        for r in recs:
            existing[r.key] = r
        if journal is not None:
            _append_journal(journal, recs, space0.names)
        if progress is not None:
            progress(recs)

    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            futs = [ex.submit(_cell_job, j) for j in jobs]
            for fut in as_completed(futs):
                done(fut.result())
    else:
        for j in jobs:
            done(_cell_job(j))

    wanted = {(env, cid, s, f) for env in spec.environments for cid in range(spec.n_configs)
              for s in range(spec.n_seeds) for f in spec.fractions}
    recs = [existing[k] for k in wanted if k in existing]
    table = LandscapeTable(recs, list(space0.names)).sorted(list(spec.environments))
    table.missing = sorted(wanted - set(existing))
    if out_path is not None:
        write_csv(table, out_path)
        if journal.exists():
            journal.unlink()
    return table


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse_hp(s: str):
    if s == "":
        return None
    if s in ("true", "True"):
        return True
    if s in ("false", "False"):
        return False
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def _header(hp_names) -> list[str]:
    return NATIVE_COLUMNS + [HP_PREFIX + n for n in hp_names]


def _row(r: LandscapeRecord, hp_names) -> list[str]:
    return [r.algorithm, r.environment, str(r.config_id), str(r.seed), _fmt(r.budget_fraction), str(r.steps),
            _fmt(r.mean_return), "1" if r.diverged else "0", _fmt(r.runtime_seconds),
            *[_fmt(r.hp.get(n)) for n in hp_names]]


def _rows(table: LandscapeTable) -> list[list[str]]:
    return [_row(r, table.hp_names) for r in table.records]


def to_csv_text(table: LandscapeTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(table.hp_names))
    w.writerows(_rows(table))
    return buf.getvalue()


def write_csv(table: LandscapeTable, path) -> Path:
    return atomic_write_text(path, to_csv_text(table))


def _append_journal(path: Path, recs, hp_names) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if new:
            w.writerow(_header(hp_names))
        for r in recs:
            w.writerow(_row(r, hp_names))
        f.flush()
        os.fsync(f.fileno())


def read_mapping(path) -> dict[str, str]:
    """Two-column CSV ``foreign_name,native_name``; an empty or ``-`` native name drops the column."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if rows and [c.strip() for c in rows[0]] == ["foreign_name", "native_name"]:
        rows = rows[1:]
    out = {}
    for row in rows:
        if not row or not row[0].strip():
            continue
        if len(row) != 2:
            raise SchemaError(f"mapping rows need two columns, got {row}")
        out[row[0].strip()] = row[1].strip()
    return out


def load_csv(path, mapping: dict[str, str] | str | os.PathLike | None = None, partial_ok: bool = False,
             algorithm: str | None = None) -> LandscapeTable:
    """Read a native landscape CSV, or a foreign one through a column mapping.

    Native files must carry exactly the native columns plus ``hp.*`` columns.
    With a mapping, foreign columns are renamed first; only the core columns
    (environment, config_id, seed, mean_return) are then required and unmapped
    foreign columns are ignored.
    """
    if mapping is not None and not isinstance(mapping, dict):
        mapping = read_mapping(mapping)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            if partial_ok:
                return LandscapeTable([])
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)
    if mapping is not None:
        keep = [(i, mapping.get(h, h)) for i, h in enumerate(header)
                if mapping.get(h, h) not in IGNORE
                and (mapping.get(h, h) in NATIVE_COLUMNS or mapping.get(h, h).startswith(HP_PREFIX))]
        cols = [c for _, c in keep]
        missing = [c for c in CORE_COLUMNS if c not in cols]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing} after mapping")
        dup = sorted({c for c in cols if cols.count(c) > 1})
        if dup:
            raise SchemaError(f"{path}: columns mapped more than once: {dup}")
    else:
        keep = list(enumerate(header))
        cols = list(header)
        missing = [c for c in NATIVE_COLUMNS if c not in cols]
        extra = [c for c in cols if c not in NATIVE_COLUMNS and not c.startswith(HP_PREFIX)]
        if missing or extra:
            raise SchemaError(f"{path}: schema mismatch; missing columns {missing}, extra columns {extra}")
    hp_names = [c[len(HP_PREFIX):] for c in cols if c.startswith(HP_PREFIX)]
    records = []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(header):
            if partial_ok:
                continue  # torn journal line
            raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        d = dict(_DEFAULTS)
        hp = {}
        for i, c in keep:
            if c.startswith(HP_PREFIX):
                v = _parse_hp(row[i])
                if v is not None:
                    hp[c[len(HP_PREFIX):]] = v
            else:
                d[c] = row[i]
        try:
            rec = LandscapeRecord(
                algorithm=d["algorithm"] or (algorithm or ""),
                environment=d["environment"],
                config_id=int(float(d["config_id"])),
                seed=int(float(d["seed"])),
                budget_fraction=float(d["budget_fraction"]),
                steps=int(float(d["steps"])),
                mean_return=float(d["mean_return"]) if d["mean_return"] != "" else math.nan,
                diverged=d["diverged"].strip().lower() in ("1", "true"),
                runtime_seconds=float(d["runtime_seconds"]) if d["runtime_seconds"] != "" else math.nan,
                hp=hp,
            )
        except ValueError as e:
            raise SchemaError(f"{path}:{lineno}: {e}") from e
        records.append(rec)
    return LandscapeTable(records, hp_names)


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class ReturnMatrix:
    configs: list[int]
    environments: list[str]
    values: np.ndarray  # (n_configs, n_envs); NaN marks a missing cell
    counts: np.ndarray  # seeds contributing to each cell


def mean_return_matrix(table: LandscapeTable, fraction: float = 1.0, algorithm: str | None = None,
                       environments: list[str] | None = None) -> ReturnMatrix:
    """r[config, env] = mean over seeds of the per-seed evaluation means at ``fraction``."""
    recs = [r for r in table.records if r.budget_fraction == fraction
            and (algorithm is None or r.algorithm == algorithm)]
    if not recs:
        raise CampaignError(f"no records at budget fraction {fraction}")
    envs = environments or list(dict.fromkeys(r.environment for r in recs))
    configs = sorted({r.config_id for r in recs})
    ci = {c: i for i, c in enumerate(configs)}
    ei = {e: j for j, e in enumerate(envs)}
    sums = np.zeros((len(configs), len(envs)))
    counts = np.zeros((len(configs), len(envs)), dtype=np.int64)
    for r in recs:
        j = ei.get(r.environment)
        if j is None or not math.isfinite(r.mean_return):
            continue
        sums[ci[r.config_id], j] += r.mean_return
        counts[ci[r.config_id], j] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return ReturnMatrix(configs, envs, values, counts)


def landscape_extremes(table: LandscapeTable, fraction: float = 1.0) -> dict[str, tuple[float, float]]:
    """Per environment (min, max) of the seed-averaged returns."""
    m = mean_return_matrix(table, fraction)
    return {e: (float(np.nanmin(m.values[:, j])), float(np.nanmax(m.values[:, j])))
            for j, e in enumerate(m.environments)}


__all__ = [
    "CORE_COLUMNS", "CampaignError", "CampaignSpec", "DEFAULT_FRACTIONS", "LandscapeRecord", "LandscapeTable",
    "NATIVE_COLUMNS", "ReturnMatrix", "SchemaError", "campaign_configs", "cell_seed", "grid_size",
    "landscape_extremes", "load_csv", "mean_return_matrix", "read_mapping", "run_campaign", "run_cell",
    "to_csv_text", "write_csv",
]
