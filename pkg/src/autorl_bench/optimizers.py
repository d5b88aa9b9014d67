"""Random search, successive halving and population-based training over training sessions.

Static optimizers (RS, SHA) call an evaluator ``(config, budget, seed) -> Evaluation``;
``SessionEvaluator`` trains a fresh static session per call. PBT drives dynamic
sessions produced by a factory ``(member_index, seed) -> session`` and moves
training states between members through ``checkpoint``/``export``/``adopt``/``restore``.
``MockEvaluator`` and ``MockSession`` stand in for RL training in tests.

All optimizers maximise the objective. Results are ordered by trial id, and every
random choice is drawn from streams derived from the master seed.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import config_space as cs
from .seeding import derive_seed, make_rng

STATUSES = ("running", "done", "pruned", "diverged")
_TERMINAL = ("done", "pruned", "diverged")
STRUCTURAL = ("buffer_prio_sampling", "use_target_network")

PBT_TRUNCATION = 0.25
PBT_PERTURB = (0.8, 1.2)
PBT_RESAMPLE_PROB = 0.25
PBT_READY_DIVISOR = 16  # default ready interval = total budget / 16


class OptimizerError(ValueError):
    pass


@dataclass
class Evaluation:
    objective: float
    diverged: bool = False
    runtime: float = 0.0


@dataclass
class Trial:
    trial_id: int
    config: cs.Configuration
    budget: int = 0  # env steps consumed so far (per evaluation seed)
    history: list = field(default_factory=list)  # (round, budget of the slice, objective)
    status: str = "running"
    wallclock: float = 0.0

    @property
    def objective(self) -> float:
        return self.history[-1][2] if self.history else float("nan")

    def add(self, rnd: int, budget: int, objective: float, wallclock: float = 0.0) -> None:
        if budget < 0:
            raise OptimizerError("budget must be >= 0")
        self.budget += int(budget)
        self.history.append((rnd, int(budget), float(objective)))
        self.wallclock += wallclock

    def set_status(self, status: str) -> None:
        if status not in STATUSES:
            raise OptimizerError(f"unknown status {status!r}")
        if self.status in _TERMINAL and status != self.status:
            raise OptimizerError(f"trial {self.trial_id}: cannot go from {self.status} to {status}")
        self.status = status


@dataclass
class OptimizerTrace:
    method: str
    master_seed: int
    space: cs.ConfigurationSpace
    trials: list[Trial] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)  # one row per (trial, round) evaluation
    incumbent: list[tuple[int, float]] = field(default_factory=list)  # (cumulative budget, best objective)
    info: dict = field(default_factory=dict)
    _cum: int = 0
    _best: float = -math.inf

    def record(self, trial: Trial, rnd: int, budget: int, objective: float, status: str) -> None:
        self.rows.append({
            "trial_id": trial.trial_id, "round": rnd, "config_hash": cs.config_hash(trial.config),
            "config": trial.config, "budget": int(budget), "seed": self.master_seed,
            "objective": float(objective), "status": status,
        })
        self._cum += int(budget)
        if objective > self._best:
            self._best = float(objective)
        self.incumbent.append((self._cum, self._best))

    @property
    def total_budget(self) -> int:
        return self._cum

    @property
    def best_objective(self) -> float:
        return self._best

    @property
    def best_trial(self) -> Trial:
        """Highest final objective among trials that reached the largest budget; ties by trial id."""
        top = max(t.budget for t in self.trials)
        cands = [t for t in self.trials if t.budget == top]
        return min(cands, key=lambda t: (-t.objective, t.trial_id))


# ---------------------------------------------------------------------------
# evaluators


class SessionEvaluator:
    """Evaluates a configuration by a fresh static training session (picklable)."""

    def __init__(self, algorithm: str, env_name: str, total_budget: int | None = None, n_eval_episodes: int = 128):
        from .autorl_env import AutoRLEnvConfig

        self.cfg = AutoRLEnvConfig(algorithm, env_name, total_budget, "static", n_eval_episodes).resolved()

    @property
    def total_budget(self) -> int:
        return self.cfg.total_budget

    def __call__(self, config: cs.Configuration, budget: int, seed: int) -> Evaluation:
        from .autorl_env import reset

        session = reset(self.cfg, seed)
        r = session.step(config, budget)
        return Evaluation(r.objectives["mean_return"], r.diverged, r.objectives["runtime_seconds"])


class MockEvaluator:
    """Deterministic objective ``fn(config, budget, seed)`` without any RL training."""

    def __init__(self, fn: Callable[[cs.Configuration, int, int], float], total_budget: int = 1000):
        self.fn = fn
        self.total_budget = total_budget
        self.calls: list[tuple[str, int, int]] = []

    def __call__(self, config: cs.Configuration, budget: int, seed: int) -> Evaluation:
        self.calls.append((cs.config_hash(config), int(budget), int(seed)))
        return Evaluation(float(self.fn(config, budget, seed)))


class MockSession:
    """Dynamic-session stand-in: its state is a scalar accumulated from the configs it trained with.

    ``score_fn(config) -> float`` is the per-step reward; the reported objective is
    the accumulated state plus the current config's score, so both inherited state
    and the present hyperparameters matter.
    """

    def __init__(self, score_fn: Callable[[cs.Configuration], float], total_budget: int, seed: int = 0):
        self.score_fn = score_fn
        self.total_budget = total_budget
        self.seed = seed
        self.value = 0.0
        self.consumed = 0
        self._ids = 0
        self._local: dict[str, tuple[float, int]] = {}

    def step(self, config: cs.Configuration, budget: int):
        if self.consumed + budget > self.total_budget:
            raise OptimizerError("budget overrun")
        s = float(self.score_fn(config))
        self.value += s * budget / self.total_budget
        self.consumed += budget
        return _MockResult({"mean_return": self.value + s}, budget, self.consumed)

    def checkpoint(self, tag=None) -> str:
        self._ids += 1
        cid = f"{self._ids:05d}"
        self._local[cid] = (self.value, self.consumed)
        return cid

    def export(self, cid: str):
        return self._local[cid]

    def adopt(self, handle, tag=None) -> str:
        self._ids += 1
        cid = f"{self._ids:05d}"
        self._local[cid] = tuple(handle)
        return cid

    def restore(self, cid: str) -> None:
        self.value, self.consumed = self._local[cid]

    def checksum(self) -> str:
        return repr((self.value, self.consumed))

    def close(self) -> None:
        pass


@dataclass
class _MockResult:
    objectives: dict
    steps: int
    cumulative_steps: int
    diverged: bool = False


# ---------------------------------------------------------------------------
# helpers


def eval_seeds(master_seed: int, n: int) -> list[int]:
    """Training seeds shared by every configuration of one optimizer run."""
    return [derive_seed(master_seed, "eval-seed", j) for j in range(n)]


def _evaluate_all(evaluator, jobs: list[tuple], parallel: int) -> list[Evaluation]:
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            return list(ex.map(evaluator, *zip(*jobs)))
    return [evaluator(*job) for job in jobs]


def _mean_eval(evals: list[Evaluation]) -> tuple[float, bool, float]:
    return (float(np.mean([e.objective for e in evals])), all(e.diverged for e in evals),
            float(sum(e.runtime for e in evals)))


# ---------------------------------------------------------------------------
# random search


def random_search(space: cs.ConfigurationSpace, evaluator, n_trials: int, seeds_per_config: int = 3,
                  master_seed: int = 0, budget: int | None = None, parallel: int = 1) -> OptimizerTrace:
    """``n_trials`` uniform samples, each scored by the mean over ``seeds_per_config`` full runs."""
    if n_trials < 1:
        raise OptimizerError("n_trials must be >= 1")
    if seeds_per_config < 1:
        raise OptimizerError("seeds_per_config must be >= 1")
    budget = int(budget or evaluator.total_budget)
    rng = make_rng(master_seed, "random-search")
    configs = cs.random_sample(space, n_trials, rng)
    seeds = eval_seeds(master_seed, seeds_per_config)
    trace = OptimizerTrace("rs", master_seed, space, info={"seeds": seeds, "budget": budget})
    jobs = [(c, budget, s) for c in configs for s in seeds]
    evals = _evaluate_all(evaluator, jobs, parallel)
    for i, config in enumerate(configs):
        t0 = time.perf_counter()
        obj, div, rt = _mean_eval(evals[i * len(seeds):(i + 1) * len(seeds)])
        trial = Trial(i, config)
        trial.add(0, budget, obj, rt + time.perf_counter() - t0)
        trial.set_status("diverged" if div else "done")
        trace.trials.append(trial)
        trace.record(trial, 0, budget, obj, trial.status)
    return trace


# ---------------------------------------------------------------------------
# successive halving


def sha_schedule(eta: float, min_budget: int, max_budget: int, n_initial: int) -> list[tuple[int, int]]:
    """Rungs as (n_configs, budget): budgets ``min * eta**k`` up to ``max``, keeping the top 1/eta."""
    if eta <= 1:
        raise OptimizerError("eta must be > 1")
    if not 1 <= min_budget < max_budget:
        raise OptimizerError("need 1 <= min_budget < max_budget")
    if n_initial < eta:
        raise OptimizerError("n_initial must be >= eta")
    n_rungs = int(math.floor(math.log(max_budget / min_budget, eta) + 1e-9)) + 1
    rungs = []
    for k in range(n_rungs):
        b = max_budget if k == n_rungs - 1 else int(round(min_budget * eta**k))
        n = max(1, int(math.floor(n_initial / eta**k + 1e-9)))
        rungs.append((n, b))
    return rungs


def successive_halving(space: cs.ConfigurationSpace, evaluator, eta: float = 3, min_budget: int | None = None,
                       max_budget: int | None = None, n_initial: int = 9, seeds_per_config: int = 3,
                       master_seed: int = 0, parallel: int = 1) -> OptimizerTrace:
    """Random sampling plus the successive-halving scheduler; each rung retrains from scratch."""
    max_budget = int(max_budget or evaluator.total_budget)
    if min_budget is None:
        min_budget = max(1, int(round(max_budget / eta ** math.floor(math.log(n_initial, eta) + 1e-9))))
    rungs = sha_schedule(eta, int(min_budget), max_budget, n_initial)
    rng = make_rng(master_seed, "successive-halving")
    seeds = eval_seeds(master_seed, seeds_per_config)
    trials = [Trial(i, c) for i, c in enumerate(cs.random_sample(space, n_initial, rng))]
    trace = OptimizerTrace("sha", master_seed, space, trials=trials,
                           info={"rungs": rungs, "seeds": seeds, "eta": eta})
    alive = list(trials)
    for k, (n_keep, b) in enumerate(rungs):
        alive = alive[:n_keep] if k == 0 else alive
        jobs = [(t.config, b, s) for t in alive for s in seeds]
        evals = _evaluate_all(evaluator, jobs, parallel)
        for i, t in enumerate(alive):
            obj, div, rt = _mean_eval(evals[i * len(seeds):(i + 1) * len(seeds)])
            t.add(k, b, obj, rt)
            if div:
                t.set_status("diverged")
            trace.record(t, k, b, obj, "diverged" if div else ("done" if k == len(rungs) - 1 else "running"))
        if k == len(rungs) - 1:
            for t in alive:
                if t.status == "running":
                    t.set_status("done")
            break
        ranked = sorted(alive, key=lambda t: (-t.objective, t.trial_id))
        n_next = rungs[k + 1][0]
        promoted, dropped = ranked[:n_next], ranked[n_next:]
        for t in dropped:
            if t.status == "running":
                t.set_status("pruned")
        alive = sorted(promoted, key=lambda t: t.trial_id)
    return trace


# ---------------------------------------------------------------------------
# population-based training


def perturb(space: cs.ConfigurationSpace, config: cs.Configuration, rng: np.random.Generator,
            factors=PBT_PERTURB, resample_prob: float = PBT_RESAMPLE_PROB,
            frozen=STRUCTURAL) -> cs.Configuration:
    """Explore step: scale numeric values by a random factor (clamped), resample categoricals.

    The factor multiplies the raw value for linear and log-scale hyperparameters
    alike. Names in ``frozen`` keep their value. Hyperparameters that become
    active take their default; inactive ones are dropped.
    """
    values = dict(config.values)
    for d in space.defs:
        if d.name not in values or d.name in frozen:
            continue
        if d.kind in ("float", "int"):
            f = factors[int(rng.integers(len(factors)))]
            v = min(max(values[d.name] * f, d.lo), d.hi)
            values[d.name] = int(round(v)) if d.kind == "int" else float(v)
        elif rng.random() < resample_prob:
            values[d.name] = d.choices[int(rng.integers(len(d.choices)))]
    active = space.active_names(values)
    for d in space.defs:
        if d.name in active and d.name not in values:
            values[d.name] = d.default
    return cs.Configuration({k: v for k, v in values.items() if k in active}, config.space_id)


def pbt(space: cs.ConfigurationSpace, session_factory: Callable[[int, int], object], population: int,
        total_budget: int, ready_interval: int | None = None, truncation: float = PBT_TRUNCATION,
        perturb_factors=PBT_PERTURB, resample_prob: float = PBT_RESAMPLE_PROB, master_seed: int = 0,
        initial_configs: list[cs.Configuration] | None = None, frozen=STRUCTURAL) -> OptimizerTrace:
    """Synchronous PBT: every ``ready_interval`` steps the bottom ``truncation`` fraction copies a
    uniformly chosen top member's state and config, then perturbs the config.

    ``session_factory(i, seed)`` returns a dynamic session (``step``, ``checkpoint``,
    ``export``, ``adopt``, ``restore``, ``checksum``). The number of members replaced
    each round is ``max(1, floor(truncation * population))``.
    """
    if population < 2:
        raise OptimizerError("population must be >= 2")
    if not 0 < truncation <= 0.5:
        raise OptimizerError("truncation must lie in (0, 0.5]")
    ready_interval = int(ready_interval or total_budget // PBT_READY_DIVISOR)
    if ready_interval < 1:
        raise OptimizerError("ready_interval must be >= 1")
    n_rounds = total_budget // ready_interval
    if n_rounds < 1:
        raise OptimizerError("ready_interval exceeds the total budget")
    rng = make_rng(master_seed, "pbt")
    configs = list(initial_configs) if initial_configs else cs.random_sample(space, population, rng)
    if len(configs) != population:
        raise OptimizerError("need one initial configuration per member")
    seeds = [derive_seed(master_seed, "pbt-member", i) for i in range(population)]
    sessions = [session_factory(i, seeds[i]) for i in range(population)]
    trials = [Trial(i, c) for i, c in enumerate(configs)]
    n_cut = max(1, int(math.floor(truncation * population)))
    schedule = {i: [(0, dict(c.values))] for i, c in enumerate(configs)}
    exploits = []
    trace = OptimizerTrace("pbt", master_seed, space, trials=trials,
                           info={"ready_interval": ready_interval, "rounds": n_rounds, "schedule": schedule,
                                 "exploits": exploits, "seeds": seeds, "population": population})
    try:
        for rnd in range(n_rounds):
            scores = []
            for t, sess in zip(trials, sessions):
                t0 = time.perf_counter()
                r = sess.step(t.config, ready_interval)
                obj = float(r.objectives["mean_return"])
                t.add(rnd, ready_interval, obj, time.perf_counter() - t0)
                status = "diverged" if r.diverged else ("done" if rnd == n_rounds - 1 else "running")
                trace.record(t, rnd, ready_interval, obj, status)
                scores.append(obj)
            if rnd == n_rounds - 1:
                break
            order = sorted(range(population), key=lambda i: (-scores[i], i))
            top, bottom = order[:n_cut], order[-n_cut:]
            for loser in sorted(bottom):
                winner = top[int(rng.integers(len(top)))]
                src = sessions[winner]
                before = src.checksum()
                cid = src.checkpoint(f"round{rnd}")
                new_id = sessions[loser].adopt(src.export(cid), tag=f"from{winner}-round{rnd}")
                sessions[loser].restore(new_id)
                if src.checksum() != before:
                    raise OptimizerError("exploit mutated the source member")  # isolation guard
                new_cfg = perturb(space, trials[winner].config, rng, perturb_factors, resample_prob, frozen)
                trials[loser].config = new_cfg
                schedule[loser].append(((rnd + 1) * ready_interval, dict(new_cfg.values)))
                exploits.append({"round": rnd, "loser": loser, "winner": winner, "checkpoint": cid})
        for t in trials:
            if t.status == "running":
                t.set_status("done")
    finally:
        for sess in sessions:
            close = getattr(sess, "close", None)
            if close is not None:
                close()
    return trace


# ---------------------------------------------------------------------------
# persistence


def trace_columns(space: cs.ConfigurationSpace) -> list[str]:
    return ["trial_id", "round", "config_hash", *[f"hp.{n}" for n in space.names], "budget", "seed",
            "objective", "status"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trace_rows(trace: OptimizerTrace) -> list[dict]:
    out = []
    for row in trace.rows:
        r = {k: row[k] for k in ("trial_id", "round", "config_hash", "budget", "seed", "objective", "status")}
        for n in trace.space.names:
            r[f"hp.{n}"] = row["config"].get(n)
        out.append(r)
    return out


def write_trace(trace: OptimizerTrace, out_dir, extra_columns: dict | None = None,
                suffix: str = "") -> tuple[Path, Path]:
    """Write ``trace{suffix}.csv`` and ``incumbent{suffix}.csv`` atomically into ``out_dir``.

    ``extra_columns`` maps a column name to one value per trace row (e.g. normalised scores).
    """
    from .io_utils import atomic_write_text

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = trace_columns(trace.space) + list(extra_columns or {})
    lines = [",".join(cols)]
    for i, r in enumerate(trace_rows(trace)):
        for k, vals in (extra_columns or {}).items():
            r[k] = vals[i]
        lines.append(",".join(_csv_cell(_fmt(r[c])) for c in cols))
    tpath = atomic_write_text(out / f"trace{suffix}.csv", "\n".join(lines) + "\n")
    inc = ["cumulative_budget,best_objective"] + [f"{b},{_fmt(v)}" for b, v in trace.incumbent]
    ipath = atomic_write_text(out / f"incumbent{suffix}.csv", "\n".join(inc) + "\n")
    return tpath, ipath


def _csv_cell(s: str) -> str:
    return f'"{s}"' if ("," in s or '"' in s) else s


def read_incumbent(path) -> list[tuple[int, float]]:
    with open(path, newline="") as f:
        return [(int(r["cumulative_budget"]), float(r["best_objective"])) for r in csv.DictReader(f)]


__all__ = [
    "Evaluation", "MockEvaluator", "MockSession", "OptimizerError", "OptimizerTrace", "SessionEvaluator",
    "Trial", "eval_seeds", "pbt", "perturb", "random_search", "read_incumbent", "sha_schedule",
    "successive_halving", "trace_columns", "write_trace",
]
