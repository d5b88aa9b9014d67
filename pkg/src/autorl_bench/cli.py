"""``autorl-bench`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 training diverged
(outputs still written), 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import math
import os
import sys
import tempfile
import traceback
from pathlib import Path

import numpy as np
import yaml

from . import __version__, algos, envs
from . import config_space as cs
from . import landscape as ls
from . import optimizers as op
from . import subset as ss
from .autorl_env import AutoRLEnvConfig, SessionError, reset
from .io_utils import atomic_write_text, now, write_manifest
from .seeding import derive_seed

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_INTERNAL = 0, 1, 2, 3
DATA_DIR_ENV = "ARLB_DATA_DIR"
CI_Z = 1.96
SINGLE_SEED_WARNING = "single seed: interval equals the point estimate"

# errors that mean "bad input", reported without a traceback
USER_ERRORS = (cs.SpaceError, algos.AlgorithmError, algos.CheckpointError, envs.EnvError, ls.SchemaError,
               ls.CampaignError, ss.SubsetError, op.OptimizerError, SessionError, FileNotFoundError,
               FileExistsError, yaml.YAMLError, json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def data_root() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "arlb_data"))


def _out_dir(args, *default_parts) -> Path:
    out = Path(args.out) if args.out else data_root().joinpath(*default_parts)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _params(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _csv_text(columns, rows) -> str:
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(_cell(r.get(c)) for c in columns))
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    s = str(v)
    return f'"{s}"' if ("," in s or '"' in s) else s


def _csv_list(text: str, cast=str) -> list:
    return [cast(x.strip()) for x in text.split(",") if x.strip()]


# ---------------------------------------------------------------------------
# envs / space


def cmd_envs(args) -> int:
    rows = envs.env_csv_rows()
    if args.format == "csv":
        sys.stdout.write(_csv_text(envs.CSV_COLUMNS, rows))
    else:
        widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in envs.CSV_COLUMNS}
        print("  ".join(c.ljust(widths[c]) for c in envs.CSV_COLUMNS))
        for r in rows:
            print("  ".join(str(r[c]).ljust(widths[c]) for c in envs.CSV_COLUMNS))
    return EXIT_OK


def cmd_space(args) -> int:
    space = cs.builtin_space(args.algo, args.domain)
    if args.format == "json":
        print(json.dumps(space.to_dict(), indent=2))
    else:
        sys.stdout.write(space.to_yaml())
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

TRAIN_COLUMNS = ["chunk", "steps", "n_updates", "policy_loss", "value_loss", "entropy", "grad_norm_mean",
                 "grad_norm_var", "loss_mean", "episodes", "train_return_mean", "eval_mean_return", "diverged"]


def _plain_values(config: cs.Configuration) -> dict:
    return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in sorted(config.values.items())}


def load_config_file(path, space: cs.ConfigurationSpace) -> cs.Configuration:
    """A YAML or JSON mapping of hyperparameter values; missing ones take their defaults."""
    data = yaml.safe_load(Path(path).read_text())
    if isinstance(data, dict) and isinstance(data.get("config"), dict):
        data = data["config"]
    if not isinstance(data, dict):
        raise cs.SpaceError(f"{path}: expected a mapping of hyperparameter values")
    unknown = sorted(set(data) - set(space.names))
    if unknown:
        raise cs.SpaceError(f"{path}: unknown hyperparameters {unknown}; space has {space.names}")
    return space.make(data)


def cmd_train(args) -> int:
    space = algos.space_for(args.algo, args.env)
    spec = envs.get_spec(args.env)
    config = load_config_file(args.config, space) if args.config else space.default()
    steps = int(args.steps or spec.timesteps_for(args.algo))
    if steps < 1:
        raise UsageError("--steps must be >= 1")
    out = _out_dir(args, "train", f"{args.algo}-{spec.name}-seed{args.seed}")
    started = now()
    state = algos.init(args.algo, config, spec.name, args.seed, steps)
    n_chunks = max(1, min(args.log_chunks, steps))
    bounds = [round(steps * (k + 1) / n_chunks) for k in range(n_chunks)]
    rows, diverged = [], False
    for k, upto in enumerate(bounds):
        todo = upto - state.step
        if todo < 1:
            continue
        try:
            _, m = algos.train(state, todo)
        except algos.TrainingDiverged as err:
            m, diverged = err.metrics, True
            print(f"training diverged near step {state.step}: {err}", file=sys.stderr)
        summary = {c: v for c, v in m.summary().items() if c in TRAIN_COLUMNS}
        rows.append({**summary, "chunk": k, "steps": state.step, "diverged": diverged})
        if diverged:
            break
    if not diverged:
        rows[-1]["eval_mean_return"] = algos.evaluate(state, args.eval_episodes, derive_seed(args.seed, "eval"))
    outputs = [atomic_write_text(out / "metrics.csv", _csv_text(TRAIN_COLUMNS, rows))]
    if not diverged:
        outputs.append(algos.save_checkpoint(state, out / "checkpoint"))
    outputs.append(atomic_write_text(out / "config.yaml", yaml.safe_dump(_plain_values(config), sort_keys=True)))
    write_manifest(out, "train", {**_params(args), "steps": steps, "config": _plain_values(config)},
                   args.seed, started, outputs)
    if diverged:
        return EXIT_DIVERGED
    print(f"{args.algo} {spec.name} seed {args.seed}: {state.step} steps, "
          f"eval mean return {rows[-1]['eval_mean_return']:.2f} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# collect


def cmd_collect(args) -> int:
    env_names = _csv_list(args.envs)
    ok, skipped = [], []
    for e in env_names:
        try:
            algos.space_for(args.algo, e)
            ok.append(envs.get_spec(e).name)
        except (algos.AlgorithmError, envs.EnvError) as err:
            skipped.append(e)
            print(f"skipping {args.algo}/{e}: {err}", file=sys.stderr)
    if not ok:
        print("no compatible algorithm/environment pair", file=sys.stderr)
        return EXIT_USAGE
    budgets = {e: args.budget for e in ok} if args.budget else {}
    spec = ls.CampaignSpec(args.algo, ok, args.configs, args.seeds, args.eval_episodes,
                           tuple(_csv_list(args.fractions, float)), args.seed, args.sobol_seed, budgets)
    out = _out_dir(args, "landscapes", args.algo)
    csv_path = out / "landscape.csv"
    journal = csv_path.with_name(csv_path.name + ".journal")
    if (csv_path.exists() or journal.exists()) and not args.resume:
        raise FileExistsError(f"{out} already holds a campaign; pass --resume to continue it")
    started = now()
    ran = []

    def progress(recs):
        ran.append(1)
        if args.verbose:
            r = recs[0]
            print(f"cell {r.environment} config {r.config_id} seed {r.seed} done", file=sys.stderr)

    complete_before = csv_path.exists() and not journal.exists()
    table = ls.run_campaign(spec, csv_path, args.parallel, resume=args.resume, progress=progress)
    expected = ls.grid_size(spec)
    print(f"{len(table)} records ({expected} expected: {len(ok)} envs x {args.configs} configs x "
          f"{args.seeds} seeds x {len(spec.fractions)} fractions); {len(ran)} cells run")
    if not (complete_before and not ran and (out / "manifest.json").exists()):
        write_manifest(out, "collect", {**_params(args), "campaign": spec.to_dict(), "skipped": skipped},
                       args.seed, started, [csv_path])
    return EXIT_OK if not table.missing else EXIT_INTERNAL


# ---------------------------------------------------------------------------
# select


def score_matrix_from_table(table: ls.LandscapeTable, fraction: float, normalization: str):
    m = ls.mean_return_matrix(table, fraction)
    keep_env = ~np.all(np.isnan(m.values), axis=0)
    values = m.values[:, keep_env]
    env_names = [e for e, k in zip(m.environments, keep_env) if k]
    complete = ~np.isnan(values).any(axis=1)
    dropped = int((~complete).sum())
    configs = [c for c, k in zip(m.configs, complete) if k]
    return ss.normalize_matrix(values[complete], env_names, configs, normalization), dropped


def cmd_select(args) -> int:
    table = ls.load_csv(args.data, args.mapping)
    P, dropped = score_matrix_from_table(table, args.fraction, args.norm)
    if dropped:
        print(f"dropped {dropped} configurations with missing cells", file=sys.stderr)
    size = args.size if args.size > 0 else len(P.environments)
    out = _out_dir(args, "selection")
    started = now()
    results = ss.select_subset(P, size, args.distance, args.folds, args.search, args.beam_width, args.top)
    sizes = _csv_list(args.sizes, int) if args.sizes else list(range(1, size + 1))
    rows = ss.correlation_vs_size(P, sizes, args.folds, args.distance, 3, args.search, args.beam_width)
    outputs = [
        atomic_write_text(out / "selection_report.csv", ss.selection_report_csv(results)),
        atomic_write_text(out / "correlation_vs_size.csv", ss.rows_csv(rows, ss.CORRELATION_VS_SIZE_COLUMNS)),
    ]
    write_manifest(out, "select", {**_params(args), "n_configs": len(P.configs), "environments": P.environments},
                   None, started, outputs)
    best = results[0]
    weights = ", ".join(f"{e}={w:.3f}" for e, w in zip(best.subset, best.weights))
    print(f"best subset (C={size}): {weights}; cv rho {best.cv_rho_mean:.4f}, train rho "
          f"{best.train_rho if best.train_rho is None else round(best.train_rho, 4)}, "
          f"cv {best.distance} {best.cv_distance:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# tune


def _pbt_factory(args, total, workdir: Path, opt_seed: int):
    def factory(i, seed):
        cfg = AutoRLEnvConfig(args.algo, args.env, total, "dynamic", args.eval_episodes,
                              checkpoint_dir=workdir / f"opt{opt_seed}" / f"member{i}")
        return reset(cfg, seed)

    return factory


def cmd_tune(args) -> int:
    space = algos.space_for(args.algo, args.env)
    spec = envs.get_spec(args.env)
    total = int(args.budget or spec.timesteps_for(args.algo))
    extremes = None
    if args.landscape:
        land = ls.load_csv(args.landscape)
        ext = ls.landscape_extremes(land)
        if spec.name not in ext:
            raise ls.SchemaError(f"{args.landscape} has no records for {spec.name}")
        extremes = ext[spec.name]
    out = _out_dir(args, "tune", f"{args.method}-{args.algo}-{spec.name}")
    started = now()
    outputs, info = [], {}
    with tempfile.TemporaryDirectory(prefix="arlb-pbt-") as tmp:
        for k in range(args.opt_seeds):
            master = args.seed + k
            if args.method == "rs":
                ev = op.SessionEvaluator(args.algo, spec.name, total, args.eval_episodes)
                trace = op.random_search(space, ev, args.trials, args.eval_seeds, master, parallel=args.parallel)
            elif args.method == "sha":
                ev = op.SessionEvaluator(args.algo, spec.name, total, args.eval_episodes)
                trace = op.successive_halving(space, ev, args.eta, args.min_budget, total, args.trials,
                                              args.eval_seeds, master, args.parallel)
                sizes = "/".join(str(n) for n, _ in trace.info["rungs"])
                budgets = "/".join(str(b) for _, b in trace.info["rungs"])
                print(f"optimizer seed {master}: rung sizes {sizes}, budgets {budgets}")
            else:
                trace = op.pbt(space, _pbt_factory(args, total, Path(tmp), master), args.trials, total,
                               args.ready_interval, master_seed=master)
            extra = {}
            if extremes is not None:
                lo, hi = extremes
                extra["normalized_score"] = [float(x) for x in ss.normalize_optimizer_scores(
                    [r["objective"] for r in trace.rows], lo, hi, spec.floor)]
            outputs += op.write_trace(trace, out, extra, suffix=f"_seed{master}")
            info[master] = {"best_objective": trace.best_objective, "best_trial": trace.best_trial.trial_id,
                            "total_budget": trace.total_budget,
                            **{k2: v for k2, v in trace.info.items() if k2 in ("rungs", "rounds", "ready_interval")}}
            print(f"optimizer seed {master}: best objective {trace.best_objective:.3f} "
                  f"after {trace.total_budget} steps")
    params = {**_params(args), "total_budget": total, "env": spec.name, "landscape_extremes": extremes,
              "floor": spec.floor, "optimizer_seeds": sorted(info), "summary": info}
    write_manifest(out, "tune", params, args.seed, started, outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def mean_ci(values) -> dict:
    """Mean with a normal-approximation 95% interval (1.96 standard errors)."""
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return {"n": n, "mean": mean, "se": se, "ci_low": mean - CI_Z * se, "ci_high": mean + CI_Z * se,
            "warning": SINGLE_SEED_WARNING if n == 1 else ""}


ANYTIME_COLUMNS = ["cumulative_budget", "n", "mean", "se", "ci_low", "ci_high", "warning"]


def anytime_rows(curves: list[list[tuple[int, float]]]) -> list[dict]:
    """Aggregate incumbent step functions on the union of their budgets.

    The grid starts where every curve has a value, so the mean never drops
    because a late-starting curve joins.
    """
    curves = [c for c in curves if c]
    if not curves:
        return []
    start = max(c[0][0] for c in curves)
    grid = sorted({b for c in curves for b, _ in c if b >= start})
    rows = []
    for b in grid:
        vals = []
        for c in curves:
            budgets = [x for x, _ in c]
            i = int(np.searchsorted(budgets, b, side="right")) - 1
            vals.append(c[i][1])
        rows.append({"cumulative_budget": b, **mean_ci(vals)})
    return rows


def _existing_outputs(out: Path, new) -> list:
    """Several report kinds may share a directory; the manifest lists all of their files."""
    names = {Path(p).name for p in new}
    for name in ("anytime.csv", "distribution.csv", "distribution_summary.csv", "budget_correlation.csv"):
        if (out / name).exists():
            names.add(name)
    return [out / n for n in sorted(names)]


def _landscape_in(in_dir: Path) -> Path | None:
    p = in_dir / "landscape.csv"
    return p if p.exists() else None


def cmd_report(args) -> int:
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"input directory {in_dir} does not exist")
    if not any(in_dir.iterdir()):
        raise FileNotFoundError(f"input directory {in_dir} is empty")
    out = Path(args.out) if args.out else in_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    started = now()
    incumbents = sorted(glob.glob(str(in_dir / "incumbent*.csv")))
    land = _landscape_in(in_dir)
    outputs = []
    if args.kind == "anytime":
        if not incumbents:
            raise FileNotFoundError(f"{in_dir}: no incumbent*.csv files to aggregate")
        rows = anytime_rows([op.read_incumbent(p) for p in incumbents])
        if len(incumbents) == 1:
            print(f"warning: {SINGLE_SEED_WARNING}", file=sys.stderr)
        outputs.append(atomic_write_text(out / "anytime.csv", _csv_text(ANYTIME_COLUMNS, rows)))
    elif args.kind == "distribution":
        if land is not None:
            outputs += _landscape_distribution(land, out, args.fraction)
        elif incumbents:
            outputs += _optimizer_distribution(in_dir, incumbents, out)
        else:
            raise FileNotFoundError(f"{in_dir}: neither landscape.csv nor incumbent*.csv found")
    else:
        if land is None:
            raise FileNotFoundError(f"{in_dir}: landscape.csv not found")
        table = ls.load_csv(land)
        bcs = []
        for env in table.environments:
            try:
                bcs.append(ss.budget_correlations(table, env))
            except ss.SubsetError as e:
                print(f"skipping {env}: {e}", file=sys.stderr)
        text = ss.rows_csv(ss.budget_correlation_rows(bcs), ss.BUDGET_CORRELATION_COLUMNS)
        outputs.append(atomic_write_text(out / "budget_correlation.csv", text))
    write_manifest(out, "report", _params(args), None, started, _existing_outputs(out, outputs))
    for p in outputs:
        print(p)
    return EXIT_OK


DISTRIBUTION_COLUMNS = ["environment", "budget_fraction", "config_id", "mean_return", "normalized_score"]
DISTRIBUTION_SUMMARY_COLUMNS = ["environment", "budget_fraction", "n", "mean", "median", "q25", "q75", "min",
                                "max"]


def _landscape_distribution(path: Path, out: Path, fraction: float | None) -> list[Path]:
    table = ls.load_csv(path)
    fractions = table.fractions if fraction is None else [fraction]
    rows, summary = [], []
    for f in fractions:
        m = ls.mean_return_matrix(table, f)
        for j, env in enumerate(m.environments):
            col = m.values[:, j]
            ok = ~np.isnan(col)
            lo, hi = float(col[ok].min()), float(col[ok].max())
            for cid, v in zip(m.configs, col):
                if math.isnan(v):
                    continue
                norm = 0.5 if hi == lo else (v - lo) / (hi - lo)
                rows.append({"environment": env, "budget_fraction": f, "config_id": cid, "mean_return": float(v),
                             "normalized_score": float(norm)})
            q = np.quantile(col[ok], [0.25, 0.5, 0.75])
            summary.append({"environment": env, "budget_fraction": f, "n": int(ok.sum()),
                            "mean": float(col[ok].mean()), "median": float(q[1]), "q25": float(q[0]),
                            "q75": float(q[2]), "min": lo, "max": hi})
    return [atomic_write_text(out / "distribution.csv", _csv_text(DISTRIBUTION_COLUMNS, rows)),
            atomic_write_text(out / "distribution_summary.csv",
                              _csv_text(DISTRIBUTION_SUMMARY_COLUMNS, summary))]


def _optimizer_distribution(in_dir: Path, incumbents, out: Path) -> list[Path]:
    rows = []
    for p in incumbents:
        curve = op.read_incumbent(p)
        seed = Path(p).stem.removeprefix("incumbent").removeprefix("_seed") or "0"
        trace = Path(p).with_name(Path(p).name.replace("incumbent", "trace", 1))
        norm = None
        if trace.exists():
            with open(trace, newline="") as f:
                tr = list(csv.DictReader(f))
            if tr and "normalized_score" in tr[0]:
                norm = max(float(r["normalized_score"]) for r in tr)
        rows.append({"optimizer_seed": seed, "final_best_objective": curve[-1][1] if curve else None,
                     "final_normalized_score": norm})
    vals = [r["final_best_objective"] for r in rows if r["final_best_objective"] is not None]
    summary = [{"statistic": "final_best_objective", **mean_ci(vals), "median": float(np.median(vals))}]
    return [atomic_write_text(out / "distribution.csv",
                              _csv_text(["optimizer_seed", "final_best_objective", "final_normalized_score"], rows)),
            atomic_write_text(out / "distribution_summary.csv",
                              _csv_text(["statistic", "n", "mean", "median", "se", "ci_low", "ci_high", "warning"],
                                        summary))]


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="autorl-bench", description="Desk-scale AutoRL benchmarking.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    e = sub.add_parser("envs", help="environment registry")
    e_sub = e.add_subparsers(dest="action", parser_class=_Parser)
    e_sub.required = True
    el = e_sub.add_parser("list", help="list registered environments")
    el.add_argument("--format", choices=("table", "csv"), default="table")
    el.set_defaults(func=cmd_envs)

    s = sub.add_parser("space", help="configuration spaces")
    s_sub = s.add_subparsers(dest="action", parser_class=_Parser)
    s_sub.required = True
    ss_ = s_sub.add_parser("show", help="print a builtin space")
    ss_.add_argument("algo")
    ss_.add_argument("domain")
    ss_.add_argument("--format", choices=("yaml", "json"), default="yaml")
    ss_.set_defaults(func=cmd_space)

    t = sub.add_parser("train", help="train one agent")
    t.add_argument("algo")
    t.add_argument("env")
    g = t.add_mutually_exclusive_group()
    g.add_argument("--config", help="YAML/JSON mapping of hyperparameter values")
    g.add_argument("--default", action="store_true", help="use the space defaults (the default)")
    t.add_argument("--steps", type=int, help="environment steps (default: registry budget)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--eval-episodes", type=int, default=128)
    t.add_argument("--log-chunks", type=int, default=10, help="metrics rows written over the run")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("collect", help="run a landscape campaign")
    c.add_argument("--algo", required=True)
    c.add_argument("--envs", required=True, help="comma separated")
    c.add_argument("--configs", type=int, default=256)
    c.add_argument("--seeds", type=int, default=10)
    c.add_argument("--eval-episodes", type=int, default=128)
    c.add_argument("--fractions", default=",".join(str(f) for f in ls.DEFAULT_FRACTIONS))
    c.add_argument("--budget", type=int, help="override the registry budget of every environment")
    c.add_argument("--seed", type=int, default=0, help="master seed")
    c.add_argument("--sobol-seed", type=int, default=0, help="0 keeps the unscrambled sequence")
    c.add_argument("--parallel", type=int, default=1)
    c.add_argument("--resume", action="store_true")
    c.add_argument("--verbose", action="store_true")
    c.add_argument("--out")
    c.set_defaults(func=cmd_collect)

    se = sub.add_parser("select", help="select an environment subset")
    se.add_argument("--data", required=True)
    se.add_argument("--mapping")
    se.add_argument("--size", type=int, default=5, help="subset size C (0: all environments)")
    se.add_argument("--distance", choices=("spearman", "mse"), default="spearman")
    se.add_argument("--norm", choices=("rank", "minmax"), default="rank")
    se.add_argument("--folds", type=int, default=5)
    se.add_argument("--fraction", type=float, default=1.0, help="budget fraction to use")
    se.add_argument("--search", choices=("exhaustive", "beam"), default="exhaustive")
    se.add_argument("--beam-width", type=int, default=64)
    se.add_argument("--top", type=int, default=10)
    se.add_argument("--sizes", help="comma separated sizes for correlation_vs_size (default 1..C)")
    se.add_argument("--out")
    se.set_defaults(func=cmd_select)

    tu = sub.add_parser("tune", help="run a hyperparameter optimizer")
    tu.add_argument("--method", choices=("rs", "pbt", "sha"), required=True)
    tu.add_argument("--algo", required=True)
    tu.add_argument("--env", required=True)
    tu.add_argument("--trials", type=int, default=32, help="rs: samples, sha: initial configs, pbt: population")
    tu.add_argument("--opt-seeds", type=int, default=5)
    tu.add_argument("--eval-seeds", type=int, default=3)
    tu.add_argument("--eval-episodes", type=int, default=128)
    tu.add_argument("--eta", type=float, default=3)
    tu.add_argument("--min-budget", type=int)
    tu.add_argument("--ready-interval", type=int, help="pbt steps between exploit rounds")
    tu.add_argument("--budget", type=int, help="full-run budget (default: registry budget)")
    tu.add_argument("--landscape", help="landscape CSV for score normalisation")
    tu.add_argument("--seed", type=int, default=0, help="first optimizer seed")
    tu.add_argument("--parallel", type=int, default=1)
    tu.add_argument("--out")
    tu.set_defaults(func=cmd_tune)

    r = sub.add_parser("report", help="plot-ready CSVs")
    r.add_argument("--in", dest="in_dir", required=True)
    r.add_argument("--kind", choices=("anytime", "distribution", "budget-corr"), default="anytime")
    r.add_argument("--fraction", type=float, help="distribution: single budget fraction")
    r.add_argument("--out", help="defaults to DIR/report")
    r.set_defaults(func=cmd_report)
    return p


def _check_ranges(args):
    for name in ("configs", "seeds", "eval_episodes", "folds", "trials", "opt_seeds", "eval_seeds", "parallel",
                 "log_chunks", "beam_width", "top"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1")


def main(argv=None) -> int:
    try:
        argv = list(sys.argv[1:] if argv is None else argv)
        args = build_parser().parse_args(argv)
        args.argv = argv  # kept in the manifest so the run can be replayed
        _check_ranges(args)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
