"""Environment subset selection and landscape analysis.

Given returns ``r[config, env]``, each environment column is normalised to
scores in [0, 1] (average-rank or min-max), the target is the mean score over
all environments, and a subset of ``C`` environments is scored by how well an
OLS model with intercept on the subset's columns predicts that target out of
fold. The distance is ``1 - spearman`` (or MSE), averaged over ``k``
contiguous folds of the configuration axis.

Candidate subsets are fitted in batches: per fold the Gram matrix of the
training rows is the full Gram minus the held-out rows' Gram, and each subset
solves its own small normal-equation system taken from it.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .io_utils import atomic_write_text

RIDGE_JITTER = 1e-10
REFINE_STEPS = 2  # iterated ridge: removes the jitter's bias outside the null space
DECIMALS = 12  # predictions/targets/distances are rounded before ranking and sorting
MAX_EXHAUSTIVE = 10**6
DISTANCES = ("one_minus_spearman", "mse")
NORMALIZATIONS = ("rank", "minmax")
_DIST_ALIASES = {"spearman": "one_minus_spearman", "one_minus_spearman": "one_minus_spearman", "mse": "mse"}
_BATCH = 8192


class SubsetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# normalisation and basic statistics


def rank_normalize(values) -> np.ndarray:
    """Average ranks min-max scaled by the observed min/max rank; all-equal input gives 0.5."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise SubsetError("rank normalisation needs a vector of at least 2 values")
    r = rankdata(x, method="average")
    lo, hi = r.min(), r.max()
    if hi == lo:
        return np.full(len(x), 0.5)
    return (r - lo) / (hi - lo)


def minmax_normalize(values) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full(len(x), 0.5)
    return (x - lo) / (hi - lo)


@dataclass
class ScoreMatrix:
    environments: list[str]
    configs: list
    p: np.ndarray  # (n_configs, n_envs)
    normalization: str = "rank"

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p.shape != (len(self.configs), len(self.environments)):
            raise SubsetError(f"score matrix shape {self.p.shape} does not match labels")

    def column(self, env: str) -> np.ndarray:
        return self.p[:, self.environments.index(env)]


def normalize_matrix(returns, environments, configs=None, normalization: str = "rank") -> ScoreMatrix:
    """Column-wise normalisation of a raw return matrix (configs x envs); NaN cells are rejected."""
    r = np.asarray(returns, dtype=np.float64)
    if np.isnan(r).any():
        raise SubsetError("return matrix has missing cells; drop or fill them first")
    if normalization == "rank":
        p = np.column_stack([rank_normalize(r[:, j]) for j in range(r.shape[1])])
    elif normalization == "minmax":
        p = np.column_stack([minmax_normalize(r[:, j]) for j in range(r.shape[1])])
    elif normalization == "raw":
        p = r.copy()
    else:
        raise SubsetError(f"unknown normalization {normalization!r}")
    configs = list(range(r.shape[0])) if configs is None else list(configs)
    return ScoreMatrix(list(environments), configs, p, normalization)


def mean_scores(P: ScoreMatrix | np.ndarray) -> np.ndarray:
    p = P.p if isinstance(P, ScoreMatrix) else np.asarray(P, dtype=np.float64)
    return p.mean(axis=1)


def spearman(a, b) -> float | None:
    """Pearson correlation of average ranks; None when either input is constant."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise SubsetError("spearman needs two equal-length vectors of length >= 2")
    ra = rankdata(np.round(a, DECIMALS), method="average")
    rb = rankdata(np.round(b, DECIMALS), method="average")
    ra -= ra.mean()
    rb -= rb.mean()
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0.0:
        return None
    return float(np.clip(ra @ rb / den, -1.0, 1.0))


def _spearman_rows(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Spearman of every row of ``pred`` against ``target``; NaN for constant rows."""
    rp = rankdata(np.round(pred, DECIMALS), method="average", axis=1)
    rt = rankdata(np.round(target, DECIMALS), method="average")
    rp -= rp.mean(axis=1, keepdims=True)
    rt = rt - rt.mean()
    num = rp @ rt
    den = np.sqrt((rp * rp).sum(axis=1) * float(rt @ rt))
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return np.clip(rho, -1.0, 1.0)


# ---------------------------------------------------------------------------
# OLS


@dataclass
class OLSFit:
    weights: np.ndarray
    intercept: float
    predictions: np.ndarray
    degenerate: bool = False


def ols_fit(X, y) -> OLSFit:
    """Least squares with intercept; a rank-deficient design falls back to a tiny ridge and is flagged."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, c = X.shape
    if n <= c + 1:
        raise SubsetError(f"need more than C+1={c + 1} configurations, got {n}")
    A = np.column_stack([np.ones(n), X])
    degenerate = np.linalg.matrix_rank(A) < c + 1
    if degenerate:
        beta = _ridge_refined(A.T @ A, A.T @ y)
    else:
        beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    return OLSFit(beta[1:], float(beta[0]), A @ beta, bool(degenerate))


def _ridge_refined(G: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``(G + jitter*I) beta = b`` then refine against the unjittered system.

    Works on single systems and on stacks of systems.
    """
    k = G.shape[-1]
    Gr = G + RIDGE_JITTER * np.eye(k)
    beta = np.linalg.solve(Gr, b[..., None])
    for _ in range(REFINE_STEPS):
        beta = beta + np.linalg.solve(Gr, b[..., None] - G @ beta)
    return beta[..., 0]


def _solve_batch(G: np.ndarray, b: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    """Solve the normal equations of many subsets; column 0 of G/b is the intercept.

    ``subsets`` holds env indices (shifted by one into the augmented design).
    Near-singular systems get the ridge jitter.
    """
    idx = np.concatenate([np.zeros((len(subsets), 1), dtype=np.int64), subsets + 1], axis=1)
    Gs = G[idx[:, :, None], idx[:, None, :]]
    bs = b[idx]
    k = idx.shape[1]
    cond = np.linalg.cond(Gs)
    bad = ~np.isfinite(cond) | (cond > 1e12)
    good = ~bad
    beta = np.empty((len(subsets), k))
    if good.any():
        beta[good] = np.linalg.solve(Gs[good], bs[good][..., None])[..., 0]
    if bad.any():
        beta[bad] = _ridge_refined(Gs[bad], bs[bad])
    return beta


# ---------------------------------------------------------------------------
# selection


@dataclass
class SubsetResult:
    subset: tuple[str, ...]
    weights: np.ndarray
    intercept: float
    train_rho: float | None
    cv_rho_mean: float
    cv_rho_folds: list[float | None]
    cv_distance: float
    distance: str = "one_minus_spearman"
    normalization: str = "rank"
    degenerate: bool = False

    @property
    def cv_rho_min(self) -> float:
        return min(_worst_rho(r) for r in self.cv_rho_folds)

    @property
    def cv_rho_max(self) -> float:
        return max(_worst_rho(r) for r in self.cv_rho_folds)

    @property
    def size(self) -> int:
        return len(self.subset)

    def predict(self, P: ScoreMatrix) -> np.ndarray:
        X = np.column_stack([P.column(e) for e in self.subset])
        return self.intercept + X @ self.weights


def _worst_rho(r):
    return -1.0 if r is None or (isinstance(r, float) and math.isnan(r)) else float(r)


def contiguous_folds(n: int, k: int) -> list[np.ndarray]:
    """``k`` contiguous blocks over ``range(n)``; the first ``n % k`` blocks are one longer."""
    if not 2 <= k <= n:
        raise SubsetError(f"need 2 <= k_folds <= n_configs, got k={k}, n={n}")
    return [np.asarray(b) for b in np.array_split(np.arange(n), k)]


class _Scorer:
    def __init__(self, P: ScoreMatrix, target: np.ndarray, distance: str, k_folds: int):
        self.P = P
        self.y = target
        self.distance = distance
        n = len(target)
        A = np.column_stack([np.ones(n), P.p])
        self.A = A
        self.folds = contiguous_folds(n, k_folds)
        G_all, b_all = A.T @ A, A.T @ target
        self.train = []
        for f in self.folds:
            Af = A[f]
            self.train.append((G_all - Af.T @ Af, b_all - Af.T @ target[f]))
        n_train_min = n - max(len(f) for f in self.folds)
        self.n_train_min = n_train_min

    def score(self, subsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns (cv distance, per-fold rho) for a batch of subsets (rows of env indices)."""
        B = len(subsets)
        rhos = np.empty((B, len(self.folds)))
        dists = np.empty((B, len(self.folds)))
        idx = subsets + 1
        for j, (f, (G, b)) in enumerate(zip(self.folds, self.train)):
            beta = _solve_batch(G, b, subsets)
            pred = self._predict(f, idx, beta)
            rho = _spearman_rows(pred, self.y[f])
            rhos[:, j] = rho
            if self.distance == "mse":
                dists[:, j] = np.mean((pred - self.y[f]) ** 2, axis=1)
            else:
                dists[:, j] = 1.0 - np.where(np.isnan(rho), -1.0, rho)
        return np.round(dists.mean(axis=1), DECIMALS), rhos

    def _predict(self, f, idx, beta):
        X = self.A[f]  # (n_f, 1 + n_env)
        Xs = X[:, idx]  # (n_f, B, C)
        return beta[:, :1] + np.einsum("nbc,bc->bn", Xs, beta[:, 1:])


def _iter_combinations(n: int, c: int):
    it = itertools.combinations(range(n), c)
    while True:
        block = list(itertools.islice(it, _BATCH))
        if not block:
            return
        yield np.asarray(block, dtype=np.int64).reshape(len(block), c)


def _resolve(distance: str, normalization: str):
    if distance not in _DIST_ALIASES:
        raise SubsetError(f"unknown distance {distance!r}; use one of {DISTANCES}")
    if normalization not in NORMALIZATIONS + ("raw",):
        raise SubsetError(f"unknown normalization {normalization!r}")
    return _DIST_ALIASES[distance]


def select_subset(P: ScoreMatrix, C: int, distance: str = "one_minus_spearman", k_folds: int = 5,
                  search: str = "exhaustive", beam_width: int = 64, top: int | None = 10,
                  target=None) -> list[SubsetResult]:
    """Rank subsets of size ``C`` by cross-validated distance (ascending).

    ``target`` defaults to the mean score over all environments. Ties in
    distance are broken by the sorted tuple of environment names. The returned
    results are refitted on every configuration.
    """
    distance = _resolve(distance, P.normalization)
    n_cfg, n_env = P.p.shape
    if not 1 <= C <= n_env:
        raise SubsetError(f"subset size must lie in [1, {n_env}]")
    y = mean_scores(P) if target is None else np.asarray(target, dtype=np.float64)
    scorer = _Scorer(P, y, distance, k_folds)
    if scorer.n_train_min <= C + 1:
        raise SubsetError(f"too few configurations per training fold for C={C}")
    names = P.environments

    if search == "exhaustive":
        if math.comb(n_env, C) > MAX_EXHAUSTIVE:
            raise SubsetError(f"C({n_env},{C}) = {math.comb(n_env, C)} subsets exceeds {MAX_EXHAUSTIVE}; "
                              "use search='beam'")
        scored = _score_all(scorer, _iter_combinations(n_env, C), names)
    elif search == "beam":
        if beam_width < 1:
            raise SubsetError("beam width must be >= 1")
        scored = _beam(scorer, n_env, C, beam_width, names)
    else:
        raise SubsetError(f"unknown search {search!r}")

    scored.sort(key=lambda s: (s[0], s[1]))
    keep = scored if top is None else scored[:top]
    return [_refit(P, y, key, subset_idx, dist, rhos, distance) for dist, key, subset_idx, rhos in keep]


def _score_all(scorer: _Scorer, batches, names) -> list:
    out = []
    for subsets in batches:
        dist, rhos = scorer.score(subsets)
        for s, d, r in zip(subsets, dist, rhos):
            out.append((float(d), tuple(sorted(names[i] for i in s)), tuple(int(i) for i in s), r))
    return out


def _beam(scorer: _Scorer, n_env: int, C: int, width: int, names) -> list:
    frontier = [()]
    scored = []
    for size in range(1, C + 1):
        cands = sorted({tuple(sorted(s + (j,))) for s in frontier for j in range(n_env) if j not in s})
        arr = np.asarray(cands, dtype=np.int64).reshape(len(cands), size)
        scored = []
        for start in range(0, len(arr), _BATCH):
            scored += _score_all(scorer, [arr[start:start + _BATCH]], names)
        scored.sort(key=lambda s: (s[0], s[1]))
        frontier = [s[2] for s in scored[:width]]
    return scored


def _refit(P: ScoreMatrix, y, key, subset_idx, dist, rhos, distance) -> SubsetResult:
    order = sorted(subset_idx, key=lambda i: P.environments[i])
    fit = ols_fit(P.p[:, order], y)
    folds = [None if math.isnan(r) else float(r) for r in rhos]
    return SubsetResult(
        subset=tuple(P.environments[i] for i in order),
        weights=fit.weights,
        intercept=fit.intercept,
        train_rho=spearman(fit.predictions, y),
        cv_rho_mean=float(np.mean([_worst_rho(r) for r in folds])),
        cv_rho_folds=folds,
        cv_distance=dist,
        distance=distance,
        normalization=P.normalization,
        degenerate=fit.degenerate,
    )


def correlation_vs_size(P: ScoreMatrix, sizes, k_folds: int = 5, distance: str = "one_minus_spearman",
                        top: int = 3, search: str = "exhaustive", beam_width: int = 64) -> list[dict]:
    """Best ``top`` subsets per size with their fold spread (rows keyed by (C, rank))."""
    rows = []
    for C in sizes:
        res = select_subset(P, C, distance, k_folds, search, beam_width, top)
        for rank, r in enumerate(res, start=1):
            rows.append({"C": C, "rank": rank, "subset": ";".join(r.subset), "cv_rho_mean": r.cv_rho_mean,
                         "cv_rho_min": r.cv_rho_min, "cv_rho_max": r.cv_rho_max, "cv_distance": r.cv_distance,
                         "train_rho": r.train_rho})
    return rows


# ---------------------------------------------------------------------------
# budgets and optimizer scores


@dataclass
class BudgetCorrelation:
    environment: str
    fractions: list[float]
    rho: dict = field(default_factory=dict)  # (f_i, f_j) -> rho or None


def budget_correlations(table, env: str) -> BudgetCorrelation:
    """Spearman between the seed-averaged return vectors of every pair of budget fractions."""
    from .landscape import mean_return_matrix

    fractions = sorted({r.budget_fraction for r in table.records if r.environment == env})
    if len(fractions) < 2:
        raise SubsetError(f"{env}: need at least two budget fractions")
    cols = {}
    for f in fractions:
        m = mean_return_matrix(table, f, environments=[env])
        cols[f] = dict(zip(m.configs, m.values[:, 0]))
    common = sorted(set.intersection(*(set(k for k, v in c.items() if not math.isnan(v)) for c in cols.values())))
    out = BudgetCorrelation(env, fractions)
    for fi in fractions:
        for fj in fractions:
            a = np.array([cols[fi][c] for c in common])
            b = np.array([cols[fj][c] for c in common])
            out.rho[(fi, fj)] = spearman(a, b) if len(common) >= 2 else None
    return out


def normalize_optimizer_scores(objectives, land_min: float, land_max: float, floor: float | None = None):
    """``(r - lo) / (max - lo)`` clamped to [0, 1], where ``lo = max(landscape min, floor)``."""
    lo = float(land_min) if floor is None else max(float(land_min), float(floor))
    if not land_max > lo:
        raise SubsetError(f"degenerate landscape: max {land_max} <= lower bound {lo}")
    r = np.asarray(objectives, dtype=np.float64)
    return np.clip((r - lo) / (land_max - lo), 0.0, 1.0)


# ---------------------------------------------------------------------------
# reports


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def selection_report_csv(results: list[SubsetResult]) -> str:
    width = max((r.size for r in results), default=0)
    head = (["rank", "C"] + [f"env_{i + 1}" for i in range(width)] + [f"weight_{i + 1}" for i in range(width)]
            + ["intercept", "train_rho", "cv_rho_mean", "cv_rho_min", "cv_rho_max", "distance", "normalization",
               "cv_distance"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    for rank, r in enumerate(results, start=1):
        envs = list(r.subset) + [""] * (width - r.size)
        ws = [_fmt(float(x)) for x in r.weights] + [""] * (width - r.size)
        w.writerow([rank, r.size, *envs, *ws, _fmt(r.intercept), _fmt(r.train_rho), _fmt(r.cv_rho_mean),
                    _fmt(r.cv_rho_min), _fmt(r.cv_rho_max), r.distance, r.normalization, _fmt(r.cv_distance)])
    return buf.getvalue()


def rows_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


CORRELATION_VS_SIZE_COLUMNS = ["C", "rank", "subset", "cv_rho_mean", "cv_rho_min", "cv_rho_max", "cv_distance",
                               "train_rho"]
BUDGET_CORRELATION_COLUMNS = ["environment", "fraction_i", "fraction_j", "rho"]


def budget_correlation_rows(bcs: list[BudgetCorrelation]) -> list[dict]:
    return [{"environment": bc.environment, "fraction_i": fi, "fraction_j": fj, "rho": rho}
            for bc in bcs for (fi, fj), rho in bc.rho.items()]


def write_selection_report(results, path):
    return atomic_write_text(path, selection_report_csv(results))


__all__ = [
    "BudgetCorrelation", "OLSFit", "ScoreMatrix", "SubsetError", "SubsetResult", "budget_correlation_rows",
    "budget_correlations", "contiguous_folds", "correlation_vs_size", "mean_scores", "minmax_normalize",
    "normalize_matrix", "normalize_optimizer_scores", "ols_fit", "rank_normalize", "rows_csv", "select_subset",
    "selection_report_csv", "spearman", "write_selection_report",
]
