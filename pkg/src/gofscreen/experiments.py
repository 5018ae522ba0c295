"""Monte Carlo comparison of the five screening methods.

A replicate draws a sensor network, a test set and a training set, fits the
latent state of every event, builds all input representations and trains and
evaluates each method on the shared test set. Seeds are derived from
``(base_seed, replicate, purpose, lambda level[, train size, method])`` so a
single replicate can be recomputed in isolation.

The network and test set depend on ``(base_seed, replicate, lambda level)``
only, so the three training sizes of one replicate share them.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .classifiers import LogisticModel, fit_decision_tree, fit_logistic, fit_random_forest
from .classifiers.tree import format_rule_list
from .features import SCORE_COLUMNS, ScoreTable, columns, feature_matrix, score_table, write_feature_csv
from .fitter import FitConfig, fit_dataset
from .metrics import METRIC_NAMES, MetricSet, evaluate
from .rng import substream
from .simgen import LabeledDataset, SensorNetwork, SimulationParams, perturb_params, sample_dataset, sample_network

METHODS = ("LR-decomp", "LR-obs", "LR-baseline", "RF-raw", "RF-raw+features")
METHOD_INPUT = {
    "LR-decomp": "decomp",
    "LR-obs": "obs",
    "LR-baseline": "baseline",
    "RF-raw": "raw",
    "RF-raw+features": "raw_plus_features",
}
EXPERT_FREE = frozenset({"RF-raw"})
LAMBDA_LEVELS = {"low": 1.0, "high": 2.0}
TRAIN_SIZES = (100, 1000, 10000)
DEFAULT_SEED = 20240607
SPECS = ("well", "misspec")
GAINS = (("LR-decomp", "LR-obs"), ("RF-raw+features", "RF-raw"))

RAW_COLUMNS = (
    "lambda", "n", "replicate", "spec", "method", *METRIC_NAMES,
    *(f"coef_{c}" for c in SCORE_COLUMNS),
    "fit_failures_train", "fit_failures_test", "n_train", "n_test", "perturbation",
)


class ReplicateError(RuntimeError):
    """A replicate failed; the message names the scenario and replicate."""


@dataclass(frozen=True)
class Scenario:
    lambda_level: str
    train_size: int
    test_size: int = 5000
    replicates: int = 30
    base_seed: int = DEFAULT_SEED
    n_trees: int = 500

    def __post_init__(self):
        if self.lambda_level not in LAMBDA_LEVELS:
            raise ValueError(f"lambda_level must be one of {sorted(LAMBDA_LEVELS)}, got {self.lambda_level!r}")
        if self.train_size < 2 or self.test_size < 2:
            raise ValueError("train and test sizes must be at least 2")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")

    @property
    def lam(self) -> float:
        return LAMBDA_LEVELS[self.lambda_level]

    @property
    def lam_code(self) -> int:
        return int(self.lam)

    @property
    def params(self) -> SimulationParams:
        return SimulationParams.for_lambda(self.lam)

    @property
    def key(self) -> str:
        return f"lambda={self.lambda_level},n={self.train_size}"


def scenario_grid(levels=("low", "high"), sizes=TRAIN_SIZES, **kw) -> list[Scenario]:
    return [Scenario(lv, n, **kw) for lv in levels for n in sizes]


# ---------------------------------------------------------------------------
# replicate


@dataclass
class ReplicateResult:
    scenario: Scenario
    replicate: int
    spec: str
    metrics: dict[str, MetricSet]
    coefficients: dict[str, float]
    fit_failures_train: int
    fit_failures_test: int
    n_train: int
    n_test: int
    perturbation: dict[str, float] | None = None
    timing: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        pert = "" if not self.perturbation else ";".join(f"{k}={v!r}" for k, v in self.perturbation.items())
        out = []
        for method in METHODS:
            if method not in self.metrics:
                continue
            row = {
                "lambda": self.scenario.lambda_level,
                "n": self.scenario.train_size,
                "replicate": self.replicate,
                "spec": self.spec,
                "method": method,
                **self.metrics[method].as_dict(),
            }
            for c in SCORE_COLUMNS:
                row[f"coef_{c}"] = self.coefficients.get(c, math.nan) if method == "LR-decomp" else math.nan
            row.update(
                fit_failures_train=self.fit_failures_train,
                fit_failures_test=self.fit_failures_test,
                n_train=self.n_train,
                n_test=self.n_test,
                perturbation=pert,
            )
            out.append(row)
        return out


def replicate_network(scenario: Scenario, r: int) -> SensorNetwork:
    return sample_network(scenario.params, substream(scenario.base_seed, r, "network", scenario.lam_code))


def replicate_datasets(scenario: Scenario, r: int) -> tuple[SensorNetwork, LabeledDataset, LabeledDataset]:
    """Network, training set and test set of replicate ``r``."""
    p = scenario.params
    net, test = replicate_test_set(scenario, r)
    train = sample_dataset(
        scenario.train_size, p, net, substream(scenario.base_seed, r, "train", scenario.lam_code, scenario.train_size)
    )
    return net, train, test


def replicate_test_set(scenario: Scenario, r: int) -> tuple[SensorNetwork, LabeledDataset]:
    net = replicate_network(scenario, r)
    test = sample_dataset(scenario.test_size, scenario.params, net,
                          substream(scenario.base_seed, r, "test", scenario.lam_code))
    return net, test


def replicate_perturbation(scenario: Scenario, r: int) -> tuple[SimulationParams, dict[str, float]]:
    return perturb_params(scenario.params, substream(scenario.base_seed, r, "misspec", scenario.lam_code))


def _forest_rng(scenario: Scenario, r: int, method: str):
    return substream(scenario.base_seed, r, "forest", scenario.lam_code, scenario.train_size, METHODS.index(method))


def _scores(data: LabeledDataset, fit_params: SimulationParams, net: SensorNetwork) -> tuple[ScoreTable, int]:
    fits = fit_dataset(data, fit_params, net, FitConfig.from_params(fit_params))
    return score_table(data, fits, fit_params, net), fits.failure_count


# the test set is shared across training sizes; keep the last few scored test sets
_TEST_CACHE: dict = {}
_TEST_CACHE_SIZE = 4


def _test_scores(scenario, r, spec, test, fit_params, net):
    key = (scenario.base_seed, scenario.lambda_level, scenario.test_size, r, spec, tuple(fit_params.to_dict().items()).__repr__())
    hit = _TEST_CACHE.get(key)
    if hit is not None:
        return hit
    val = _scores(test, fit_params, net)
    if len(_TEST_CACHE) >= _TEST_CACHE_SIZE:
        _TEST_CACHE.pop(next(iter(_TEST_CACHE)))
    _TEST_CACHE[key] = val
    return val


def _train_and_predict(method, scenario, r, train, test, st_tr, st_te):
    tag = METHOD_INPUT[method]
    S = train.S
    Xtr = feature_matrix(tag, train, st_tr)
    Xte = feature_matrix(tag, test, st_te)
    cols = columns(tag, S)
    if method.startswith("LR"):
        model = fit_logistic(Xtr, train.labels, columns=cols)
    else:
        model = fit_random_forest(Xtr, train.labels, scenario.n_trees, _forest_rng(scenario, r, method), columns=cols)
    return model, model.predict_proba(Xte)


def _run(scenario: Scenario, r: int, specs: Sequence[str], methods: Sequence[str]) -> list[ReplicateResult]:
    t0 = time.perf_counter()
    net, train, test = replicate_datasets(scenario, r)
    timing = {"generate": time.perf_counter() - t0}
    results = []
    shared: dict[str, MetricSet] = {}
    for spec in specs:
        if spec == "well":
            fit_params, pert = scenario.params, None
        elif spec == "misspec":
            fit_params, pert = replicate_perturbation(scenario, r)
        else:
            raise ValueError(f"unknown spec {spec!r}")
        t = time.perf_counter()
        st_tr, fail_tr = _scores(train, fit_params, net)
        st_te, fail_te = _test_scores(scenario, r, spec, test, fit_params, net)
        tm = {f"{spec}_fit": time.perf_counter() - t}
        metrics, coefs = {}, {}
        for method in methods:
            t = time.perf_counter()
            if method in EXPERT_FREE and method in shared:
                # does not use the expert model, so the other spec's result holds exactly
                metrics[method] = shared[method]
                continue
            model, prob = _train_and_predict(method, scenario, r, train, test, st_tr, st_te)
            metrics[method] = evaluate(prob, test.labels)
            if method in EXPERT_FREE:
                shared[method] = metrics[method]
            if method == "LR-decomp":
                coefs = model.coefficients()
            tm[f"{spec}_{method}"] = time.perf_counter() - t
        results.append(
            ReplicateResult(scenario, r, spec, metrics, {c: coefs[c] for c in SCORE_COLUMNS if c in coefs},
                            fail_tr, fail_te, len(train), len(test), pert, {**timing, **tm})
        )
    return results


def run_replicate(scenario: Scenario, replicate: int, misspecified: bool = False,
                  methods: Sequence[str] = METHODS) -> ReplicateResult:
    """Run one replicate, with correctly specified or perturbed expert parameters."""
    _check_methods(methods)
    try:
        return _run(scenario, replicate, ["misspec" if misspecified else "well"], methods)[0]
    except Exception as e:
        raise ReplicateError(f"{scenario.key} replicate {replicate}: {type(e).__name__}: {e}") from e


def run_replicate_pair(scenario: Scenario, replicate: int, methods: Sequence[str] = METHODS):
    """Well-specified and misspecified results on the same datasets."""
    _check_methods(methods)
    try:
        well, mis = _run(scenario, replicate, ["well", "misspec"], methods)
    except Exception as e:
        raise ReplicateError(f"{scenario.key} replicate {replicate}: {type(e).__name__}: {e}") from e
    return well, mis


def _check_methods(methods):
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown methods {bad}; expected a subset of {METHODS}")


# ---------------------------------------------------------------------------
# grids, caching and parallel execution


def _fingerprint(scenario: Scenario, methods) -> dict:
    # round-tripped so that it compares equal to a fingerprint read back from disk
    return json.loads(json.dumps({
        "version": __version__,
        "base_seed": scenario.base_seed,
        "test_size": scenario.test_size,
        "n_trees": scenario.n_trees,
        "methods": list(methods),
        "fitter": {k: v for k, v in asdict(FitConfig()).items() if k not in ("L_box", "M_box")},
    }))


def _cache_path(cache_dir: Path, scenario: Scenario, r: int, mode: str) -> Path:
    return cache_dir / f"{mode}_{scenario.lambda_level}_{scenario.train_size}_r{r}.json"


def _task(args):
    scenario, r, mode, methods, cache_dir = args
    path = None
    if cache_dir is not None:
        path = _cache_path(Path(cache_dir), scenario, r, mode)
        if path.exists():
            doc = json.loads(path.read_text())
            if doc.get("fingerprint") == _fingerprint(scenario, methods):
                return doc["rows"], doc.get("timing", {})
    if mode == "pair":
        res = list(run_replicate_pair(scenario, r, methods))
    else:
        res = [run_replicate(scenario, r, mode == "misspec", methods)]
    rows = [row for x in res for row in x.rows()]
    timing = {f"{x.spec}:{k}": v for x in res for k, v in x.timing.items()}
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"fingerprint": _fingerprint(scenario, methods), "rows": rows, "timing": timing}))
        tmp.replace(path)
    return rows, timing


@dataclass
class GridRun:
    rows: list[dict]
    timing: list[dict]

    @property
    def summary(self) -> "SummaryTable":
        return SummaryTable.from_rows(self.rows)


def run_grid(scenarios: Iterable[Scenario], R: int | None = None, *, mode: str = "well",
             methods: Sequence[str] = METHODS, parallel: int = 1, cache_dir=None,
             progress: Callable[[str], None] | None = None) -> GridRun:
    """Run every replicate of every scenario.

    ``mode`` is ``"well"``, ``"misspec"`` or ``"pair"`` (both, on shared data).
    Any failing replicate aborts the grid with a :class:`ReplicateError`.
    """
    if mode not in ("well", "misspec", "pair"):
        raise ValueError(f"unknown mode {mode!r}")
    _check_methods(methods)
    scenarios = list(scenarios)
    # group by (lambda, replicate) so the shared test set is scored once
    tasks = []
    reps = {s: (R if R is not None else s.replicates) for s in scenarios}
    max_r = max(reps.values(), default=0)
    for lv in LAMBDA_LEVELS:
        for r in range(max_r):
            for s in scenarios:
                if s.lambda_level == lv and r < reps[s]:
                    tasks.append((s, r, mode, tuple(methods), None if cache_dir is None else str(cache_dir)))
    rows, timing = [], []

    def collect(task, out):
        s, r = task[0], task[1]
        rows.extend(out[0])
        timing.append({"lambda": s.lambda_level, "n": s.train_size, "replicate": r, **out[1]})
        if progress:
            progress(f"{s.key} replicate {r} done")

    if parallel <= 1:
        for t in tasks:
            collect(t, _task(t))
    else:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            for t, out in zip(tasks, ex.map(_task, tasks)):
                collect(t, out)
    rows.sort(key=_row_order)
    return GridRun(rows, timing)


def _row_order(row):
    return (
        list(LAMBDA_LEVELS).index(row["lambda"]),
        int(row["n"]),
        SPECS.index(row["spec"]),
        int(row["replicate"]),
        METHODS.index(row["method"]),
    )


def run_misspecified(scenarios: Iterable[Scenario], R: int | None = None, **kw) -> GridRun:
    """Paired well-specified and misspecified runs."""
    return run_grid(scenarios, R, mode="pair", **kw)


# ---------------------------------------------------------------------------
# summaries


def mean_se(values) -> tuple[float, float | None]:
    """Monte Carlo mean and SD/sqrt(R); the SE is ``None`` when R < 2."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values")
    if v.size < 2:
        return float(v.mean()), None
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


@dataclass(frozen=True)
class SummaryRow:
    lambda_level: str
    train_size: int
    spec: str
    method: str
    metric: str
    mean: float
    se: float | None
    R: int


SUMMARY_COLUMNS = ("lambda", "n", "spec", "method", "metric", "mean", "se", "R")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


class SummaryTable:
    def __init__(self, rows: list[SummaryRow]):
        self.rows = rows
        self._index = {(r.lambda_level, r.train_size, r.spec, r.method, r.metric): r for r in rows}

    @classmethod
    def from_rows(cls, raw: list[dict]) -> "SummaryTable":
        groups: dict = {}
        for row in raw:
            for metric in METRIC_NAMES:
                k = (row["lambda"], int(row["n"]), row["spec"], row["method"], metric)
                groups.setdefault(k, []).append(float(row[metric]))
        out = []
        for k in sorted(groups, key=lambda k: (list(LAMBDA_LEVELS).index(k[0]), k[1], SPECS.index(k[2]),
                                               METHODS.index(k[3]), METRIC_NAMES.index(k[4]))):
            m, se = mean_se(groups[k])
            out.append(SummaryRow(*k, m, se, len(groups[k])))
        return cls(out)

    def get(self, lambda_level, n, method, metric="auroc", spec="well") -> SummaryRow:
        return self._index[(lambda_level, int(n), spec, method, metric)]

    def mean(self, lambda_level, n, method, metric="auroc", spec="well") -> float:
        return self.get(lambda_level, n, method, metric, spec).mean

    def __eq__(self, other):
        return isinstance(other, SummaryTable) and self.rows == other.rows

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_COLUMNS)
            for r in self.rows:
                w.writerow([r.lambda_level, r.train_size, r.spec, r.method, r.metric, _fmt(r.mean), _fmt(r.se), r.R])

    @classmethod
    def read_csv(cls, path) -> "SummaryTable":
        out = []
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                out.append(SummaryRow(row["lambda"], int(row["n"]), row["spec"], row["method"], row["metric"],
                                      float(row["mean"]), float(row["se"]) if row["se"] else None, int(row["R"])))
        return cls(out)

    def panel_csv(self, path, spec: str = "well") -> None:
        """Wide layout: one panel per training size, rows (lambda, metric), one column per method."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "lambda", "metric", *METHODS])
            ns = sorted({r.train_size for r in self.rows if r.spec == spec})
            for n in ns:
                for lv in LAMBDA_LEVELS:
                    for metric in METRIC_NAMES:
                        cells = []
                        for method in METHODS:
                            r = self._index.get((lv, n, spec, method, metric))
                            if r is None:
                                cells.append("")
                            elif r.se is None:
                                cells.append(f"{r.mean:.3f}")
                            else:
                                cells.append(f"{r.mean:.3f} ± {r.se:.3f}")
                        if any(cells):
                            w.writerow([n, lv, metric, *cells])

    def plot_data_csv(self, path) -> None:
        """Long format for plotting: x = n, y = mean, series = method."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["spec", "lambda", "metric", "method", "n", "mean", "se"])
            for r in sorted(self.rows, key=lambda r: (SPECS.index(r.spec), list(LAMBDA_LEVELS).index(r.lambda_level),
                                                      METRIC_NAMES.index(r.metric), METHODS.index(r.method), r.train_size)):
                w.writerow([r.spec, r.lambda_level, r.metric, r.method, r.train_size, _fmt(r.mean), _fmt(r.se)])


@dataclass(frozen=True)
class GainRow:
    lambda_level: str
    train_size: int
    spec: str
    gain: str
    metric: str
    mean: float
    se: float | None
    R: int


def paired_gains(raw: list[dict], pairs=GAINS) -> list[GainRow]:
    """Per-replicate differences between methods, averaged over replicates."""
    by = {}
    for row in raw:
        by[(row["lambda"], int(row["n"]), row["spec"], int(row["replicate"]), row["method"])] = row
    cells = sorted({(k[0], k[1], k[2]) for k in by}, key=lambda c: (list(LAMBDA_LEVELS).index(c[0]), c[1], SPECS.index(c[2])))
    out = []
    for lv, n, spec in cells:
        reps = sorted({k[3] for k in by if k[:3] == (lv, n, spec)})
        for a, b in pairs:
            for metric in METRIC_NAMES:
                d = [float(by[(lv, n, spec, r, a)][metric]) - float(by[(lv, n, spec, r, b)][metric])
                     for r in reps if (lv, n, spec, r, a) in by and (lv, n, spec, r, b) in by]
                if d:
                    m, se = mean_se(d)
                    out.append(GainRow(lv, n, spec, f"{a} - {b}", metric, m, se, len(d)))
    return out


@dataclass(frozen=True)
class MisspecRow:
    lambda_level: str
    train_size: int
    method: str
    metric: str
    mean_misspec: float
    se_misspec: float | None
    mean_well: float
    se_well: float | None
    delta_mean: float
    delta_se: float | None
    R: int


def misspec_comparison(raw: list[dict]) -> list[MisspecRow]:
    """Misspecified minus well-specified, paired by replicate."""
    by = {(r["lambda"], int(r["n"]), r["spec"], int(r["replicate"]), r["method"]): r for r in raw}
    out = []
    cells = sorted({(k[0], k[1]) for k in by if k[2] == "misspec"}, key=lambda c: (list(LAMBDA_LEVELS).index(c[0]), c[1]))
    for lv, n in cells:
        reps = sorted({k[3] for k in by if k[:3] == (lv, n, "misspec") and (lv, n, "well", k[3], k[4]) in by})
        for method in METHODS:
            for metric in METRIC_NAMES:
                pairs = [(float(by[(lv, n, "misspec", r, method)][metric]), float(by[(lv, n, "well", r, method)][metric]))
                         for r in reps if (lv, n, "misspec", r, method) in by and (lv, n, "well", r, method) in by]
                if not pairs:
                    continue
                a = np.array(pairs)
                mm, sm = mean_se(a[:, 0])
                mw, sw = mean_se(a[:, 1])
                dm, ds = mean_se(a[:, 0] - a[:, 1])
                out.append(MisspecRow(lv, n, method, metric, mm, sm, mw, sw, dm, ds, len(pairs)))
    return out


@dataclass(frozen=True)
class CoefStability:
    coefficient: str
    median: float
    sign_stability: float
    R: int


def coefficient_stability(lr_models, names: Sequence[str] = ("bar_ell_det", "bar_ell_nondet", "bar_ell_obs")) -> list[CoefStability]:
    """Median coefficient and fraction of replicates sharing the modal sign.

    ``lr_models`` holds :class:`LogisticModel` objects or ``{name: coef}`` dicts.
    """
    coefs = [m.coefficients() if isinstance(m, LogisticModel) else dict(m) for m in lr_models]
    if len(coefs) < 2:
        raise ValueError("coefficient stability needs at least two replicates")
    out = []
    for name in names:
        v = np.array([c[name] for c in coefs], dtype=float)
        signs = np.sign(v)
        n_pos, n_neg = int((signs > 0).sum()), int((signs < 0).sum())
        modal = 1.0 if n_pos >= n_neg else -1.0
        out.append(CoefStability(name, float(np.median(v)), float((signs == modal).mean()), int(v.size)))
    return out


def lr_decomp_coefficients(scenario: Scenario, r: int) -> dict[str, float]:
    """LR-decomp coefficients of replicate ``r``; only the training set is needed."""
    p = scenario.params
    net = replicate_network(scenario, r)
    train = sample_dataset(scenario.train_size, p, net, substream(scenario.base_seed, r, "train", scenario.lam_code, scenario.train_size))
    st, _ = _scores(train, p, net)
    return fit_logistic(feature_matrix("decomp", train, st), train.labels, columns=columns("decomp", p.S)).coefficients()


def _coef_task(args):
    scenario, r = args
    return lr_decomp_coefficients(scenario, r)


def coefficient_stability_run(scenario: Scenario, R: int | None = None, parallel: int = 1) -> tuple[list[CoefStability], list[dict]]:
    R = scenario.replicates if R is None else R
    tasks = [(scenario, r) for r in range(R)]
    if parallel <= 1:
        coefs = [_coef_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            coefs = list(ex.map(_coef_task, tasks))
    return coefficient_stability(coefs), coefs


def coefficient_stability_from_rows(raw: list[dict]) -> dict[tuple[str, int], list[CoefStability]]:
    groups: dict = {}
    for row in raw:
        if row["method"] == "LR-decomp" and row["spec"] == "well":
            groups.setdefault((row["lambda"], int(row["n"])), []).append(
                {c: float(row[f"coef_{c}"]) for c in SCORE_COLUMNS}
            )
    return {k: coefficient_stability(v) for k, v in groups.items() if len(v) >= 2}


# ---------------------------------------------------------------------------
# decision tree on decomposed scores


@dataclass
class TreeStudy:
    metrics: MetricSet
    rules: str
    root_feature: str
    depth: int
    n_leaves: int


def run_decision_tree(lambda_level: str = "low", train_size: int = 100_000, test_size: int = 5000,
                      base_seed: int = DEFAULT_SEED, replicate: int = 0, max_depth: int = 4) -> TreeStudy:
    sc = Scenario(lambda_level, train_size, test_size, base_seed=base_seed)
    p = sc.params
    net, train, test = replicate_datasets(sc, replicate)
    st_tr, _ = _scores(train, p, net)
    st_te, _ = _scores(test, p, net)
    cols = columns("decomp", p.S)
    tree = fit_decision_tree(feature_matrix("decomp", train, st_tr), train.labels, max_depth=max_depth, columns=cols)
    prob = tree.predict_proba(feature_matrix("decomp", test, st_te))
    root = cols[int(tree.feature[0])] if not tree.is_leaf(0) else ""
    return TreeStudy(evaluate(prob, test.labels), format_rule_list(tree), root, tree.depth, tree.n_leaves)


def export_score_samples(scenario: Scenario, r: int, path) -> None:
    """Per-event test-set scores of one replicate, for score-distribution plots."""
    p = scenario.params
    net, test = replicate_test_set(scenario, r)
    st, _ = _scores(test, p, net)
    X = feature_matrix("decomp", test, st)
    write_feature_csv(path, X, columns("decomp", p.S), {
        "event_id": np.arange(len(test)),
        "label": test.labels,
        "scenario": test.scenarios,
    })


# ---------------------------------------------------------------------------
# raw CSV round trip and report files


def write_raw_csv(path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) if isinstance(row[c], float) else row[c] for c in RAW_COLUMNS])


def read_raw_csv(path) -> list[dict]:
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RAW_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = {
                    "lambda": row["lambda"],
                    "n": int(row["n"]),
                    "replicate": int(row["replicate"]),
                    "spec": row["spec"],
                    "method": row["method"],
                }
                for k in (*METRIC_NAMES, *(f"coef_{c}" for c in SCORE_COLUMNS)):
                    rec[k] = float(row[k]) if row[k] != "" else math.nan
                for k in ("fit_failures_train", "fit_failures_test", "n_train", "n_test"):
                    rec[k] = int(row[k])
                rec["perturbation"] = row["perturbation"]
            except (KeyError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
            out.append(rec)
    return out


def write_timing_csv(path, timing: list[dict]) -> None:
    keys = sorted({k for t in timing for k in t} - {"lambda", "n", "replicate"})
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "n", "replicate", *keys])
        for t in timing:
            w.writerow([t["lambda"], t["n"], t["replicate"], *(f"{t[k]:.3f}" if k in t else "" for k in keys)])


def _write_rows(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_report(out_dir, raw: list[dict]) -> dict[str, Path]:
    """Summary, panel table, plot data, paired gains, misspecification and coefficient tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    summary = SummaryTable.from_rows(raw)
    files["summary"] = out / "summary.csv"
    summary.to_csv(files["summary"])
    files["panels"] = out / "panels.csv"
    summary.panel_csv(files["panels"])
    if any(r.spec == "misspec" for r in summary.rows):
        files["panels_misspec"] = out / "panels_misspec.csv"
        summary.panel_csv(files["panels_misspec"], spec="misspec")
    files["plot_data"] = out / "plot_data.csv"
    summary.plot_data_csv(files["plot_data"])
    files["gains"] = out / "paired_gains.csv"
    _write_rows(files["gains"], ("lambda", "n", "spec", "gain", "metric", "mean", "se", "R"),
                [(g.lambda_level, g.train_size, g.spec, g.gain, g.metric, g.mean, g.se, g.R) for g in paired_gains(raw)])
    mis = misspec_comparison(raw)
    if mis:
        files["misspec"] = out / "misspec_comparison.csv"
        _write_rows(files["misspec"], ("lambda", "n", "method", "metric", "mean_misspec", "se_misspec", "mean_well",
                                       "se_well", "delta_mean", "delta_se", "R"),
                    [(m.lambda_level, m.train_size, m.method, m.metric, m.mean_misspec, m.se_misspec, m.mean_well,
                      m.se_well, m.delta_mean, m.delta_se, m.R) for m in mis])
    cs = coefficient_stability_from_rows(raw)
    if cs:
        files["coef_stability"] = out / "coef_stability.csv"
        write_coef_stability_csv(files["coef_stability"], cs)
    return files


def write_coef_stability_csv(path, table: dict[tuple[str, int], list[CoefStability]]) -> None:
    rows = [(lv, n, c.coefficient, c.median, c.sign_stability, c.R) for (lv, n), cs in table.items() for c in cs]
    _write_rows(path, ("lambda", "n", "coefficient", "median", "sign_stability", "R"), rows)
