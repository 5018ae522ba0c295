"""Command-line interface.

Commands: ``simulate``, ``score``, ``run``, ``misspec``, ``coef-stability``,
``report`` and ``tree``. Settings come from an optional JSON config file
(unknown keys are rejected), then ``GOFSCREEN_SEED``, then command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from . import experiments as ex
from .features import score_table
from .fitter import FitConfig, fit_dataset
from .io import params_from_manifest, read_dataset, write_dataset
from .rng import substream
from .simgen import sample_dataset

SEED_ENV = "GOFSCREEN_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    lambda_levels: list = field(default_factory=lambda: ["low", "high"])
    train_sizes: list = field(default_factory=lambda: list(ex.TRAIN_SIZES))
    test_size: int = 5000
    replicates: int = 30
    base_seed: int = ex.DEFAULT_SEED
    out: str = "results"
    parallel: int = 0  # 0 = all available cores
    misspecified: bool = False
    methods: list = field(default_factory=lambda: list(ex.METHODS))
    n_trees: int = 500
    cache: bool = True
    export_scores: bool = False

    def validate(self) -> "RunConfig":
        bad = [lv for lv in self.lambda_levels if lv not in ex.LAMBDA_LEVELS]
        if bad or not self.lambda_levels:
            raise ConfigError(f"lambda_levels: expected a non-empty subset of {sorted(ex.LAMBDA_LEVELS)}, got {self.lambda_levels}")
        if not self.train_sizes or any(not isinstance(n, int) or n < 2 for n in self.train_sizes):
            raise ConfigError(f"train_sizes: expected integers >= 2, got {self.train_sizes}")
        if not isinstance(self.test_size, int) or self.test_size < 2:
            raise ConfigError("test_size: expected an integer >= 2")
        if not isinstance(self.replicates, int) or self.replicates < 1:
            raise ConfigError("replicates: expected an integer >= 1")
        if not isinstance(self.base_seed, int) or self.base_seed < 0:
            raise ConfigError("base_seed: expected a non-negative integer")
        if not isinstance(self.parallel, int) or self.parallel < 0:
            raise ConfigError("parallel: expected an integer >= 0")
        badm = [m for m in self.methods if m not in ex.METHODS]
        if badm or not self.methods:
            raise ConfigError(f"methods: unknown {badm}; expected a subset of {list(ex.METHODS)}")
        if not isinstance(self.n_trees, int) or self.n_trees < 1:
            raise ConfigError("n_trees: expected an integer >= 1")
        for k in ("misspecified", "cache", "export_scores"):
            if not isinstance(getattr(self, k), bool):
                raise ConfigError(f"{k}: expected true or false")
        return self

    @property
    def workers(self) -> int:
        return self.parallel or (os.cpu_count() or 1)

    def scenarios(self) -> list[ex.Scenario]:
        return [
            ex.Scenario(lv, n, self.test_size, self.replicates, self.base_seed, self.n_trees)
            for lv in self.lambda_levels
            for n in self.train_sizes
        ]


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    if "command" in doc and isinstance(doc.get("config"), dict):
        # a run manifest: reuse the config it recorded
        doc = doc["config"]
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    return RunConfig(**doc)


def parse_scenario(text: str) -> tuple[str | None, int | None]:
    """``lambda:low,n:100`` (either part optional; ``λ`` works as the key too)."""
    level, n = None, None
    for part in text.split(","):
        if ":" not in part:
            raise ConfigError(f"--scenario {text!r}: expected key:value pairs")
        k, v = (s.strip() for s in part.split(":", 1))
        if k in ("lambda", "λ", "lam"):
            if v not in ex.LAMBDA_LEVELS:
                raise ConfigError(f"--scenario {text!r}: lambda must be low or high")
            level = v
        elif k == "n":
            try:
                n = int(v)
            except ValueError:
                raise ConfigError(f"--scenario {text!r}: n must be an integer") from None
        else:
            raise ConfigError(f"--scenario {text!r}: unknown key {k!r}")
    return level, n


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    env = os.environ.get(SEED_ENV)
    if env is not None and env != "":
        try:
            cfg.base_seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    if getattr(args, "seed", None) is not None:
        cfg.base_seed = args.seed
    if getattr(args, "replicates", None) is not None:
        cfg.replicates = args.replicates
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    if getattr(args, "parallel", None) is not None:
        cfg.parallel = args.parallel
    if getattr(args, "n_trees", None) is not None:
        cfg.n_trees = args.n_trees
    if getattr(args, "scenario", None):
        picks = [parse_scenario(s) for s in args.scenario]
        levels = [lv for lv in cfg.lambda_levels if any(p[0] in (None, lv) for p in picks)]
        sizes = sorted({p[1] for p in picks if p[1] is not None}) or cfg.train_sizes
        cfg.lambda_levels = levels or sorted({p[0] for p in picks if p[0]})
        cfg.train_sizes = sizes
    return cfg.validate()


def _manifest(cfg: RunConfig, command: str, outputs: dict) -> dict:
    return {
        "command": command,
        "version": __version__,
        "config": asdict(cfg),
        "outputs": outputs,
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    lv = args.lambda_level or cfg.lambda_levels[0]
    sc = ex.Scenario(lv, args.n, cfg.test_size, base_seed=cfg.base_seed)
    p = sc.params
    net = ex.replicate_network(sc, args.replicate)
    if args.split == "test":
        data = sample_dataset(cfg.test_size, p, net, substream(cfg.base_seed, args.replicate, "test", sc.lam_code))
    else:
        data = sample_dataset(args.n, p, net, substream(cfg.base_seed, args.replicate, "train", sc.lam_code, args.n))
    out = Path(cfg.out)
    write_dataset(out, data, net, p, seed=cfg.base_seed,
                  extra={"lambda": lv, "replicate": args.replicate, "split": args.split})
    print(f"wrote {len(data)} events to {out}")
    return 0


SCORE_FILE_COLUMNS = (
    "event_id", "label", "L_hat", "M_hat", "log_likelihood", "converged",
    "ell_det", "ell_nondet", "ell_obs", "bar_ell_obs", "bar_ell_det", "bar_ell_nondet", "m", "R_bar", "s_R",
)


def cmd_score(args) -> int:
    data, net, manifest = read_dataset(args.data)
    if "params" not in manifest:
        raise ConfigError(f"{args.data}: manifest has no parameters")
    p = params_from_manifest(manifest)
    fits = fit_dataset(data, p, net, FitConfig.from_params(p))
    st = score_table(data, fits, p, net)
    out = Path(args.out) if args.out else Path(args.data) / "scores.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_FILE_COLUMNS)
        conv = fits.converged
        for i in range(len(data)):
            lab = int(data.labels[i])
            w.writerow([
                i, "" if lab < 0 else lab, repr(float(st.theta_hat[i, 0])), repr(float(st.theta_hat[i, 1])),
                repr(float(fits.log_likelihood[i])), int(conv[i]),
                *(repr(float(v)) for v in st.ell[i]),
                repr(float(st.bar_ell[i, 2])), repr(float(st.bar_ell[i, 0])), repr(float(st.bar_ell[i, 1])),
                int(st.aux[i, 0]), repr(float(st.aux[i, 2])), repr(float(st.aux[i, 3])),
            ])
    print(f"scored {len(data)} events -> {out} ({fits.failure_count} not converged)")
    return 0


def _grid(args, mode: str, command: str) -> int:
    cfg = resolve_config(args)
    if mode == "pair":
        cfg.misspecified = True
    elif cfg.misspecified:
        mode = "pair"
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    run = ex.run_grid(cfg.scenarios(), cfg.replicates, mode=mode, methods=cfg.methods, parallel=cfg.workers,
                      cache_dir=out / "cache" if cfg.cache else None, progress=_progress)
    ex.write_raw_csv(out / "raw.csv", run.rows)
    ex.write_timing_csv(out / "timing.csv", run.timing)
    files = ex.write_report(out, run.rows)
    if cfg.export_scores:
        for sc in cfg.scenarios():
            if sc.train_size == cfg.train_sizes[0]:
                ex.export_score_samples(sc, 0, out / f"score_samples_{sc.lambda_level}.csv")
    (out / "manifest.json").write_text(json.dumps(
        _manifest(cfg, command, {k: str(v) for k, v in files.items()} | {"raw": str(out / "raw.csv")}),
        indent=2, sort_keys=True) + "\n")
    print((out / "panels.csv").read_text())
    return 0


def cmd_run(args) -> int:
    return _grid(args, "well", "run")


def cmd_misspec(args) -> int:
    return _grid(args, "pair", "misspec")


def cmd_coef_stability(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    table, rows = {}, []
    for sc in cfg.scenarios():
        stab, coefs = ex.coefficient_stability_run(sc, cfg.replicates, parallel=cfg.workers)
        table[(sc.lambda_level, sc.train_size)] = stab
        rows += [(sc.lambda_level, sc.train_size, r, c["bar_ell_det"], c["bar_ell_nondet"], c["bar_ell_obs"])
                 for r, c in enumerate(coefs)]
        _progress(f"{sc.key}: " + ", ".join(f"{s.coefficient} {s.median:.3f} ({s.sign_stability:.3f})" for s in stab))
    ex.write_coef_stability_csv(out / "coef_stability.csv", table)
    with (out / "coefficients.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "n", "replicate", "coef_bar_ell_det", "coef_bar_ell_nondet", "coef_bar_ell_obs"])
        for r in rows:
            w.writerow([r[0], r[1], r[2], *(repr(float(v)) for v in r[3:])])
    (out / "manifest.json").write_text(json.dumps(
        _manifest(cfg, "coef-stability", {"coef_stability": str(out / "coef_stability.csv")}), indent=2, sort_keys=True) + "\n")
    print((out / "coef_stability.csv").read_text())
    return 0


def cmd_report(args) -> int:
    raw = ex.read_raw_csv(args.raw)
    out = Path(args.out) if args.out else Path(args.raw).parent
    files = ex.write_report(out, raw)
    print((files["panels"]).read_text())
    return 0


def cmd_tree(args) -> int:
    cfg = resolve_config(args)
    study = ex.run_decision_tree(args.lambda_level, args.n, cfg.test_size, cfg.base_seed, args.replicate)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tree_rules.txt").write_text(study.rules + "\n")
    with (out / "tree_metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "n", "replicate", "root_feature", "depth", "n_leaves", *study.metrics.as_dict()])
        w.writerow([args.lambda_level, args.n, args.replicate, study.root_feature, study.depth, study.n_leaves,
                    *(repr(v) for v in study.metrics.as_dict().values())])
    print(study.rules)
    print(f"AUROC {study.metrics.auroc:.3f}, root split on {study.root_feature}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gofscreen", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"gofscreen {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, grid=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help=f"base seed (overrides {SEED_ENV} and the config)")
        p.add_argument("--out", help="output directory")
        if grid:
            p.add_argument("--replicates", type=int)
            p.add_argument("--parallel", type=int, help="worker processes (0 = all cores)")
            p.add_argument("--scenario", action="append", help="e.g. lambda:low,n:100 (repeatable)")
            p.add_argument("--n-trees", type=int, dest="n_trees", help="trees per forest (default 500)")

    p = sub.add_parser("simulate", help="generate a dataset and write it as CSV")
    common(p)
    p.add_argument("--n", type=int, default=100, help="number of events")
    p.add_argument("--lambda", dest="lambda_level", choices=sorted(ex.LAMBDA_LEVELS))
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("score", help="fit every event of a dataset and write its scores")
    p.add_argument("data", help="dataset directory written by 'simulate'")
    p.add_argument("--out", help="output CSV (default DATA/scores.csv)")
    p.set_defaults(func=cmd_score)

    for name, func, hlp in (("run", cmd_run, "run the main comparison grid"),
                            ("misspec", cmd_misspec, "paired well-specified / misspecified runs"),
                            ("coef-stability", cmd_coef_stability, "LR-decomp coefficient stability")):
        p = sub.add_parser(name, help=hlp)
        common(p, grid=True)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="rebuild tables from a raw results CSV")
    p.add_argument("raw", help="raw.csv written by 'run' or 'misspec'")
    p.add_argument("--out", help="output directory (default: next to the raw CSV)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("tree", help="depth-4 decision tree on decomposed scores, with its rule list")
    common(p)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--lambda", dest="lambda_level", choices=sorted(ex.LAMBDA_LEVELS), default="low")
    p.add_argument("--replicate", type=int, default=0)
    p.set_defaults(func=cmd_tree)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ex.ReplicateError, ValueError, OSError) as e:
        print(f"gofscreen {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
