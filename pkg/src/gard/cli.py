"""Command line entry point: gen, train, eval, early, sweep, gradcheck.

Settings come from dataclass defaults, then an optional INI file
(``[train]``, ``[gen]`` and ``[run]`` sections, keys named after the
dataclass fields), then flags.  Failures print one JSON line on stderr and
exit with a code that depends on the failure class.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .datagen import GenSpec, gen_corpus
from .errors import ConfigError, DataError, DivergedError
from .graphdata import CorpusError, SchemaError, read_corpus
from .model import ModelParams
from .training import (
    TrainConfig,
    confusion_matrix,
    cross_validate,
    early_detect,
    log_columns,
    metrics_from_confusion,
    predict,
)

EXIT_FAIL, EXIT_USAGE, EXIT_MISSING, EXIT_SCHEMA, EXIT_DATA, EXIT_DIVERGED = 1, 2, 3, 4, 5, 6
SWEEP_GRID = (0.0, 0.01, 0.05, 0.1, 0.3, 0.5, 0.8, 1.0)


class CliError(Exception):
    def __init__(self, kind: str, code: int, message: str):
        super().__init__(message)
        self.kind, self.code = kind, code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", EXIT_USAGE, message)


# ---------------------------------------------------------------------------
# effective configuration


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    gen: GenSpec = field(default_factory=GenSpec)
    corpus: str | None = None
    out: str = "runs"
    jobs: int = 1

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["train"] = {k: _fmt(v) for k, v in asdict(self.train).items()}
        cp["gen"] = {k: _fmt(v) for k, v in asdict(self.gen).items()}
        cp["run"] = {"corpus": self.corpus or "", "out": self.out, "jobs": str(self.jobs)}
        lines = []
        for name in cp.sections():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {v}" for k, v in cp[name].items())
            lines.append("")
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _coerce(default, raw: str, key: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return parse_floats(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_floats(text: str) -> tuple[float, ...]:
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ConfigError("expected a comma-separated list of numbers")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"not a number list: {text!r}") from exc


def _overrides(cls, section: dict[str, str], where: str) -> dict:
    defaults = {f.name: f.default for f in fields(cls)}
    out = {}
    for key, raw in section.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r} in [{where}]")
        out[key] = _coerce(defaults[key], raw, f"{where}.{key}")
    return out


def load_ini(path) -> dict[str, dict]:
    path = Path(path)
    if not path.is_file():
        raise CliError("missing_file", EXIT_MISSING, f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    extra = set(cp.sections()) - {"train", "gen", "run"}
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    return {
        "train": _overrides(TrainConfig, dict(cp["train"]) if cp.has_section("train") else {}, "train"),
        "gen": _overrides(GenSpec, dict(cp["gen"]) if cp.has_section("gen") else {}, "gen"),
        "run": dict(cp["run"]) if cp.has_section("run") else {},
    }


# argparse dest -> dataclass field
TRAIN_FLAGS = {
    "variant": "variant", "alpha1": "alpha1", "alpha2": "alpha2", "t": "t",
    "mask_ratio": "mask_ratio", "folds": "folds", "deadlines": "deadlines_min",
    "epochs": "epochs", "batch_size": "batch_size", "lr": "lr", "d_h": "d_h",
    "patience": "patience",
}
GEN_FLAGS = {
    "n_events": "n_events", "classes": "classes", "d": "d", "min_nodes": "min_nodes",
    "max_nodes": "max_nodes", "noise_sigma": "noise_sigma", "drift_scale": "drift_scale",
    "flip_delay": "flip_delay_min", "root_scale": "root_scale",
}


def resolve(args: argparse.Namespace, env=os.environ) -> RunConfig:
    """Defaults < INI file < flags.  GARD_SEED is used when neither sets a seed."""
    ini = load_ini(args.config) if getattr(args, "config", None) else {"train": {}, "gen": {}, "run": {}}
    train = dict(ini["train"])
    gen = dict(ini["gen"])
    run = dict(ini["run"])
    ns = vars(args)
    for flag, key in TRAIN_FLAGS.items():
        if flag in ns and not (args.command == "sweep" and flag in ("alpha1", "alpha2")):
            train[key] = parse_floats(ns[flag]) if flag == "deadlines" else ns[flag]
    for flag, key in GEN_FLAGS.items():
        if flag in ns:
            gen[key] = ns[flag]
    if "seed" in ns:
        seed = ns["seed"]
    elif "seed" in train or "seed" in gen:
        seed = train.get("seed", gen.get("seed"))
    elif env.get("GARD_SEED"):
        try:
            seed = int(env["GARD_SEED"])
        except ValueError as exc:
            raise ConfigError(f"GARD_SEED must be an integer, got {env['GARD_SEED']!r}") from exc
    else:
        seed = 0
    train["seed"] = gen["seed"] = seed
    corpus = ns.get("corpus", run.get("corpus") or None)
    out = ns.get("out", run.get("out", "runs"))
    jobs = ns.get("jobs", _coerce(1, run.get("jobs", "1"), "run.jobs"))
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    return RunConfig(TrainConfig(**train), GenSpec(**gen), corpus, out, jobs)


# ---------------------------------------------------------------------------
# run directories


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_key(cfg: RunConfig, corpus_sha: str, extra: dict | None = None) -> str:
    blob = json.dumps({"train": asdict(cfg.train), "corpus": corpus_sha, **(extra or {})},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _load_corpus(path):
    if not path:
        raise CliError("missing_file", EXIT_MISSING, "no corpus given (--corpus or [run] corpus)")
    if not Path(path).is_file():
        raise CliError("missing_file", EXIT_MISSING, f"corpus not found: {path}")
    return read_corpus(path)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _locate_run(args, cfg: RunConfig) -> Path:
    if "run" in vars(args):
        run = Path(args.run)
    else:
        if not cfg.corpus or not Path(cfg.corpus).is_file():
            raise CliError("missing_file", EXIT_MISSING, "pass --run, or --corpus with the training settings")
        run = Path(cfg.out) / f"run-{run_key(cfg, file_digest(cfg.corpus))}"
    if not (run / "run.json").is_file():
        raise CliError("missing_file", EXIT_MISSING, f"no trained run at {run}")
    return run


def _load_run(run: Path):
    meta = json.loads((run / "run.json").read_text())
    corpus_path = meta["corpus"]
    corpus = _load_corpus(corpus_path)
    if file_digest(corpus_path) != meta["corpus_sha256"]:
        raise DataError(f"corpus {corpus_path} changed since the run was trained")
    folds = []
    for f in meta["folds"]:
        params = ModelParams.load(run / f["checkpoint"])
        folds.append((f["fold"], params, f["test_idx"]))
    return meta, corpus, folds


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, cfg: RunConfig) -> int:
    out = Path(cfg.out if "out" in vars(args) else "corpus.jsonl")
    events = gen_corpus(cfg.gen, out)
    print(json.dumps({"corpus": str(out), "events": len(events), "seed": cfg.gen.seed}))
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    corpus = _load_corpus(cfg.corpus)
    sha = file_digest(cfg.corpus)
    run = Path(cfg.out) / f"run-{run_key(cfg, sha)}"
    run.mkdir(parents=True, exist_ok=True)
    cv = cross_validate(corpus.events, cfg.train, classes=corpus.classes, jobs=cfg.jobs)
    cols = log_columns(cfg.train.variant)
    rows = []
    folds = []
    for f in cv.folds:
        ckpt = f"fold{f.fold}.params.json"
        f.params.save(run / ckpt)
        folds.append({"fold": f.fold, "checkpoint": ckpt, "test_idx": [int(i) for i in f.test_idx],
                      "epochs_run": len(f.log)})
        rows.extend([f.fold] + [r[c] for c in cols] for r in f.log)
    _write_csv(run / "train_log.csv", ["fold"] + cols, rows)
    (run / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    _dump_json(run / "run.json", {
        "corpus": str(Path(cfg.corpus).resolve()),
        "corpus_sha256": sha,
        "classes": corpus.classes,
        "config_digest": cfg.train.digest(),
        "folds": folds,
    })
    print(json.dumps({"run": str(run), "fold_accuracy_mean": cv.mean_accuracy}))
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    run = _locate_run(args, cfg)
    meta, corpus, folds = _load_run(run)
    classes = meta["classes"]
    pooled = np.zeros((classes, classes), dtype=np.int64)
    per_fold = []
    for k, params, test_idx in folds:
        test = [corpus.events[i] for i in test_idx]
        conf = confusion_matrix([e.label for e in test], predict(params, test), classes)
        pooled += conf
        per_fold.append({"fold": k, "n_test": len(test), **metrics_from_confusion(conf).to_dict()})
    accs = [f["accuracy"] for f in per_fold]
    metrics = {
        "config_digest": meta["config_digest"],
        "aggregate": metrics_from_confusion(pooled).to_dict(),
        "fold_accuracy_mean": float(np.mean(accs)),
        "fold_accuracy_std": float(np.std(accs)),
        "folds": per_fold,
    }
    _dump_json(run / "metrics.json", metrics)
    print(json.dumps({"metrics": str(run / "metrics.json"),
                      "accuracy": metrics["aggregate"]["accuracy"]}))
    return 0


def cmd_early(args, cfg: RunConfig) -> int:
    run = _locate_run(args, cfg)
    _, corpus, folds = _load_run(run)
    deadlines = cfg.train.deadlines_min
    correct = np.zeros(len(deadlines), dtype=int)
    total = np.zeros(len(deadlines), dtype=int)
    for _, params, test_idx in folds:
        curve = early_detect(params, [corpus.events[i] for i in test_idx], deadlines)
        for i, (c, n) in enumerate(curve.counts):
            correct[i] += c
            total[i] += n
    rows = [[d, c / n if n else 0.0, c, n] for d, c, n in zip(deadlines, correct, total)]
    _write_csv(run / "early_curve.csv", ["deadline_min", "accuracy", "correct", "total"], rows)
    print(json.dumps({"early_curve": str(run / "early_curve.csv"), "points": len(rows)}))
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    ns = vars(args)
    given = [k for k in ("alpha1", "alpha2") if k in ns]
    if len(given) > 1:
        raise ConfigError("sweep one weight at a time (--alpha1 or --alpha2)")
    name = given[0] if given else "alpha1"
    grid = parse_floats(ns[name]) if given else SWEEP_GRID
    corpus = _load_corpus(cfg.corpus)
    sha = file_digest(cfg.corpus)
    run = Path(cfg.out) / f"sweep-{run_key(cfg, sha, {'sweep': name, 'grid': list(grid)})}"
    run.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in grid:
        cv = cross_validate(corpus.events, replace(cfg.train, **{name: value}),
                            classes=corpus.classes, jobs=cfg.jobs)
        rows.append([name, value, cv.aggregate.accuracy, cv.aggregate.macro_f1,
                     cv.mean_accuracy, cv.std_accuracy])
    _write_csv(run / "sweep.csv",
               ["param", "value", "accuracy", "macro_f1", "fold_accuracy_mean", "fold_accuracy_std"], rows)
    (run / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    print(json.dumps({"sweep": str(run / "sweep.csv"), "rows": len(rows)}))
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .selfcheck import TOLERANCE, run_suite

    rows = run_suite()
    for r in rows:
        print(f"fixture={r.fixture}\t{r.tensor}\t{r.rel_err:.3e}\t{'ok' if r.ok else 'FAIL'}")
    worst = max(r.rel_err for r in rows)
    ok = all(r.ok for r in rows)
    print(json.dumps({"gradcheck": "pass" if ok else "fail", "max_rel_err": worst,
                      "tolerance": TOLERANCE, "checked": len(rows)}))
    return 0 if ok else EXIT_FAIL


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
    "early": cmd_early, "sweep": cmd_sweep, "gradcheck": cmd_gradcheck,
}


# ---------------------------------------------------------------------------
# parser


def _add(p, flag, typ, default, text):
    # SUPPRESS keeps absent flags out of the namespace so the INI file can fill them
    p.add_argument(flag, type=typ, default=argparse.SUPPRESS, help=f"{text} (default: {default})")


def build_parser() -> argparse.ArgumentParser:
    t, g = TrainConfig(), GenSpec()
    common = _Parser(add_help=False)
    _add(common, "--config", str, None, "INI file with [train], [gen], [run] sections")
    _add(common, "--seed", int, "$GARD_SEED or 0", "seed for generation, splits and init")
    _add(common, "--jobs", int, 1, "parallel folds")

    data = _Parser(add_help=False)
    _add(data, "--corpus", str, None, "JSONL corpus")
    _add(data, "--out", str, "runs", "parent directory for run directories")
    _add(data, "--variant", str, t.variant, "full | sup | ngs | nls | nu")
    _add(data, "--t", float, t.t, "uniformity temperature")
    _add(data, "--mask-ratio", float, t.mask_ratio, "fraction of nodes masked for global reconstruction")
    _add(data, "--folds", int, t.folds, "cross-validation folds")
    _add(data, "--deadlines", str, _fmt(t.deadlines_min), "early-detection deadlines in minutes, CSV")
    _add(data, "--epochs", int, t.epochs, "max epochs per fold")
    _add(data, "--batch-size", int, t.batch_size, "events per batch")
    _add(data, "--lr", float, t.lr, "Adam learning rate")
    _add(data, "--d-h", int, t.d_h, "hidden width")
    _add(data, "--patience", int, t.patience, "early stop after this many epochs without improvement; 0 = off")

    weights = _Parser(add_help=False)
    _add(weights, "--alpha1", float, t.alpha1, "reconstruction weight")
    _add(weights, "--alpha2", float, t.alpha2, "uniformity weight")

    run = _Parser(add_help=False)
    _add(run, "--run", str, "derived from config", "run directory written by train")

    parser = _Parser(prog="gard", description="Graph-autoencoder rumor detection experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic corpus")
    _add(p, "--out", str, "corpus.jsonl", "output corpus path")
    _add(p, "--n-events", int, g.n_events, "number of events")
    _add(p, "--classes", int, g.classes, "2 or 4")
    _add(p, "--d", int, g.d, "feature dimension")
    _add(p, "--min-nodes", int, g.min_nodes, "smallest tree")
    _add(p, "--max-nodes", int, g.max_nodes, "largest tree")
    _add(p, "--noise-sigma", float, g.noise_sigma, "per-hop feature noise")
    _add(p, "--drift-scale", float, g.drift_scale, "per-hop drift along the planted direction")
    _add(p, "--flip-delay", float, g.flip_delay_min, "minutes until rumor replies reverse")
    _add(p, "--root-scale", float, g.root_scale, "spread of source-post features")

    sub.add_parser("train", parents=[common, data, weights], help="cross-validated training")
    sub.add_parser("eval", parents=[common, data, weights, run], help="write metrics.json for a run")
    sub.add_parser("early", parents=[common, data, weights, run], help="write early_curve.csv for a run")
    p = sub.add_parser("sweep", parents=[common, data], help="sweep alpha1 or alpha2, write sweep.csv")
    _add(p, "--alpha1", str, _fmt(SWEEP_GRID), "alpha1 grid, CSV")
    _add(p, "--alpha2", str, None, "alpha2 grid, CSV (instead of --alpha1)")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the full loss")
    return parser


def _fail(err: CliError) -> int:
    print(json.dumps({"error": err.kind, "exit": err.code, "message": str(err)}), file=sys.stderr)
    return err.code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        return COMMANDS[args.command](args, cfg)
    except CliError as err:
        return _fail(err)
    except ConfigError as err:
        return _fail(CliError("config", EXIT_USAGE, str(err)))
    except (SchemaError, CorpusError) as err:
        return _fail(CliError("schema", EXIT_SCHEMA, str(err)))
    except FileNotFoundError as err:
        return _fail(CliError("missing_file", EXIT_MISSING, str(err)))
    except DivergedError as err:
        return _fail(CliError("diverged", EXIT_DIVERGED, str(err)))
    except DataError as err:
        return _fail(CliError("data", EXIT_DATA, str(err)))


if __name__ == "__main__":
    sys.exit(main())
