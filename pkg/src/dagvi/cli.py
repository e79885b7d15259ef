"""Command-line experiment runner.

Subcommands::

    generate   sample a ground-truth SCM and a dataset
    train      fit a variational model to a dataset
    eval       score a checkpoint against a ground truth
    exact      compare a checkpoint with the enumerated posterior (d <= 4)
    sweep      generate -> train -> eval over several seeds and families

Configuration is one JSON document (``--config``); command-line flags win
over file values. Outputs go to ``--out``, else ``$DAGVI_OUT``, else
``./runs``. Every file write goes through a temporary file and
``os.replace`` so an interrupted run never leaves a truncated artifact.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import hashlib
import io
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data, evaluate, family, graph, trainer
from .bge import BgeHyperparams

CONFIG_VERSION = 1
RESULT_VERSION = 1
OUT_ENV = "DAGVI_OUT"
SUMMARY_STATS = {"median": 50, "q25": 25, "q75": 75}
METRICS = ("final_elbo", "expected_shd", "auroc", "hellinger")
SWEEP_COLUMNS = ("seed", "family", "status", "error", "seconds", "config_hash") + METRICS + tuple(
    f"paired_diff_{m}" for m in METRICS)

RESULT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "seed", "family", "d", "final_elbo", "expected_shd", "auroc",
                 "seconds", "config_hash"],
    "properties": {
        "version": {"const": RESULT_VERSION},
        "seed": {"type": "integer"},
        "family": {"enum": ["autoregressive", "factorized"]},
        "d": {"type": "integer", "minimum": 1},
        "final_elbo": {"type": ["number", "null"]},
        "expected_shd": {"type": "number", "minimum": 0},
        "auroc": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "hellinger": {"type": "number", "minimum": 0, "maximum": 1},
        "seconds": {"type": "number", "minimum": 0},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{16}$"},
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class ExperimentConfig:
    nodes: int = 10
    samples: int = 100
    expected_edges: float | None = None  # defaults to ``nodes``
    nontrivial_mec: bool = True
    seed: int = 0
    num_seeds: int = 1
    families: tuple[str, ...] = ("autoregressive",)
    shd_samples: int = 1000
    marginal_samples: int = 10_000
    deterministic: bool = False
    train: trainer.TrainConfig = field(default_factory=trainer.TrainConfig.desk)

    def __post_init__(self):
        if self.nodes < 2 or self.samples < 1 or self.num_seeds < 1:
            raise ValueError("need nodes >= 2, samples >= 1 and num_seeds >= 1")
        if not self.families or set(self.families) - {"autoregressive", "factorized"}:
            raise ValueError(f"bad family list {self.families!r}")

    @property
    def edges(self) -> float:
        return float(self.nodes if self.expected_edges is None else self.expected_edges)

    def to_dict(self) -> dict:
        out = {"version": CONFIG_VERSION}
        for f in dataclasses.fields(self):
            out[f.name] = getattr(self, f.name)
        out["families"] = list(self.families)
        out["train"] = self.train.to_dict()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        version = obj.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {version!r}")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "train" in obj:
            obj["train"] = trainer.TrainConfig.from_dict(obj["train"])
        if "families" in obj:
            obj["families"] = tuple(obj["families"])
        return cls(**obj)

    def for_seed(self, seed: int, family_name: str | None = None) -> "ExperimentConfig":
        updates = {"seed": seed}
        if family_name is not None:
            updates["family"] = family_name
        return dataclasses.replace(self, seed=seed,
                                   train=dataclasses.replace(self.train, **updates))


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- file output

def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_via(path, writer) -> None:
    """Run ``writer(tmp_path)`` and move the result into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def provenance(config: ExperimentConfig) -> dict:
    return {"config_hash": config_hash(config), "seed": config.seed, "config": config.to_dict()}


@contextlib.contextmanager
def determinism(enabled: bool):
    """Single-threaded BLAS, so reductions run in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


# ---------------------------------------------------------------- operations

def generate(config: ExperimentConfig, out: Path) -> tuple[data.WeightedScm, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    if config.nontrivial_mec:
        A = data.sample_er_dag_nontrivial_mec(config.nodes, config.edges, rng)
    else:
        A = data.sample_er_dag(config.nodes, config.edges, rng)
    scm = data.sample_weights(A, rng)
    X = data.simulate(scm, config.samples, rng)
    write_via(out / "data.csv", lambda p: data.write_csv(X, p))
    write_json(out / "scm.json", scm.to_dict())
    write_json(out / "generate.json", provenance(config))
    return scm, X


def train(config: ExperimentConfig, X: np.ndarray, out: Path):
    try:
        model, history = trainer.train(X, config.train)
    except trainer.TrainingError as exc:
        if exc.history is not None:
            write_via(out / "history.csv", exc.history.write_csv)
        raise
    write_via(out / "history.csv", history.write_csv)
    checkpoint = model.to_dict()
    checkpoint["provenance"] = {"config_hash": config_hash(config), "seed": config.seed}
    write_json(out / "model.json", checkpoint)
    write_json(out / "train.json", provenance(config))
    return model, history


def _oracle_parts(config: ExperimentConfig, d: int):
    hyper = BgeHyperparams.from_config(d, config.train.bge)
    prior = config.train.prior
    return hyper, prior, prior.temp_max


def evaluate_model(model, truth, config: ExperimentConfig, X: np.ndarray | None = None,
                   seconds: float = 0.0) -> dict:
    """The result record for one trained model; ``X`` enables the ELBO and Hellinger."""
    truth = graph.validate(truth)
    if truth.shape[0] != model.d:
        raise ValueError(f"checkpoint has d={model.d} but ground truth has d={truth.shape[0]}")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[2])
    result = {
        "version": RESULT_VERSION,
        "seed": config.seed,
        "family": model.family,
        "d": model.d,
        "final_elbo": None,
        "expected_shd": evaluate.expected_shd(model, truth, config.shd_samples, rng),
        "auroc": None,
        "seconds": float(seconds),
        "config_hash": config_hash(config),
    }
    marginals = model.edge_marginals(config.marginal_samples, rng)
    with contextlib.suppress(evaluate.UndefinedAuroc):
        result["auroc"] = evaluate.auroc(marginals, truth)
    if X is not None:
        stats = data.sufficient_stats(X)
        hyper, prior, lambda_t = _oracle_parts(config, model.d)
        objective = trainer.Objective(stats, hyper, prior)
        result["final_elbo"] = trainer.elbo_estimate(model, objective, lambda_t,
                                                     config.shd_samples, rng)
        if model.d <= evaluate.MAX_ENUM_D:
            post, _ = evaluate.enumerate_posterior(stats, hyper, lambda_t, prior)
            result["hellinger"] = evaluate.hellinger(post, evaluate.model_distribution(model))
    return result


def exact(model, X: np.ndarray, config: ExperimentConfig, out: Path, truth=None) -> dict:
    stats = data.sufficient_stats(X)
    if stats.d != model.d:
        raise ValueError(f"checkpoint has d={model.d} but data has d={stats.d}")
    hyper, prior, lambda_t = _oracle_parts(config, stats.d)
    post, log_norm = evaluate.enumerate_posterior(stats, hyper, lambda_t, prior)
    q = evaluate.model_distribution(model)
    summary = {
        "hellinger": evaluate.hellinger(post, q),
        "log_normalizer": log_norm,
        "log_normalizer_note": "log p(D) + log Z, Z the partition function of the unnormalized prior",
        "lambda_t": lambda_t,
        "exact_elbo": evaluate.exact_elbo(model, stats, hyper, lambda_t, prior),
        **provenance(config),
    }
    if truth is not None:
        summary["posterior_expected_shd"] = evaluate.exact_expected_shd(post, truth)
        summary["model_expected_shd"] = evaluate.exact_expected_shd(q, truth)
    write_via(out / "posterior.csv", lambda p: post.write_csv(p, truth))
    write_via(out / "model_table.csv", lambda p: q.write_csv(p, truth))
    write_json(out / "exact.json", summary)
    return summary


def _percentile(values, q):
    values = [v for v in values if v is not None]
    return float(np.percentile(values, q)) if values else None


def summarize(rows: list[dict]) -> list[dict]:
    """Median and quartile rows per family over successful runs."""
    summary = []
    for fam in dict.fromkeys(r["family"] for r in rows):
        ok = [r for r in rows if r["family"] == fam and r["status"] == "ok"]
        for label, q in SUMMARY_STATS.items():
            row = {"seed": label, "family": fam, "status": f"n={len(ok)}"}
            for col in METRICS + tuple(f"paired_diff_{m}" for m in METRICS) + ("seconds",):
                row[col] = _percentile([r.get(col) for r in ok], q)
            summary.append(row)
    return summary


def _add_paired_columns(rows: list[dict]) -> None:
    """Autoregressive minus factorized, on seeds where both succeeded."""
    by_key = {(r["seed"], r["family"]): r for r in rows if r["status"] == "ok"}
    for r in rows:
        other = by_key.get((r["seed"], "factorized"))
        if r["family"] != "autoregressive" or r["status"] != "ok" or other is None:
            continue
        for m in METRICS:
            if r.get(m) is not None and other.get(m) is not None:
                r[f"paired_diff_{m}"] = r[m] - other[m]


def write_sweep_csv(rows: list[dict], path) -> None:
    def fmt(v):
        if v is None:
            return ""
        return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in SWEEP_COLUMNS])
    atomic_write_text(path, buf.getvalue())


def sweep(config: ExperimentConfig, out: Path, log=print) -> list[dict]:
    rows = []
    for seed in range(config.seed, config.seed + config.num_seeds):
        seed_dir = out / f"seed_{seed:03d}"
        try:
            scm, X = generate(config.for_seed(seed), seed_dir)
        except Exception as exc:  # recorded per row; the sweep goes on
            rows.extend({"seed": seed, "family": f, "status": "failed",
                         "error": f"generate: {exc}"} for f in config.families)
            continue
        for fam in config.families:
            cfg = config.for_seed(seed, fam)
            row = {"seed": seed, "family": fam, "config_hash": config_hash(cfg)}
            start = time.perf_counter()
            try:
                model, _ = train(cfg, X, seed_dir / fam)
                elapsed = time.perf_counter() - start
                result = evaluate_model(model, scm.graph, cfg, X, seconds=elapsed)
                write_json(seed_dir / fam / "result.json", result)
                row.update(status="ok", error="", **result)
            except Exception as exc:
                row.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                           seconds=time.perf_counter() - start)
            rows.append(row)
            log(f"seed {seed} {fam}: {row['status']}"
                + (f" E[SHD]={row['expected_shd']:.3f}" if row["status"] == "ok" else f" ({row['error']})"))
    _add_paired_columns(rows)
    write_sweep_csv(rows + summarize(rows), out / "sweep.csv")
    return rows


# ---------------------------------------------------------------- argument parsing

FLAG_TARGETS = {
    # flag dest: (section, key); section None is the experiment level
    "seed": (None, "seed"),
    "nodes": (None, "nodes"),
    "samples": (None, "samples"),
    "num_seeds": (None, "num_seeds"),
    "epochs": ("train", "epochs"),
    "batch": ("train", "batch_size"),
    "lr": ("train", "learning_rate"),
    "family": ("train", "family"),
    "hidden": ("train", "hidden_size"),
    "lambda_sparse": ("prior", "lambda_sparse"),
    "temp_min": ("prior", "temp_min"),
    "temp_max": ("prior", "temp_max"),
}


def build_config(args) -> ExperimentConfig:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    raw = dict(raw)
    train_raw = trainer.TrainConfig.desk().to_dict()  # the CLI starts from the desk preset
    train_raw.update(raw.get("train") or {})
    prior_raw = dict(train_raw.get("prior") or {})
    for dest, (section, key) in FLAG_TARGETS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        {None: raw, "train": train_raw, "prior": prior_raw}[section][key] = value
    if getattr(args, "families", None):
        raw["families"] = args.families
    elif getattr(args, "family", None):
        raw["families"] = [args.family]
    if args.deterministic:
        raw["deterministic"] = True
    train_raw["seed"] = raw.get("seed", 0)
    train_raw["prior"] = prior_raw
    raw["train"] = train_raw
    return ExperimentConfig.from_dict(raw)


def output_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "runs")


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--nodes", type=int)
    common.add_argument("--samples", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--family", choices=["autoregressive", "factorized"])
    common.add_argument("--hidden", type=int)
    common.add_argument("--lambda-sparse", type=float)
    common.add_argument("--temp-min", type=float)
    common.add_argument("--temp-max", type=float)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded linear algebra for bit-identical reruns")

    parser = argparse.ArgumentParser(prog="dagvi", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="sample an SCM and a dataset")
    p = sub.add_parser("train", parents=[common], help="fit a model to a dataset")
    p.add_argument("--data", required=True, help="CSV dataset")
    p = sub.add_parser("eval", parents=[common], help="score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--truth", required=True, help="SCM JSON from 'generate'")
    p.add_argument("--data", help="dataset CSV; enables the ELBO and, for d <= 4, Hellinger")
    p = sub.add_parser("exact", parents=[common], help="compare with the enumerated posterior")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--truth", help="SCM JSON; adds expected-SHD columns")
    p = sub.add_parser("sweep", parents=[common], help="generate, train and evaluate over seeds")
    p.add_argument("--num-seeds", type=int)
    p.add_argument("--families", nargs="+", choices=["autoregressive", "factorized"],
                   help="several families train on shared data, giving paired columns")
    return parser


def run(args) -> int:
    config = build_config(args)
    out = output_dir(args)
    with determinism(config.deterministic):
        if args.command == "generate":
            scm, _ = generate(config, out)
            print(f"wrote {out / 'data.csv'} and {out / 'scm.json'} ({int(scm.graph.sum())} edges)")
        elif args.command == "train":
            X = data.read_csv(args.data)
            config = dataclasses.replace(config, nodes=max(X.shape[1], 2), samples=X.shape[0])
            _, history = train(config, X, out)
            print(f"final ELBO estimate {history.records[-1].elbo:.4f}; wrote {out / 'model.json'}")
        elif args.command == "eval":
            model = family.load_checkpoint(args.checkpoint)
            truth = data.load_scm(args.truth).graph
            X = data.read_csv(args.data) if args.data else None
            result = evaluate_model(model, truth, config, X)
            write_json(out / "result.json", result)
            print(json.dumps(result, indent=2))
        elif args.command == "exact":
            model = family.load_checkpoint(args.checkpoint)
            truth = data.load_scm(args.truth).graph if args.truth else None
            summary = exact(model, data.read_csv(args.data), config, out, truth)
            print(f"Hellinger to the exact posterior: {summary['hellinger']:.4f}")
        elif args.command == "sweep":
            rows = sweep(config, out)
            failed = sum(r["status"] != "ok" for r in rows)
            print(f"wrote {out / 'sweep.csv'} ({len(rows)} runs, {failed} failed)")
    return 0


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except (ValueError, OSError, trainer.TrainingError) as exc:
        print(f"dagvi {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
