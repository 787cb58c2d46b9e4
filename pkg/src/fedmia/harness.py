"""Experiment orchestration: data -> federation -> attack -> metrics -> files.

Output layout under ``output_dir``::

    <config-hash>/config.txt
    <config-hash>/rounds.csv
    <config-hash>/attack.json
    <config-hash>/figures/agreement.csv
    <config-hash>/figures/confidence.csv
    summary.json
    figures/trajectories.csv
    figures/convergence.csv

Every byte is a function of the configs; nothing depends on time, host or
worker count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .attack import (MiaReport, build_attack_dataset, calibrate_threshold,
                     evaluate_mia, train_attack, train_shadows)
from .config import ExperimentConfig, load_config
from .data import (Dataset, generate_synthetic, load_idx,
                   membership_split_from, partition, read_csv)
from .federation import RoundRecord, run_federation
from .metrics import agreement_profile, confidence_histograms, spearman
from .model import TrainConfig, init_params
from .seeding import derive_seed

log = logging.getLogger(__name__)

ROUNDS_COLUMNS = ("config_hash", "strategy", "n_clients", "round", "selected_client",
                  "train_acc", "test_acc", "mia_acc", "member_conf", "nonmember_conf")


class RunError(RuntimeError):
    """A run failed after its config validated; the message names the config."""


@dataclass(frozen=True, eq=False)
class Layout:
    """Disjoint index sets over the full dataset."""

    shadow_pool: np.ndarray
    test: np.ndarray
    reference: np.ndarray
    train_pool: np.ndarray
    holdout: np.ndarray


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list[RoundRecord]
    reports: dict  # "shadow" / "threshold" -> MiaReport on the final model
    figures: dict  # figure name -> list of (bin_lo, bin_hi, population, count)
    diagnostics: dict  # scalar summaries (agreement / confidence means)
    # (round, {population: mean max-confidence}) at every audited round
    confidence_trajectory: list = field(default_factory=list)


@dataclass
class SweepResult:
    runs: list[RunResult] = field(default_factory=list)

    @property
    def provenance(self) -> dict:
        return {"tool": "fedmia", "version": __version__,
                "configs": {r.config.config_hash: r.config["seed"] for r in self.runs}}

    def table(self) -> list[dict]:
        """Round records keyed by (n_clients, strategy, round)."""
        return [dict(zip(ROUNDS_COLUMNS, row))
                for run in self.runs for row in _round_rows(run)]


# --- building blocks ---------------------------------------------------------

def build_dataset(config: ExperimentConfig) -> Dataset:
    kind = config["dataset.kind"]
    limit = config["dataset.limit"] or None
    if kind == "synthetic":
        seed = config["dataset.seed"]
        if seed < 0:
            seed = derive_seed(config["seed"], "dataset")
        ds = generate_synthetic(config["dataset.samples"], config["dataset.features"],
                                config["dataset.classes"], config["dataset.separation"],
                                seed)
        return ds.subset(np.arange(limit)) if limit else ds
    if kind == "idx":
        return load_idx(config["dataset.images"], config["dataset.labels"], limit=limit)
    ds = read_csv(config["dataset.path"])
    return ds.subset(np.arange(limit)) if limit else ds


def make_layout(n_samples: int, config: ExperimentConfig) -> Layout:
    """Carve shadow pool, test set, server reference, members and holdout.

    After the shadow pool and test set are removed, ``train_fraction`` of the
    rest forms the member side; ``reference_fraction`` of that side goes to
    the server and the remainder is partitioned across clients.
    """
    perm = np.random.default_rng(derive_seed(config["seed"], "layout")).permutation(n_samples)
    n_shadow, n_test = config["split.shadow_pool"], config["split.test_size"]
    rest = perm[n_shadow + n_test:]
    n_member_side = int(round(config["split.train_fraction"] * len(rest)))
    n_reference = int(round(config["split.reference_fraction"] * n_member_side))
    if len(rest) - n_member_side < 1 or n_member_side - n_reference < config["federation.n_clients"]:
        raise RunError(
            f"{n_samples} samples leave too little data after the shadow pool "
            f"({n_shadow}) and test set ({n_test})")
    return Layout(shadow_pool=np.sort(perm[:n_shadow]),
                  test=np.sort(perm[n_shadow:n_shadow + n_test]),
                  reference=np.sort(rest[:n_reference]),
                  train_pool=np.sort(rest[n_reference:n_member_side]),
                  holdout=np.sort(rest[n_member_side:]))


def train_config(config: ExperimentConfig, epochs: int | None = None,
                 stream: str = "train") -> TrainConfig:
    return TrainConfig(learning_rate=config["train.lr"],
                       batch_size=config["train.batch_size"],
                       local_epochs=epochs or config["train.local_epochs"],
                       seed=derive_seed(config["seed"], stream))


def layer_dims(config: ExperimentConfig, dataset: Dataset) -> list[int]:
    return [dataset.n_features, *config.hidden, dataset.num_classes]


# --- single experiment -------------------------------------------------------

def run_experiment(config: ExperimentConfig, write: bool = True) -> SweepResult:
    """Run one config; with ``write`` the run directory is written atomically."""
    try:
        run = _run(config)
    except (ValueError, RunError) as exc:
        raise RunError(f"config {config.config_hash} ({config['name']}): {exc}") from exc
    result = SweepResult([run])
    if write:
        write_run(run, Path(config["output_dir"]))
    return result


def _run(config: ExperimentConfig) -> RunResult:
    master = config["seed"]
    dataset = build_dataset(config)
    layout = make_layout(len(dataset), config)
    dims = layer_dims(config, dataset)
    strategy = config.strategy
    n_clients = config["federation.n_clients"]
    rounds = config["federation.rounds"]
    log.info("run %s: %s n=%d R=%d", config.config_hash, strategy.value, n_clients, rounds)

    # adversary side: shadows on a disjoint, distribution-matched pool
    shadow_pool = dataset.subset(layout.shadow_pool, "shadow-pool")
    shadows = train_shadows(shadow_pool, config["attack.k_shadows"], dims,
                            train_config(config, config.shadow_epochs, "shadow-train"),
                            derive_seed(master, "shadows"))
    attack_data = build_attack_dataset(shadows, shadow_pool)
    shadow_attack = train_attack(attack_data, derive_seed(master, "attack"))
    threshold_attack = calibrate_threshold(attack_data)

    split = membership_split_from(
        layout.train_pool, layout.holdout, config["attack.eval_size"],
        np.random.default_rng(derive_seed(master, "mia-eval")))

    pool = dataset.subset(layout.train_pool, "train-pool")
    test = (dataset.features[layout.test], dataset.labels[layout.test])
    reference = ((dataset.features[layout.reference], dataset.labels[layout.reference])
                 if len(layout.reference) else None)
    plan = partition(len(pool), n_clients, derive_seed(master, "partition"))
    initial = init_params(dims, derive_seed(master, "init"))
    cadence = config["attack.cadence"]
    last_clients: list = []
    trajectory: list = []

    def on_round(record: RoundRecord, net, clients) -> RoundRecord:
        last_clients[:] = clients
        if (record.round + 1) % cadence and record.round != rounds - 1:
            return record
        hist = confidence_histograms(net, (pool.features, pool.labels), test)
        trajectory.append((record.round, {p: hist.mean(p) for p in hist.values}))
        rep = evaluate_mia(shadow_attack, net, split, dataset)
        return replace(record, mia_accuracy=rep.attack_accuracy,
                       mean_member_confidence=rep.member_mean_confidence,
                       mean_nonmember_confidence=rep.nonmember_mean_confidence)

    records, final = run_federation(
        initial, plan, pool, train_config(config), strategy, rounds, reference,
        test=test, correct_mode=config["federation.correct_mode"],
        workers=config["run.workers"], on_round=on_round)

    reports = {"shadow": evaluate_mia(shadow_attack, final, split, dataset),
               "threshold": evaluate_mia(threshold_attack, final, split, dataset)}
    hist = confidence_histograms(final, (pool.features, pool.labels), test)
    figures = {"confidence": list(hist.rows())}
    diagnostics = {f"confidence_{pop}": _nan_to_none(hist.mean(pop))
                   for pop in hist.values}
    if last_clients:
        nets = [c.params for c in last_clients]
        prof_train = agreement_profile(nets, final, pool.features, pool.labels)
        prof_test = agreement_profile(nets, final, *test)
        figures["agreement"] = list(prof_train.rows("train")) + list(prof_test.rows("test"))
        diagnostics["agreement_train"] = _nan_to_none(prof_train.mean)
        diagnostics["agreement_test"] = _nan_to_none(prof_test.mean)
    return RunResult(config, records, reports, figures, diagnostics, trajectory)


def _nan_to_none(x: float):
    return None if math.isnan(x) else x


# --- sweeps ------------------------------------------------------------------

def _dataset_key(config: ExperimentConfig):
    keys = [k for k, _ in config.values if k.startswith("dataset.")] + ["model.hidden"]
    return tuple((k, config[k]) for k in keys)


def run_sweep(configs, workers: int = 1, output_dir=None) -> SweepResult:
    """Run configs (concurrently when ``workers > 1``) and merge their results.

    All configs must share dataset and architecture.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("empty sweep")
    key = _dataset_key(configs[0])
    for cfg in configs[1:]:
        if _dataset_key(cfg) != key:
            raise ValueError(f"config {cfg['name']!r} uses a different dataset or architecture")
    hashes = [c.config_hash for c in configs]
    if len(set(hashes)) != len(hashes):
        raise ValueError("sweep contains duplicate configs")

    def one(cfg):
        try:
            return _run(cfg)
        except (ValueError, RunError) as exc:
            raise RunError(f"config {cfg.config_hash} ({cfg['name']}): {exc}") from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(one, configs))
    else:
        runs = [one(c) for c in configs]
    result = SweepResult(runs)
    if output_dir is not None:
        for run in runs:
            write_run(run, Path(output_dir))
        report(result, output_dir)
    return result


def load_config_dir(path) -> list[ExperimentConfig]:
    files = sorted(Path(path).glob("*.cfg")) + sorted(Path(path).glob("*.conf"))
    if not files:
        raise FileNotFoundError(f"no *.cfg files in {path}")
    return [load_config(f) for f in files]


# --- output ------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def _round_rows(run: RunResult):
    cfg = run.config
    for r in run.records:
        yield (cfg.config_hash, r.strategy.value, cfg["federation.n_clients"], r.round,
               r.selected_client, r.train_accuracy, r.test_accuracy, r.mia_accuracy,
               r.mean_member_confidence, r.mean_nonmember_confidence)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_run(run: RunResult, output_dir) -> Path:
    cfg = run.config
    out = Path(output_dir) / cfg.config_hash
    atomic_write(out / "config.txt", cfg.serialize(include_non_semantic=False))
    atomic_write(out / "rounds.csv", _csv_text(ROUNDS_COLUMNS, _round_rows(run)))
    attack = {"config_hash": cfg.config_hash,
              **{k: json.loads(v.to_json()) for k, v in run.reports.items()},
              "diagnostics": run.diagnostics,
              "confidence_trajectory": [
                  {"round": r, **{k: _nan_to_none(v) for k, v in means.items()}}
                  for r, means in run.confidence_trajectory]}
    atomic_write(out / "attack.json", _json(attack))
    for name, rows in run.figures.items():
        atomic_write(out / "figures" / f"{name}.csv",
                     _csv_text(("bin_lo", "bin_hi", "population", "count"), rows))
    return out


def _summary_entry(run: RunResult) -> dict:
    cfg, recs = run.config, run.records
    evaluated = [r for r in recs if not math.isnan(r.mia_accuracy)]
    rho = None
    if len(evaluated) >= 3:
        res = spearman([r.test_accuracy for r in evaluated],
                       [r.mia_accuracy for r in evaluated])
        rho = {"rho": res.rho, "degenerate": res.degenerate}
    final = recs[-1] if recs else None
    return {
        "config_hash": cfg.config_hash,
        "name": cfg["name"],
        "seed": cfg["seed"],
        "strategy": cfg["federation.strategy"],
        "n_clients": cfg["federation.n_clients"],
        "rounds": cfg["federation.rounds"],
        "final_train_acc": final.train_accuracy if final else None,
        "final_test_acc": final.test_accuracy if final else None,
        "final_gap": (final.train_accuracy - final.test_accuracy) if final else None,
        "mia_shadow": run.reports["shadow"].attack_accuracy,
        "mia_threshold": run.reports["threshold"].attack_accuracy,
        "spearman_test_acc_mia_acc": rho,
        **run.diagnostics,
    }


def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def summarize(result: SweepResult) -> dict:
    entries = sorted((_summary_entry(r) for r in result.runs),
                     key=lambda e: (e["strategy"], e["n_clients"], e["seed"], e["config_hash"]))
    groups: dict = {}
    for e in entries:
        groups.setdefault((e["strategy"], e["n_clients"]), []).append(e)
    means = [{"strategy": s, "n_clients": n, "n_seeds": len(g),
              **{k: _mean([e[k] for e in g])
                 for k in ("final_train_acc", "final_test_acc", "final_gap",
                           "mia_shadow", "mia_threshold")}}
             for (s, n), g in sorted(groups.items())]
    return {"provenance": result.provenance, "runs": entries, "means": means}


def report(result: SweepResult, output_dir) -> dict:
    """Write ``summary.json`` and the cross-run figure CSVs; return the summary."""
    if not result.runs:
        raise ValueError("empty result")
    out = Path(output_dir)
    summary = summarize(result)
    atomic_write(out / "summary.json", _json(summary))
    runs = sorted(result.runs, key=lambda r: r.config.config_hash)
    traj = []
    conv = []
    for run in runs:
        cfg = run.config
        for r in run.records:
            traj.append((cfg.config_hash, r.strategy.value, cfg["federation.n_clients"],
                         cfg["seed"], r.round, r.train_accuracy, r.test_accuracy,
                         r.mia_accuracy))
            conv.append((cfg.config_hash, cfg["federation.n_clients"], cfg["seed"],
                         r.round, r.test_accuracy,
                         r.train_accuracy - r.test_accuracy))
    atomic_write(out / "figures" / "trajectories.csv", _csv_text(
        ("config_hash", "strategy", "n_clients", "seed", "round", "train_acc",
         "test_acc", "mia_acc"), traj))
    atomic_write(out / "figures" / "convergence.csv", _csv_text(
        ("config_hash", "n_clients", "seed", "round", "test_acc", "gap"), conv))
    return summary


# --- reloading written results ---------------------------------------------

def _parse_float(text: str) -> float:
    return float(text) if text else math.nan


def load_run(run_dir) -> RunResult:
    from .config import parse_config
    from .federation import AggregationStrategy

    run_dir = Path(run_dir)
    config = parse_config((run_dir / "config.txt").read_text())
    records = []
    with open(run_dir / "rounds.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(RoundRecord(
                round=int(row["round"]),
                strategy=AggregationStrategy.parse(row["strategy"]),
                selected_client=int(row["selected_client"]) if row["selected_client"] else None,
                train_accuracy=_parse_float(row["train_acc"]),
                test_accuracy=_parse_float(row["test_acc"]),
                mia_accuracy=_parse_float(row["mia_acc"]),
                mean_member_confidence=_parse_float(row["member_conf"]),
                mean_nonmember_confidence=_parse_float(row["nonmember_conf"])))
    attack = json.loads((run_dir / "attack.json").read_text())
    reports = {k: MiaReport(**attack[k]) for k in ("shadow", "threshold")}
    figures = {}
    for path in sorted((run_dir / "figures").glob("*.csv")):
        with open(path, newline="") as fh:
            figures[path.stem] = [(float(r["bin_lo"]), float(r["bin_hi"]),
                                   r["population"], int(r["count"]))
                                  for r in csv.DictReader(fh)]
    trajectory = [(e.pop("round"), {k: math.nan if v is None else v for k, v in e.items()})
                  for e in attack.get("confidence_trajectory", [])]
    return RunResult(config, records, reports, figures, attack.get("diagnostics", {}),
                     trajectory)


def load_result(result_dir) -> SweepResult:
    dirs = sorted(p.parent for p in Path(result_dir).glob("*/rounds.csv"))
    if not dirs:
        raise FileNotFoundError(f"no run directories under {result_dir}")
    return SweepResult([load_run(d) for d in dirs])
