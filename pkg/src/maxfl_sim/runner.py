"""Experiment orchestration: build clients, run seeds, write rounds.csv and summary.json."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import meanest, models
from .client import ClientProfile, warmup
from .config import ExperimentConfig, MeanEstConfig
from .core import RngStream
from .data import (ClientDataset, LabeledPool, Scheme, flip_labels, load_idx,
                   make_mean_estimation, make_synthetic_classification, partition)
from .metrics import ROUNDS_CSV_COLUMNS
from .server import ServerState, run

log = logging.getLogger(__name__)

# round key reserved for everything that builds unseen clients
UNSEEN_ROUND = 1 << 30

FINAL_METRICS = ("gm_appeal_seen", "gm_appeal_unseen", "avg_test_acc_seen", "avg_test_acc_unseen",
                 "preferred_acc_seen", "preferred_acc_unseen")


def _subset(pool: LabeledPool, idx: np.ndarray) -> LabeledPool:
    idx = np.sort(idx)
    return LabeledPool(pool.features[idx], pool.labels[idx], pool.n_labels, pool.ids[idx])


def _labeled_pool(cfg: ExperimentConfig, stream: RngStream) -> LabeledPool:
    src = cfg.source
    if src.kind == "idx":
        return load_idx(src.images, src.labels)
    n = src.samples_per_client * (cfg.M + cfg.M_unseen)
    return make_synthetic_classification(n, src.n_features, src.n_labels, src.cluster_sep,
                                         stream.child(purpose="pool"), src.noise,
                                         src.group_size, src.group_sep)


def build_datasets(cfg: ExperimentConfig, seed: int) -> tuple[list[ClientDataset], list[ClientDataset]]:
    """Seen and unseen client datasets for one seed.

    Both groups come from one pool split at random, so they share the
    feature distribution; every later draw for unseen clients is keyed off
    a reserved round index and never collides with a seen-client stream.
    """
    root = RngStream(seed)
    if cfg.data.scheme is Scheme.MEAN_ESTIMATION:
        datasets, _ = make_mean_estimation(cfg.data.theta, cfg.data.nu2, cfg.data.n_per_client, root)
        return datasets, []
    pool = _labeled_pool(cfg, root)
    n_seen = len(pool) * cfg.M // (cfg.M + cfg.M_unseen)
    perm = root.child(purpose="pool_split").generator().permutation(len(pool))
    seen_pool = _subset(pool, perm[:n_seen])
    seen = partition(seen_pool, cfg.data, root)
    seen = flip_labels(seen, cfg.data.flip_fraction, root)
    unseen: list[ClientDataset] = []
    if cfg.M_unseen:
        u_root = root.child(round=UNSEEN_ROUND)
        u_spec = replace(cfg.data, n_clients=cfg.M_unseen)
        unseen = partition(_subset(pool, perm[n_seen:]), u_spec, u_root)
        unseen = flip_labels(unseen, cfg.data.flip_fraction, u_root)
    return seen, unseen


def model_spec(cfg: ExperimentConfig, sample: ClientDataset) -> models.ModelSpec:
    return cfg.model.build(sample.train.inputs.shape[1], sample.n_labels)


def build_state(cfg: ExperimentConfig, seed: int, threads: int = 1) -> ServerState:
    """Data, warm-up of every client, and the initial global model for one seed."""
    seen, unseen = build_datasets(cfg, seed)
    spec = model_spec(cfg, seen[0])
    root = RngStream(seed)
    agg = cfg.algorithm

    n_byz = math.ceil(round(cfg.byzantine.fraction * cfg.M, 9))
    byz = set(root.child(purpose="byzantine_assign").generator()
              .choice(cfg.M, size=n_byz, replace=False).tolist())
    profiles = [ClientProfile(k, ds, byzantine=k in byz) for k, ds in enumerate(seen)]
    unseen_profiles = [ClientProfile(cfg.M + j, ds) for j, ds in enumerate(unseen)]
    for p in profiles + unseen_profiles:
        warmup(p, spec, cfg.warmup_steps, agg.eta_l, agg.b, root)

    w0 = models.init_params(spec, root.child(purpose="global_init"))
    return ServerState(
        spec=spec, agg=agg, policy=cfg.participation, w=w0, profiles=profiles,
        m=cfg.m, T=cfg.T, seed=seed, unseen=unseen_profiles, byzantine=cfg.byzantine.spec,
        fine_tune_steps=cfg.fine_tune_steps, eval_interval=cfg.eval_interval, threads=threads,
    )


def run_seed(cfg: ExperimentConfig, seed: int, threads: int = 1) -> ServerState:
    return run(build_state(cfg, seed, threads))


def config_hash(cfg: ExperimentConfig | MeanEstConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def code_hash() -> str:
    """Digest of the package sources, in path order."""
    root = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.suffix in (".py", ".pyx")):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def _json_float(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


@dataclass
class RunSummary:
    config: dict
    config_hash: str
    code_hash: str
    rounds_csv: str
    per_seed: list[dict[str, float]] = field(default_factory=list)
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        clean = lambda d: {k: _json_float(v) for k, v in d.items()}
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "code_hash": self.code_hash,
            "rounds_csv": self.rounds_csv,
            "per_seed": [clean(v) for v in self.per_seed],
            "mean": clean(self.mean),
            "std": clean(self.std),
        }


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> RunSummary:
    """Run every seed, then write ``rounds.csv`` and ``summary.json`` under ``out_dir``."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rounds_path = out / "rounds.csv"
    summary = RunSummary(cfg.to_dict(), config_hash(cfg), code_hash(), str(rounds_path))
    algorithm = cfg.algorithm.kind.value
    with open(rounds_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROUNDS_CSV_COLUMNS)
        for seed in cfg.seeds:
            state = run_seed(cfg, seed, threads)
            for rec in state.records:
                writer.writerow(rec.csv_row(seed, algorithm))
            final = state.records[-1]
            summary.per_seed.append({"seed": seed, **{k: getattr(final, k) for k in FINAL_METRICS}})
            log.info("seed %d done: gm_appeal_seen=%.4f", seed, final.gm_appeal_seen)
    for k in FINAL_METRICS:
        vals = np.array([row[k] for row in summary.per_seed], dtype=np.float64)
        summary.mean[k] = float(vals.mean())
        summary.std[k] = float(vals.std())
    with open(out / "summary.json", "w") as fh:
        json.dump(summary.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def run_meanest(cfg: MeanEstConfig, out_dir=None, threads: int = 1) -> Path:
    """Two-client appeal sweep over the configured gamma_G grid; returns the CSV path."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    rows = meanest.appeal_sweep(cfg.grid, cfg.gamma2, cfg.trials, RngStream(cfg.seed),
                                [meanest.Estimator(e) for e in cfg.estimators], threads)
    path = meanest.write_meanest_csv(rows, out / "meanest.csv")
    with open(out / "summary.json", "w") as fh:
        json.dump({"config": cfg.to_dict(), "config_hash": config_hash(cfg), "code_hash": code_hash(),
                   "csv": str(path), "kernel_backend": meanest.BACKEND}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
