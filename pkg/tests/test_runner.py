import csv
import json
import textwrap
from dataclasses import replace

import numpy as np
import pytest

from maxfl_sim.config import MeanEstConfig, parse_config
from maxfl_sim.runner import (build_datasets, build_state, code_hash, config_hash, run_experiment,
                              run_meanest)

SMALL = """
M = 6
m = 2
T = 4
tau = 3
eta_l = 0.05
b = 8
warmup_steps = 10
fine_tune_steps = 2
seeds = [1, 1]
eval_interval = 2

[algorithm]
kind = "maxfl"

[data]
scheme = "cluster_labels"
clusters = 3
labels_per_cluster = 2
flip_fraction = 0.3
min_samples = 10

[data.source]
samples_per_client = 40
n_features = 8
n_labels = 6

[participation]
mandatory_rounds = 2

[unseen]
M_unseen = 3
"""

HEADER = ("seed,t,algorithm,gm_appeal_seen,gm_appeal_unseen,avg_acc_seen,avg_acc_unseen,"
          "pref_acc_seen,pref_acc_unseen,n_participating,n_eligible,skipped,grad_norm,loss_gap")


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(textwrap.dedent(SMALL))
    return parse_config(path)


def test_rounds_csv_header_and_rows(small, tmp_path):
    summary = run_experiment(small, tmp_path / "out")
    lines = (tmp_path / "out" / "rounds.csv").read_text().splitlines()
    assert lines[0] == HEADER
    assert len(lines) == 1 + small.T * len(small.seeds)
    assert summary.rounds_csv == str(tmp_path / "out" / "rounds.csv")


def test_duplicate_seeds_give_identical_blocks(small, tmp_path):
    run_experiment(small, tmp_path)
    body = (tmp_path / "rounds.csv").read_text().splitlines()[1:]
    assert body[:small.T] == body[small.T:]


def test_summary_json(small, tmp_path):
    summary = run_experiment(small, tmp_path)
    data = json.loads((tmp_path / "summary.json").read_text())
    assert data["config"] == small.to_dict()
    assert data["config_hash"] == config_hash(small)
    assert data["code_hash"] == code_hash()
    assert [row["seed"] for row in data["per_seed"]] == [1, 1]
    assert data["std"]["gm_appeal_seen"] == 0.0
    assert data["mean"] == pytest.approx({k: v for k, v in summary.mean.items()}, nan_ok=True)


def test_rerun_is_byte_identical(small, tmp_path):
    run_experiment(small, tmp_path / "a")
    run_experiment(small, tmp_path / "b")
    assert (tmp_path / "a" / "rounds.csv").read_bytes() == (tmp_path / "b" / "rounds.csv").read_bytes()
    a, b = (json.loads((tmp_path / d / "summary.json").read_text()) for d in "ab")
    assert a.pop("rounds_csv") != b.pop("rounds_csv")
    assert a == b


def test_threads_do_not_change_output(small, tmp_path):
    run_experiment(small, tmp_path / "a", threads=1)
    run_experiment(small, tmp_path / "b", threads=3)
    assert (tmp_path / "a" / "rounds.csv").read_bytes() == (tmp_path / "b" / "rounds.csv").read_bytes()


def test_config_hash_tracks_changes(small):
    assert config_hash(small) == config_hash(replace(small))
    assert config_hash(small) != config_hash(replace(small, T=5))


def test_seen_and_unseen_pools_are_disjoint(small):
    seen, unseen = build_datasets(small, 3)
    assert len(seen) == small.M and len(unseen) == 3
    ids = lambda group: np.concatenate([np.concatenate([c.train_ids, c.test_ids]) for c in group])
    assert not set(ids(seen)) & set(ids(unseen))


def test_unseen_clients_do_not_shift_seen_randomness(small):
    # seen clients draw from the same streams whether or not unseen clients exist
    a = build_state(small, 0)
    b = build_state(replace(small, M_unseen=5), 0)
    assert [p.byzantine for p in a.profiles] == [p.byzantine for p in b.profiles]
    np.testing.assert_array_equal(a.w, b.w)


def test_unseen_ids_follow_seen(small):
    state = build_state(small, 0)
    assert [p.id for p in state.unseen] == [6, 7, 8]


def test_byzantine_count_rounds_fraction(small):
    state = build_state(replace(small, byzantine=replace(small.byzantine, fraction=0.5)), 0)
    assert sum(p.byzantine for p in state.profiles) == 3


def test_run_meanest(tmp_path):
    cfg = MeanEstConfig(grid_points=3, trials=50)
    path = run_meanest(cfg, tmp_path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * len(cfg.estimators)
    assert {float(r["gamma_G"]) for r in rows} == set(cfg.grid)
    meta = json.loads((tmp_path / "summary.json").read_text())
    assert meta["kernel_backend"] in ("cython", "python")
    assert meta["config"] == cfg.to_dict()
