"""Shared fixtures: tiny instances, corpus files, and the benchmark bundle.

The benchmark fixtures are session-scoped because the acceptance criteria
reuse the same three-seed run. Set RECUNLEARN_ML100K to a MovieLens-100K
u.data path to run the benchmark criteria against the real ratings instead
of the bundled synthetic corpus.
"""

import os

import numpy as np
import pytest

import _synth
from recunlearn import harness
from recunlearn.dataset import InteractionSet


def make_interactions(seed, num_users=20, num_items=15, min_deg=3, max_deg=7):
    """Small random InteractionSet; every user gets min_deg..max_deg items."""
    rng = np.random.default_rng(seed)
    users, items = [], []
    for u in range(num_users):
        k = int(rng.integers(min_deg, max_deg + 1))
        chosen = rng.choice(num_items, size=k, replace=False)
        users.extend([u] * k)
        items.extend(chosen.tolist())
    return InteractionSet(
        np.array(users, dtype=np.int64),
        np.array(items, dtype=np.int64),
        num_users,
        num_items,
    )


@pytest.fixture()
def tiny_train():
    return make_interactions(0)


@pytest.fixture(scope="session")
def mini_dataset_path(tmp_path_factory):
    """A small ratings file for fast end-to-end harness tests."""
    rng = np.random.default_rng(7)
    path = tmp_path_factory.mktemp("mini") / "mini.tsv"
    lines = []
    for u in range(60):
        k = int(rng.integers(8, 16))
        for i in rng.choice(30, size=min(k, 30), replace=False):
            lines.append(f"{u + 1}\t{int(i) + 1}\t{int(rng.integers(1, 6))}\t{874000000 + u}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture(scope="session")
def bench_dataset_path(tmp_path_factory):
    """Benchmark ratings file: real ML-100K when pointed at, else synthetic."""
    env = os.environ.get("RECUNLEARN_ML100K")
    if env:
        return env
    path = tmp_path_factory.mktemp("bench") / "synth.tsv"
    _synth.write_file(str(path), seed=0)
    return str(path)


def _bench_config(dataset, out, **overrides):
    base = dict(dataset=dataset, name="bench", output=str(out))
    base.update(overrides)
    return harness.ExperimentConfig(**base)


@pytest.fixture(scope="session")
def bench_packs(bench_dataset_path, tmp_path_factory):
    """Three full benchmark packs (all methods x strategies) at S=10, 5%."""
    out = tmp_path_factory.mktemp("packs")
    packs = {}
    for sv in (0, 1, 2):
        cfg = _bench_config(
            bench_dataset_path,
            out / f"s{sv}",
            seeds=(harness.Seeds.from_value(sv),),
        )
        packs[sv] = harness.run_experiment(cfg)
    return packs


@pytest.fixture(scope="session")
def scif_tiny_wins():
    """SCIF-vs-retrain distance outcomes on 20 tiny seeded instances.

    Each entry is (distance_improved, cg_converged). The trainer runs the
    closed-form coordinate updates to a stationary point so the retrain
    oracle is meaningful; warm-starting it from the original model keeps the
    comparison inside the same basin.
    """
    import warnings

    from recunlearn.models import Hyperparams, ParamSubset, train
    from recunlearn.selection import UnlearnSet
    from recunlearn.unlearn import scif_influence_update

    hyper = Hyperparams(embedding_dim=8, wmf_dense=True, l2_reg=0.05, max_epochs=2000)
    outcomes = []
    for seed in range(20):
        tr = make_interactions(seed)
        model, _ = train("wmf", tr, None, hyper, seed=seed)
        users = np.sort(np.random.default_rng(seed + 1000).choice(20, size=2, replace=False))
        rows = tr.rows_of_users(set(users.tolist()))
        uset = UnlearnSet(
            "random", users, np.column_stack([tr.users[rows], tr.items[rows]]), 0.0
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            updated, info = scif_influence_update(model, tr, uset)
        remaining = tr.remove_users(set(users.tolist()))
        oracle, _ = train("wmf", remaining, None, hyper, seed=seed, init_params=model.params)
        sub = ParamSubset(info.user_idx, info.item_idx, hyper.embedding_dim)
        ref = sub.pack(oracle.params.user_vecs, oracle.params.item_vecs)
        before = np.linalg.norm(sub.pack(model.params.user_vecs, model.params.item_vecs) - ref)
        after = np.linalg.norm(sub.pack(updated.params.user_vecs, updated.params.item_vecs) - ref)
        outcomes.append((bool(after < before), bool(info.converged)))
    return outcomes


@pytest.fixture(scope="session")
def shard_sweep_rows(bench_dataset_path, tmp_path_factory):
    """SISA-only sweep over S in {5, 10, 20}, random strategy, one seed."""
    cfg = _bench_config(
        bench_dataset_path,
        tmp_path_factory.mktemp("shard_sweep") / "out",
        methods=("sisa",),
        strategies=("random",),
    )
    return harness.sweep(cfg, "shards", (5, 10, 20))


@pytest.fixture(scope="session")
def ratio_sweep_rows(bench_dataset_path, tmp_path_factory):
    """Retrain-only sweep over the unlearn ratio, random strategy, one seed."""
    cfg = _bench_config(
        bench_dataset_path,
        tmp_path_factory.mktemp("ratio_sweep") / "out",
        methods=("retrain",),
        strategies=("random",),
    )
    return harness.sweep(cfg, "ratio", (0.05, 0.10, 0.15, 0.20))
