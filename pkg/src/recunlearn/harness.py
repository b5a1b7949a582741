"""Experiment orchestration across methods, strategies, models, and sweeps.

One run walks four stages per (seed pack, model kind): train the original
model, select unlearning sets, execute each unlearning method with stage-III
wall-clock timing, and score completeness/utility/efficiency/fairness. All
methods inside one run consume the identical split, identical unlearning
sets, and (for Retrain/SCIF) the identical original model; the shared
baseline is asserted by hashing. Outputs are plain CSV plus a text log.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from . import evaluation, models, selection, unlearn as unlearn_mod
from .dataset import derive_rng, load_ratings, preprocess, split
from .evaluation import make_groups, mio_features, per_user_ndcg, train_mio
from .models import Hyperparams
from .selection import build_graph, select_unlearn_set
from .unlearn import (
    EXACT_ENSEMBLE_METHODS,
    METHOD_LABELS,
    UnlearnRequest,
    canonical_method,
    preliminary_embeddings,
    prepare,
)

_TAG_HOLDOUT = 83
_TAG_MIO_MEMBERS = 89

LEARN_LABEL = "Learn"

RESULT_COLUMNS = (
    "dataset",
    "model",
    "method",
    "strategy",
    "ratio",
    "num_shards",
    "seed_split",
    "seed_select",
    "seed_train",
    "seed_mio",
    "status",
    "ndcg20",
    "hr20",
    "mio_accuracy",
    "a_igf",
    "shard_gf",
    "wall_time_s",
    "unlearned_users",
    "unlearned_interactions",
)

SHARD_COLUMNS = (
    "dataset",
    "model",
    "method",
    "seed_train",
    "num_shards",
    "shard",
    "size",
    "active_users",
    "inactive_users",
)


class HarnessError(Exception):
    pass


@dataclass(frozen=True)
class Seeds:
    split: int
    select: int
    train: int
    mio: int

    @classmethod
    def from_value(cls, value):
        if isinstance(value, Seeds):
            return value
        if isinstance(value, dict):
            try:
                return cls(
                    int(value["split"]),
                    int(value["select"]),
                    int(value["train"]),
                    int(value["mio"]),
                )
            except KeyError as exc:
                raise HarnessError(f"seed mapping missing key {exc}") from exc
        return cls(int(value), int(value), int(value), int(value))


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    name: str = "dataset"
    models: tuple = ("wmf",)
    methods: tuple = ("retrain", "sisa", "receraser", "ultrare", "scif")
    strategies: tuple = ("core", "random", "edge")
    ratio: float = 0.05
    ratio_basis: str = "interactions"
    shards: int = 10
    seeds: tuple = (Seeds(0, 0, 0, 0),)
    split_fractions: tuple = (0.8, 0.1, 0.1)
    mio_holdout_fraction: float = 0.05
    k: int = 20
    min_interactions: int = 5
    workers: int = None
    hyper: Hyperparams = field(default_factory=Hyperparams)
    output: str = "runs/out"

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise HarnessError(f"ratio must lie in (0, 1), got {self.ratio}")
        if self.shards < 1:
            raise HarnessError("shards must be >= 1")
        if not self.seeds:
            raise HarnessError("at least one seed required")
        for kind in self.models:
            if kind not in models.KINDS:
                raise HarnessError(f"unknown model kind {kind!r}")
        for strat in self.strategies:
            if strat not in selection.STRATEGIES:
                raise HarnessError(f"unknown strategy {strat!r}")
        object.__setattr__(self, "methods", tuple(canonical_method(m) for m in self.methods))
        if self.ratio_basis not in ("interactions", "users"):
            raise HarnessError(f"unknown ratio basis {self.ratio_basis!r}")


def load_config(path):
    """Parse a YAML experiment config into an ExperimentConfig."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise HarnessError("config must be a mapping")
    if "dataset" not in raw:
        raise HarnessError("config requires a 'dataset' path")
    kwargs = {"dataset": str(raw["dataset"])}
    simple = {
        "name": str,
        "ratio": float,
        "ratio_basis": str,
        "shards": int,
        "mio_holdout_fraction": float,
        "k": int,
        "min_interactions": int,
        "output": str,
    }
    for key, cast in simple.items():
        if key in raw:
            kwargs[key] = cast(raw[key])
    for key in ("models", "methods", "strategies"):
        if key in raw:
            kwargs[key] = tuple(str(v) for v in raw[key])
    if "split_fractions" in raw:
        kwargs["split_fractions"] = tuple(float(v) for v in raw["split_fractions"])
    if "seeds" in raw:
        kwargs["seeds"] = tuple(Seeds.from_value(v) for v in raw["seeds"])
    if "workers" in raw and raw["workers"] is not None:
        kwargs["workers"] = int(raw["workers"])
    if "hyper" in raw and raw["hyper"]:
        valid = {f.name for f in fields(Hyperparams)}
        unknown = set(raw["hyper"]) - valid
        if unknown:
            raise HarnessError(f"unknown hyperparameter keys {sorted(unknown)}")
        kwargs["hyper"] = Hyperparams(**raw["hyper"])
    return ExperimentConfig(**kwargs)


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    model: str
    method: str
    strategy: str
    ratio: float
    num_shards: int
    seed_split: int
    seed_select: int
    seed_train: int
    seed_mio: int
    status: str = "ok"
    ndcg20: float = None
    hr20: float = None
    mio_accuracy: float = None
    a_igf: float = None
    shard_gf: float = None
    wall_time_s: float = None
    unlearned_users: int = None
    unlearned_interactions: int = None


@dataclass(eq=False)
class RunData:
    """Stage-0 artifacts shared by every cell of one seed pack."""

    train: object
    valid: object
    test: object
    holdout_users: np.ndarray
    mio_member_reserve: np.ndarray
    mio_query_users: np.ndarray
    feature_items: dict
    baseline_hash: str


def _hash_interactions(*sets):
    h = hashlib.sha256()
    for iset in sets:
        h.update(np.ascontiguousarray(iset.users).tobytes())
        h.update(np.ascontiguousarray(iset.items).tobytes())
    return h.hexdigest()[:16]


def load_dataset(cfg):
    """Read, deduplicate, and degree-filter the configured ratings file."""
    return preprocess(load_ratings(cfg.dataset), min_interactions=cfg.min_interactions)


def prepare_run_data(dataset, cfg, seeds):
    """Split, reserve MIO holdout users, and freeze per-pack feature sources.

    The holdout (ceil(mio_holdout_fraction * num_users) users, sampled from
    users with train-split interactions) is removed from train, valid, and
    test before stage I, then halved into oracle-training non-members and
    query non-members. Feature items come from the train split for everyone:
    effective train for users the models saw, pre-reservation train rows for
    the holdout.
    """
    bundle = split(dataset, cfg.split_fractions, seed=seeds.split)
    train0 = bundle.train
    eligible = np.flatnonzero(train0.user_degrees > 0)
    n_hold = math.ceil(cfg.mio_holdout_fraction * dataset.num_users)
    if n_hold >= len(eligible):
        raise HarnessError("MIO holdout would consume every trainable user")
    rng = derive_rng(seeds.mio, _TAG_HOLDOUT)
    holdout = np.sort(rng.choice(eligible, size=n_hold, replace=False))
    shuffled = rng.permutation(holdout)
    n_half = math.ceil(n_hold / 2)
    member_reserve = np.sort(shuffled[:n_half])
    query_users = np.sort(shuffled[n_half:])
    if len(query_users) == 0:
        raise HarnessError("MIO holdout too small to split into two halves")

    train = train0.remove_users(holdout)
    valid = bundle.valid.remove_users(holdout)
    test = bundle.test.remove_users(holdout)
    feature_items = {int(u): train.items_of(int(u)) for u in np.flatnonzero(train.user_degrees > 0)}
    for u in holdout:
        feature_items[int(u)] = train0.items_of(int(u))
    return RunData(
        train,
        valid,
        test,
        holdout,
        member_reserve,
        query_users,
        feature_items,
        _hash_interactions(train, valid, test),
    )


def _mio_for_model(serving, rd, query_users, seeds):
    """Train the membership oracle against one serving model.

    Members are served trained users outside the query set; non-members are
    the reserved oracle-training half of the holdout. Both classes are
    featurized from the serving model's embedding view.
    """
    trained = np.flatnonzero(serving.trained_user_mask)
    excluded = set(int(u) for u in query_users) | set(int(u) for u in rd.holdout_users)
    pool = np.array([u for u in trained if int(u) not in excluded], dtype=np.int64)
    nonmembers = rd.mio_member_reserve
    if len(pool) == 0:
        raise evaluation.EvalError("no member users available for the oracle")
    rng = derive_rng(seeds.mio, _TAG_MIO_MEMBERS)
    m = min(len(pool), len(nonmembers))
    members = np.sort(rng.choice(pool, size=m, replace=False))
    mem_feats = np.vstack([mio_features(serving, u, rd.feature_items[int(u)]) for u in members])
    non_feats = np.vstack([mio_features(serving, u, rd.feature_items[int(u)]) for u in nonmembers])
    return train_mio(mem_feats, non_feats, seeds.mio)


def _cell_metrics(serving, rd, unlearn_set, cfg, seeds, with_shard_gf):
    users, nd, hr = per_user_ndcg(serving, rd.test, k=cfg.k, with_hr=True)
    if len(users) == 0:
        raise evaluation.EvalError("no evaluable test users")
    out = {"ndcg20": float(nd.mean()), "hr20": float(hr.mean())}
    mio = _mio_for_model(serving, rd, unlearn_set.users, seeds)
    out["mio_accuracy"] = evaluation.mio_accuracy(
        mio, serving, unlearn_set.users, rd.mio_query_users, rd.feature_items, seed=seeds.mio
    )
    groups = make_groups(rd.train, excluded_users=unlearn_set.users)
    out["a_igf"] = evaluation.a_igf(serving, rd.test, groups, k=cfg.k)
    if with_shard_gf:
        out["shard_gf"] = evaluation.shard_gf(serving, rd.test, k=cfg.k)
    return out


def shard_composition_report(plan, groups):
    """Per-shard (size, active, inactive) counts for a partition plan."""
    active = set(int(u) for u in groups.active)
    rows = []
    for s in range(plan.num_shards):
        members = np.flatnonzero(plan.assignment == s)
        n_active = sum(1 for u in members if int(u) in active)
        rows.append((s, len(members), n_active, len(members) - n_active))
    return rows


def _run_pack(dataset, cfg, kind, seeds, shard_values, ratio_values, log):
    """All cells for one (seed pack, model kind): Learn + methods x strategies.

    Returns (result rows, shard composition rows). Prepared artifacts are
    shared across sweep values: the original model and unlearning sets do
    not depend on the shard count, and prepared states do not depend on the
    ratio, so each is built once.
    """
    rows = []
    shard_rows = []
    base = dict(
        dataset=cfg.name,
        model=kind,
        seed_split=seeds.split,
        seed_select=seeds.select,
        seed_train=seeds.train,
        seed_mio=seeds.mio,
    )

    rd = prepare_run_data(dataset, cfg, seeds)
    log.append(
        f"pack seeds split={seeds.split} select={seeds.select} train={seeds.train} "
        f"mio={seeds.mio} model={kind}"
    )
    log.append(
        f"  mio holdout: {len(rd.holdout_users)} users reserved before stage I "
        f"({len(rd.mio_member_reserve)} oracle-training, {len(rd.mio_query_users)} query)"
    )
    log.append(f"  baseline hash: {rd.baseline_hash}")

    original, train_log = models.train(kind, rd.train, rd.valid, cfg.hyper, seeds.train)
    log.append(
        f"  original model: stop_epoch={train_log.stop_epoch} "
        f"wall={train_log.wall_time_s:.3f}s early_stopped={train_log.early_stopped}"
    )

    needs_prelim = any(m in ("receraser", "ultrare") for m in cfg.methods)
    prelim = preliminary_embeddings(rd.train, cfg.hyper, seeds.train) if needs_prelim else None

    graph = build_graph(rd.train)
    unlearn_sets = {}
    for ratio in ratio_values:
        for strat in cfg.strategies:
            uset = select_unlearn_set(
                graph, rd.train, strat, ratio, seed=seeds.select, ratio_basis=cfg.ratio_basis
            )
            unlearn_sets[(ratio, strat)] = uset
            log.append(
                f"  selection {strat} ratio={ratio:g}: {len(uset.users)} users, "
                f"{len(uset.interactions)} interactions"
            )

    states = {}
    for method in cfg.methods:
        if method in ("retrain", "scif"):
            states[(method, None)] = prepare(
                kind, method, rd.train, rd.valid, cfg.hyper, cfg.shards, seeds.train,
                original=original,
            )
    for n_shards in shard_values:
        for method in cfg.methods:
            if method in EXACT_ENSEMBLE_METHODS:
                states[(method, n_shards)] = prepare(
                    kind, method, rd.train, rd.valid, cfg.hyper, n_shards, seeds.train,
                    prelim_features=prelim,
                )
                log.append(f"  prepared {METHOD_LABELS[method]} ensemble S={n_shards}")

    groups_all = make_groups(rd.train)
    for (method, n_shards), state in states.items():
        if n_shards is None:
            continue
        for shard, size, n_act, n_inact in shard_composition_report(state.ensemble.plan, groups_all):
            shard_rows.append(
                dict(
                    dataset=cfg.name,
                    model=kind,
                    method=METHOD_LABELS[method],
                    seed_train=seeds.train,
                    num_shards=n_shards,
                    shard=shard,
                    size=size,
                    active_users=n_act,
                    inactive_users=n_inact,
                )
            )

    for ratio in ratio_values:
        learn_query = unlearn_sets.get((ratio, "random"), next(
            unlearn_sets[k2] for k2 in unlearn_sets if k2[0] == ratio
        ))
        row_kw = dict(
            base,
            method=LEARN_LABEL,
            strategy="none",
            ratio=ratio,
            num_shards=cfg.shards,
            wall_time_s=0.0,
            unlearned_users=0,
            unlearned_interactions=0,
        )
        try:
            metrics = _cell_metrics(original, rd, learn_query, cfg, seeds, with_shard_gf=False)
            rows.append(ResultRow(**row_kw, **metrics))
            log.append(f"  Learn ratio={ratio:g}: ndcg20={metrics['ndcg20']:.6g}")
        except Exception as exc:
            rows.append(ResultRow(**row_kw, status=f"failed: {exc}"))
            log.append(f"  Learn ratio={ratio:g} FAILED: {exc}")

    for n_shards in shard_values:
        for ratio in ratio_values:
            for method in cfg.methods:
                state = states.get((method, n_shards), states.get((method, None)))
                for strat in cfg.strategies:
                    uset = unlearn_sets[(ratio, strat)]
                    assert _hash_interactions(state.train, rd.valid, rd.test) == rd.baseline_hash
                    row_kw = dict(
                        base,
                        method=METHOD_LABELS[method],
                        strategy=strat,
                        ratio=ratio,
                        num_shards=n_shards,
                        unlearned_users=len(uset.users),
                        unlearned_interactions=len(uset.interactions),
                    )
                    try:
                        outcome = unlearn_mod.unlearn(
                            method, state, UnlearnRequest(uset, method), workers=cfg.workers
                        )
                        metrics = _cell_metrics(
                            outcome.serving,
                            rd,
                            uset,
                            cfg,
                            seeds,
                            with_shard_gf=method in EXACT_ENSEMBLE_METHODS,
                        )
                        rows.append(
                            ResultRow(**row_kw, wall_time_s=outcome.wall_time_s, **metrics)
                        )
                        log.append(
                            f"  {METHOD_LABELS[method]} {strat} ratio={ratio:g} S={n_shards}: "
                            f"wall={outcome.wall_time_s:.3f}s "
                            f"shards_retrained={outcome.shards_retrained} "
                            f"detail={outcome.detail}"
                        )
                    except Exception as exc:
                        rows.append(ResultRow(**row_kw, status=f"failed: {exc}"))
                        log.append(
                            f"  {METHOD_LABELS[method]} {strat} ratio={ratio:g} "
                            f"S={n_shards} FAILED: {exc}"
                        )
    return rows, shard_rows


def _config_log_lines(cfg):
    lines = [
        f"dataset: {cfg.name} ({cfg.dataset})",
        f"models: {', '.join(cfg.models)}",
        f"methods: {', '.join(METHOD_LABELS[m] for m in cfg.methods)}",
        f"strategies: {', '.join(cfg.strategies)}",
        f"ratio: {cfg.ratio:g} (basis: {cfg.ratio_basis})",
        f"shards: {cfg.shards}",
        f"split fractions: {cfg.split_fractions}",
        f"mio holdout fraction: {cfg.mio_holdout_fraction:g} "
        "(reserved before stage I; shrinks the effective dataset)",
        "shard submodels early-stop on a shard-local 10% slice",
        "wall times cover stage III only (monotonic clock); they vary between "
        "runs, all other output columns are deterministic",
    ]
    return lines


def run_experiment(cfg, out_dir=None):
    """Run every configured cell and emit CSV outputs.

    Returns the result rows. A failed cell is recorded with its error in the
    status column; remaining cells still run.
    """
    return _drive(cfg, [cfg.shards], [cfg.ratio], out_dir)


def sweep(cfg, dimension, values, out_dir=None):
    """Re-run cells along one swept dimension, reusing shared artifacts."""
    values = list(values)
    if not values:
        raise HarnessError("sweep values must be non-empty")
    if dimension == "shards":
        return _drive(cfg, [int(v) for v in values], [cfg.ratio], out_dir)
    if dimension == "ratio":
        for v in values:
            if not 0.0 < float(v) < 1.0:
                raise HarnessError(f"swept ratio {v} outside (0, 1)")
        return _drive(cfg, [cfg.shards], [float(v) for v in values], out_dir)
    raise HarnessError(f"unknown sweep dimension {dimension!r}")


def _drive(cfg, shard_values, ratio_values, out_dir):
    dataset = load_dataset(cfg)
    rows = []
    shard_rows = []
    log = _config_log_lines(cfg)
    log.append(
        f"preprocessed: {dataset.num_users} users, {dataset.num_items} items, "
        f"{len(dataset)} interactions"
    )
    for seeds in cfg.seeds:
        for kind in cfg.models:
            pack_rows, pack_shards = _run_pack(
                dataset, cfg, kind, seeds, shard_values, ratio_values, log
            )
            rows.extend(pack_rows)
            shard_rows.extend(pack_shards)
    emit_results(rows, out_dir if out_dir is not None else cfg.output, shard_rows, log)
    return rows


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def emit_results(rows, out_dir, shard_rows=(), log_lines=()):
    """Write results.csv, shard_composition.csv, and run_log.txt.

    Fixed column order, UTF-8, LF line endings, floats at 6 significant
    digits, absent values as empty cells.
    """
    os.makedirs(out_dir, exist_ok=True)
    results_path = os.path.join(out_dir, "results.csv")
    with open(results_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, col)) for col in RESULT_COLUMNS])
    with open(os.path.join(out_dir, "shard_composition.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SHARD_COLUMNS)
        for row in shard_rows:
            writer.writerow([_fmt(row[col]) for col in SHARD_COLUMNS])
    with open(os.path.join(out_dir, "run_log.txt"), "w", encoding="utf-8", newline="") as fh:
        for line in log_lines:
            fh.write(line + "\n")
    return results_path


_INT_COLUMNS = {
    "num_shards", "seed_split", "seed_select", "seed_train", "seed_mio",
    "unlearned_users", "unlearned_interactions",
}
_FLOAT_COLUMNS = {"ratio", "ndcg20", "hr20", "mio_accuracy", "a_igf", "shard_gf", "wall_time_s"}


def parse_results(path):
    """Read results.csv back into ResultRow objects (round-trip of emit)."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames) != RESULT_COLUMNS:
            raise HarnessError(f"unexpected results header in {path}")
        for rec in reader:
            kwargs = {}
            for col in RESULT_COLUMNS:
                raw = rec[col]
                if raw == "":
                    kwargs[col] = None
                elif col in _INT_COLUMNS:
                    kwargs[col] = int(raw)
                elif col in _FLOAT_COLUMNS:
                    kwargs[col] = float(raw)
                else:
                    kwargs[col] = raw
            rows.append(ResultRow(**kwargs))
    return rows
