"""Acceptance gate: every release criterion, one test and one verdict line each.

Criteria 1 and 5 are scale-free numerical oracles and property suites.
Criteria 2 through 4 run against the benchmark corpus (session fixtures in
conftest; set RECUNLEARN_ML100K to use the real MovieLens-100K file) and
assert reproduction of the expected patterns: metric windows, method
orderings, and sweep trends. Criterion 6 records the declared exclusions.
"""

import math

import numpy as np
import pytest

from recunlearn.dataset import split
from recunlearn.evaluation import GroupAssignment, a_igf, mio_accuracy, shard_gf
from recunlearn.models import Hyperparams, hessian_vector_product
from recunlearn.selection import SelectionError, UnlearnSet, build_graph, importance
from recunlearn.unlearn import (
    UnlearnError,
    UnlearnRequest,
    balanced_partition,
    prepare,
    preliminary_embeddings,
    unlearn,
)

from conftest import make_interactions
from test_evaluation import ScoreStub, _zero_mio, brute_rank_metrics, per_user_ndcg
from test_models import KINDS, fd_gradient, packed_grad, perturbed, random_instance


def _verdict(tag, ok, detail):
    print(f"ACCEPTANCE {tag}: {'PASS' if ok else 'FAIL'} -- {detail}")
    assert ok, f"{tag}: {detail}"


def _cell(rows, method, strategy):
    for r in rows:
        if r.method == method and r.strategy == strategy:
            assert r.status == "ok", f"{method}/{strategy} cell failed: {r.status}"
            return r
    raise AssertionError(f"no {method}/{strategy} cell in pack")


def _rising_steps(values):
    return sum(1 for a, b in zip(values, values[1:]) if b > a)


class TestCriterion1Oracles:
    def test_criterion_1a_gradient_vs_finite_differences(self):
        worst = 0.0
        for kind in KINDS:
            for seed in range(20):
                params, batch, adjacency = random_instance(seed, kind)
                analytic = packed_grad(kind, params, batch, adjacency)
                numeric = fd_gradient(kind, params, batch, adjacency)
                rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
                worst = max(worst, rel)
        _verdict("1a gradient oracle", worst < 1e-4, f"worst rel err {worst:.3g} (< 1e-4)")

    def test_criterion_1b_hvp_vs_differenced_gradients_and_symmetry(self):
        worst = 0.0
        worst_sym = 0.0
        for kind in KINDS:
            for seed in range(20):
                params, batch, adjacency = random_instance(seed, kind)
                rng = np.random.default_rng(seed + 500)
                size = params.user_vecs.size + params.item_vecs.size
                v = rng.normal(size=size)
                w = rng.normal(size=size)
                eps = 1e-6
                gp = packed_grad(kind, perturbed(params, eps * v), batch, adjacency)
                gm = packed_grad(kind, perturbed(params, -eps * v), batch, adjacency)
                numeric = (gp - gm) / (2 * eps)
                hv = hessian_vector_product(kind, params, batch, v, adjacency=adjacency)
                hw = hessian_vector_product(kind, params, batch, w, adjacency=adjacency)
                worst = max(worst, np.linalg.norm(hv - numeric) / np.linalg.norm(numeric))
                lhs, rhs = float(w @ hv), float(v @ hw)
                worst_sym = max(worst_sym, abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs)))
        ok = worst < 1e-3 and worst_sym <= 1e-8
        _verdict(
            "1b hvp oracle", ok,
            f"worst rel err {worst:.3g} (< 1e-3), worst asymmetry {worst_sym:.3g} (<= 1e-8)",
        )

    def test_criterion_1c_importance_vs_brute_force(self):
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed + 40)
            nu = int(rng.integers(5, 25))
            ni = int(rng.integers(5, 25))
            ds = make_interactions(
                seed, num_users=nu, num_items=ni, min_deg=1, max_deg=min(5, ni)
            )
            g = build_graph(ds)
            for u in range(nu):
                mine = ds.items[ds.users == u]
                expected = float(ds.item_degrees[mine].sum()) if len(mine) else 0.0
                got = importance(g, "user", u).importance
                worst = max(worst, abs(got - expected) / max(1.0, abs(expected)))
            for i in range(ni):
                theirs = ds.users[ds.items == i]
                expected = float(ds.user_degrees[theirs].sum()) if len(theirs) else 0.0
                got = importance(g, "item", i).importance
                worst = max(worst, abs(got - expected) / max(1.0, abs(expected)))
        _verdict("1c importance oracle", worst <= 1e-12, f"worst rel err {worst:.3g} (<= 1e-12)")

    def test_criterion_1d_ranking_metrics_vs_brute_force(self):
        worst = 0.0
        for seed in range(50):
            rng = np.random.default_rng(seed + 900)
            nu = int(rng.integers(6, 30))
            ni = int(rng.integers(10, 40))
            ds = make_interactions(seed, num_users=nu, num_items=ni, min_deg=3, max_deg=7)
            bundle = split(ds, (0.7, 0.0, 0.3), seed=seed)
            scores = rng.normal(size=(nu, ni))
            if seed % 2:
                scores = np.round(scores, 1)
            k = (3, 5, 20)[seed % 3]
            model = ScoreStub(scores, bundle.train)
            expected = brute_rank_metrics(scores, bundle.train, bundle.test, k)
            users, nd, hr = per_user_ndcg(model, bundle.test, k, with_hr=True)
            assert sorted(expected) == users.tolist()
            for u, got_nd, got_hr in zip(users.tolist(), nd, hr):
                worst = max(worst, abs(got_nd - expected[u][0]), abs(got_hr - expected[u][1]))
        _verdict("1d ranking oracle", worst <= 1e-12, f"worst abs err {worst:.3g} (<= 1e-12)")


class TestCriterion2PaperPatterns:
    def test_criterion_2a_original_ndcg_window(self, bench_packs):
        vals = {sv: _cell(rows, "Learn", "none").ndcg20 for sv, rows in bench_packs.items()}
        ok = all(abs(v - 0.3215) <= 0.05 for v in vals.values())
        _verdict(
            "2a original ndcg", ok,
            "ndcg20 per seed " + ", ".join(f"s{sv}={v:.4f}" for sv, v in vals.items())
            + " (window 0.3215 +/- 0.05)",
        )

    def test_criterion_2b_mio_windows(self, bench_packs):
        details = []
        ok = True
        for sv, rows in bench_packs.items():
            orig = _cell(rows, "Learn", "none").mio_accuracy
            ret = _cell(rows, "Retrain", "random").mio_accuracy
            scif = _cell(rows, "SCIF", "random").mio_accuracy
            seed_ok = (
                orig >= 0.65
                and 0.50 <= ret <= 0.60
                and 0.50 <= scif <= 0.63
                and scif >= ret
            )
            ok = ok and seed_ok
            details.append(f"s{sv}: orig={orig:.3f} retrain={ret:.3f} scif={scif:.3f}")
        _verdict(
            "2b mio windows", ok,
            "; ".join(details)
            + " (orig >= 0.65, retrain in [0.50, 0.60], scif in [0.50, 0.63] and >= retrain)",
        )

    def test_criterion_2c_utility_ordering(self, bench_packs):
        details = []
        hits = 0
        for sv, rows in bench_packs.items():
            nd = {
                m: _cell(rows, m, "random").ndcg20
                for m in ("Retrain", "SISA", "RecEraser", "UltraRE")
            }
            seed_ok = (
                nd["UltraRE"] >= nd["RecEraser"] >= nd["SISA"]
                and all(nd["Retrain"] >= nd[m] for m in ("SISA", "RecEraser", "UltraRE"))
            )
            hits += seed_ok
            details.append(
                f"s{sv}: UL={nd['UltraRE']:.4f} RE={nd['RecEraser']:.4f} "
                f"SISA={nd['SISA']:.4f} Retrain={nd['Retrain']:.4f} ok={seed_ok}"
            )
        _verdict("2c utility ordering", hits >= 2, "; ".join(details) + f" ({hits}/3 seeds, need 2)")

    def test_criterion_2d_efficiency_ordering(self, bench_packs):
        details = []
        ok = True
        for sv, rows in bench_packs.items():
            wall = {
                m: _cell(rows, m, "random").wall_time_s
                for m in ("Retrain", "SISA", "RecEraser", "UltraRE", "SCIF")
            }
            seed_ok = (
                wall["SCIF"] < wall["SISA"]
                and wall["SISA"] < wall["RecEraser"]
                and wall["SISA"] < wall["UltraRE"]
                and wall["RecEraser"] < wall["Retrain"]
                and wall["UltraRE"] < wall["Retrain"]
            )
            ok = ok and seed_ok
            details.append(
                f"s{sv}: SCIF={wall['SCIF']:.2f} SISA={wall['SISA']:.2f} "
                f"RE={wall['RecEraser']:.2f} UL={wall['UltraRE']:.2f} "
                f"Retrain={wall['Retrain']:.2f} ok={seed_ok}"
            )
        _verdict("2d efficiency ordering", ok, "; ".join(details) + " (need every seed)")

    def test_criterion_2e_scif_strategy_effect(self, bench_packs):
        details = []
        hits = 0
        for sv, rows in bench_packs.items():
            nd = {s: _cell(rows, "SCIF", s).ndcg20 for s in ("core", "random", "edge")}
            seed_ok = nd["core"] <= nd["random"] <= nd["edge"]
            hits += seed_ok
            details.append(
                f"s{sv}: core={nd['core']:.4f} random={nd['random']:.4f} "
                f"edge={nd['edge']:.4f} ok={seed_ok}"
            )
        _verdict("2e scif strategy effect", hits >= 2, "; ".join(details) + f" ({hits}/3 seeds, need 2)")


class TestCriterion3ShardSweep:
    def test_criterion_3_shard_sweep_trends(self, shard_sweep_rows):
        cells = sorted(
            (r for r in shard_sweep_rows if r.method == "SISA"), key=lambda r: r.num_shards
        )
        assert [r.num_shards for r in cells] == [5, 10, 20]
        assert all(r.status == "ok" for r in cells)
        nd = [r.ndcg20 for r in cells]
        wall = [r.wall_time_s for r in cells]
        nd_inv = _rising_steps(nd)
        wall_inv = _rising_steps(wall)
        ok = nd_inv <= 1 and wall_inv <= 1
        _verdict(
            "3 shard sweep", ok,
            f"ndcg {[round(v, 4) for v in nd]} ({nd_inv} inversions), "
            f"wall {[round(v, 2) for v in wall]} ({wall_inv} inversions); 1 allowed each",
        )


class TestCriterion4RatioSweep:
    def test_criterion_4_ratio_sweep_trend(self, ratio_sweep_rows):
        cells = sorted(
            (r for r in ratio_sweep_rows if r.method == "Retrain"), key=lambda r: r.ratio
        )
        assert [r.ratio for r in cells] == [0.05, 0.10, 0.15, 0.20]
        assert all(r.status == "ok" for r in cells)
        nd = [r.ndcg20 for r in cells]
        inv = _rising_steps(nd)
        _verdict(
            "4 ratio sweep", inv <= 1,
            f"ndcg {[round(v, 4) for v in nd]} ({inv} inversions, 1 allowed)",
        )


@pytest.fixture(scope="module")
def property_unlearn():
    """One small EU unlearning shared by the expungement and identity checks."""
    ds = make_interactions(77, num_users=40, num_items=25, min_deg=5, max_deg=10)
    bundle = split(ds, (0.8, 0.1, 0.1), seed=0)
    hyper = Hyperparams(embedding_dim=4, max_epochs=10, patience=3)
    state = prepare("wmf", "sisa", bundle.train, bundle.valid, hyper, 5, seed=0)
    users = np.array([3, 17, 26], dtype=np.int64)
    rows = bundle.train.rows_of_users(set(users.tolist()))
    uset = UnlearnSet(
        "random", users, np.column_stack([bundle.train.users[rows], bundle.train.items[rows]]), 0.0
    )
    outcome = unlearn("sisa", state, UnlearnRequest(uset, "sisa"))
    return state, users, outcome


class TestCriterion5Properties:
    def test_criterion_5a_expungement_scan(self, property_unlearn):
        state, users, outcome = property_unlearn
        leaked = 0
        for sub in outcome.serving.submodels:
            for u in users:
                leaked += int((sub.train_ref.users == u).sum())
        _verdict("5a expungement", leaked == 0, f"{leaked} unlearned interactions found in shards")

    def test_criterion_5b_untouched_shards_bit_identical(self, property_unlearn):
        state, users, outcome = property_unlearn
        touched = set(int(state.ensemble.plan.assignment[u]) for u in users)
        assert touched and len(touched) < state.ensemble.plan.num_shards
        identical = True
        for s in range(state.ensemble.plan.num_shards):
            if s in touched:
                continue
            old_u, old_v = state.ensemble.submodels[s].final_embeddings
            new_u, new_v = outcome.serving.submodels[s].final_embeddings
            identical = identical and np.array_equal(old_u, new_u) and np.array_equal(old_v, new_v)
        _verdict(
            "5b untouched shards", identical,
            f"{state.ensemble.plan.num_shards - len(touched)} untouched shards bit-identical",
        )

    def test_criterion_5c_aggregator_simplex(self):
        ds = make_interactions(78, num_users=40, num_items=25, min_deg=5, max_deg=10)
        bundle = split(ds, (0.8, 0.1, 0.1), seed=1)
        hyper = Hyperparams(embedding_dim=4, max_epochs=10, patience=3)
        prelim = preliminary_embeddings(bundle.train, hyper, 0)
        state = prepare(
            "wmf", "receraser", bundle.train, bundle.valid, hyper, 4, seed=0,
            prelim_features=prelim,
        )
        users = np.array([5, 11], dtype=np.int64)
        rows = bundle.train.rows_of_users(set(users.tolist()))
        uset = UnlearnSet(
            "random", users,
            np.column_stack([bundle.train.users[rows], bundle.train.items[rows]]), 0.0,
        )
        outcome = unlearn("receraser", state, UnlearnRequest(uset, "receraser"))
        checked = []
        for w in (state.ensemble.weights, outcome.serving.weights):
            checked.append(bool(np.all(w >= 0) and abs(float(w.sum()) - 1.0) <= 1e-12))
        _verdict(
            "5c aggregator simplex", all(checked),
            f"prepared and refit weight vectors on the simplex: {checked}",
        )

    def test_criterion_5d_partition_capacity(self):
        n, S = 37, 5
        users = np.arange(n, dtype=np.int64)
        feats = np.random.default_rng(9).normal(size=(n, 6))
        cap = math.ceil(n / S)
        ok = True
        detail = []
        for mode in ("random", "balanced_kmeans", "balanced_ot"):
            plan = balanced_partition(
                users, S, mode, None if mode == "random" else feats, seed=3, num_users=n
            )
            sizes = [int((plan.assignment == s).sum()) for s in range(S)]
            mode_ok = sum(sizes) == n and max(sizes) <= cap
            ok = ok and mode_ok
            detail.append(f"{mode}: sizes={sizes}")
        _verdict("5d partition capacity", ok, "; ".join(detail) + f" (cap {cap})")

    def test_criterion_5e_scif_distance_wins(self, scif_tiny_wins):
        wins = sum(w for w, _ in scif_tiny_wins)
        _verdict("5e scif distance", wins >= 18, f"{wins}/20 tiny instances improved (need 18)")

    def test_criterion_5f_constant_mio_exactly_half(self):
        rng = np.random.default_rng(22)
        U = rng.normal(size=(20, 4))
        V = rng.normal(size=(9, 4))
        model = ScoreStub(np.zeros((20, 9)), None, embeddings=(U, V))
        feature_items = {u: np.array([u % 9, (u + 3) % 9]) for u in range(20)}
        acc = mio_accuracy(_zero_mio(8), model, range(7), range(7, 20), feature_items, seed=3)
        _verdict("5f constant mio", acc == 0.5, f"balanced accuracy {acc} (== 0.5 exactly)")

    def test_criterion_5g_aigf_antisymmetry(self):
        ds = make_interactions(10, num_users=12, num_items=15, min_deg=3, max_deg=6)
        bundle = split(ds, (0.6, 0.0, 0.4), seed=4)
        scores = np.random.default_rng(5).normal(size=(12, 15))
        model = ScoreStub(scores, bundle.train)
        users = np.flatnonzero(bundle.test.user_degrees > 0)
        half = len(users) // 2
        gap = a_igf(model, bundle.test, GroupAssignment(users[:half], users[half:]))
        swapped = a_igf(model, bundle.test, GroupAssignment(users[half:], users[:half]))
        _verdict("5g a-igf antisymmetry", swapped == -gap, f"gap {gap:.6f}, swapped {swapped:.6f}")

    def test_criterion_5h_shardgf_zero_single_shard(self):
        ds = make_interactions(12, num_users=16, num_items=14, min_deg=4, max_deg=7)
        bundle = split(ds, (0.7, 0.15, 0.15), seed=6)
        hyper = Hyperparams(embedding_dim=4, max_epochs=4)
        state = prepare("wmf", "sisa", bundle.train, bundle.valid, hyper, 1, seed=0)
        gf = shard_gf(state.ensemble, bundle.test)
        _verdict("5h shardgf single shard", gf == 0.0, f"variance {gf} (== 0.0 exactly)")


class TestCriterion6DeclaredExclusions:
    def test_criterion_6_exclusions_enforced(self, eu_like_bundle=None):
        # Absolute runtimes, the larger corpora, and the LightGCN+SCIF cell
        # are out of scope; the influence path refuses LightGCN outright and
        # no test in this suite asserts a wall-clock magnitude.
        ds = make_interactions(79, num_users=30, num_items=20, min_deg=4, max_deg=8)
        bundle = split(ds, (0.8, 0.1, 0.1), seed=2)
        hyper = Hyperparams(embedding_dim=4, max_epochs=4)
        with pytest.raises(UnlearnError):
            prepare("lightgcn", "scif", bundle.train, bundle.valid, hyper, 1, seed=0)
        _verdict(
            "6 declared exclusions", True,
            "absolute runtimes, ML-1M/ADM corpora, and LightGCN+SCIF excluded by design",
        )
