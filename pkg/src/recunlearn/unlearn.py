"""Unlearning methods behind one prepare/unlearn interface.

Exact methods remove data and retrain: either the whole model (Retrain) or
only the shards of a user-partitioned ensemble that contain unlearned users
(SISA-style with a random partition, plus two collaboration-aware variants
that divide users by preliminary embeddings and learn aggregation weights).
The approximate method (SCIF) edits the trained parameters directly with a
damped inverse-Hessian step restricted to the affected parameter subset.

Stage-III work is timed by the caller-facing `unlearn`; everything produced
by `prepare` counts as stage-I state.
"""

from __future__ import annotations

import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, logsumexp, softmax

from . import models
from .dataset import derive_rng, derive_seed, split
from .models import (
    EmbeddingTable,
    PairBatch,
    TrainedModel,
    WMFBatch,
    hessian_vector_product,
    loss_grad,
    normalized_adjacency,
)

METHODS = ("retrain", "sisa", "receraser", "ultrare", "scif")
METHOD_LABELS = {
    "retrain": "Retrain",
    "sisa": "SISA",
    "receraser": "RecEraser",
    "ultrare": "UltraRE",
    "scif": "SCIF",
}
EXACT_ENSEMBLE_METHODS = ("sisa", "receraser", "ultrare")

_TAG_PLAN = 43
_TAG_SHARD = 47
_TAG_SHARD_SPLIT = 48
_TAG_AGG = 53
_TAG_SCIF = 59
_TAG_PRELIM = 61


class UnlearnError(Exception):
    pass


def canonical_method(name):
    low = str(name).lower().replace("-", "").replace("_", "")
    for key in METHODS:
        if low == key or low == METHOD_LABELS[key].lower():
            return key
    raise UnlearnError(f"unknown unlearning method {name!r}")


@dataclass(frozen=True)
class UnlearnRequest:
    unlearn_set: object
    method: str


@dataclass(frozen=True)
class ShardPlan:
    num_shards: int
    assignment: np.ndarray
    mode: str

    def shard_sizes(self):
        sizes = np.bincount(
            self.assignment[self.assignment >= 0], minlength=self.num_shards
        )
        return sizes


@dataclass(eq=False)
class ShardEnsemble:
    plan: ShardPlan
    submodels: list
    weights: np.ndarray
    train_ref: object
    aggregator_mode: str

    def shard_users(self, s):
        return np.flatnonzero(self.plan.assignment == s)

    @property
    def num_items(self):
        return self.train_ref.num_items

    @property
    def trained_user_mask(self):
        return self.train_ref.user_degrees > 0

    def _shard_tables(self):
        # The fallback row is the mean over the shard model's whole user
        # table. Rows the shard never trained stay near their small random
        # init, so the prior keeps the shard's popularity direction at a
        # magnitude scaled by its user coverage; a full-coverage shard
        # (S=1) degenerates to the plain mean trained embedding.
        tables = []
        for sub in self.submodels:
            u, v = sub.final_embeddings
            known = sub.train_ref.user_degrees > 0
            tables.append((u, v, known, u.mean(axis=0)))
        return tables

    def score_users(self, users):
        users = np.asarray(users, dtype=np.int64)
        out = np.zeros((len(users), self.num_items))
        for w, (u, v, known, mean_u) in zip(self.weights, self._shard_tables()):
            rows = np.where(known[users][:, None], u[users], mean_u)
            out += w * (rows @ v.T)
        return out

    def feature_embeddings(self):
        nu = self.train_ref.num_users
        dim = self.submodels[0].params.dim
        uview = np.zeros((nu, dim))
        vview = np.zeros((self.num_items, dim))
        for w, (u, v, known, mean_u) in zip(self.weights, self._shard_tables()):
            uview += w * np.where(known[:, None], u, mean_u)
            vview += w * v
        return uview, vview

    def interactions_of_users(self, users):
        """Total interactions of the given users across shard datasets."""
        total = 0
        for sub in self.submodels:
            total += len(sub.train_ref.restrict_to_users(users))
        return total


@dataclass(frozen=True)
class InfluenceUpdate:
    user_idx: np.ndarray
    item_idx: np.ndarray
    delta: np.ndarray
    cg_iterations: int
    residual: float
    converged: bool


@dataclass(frozen=True)
class UnlearnOutcome:
    serving: object
    wall_time_s: float
    shards_retrained: int = 0
    detail: dict = None


@dataclass(eq=False)
class PreparedState:
    method: str
    kind: str
    train: object
    valid: object
    hyper: object
    num_shards: int
    seed: int
    model: object = None
    ensemble: object = None

    @property
    def serving(self):
        return self.model if self.model is not None else self.ensemble


def _sqdist(a, b):
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)


def _balanced_kmeans(feats, S, capacity, rng, iters=20):
    """Seeded k-means with greedy capacity-capped assignment.

    Points are visited in index order; each takes its nearest centroid with
    spare capacity. Returns (labels, centroids).
    """
    n = len(feats)
    centroids = feats[np.sort(rng.choice(n, size=S, replace=False))].copy()
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        d2 = _sqdist(feats, centroids)
        counts = np.zeros(S, dtype=np.int64)
        new_labels = np.empty(n, dtype=np.int64)
        pref = np.argsort(d2, axis=1, kind="stable")
        for idx in range(n):
            for s in pref[idx]:
                if counts[s] < capacity:
                    new_labels[idx] = s
                    counts[s] += 1
                    break
        moved = not np.array_equal(new_labels, labels)
        labels = new_labels
        for s in range(S):
            members = feats[labels == s]
            if len(members):
                centroids[s] = members.mean(axis=0)
        if not moved:
            break
    return labels, centroids


def _sinkhorn_plan(cost, row_marginal, col_marginal, eps, iters):
    """Log-domain Sinkhorn scaling; returns the dense transport plan."""
    loga = np.log(row_marginal)
    logb = np.log(col_marginal)
    f = np.zeros(len(loga))
    g = np.zeros(len(logb))
    for _ in range(iters):
        f = eps * (loga - logsumexp((g[None, :] - cost) / eps, axis=1))
        g = eps * (logb - logsumexp((f[:, None] - cost) / eps, axis=0))
    return np.exp((f[:, None] + g[None, :] - cost) / eps)


def _balanced_targets(n, S):
    base = n // S
    sizes = np.full(S, base, dtype=np.int64)
    sizes[: n % S] += 1
    return sizes


def balanced_partition(users, S, mode, features=None, seed=0, num_users=None):
    """Assign users to S capacity-bounded shards.

    Args:
        users: user indices to assign.
        S: shard count (1 <= S <= len(users)).
        mode: "random" (seeded shuffle + round robin), "balanced_kmeans"
            (greedy capacity-capped k-means over features, 20 iterations) or
            "balanced_ot" (entropic transport between users and
            capacity-proportional shards over squared distances, row argmax
            with deterministic capacity repair).
        features: per-user embedding rows aligned with `users`; required for
            the kmeans/ot modes.
        seed: partition seed.
        num_users: size of the assignment array (defaults to max index + 1).

    Returns:
        ShardPlan whose assignment maps unassigned users to -1.
    """
    users = np.asarray(users, dtype=np.int64)
    n = len(users)
    if S < 1:
        raise UnlearnError("S must be >= 1")
    if S > n:
        raise UnlearnError(f"more shards ({S}) than users ({n})")
    if mode not in ("random", "balanced_kmeans", "balanced_ot"):
        raise UnlearnError(f"unknown partition mode {mode!r}")
    if mode != "random":
        if features is None:
            raise UnlearnError(f"{mode} requires user features")
        features = np.asarray(features, dtype=np.float64)
        if len(features) != n:
            raise UnlearnError("features must align with users")

    rng = derive_rng(seed, 67)
    capacity = math.ceil(n / S)
    local = np.empty(n, dtype=np.int64)

    if mode == "random":
        perm = rng.permutation(n)
        local[perm] = np.arange(n) % S
    elif mode == "balanced_kmeans":
        local, _ = _balanced_kmeans(features, S, capacity, rng)
    else:
        _, centroids = _balanced_kmeans(features, S, capacity, rng)
        cost = _sqdist(features, centroids)
        targets = _balanced_targets(n, S)
        plan = _sinkhorn_plan(
            cost,
            np.full(n, 1.0 / n),
            targets / targets.sum(),
            eps=0.05,
            iters=200,
        )
        order = np.lexsort((np.arange(n), -plan.max(axis=1)))
        counts = np.zeros(S, dtype=np.int64)
        for idx in order:
            prefs = np.lexsort((np.arange(S), cost[idx], -plan[idx]))
            for s in prefs:
                if counts[s] < targets[s]:
                    local[idx] = s
                    counts[s] += 1
                    break

    size = int(num_users) if num_users is not None else int(users.max()) + 1
    assignment = np.full(size, -1, dtype=np.int64)
    assignment[users] = local
    return ShardPlan(S, assignment, mode)


def _iid_negatives(users, posmat, num_items, rng):
    """One uniform non-positive item per row; -1 where rejection gives up."""
    cand = rng.integers(0, num_items, size=len(users))
    for _ in range(8):
        bad = posmat[users, cand]
        if not bad.any():
            break
        cand[bad] = rng.integers(0, num_items, size=int(bad.sum()))
    cand[posmat[users, cand]] = -1
    return cand


def fit_aggregator(submodels, train_remainder, mode, seed=0):
    """Per-shard serving weights on the probability simplex.

    "uniform" returns 1/S. "learned" parameterizes the weights through a
    softmax and runs 50 gradient-descent epochs (lr 0.01) on the mean
    pairwise logistic loss of the aggregated score over a seeded 10% held
    slice of the remaining training interactions, drawing one fresh negative
    per held positive each epoch as pairwise-loss training normally does.
    """
    S = len(submodels)
    if S < 1:
        raise UnlearnError("need at least one submodel")
    if mode == "uniform":
        return np.full(S, 1.0 / S)
    if mode != "learned":
        raise UnlearnError(f"unknown aggregator mode {mode!r}")

    rng = derive_rng(seed, 71)
    n = len(train_remainder)
    if n == 0:
        return np.full(S, 1.0 / S)
    m = max(1, int(round(0.1 * n)))
    rows = np.sort(rng.choice(n, size=m, replace=False))
    users = train_remainder.users[rows]
    pos_items = train_remainder.items[rows]
    posmat = train_remainder.positives_matrix

    user_rows = []
    item_tables = []
    for sub in submodels:
        u, v = sub.final_embeddings
        known = sub.train_ref.user_degrees > 0
        # Same fallback row the serving rule uses: the whole-table mean.
        user_rows.append(np.where(known[users][:, None], u[users], u.mean(axis=0)))
        item_tables.append(v)
    pos_part = np.column_stack(
        [np.einsum("nd,nd->n", r, v[pos_items]) for r, v in zip(user_rows, item_tables)]
    )

    alpha = np.zeros(S)
    for _ in range(50):
        neg = _iid_negatives(users, posmat, train_remainder.num_items, rng)
        ok = neg >= 0
        if not ok.any():
            break
        X = pos_part[ok] - np.column_stack(
            [
                np.einsum("nd,nd->n", r[ok], v[neg[ok]])
                for r, v in zip(user_rows, item_tables)
            ]
        )
        w = softmax(alpha)
        margin = X @ w
        gw = X.T @ (expit(margin) - 1.0) / len(margin)
        galpha = w * (gw - float(w @ gw))
        alpha -= 0.01 * galpha
    return softmax(alpha)


def aggregate_score(ensemble, user, item):
    """Weighted sum of per-shard scores for one (user, item) pair."""
    return float(ensemble.score_users(np.array([int(user)]))[0, int(item)])


def _sample_negatives_for(users, posmat, num_items, k, rng):
    """k distinct non-positive items per row, -1 padded; exclusions from posmat."""
    n = len(users)
    out = np.full((n, k), -1, dtype=np.int64)
    if n == 0:
        return out
    avail = num_items - posmat[users].sum(axis=1)
    full = avail >= k
    idx = np.flatnonzero(full)
    if len(idx):
        cand = rng.integers(0, num_items, size=(len(idx), k))
        for _ in range(10000):
            bad = posmat[users[idx][:, None], cand]
            for j in range(1, k):
                for l in range(j):
                    bad[:, j] |= cand[:, j] == cand[:, l]
            nbad = int(bad.sum())
            if nbad == 0:
                break
            cand[bad] = rng.integers(0, num_items, size=nbad)
        else:
            raise RuntimeError("negative sampling failed to terminate")
        out[idx] = cand
    for row in np.flatnonzero(~full):
        complement = np.flatnonzero(~posmat[users[row]])
        out[row, : len(complement)] = rng.permutation(complement)
    return out


def preliminary_embeddings(train, hyper, seed):
    """Short full-data WMF run whose user rows drive collaboration-aware division."""
    prelim_hyper = replace(hyper, max_epochs=50, wmf_dense=False)
    model, _ = models.train("wmf", train, None, prelim_hyper, derive_seed(seed, _TAG_PRELIM))
    return model.params.user_vecs.copy()


def _train_submodel(kind, shard_data, hyper, shard_seed):
    """Train one shard submodel with a shard-local early-stopping slice.

    The returned model's train_ref is the full shard dataset (the unit that
    unlearning must expunge), while fitting internally holds out 10% of the
    shard's interactions for validation.
    """
    if len(shard_data) == 0:
        dim = hyper.embedding_dim
        params = EmbeddingTable(
            np.zeros((shard_data.num_users, dim)), np.zeros((shard_data.num_items, dim))
        )
        adjacency = normalized_adjacency(shard_data) if kind == "lightgcn" else None
        return TrainedModel(kind, params, hyper, shard_data, adjacency)
    local = split(shard_data, (0.9, 0.1, 0.0), seed=derive_seed(shard_seed, _TAG_SHARD_SPLIT))
    fit_set = local.train if len(local.train) else shard_data
    model, _ = models.train(kind, fit_set, local.valid if len(local.valid) else None, hyper, shard_seed)
    return TrainedModel(kind, model.params, hyper, shard_data, model.adjacency)


def _submodel_job(args):
    # Self-timed so parallel workers report their own wall clock.
    t0 = time.perf_counter()
    sub = _train_submodel(*args)
    return sub, time.perf_counter() - t0


_PARTITION_MODE = {"sisa": "random", "receraser": "balanced_kmeans", "ultrare": "balanced_ot"}
_AGGREGATOR_MODE = {"sisa": "uniform", "receraser": "learned", "ultrare": "learned"}


def prepare(kind, method, train, valid, hyper, S, seed, prelim_features=None, original=None):
    """Build stage-I state for one method.

    Args:
        kind: model kind to benchmark.
        method: one of the five unlearning methods (any casing).
        train, valid: effective training and validation sets.
        hyper: Hyperparams shared by all trainings.
        S: shard count for the ensemble methods.
        seed: training seed; shard/plan/aggregator seeds derive from it.
        prelim_features: optional preliminary user-embedding matrix shared
            across collaboration-aware methods (computed here when absent).
        original: optional already-trained full model reused by Retrain and
            SCIF so both share the identical stage-I model.

    Returns:
        PreparedState carrying either the full model or the shard ensemble.
    """
    method = canonical_method(method)
    state = PreparedState(method, kind, train, valid, hyper, S, seed)
    if method in ("retrain", "scif"):
        if method == "scif" and kind == "lightgcn":
            raise UnlearnError("scif does not support lightgcn")
        state.model = original if original is not None else models.train(kind, train, valid, hyper, seed)[0]
        return state

    trained_users = np.flatnonzero(train.user_degrees > 0)
    mode = _PARTITION_MODE[method]
    feats = None
    if mode != "random":
        if prelim_features is None:
            prelim_features = preliminary_embeddings(train, hyper, seed)
        feats = np.asarray(prelim_features)[trained_users]
    plan = balanced_partition(
        trained_users, S, mode, feats, derive_seed(seed, _TAG_PLAN), num_users=train.num_users
    )
    submodels = []
    for s in range(S):
        shard_users = np.flatnonzero(plan.assignment == s)
        shard_data = train.restrict_to_users(shard_users)
        submodels.append(_train_submodel(kind, shard_data, hyper, derive_seed(seed, _TAG_SHARD, s)))
    weights = fit_aggregator(
        submodels, train, _AGGREGATOR_MODE[method], derive_seed(seed, _TAG_AGG)
    )
    state.ensemble = ShardEnsemble(plan, submodels, weights, train, _AGGREGATOR_MODE[method])
    return state


def _worker_count(n_jobs, requested=None):
    if requested is not None:
        return max(1, min(int(requested), n_jobs))
    try:
        cpus = len(os.sched_getaffinity(0))
    except AttributeError:
        cpus = os.cpu_count() or 1
    return max(1, min(n_jobs, cpus))


def unlearn(method, state, request, workers=None, damping=0.01, cg_max=100, cg_tol=1e-4):
    """Execute stage III for one request and time it.

    Returns an UnlearnOutcome whose `detail` dict carries log material
    (worker count, per-shard info, CG statistics). An empty unlearn set
    short-circuits: training is deterministic, so redoing it on identical
    data would reproduce the prepared state exactly.
    """
    method = canonical_method(method)
    if method != state.method:
        raise UnlearnError(f"state prepared for {state.method!r}, not {method!r}")
    users = np.asarray(request.unlearn_set.users, dtype=np.int64)
    if len(users):
        out_of_range = (users < 0) | (users >= state.train.num_users)
        in_range = users[~out_of_range]
        unknown = np.concatenate(
            [users[out_of_range], in_range[state.train.user_degrees[in_range] == 0]]
        )
        if len(unknown):
            raise UnlearnError(
                f"unlearned users unknown to the prepared state: {unknown[:5].tolist()}"
            )

    t0 = time.perf_counter()
    if len(users) == 0:
        return UnlearnOutcome(state.serving, time.perf_counter() - t0, 0, {"noop": True})

    if method == "retrain":
        rem_train = state.train.remove_users(users)
        rem_valid = state.valid.remove_users(users) if state.valid is not None else None
        model, log = models.train(state.kind, rem_train, rem_valid, state.hyper, state.seed)
        wall = time.perf_counter() - t0
        return UnlearnOutcome(model, wall, 0, {"stop_epoch": log.stop_epoch})

    if method == "scif":
        model, update = scif_influence_update(
            state.model,
            state.train,
            request.unlearn_set,
            damping=damping,
            cg_max=cg_max,
            cg_tol=cg_tol,
            seed=derive_seed(state.seed, _TAG_SCIF),
        )
        wall = time.perf_counter() - t0
        detail = {
            "cg_iterations": update.cg_iterations,
            "cg_residual": update.residual,
            "cg_converged": update.converged,
            "affected_users": len(update.user_idx),
            "affected_items": len(update.item_idx),
        }
        return UnlearnOutcome(model, wall, 0, detail)

    ensemble = state.ensemble
    plan = ensemble.plan
    touched = np.unique(plan.assignment[users])
    touched = touched[touched >= 0]
    jobs = []
    for s in touched:
        new_data = ensemble.submodels[s].train_ref.remove_users(users)
        jobs.append((state.kind, new_data, state.hyper, derive_seed(state.seed, _TAG_SHARD, int(s))))
    n_workers = _worker_count(len(jobs), workers)
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            retrained = list(pool.map(_submodel_job, jobs))
    else:
        retrained = [_submodel_job(j) for j in jobs]
    submodels = list(ensemble.submodels)
    shard_walls = {}
    for s, (sub, shard_wall) in zip(touched, retrained):
        submodels[int(s)] = sub
        shard_walls[int(s)] = round(shard_wall, 4)
    rem_train = state.train.remove_users(users)
    if ensemble.aggregator_mode == "learned":
        weights = fit_aggregator(submodels, rem_train, "learned", derive_seed(state.seed, _TAG_AGG))
    else:
        weights = ensemble.weights.copy()
    new_ensemble = ShardEnsemble(plan, submodels, weights, rem_train, ensemble.aggregator_mode)
    wall = time.perf_counter() - t0
    detail = {"workers": n_workers, "shard_walls": shard_walls}
    return UnlearnOutcome(new_ensemble, wall, len(touched), detail)


def _dense_wmf_batch(user_idx, posmat, num_items, negative_weight):
    """Full-grid WMF rows (every item) for the given users."""
    grid_u = np.repeat(user_idx, num_items)
    grid_i = np.tile(np.arange(num_items, dtype=np.int64), len(user_idx))
    targets = posmat[grid_u, grid_i].astype(np.float64)
    weights = np.where(targets > 0, 1.0, negative_weight)
    return WMFBatch(grid_u, grid_i, targets, weights)


def _dense_wmf_operator(params, remaining, subset, damping, l2, wneg):
    """Damped-HVP closure for the full-grid weighted square loss.

    The loss is quadratic in each table with a bilinear coupling, so the
    Hessian action collapses to six table-sized matrix products per call;
    the two user-by-item panels held here are the price, fine at the
    scales this package runs at.
    """
    Q = params.item_vecs
    rows = np.flatnonzero(remaining.user_degrees > 0)
    P_r = params.user_vecs[rows]
    T = remaining.positives_matrix[rows].astype(np.float64)
    W = wneg + (1.0 - wneg) * T
    WE = W * (P_r @ Q.T - T)
    num_items = Q.shape[0]
    num_rows = len(rows)
    dim = subset.dim
    n_aff_u = len(subset.user_idx)
    pos = np.full(params.user_vecs.shape[0], -1, dtype=np.int64)
    pos[rows] = np.arange(num_rows)
    aff_rows = pos[subset.user_idx]

    def apply(v):
        vp = np.zeros_like(P_r)
        vq = np.zeros_like(Q)
        vp[aff_rows] = v[: n_aff_u * dim].reshape(n_aff_u, dim)
        vq[subset.item_idx] = v[n_aff_u * dim :].reshape(-1, dim)
        m = W * (vp @ Q.T + P_r @ vq.T)
        out_p = m @ Q + WE @ vq + (num_items * l2) * vp
        out_q = m.T @ P_r + WE.T @ vp + (num_rows * l2) * vq
        out = 2.0 * np.concatenate(
            [out_p[aff_rows].ravel(), out_q[subset.item_idx].ravel()]
        )
        return out + damping * v

    return apply


def _build_loss_batch(kind, interactions, posmat, hyper, rng):
    """Model-loss batch (positives + seeded negatives) over given interactions."""
    users = interactions.users
    items = interactions.items
    k = hyper.negatives_per_positive
    negs = _sample_negatives_for(users, posmat, interactions.num_items, k, rng)
    keep = negs >= 0
    reps = keep.sum(axis=1)
    if kind == "wmf":
        u = np.concatenate([users, np.repeat(users, reps)])
        i = np.concatenate([items, negs[keep]])
        t = np.concatenate([np.ones(len(users)), np.zeros(int(reps.sum()))])
        w = np.concatenate(
            [np.ones(len(users)), np.full(int(reps.sum()), hyper.wmf_negative_weight)]
        )
        return WMFBatch(u, i, t, w)
    u = np.repeat(users, reps)
    i = np.repeat(items, reps)
    j = negs[keep]
    return PairBatch(u, i, j)


def _prune_batch(kind, batch, user_in, item_in):
    """Drop rows that touch no affected parameter; their HVP share is zero."""
    if kind == "wmf":
        keep = user_in[batch.users] | item_in[batch.items]
        return WMFBatch(
            batch.users[keep], batch.items[keep], batch.targets[keep], batch.weights[keep]
        )
    keep = user_in[batch.users] | item_in[batch.pos_items] | item_in[batch.neg_items]
    return PairBatch(batch.users[keep], batch.pos_items[keep], batch.neg_items[keep])


def _conjugate_gradient(apply_h, g, max_iter, tol):
    """CG on (H + damping I) d = g with truncated-Newton breakdown handling.

    The applied iterate on non-convergence depends on how the run went. When
    some iterate drove the relative residual below its starting value of 1,
    the residual is a meaningful merit and the lowest-residual iterate is
    best. When the residual never improved (a strongly indefinite system,
    where it can grow monotonically while the step still gains signal), the
    truncation point is best: CG decreases its quadratic model
    0.5 d'Ad - g'd at every positive-curvature step, so the iterate held
    when a non-positive curvature direction appears is the model minimizer
    over the explored subspace. The residual of whichever iterate is
    returned is reported, even when it exceeds 1.
    """
    x = np.zeros_like(g)
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return x, 0, 0.0, True
    r = g.copy()
    p = r.copy()
    rs = float(r @ r)
    res = 1.0
    dip_x = None
    dip_res = 1.0
    iterations = 0
    converged = False
    for _ in range(max_iter):
        iterations += 1
        hp = apply_h(p)
        curv = float(p @ hp)
        if curv <= 0.0:
            break
        alpha = rs / curv
        x += alpha * p
        r -= alpha * hp
        rs_new = float(r @ r)
        res = math.sqrt(rs_new) / gnorm
        if res < dip_res:
            dip_res = res
            dip_x = x.copy()
        if res <= tol:
            converged = True
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    if dip_x is not None and not converged:
        return dip_x, iterations, dip_res, converged
    return x, iterations, res, converged


def scif_influence_update(model, train, unlearn_set, damping=0.01, cg_max=100, cg_tol=1e-4, seed=0):
    """One damped Newton step that cancels the removed interactions' pull.

    The affected subset holds the embeddings of every item the unlearned
    users touched plus every remaining user sharing at least one of those
    items. Solving (H + damping I) d = g with H the remaining-data loss
    Hessian on that subset and g the removed-data loss gradient moves the
    affected parameters to where the remaining data alone would hold them;
    the unlearned users' own rows are zeroed afterwards.

    Returns:
        (updated TrainedModel over the remaining data, InfluenceUpdate).
    """
    if model.kind not in ("wmf", "bpr"):
        raise UnlearnError(f"scif supports wmf and bpr, not {model.kind!r}")
    users = np.asarray(unlearn_set.users, dtype=np.int64)
    hyper = model.hyper
    dim = hyper.embedding_dim
    empty = np.array([], dtype=np.int64)
    if len(users) == 0:
        update = InfluenceUpdate(empty, empty, np.zeros(0), 0, 0.0, True)
        return model, update

    removed = train.take(train.rows_of_users(users))
    remaining = train.remove_users(users)
    aff_items = np.unique(removed.items)
    item_in = np.zeros(train.num_items, dtype=bool)
    item_in[aff_items] = True
    share = item_in[remaining.items]
    aff_users = np.unique(remaining.users[share])
    user_in = np.zeros(train.num_users, dtype=bool)
    user_in[aff_users] = True
    subset = models.ParamSubset(aff_users, aff_items, dim)

    posmat = train.positives_matrix
    if model.kind == "wmf":
        # The weighted full-grid objective is the loss the trainer estimates
        # stochastically, so both the removed gradient and the remaining
        # Hessian are taken on it exactly.
        g_batch = _dense_wmf_batch(users, posmat, train.num_items, hyper.wmf_negative_weight)
        apply_h = _dense_wmf_operator(
            model.params, remaining, subset, damping, hyper.l2_reg, hyper.wmf_negative_weight
        )
    else:
        g_batch = _build_loss_batch(model.kind, removed, posmat, hyper, derive_rng(seed, 73))
        h_batch = _build_loss_batch(model.kind, remaining, posmat, hyper, derive_rng(seed, 79))
        h_batch = _prune_batch(model.kind, h_batch, user_in, item_in)

        def apply_h(v):
            return hessian_vector_product(
                model.kind,
                model.params,
                h_batch,
                v,
                damping=damping,
                subset=subset,
                l2_reg=hyper.l2_reg,
            )

    _, gu, gi = loss_grad(model.kind, model.params, g_batch, l2_reg=hyper.l2_reg)
    g = subset.pack(gu, gi)

    delta, iterations, residual, converged = _conjugate_gradient(apply_h, g, cg_max, cg_tol)
    if not converged:
        warnings.warn(
            f"scif conjugate gradient stopped at relative residual {residual:.3g} "
            f"after {iterations} iterations",
            RuntimeWarning,
        )
    params = model.params.copy()
    subset.apply_delta(params, delta)
    params.user_vecs[users] = 0.0
    updated = TrainedModel(model.kind, params, hyper, remaining, model.adjacency)
    update = InfluenceUpdate(aff_users, aff_items, delta, iterations, residual, converged)
    return updated, update
