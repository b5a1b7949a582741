"""Completeness, utility and fairness metrics for unlearning benchmarks.

Utility is top-20 ranking quality (NDCG, hit ratio as per-user recall) over
held-out interactions, always excluding each user's training items from the
candidate list. Completeness is the accuracy of a membership-inference
oracle on a balanced query of unlearned vs never-trained users, where 0.5
means the two are indistinguishable. Fairness compares activity groups
(A-IGF) and per-shard utilities (shardGF).

Model objects are duck-typed: anything with score_users(users),
trained_user_mask, train_ref and feature_embeddings() works, which covers
both single models and shard ensembles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import derive_rng


class EvalError(Exception):
    pass


@dataclass(frozen=True)
class RankedList:
    user: int
    items: np.ndarray
    relevance: np.ndarray


@dataclass(frozen=True)
class GroupAssignment:
    active: np.ndarray
    inactive: np.ndarray


def _rows_for(interactions, users):
    """Map interactions onto rows aligned with `users` (-1 for other users)."""
    row_map = np.full(interactions.num_users, -1, dtype=np.int64)
    row_map[users] = np.arange(len(users))
    return row_map[interactions.users]


def _member_mask(interactions, users):
    """Bool matrix marking the interactions of `users`, one row per user."""
    pos = np.zeros((len(users), interactions.num_items), dtype=bool)
    sel = _rows_for(interactions, users)
    hit = sel >= 0
    pos[sel[hit], interactions.items[hit]] = True
    return pos


def _topk_indices(scores, k):
    # Stable argsort of the negated scores keeps ascending item index on ties.
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k]


def per_user_ndcg(model, eval_set, k=20, with_hr=False):
    """Per-user NDCG@k (and optionally recall@k) over eligible users.

    Eligible means the user has at least one eval interaction and at least
    one training interaction in the model's training reference. Returns
    (users, ndcg_values) or (users, ndcg_values, hr_values).
    """
    train_ref = model.train_ref
    eligible = (eval_set.user_degrees > 0) & model.trained_user_mask
    users = np.flatnonzero(eligible)
    if len(users) == 0:
        empty = np.array([], dtype=np.float64)
        return (users, empty, empty.copy()) if with_hr else (users, empty)

    scores = np.array(model.score_users(users), dtype=np.float64, copy=True)
    scores[_member_mask(train_ref, users)] = -np.inf
    relmat = _member_mask(eval_set, users)
    top = _topk_indices(scores, k)
    rel = relmat[np.arange(len(users))[:, None], top]
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = (rel * discounts[: rel.shape[1]]).sum(axis=1)

    cum = np.concatenate([[0.0], np.cumsum(discounts)])
    counts = np.minimum(eval_set.user_degrees[users], k)
    idcg = cum[counts]
    ndcg = dcg / idcg

    if not with_hr:
        return users, ndcg
    hr = rel.sum(axis=1) / eval_set.user_degrees[users]
    return users, ndcg, hr


def ndcg_at_k(model, eval_set, k=20):
    """Mean NDCG@k over users with eval items and a trained embedding."""
    if len(eval_set) == 0:
        raise EvalError("empty evaluation set")
    users, vals = per_user_ndcg(model, eval_set, k)
    if len(users) == 0:
        raise EvalError("no eligible users to evaluate")
    return float(vals.mean())


def hr_at_k(model, eval_set, k=20):
    """Mean per-user recall@k: hits in the top-k over the user's eval items."""
    if len(eval_set) == 0:
        raise EvalError("empty evaluation set")
    users, _, hr = per_user_ndcg(model, eval_set, k, with_hr=True)
    if len(users) == 0:
        raise EvalError("no eligible users to evaluate")
    return float(hr.mean())


def ranked_list(model, user, eval_set, k=20):
    """Top-k RankedList for one user, training items excluded."""
    from .models import score_topk

    train_items = model.train_ref.items_of(int(user))
    items = score_topk(model, user, k, exclude=train_items)
    rel = np.isin(items, eval_set.items_of(int(user)))
    return RankedList(int(user), items, rel)


def make_groups(train_for_counts, excluded_users=(), fraction=0.05):
    """Split remaining trained users into active (top counts) and inactive.

    The active group holds ceil(fraction * |remaining|) users with the most
    training interactions; count ties break toward the lower user index.
    """
    deg = train_for_counts.user_degrees
    mask = deg > 0
    excluded = np.asarray(list(excluded_users), dtype=np.int64)
    if len(excluded):
        mask[excluded] = False
    remaining = np.flatnonzero(mask)
    if len(remaining) == 0:
        raise EvalError("no remaining users to group")
    n_active = math.ceil(fraction * len(remaining))
    order = remaining[np.lexsort((remaining, -deg[remaining]))]
    return GroupAssignment(np.sort(order[:n_active]), np.sort(order[n_active:]))


def a_igf(model, eval_set, groups, k=20):
    """Active-group mean NDCG minus inactive-group mean NDCG."""
    users, vals = per_user_ndcg(model, eval_set, k)
    by_user = dict(zip(users.tolist(), vals.tolist()))
    act = [by_user[u] for u in groups.active.tolist() if u in by_user]
    ina = [by_user[u] for u in groups.inactive.tolist() if u in by_user]
    if not act or not ina:
        raise EvalError("a group has no evaluable users")
    return float(np.mean(act) - np.mean(ina))


def shard_utilities(ensemble, eval_set, k=20):
    """Per-shard submodel NDCG on that shard's users' eval interactions.

    Returns (values, skipped_shards); shards whose users have no evaluable
    interactions are skipped and reported.
    """
    vals = []
    skipped = []
    for s in range(ensemble.plan.num_shards):
        shard_users = ensemble.shard_users(s)
        sub = ensemble.submodels[s]
        part = eval_set.restrict_to_users(shard_users)
        if len(part) == 0:
            skipped.append(s)
            continue
        users, nd = per_user_ndcg(sub, part, k)
        if len(users) == 0:
            skipped.append(s)
            continue
        vals.append(float(nd.mean()))
    return vals, skipped


def shard_gf(ensemble, eval_set, k=20):
    """Population variance of per-shard utilities (0 for a single shard)."""
    vals, _ = shard_utilities(ensemble, eval_set, k)
    if not vals:
        raise EvalError("no shard had evaluable users")
    return float(np.var(vals))


def mio_features(model, user, item_indices):
    """Concatenate the user's embedding with the mean of its items' vectors."""
    items = np.asarray(item_indices, dtype=np.int64)
    if len(items) == 0:
        raise EvalError(f"user {user} has no interactions to featurize")
    u, v = model.feature_embeddings()
    return np.concatenate([u[int(user)], v[items].mean(axis=0)])


@dataclass(eq=False)
class MIOModel:
    """MLP membership classifier: input -> 64 -> 16 -> 4 -> 2 softmax."""

    weights: list
    biases: list
    mean: np.ndarray
    std: np.ndarray

    def _logits(self, feats):
        h = (np.atleast_2d(feats) - self.mean) / self.std
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return h @ self.weights[-1] + self.biases[-1]

    def predict_proba(self, feats):
        z = self._logits(feats)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, feats):
        return np.argmax(self._logits(feats), axis=1)


_MIO_HIDDEN = (64, 16, 4)


def train_mio(member_features, nonmember_features, seed, epochs=100, lr=0.001, batch_size=32):
    """Fit the membership oracle on balanced member/non-member features.

    The larger class is downsampled (seeded) to the smaller. Features are
    standardized with statistics of the balanced training set; optimization
    is seeded mini-batch SGD on the summed cross-entropy.
    """
    mem = np.atleast_2d(np.asarray(member_features, dtype=np.float64))
    non = np.atleast_2d(np.asarray(nonmember_features, dtype=np.float64))
    if len(mem) == 0 or len(non) == 0:
        raise EvalError("both feature classes must be non-empty")
    rng = derive_rng(seed, 31)
    m = min(len(mem), len(non))
    if len(mem) > m:
        mem = mem[np.sort(rng.choice(len(mem), size=m, replace=False))]
    if len(non) > m:
        non = non[np.sort(rng.choice(len(non), size=m, replace=False))]
    X = np.vstack([mem, non])
    y = np.concatenate([np.ones(m, dtype=np.int64), np.zeros(m, dtype=np.int64)])

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std < 1e-12] = 1.0
    Xs = (X - mean) / std

    dims = [X.shape[1], *_MIO_HIDDEN, 2]
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))

    n = len(Xs)
    onehot = np.eye(2)[y]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            b = order[start : start + batch_size]
            xb, tb = Xs[b], onehot[b]
            acts = [xb]
            h = xb
            for w, bias in zip(weights[:-1], biases[:-1]):
                h = np.maximum(h @ w + bias, 0.0)
                acts.append(h)
            z = h @ weights[-1] + biases[-1]
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            probs = e / e.sum(axis=1, keepdims=True)
            delta = probs - tb
            for layer in range(len(weights) - 1, -1, -1):
                gw = acts[layer].T @ delta
                gb = delta.sum(axis=0)
                if layer > 0:
                    delta = (delta @ weights[layer].T) * (acts[layer] > 0)
                weights[layer] -= lr * gw
                biases[layer] -= lr * gb
    return MIOModel(weights, biases, mean, std)


def mio_accuracy(mio, model, unlearned_users, holdout_users, feature_items, seed=0):
    """Balanced membership accuracy of the oracle on the model under test.

    Args:
        mio: a trained MIOModel.
        model: the serving model whose embeddings provide features.
        unlearned_users: query members (label 1).
        holdout_users: never-trained users (label 0).
        feature_items: mapping user -> item indices used for the item half
            of the feature vector.
        seed: balancing-sample seed.

    Returns:
        fraction of the balanced query set classified correctly.
    """
    unl = np.sort(np.asarray(list(unlearned_users), dtype=np.int64))
    hold = np.sort(np.asarray(list(holdout_users), dtype=np.int64))
    if len(unl) == 0 or len(hold) == 0:
        raise EvalError("both query classes must be non-empty")
    rng = derive_rng(seed, 37)
    m = min(len(unl), len(hold))
    if len(unl) > m:
        unl = np.sort(rng.choice(unl, size=m, replace=False))
    if len(hold) > m:
        hold = np.sort(rng.choice(hold, size=m, replace=False))
    feats = np.vstack(
        [mio_features(model, u, feature_items[int(u)]) for u in np.concatenate([unl, hold])]
    )
    labels = np.concatenate([np.ones(m, dtype=np.int64), np.zeros(m, dtype=np.int64)])
    pred = mio.predict(feats)
    return float((pred == labels).mean())
