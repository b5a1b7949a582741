"""Collaborative-filtering models: WMF, BPR and LightGCN on shared embeddings.

One embedding table (user rows + item rows) parameterizes every model kind;
the kinds differ only in their loss and, for LightGCN, in a sparse propagation
operator applied before scoring. Gradients and Hessian-vector products are
analytic, which the influence-function unlearning path relies on.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .dataset import derive_rng, derive_seed, sample_negatives

KINDS = ("wmf", "bpr", "lightgcn")
INIT_STD = 0.01

_TAG_INIT = 21
_TAG_SHUFFLE = 22
_TAG_NEG = 23


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    embedding_dim: int = 32
    batch_size: int = 512
    learning_rate: float = 0.01
    max_epochs: int = 500
    patience: int = 5
    negatives_per_positive: int = 4
    wmf_negative_weight: float = 0.1
    lightgcn_layers: int = 2
    l2_reg: float = 1e-4
    wmf_dense: bool = False

    def __post_init__(self):
        if (
            self.embedding_dim <= 0
            or self.batch_size <= 0
            or self.learning_rate <= 0
            or self.max_epochs <= 0
            or self.patience <= 0
            or self.negatives_per_positive <= 0
        ):
            raise ValueError("hyper-parameters must be positive")
        if not 0.0 < self.wmf_negative_weight <= 1.0:
            raise ValueError("wmf_negative_weight must lie in (0, 1]")
        if self.lightgcn_layers < 0 or self.l2_reg < 0:
            raise ValueError("lightgcn_layers and l2_reg must be >= 0")


@dataclass(eq=False)
class EmbeddingTable:
    user_vecs: np.ndarray
    item_vecs: np.ndarray

    def __post_init__(self):
        self.user_vecs = np.asarray(self.user_vecs, dtype=np.float64)
        self.item_vecs = np.asarray(self.item_vecs, dtype=np.float64)
        if self.user_vecs.ndim != 2 or self.item_vecs.ndim != 2:
            raise ValueError("embedding tables must be 2-d")
        if self.user_vecs.shape[1] != self.item_vecs.shape[1]:
            raise ValueError("user/item embedding dims differ")

    @property
    def dim(self):
        return self.user_vecs.shape[1]

    def copy(self):
        return EmbeddingTable(self.user_vecs.copy(), self.item_vecs.copy())


@dataclass(frozen=True)
class WMFBatch:
    """Weighted regression rows: score(u, i) pulled toward target with weight."""

    users: np.ndarray
    items: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.users)


@dataclass(frozen=True)
class PairBatch:
    """Pairwise ranking triples (user, positive item, negative item)."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self):
        return len(self.users)


@dataclass(frozen=True)
class TrainLog:
    val_ndcg: tuple
    stop_epoch: int
    wall_time_s: float
    early_stopped: bool


def normalized_adjacency(train):
    """Symmetric-normalized adjacency over the user+item node set.

    Zero-degree nodes keep zero rows (their inverse-sqrt degree is taken
    as 0), so propagation never divides by zero.
    """
    nu, ni = train.num_users, train.num_items
    n = nu + ni
    rows = np.concatenate([train.users, train.items + nu])
    cols = np.concatenate([train.items + nu, train.users])
    vals = np.ones(len(rows), dtype=np.float64)
    adj = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv_sqrt)
    return (d @ adj @ d).tocsr()


def propagate(adjacency, user_vecs, item_vecs, layers):
    """Mean of embedding tables over 0..layers propagation hops."""
    e = np.vstack([user_vecs, item_vecs])
    acc = e.copy()
    cur = e
    for _ in range(layers):
        cur = adjacency @ cur
        acc += cur
    acc /= layers + 1
    nu = user_vecs.shape[0]
    return acc[:nu], acc[nu:]


@dataclass(eq=False)
class TrainedModel:
    kind: str
    params: EmbeddingTable
    hyper: Hyperparams
    train_ref: object
    adjacency: object = None

    @cached_property
    def final_embeddings(self):
        if self.kind == "lightgcn":
            return propagate(
                self.adjacency,
                self.params.user_vecs,
                self.params.item_vecs,
                self.hyper.lightgcn_layers,
            )
        return self.params.user_vecs, self.params.item_vecs

    def feature_embeddings(self):
        return self.final_embeddings

    @cached_property
    def trained_user_mask(self):
        return self.train_ref.user_degrees > 0

    @property
    def num_items(self):
        return self.params.item_vecs.shape[0]

    def score_users(self, users):
        u, v = self.final_embeddings
        return u[np.asarray(users, dtype=np.int64)] @ v.T


def score_topk(model, user, k, exclude=()):
    """Top-k item indices for one user, training items excluded.

    Ties break toward the ascending item index; returns min(k, available)
    items. Raises for users without a trained embedding.
    """
    user = int(user)
    if user < 0 or user >= len(model.trained_user_mask) or not model.trained_user_mask[user]:
        raise ValueError(f"user {user} has no trained embedding")
    scores = model.score_users(np.array([user]))[0]
    order = np.argsort(-scores, kind="stable")
    if len(exclude):
        drop = np.zeros(len(scores), dtype=bool)
        drop[np.asarray(list(exclude), dtype=np.int64)] = True
        order = order[~drop[order]]
    return order[: int(k)]


def _scatter_add(target, idx, rows):
    # Duplicate indices must accumulate; flat bincount beats np.add.at.
    if len(idx) == 0:
        return
    d = rows.shape[1]
    flat = idx[:, None] * d + np.arange(d)[None, :]
    acc = np.bincount(flat.ravel(), weights=rows.ravel(), minlength=target.size)
    target += acc.reshape(target.shape)


def _check_batch(kind, batch):
    if kind == "wmf":
        if not isinstance(batch, WMFBatch):
            raise TypeError("wmf expects a WMFBatch")
    elif kind in ("bpr", "lightgcn"):
        if not isinstance(batch, PairBatch):
            raise TypeError(f"{kind} expects a PairBatch")
    else:
        raise ValueError(f"unknown model kind {kind!r}")


def _wmf_terms(P, Q, batch, l2):
    pu = P[batch.users]
    qi = Q[batch.items]
    e = np.einsum("nd,nd->n", pu, qi) - batch.targets
    coef = (2.0 * batch.weights * e)[:, None]
    gu_rows = coef * qi + (2.0 * l2) * pu
    gi_rows = coef * pu + (2.0 * l2) * qi
    loss = float(np.dot(batch.weights, e * e)) + l2 * (
        float(np.einsum("nd,nd->", pu, pu)) + float(np.einsum("nd,nd->", qi, qi))
    )
    return loss, gu_rows, gi_rows


def _pair_terms(P, Q, batch, l2):
    pu = P[batch.users]
    qi = Q[batch.pos_items]
    qj = Q[batch.neg_items]
    x = qi - qj
    s = np.einsum("nd,nd->n", pu, x)
    g = (expit(s) - 1.0)[:, None]
    gu_rows = g * x + (2.0 * l2) * pu
    gi_rows = g * pu + (2.0 * l2) * qi
    gj_rows = -g * pu + (2.0 * l2) * qj
    loss = float(np.logaddexp(0.0, -s).sum()) + l2 * (
        float(np.einsum("nd,nd->", pu, pu))
        + float(np.einsum("nd,nd->", qi, qi))
        + float(np.einsum("nd,nd->", qj, qj))
    )
    return loss, gu_rows, gi_rows, gj_rows


def loss_grad(kind, params, batch, adjacency=None, l2_reg=1e-4, layers=2):
    """Batch loss and its exact gradient over the full embedding tables.

    The batch loss is the sum of per-row (WMF) or per-triple (BPR/LightGCN)
    losses, each carrying an l2 term on the embedding rows it touches; rows
    touched several times are regularized once per occurrence. LightGCN
    evaluates the pairwise loss on propagated embeddings and pulls the
    gradient back through the (symmetric) propagation operator; its l2 acts
    on the raw table.

    Returns:
        (loss, grad_user, grad_item) with grads shaped like the tables.
    """
    kind = kind.lower()
    _check_batch(kind, batch)
    P, Q = params.user_vecs, params.item_vecs
    l2 = l2_reg
    gu = np.zeros_like(P)
    gi = np.zeros_like(Q)
    if len(batch) == 0:
        return 0.0, gu, gi

    if kind == "wmf":
        loss, gu_rows, gi_rows = _wmf_terms(P, Q, batch, l2)
        _scatter_add(gu, batch.users, gu_rows)
        _scatter_add(gi, batch.items, gi_rows)
        return loss, gu, gi

    if kind == "bpr":
        loss, gu_rows, gi_rows, gj_rows = _pair_terms(P, Q, batch, l2)
        _scatter_add(gu, batch.users, gu_rows)
        _scatter_add(gi, batch.pos_items, gi_rows)
        _scatter_add(gi, batch.neg_items, gj_rows)
        return loss, gu, gi

    if adjacency is None:
        raise ValueError("lightgcn requires the normalized adjacency")
    Up, Vp = propagate(adjacency, P, Q, layers)
    loss, gu_rows, gi_rows, gj_rows = _pair_terms(Up, Vp, batch, 0.0)
    gup = np.zeros_like(P)
    gip = np.zeros_like(Q)
    _scatter_add(gup, batch.users, gu_rows)
    _scatter_add(gip, batch.pos_items, gi_rows)
    _scatter_add(gip, batch.neg_items, gj_rows)
    gu, gi = propagate(adjacency, gup, gip, layers)
    pu = P[batch.users]
    qi = Q[batch.pos_items]
    qj = Q[batch.neg_items]
    _scatter_add(gu, batch.users, (2.0 * l2) * pu)
    _scatter_add(gi, batch.pos_items, (2.0 * l2) * qi)
    _scatter_add(gi, batch.neg_items, (2.0 * l2) * qj)
    loss += l2 * (
        float(np.einsum("nd,nd->", pu, pu))
        + float(np.einsum("nd,nd->", qi, qi))
        + float(np.einsum("nd,nd->", qj, qj))
    )
    return loss, gu, gi


def model_loss_grad(model, batch):
    """loss_grad with the model's own hyper-parameters applied."""
    return loss_grad(
        model.kind,
        model.params,
        batch,
        model.adjacency,
        l2_reg=model.hyper.l2_reg,
        layers=model.hyper.lightgcn_layers,
    )


@dataclass(frozen=True, eq=False)
class ParamSubset:
    """A slice of the parameter space: selected user rows + item rows."""

    user_idx: np.ndarray
    item_idx: np.ndarray
    dim: int

    @property
    def size(self):
        return (len(self.user_idx) + len(self.item_idx)) * self.dim

    def pack(self, user_mat, item_mat):
        return np.concatenate(
            [user_mat[self.user_idx].ravel(), item_mat[self.item_idx].ravel()]
        )

    def embed(self, v, num_users, num_items):
        nu_part = len(self.user_idx) * self.dim
        vu = np.zeros((num_users, self.dim))
        vi = np.zeros((num_items, self.dim))
        vu[self.user_idx] = v[:nu_part].reshape(len(self.user_idx), self.dim)
        vi[self.item_idx] = v[nu_part:].reshape(len(self.item_idx), self.dim)
        return vu, vi

    def apply_delta(self, params, delta):
        vu, vi = self.embed(delta, params.user_vecs.shape[0], params.item_vecs.shape[0])
        params.user_vecs += vu
        params.item_vecs += vi


def full_subset(params):
    return ParamSubset(
        np.arange(params.user_vecs.shape[0]),
        np.arange(params.item_vecs.shape[0]),
        params.dim,
    )


def hessian_vector_product(
    kind, params, batch, v, damping=0.0, subset=None, adjacency=None, l2_reg=1e-4, layers=2
):
    """(H + damping*I) v for the batch loss restricted to a parameter subset.

    The restriction is exact: v is embedded into the full space with zeros,
    multiplied by the full Hessian, and projected back, which reproduces the
    sub-Hessian block H[subset, subset].

    Args:
        kind: model kind.
        params: EmbeddingTable at which the Hessian is taken.
        batch: WMFBatch or PairBatch defining the loss.
        v: flat vector over the subset.
        damping: ridge term added to the diagonal.
        subset: ParamSubset; None means all parameters.
        adjacency: required for lightgcn.
        l2_reg, layers: loss hyper-parameters, as in loss_grad.

    Returns:
        flat vector of the same length as v.
    """
    kind = kind.lower()
    _check_batch(kind, batch)
    P, Q = params.user_vecs, params.item_vecs
    if subset is None:
        subset = full_subset(params)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (subset.size,):
        raise ValueError(f"vector length {v.shape} does not match subset size {subset.size}")
    l2 = l2_reg
    Vu, Vi = subset.embed(v, P.shape[0], Q.shape[0])
    hu = np.zeros_like(P)
    hi = np.zeros_like(Q)

    if len(batch) == 0:
        return damping * v

    if kind == "wmf":
        pu = P[batch.users]
        qi = Q[batch.items]
        vpu = Vu[batch.users]
        vqi = Vi[batch.items]
        e = np.einsum("nd,nd->n", pu, qi) - batch.targets
        ds = np.einsum("nd,nd->n", vpu, qi) + np.einsum("nd,nd->n", pu, vqi)
        cw = (2.0 * batch.weights)[:, None]
        hu_rows = cw * (ds[:, None] * qi + e[:, None] * vqi) + (2.0 * l2) * vpu
        hi_rows = cw * (ds[:, None] * pu + e[:, None] * vpu) + (2.0 * l2) * vqi
        _scatter_add(hu, batch.users, hu_rows)
        _scatter_add(hi, batch.items, hi_rows)
        return subset.pack(hu, hi) + damping * v

    def pair_hvp_rows(Pb, Qb, Vub, Vib, reg):
        pu = Pb[batch.users]
        qi = Qb[batch.pos_items]
        qj = Qb[batch.neg_items]
        vpu = Vub[batch.users]
        vqi = Vib[batch.pos_items]
        vqj = Vib[batch.neg_items]
        x = qi - qj
        dx = vqi - vqj
        s = np.einsum("nd,nd->n", pu, x)
        sig = expit(s)
        g = (sig - 1.0)[:, None]
        gp = (sig * (1.0 - sig))[:, None]
        ds = (np.einsum("nd,nd->n", vpu, x) + np.einsum("nd,nd->n", pu, dx))[:, None]
        hu_rows = gp * ds * x + g * dx + (2.0 * reg) * vpu
        hi_rows = gp * ds * pu + g * vpu + (2.0 * reg) * vqi
        hj_rows = -gp * ds * pu - g * vpu + (2.0 * reg) * vqj
        return hu_rows, hi_rows, hj_rows

    if kind == "bpr":
        hu_rows, hi_rows, hj_rows = pair_hvp_rows(P, Q, Vu, Vi, l2)
        _scatter_add(hu, batch.users, hu_rows)
        _scatter_add(hi, batch.pos_items, hi_rows)
        _scatter_add(hi, batch.neg_items, hj_rows)
        return subset.pack(hu, hi) + damping * v

    if adjacency is None:
        raise ValueError("lightgcn requires the normalized adjacency")
    Up, Vp = propagate(adjacency, P, Q, layers)
    Vup, Vip = propagate(adjacency, Vu, Vi, layers)
    hu_rows, hi_rows, hj_rows = pair_hvp_rows(Up, Vp, Vup, Vip, 0.0)
    hup = np.zeros_like(P)
    hip = np.zeros_like(Q)
    _scatter_add(hup, batch.users, hu_rows)
    _scatter_add(hip, batch.pos_items, hi_rows)
    _scatter_add(hip, batch.neg_items, hj_rows)
    hu, hi = propagate(adjacency, hup, hip, layers)
    _scatter_add(hu, batch.users, (2.0 * l2) * Vu[batch.users])
    _scatter_add(hi, batch.pos_items, (2.0 * l2) * Vi[batch.pos_items])
    _scatter_add(hi, batch.neg_items, (2.0 * l2) * Vi[batch.neg_items])
    return subset.pack(hu, hi) + damping * v


def _als_epoch_wmf(P, Q, train, hyper):
    """One alternating exact minimization pass over the dense weighted grid.

    Solves each user row against all items (and vice versa) in closed form,
    so repeated passes reach true stationarity of the same full-grid loss
    that loss_grad evaluates: per-cell quadratic terms plus per-cell l2 on
    both endpoint rows (hence the ni- and nu-scaled ridge terms).

    Returns (loss after the pass, max absolute parameter change).
    """
    l2 = hyper.l2_reg
    wneg = hyper.wmf_negative_weight
    nu, ni = train.num_users, train.num_items
    d = P.shape[1]
    T = train.positives_matrix.astype(np.float64)
    W = wneg + (1.0 - wneg) * T
    delta = 0.0
    for u in range(nu):
        wu = W[u]
        A = (Q * wu[:, None]).T @ Q + (l2 * ni) * np.eye(d)
        b = (wu * T[u]) @ Q
        new = np.linalg.solve(A, b)
        delta = max(delta, float(np.abs(new - P[u]).max()))
        P[u] = new
    for i in range(ni):
        wi = W[:, i]
        A = (P * wi[:, None]).T @ P + (l2 * nu) * np.eye(d)
        b = (wi * T[:, i]) @ P
        new = np.linalg.solve(A, b)
        delta = max(delta, float(np.abs(new - Q[i]).max()))
        Q[i] = new
    resid = P @ Q.T - T
    loss = float((W * resid**2).sum())
    loss += l2 * ni * float(np.einsum("ud,ud->", P, P))
    loss += l2 * nu * float(np.einsum("id,id->", Q, Q))
    return loss, delta


def _sgd_epoch_wmf(P, Q, train, order, negs, hyper):
    lr = hyper.learning_rate
    l2 = hyper.l2_reg
    wneg = hyper.wmf_negative_weight
    total = 0.0
    for start in range(0, len(order), hyper.batch_size):
        b = order[start : start + hyper.batch_size]
        nb = negs[b]
        nb = nb[nb >= 0]
        reps = (negs[b] >= 0).sum(axis=1)
        u = np.concatenate([train.users[b], np.repeat(train.users[b], reps)])
        i = np.concatenate([train.items[b], nb])
        npos = len(b)
        t = np.concatenate([np.ones(npos), np.zeros(len(nb))])
        w = np.concatenate([np.ones(npos), np.full(len(nb), wneg)])
        batch = WMFBatch(u, i, t, w)
        loss, gu_rows, gi_rows = _wmf_terms(P, Q, batch, l2)
        _scatter_add(P, u, -lr * gu_rows)
        _scatter_add(Q, i, -lr * gi_rows)
        total += loss
    return total


def _sgd_epoch_pairs(P, Q, train, order, negs, hyper, adjacency, kind):
    lr = hyper.learning_rate
    l2 = hyper.l2_reg
    layers = hyper.lightgcn_layers
    total = 0.0
    for start in range(0, len(order), hyper.batch_size):
        b = order[start : start + hyper.batch_size]
        nb = negs[b]
        keep = nb >= 0
        reps = keep.sum(axis=1)
        u = np.repeat(train.users[b], reps)
        i = np.repeat(train.items[b], reps)
        j = nb[keep]
        if len(u) == 0:
            continue
        if kind == "bpr":
            batch = PairBatch(u, i, j)
            loss, gu_rows, gi_rows, gj_rows = _pair_terms(P, Q, batch, l2)
            _scatter_add(P, u, -lr * gu_rows)
            _scatter_add(Q, i, -lr * gi_rows)
            _scatter_add(Q, j, -lr * gj_rows)
        else:
            Up, Vp = propagate(adjacency, P, Q, layers)
            batch = PairBatch(u, i, j)
            loss, gu_rows, gi_rows, gj_rows = _pair_terms(Up, Vp, batch, 0.0)
            gup = np.zeros_like(P)
            gip = np.zeros_like(Q)
            _scatter_add(gup, u, gu_rows)
            _scatter_add(gip, i, gi_rows)
            _scatter_add(gip, j, gj_rows)
            gu, gi = propagate(adjacency, gup, gip, layers)
            _scatter_add(gu, u, (2.0 * l2) * P[u])
            _scatter_add(gi, i, (2.0 * l2) * Q[i])
            _scatter_add(gi, j, (2.0 * l2) * Q[j])
            loss += l2 * (
                float(np.einsum("nd,nd->", P[u], P[u]))
                + float(np.einsum("nd,nd->", Q[i], Q[i]))
                + float(np.einsum("nd,nd->", Q[j], Q[j]))
            )
            P -= lr * gu
            Q -= lr * gi
        total += loss
    return total


def train(kind, train_set, valid, hyper, seed, init_params=None):
    """Fit one model by seeded mini-batch SGD with NDCG early stopping.

    Args:
        kind: "wmf", "bpr" or "lightgcn".
        train_set: training InteractionSet.
        valid: validation InteractionSet, or None to disable early stopping
            (the final-epoch parameters are then returned).
        hyper: Hyperparams.
        seed: controls initialization, batch order and per-epoch negatives.
        init_params: optional EmbeddingTable to warm-start from instead of
            the seeded random initialization.

    Returns:
        (TrainedModel, TrainLog). The model carries the best-validation
        parameters when a validation set is given.

    Raises:
        TrainingError: non-finite loss or parameters, naming the epoch.
    """
    kind = kind.lower()
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    from . import evaluation

    nu, ni, d = train_set.num_users, train_set.num_items, hyper.embedding_dim
    if init_params is not None:
        if init_params.user_vecs.shape != (nu, d) or init_params.item_vecs.shape != (ni, d):
            raise ValueError("init_params shapes do not match the dataset and dim")
        P = init_params.user_vecs.copy()
        Q = init_params.item_vecs.copy()
    else:
        rng = derive_rng(seed, _TAG_INIT)
        P = rng.normal(0.0, INIT_STD, size=(nu, d))
        Q = rng.normal(0.0, INIT_STD, size=(ni, d))
    adjacency = normalized_adjacency(train_set) if kind == "lightgcn" else None
    shuffle_rng = derive_rng(seed, _TAG_SHUFFLE)

    dense = kind == "wmf" and hyper.wmf_dense
    n_rows = len(train_set)

    best_val = -np.inf
    best = (P.copy(), Q.copy())
    bad = 0
    stop_epoch = 0
    early = False
    history = []
    t0 = time.perf_counter()

    converged = False
    for epoch in range(1, hyper.max_epochs + 1):
        stop_epoch = epoch
        if dense:
            epoch_loss, step = _als_epoch_wmf(P, Q, train_set, hyper)
            converged = step < 1e-10
        else:
            order = shuffle_rng.permutation(n_rows)
            tbl = sample_negatives(
                train_set,
                hyper.negatives_per_positive,
                derive_seed(seed, _TAG_NEG, epoch),
            )
            negs = tbl.negatives
            if kind == "wmf":
                epoch_loss = _sgd_epoch_wmf(P, Q, train_set, order, negs, hyper)
            else:
                epoch_loss = _sgd_epoch_pairs(P, Q, train_set, order, negs, hyper, adjacency, kind)
        if not np.isfinite(epoch_loss) or not np.isfinite(P).all() or not np.isfinite(Q).all():
            raise TrainingError(f"training diverged at epoch {epoch}")

        if valid is not None:
            view = TrainedModel(kind, EmbeddingTable(P, Q), hyper, train_set, adjacency)
            vals = evaluation.per_user_ndcg(view, valid, 20)[1]
            v = float(vals.mean()) if len(vals) else 0.0
            history.append(v)
            if v > best_val:
                best_val = v
                best = (P.copy(), Q.copy())
                bad = 0
            else:
                bad += 1
                if bad >= hyper.patience:
                    early = True
                    break
        if converged:
            break

    if valid is None:
        best = (P, Q)
    wall = time.perf_counter() - t0
    model = TrainedModel(kind, EmbeddingTable(*best), hyper, train_set, adjacency)
    log = TrainLog(tuple(history), stop_epoch, wall, early)
    return model, log


def validate(model, valid, k=20):
    """Validation NDCG at k; delegates to the evaluation module."""
    from . import evaluation

    return evaluation.ndcg_at_k(model, valid, k)


def save_checkpoint(model, path):
    """Write a versioned embedding checkpoint (kind + both tables)."""
    np.savez(
        path,
        version=np.int64(1),
        kind=np.array(model.kind),
        user_vecs=model.params.user_vecs,
        item_vecs=model.params.item_vecs,
    )


def load_checkpoint(path):
    """Read a checkpoint back as (kind, EmbeddingTable)."""
    with np.load(path, allow_pickle=False) as data:
        if int(data["version"]) != 1:
            raise ValueError("unsupported checkpoint version")
        kind = str(data["kind"])
        table = EmbeddingTable(data["user_vecs"].copy(), data["item_vecs"].copy())
    return kind, table
