"""Bipartite interaction graph, node importance, and unlearning-set selection.

Importance of a node x is its degree centrality times the mean degree of its
neighbors. Core sets take users from the top of that ranking, edge sets from
the bottom, random sets from a seeded shuffle; in every case whole users are
accumulated until their combined training interactions first reach the
requested fraction of the training set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import derive_rng


class SelectionError(Exception):
    pass


STRATEGIES = ("core", "random", "edge")


@dataclass(eq=False)
class BipartiteGraph:
    """Adjacency view of a training InteractionSet.

    user_adj[u] / item_adj[i] list the neighbor indices on the other side;
    degrees double as the centrality c(x).
    """

    user_adj: list
    item_adj: list
    user_degrees: np.ndarray
    item_degrees: np.ndarray

    @property
    def num_users(self):
        return len(self.user_adj)

    @property
    def num_items(self):
        return len(self.item_adj)


@dataclass(frozen=True)
class NodeImportance:
    side: str
    index: int
    centrality: int
    importance: float


@dataclass(frozen=True)
class UnlearnSet:
    strategy: str
    users: np.ndarray
    interactions: np.ndarray
    ratio: float


def build_graph(train):
    """Build the user-item bipartite graph of a non-empty training set."""
    if len(train) == 0:
        raise SelectionError("cannot build a graph from an empty training set")
    order = np.argsort(train.users, kind="stable")
    uptr = np.searchsorted(train.users[order], np.arange(train.num_users + 1))
    user_adj = [train.items[order[uptr[u] : uptr[u + 1]]] for u in range(train.num_users)]
    iorder = np.argsort(train.items, kind="stable")
    iptr = np.searchsorted(train.items[iorder], np.arange(train.num_items + 1))
    item_adj = [train.users[iorder[iptr[i] : iptr[i + 1]]] for i in range(train.num_items)]
    return BipartiteGraph(
        user_adj,
        item_adj,
        train.user_degrees.copy(),
        train.item_degrees.copy(),
    )


def importance(g, side, index):
    """Importance of one node: c(x) times the mean centrality of N(x).

    Degree-0 nodes get importance 0 by definition.
    """
    if side == "user":
        deg = int(g.user_degrees[index])
        nbrs = g.user_adj[index]
        nbr_deg = g.item_degrees
    elif side == "item":
        deg = int(g.item_degrees[index])
        nbrs = g.item_adj[index]
        nbr_deg = g.user_degrees
    else:
        raise ValueError(f"unknown side {side!r}")
    if deg == 0:
        return NodeImportance(side, index, 0, 0.0)
    val = deg * float(nbr_deg[nbrs].sum()) / deg
    return NodeImportance(side, index, deg, val)


def user_importances(g):
    """Vectorized importance over all user nodes (0 for degree-0 users)."""
    out = np.zeros(g.num_users, dtype=np.float64)
    for u in range(g.num_users):
        d = g.user_degrees[u]
        if d:
            out[u] = d * float(g.item_degrees[g.user_adj[u]].sum()) / d
    return out


def select_unlearn_set(g, train, strategy, ratio, seed, ratio_basis="interactions"):
    """Pick whole users whose data mass first reaches ratio * |basis|.

    Args:
        g: BipartiteGraph over `train`.
        train: the training InteractionSet.
        strategy: one of "core", "edge", "random".
        ratio: target fraction in [0, 1].
        seed: shuffle seed for the random strategy.
        ratio_basis: "interactions" accumulates training-interaction counts
            against ratio * |train|; "users" accumulates user counts against
            ratio * (number of trained users).

    Returns:
        UnlearnSet with sorted user indices and those users' training rows.

    Raises:
        SelectionError: ratio outside [0, 1], unknown strategy, or a target
            so large that no trained user would remain.
    """
    if not 0.0 <= ratio <= 1.0:
        raise SelectionError(f"ratio {ratio} outside [0, 1]")
    if strategy not in STRATEGIES:
        raise SelectionError(f"unknown strategy {strategy!r}")
    if ratio_basis not in ("interactions", "users"):
        raise SelectionError(f"unknown ratio_basis {ratio_basis!r}")

    trained = np.flatnonzero(train.user_degrees > 0)
    if ratio == 0.0:
        empty = np.array([], dtype=np.int64)
        return UnlearnSet(strategy, empty, np.empty((0, 2), dtype=np.int64), ratio)

    if strategy == "random":
        order = derive_rng(seed, 17).permutation(trained)
    else:
        scores = user_importances(g)[trained]
        sign = -1.0 if strategy == "core" else 1.0
        order = trained[np.lexsort((trained, sign * scores))]

    deg = train.user_degrees
    if ratio_basis == "interactions":
        target = ratio * len(train)
        masses = deg[order].astype(np.float64)
    else:
        target = ratio * len(trained)
        masses = np.ones(len(order), dtype=np.float64)

    cum = np.cumsum(masses)
    reached = np.flatnonzero(cum >= target - 1e-12)
    if len(reached) == 0:
        raise SelectionError("ratio target unreachable with available users")
    n_take = int(reached[0]) + 1
    if n_take >= len(trained):
        raise SelectionError("unlearn set would leave no trained users")
    users = np.sort(order[:n_take])
    rows = train.rows_of_users(users)
    return UnlearnSet(strategy, users, train.pairs[rows], float(ratio))
