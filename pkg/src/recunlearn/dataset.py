"""Rating-file ingestion, implicit-feedback preprocessing, splitting, negatives.

All randomness flows through numpy Generator objects derived from explicit
integer seeds, so every operation here is a pure function of (inputs, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class DatasetError(Exception):
    """Malformed rating files or degenerate preprocessing results."""


def derive_rng(seed, *key):
    """Build an independent Generator from a base seed and a purpose key.

    Args:
        seed: base integer seed.
        *key: extra non-negative integers naming the purpose (and e.g. the
            epoch or shard index), so distinct uses of one base seed get
            decorrelated streams.

    Returns:
        np.random.Generator backed by PCG64.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF] + [int(k) for k in key])
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed, *key):
    """Collapse (seed, key) to a single integer seed, for APIs that take one."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF] + [int(k) for k in key])
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFFFFFF)


@dataclass(frozen=True)
class RawRating:
    user: str
    item: str
    rating: int
    timestamp: int

    def __post_init__(self):
        if not self.user or not self.item:
            raise DatasetError("empty user or item id")
        if not 1 <= int(self.rating) <= 5:
            raise DatasetError(f"rating {self.rating} outside 1..5")


def _order_ids(ids):
    # External ids sort numerically when they all parse as integers,
    # lexicographically otherwise.
    ids = list(ids)
    try:
        keys = [(int(x), x) for x in ids]
    except (TypeError, ValueError):
        return sorted(ids)
    return [x for _, x in sorted(keys)]


@dataclass(eq=False)
class InteractionSet:
    """Deduplicated implicit interactions over a fixed dense index space.

    Subsets produced by the remove/restrict helpers share the parent's index
    space (num_users, num_items and the id maps stay intact), so embedding
    tables keep one shape across splits, shards and unlearning.
    """

    users: np.ndarray
    items: np.ndarray
    num_users: int
    num_items: int
    user_ids: tuple = ()
    item_ids: tuple = ()

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        if self.users.shape != self.items.shape or self.users.ndim != 1:
            raise DatasetError("users/items must be equal-length 1-d arrays")
        if len(self.users) and (
            self.users.min() < 0
            or self.users.max() >= self.num_users
            or self.items.min() < 0
            or self.items.max() >= self.num_items
        ):
            raise DatasetError("interaction index out of range")

    def __len__(self):
        return len(self.users)

    @cached_property
    def pairs(self):
        return np.column_stack([self.users, self.items])

    @cached_property
    def user_degrees(self):
        return np.bincount(self.users, minlength=self.num_users)

    @cached_property
    def item_degrees(self):
        return np.bincount(self.items, minlength=self.num_items)

    @cached_property
    def _user_csr(self):
        order = np.argsort(self.users, kind="stable")
        indptr = np.searchsorted(self.users[order], np.arange(self.num_users + 1))
        return order, indptr

    def items_of(self, user):
        """Item indices this user interacted with, in insertion order."""
        order, indptr = self._user_csr
        return self.items[order[indptr[user] : indptr[user + 1]]]

    def rows_of_users(self, user_set):
        """Positions of all interactions belonging to the given users."""
        mask = np.zeros(self.num_users, dtype=bool)
        mask[np.asarray(list(user_set), dtype=np.int64)] = True
        return np.flatnonzero(mask[self.users])

    @cached_property
    def positives_matrix(self):
        m = np.zeros((self.num_users, self.num_items), dtype=bool)
        m[self.users, self.items] = True
        return m

    def take(self, row_positions):
        return InteractionSet(
            self.users[row_positions],
            self.items[row_positions],
            self.num_users,
            self.num_items,
            self.user_ids,
            self.item_ids,
        )

    def remove_users(self, user_set):
        """Drop every interaction of the given users; index space unchanged."""
        if len(self) == 0:
            return self.take(np.array([], dtype=np.int64))
        mask = np.zeros(self.num_users, dtype=bool)
        users = np.asarray(list(user_set), dtype=np.int64)
        if len(users):
            mask[users] = True
        return self.take(np.flatnonzero(~mask[self.users]))

    def restrict_to_users(self, user_set):
        """Keep only interactions of the given users; index space unchanged."""
        mask = np.zeros(self.num_users, dtype=bool)
        users = np.asarray(list(user_set), dtype=np.int64)
        if len(users):
            mask[users] = True
        if len(self) == 0:
            return self.take(np.array([], dtype=np.int64))
        return self.take(np.flatnonzero(mask[self.users]))

    def has_duplicates(self):
        keys = self.users * self.num_items + self.items
        return len(np.unique(keys)) != len(keys)


@dataclass(frozen=True)
class SplitBundle:
    train: InteractionSet
    valid: InteractionSet
    test: InteractionSet
    seed: int


@dataclass(frozen=True)
class NegativeSampleTable:
    """Per-positive negative items, -1 padded when a user's catalog runs out."""

    negatives: np.ndarray
    k: int
    seed: int


def load_ratings(path):
    """Parse a tab-separated user/item/rating/timestamp file.

    Args:
        path: rating file in the 4-column layout.

    Returns:
        list of RawRating, file order preserved.

    Raises:
        DatasetError: malformed line, with its 1-based line number.
        OSError: unreadable file.
    """
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DatasetError(
                    f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}"
                )
            user, item, rating, ts = parts
            try:
                out.append(RawRating(user, item, int(rating), int(ts)))
            except (ValueError, DatasetError) as exc:
                raise DatasetError(f"line {lineno}: {exc}") from exc
    return out


def preprocess(raw, min_interactions=5):
    """Convert ratings to implicit positives and filter sparse entities.

    Duplicate (user, item) pairs collapse to one interaction (first
    occurrence wins). Users and items with fewer than `min_interactions`
    interactions are removed by repeated passes until a fixpoint, then dense
    indices are assigned in ascending external-id order.
    """
    if not raw:
        raise DatasetError("no ratings to preprocess")
    seen = set()
    pairs = []
    for r in raw:
        key = (r.user, r.item)
        if key not in seen:
            seen.add(key)
            pairs.append(key)

    while True:
        ucnt = {}
        icnt = {}
        for u, i in pairs:
            ucnt[u] = ucnt.get(u, 0) + 1
            icnt[i] = icnt.get(i, 0) + 1
        kept = [
            (u, i)
            for u, i in pairs
            if ucnt[u] >= min_interactions and icnt[i] >= min_interactions
        ]
        if len(kept) == len(pairs):
            break
        pairs = kept
    if not pairs:
        raise DatasetError("preprocessing filtered out every interaction")

    user_ids = _order_ids({u for u, _ in pairs})
    item_ids = _order_ids({i for _, i in pairs})
    uidx = {x: n for n, x in enumerate(user_ids)}
    iidx = {x: n for n, x in enumerate(item_ids)}
    users = np.array([uidx[u] for u, _ in pairs], dtype=np.int64)
    items = np.array([iidx[i] for _, i in pairs], dtype=np.int64)
    return InteractionSet(
        users, items, len(user_ids), len(item_ids), tuple(user_ids), tuple(item_ids)
    )


def apportion(n, fractions):
    """Largest-remainder split of n into len(fractions) integer parts."""
    raw = [n * f for f in fractions]
    sizes = [int(math.floor(x)) for x in raw]
    rem = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda j: (-(raw[j] - sizes[j]), j))
    for j in order[:rem]:
        sizes[j] += 1
    return sizes


def split(ds, fractions=(0.8, 0.1, 0.1), seed=0):
    """Random interaction-level split into train/valid/test.

    Sizes follow largest-remainder rounding of the fractions, assignment is a
    seeded uniform permutation, so the three parts partition the input.
    """
    if len(fractions) != 3:
        raise ValueError("expected exactly three fractions")
    if any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ValueError("fractions must be non-negative and sum to 1")
    rng = derive_rng(seed, 11)
    perm = rng.permutation(len(ds))
    n_train, n_valid, n_test = apportion(len(ds), fractions)
    return SplitBundle(
        train=ds.take(np.sort(perm[:n_train])),
        valid=ds.take(np.sort(perm[n_train : n_train + n_valid])),
        test=ds.take(np.sort(perm[n_train + n_valid :])),
        seed=seed,
    )


def sample_negatives(train, k=4, seed=0):
    """Draw k non-interacted items per training positive, without replacement.

    Args:
        train: InteractionSet whose positives define the exclusion sets.
        k: negatives per positive (>= 1).
        seed: integer seed; the table is a pure function of (train, k, seed).

    Returns:
        NegativeSampleTable with a (len(train), k) array, -1 padded for users
        whose non-interacted catalog is smaller than k.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(train)
    neg = np.full((n, k), -1, dtype=np.int64)
    if n == 0:
        return NegativeSampleTable(neg, k, seed)

    rng = derive_rng(seed, 13)
    posmat = train.positives_matrix
    deg = train.user_degrees
    avail = train.num_items - deg[train.users]

    short = avail < k
    full = ~short
    u_full = train.users[full]
    m = len(u_full)
    if m:
        cand = rng.integers(0, train.num_items, size=(m, k))
        for _ in range(10000):
            bad = posmat[u_full[:, None], cand]
            for j in range(1, k):
                for l in range(j):
                    bad[:, j] |= cand[:, j] == cand[:, l]
            nbad = int(bad.sum())
            if nbad == 0:
                break
            cand[bad] = rng.integers(0, train.num_items, size=nbad)
        else:
            raise RuntimeError("negative sampling failed to terminate")
        neg[full] = cand

    for row in np.flatnonzero(short):
        u = train.users[row]
        complement = np.flatnonzero(~posmat[u])
        neg[row, : len(complement)] = rng.permutation(complement)
    return NegativeSampleTable(neg, k, seed)
