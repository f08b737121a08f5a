"""Synthetic datasets with planted structure, for tests and demos."""

from __future__ import annotations

import numpy as np

from .catalog import BehaviorSequence, Catalog, Dataset


def _sequence(user, items):
    return BehaviorSequence(user=user, items=items, timestamps=[1000 + 10 * t for t in range(len(items))],
                            user_key=f"u{user:04d}")


def block_dataset(n_users: int = 60, n_blocks: int = 2, block_size: int = 10, length: int = 8,
                  seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Users of block ``b`` only interact with items ``[b*block_size, (b+1)*block_size)``."""
    rng = np.random.default_rng(seed)
    n_items = n_blocks * block_size
    catalog = Catalog([f"block {i // block_size} item {i}" for i in range(n_items)],
                      [f"i{i:04d}" for i in range(n_items)])
    blocks = np.arange(n_users) % n_blocks
    seqs = []
    for u in range(n_users):
        items = rng.choice(block_size, size=length, replace=False) + blocks[u] * block_size
        seqs.append(_sequence(u, items.tolist()))
    return Dataset(catalog, seqs), blocks


def segment_dataset(n_users: int = 200, seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Two user segments over 100 items, each predictable by a different tool family.

    Segment 0 ("sequential"): items 0-63 carry a fixed successor permutation.
    Each user history is made of ``(x, succ(x))`` pairs over random ``x``, and
    the held-out item is ``succ`` of the last one. Only transition structure
    identifies the target; the user's item set is otherwise random.

    Segment 1 ("collaborative"): items 64-99 form two groups, each with 10
    body items and 8 head items. A user opens with a head item, consumes the
    whole body of their group in random order, and the held-out item is
    another head of the same group. Head items never follow another item in
    any training prefix, so transition counts cannot reach them, while
    co-occurrence with the group body identifies them.
    """
    rng = np.random.default_rng(seed)
    n_items = 100
    pool = 64
    succ = np.empty(pool, dtype=np.int64)
    cycle = rng.permutation(pool)
    succ[cycle] = np.roll(cycle, -1)

    groups = []
    for g in range(2):
        base = pool + 18 * g
        groups.append((np.arange(base, base + 10), np.arange(base + 10, base + 18)))

    titles = []
    for i in range(n_items):
        if i < pool:
            titles.append(f"pantry staple {i}")
        else:
            g = (i - pool) // 18
            titles.append(f"group {g} specialty {i}")
    catalog = Catalog(titles, [f"i{i:03d}" for i in range(n_items)])

    segments = np.arange(n_users) % 2
    seqs = []
    for u in range(n_users):
        if segments[u] == 0:
            while True:
                xs = rng.choice(pool, size=6, replace=False)
                items = []
                for x in xs[:5]:
                    items += [int(x), int(succ[x])]
                items += [int(xs[5]), int(succ[xs[5]])]
                if len(set(items)) == len(items):
                    break
        else:
            body, heads = groups[int(rng.integers(2))]
            h = rng.choice(heads, size=2, replace=False)
            items = [int(h[0])] + rng.permutation(body).tolist() + [int(h[1])]
        seqs.append(_sequence(u, items))
    return Dataset(catalog, seqs), segments
