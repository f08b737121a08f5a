"""Full-ranking recommendation tools.

Every tool maps ``(user, history)`` to one score per catalog item. Three
lightweight built-ins cover the collaborative (MF), sequential (first-order
transitions) and graph (two-hop co-visitation) families; ``ImportedScores``
wraps score matrices produced by any external model.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .artifacts import read_container, write_container
from .catalog import BehaviorSequence, Catalog, SplitConfig, split_views

logger = logging.getLogger(__name__)

SENTINEL = -np.inf


class TrainingError(RuntimeError):
    pass


@dataclass
class ScoreVector:
    tool: int
    user: int
    scores: np.ndarray
    excluded: np.ndarray = None
    fallback: bool = False

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if np.isnan(self.scores).any() or np.isposinf(self.scores).any():
            raise ValueError("scores must be finite (-inf allowed as the seen-item sentinel)")
        if self.excluded is None:
            self.excluded = np.isneginf(self.scores)
        else:
            self.excluded = np.asarray(self.excluded, dtype=bool)

    def __len__(self) -> int:
        return len(self.scores)


def normalize_scores(v: ScoreVector) -> ScoreVector:
    """Min-max scale non-sentinel entries into [0, 1]; sentinels become 0, constants 0.5."""
    keep = ~v.excluded & np.isfinite(v.scores)
    out = np.zeros_like(v.scores)
    if keep.any():
        vals = v.scores[keep]
        lo, hi = vals.min(), vals.max()
        out[keep] = 0.5 if hi == lo else (vals - lo) / (hi - lo)
    return ScoreVector(v.tool, v.user, out, excluded=v.excluded.copy(), fallback=v.fallback)


def top_k(v: ScoreVector | np.ndarray, k: int) -> list[int]:
    """Items by descending score, ties by ascending id; excluded items go last."""
    if isinstance(v, ScoreVector):
        scores, excluded = v.scores, v.excluded
    else:
        scores = np.asarray(v, dtype=np.float64)
        excluded = np.isneginf(scores)
    if k > len(scores):
        raise ValueError(f"k={k} exceeds catalog size {len(scores)}")
    ids = np.arange(len(scores))
    order = np.lexsort((ids, -scores, excluded))
    return order[:k].tolist()


def rank_of(v: ScoreVector, item: int) -> int:
    """1-based position of ``item`` in the total order used by :func:`top_k`."""
    s, ex = v.scores, v.excluded
    si, ei = s[item], ex[item]
    ids = np.arange(len(s))
    ahead = (~ex & ei) | ((ex == ei) & ((s > si) | ((s == si) & (ids < item))))
    return int(ahead.sum()) + 1


class ToolModel:
    variant = "base"

    def __init__(self, n_items: int, label: str = "", seed: int = 0,
                 exclude_seen: bool = True, hyperparams: dict | None = None):
        self.n_items = int(n_items)
        self.label = label or self.variant
        self.seed = int(seed)
        self.exclude_seen = exclude_seen
        self.hyperparams = dict(hyperparams or {})

    def _score(self, user: int, history: Sequence[int]) -> tuple[np.ndarray, bool]:
        raise NotImplementedError

    def predict(self, user: int, history: Sequence[int], tool: int = 0) -> ScoreVector:
        if len(history) == 0:
            raise ValueError("history must be non-empty")
        scores, fallback = self._score(user, history)
        scores = np.array(scores, dtype=np.float64)
        if self.exclude_seen:
            scores[np.asarray(history, dtype=np.int64)] = SENTINEL
        return ScoreVector(tool, user, scores, fallback=fallback)

    # checkpoint helpers
    def _state(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    @classmethod
    def _from_state(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "ToolModel":
        raise NotImplementedError

    def _meta(self) -> dict:
        return {
            "variant": self.variant,
            "label": self.label,
            "seed": self.seed,
            "n_items": self.n_items,
            "exclude_seen": self.exclude_seen,
            "hyperparams": self.hyperparams,
        }

    @staticmethod
    def _kwargs(meta: dict) -> dict:
        return dict(n_items=meta["n_items"], label=meta["label"], seed=meta["seed"],
                    exclude_seen=meta["exclude_seen"], hyperparams=meta["hyperparams"])


def predict(model: ToolModel, user: int, history: Sequence[int], tool: int = 0) -> ScoreVector:
    return model.predict(user, history, tool)


def _popularity(prefixes: Sequence[Sequence[int]], n_items: int) -> np.ndarray:
    flat = np.fromiter((i for p in prefixes for i in p), dtype=np.int64)
    return np.bincount(flat, minlength=n_items).astype(np.float64)


def _interaction_matrix(prefixes, n_items: int) -> sp.csr_matrix:
    rows = np.repeat(np.arange(len(prefixes)), [len(p) for p in prefixes])
    cols = np.fromiter((i for p in prefixes for i in p), dtype=np.int64, count=len(rows))
    mat = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(prefixes), n_items))
    mat.data[:] = 1.0  # repeat purchases collapse to a binary edge
    return mat


# --------------------------------------------------------------------------
# MF: pairwise hinge with sampled negatives


class MatrixFactorization(ToolModel):
    variant = "mf"

    def __init__(self, users, user_factors, item_factors, popularity, loss_history=(), **kw):
        super().__init__(**kw)
        self.users = np.asarray(users, dtype=np.int64)
        self.user_factors = np.asarray(user_factors, dtype=np.float64)
        self.item_factors = np.asarray(item_factors, dtype=np.float64)
        self.popularity = np.asarray(popularity, dtype=np.float64)
        self.loss_history = list(loss_history)

    def _row(self, user: int) -> int | None:
        pos = np.searchsorted(self.users, user)
        if pos < len(self.users) and self.users[pos] == user:
            return int(pos)
        return None

    def _score(self, user, history):
        row = self._row(user)
        if row is None:
            logger.debug("mf: unknown user %s, falling back to popularity", user)
            return self.popularity.copy(), True
        return self.item_factors @ self.user_factors[row], False

    def _state(self):
        return {"users": self.users, "user_factors": self.user_factors,
                "item_factors": self.item_factors, "popularity": self.popularity,
                "loss_history": np.asarray(self.loss_history, dtype=np.float64)}

    @classmethod
    def _from_state(cls, meta, arrays):
        return cls(arrays["users"], arrays["user_factors"], arrays["item_factors"],
                   arrays["popularity"], arrays["loss_history"].tolist(), **cls._kwargs(meta))


def _sample_negatives(rng, pos_users, pos_keys, n_items, n_neg):
    """Uniform negatives outside each user's training set (rejection sampling).

    ``pos_keys`` is the sorted array of ``user * n_items + item`` positives.
    """
    total = len(pos_users) * n_neg
    users = np.repeat(pos_users, n_neg)
    neg = rng.integers(0, n_items, size=total)
    for _ in range(100):
        bad = np.isin(users * n_items + neg, pos_keys)
        if not bad.any():
            break
        neg[bad] = rng.integers(0, n_items, size=int(bad.sum()))
    return neg.reshape(len(pos_users), n_neg)


def _mf_loss_grad(P, Q, u, i, j, margin, reg):
    pu = P[u]
    diff = np.einsum("nd,nd->n", pu, Q[i] - Q[j])
    slack = margin - diff
    active = slack > 0
    n = len(u)
    loss = slack[active].sum() / n + 0.5 * reg * ((P ** 2).sum() + (Q ** 2).sum())
    gP = reg * P
    gQ = reg * Q
    a = active.astype(np.float64)[:, None] / n
    np.add.at(gP, u, -a * (Q[i] - Q[j]))
    np.add.at(gQ, i, -a * pu)
    np.add.at(gQ, j, a * pu)
    return loss, gP, gQ


def train_mf(sequences, split, n_items, *, dim=16, epochs=150, lr=1.0, reg=1e-4, margin=1.0,
             n_neg=1, seed=0, label="M", exclude_seen=True):
    """Batch gradient descent with backtracking on the pairwise hinge objective.

    Negatives are drawn once from the seed, so the objective is fixed and the
    accepted per-epoch losses form a non-increasing sequence.
    """
    rng = np.random.default_rng(seed)
    seqs = sorted(sequences, key=lambda s: s.user)
    prefixes = [split_views(s, split).train for s in seqs]
    users = np.array([s.user for s in seqs], dtype=np.int64)
    pairs = sorted({(r, it) for r, p in enumerate(prefixes) for it in p})
    if not pairs:
        raise TrainingError("no training interactions")
    u = np.array([p[0] for p in pairs], dtype=np.int64)
    i = np.array([p[1] for p in pairs], dtype=np.int64)
    neg = _sample_negatives(rng, u, u * n_items + i, n_items, n_neg)
    u_rep, i_rep, j = np.repeat(u, n_neg), np.repeat(i, n_neg), neg.ravel()

    P = rng.normal(0.0, 0.1, size=(len(users), dim))
    Q = rng.normal(0.0, 0.1, size=(n_items, dim))
    loss, gP, gQ = _mf_loss_grad(P, Q, u_rep, i_rep, j, margin, reg)
    history = [float(loss)]
    step = lr
    for epoch in range(epochs):
        if not np.isfinite(loss):
            raise TrainingError(f"mf: non-finite loss at epoch {epoch}")
        for _ in range(30):
            P2, Q2 = P - step * gP, Q - step * gQ
            loss2, gP2, gQ2 = _mf_loss_grad(P2, Q2, u_rep, i_rep, j, margin, reg)
            if not np.isfinite(loss2):
                raise TrainingError(f"mf: non-finite loss at epoch {epoch + 1}")
            if loss2 <= loss:
                break
            step *= 0.5
        else:
            break  # no descent step found: converged
        P, Q, loss, gP, gQ = P2, Q2, loss2, gP2, gQ2
        history.append(float(loss))
        step *= 1.2
    pop = _popularity(prefixes, n_items)
    return MatrixFactorization(
        users, P, Q, pop, history, n_items=n_items, label=label, seed=seed, exclude_seen=exclude_seen,
        hyperparams=dict(dim=dim, epochs=epochs, lr=lr, reg=reg, margin=margin, n_neg=n_neg),
    )


# --------------------------------------------------------------------------
# Sequential: first-order transitions with recency smoothing


class SequentialTransition(ToolModel):
    variant = "sequential"

    def __init__(self, transitions: sp.csr_matrix, popularity, decay=0.9, lookback=10, **kw):
        super().__init__(**kw)
        self.transitions = sp.csr_matrix(transitions)
        self.popularity = np.asarray(popularity, dtype=np.float64)
        self.decay = float(decay)
        self.lookback = int(lookback)
        self._out_degree = np.diff(self.transitions.indptr)

    def _score(self, user, history):
        if self._out_degree[history[-1]] == 0:
            return self.popularity.copy(), True
        recent = list(history[-self.lookback:])[::-1]
        weights = self.decay ** np.arange(len(recent))
        x = np.zeros(self.n_items)
        np.add.at(x, recent, weights)
        return np.asarray(self.transitions.T @ x).ravel(), False

    def _state(self):
        t = self.transitions
        return {"indptr": t.indptr.astype(np.int64), "indices": t.indices.astype(np.int64),
                "data": t.data, "popularity": self.popularity}

    @classmethod
    def _from_state(cls, meta, arrays):
        n = meta["n_items"]
        t = sp.csr_matrix((arrays["data"], arrays["indices"], arrays["indptr"]), shape=(n, n))
        hp = meta["hyperparams"]
        return cls(t, arrays["popularity"], hp["decay"], hp["lookback"], **cls._kwargs(meta))


def train_sequential(sequences, split, n_items, *, decay=0.9, lookback=10, seed=0, label="S",
                     exclude_seen=True):
    prefixes = [split_views(s, split).train for s in sorted(sequences, key=lambda s: s.user)]
    src = np.fromiter((a for p in prefixes for a in p[:-1]), dtype=np.int64)
    dst = np.fromiter((b for p in prefixes for b in p[1:]), dtype=np.int64)
    counts = sp.csr_matrix((np.ones(len(src)), (src, dst)), shape=(n_items, n_items))
    counts.sum_duplicates()
    row_sum = np.asarray(counts.sum(axis=1)).ravel()
    inv = np.divide(1.0, row_sum, out=np.zeros_like(row_sum), where=row_sum > 0)
    trans = sp.csr_matrix(sp.diags(inv) @ counts)
    trans.eliminate_zeros()
    return SequentialTransition(
        trans, _popularity(prefixes, n_items), decay, lookback, n_items=n_items, label=label,
        seed=seed, exclude_seen=exclude_seen, hyperparams=dict(decay=decay, lookback=lookback),
    )


# --------------------------------------------------------------------------
# Graph: two-hop user-item co-visitation


class CoVisitationGraph(ToolModel):
    variant = "covisitation"

    def __init__(self, interactions: sp.csr_matrix, **kw):
        super().__init__(**kw)
        self.interactions = sp.csr_matrix(interactions)
        a = self.interactions
        deg_u = np.asarray(a.sum(axis=1)).ravel()
        inv_u = np.divide(1.0, deg_u, out=np.zeros_like(deg_u), where=deg_u > 0)
        # item -> user -> item walk, each user split evenly over its items
        self._covisit = sp.csr_matrix(a.T @ sp.diags(inv_u) @ a)

    def _score(self, user, history):
        x = np.zeros(self.n_items)
        x[np.unique(np.asarray(history, dtype=np.int64))] = 1.0
        return np.asarray(self._covisit.T @ x).ravel(), False

    def _state(self):
        a = self.interactions
        return {"indptr": a.indptr.astype(np.int64), "indices": a.indices.astype(np.int64),
                "data": a.data, "shape": np.asarray(a.shape, dtype=np.int64)}

    @classmethod
    def _from_state(cls, meta, arrays):
        a = sp.csr_matrix((arrays["data"], arrays["indices"], arrays["indptr"]),
                          shape=tuple(arrays["shape"]))
        return cls(a, **cls._kwargs(meta))


def train_covisitation(sequences, split, n_items, *, seed=0, label="G", exclude_seen=True):
    seqs = sorted(sequences, key=lambda s: s.user)
    prefixes = [split_views(s, split).train for s in seqs]
    a = _interaction_matrix(prefixes, n_items)
    return CoVisitationGraph(a, n_items=n_items, label=label, seed=seed, exclude_seen=exclude_seen)


# --------------------------------------------------------------------------
# Imported score matrices


class ImportedScores(ToolModel):
    variant = "imported"

    def __init__(self, users, scores, **kw):
        super().__init__(**kw)
        self.users = np.asarray(users, dtype=np.int64)
        self.scores = np.asarray(scores, dtype=np.float64)

    def _score(self, user, history):
        pos = np.searchsorted(self.users, user)
        if pos < len(self.users) and self.users[pos] == user:
            return self.scores[pos].copy(), False
        return np.zeros(self.n_items), True

    def _state(self):
        return {"users": self.users, "scores": self.scores}

    @classmethod
    def _from_state(cls, meta, arrays):
        return cls(arrays["users"], arrays["scores"], **cls._kwargs(meta))


def load_imported_scores(path, catalog: Catalog, sequences: Sequence[BehaviorSequence], *,
                         delimiter=",", label="X", exclude_seen=True) -> ImportedScores:
    """Read a ``user_id,item_id,score`` DSV or a ``scores`` container.

    DSV keys are external user/item keys; missing pairs score 0 and rows for
    unknown users or items are ignored. The binary form is a container of kind
    ``"scores"`` holding a float64 ``scores`` matrix (users x items) and
    ``meta.user_keys`` / ``meta.item_keys`` naming its rows and columns.
    """
    user_of = {s.user_key: s.user for s in sequences}
    users = sorted(user_of.values())
    row_of = {u: r for r, u in enumerate(users)}
    mat = np.zeros((len(users), len(catalog)))
    path = Path(path)
    with open(path, "rb") as fh:
        is_binary = fh.read(8) == b"TOOLRANK"
    if is_binary:
        meta, arrays = read_container(path, kind="scores")
        src = arrays["scores"]
        cols = np.array([catalog.lookup(k) if catalog.lookup(k) is not None else -1
                         for k in meta["item_keys"]])
        for r, key in enumerate(meta["user_keys"]):
            if key in user_of:
                ok = cols >= 0
                mat[row_of[user_of[key]], cols[ok]] = src[r, ok]
    else:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh, delimiter=delimiter)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["user_id", "item_id", "score"]:
                raise ValueError(f"{path}:1: expected header user_id,item_id,score")
            for row in reader:
                if not row:
                    continue
                if len(row) != 3:
                    raise ValueError(f"{path}:{reader.line_num}: expected 3 fields")
                uk, ik, score = row[0].strip(), row[1].strip(), float(row[2])
                item = catalog.lookup(ik)
                if uk in user_of and item is not None:
                    mat[row_of[user_of[uk]], item] = score
    if not np.isfinite(mat).all():
        raise ValueError(f"{path}: imported scores must be finite")
    return ImportedScores(users, mat, n_items=len(catalog), label=label, exclude_seen=exclude_seen)


def write_imported_scores(path, scores: np.ndarray, user_keys, item_keys) -> None:
    write_container(path, "scores", {"user_keys": list(user_keys), "item_keys": list(item_keys)},
                    {"scores": np.asarray(scores, dtype=np.float64)})


# --------------------------------------------------------------------------

VARIANTS = {
    "mf": MatrixFactorization,
    "sequential": SequentialTransition,
    "covisitation": CoVisitationGraph,
    "imported": ImportedScores,
}

_TRAINERS = {"mf": train_mf, "sequential": train_sequential, "covisitation": train_covisitation}


def train_tool(variant: str, sequences: Sequence[BehaviorSequence], split: SplitConfig,
               n_items: int, **hyperparams) -> ToolModel:
    """Train a built-in tool on the ``s[:-k]`` prefixes of ``sequences``."""
    if variant not in _TRAINERS:
        raise ValueError(f"unknown tool variant {variant!r}; expected one of {sorted(_TRAINERS)}")
    if not sequences:
        raise TrainingError("no training sequences")
    return _TRAINERS[variant](sequences, split, n_items, **hyperparams)


def save_tool(model: ToolModel, path, extra_meta: dict | None = None) -> None:
    """``extra_meta`` (run provenance such as config hashes) is stored alongside."""
    write_container(path, "tool", {**(extra_meta or {}), **model._meta()}, model._state())


def load_tool(path) -> ToolModel:
    meta, arrays = read_container(path, kind="tool")
    cls = VARIANTS.get(meta["variant"])
    if cls is None:
        raise ValueError(f"{path}: unknown tool variant {meta['variant']!r}")
    return cls._from_state(meta, arrays)
