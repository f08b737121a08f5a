"""Ranking metrics, LLM-rated vicinity DCG, run files and reports."""

from __future__ import annotations

import csv
import logging
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .artifacts import read_container, write_container
from .catalog import BehaviorSequence, Catalog, SplitConfig, split_views
from .llm import Gateway, GatewayError, ParseFailure, PromptKind, parse_rating

logger = logging.getLogger(__name__)


class EvaluationError(RuntimeError):
    pass


def recall_at_k(ranked: Sequence[int], targets, k: int) -> float:
    targets = set(targets)
    if not targets:
        raise ValueError("recall needs at least one target")
    return len(targets.intersection(ranked[:k])) / len(targets)


def ndcg_at_k(ranked: Sequence[int], targets, k: int) -> float:
    """Binary-relevance NDCG; the ideal places min(|targets|, k) hits first."""
    targets = set(targets)
    if not targets:
        raise ValueError("ndcg needs at least one target")
    dcg = sum(1.0 / np.log2(i + 2) for i, item in enumerate(ranked[:k]) if item in targets)
    idcg = sum(1.0 / np.log2(i + 2) for i in range(min(len(targets), k)))
    return float(dcg / idcg)


@dataclass(frozen=True)
class VdcgParams:
    l: int
    max_rating: int = 9
    p: int = 8

    def __post_init__(self):
        if self.l < 1:
            raise ValueError("l must be positive")

    def ideal(self) -> np.ndarray:
        """``[p, p/2, ..., p/2**(l-1)]``."""
        return self.p / 2.0 ** np.arange(self.l)


def _discount(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def vdcg_from_ratings(ratings: Sequence[float], params: VdcgParams, cap: bool = False) -> float:
    r = np.asarray(ratings, dtype=np.float64)[:params.l]
    value = float((r * _discount(len(r))).sum() / (params.ideal() * _discount(params.l)).sum())
    return min(value, 1.0) if cap else value


class VdcgRater:
    """Caches 0-9 vicinity ratings per (candidate, target) pair."""

    def __init__(self, gateway: Gateway, catalog: Catalog):
        self.gateway = gateway
        self.catalog = catalog
        self._cache: dict[tuple[int, int], int] = {}
        self._lock = threading.Lock()

    def rate(self, item: int, target: int) -> int:
        key = (item, target)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        raw = self.gateway.ask(PromptKind.VDCG_RATE, {
            "candidate_item_description": self.catalog.desc([item]),
            "target_item_description": self.catalog.desc([target]),
        })
        try:
            rating = parse_rating(raw)
        except ParseFailure:
            rating = 0
        with self._lock:
            self._cache[key] = rating
        return rating


def vdcg_at_k(gateway: Gateway | VdcgRater, ranked: Sequence[int], target_item: int, catalog: Catalog,
              k: int, params: VdcgParams | None = None, cap: bool = False) -> float:
    params = params or VdcgParams(l=k)
    if k != params.l:
        raise ValueError(f"k={k} must equal the ideal list length l={params.l}")
    rater = gateway if isinstance(gateway, VdcgRater) else VdcgRater(gateway, catalog)
    ratings = [rater.rate(item, target_item) for item in ranked[:k]]
    return vdcg_from_ratings(ratings, params, cap)


# ---------------------------------------------------------------------------
# run files


@dataclass
class RunFile:
    """Top-``k'`` rankings per user; short rows are padded with item -1."""

    user_keys: list[str]
    users: np.ndarray
    items: np.ndarray
    scores: np.ndarray
    meta: dict = field(default_factory=dict)

    def ranking(self, row: int) -> list[int]:
        return [int(i) for i in self.items[row] if i >= 0]


def make_run(rankings: dict[int, tuple[list[int], list[float]]], user_keys: dict[int, str],
             meta: dict | None = None) -> RunFile:
    users = sorted(rankings)
    width = max((len(rankings[u][0]) for u in users), default=0)
    items = np.full((len(users), width), -1, dtype=np.int64)
    scores = np.full((len(users), width), np.nan)
    for row, u in enumerate(users):
        its, scs = rankings[u]
        items[row, :len(its)] = its
        scores[row, :len(scs)] = scs
    return RunFile([user_keys[u] for u in users], np.asarray(users, dtype=np.int64), items, scores, dict(meta or {}))


def write_run(run: RunFile, path, catalog: Catalog, dsv_path=None) -> None:
    meta = dict(run.meta, user_keys=list(run.user_keys))
    write_container(path, "run", meta, {"users": run.users, "items": run.items, "scores": run.scores})
    if dsv_path is not None:
        with open(dsv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user_id", "rank", "item_id", "score"])
            for row, key in enumerate(run.user_keys):
                for rank, item in enumerate(run.ranking(row), start=1):
                    w.writerow([key, rank, catalog.key(item), repr(float(run.scores[row, rank - 1]))])


def read_run(path) -> RunFile:
    meta, arrays = read_container(path, kind="run")
    keys = meta.pop("user_keys")
    meta.pop("kind", None)
    return RunFile(keys, arrays["users"], arrays["items"], arrays["scores"], meta)


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    metrics: dict[str, dict[int, float]]
    per_user: dict[str, dict[str, float]]
    meta: dict = field(default_factory=dict)
    n_users: int = 0
    vdcg_skipped: int = 0

    def value(self, metric: str, cutoff: int) -> float:
        return self.metrics[metric][cutoff]


def evaluate_run(run: RunFile, sequences: Sequence[BehaviorSequence], split: SplitConfig,
                 cutoffs: Sequence[int] = (10, 20), gateway: Gateway | None = None,
                 catalog: Catalog | None = None, vdcg_cutoffs: Sequence[int] = (5, 10),
                 cap: bool = False) -> EvalReport:
    """Mean Recall/NDCG (and VDCG when a gateway is given) over the run's users."""
    by_user = {s.user: s for s in sequences}
    rater = None
    if gateway is not None:
        if catalog is None:
            raise ValueError("VDCG needs the catalog")
        rater = VdcgRater(gateway, catalog)
    per_user: dict[str, dict[str, float]] = {}
    vdcg_rows: dict[str, dict[str, float]] = {}
    skipped = 0
    for row, (user, key) in enumerate(zip(run.users.tolist(), run.user_keys)):
        seq = by_user.get(user)
        if seq is None:
            logger.warning("run user %s is not in the dataset; skipped", key)
            continue
        target = split_views(seq, split).target
        ranked = run.ranking(row)
        rec = {}
        for k in cutoffs:
            rec[f"recall@{k}"] = recall_at_k(ranked, target, k)
            rec[f"ndcg@{k}"] = ndcg_at_k(ranked, target, k)
        per_user[key] = rec
        if rater is not None:
            try:
                # with several held-out items, rate against the first
                vrec = {f"vdcg@{k}": vdcg_at_k(rater, ranked, target[0], catalog, k, cap=cap) for k in vdcg_cutoffs}
            except GatewayError as exc:
                logger.warning("VDCG skipped for user %s: %s", key, exc)
                skipped += 1
                continue
            vdcg_rows[key] = vrec
            rec.update(vrec)
    if not per_user:
        raise EvaluationError("no users evaluated")

    metrics: dict[str, dict[int, float]] = {}
    for name in ("recall", "ndcg"):
        metrics[name] = {k: float(np.mean([r[f"{name}@{k}"] for r in per_user.values()])) for k in cutoffs}
    if vdcg_rows:
        metrics["vdcg"] = {k: float(np.mean([r[f"vdcg@{k}"] for r in vdcg_rows.values()])) for k in vdcg_cutoffs}
    return EvalReport(metrics, per_user, dict(run.meta), len(per_user), skipped)


def write_report(report: EvalReport, path, per_user_path=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "cutoff", "value"])
        for metric in sorted(report.metrics):
            for k in sorted(report.metrics[metric]):
                w.writerow([metric, k, repr(report.metrics[metric][k])])
    if per_user_path is not None:
        cols = sorted({c for r in report.per_user.values() for c in r})
        with open(per_user_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user_id"] + cols)
            for key in sorted(report.per_user):
                r = report.per_user[key]
                w.writerow([key] + [repr(r[c]) if c in r else "" for c in cols])


def read_report(path) -> dict[str, dict[int, float]]:
    out: dict[str, dict[int, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["metric"], {})[int(row["cutoff"])] = float(row["value"])
    return out
