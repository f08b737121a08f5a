"""Inference: memory-weighted aggregation, LLM reranking and positional fusion."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .agent import AgentState, RecToolMemory
from .catalog import Catalog, SplitConfig
from .llm import Gateway, GatewayError, PromptKind, parse_id_list
from .llm.prompts import candidate_lines
from .rectools import ScoreVector, ToolModel, normalize_scores, top_k

logger = logging.getLogger(__name__)

SC_MODES = ("dual", "exclusive", "off")


def aggregate(memory: RecToolMemory | Sequence[float], per_tool_scores: Sequence[ScoreVector]) -> ScoreVector:
    """Elementwise ``sum_t m_t * r_t`` over normalized tool vectors."""
    weights = memory.weights if isinstance(memory, RecToolMemory) else tuple(memory)
    if len(weights) != len(per_tool_scores):
        raise ValueError(f"{len(weights)} weights for {len(per_tool_scores)} score vectors")
    if not per_tool_scores:
        raise ValueError("nothing to aggregate")
    total = np.zeros(len(per_tool_scores[0]))
    excluded = np.ones(len(total), dtype=bool)
    for w, v in zip(weights, per_tool_scores):
        if len(v) != len(total):
            raise ValueError("score vectors differ in length")
        total += w * v.scores
        excluded &= v.excluded
    first = per_tool_scores[0]
    return ScoreVector(-1, first.user, total, excluded=excluded)


def candidates_for(scores: ScoreVector, k_prime: int) -> list[int]:
    """Top-``k'`` of the aggregate, never reaching into excluded items unless forced."""
    available = int((~scores.excluded).sum()) or len(scores)
    return top_k(scores, min(k_prime, available))


def hallucination_filter(raw_keys: Sequence[str], candidates: Sequence[int],
                         catalog: Catalog | None = None) -> list[int]:
    """Keep LLM tokens naming candidates (first occurrence, LLM order), then
    append the untouched candidates in their original order."""
    cand = list(candidates)
    allowed = set(cand)
    kept, seen = [], set()
    for tok in raw_keys:
        if not isinstance(tok, str):
            continue
        tok = tok.strip()
        item = catalog.lookup(tok) if catalog is not None else None
        if item is None or item not in allowed:
            # dense ids printed in the prompt are accepted too
            item = int(tok) if tok.isascii() and tok.isdigit() and int(tok) in allowed else None
        if item is not None and item not in seen:
            kept.append(item)
            seen.add(item)
    return kept + [i for i in cand if i not in seen]


def _rerank(gateway: Gateway, kind: PromptKind, candidates: Sequence[int], catalog: Catalog,
            bindings: dict) -> list[int]:
    cand = list(candidates)
    bindings = dict(bindings)
    bindings["candidates"] = candidate_lines([catalog.key(i) for i in cand], catalog.desc(cand))
    bindings["length"] = len(cand)
    try:
        raw = gateway.ask(kind, bindings)
    except GatewayError as exc:
        logger.warning("%s failed, keeping aggregated order: %s", kind.value, exc)
        return cand
    return hallucination_filter(parse_id_list(raw), cand, catalog)


def rerank_similarity(gateway: Gateway, candidates: Sequence[int], catalog: Catalog,
                      target_list: Sequence[str]) -> list[int]:
    if not target_list:
        return list(candidates)
    return _rerank(gateway, PromptKind.SIMILARITY_RERANK, candidates, catalog,
                   {"item_descriptions": list(target_list)})


def rerank_general(gateway: Gateway, candidates: Sequence[int], catalog: Catalog, profile: str) -> list[int]:
    if not profile or not profile.strip():
        return list(candidates)
    return _rerank(gateway, PromptKind.GENERAL_RERANK, candidates, catalog, {"user_profile": profile})


@dataclass(frozen=True)
class FusedRanking:
    scores: dict[int, float]
    order: tuple[int, ...]


def fuse(list_a: Sequence[int], w_a: float, list_b: Sequence[int], w_b: float) -> FusedRanking:
    """Score each item by ``w_a * pos_a + w_b * pos_b`` (1-based); lower ranks first.

    Ties fall back to the position in ``list_a``.
    """
    pos_a = {item: p for p, item in enumerate(list_a, start=1)}
    pos_b = {item: p for p, item in enumerate(list_b, start=1)}
    if len(pos_a) != len(list_a) or len(pos_b) != len(list_b) or pos_a.keys() != pos_b.keys():
        raise ValueError("fuse needs two permutations of the same candidate set")
    scores = {item: w_a * pos_a[item] + w_b * pos_b[item] for item in list_a}
    order = sorted(list_a, key=lambda item: (scores[item], pos_a[item], item))
    return FusedRanking(scores, tuple(order))


def refine(gateway: Gateway, candidates: Sequence[int], catalog: Catalog, state: AgentState,
           sc_mode: str = "dual", general_rerank: bool = True) -> FusedRanking:
    """Dual S&C reranking and the general-profile fusion over fixed candidates."""
    if sc_mode not in SC_MODES:
        raise ValueError(f"sc_mode must be one of {SC_MODES}")
    cand = list(candidates)
    intent = state.intent_memory
    if sc_mode == "dual":
        y_sub = rerank_similarity(gateway, cand, catalog, state.substitutes)
        y_com = rerank_similarity(gateway, cand, catalog, state.complements)
        dual = fuse(y_sub, intent.sub, y_com, intent.com)
    elif sc_mode == "exclusive":
        # ties go to substitutes
        wanted = state.substitutes if intent.sub >= intent.com else state.complements
        y = rerank_similarity(gateway, cand, catalog, wanted)
        dual = FusedRanking({i: float(p) for p, i in enumerate(y, 1)}, tuple(y))
    else:
        dual = FusedRanking({i: float(p) for p, i in enumerate(cand, 1)}, tuple(cand))
    if not general_rerank:
        return dual
    y_reg = rerank_general(gateway, cand, catalog, state.profile)
    return fuse(list(dual.order), 1.0, y_reg, intent.reg)


def tool_scores(tools: Sequence[ToolModel], user: int, history: Sequence[int]) -> list[ScoreVector]:
    return [normalize_scores(tool.predict(user, history, tool=t)) for t, tool in enumerate(tools)]


def final_ranking(state: AgentState, gateway: Gateway, tools: Sequence[ToolModel], history: Sequence[int],
                  catalog: Catalog, split: SplitConfig, sc_mode: str = "dual", general_rerank: bool = True,
                  ensemble=None) -> tuple[list[int], list[float]]:
    """Full inference for one agent; returns ``(items, fused scores)`` of length ``k'``."""
    vectors = tool_scores(tools, state.user, history)
    agg = aggregate(state.rec_memory, vectors)
    if ensemble is not None:
        from .ensemble import apply_ensemble, blend
        agg = blend(agg, apply_ensemble(ensemble, vectors))
    cand = candidates_for(agg, split.k_prime)
    fused = refine(gateway, cand, catalog, state, sc_mode, general_rerank)
    items = list(fused.order[:split.k_prime])
    return items, [fused.scores[i] for i in items]
