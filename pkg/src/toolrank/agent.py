"""Per-user agents: profile, substitute/complement lists and the two memories.

Optimization per sampled user: summarize the profile and generate S&C lists
once, then every epoch run LLM tool comparison, rank comparison and intent
discrimination against the held-out targets, decaying the learning rates
between epochs.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import BehaviorSequence, Catalog, SplitConfig, split_views
from .llm import Gateway, ParseFailure, PromptKind, parse_choice, parse_choice2, parse_lines, parse_yesno
from .llm.prompts import tool_compare_bindings
from .rectools import ScoreVector, ToolModel, rank_of, top_k

logger = logging.getLogger(__name__)

STORE_VERSION = 1


@dataclass(frozen=True)
class RecToolMemory:
    weights: tuple[float, ...]

    @classmethod
    def uniform(cls, n_tools: int) -> "RecToolMemory":
        return cls(tuple([1.0 / n_tools] * n_tools))

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if any(not np.isfinite(x) or x < 0 for x in w):
            raise ValueError(f"tool weights must be finite and non-negative: {w}")
        object.__setattr__(self, "weights", w)

    def add(self, delta) -> "RecToolMemory":
        return RecToolMemory(tuple(w + d for w, d in zip(self.weights, delta)))


@dataclass(frozen=True)
class IntentMemory:
    sub: float = 1.0 / 3
    com: float = 1.0 / 3
    reg: float = 1.0 / 3

    def __post_init__(self):
        for name in ("sub", "com", "reg"):
            x = getattr(self, name)
            if not np.isfinite(x) or x < 0:
                raise ValueError(f"intent weight {name} must be finite and non-negative, got {x}")


@dataclass(frozen=True)
class LearningRates:
    alpha: float = 0.05
    beta: float = 0.05
    gamma: float = 0.05
    decay: float = 0.8

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")


def decay_rates(rates: LearningRates) -> LearningRates:
    d = rates.decay
    return replace(rates, alpha=rates.alpha * d, beta=rates.beta * d, gamma=rates.gamma * d)


@dataclass
class AgentState:
    user: int
    user_key: str
    rec_memory: RecToolMemory
    intent_memory: IntentMemory = field(default_factory=IntentMemory)
    profile: str = ""
    substitutes: list[str] = field(default_factory=list)
    complements: list[str] = field(default_factory=list)
    epoch: int = 0
    tool_order: list[int] = field(default_factory=list)


# ---------------------------------------------------------------------------
# single steps


def summarize_profile(gateway: Gateway, train: Sequence[int], catalog: Catalog, c: int = 10,
                      max_items: int = 50) -> str:
    if len(train) == 0:
        raise ValueError("profile needs a non-empty history")
    reply = gateway.ask(PromptKind.PROFILE_SUMMARIZE,
                        {"item_descriptions": catalog.desc(train[-max_items:])})
    reply = reply.strip() if isinstance(reply, str) else ""
    return reply or "; ".join(catalog.desc(train[-c:]))


def generate_sc(gateway: Gateway, window: Sequence[int], catalog: Catalog,
                length: int | None = None) -> tuple[list[str], list[str]]:
    """Two LLM calls: generated substitute titles and complement titles."""
    length = length or len(window)
    bindings = {"item_descriptions": catalog.desc(window), "length": length}
    out = []
    for kind in (PromptKind.GENERATE_SUBSTITUTES, PromptKind.GENERATE_COMPLEMENTS):
        try:
            out.append(parse_lines(gateway.ask(kind, bindings), limit=length))
        except ParseFailure:
            out.append([])
    return out[0], out[1]


def tool_compare_update(gateway: Gateway, memory: RecToolMemory, tool_tops: Sequence[Sequence[int]],
                        target: Sequence[int], catalog: Catalog, alpha: float,
                        order: Sequence[int] | None = None) -> RecToolMemory:
    """Ask which tool's top list best matches the target and add ``alpha`` to it.

    Group ``g`` of the prompt shows tool ``order[g]``; parse failures leave the
    memory untouched.
    """
    n = len(memory.weights)
    if len(tool_tops) != n:
        raise ValueError(f"expected {n} tool lists, got {len(tool_tops)}")
    order = list(range(n)) if order is None else list(order)
    groups = [catalog.desc(tool_tops[t]) for t in order]
    raw = gateway.ask(PromptKind.TOOL_COMPARE, tool_compare_bindings(groups, catalog.desc(target)))
    try:
        choice = parse_choice(raw, n)
    except ParseFailure:
        logger.debug("tool comparison reply unparseable: %r", raw)
        return memory
    z = np.zeros(n)
    z[order[choice]] = 1.0
    return memory.add(alpha * z)


def rank_shares(per_tool_scores: Sequence[ScoreVector], target: Sequence[int]) -> np.ndarray:
    """Matrix ``[j, t]`` of reciprocal-rank shares; each row sums to 1."""
    shares = np.empty((len(target), len(per_tool_scores)))
    for j, item in enumerate(target):
        inv = np.array([1.0 / rank_of(v, item) for v in per_tool_scores])
        shares[j] = inv / inv.sum()
    return shares


def rank_compare_update(memory: RecToolMemory, per_tool_scores: Sequence[ScoreVector],
                        target: Sequence[int], beta: float) -> RecToolMemory:
    if len(per_tool_scores) != len(memory.weights):
        raise ValueError("one score vector per tool is required")
    return memory.add(beta * rank_shares(per_tool_scores, target).sum(axis=0))


def intent_discriminate_update(gateway: Gateway, memory: IntentMemory, substitutes: Sequence[str],
                               complements: Sequence[str], target: Sequence[int],
                               full_history: Sequence[int], catalog: Catalog, gamma: float,
                               regular: bool = True, max_items: int = 50) -> IntentMemory:
    sub, com, reg = memory.sub, memory.com, memory.reg
    raw = gateway.ask(PromptKind.INTENT_COMPARE, {
        "substitutes": list(substitutes),
        "complements": list(complements),
        "target_item_description": catalog.desc(target),
    })
    try:
        if parse_choice2(raw) == 0:
            sub += gamma
        else:
            com += gamma
    except ParseFailure:
        logger.debug("intent comparison reply unparseable: %r", raw)
    if regular:
        raw = gateway.ask(PromptKind.REGULAR_INTENT,
                          {"item_descriptions": catalog.desc(full_history[-max_items:])})
        try:
            # "No" (no clear S/C pattern) marks general interest
            if not parse_yesno(raw):
                reg += gamma
        except ParseFailure:
            logger.debug("regular intent reply unparseable: %r", raw)
    return IntentMemory(sub, com, reg)


# ---------------------------------------------------------------------------
# optimization loop


def tool_order(seed: int, user: int, n_tools: int) -> list[int]:
    return np.random.default_rng([seed, user]).permutation(n_tools).tolist()


def sample_users(sequences: Sequence[BehaviorSequence], sample_size: int | None, seed: int) -> list[int]:
    users = sorted(s.user for s in sequences)
    if sample_size is None or sample_size == len(users):
        return users
    if sample_size > len(users):
        raise ValueError(f"sample_size {sample_size} exceeds the {len(users)} available users")
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(users, size=sample_size, replace=False).tolist())


def optimize_user(gateway: Gateway, tools: Sequence[ToolModel], seq: BehaviorSequence, catalog: Catalog,
                  split: SplitConfig, rates: LearningRates, epochs: int, seed: int,
                  tool_compare: bool = True, rank_compare: bool = True,
                  regular_intent: bool = True) -> AgentState:
    train, window, target = split_views(seq, split)
    state = AgentState(seq.user, seq.user_key, RecToolMemory.uniform(len(tools)),
                       tool_order=tool_order(seed, seq.user, len(tools)))
    state.profile = summarize_profile(gateway, train, catalog, c=split.c)
    state.substitutes, state.complements = generate_sc(gateway, window, catalog, length=split.c)

    # tools are frozen, so their outputs are identical in every epoch
    scores = [tool.predict(seq.user, train, tool=t) for t, tool in enumerate(tools)]
    tops = [top_k(v, split.k_cpr) for v in scores]
    for _ in range(epochs):
        if tool_compare:
            state.rec_memory = tool_compare_update(gateway, state.rec_memory, tops, target, catalog,
                                                   rates.alpha, state.tool_order)
        if rank_compare:
            state.rec_memory = rank_compare_update(state.rec_memory, scores, target, rates.beta)
        state.intent_memory = intent_discriminate_update(
            gateway, state.intent_memory, state.substitutes, state.complements, target,
            list(seq.items), catalog, rates.gamma, regular=regular_intent)
        state.epoch += 1
        rates = decay_rates(rates)
    return state


def optimize_agents(gateway: Gateway, tools: Sequence[ToolModel], sequences: Sequence[BehaviorSequence],
                    catalog: Catalog, split: SplitConfig, rates: LearningRates = LearningRates(),
                    epochs: int = 3, sample_size: int | None = 160, seed: int = 0, workers: int = 1,
                    tool_compare: bool = True, rank_compare: bool = True,
                    regular_intent: bool = True) -> dict[int, AgentState]:
    """Optimize one agent per sampled user. Failing users are logged and skipped."""
    by_user = {s.user: s for s in sequences}
    chosen = sample_users(sequences, sample_size, seed)

    def run(user):
        try:
            return optimize_user(gateway, tools, by_user[user], catalog, split, rates, epochs, seed,
                                 tool_compare, rank_compare, regular_intent)
        except Exception:
            logger.exception("agent optimization failed for user %s; skipping", user)
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chosen))
    else:
        results = [run(u) for u in chosen]
    return {u: st for u, st in zip(chosen, results) if st is not None}


# ---------------------------------------------------------------------------
# persistence


def save_agents(agents: dict[int, AgentState], path, tool_labels: Sequence[str], meta: dict | None = None) -> None:
    records = []
    for user in sorted(agents):
        rec = asdict(agents[user])
        rec["rec_memory"] = list(agents[user].rec_memory.weights)
        records.append(rec)
    doc = {"version": STORE_VERSION, "tool_labels": list(tool_labels), "meta": meta or {}, "agents": records}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def load_agents(path) -> tuple[dict[int, AgentState], list[str], dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != STORE_VERSION:
        raise ValueError(f"{path}: unsupported agent store version {doc.get('version')}")
    agents = {}
    for rec in doc["agents"]:
        rec["rec_memory"] = RecToolMemory(tuple(rec["rec_memory"]))
        rec["intent_memory"] = IntentMemory(**rec["intent_memory"])
        st = AgentState(**rec)
        agents[st.user] = st
    return agents, doc["tool_labels"], doc.get("meta", {})


def export_memories(agents: dict[int, AgentState], tool_labels: Sequence[str], path) -> None:
    cols = ["user_id"] + [f"m_{lab}" for lab in tool_labels] + ["m_sub", "m_com", "m_reg"]
    lines = [",".join(cols)]
    for user in sorted(agents):
        st = agents[user]
        vals = list(st.rec_memory.weights) + [st.intent_memory.sub, st.intent_memory.com, st.intent_memory.reg]
        lines.append(",".join([st.user_key] + [repr(float(v)) for v in vals]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
