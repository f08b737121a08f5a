"""Lexical-overlap stand-in for an LLM.

Answers every prompt kind deterministically from the rendered prompt alone,
so the whole pipeline can run offline. Quality is whatever word overlap
between item descriptions gives you; it is a plumbing aid, not a model.
"""

from __future__ import annotations

import re
from collections import Counter

from .gateway import LlmRequest
from .prompts import PromptKind

_HEADER = re.compile(r"^\[(.+)\]$")
_WORD = re.compile(r"[a-z]+")
_CANDIDATE = re.compile(r"^\((.*?), (.*)\)$")


def sections(prompt: str) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    current = None
    for line in prompt.splitlines():
        m = _HEADER.match(line.strip())
        if m:
            current = m.group(1)
            out[current] = []
        elif current is not None and line.strip():
            if line.startswith("The output must"):
                current = None
                continue
            out[current].append(line)
    return out


def _words(text: str) -> set[str]:
    # digits carry item numbers in synthetic titles; letters only keeps the signal semantic
    return set(_WORD.findall(text.lower()))


def _overlap(a: str, b: str) -> float:
    wa, wb = _words(a), _words(b)
    if not wa or not wb:
        return 0.0
    return len(wa & wb) / len(wa | wb)


def _best(options: list[str], target: str) -> int:
    scores = [_overlap(o, target) for o in options]
    return max(range(len(options)), key=lambda i: (scores[i], -i))


def _length(prompt: str, default: int) -> int:
    m = re.search(r"in length of (\d+)|with length of (\d+)", prompt)
    if m:
        return int(m.group(1) or m.group(2))
    return default


def _rerank(candidates: list[str], reference: str) -> str:
    parsed = []
    for line in candidates:
        m = _CANDIDATE.match(line.strip())
        if m:
            parsed.append((m.group(1), m.group(2)))
    scored = sorted(range(len(parsed)), key=lambda i: (-_overlap(parsed[i][1], reference), i))
    return "\n".join(parsed[i][0] for i in scored)


def heuristic_responder(req: LlmRequest) -> str:
    kind = PromptKind(req.kind)
    sec = sections(req.prompt)
    if kind is PromptKind.PROFILE_SUMMARIZE:
        words = Counter(w for line in sec.get("Historical Items", []) for w in _words(line))
        top = [w for w, _ in sorted(words.items(), key=lambda kv: (-kv[1], kv[0]))[:5]]
        return "The user mostly buys " + ", ".join(top) + "." if top else ""
    if kind in (PromptKind.GENERATE_SUBSTITUTES, PromptKind.GENERATE_COMPLEMENTS):
        items = sec.get("Historical Items", [])
        if kind is PromptKind.GENERATE_COMPLEMENTS:
            items = items[::-1]
        n = _length(req.prompt, len(items))
        return "\n".join(items[:n])
    if kind is PromptKind.TOOL_COMPARE:
        groups = sorted(k for k in sec if k.startswith("Group "))
        target = "\n".join(sec.get("Target Item", []))
        texts = ["\n".join(sec[g]) for g in groups]
        return groups[_best(texts, target)].split()[-1] if groups else "A"
    if kind is PromptKind.INTENT_COMPARE:
        target = "\n".join(sec.get("Target Item", []))
        texts = ["\n".join(sec.get("Group 1", [])), "\n".join(sec.get("Group 2", []))]
        return str(_best(texts, target) + 1)
    if kind is PromptKind.REGULAR_INTENT:
        items = sec.get("Historical Items", [])
        counts = Counter(w for line in items for w in _words(line))
        shared = counts and max(counts.values()) * 2 >= len(items)
        return "Yes" if shared else "No"
    if kind is PromptKind.GENERAL_RERANK:
        return _rerank(sec.get("Candidate Item List in format of (ID, description)", []),
                       "\n".join(sec.get("User Profile", [])))
    if kind is PromptKind.SIMILARITY_RERANK:
        return _rerank(sec.get("Candidate Item List in format of (ID, description)", []),
                       "\n".join(sec.get("Target Item List ordered by priority", [])))
    if kind is PromptKind.VDCG_RATE:
        cand = "\n".join(sec.get("Candidate Item", []))
        target = "\n".join(sec.get("Target Item", []))
        return str(round(9 * _overlap(cand, target)))
    return ""
