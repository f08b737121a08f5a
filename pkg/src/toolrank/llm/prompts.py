"""Prompt templates and rendering."""

from __future__ import annotations

import enum
import string
from typing import Mapping, Sequence


class PromptKind(str, enum.Enum):
    PROFILE_SUMMARIZE = "profile_summarize"
    GENERATE_SUBSTITUTES = "generate_substitutes"
    GENERATE_COMPLEMENTS = "generate_complements"
    TOOL_COMPARE = "tool_compare"
    INTENT_COMPARE = "intent_compare"
    REGULAR_INTENT = "regular_intent"
    GENERAL_RERANK = "general_rerank"
    SIMILARITY_RERANK = "similarity_rerank"
    VDCG_RATE = "vdcg_rate"


class RenderError(KeyError):
    pass


_GENERATE = """[Instruction]
According to the historical items purchased by a user, generate {length} %s of these items under {domain}.

[Historical Items]
{item_descriptions}

The output must be one list of item titles in length of {length}, separated by lines."""

TEMPLATES: dict[PromptKind, str] = {
    PromptKind.PROFILE_SUMMARIZE: """[Instruction]
Summarize the user's preference based on the historical items this user purchased under {domain}.

[Historical Items]
{item_descriptions}""",
    PromptKind.GENERATE_SUBSTITUTES: _GENERATE % "substitutes",
    PromptKind.GENERATE_COMPLEMENTS: _GENERATE % "complements",
    PromptKind.TOOL_COMPARE: """[Instruction]
Under {domain}, according to the descriptions of items in {group_count} groups {group_labels}, evaluate which group the target item is most relevant to.

{groups}

[Target Item]
{target_item_description}

The output must be one single character in {{{label_set}}} denoting the most relevant group.""",
    PromptKind.INTENT_COMPARE: """[Instruction]
Given the two groups of items under {domain}, evaluate which group is more relevant to the target item.

[Group 1]
{substitutes}

[Group 2]
{complements}

[Target Item]
{target_item_description}

The output must be one single number in {{1, 2}} denoting the more relevant group.""",
    PromptKind.REGULAR_INTENT: """[Instruction]
According to the historical items purchased by a user under {domain}, evaluate if this user exhibits clear substitute/complement patterns or not.

[Historical Items]
{item_descriptions}

The output must be one single word in {{Yes, No}}.""",
    PromptKind.GENERAL_RERANK: """[Instruction]
According to the user profile, rank top-{length} items this user may prefer from the candidate item list, from higher to lower probability.

[User Profile]
{user_profile}

[Candidate Item List in format of (ID, description)]
{candidates}

The output must be a list of candidate item IDs with length of {length}, with items separated by lines.""",
    PromptKind.SIMILARITY_RERANK: """[Instruction]
Rank top-{length} items from the candidate item list based on their similarity to the target item list, from higher to lower similarity.

[Target Item List ordered by priority]
{item_descriptions}

[Candidate Item List in format of (ID, description)]
{candidates}

The output must be a list of candidate item IDs with length of {length}, with items separated by lines.""",
    PromptKind.VDCG_RATE: """[Instruction]
Under {domain}, rate how well the candidate item matches the target item in terms of relevance, usefulness, and user interest, on a scale from 0 to 9, where 0 means an entirely unrelated item and 9 means a perfect semantic match between the item descriptions.

[Candidate Item]
{candidate_item_description}

[Target Item]
{target_item_description}

The output must be one single digit from 0 to 9.""",
}

_NUMBER_WORDS = {2: "two", 3: "three", 4: "four", 5: "five", 6: "six"}


def placeholders(kind: PromptKind) -> set[str]:
    return {field for _, field, _, _ in string.Formatter().parse(TEMPLATES[kind]) if field}


def _text(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, Sequence):
        return "\n".join(str(v) for v in value)
    return str(value)


def render(kind: PromptKind, bindings: Mapping[str, object]) -> str:
    """Fill the template for ``kind``; list values are joined one per line."""
    kind = PromptKind(kind)
    missing = sorted(placeholders(kind) - set(bindings))
    if missing:
        raise RenderError(f"{kind.value}: unbound placeholder(s) {', '.join(missing)}")
    return TEMPLATES[kind].format_map({k: _text(v) for k, v in bindings.items()})


def group_labels(n: int) -> list[str]:
    if not 1 <= n <= 26:
        raise ValueError("between 1 and 26 groups are supported")
    return [chr(ord("A") + i) for i in range(n)]


def tool_compare_bindings(groups: Sequence[Sequence[str]], target: Sequence[str]) -> dict[str, str]:
    labels = group_labels(len(groups))
    blocks = "\n\n".join(f"[Group {lab}]\n" + "\n".join(g) for lab, g in zip(labels, groups))
    if len(labels) == 1:
        label_text = labels[0]
    else:
        label_text = ", ".join(labels[:-1]) + " and " + labels[-1]
    return {
        "group_count": _NUMBER_WORDS.get(len(labels), str(len(labels))),
        "group_labels": label_text,
        "groups": blocks,
        "label_set": ", ".join(labels),
        "target_item_description": "\n".join(target),
    }


def candidate_lines(keys: Sequence[str], descriptions: Sequence[str]) -> str:
    return "\n".join(f"({k}, {d})" for k, d in zip(keys, descriptions))
