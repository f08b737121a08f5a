"""Strict parsers for LLM replies.

Every parser is total: it returns a value or raises :class:`ParseFailure`.
"""

from __future__ import annotations

import re


class ParseFailure(ValueError):
    pass


def _text(raw) -> str:
    if not isinstance(raw, str):
        raise ParseFailure(f"expected text, got {type(raw).__name__}")
    return raw


_LETTER = r"(?<![0-9A-Za-z])([{letters}])(?![0-9A-Za-z])"


def parse_choice(raw: str, n: int) -> int:
    """Index of the first standalone letter among the first ``n`` of A, B, C, ..."""
    letters = "".join(chr(ord("A") + i) for i in range(n))
    m = re.search(_LETTER.format(letters=letters + letters.lower()), _text(raw))
    if m is None:
        raise ParseFailure(f"no choice in {{{', '.join(letters)}}} found in {raw[:80]!r}")
    return ord(m.group(1).upper()) - ord("A")


def parse_choice3(raw: str) -> int:
    return parse_choice(raw, 3)


def parse_choice2(raw: str) -> int:
    m = re.search(r"(?<![0-9A-Za-z])([12])(?![0-9A-Za-z])", _text(raw))
    if m is None:
        raise ParseFailure(f"no choice in {{1, 2}} found in {raw[:80]!r}")
    return int(m.group(1)) - 1


def parse_yesno(raw: str) -> bool:
    m = re.search(r"(?<![0-9A-Za-z])(yes|no)(?![0-9A-Za-z])", _text(raw), re.IGNORECASE)
    if m is None:
        raise ParseFailure(f"no Yes/No found in {raw[:80]!r}")
    return m.group(1).lower() == "yes"


_PREFIX = re.compile(r"^\s*(?:[-*•>]+|\(?\d+[.)]|#\d+[.):]?|id\s*[:=])\s+", re.IGNORECASE)
_STRIP = " \t\"'`()[]{}<>.;"


def parse_id_list(raw: str) -> list[str]:
    """Split on lines and commas, dropping bullets and numbering. No validation."""
    tokens = []
    for line in _text(raw).splitlines():
        line = _PREFIX.sub("", line, count=1)
        for part in line.split(","):
            tok = part.strip(_STRIP)
            if tok:
                tokens.append(tok)
    return tokens


def parse_rating(raw: str) -> int:
    m = re.search(r"\d+", _text(raw))
    if m is None:
        raise ParseFailure(f"no rating found in {raw[:80]!r}")
    value = int(m.group(0))
    if not 0 <= value <= 9:
        raise ParseFailure(f"rating {value} outside 0-9")
    return value


def parse_lines(raw: str, limit: int | None = None) -> list[str]:
    """Non-empty lines with list markers removed, truncated to ``limit``."""
    lines = []
    for line in _text(raw).splitlines():
        line = _PREFIX.sub("", line, count=1).strip()
        if line:
            lines.append(line)
    return lines if limit is None else lines[:limit]
