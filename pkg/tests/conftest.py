import numpy as np
import pytest

from toolrank.catalog import Catalog
from toolrank.llm import Gateway, MockOracle, PromptKind, heuristic_responder
from toolrank.llm.heuristic import sections
from toolrank.rectools import ScoreVector


def scripted(fn=None, **by_kind):
    """Gateway whose replies come from ``by_kind[kind]`` (str or callable), then ``fn``."""

    def respond(req):
        kind = PromptKind(req.kind)
        reply = by_kind.get(kind.name.lower())
        if reply is not None:
            return reply(req) if callable(reply) else reply
        if fn is not None:
            return fn(req)
        return heuristic_responder(req)

    oracle = MockOracle(responder=respond)
    return Gateway(oracle, model="mock"), oracle


def candidate_ids(req) -> list[str]:
    sec = sections(req.prompt)
    lines = sec["Candidate Item List in format of (ID, description)"]
    return [line.strip()[1:].split(",")[0] for line in lines]


def reverse_candidates(req) -> str:
    return "\n".join(reversed(candidate_ids(req)))


def echo_candidates(req) -> str:
    return "\n".join(candidate_ids(req))


@pytest.fixture
def small_catalog():
    n = 12
    return Catalog([f"item number {i}" for i in range(n)], [f"k{i:02d}" for i in range(n)])


def vec(scores, tool=0, user=0):
    return ScoreVector(tool, user, np.asarray(scores, dtype=np.float64))
