from .gateway import (
    Gateway,
    GatewayError,
    HttpChatBackend,
    LlmRequest,
    MockOracle,
    ReplayCache,
    UncachedPrompt,
    prompt_hash,
    request_key,
)
from .heuristic import heuristic_responder
from .parsing import (
    ParseFailure,
    parse_choice,
    parse_choice2,
    parse_choice3,
    parse_id_list,
    parse_lines,
    parse_rating,
    parse_yesno,
)
from .prompts import PromptKind, RenderError, render

__all__ = [
    "Gateway", "GatewayError", "HttpChatBackend", "LlmRequest", "MockOracle", "ReplayCache",
    "UncachedPrompt", "prompt_hash", "request_key", "heuristic_responder", "ParseFailure",
    "parse_choice", "parse_choice2", "parse_choice3", "parse_id_list", "parse_lines",
    "parse_rating", "parse_yesno", "PromptKind", "RenderError", "render",
]
