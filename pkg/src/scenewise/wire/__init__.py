"""Provider wire contract: envelope schemas plus validation helpers.

Every model service the engine talks to (ASR, chat LLMs, VLM captioning,
embeddings, judging) speaks one of four request/response envelope kinds.
The JSON Schemas in ``schemas/`` are the single source of truth and are
also consumed by external services that want to be drop-in providers.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Any, Mapping

from jsonschema import Draft202012Validator

from ..errors import ProtocolError

KINDS = ("chat", "asr", "caption", "embed")
DIRECTIONS = ("request", "response")


@lru_cache(maxsize=None)
def load_schema(kind: str, direction: str) -> dict:
    """Load the JSON Schema for one envelope kind and direction."""
    if kind not in KINDS or direction not in DIRECTIONS:
        raise ValueError(f"unknown wire schema {kind}_{direction}")
    name = f"{kind}_{direction}.json"
    data = resources.files(__package__).joinpath("schemas", name).read_text("utf-8")
    return json.loads(data)


@lru_cache(maxsize=None)
def _validator(kind: str, direction: str) -> Draft202012Validator:
    return Draft202012Validator(load_schema(kind, direction))


def validation_errors(kind: str, direction: str, body: Mapping[str, Any]) -> list[str]:
    """Return human-readable schema violations, empty when the body conforms."""
    errors = sorted(_validator(kind, direction).iter_errors(body), key=str)
    return [f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors]


def validate_request(kind: str, body: Mapping[str, Any]) -> None:
    """Raise ``ProtocolError`` when a request body violates its schema."""
    errors = validation_errors(kind, "request", body)
    if errors:
        raise ProtocolError(f"{kind} request violates wire schema: {'; '.join(errors)}")


def validate_response(kind: str, body: Mapping[str, Any]) -> None:
    """Raise ``ProtocolError`` when a response body violates its schema."""
    errors = validation_errors(kind, "response", body)
    if errors:
        raise ProtocolError(f"{kind} response violates wire schema: {'; '.join(errors)}")
