"""Uniform provider layer: envelopes, transports, retries, and caching.

Every external model call (ASR, chat LLMs, VLM captioning, embeddings,
judging) flows through :class:`Provider`, which validates the wire envelope,
consults the content-addressed response cache, and retries transient
transport failures. Scripted transports replay canned responses so any
pipeline run can be made fully deterministic and offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx

from . import wire
from .errors import ProtocolError, TransportError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProviderRequest:
    """One outbound call: the envelope kind plus the exact wire body."""

    kind: str
    body: Mapping[str, Any]

    def canonical(self) -> str:
        return json.dumps(
            {"kind": self.kind, "body": self.body},
            sort_keys=True,
            ensure_ascii=True,
            separators=(",", ":"),
        )

    def cache_key(self) -> str:
        digest = hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()
        return f"provider:{self.kind}:{digest}"


@dataclass(frozen=True)
class ProviderResponse:
    """The wire body a provider answered with."""

    body: Mapping[str, Any]


class Transport(Protocol):
    def send(self, request: ProviderRequest) -> ProviderResponse: ...


ScriptRule = Callable[[ProviderRequest], Mapping[str, Any]]


class ScriptedTransport:
    """Replays canned responses, either from a list or a rule function.

    List entries may be response bodies or exceptions to raise. The
    transport records every request and counts sends, which is how tests
    probe call budgets and cache warmth.
    """

    def __init__(self, script: Sequence[Mapping[str, Any] | Exception] | ScriptRule):
        self._rule: ScriptRule | None = script if callable(script) else None
        self._queue: list[Mapping[str, Any] | Exception] = (
            [] if callable(script) else list(script)
        )
        self.requests: list[ProviderRequest] = []
        self.calls = 0
        self._lock = threading.Lock()

    def send(self, request: ProviderRequest) -> ProviderResponse:
        with self._lock:
            self.calls += 1
            self.requests.append(request)
            if self._rule is not None:
                outcome: Mapping[str, Any] | Exception = self._rule(request)
            else:
                if not self._queue:
                    raise RuntimeError("scripted transport ran out of responses")
                outcome = self._queue.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return ProviderResponse(outcome)


class HttpTransport:
    """POSTs the wire body as JSON to a fixed endpoint."""

    def __init__(self, endpoint: str, timeout_s: float = 60.0):
        self.endpoint = endpoint
        self.timeout_s = timeout_s

    def send(self, request: ProviderRequest) -> ProviderResponse:
        try:
            reply = httpx.post(self.endpoint, json=dict(request.body), timeout=self.timeout_s)
        except httpx.HTTPError as exc:
            raise TransportError(f"POST {self.endpoint} failed: {exc}") from exc
        if reply.status_code >= 500:
            raise TransportError(f"POST {self.endpoint} -> {reply.status_code}")
        if reply.status_code >= 400:
            raise ProtocolError(
                f"POST {self.endpoint} -> {reply.status_code}: {reply.text[:500]}"
            )
        try:
            return ProviderResponse(reply.json())
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response from {self.endpoint}") from exc


TransportFactory = Callable[[str], Transport]

_SCHEMES: dict[str, TransportFactory] = {
    "http": HttpTransport,
    "https": HttpTransport,
}


def register_transport_scheme(name: str, factory: TransportFactory) -> None:
    """Register a transport factory for an endpoint scheme (tests use this)."""
    _SCHEMES[name] = factory


def build_transport(endpoint: str) -> Transport:
    scheme = endpoint.split("://", 1)[0] if "://" in endpoint else ""
    if scheme == "fixture" and scheme not in _SCHEMES:
        from . import fixtures  # noqa: F401  (import registers the scheme)
    factory = _SCHEMES.get(scheme)
    if factory is None:
        raise ProtocolError(f"no transport registered for endpoint {endpoint!r}")
    return factory(endpoint)


@dataclass
class Provider:
    """One configured model service behind the uniform wire contract."""

    kind: str
    model: str
    transport: Transport
    cache: Any | None = None  # object with get/put(bytes); see store.KVStore
    retries: int = 2
    retry_wait_s: float = 0.05
    validate: bool = True
    chat_defaults: Mapping[str, float] = field(
        default_factory=lambda: {"temperature": 0.7, "top_p": 0.95}
    )

    def call(self, body: Mapping[str, Any]) -> Mapping[str, Any]:
        """Issue one provider call, going through cache and retry policy."""
        full = {"model": self.model, **body}
        if self.validate:
            wire.validate_request(self.kind, full)
        request = ProviderRequest(self.kind, full)

        if self.cache is not None:
            hit = self.cache.get(request.cache_key())
            if hit is not None:
                return json.loads(hit.decode("utf-8"))

        last_error: TransportError | None = None
        for attempt in range(self.retries + 1):
            try:
                response = self.transport.send(request)
                break
            except TransportError as exc:
                last_error = exc
                if attempt < self.retries:
                    time.sleep(self.retry_wait_s * (attempt + 1))
        else:
            raise TransportError(
                f"{self.kind} provider unreachable after {self.retries + 1} attempts"
            ) from last_error

        payload = response.body
        if self.validate:
            wire.validate_response(self.kind, payload)
        if self.cache is not None:
            self.cache.put(
                request.cache_key(),
                json.dumps(payload, sort_keys=True, ensure_ascii=True).encode("utf-8"),
            )
        return payload

    # Convenience wrappers per envelope kind.

    def chat(
        self,
        messages: Sequence[Mapping[str, str]],
        *,
        model: str | None = None,
        temperature: float | None = None,
        top_p: float | None = None,
    ) -> str:
        body = {
            "messages": list(messages),
            "temperature": (
                temperature if temperature is not None else self.chat_defaults["temperature"]
            ),
            "top_p": top_p if top_p is not None else self.chat_defaults["top_p"],
        }
        if model is not None:
            body["model"] = model
        payload = self.call(body)
        return str(payload["content"])

    def asr(self, media: Mapping[str, str], **extra: Any) -> list[Mapping[str, Any]]:
        payload = self.call({"media": dict(media), **extra})
        return list(payload["utterances"])

    def caption(self, **body: Any) -> str:
        payload = self.call(body)
        return str(payload["content"])

    def embed(self, text: str) -> list[float]:
        payload = self.call({"text": text})
        vector = [float(v) for v in payload["vector"]]
        if int(payload["dim"]) != len(vector):
            raise ProtocolError(
                f"embed response dim {payload['dim']} does not match vector length {len(vector)}"
            )
        return vector
