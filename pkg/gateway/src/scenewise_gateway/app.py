"""FastAPI application exposing ASR, captioning, and embedding routes.

Every request and response body follows the engine's provider wire
contract; the JSON Schemas shipped with the ``scenewise`` package are
loaded here and enforced on the way in, so the engine cannot tell this
gateway apart from any remote provider. Backends are lazy-loaded on first
use and requests are serialized per backend, since the default local
models are not guaranteed thread-safe.
"""

from __future__ import annotations

import base64
import logging
import threading
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from scenewise import wire

from .backends import (
    BackendError,
    EnergyAsrBackend,
    HashEmbedBackend,
    StatsCaptionBackend,
    decode_frames,
    extract_frames,
)

logger = logging.getLogger(__name__)


@dataclass
class GatewayConfig:
    embedding_dim: int = 384
    frame_command: str = ""
    asr: EnergyAsrBackend = field(default_factory=EnergyAsrBackend)


def _bad_request(reason: str, errors: list[str] | None = None) -> JSONResponse:
    return JSONResponse(
        status_code=400, content={"error": reason, "details": errors or []}
    )


def create_app(config: GatewayConfig | None = None) -> FastAPI:
    config = config or GatewayConfig()
    app = FastAPI(title="scenewise-gateway")
    app.state.config = config
    app.state.backends = {}
    app.state.locks = {
        "asr": threading.Lock(),
        "caption": threading.Lock(),
        "embed": threading.Lock(),
    }

    def backend(name: str):
        # Lazy-load models on first request.
        if name not in app.state.backends:
            if name == "asr":
                app.state.backends[name] = config.asr
            elif name == "caption":
                app.state.backends[name] = StatsCaptionBackend()
            elif name == "embed":
                app.state.backends[name] = HashEmbedBackend(dim=config.embedding_dim)
        return app.state.backends[name]

    @app.exception_handler(MemoryError)
    async def oom_handler(request: Request, exc: MemoryError) -> JSONResponse:
        return JSONResponse(
            status_code=503,
            content={"error": "model out of memory"},
            headers={"Retry-After": "5"},
        )

    async def validated_body(request: Request, kind: str):
        try:
            body = await request.json()
        except Exception:
            return None, _bad_request("request body is not JSON")
        errors = wire.validation_errors(kind, "request", body)
        if errors:
            return None, _bad_request(f"{kind} request violates wire schema", errors)
        return body, None

    @app.get("/healthz")
    async def healthz() -> dict:
        return {"status": "ok", "embedding_dim": config.embedding_dim}

    @app.post("/v1/asr")
    async def serve_asr(request: Request):
        body, error = await validated_body(request, "asr")
        if error is not None:
            return error
        media = body["media"]
        engine = backend("asr")
        try:
            with app.state.locks["asr"]:
                if "audio_b64" in media:
                    try:
                        payload = base64.b64decode(media["audio_b64"], validate=True)
                    except Exception as exc:
                        return _bad_request(f"audio_b64 is not valid base64: {exc}")
                    utterances = engine.transcribe(payload)
                else:
                    utterances = engine.transcribe_locator(media["locator"])
        except BackendError as exc:
            return _bad_request(str(exc))
        response = {"utterances": utterances}
        wire.validate_response("asr", response)
        return JSONResponse(content=response)

    @app.post("/v1/caption")
    async def serve_caption(request: Request):
        body, error = await validated_body(request, "caption")
        if error is not None:
            return error
        engine = backend("caption")
        try:
            if body.get("frames_b64"):
                frames = decode_frames(body["frames_b64"])
            elif config.frame_command and body.get("media"):
                frames = extract_frames(
                    config.frame_command,
                    body["media"]["locator"],
                    [float(t) for t in body.get("frame_timestamps_s", [])],
                )
            else:
                return _bad_request(
                    "no frames: upload frames_b64 or configure a frame command"
                )
            if not frames:
                return _bad_request("at least one frame is required")
            with app.state.locks["caption"]:
                caption = engine.caption(
                    frames, body.get("transcript", ""), list(body.get("keywords", []))
                )
        except BackendError as exc:
            return _bad_request(str(exc))
        response = {"content": caption}
        wire.validate_response("caption", response)
        return JSONResponse(content=response)

    @app.post("/v1/embed")
    async def serve_embed(request: Request):
        body, error = await validated_body(request, "embed")
        if error is not None:
            return error
        engine = backend("embed")
        with app.state.locks["embed"]:
            vector = engine.embed(body["text"])
        response = {"vector": vector, "dim": len(vector)}
        wire.validate_response("embed", response)
        return JSONResponse(
            content=response, headers={"X-Embedding-Dim": str(len(vector))}
        )

    return app
