"""Local inference backends behind the gateway routes.

These defaults are deliberately lightweight and fully deterministic so the
gateway runs anywhere with no model downloads: an energy-based speech
detector, an image-statistics captioner, and a feature-hashing text
embedder. Each class is an interface point where a real local model (a
whisper variant, a VLM, a sentence encoder) can be dropped in.
"""

from __future__ import annotations

import base64
import hashlib
import io
import re
import shlex
import subprocess
import tempfile
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class BackendError(Exception):
    """Client-side fault: undecodable payload or unusable arguments."""


@dataclass
class EnergyAsrBackend:
    """Speech spans from windowed RMS energy over PCM WAV audio.

    Emits one utterance per voiced span with a placeholder label; it is a
    speech *detector*, not a recognizer. When a sidecar transcript
    (``<audio>.tsv``) sits next to a locator it is returned instead, which
    is how pre-transcribed fixtures flow through the same route.
    """

    window_s: float = 0.05
    min_span_s: float = 0.30
    join_gap_s: float = 0.30
    floor: float = 300.0
    peak_fraction: float = 0.1

    def transcribe(self, payload: bytes) -> list[dict]:
        try:
            with wave.open(io.BytesIO(payload), "rb") as reader:
                rate = reader.getframerate()
                channels = reader.getnchannels()
                width = reader.getsampwidth()
                frames = reader.readframes(reader.getnframes())
        except (wave.Error, EOFError) as exc:
            raise BackendError(f"cannot decode audio payload: {exc}") from exc
        if width != 2:
            raise BackendError(f"only 16-bit PCM supported, got {8 * width}-bit")
        samples = np.frombuffer(frames, dtype="<i2").astype(np.float64)
        if channels > 1:
            samples = samples.reshape(-1, channels).mean(axis=1)
        if samples.size == 0:
            return []

        window = max(1, int(rate * self.window_s))
        usable = samples[: samples.size - samples.size % window]
        if usable.size == 0:
            return []
        rms = np.sqrt((usable.reshape(-1, window) ** 2).mean(axis=1))
        threshold = max(self.floor, self.peak_fraction * float(rms.max()))
        voiced = rms >= threshold

        spans: list[tuple[float, float]] = []
        start = None
        for i, flag in enumerate(voiced):
            t = i * self.window_s
            if flag and start is None:
                start = t
            elif not flag and start is not None:
                spans.append((start, t))
                start = None
        if start is not None:
            spans.append((start, voiced.size * self.window_s))

        joined: list[tuple[float, float]] = []
        for span in spans:
            if joined and span[0] - joined[-1][1] < self.join_gap_s:
                joined[-1] = (joined[-1][0], span[1])
            else:
                joined.append(span)
        return [
            {"start_s": round(a, 2), "end_s": round(b, 2), "text": "speech"}
            for a, b in joined
            if b - a >= self.min_span_s
        ]

    def transcribe_locator(self, locator: str) -> list[dict]:
        path = Path(locator)
        sidecar = path.with_suffix(".tsv")
        if sidecar.exists():
            utterances = []
            for line in sidecar.read_text("utf-8").splitlines():
                if not line.strip() or line.startswith("#"):
                    continue
                start, end, text = line.split("\t", 2)
                utterances.append(
                    {"start_s": float(start), "end_s": float(end), "text": text}
                )
            return utterances
        if not path.exists():
            raise BackendError(f"no audio at locator {locator!r}")
        return self.transcribe(path.read_bytes())


@dataclass
class StatsCaptionBackend:
    """Descriptions from frame statistics plus the scene transcript.

    The prompt it would hand a real VLM is recorded in ``prompt_log`` so
    callers can audit exactly what reached the model, keywords included.
    """

    prompt_log: list[str] = field(default_factory=list)

    def build_prompt(self, transcript: str, keywords: list[str], frame_count: int) -> str:
        prompt = (
            f"Describe the visual content of {frame_count} video frame(s). "
            f"Narration: {transcript[:400]}"
        )
        if keywords:
            prompt += " Focus on: " + ", ".join(keywords) + "."
        self.prompt_log.append(prompt)
        return prompt

    def caption(self, frames: list[Image.Image], transcript: str, keywords: list[str]) -> str:
        self.build_prompt(transcript, keywords, len(frames))
        luminances = []
        for frame in frames:
            grey = np.asarray(frame.convert("L"), dtype=np.float64)
            luminances.append(float(grey.mean()))
        mean_luminance = sum(luminances) / len(luminances)
        if mean_luminance < 64:
            tone = "dark"
        elif mean_luminance < 160:
            tone = "muted"
        else:
            tone = "bright"
        words = re.findall(r"\w+", transcript)
        snippet = " ".join(words[:8]) if words else "no narration"
        focus = f", highlighting {', '.join(keywords)}" if keywords else ""
        return (
            f"{len(frames)} sampled frame(s) with predominantly {tone} imagery "
            f"(mean luminance {mean_luminance:.0f}); narration concerns: {snippet}{focus}."
        )


def decode_frames(frames_b64: list[str]) -> list[Image.Image]:
    frames = []
    for blob in frames_b64:
        try:
            frames.append(Image.open(io.BytesIO(base64.b64decode(blob, validate=True))))
        except Exception as exc:  # Pillow raises a zoo of decode errors
            raise BackendError(f"cannot decode frame image: {exc}") from exc
    return frames


def extract_frames(command_template: str, locator: str, timestamps: list[float]) -> list[Image.Image]:
    """Materialize frames through an external command template."""
    frames = []
    with tempfile.TemporaryDirectory(prefix="gateway-frames-") as tmp:
        for i, ts in enumerate(timestamps):
            output = Path(tmp) / f"frame-{i:03d}.png"
            command = [
                part.replace("{media}", locator)
                .replace("{timestamp}", f"{ts:.2f}")
                .replace("{output}", str(output))
                for part in shlex.split(command_template)
            ]
            try:
                subprocess.run(command, check=True, capture_output=True, timeout=60)
                frames.append(Image.open(io.BytesIO(output.read_bytes())))
            except (subprocess.SubprocessError, OSError) as exc:
                raise BackendError(f"frame extraction failed: {exc}") from exc
    return frames


@dataclass
class HashEmbedBackend:
    """Deterministic feature-hashing text embedder with unit L2 norm.

    Identical text always produces the identical vector; no model weights
    are involved, so the gateway can serve embeddings out of the box.
    """

    dim: int = 384

    def embed(self, text: str) -> list[float]:
        vector = np.zeros(self.dim, dtype=np.float64)
        tokens = re.findall(r"\w+", text.lower())
        if not tokens:
            tokens = [text]
        for token in tokens:
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "little") % self.dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vector[bucket] += sign
        norm = float(np.linalg.norm(vector))
        if norm == 0.0:
            vector[0] = 1.0
            norm = 1.0
        quantized = (vector / norm).astype(np.float32)
        return [float(v) for v in quantized]
