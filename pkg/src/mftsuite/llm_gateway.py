"""Chat-completions gateway with retries, bounded concurrency, and
record/replay transcripts.

All generative stages go through this single client. In record mode every
response is appended to a JSON-Lines transcript keyed by a caller-supplied
tag; in replay mode the transcript answers instead of the network, which
makes whole pipeline runs reproducible offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .embedding import ProviderError

log = logging.getLogger(__name__)

MODES = ("live", "record", "replay")


class TranscriptMiss(RuntimeError):
    """Replay mode was asked for a tag the transcript does not contain."""


@dataclass
class ChatRequest:
    prompt: str
    model_name: str
    temperature: float = 0.7
    max_tokens: int = 512
    tag: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def payload(self) -> dict:
        return {
            "model": self.model_name,
            "messages": [{"role": "user", "content": self.prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "user": self.tag,
        }

    def request_hash(self) -> str:
        canonical = json.dumps(self.payload(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class ChatParams:
    """Model settings one pipeline stage uses for its chat calls."""

    model_name: str
    temperature: float = 0.7
    max_tokens: int = 512


@dataclass
class RetryPolicy:
    base_delay: float = 1.0
    factor: float = 2.0
    jitter: bool = True
    max_attempts: int = 5

    def delay(self, attempt: int) -> float:
        d = self.base_delay * self.factor ** (attempt - 1)
        if self.jitter:
            d *= 1.0 + random.random() * 0.25
        return d


@dataclass
class TranscriptRecord:
    tag: str
    request_hash: str
    response: str
    latency_s: float = 0.0
    attempts: int = 1


class Transcript:
    """Append-only tag-keyed store of chat responses, persisted as JSONL."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[str, TranscriptRecord] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        assert self.path is not None
        with self.path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                rec = TranscriptRecord(**obj)
                self._records[rec.tag] = rec

    def __contains__(self, tag: str) -> bool:
        return tag in self._records

    def __len__(self) -> int:
        return len(self._records)

    def get(self, tag: str) -> TranscriptRecord:
        if tag not in self._records:
            raise TranscriptMiss(f"transcript miss: {tag}")
        return self._records[tag]

    def append(self, record: TranscriptRecord) -> None:
        with self._lock:
            if record.tag in self._records:
                raise ValueError(f"duplicate transcript tag: {record.tag}")
            self._records[record.tag] = record
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({
                        "tag": record.tag,
                        "request_hash": record.request_hash,
                        "response": record.response,
                        "latency_s": record.latency_s,
                        "attempts": record.attempts,
                    }, ensure_ascii=False) + "\n")


@dataclass
class GatewayConfig:
    base_url: str = ""
    api_key_env: str = "CHAT_API_KEY"
    timeout: float = 60.0
    concurrency: int = 4
    mode: str = "live"
    transcript_path: str | Path | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown gateway mode: {self.mode}")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")


class ChatGateway:
    """Single point of contact with the chat provider.

    live: network only. record: network, with responses appended to the
    transcript (tags already present are served from it, so reruns are
    cheap). replay: transcript only, no network.
    """

    def __init__(self, config: GatewayConfig, policy: RetryPolicy | None = None):
        self.config = config
        self.policy = policy or RetryPolicy()
        self.transcript = Transcript(config.transcript_path) \
            if config.mode in ("record", "replay") else None
        self._slots = threading.Semaphore(config.concurrency)
        self.last_attempts = 0

    def chat(self, req: ChatRequest) -> str:
        """Return the first choice's message text for the request."""
        if not req.tag:
            raise ValueError("chat request needs a tag")
        if self.transcript is not None and req.tag in self.transcript:
            rec = self.transcript.get(req.tag)
            if rec.request_hash != req.request_hash():
                log.warning("transcript hash mismatch for tag %s "
                            "(prompt or parameters changed since recording)", req.tag)
            self.last_attempts = rec.attempts
            return rec.response
        if self.config.mode == "replay":
            raise TranscriptMiss(f"transcript miss: {req.tag}")

        started = time.monotonic()
        text, attempts = self._post_with_retries(req)
        self.last_attempts = attempts
        if self.transcript is not None:
            self.transcript.append(TranscriptRecord(
                tag=req.tag, request_hash=req.request_hash(), response=text,
                latency_s=time.monotonic() - started, attempts=attempts))
        return text

    def chat_many(self, reqs: list[ChatRequest]) -> list[str]:
        """Run requests with bounded concurrency, results in input order."""
        if not reqs:
            return []
        with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
            return list(pool.map(self.chat, reqs))

    def _post_with_retries(self, req: ChatRequest) -> tuple[str, int]:
        url = self.config.base_url.rstrip("/") + "/v1/chat/completions"
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: Exception | None = None
        for attempt in range(1, self.policy.max_attempts + 1):
            try:
                with self._slots:
                    resp = requests.post(url, json=req.payload(), headers=headers,
                                         timeout=self.config.timeout)
            except requests.RequestException as exc:
                last_error = exc
                if attempt < self.policy.max_attempts:
                    time.sleep(self.policy.delay(attempt))
                continue
            if resp.status_code == 200:
                try:
                    content = resp.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, ValueError) as exc:
                    raise ProviderError(f"malformed chat response: {exc}") from exc
                return str(content), attempt
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = ProviderError(
                    f"status {resp.status_code}: {resp.text[:200]}")
                if attempt < self.policy.max_attempts:
                    time.sleep(self.policy.delay(attempt))
                continue
            raise ProviderError(
                f"provider error {resp.status_code}: {resp.text[:500]}")
        raise ProviderError(
            f"chat request {req.tag!r} failed after "
            f"{self.policy.max_attempts} attempts: {last_error}")
