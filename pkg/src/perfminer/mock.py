"""Deterministic in-process stand-in for the LLM service.

``MockLlmServer`` speaks the gateway's wire protocol through an
``httpx.MockTransport``, so tests exercise the real client code path. Every
request body is recorded and checked for temperature 0.
"""

from __future__ import annotations

import json
import re
import threading
from typing import Callable, Mapping

import httpx

from .gateway import GatewayConfig, LlmGateway
from .prompts import extract_message

# Reply is either text, (text, p_performance) or a ready-made httpx.Response.
Responder = Callable[[dict], "str | tuple[str, float] | httpx.Response"]

DEFAULT_TEACHER_PATTERN = (
    r"\b(speed[- ]?up|faster|fast|slow|latency|throughput|perf|performance|optimi[sz]\w*|"
    r"cach(e|ing)|memory|alloc\w*|leak|efficien\w*|bottleneck|parallel\w*|lock)\b"
)


class MockLlmServer:
    def __init__(
        self,
        responses: Mapping[str, str] | None = None,
        responder: Responder | None = None,
        status_script: list[int] | None = None,
    ):
        self.responses = dict(responses or {})
        self.responder = responder
        self.status_script = list(status_script or [])
        self.requests: list[dict] = []
        self._lock = threading.Lock()

    @property
    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self._handle)

    def gateway(self, **overrides) -> LlmGateway:
        cfg = {"endpoint_url": "http://mock.invalid/v1/completions", "model_name": "mock", "api_key": "test"}
        cfg.update(overrides)
        return LlmGateway(GatewayConfig(**cfg), transport=self.transport, sleep=lambda s: None)

    def _handle(self, request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        with self._lock:
            self.requests.append(body)
            status = self.status_script.pop(0) if self.status_script else 200
        if body.get("temperature") != 0:
            return httpx.Response(400, json={"error": "temperature must be 0"})
        if status != 200:
            return httpx.Response(status, json={"error": f"scripted {status}"})
        prompt = body["prompt"]
        if prompt in self.responses:
            reply = self.responses[prompt]
        elif self.responder is not None:
            reply = self.responder(body)
        else:
            return httpx.Response(404, json={"error": "no mock response for prompt"})
        if isinstance(reply, httpx.Response):
            return reply
        if isinstance(reply, tuple):
            text, p = reply
            return httpx.Response(200, json={"text": text, "class_probabilities": {"performance": p}})
        return httpx.Response(200, json={"text": reply})

    def assert_deterministic(self, max_tokens: int | None = None) -> None:
        """Every recorded request used temperature 0 (and the given token cap)."""
        assert self.requests, "no requests recorded"
        for body in self.requests:
            assert body["temperature"] == 0, body
            if max_tokens is not None:
                assert body["max_tokens"] == max_tokens, body


def regex_teacher(pattern: str = DEFAULT_TEACHER_PATTERN) -> Responder:
    """Responder that labels the embedded commit message with a regex oracle."""
    regex = re.compile(pattern, re.IGNORECASE)

    def respond(body: dict) -> str:
        message = extract_message(body["prompt"])
        return "performance" if regex.search(message) else "non-performance"

    return respond


# Ordered cue table for the rule-based categorization mock; first hit wins.
CATEGORY_CUES = (
    (r"\bleak", "Memory Inefficiency", "Memory Leak"),
    (r"\balloc|\bcop(y|ies)\b|\breserv|\bmemory", "Memory Inefficiency", "Unnecessary Memory Allocation"),
    (r"\block|\bmutex", "Poor Concurrency Control", "Unnecessary locks"),
    (r"\bcach", "Inefficient I/O", "Inefficient Caching"),
    (r"\blog", "Inefficient I/O", "Unnecessary Logging"),
    (r"\bloop", "Inefficient Algorithm/Data-structure", "Inefficient Loops"),
    (r"\bparallel", "Parallelization", "Missing Parallelism"),
)


def rule_categorizer(default: tuple[str, str] = ("Inefficient Algorithm/Data-structure", "Unnecessary computations")) -> Responder:
    """Responder that answers categorization prompts from commit-message cues."""
    cues = [(re.compile(p, re.IGNORECASE), c, s) for p, c, s in CATEGORY_CUES]

    def respond(body: dict) -> str:
        message = extract_message(body["prompt"])
        for regex, cat, sub in cues:
            if regex.search(message):
                return f"The change addresses {sub.lower()}.\n{cat} :: {sub}"
        return f"No specific cue found.\n{default[0]} :: {default[1]}"

    return respond
