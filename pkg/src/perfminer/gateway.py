"""The single channel to a remote completion-style LLM service.

Wire protocol::

    POST <endpoint_url>
    {"model": str, "prompt": str, "temperature": 0, "max_tokens": int}

    200 -> {"text": str, "class_probabilities": {"performance": float}}   # probabilities optional

5xx responses and timeouts are retried with exponential backoff; any other
4xx fails immediately.
"""

from __future__ import annotations

import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import httpx

from .errors import (
    AuthError,
    ConfigError,
    PermanentRequestError,
    ResponseParseError,
    TransportError,
)
from .prompts import build_categorization_prompt, build_classification_prompt
from .records import HardLabel

if TYPE_CHECKING:
    from .categorize import Taxonomy
    from .records import CommitRecord

logger = logging.getLogger(__name__)

API_KEY_ENV = "PERFMINER_LLM_API_KEY"


@dataclass(frozen=True)
class GatewayConfig:
    endpoint_url: str
    model_name: str
    api_key: str | None = None
    temperature: float = 0.0
    classification_max_tokens: int = 5
    categorization_max_tokens: int = 256
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 4

    def __post_init__(self):
        if self.temperature != 0:
            raise ConfigError("temperature must be 0 for every pipeline call")
        if self.classification_max_tokens < 1 or self.categorization_max_tokens < 1:
            raise ConfigError("max output tokens must be positive")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be non-negative")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be positive")

    @classmethod
    def from_mapping(cls, values: dict) -> "GatewayConfig":
        known = {k: v for k, v in values.items() if k in cls.__dataclass_fields__}
        known.setdefault("api_key", os.environ.get(API_KEY_ENV))
        return cls(**known)


@dataclass(frozen=True)
class Completion:
    text: str
    p_performance: float | None = None


@dataclass(frozen=True)
class TeacherResponse:
    label: HardLabel
    p_performance: float | None
    raw_text: str

    def __post_init__(self):
        p = self.p_performance
        if p is None:
            return
        if not 0.0 <= p <= 1.0:
            raise ResponseParseError(f"probability {p} outside [0, 1]", self.raw_text)
        if (p >= 0.5) != (self.label is HardLabel.PERFORMANCE):
            raise ResponseParseError(
                f"probability {p} disagrees with text label {self.label.text}", self.raw_text
            )


_NON_PERF_RE = re.compile(r"non[- ]?performance", re.IGNORECASE)
_PERF_RE = re.compile(r"performance", re.IGNORECASE)


def parse_class_response(text: str) -> HardLabel:
    """Map free text to a label; the negative class is checked first."""
    if _NON_PERF_RE.search(text):
        return HardLabel.NON_PERFORMANCE
    if _PERF_RE.search(text):
        return HardLabel.PERFORMANCE
    raise ResponseParseError(f"no class label in response {text!r}", text)


_PAIR_RE = re.compile(r"^\s*(?:[-*]\s*)?(.+?)\s+::\s+(.+?)\s*$")


def parse_category_response(text: str, taxonomy: "Taxonomy") -> list[tuple[str, str]]:
    """Extract validated ``Category :: Subcategory`` pairs, first occurrence wins.

    The separator must be surrounded by whitespace so that code such as
    ``std::vector`` in the reasoning is not mistaken for a label.
    """
    pairs: list[tuple[str, str]] = []
    offenders: list[str] = []
    for line in text.splitlines():
        m = _PAIR_RE.match(line)
        if not m:
            continue
        cat, sub = m.group(1).strip().strip("*`"), m.group(2).strip().strip("*`.")
        category = taxonomy.category(cat)
        if category is None:
            offenders.append(f"unknown category {cat}")
            continue
        if sub not in category.subcategory_names:
            offenders.append(f"unknown subcategory {sub} in category {cat}")
            continue
        if (cat, sub) not in pairs:
            pairs.append((cat, sub))
    if offenders:
        raise ResponseParseError("; ".join(offenders), text)
    if not pairs:
        raise ResponseParseError("no 'Category :: Subcategory' line in response", text)
    return pairs


class LlmGateway:
    """HTTP client with retry and a bound on concurrent in-flight requests.

    Pass ``transport`` (for instance :class:`perfminer.mock.MockLlmServer`'s
    transport) to run offline.
    """

    def __init__(
        self,
        config: GatewayConfig,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(timeout=config.timeout, headers=headers, transport=transport)
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._sleep = sleep

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def complete(self, prompt: str, max_tokens: int) -> Completion:
        body = {
            "model": self.config.model_name,
            "prompt": prompt,
            "temperature": 0,
            "max_tokens": max_tokens,
        }
        attempts = self.config.max_retries + 1
        last_error = ""
        for attempt in range(attempts):
            if attempt:
                self._sleep(self.config.backoff_base * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._client.post(self.config.endpoint_url, json=body)
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
                logger.warning("LLM request attempt %d timed out", attempt + 1)
                continue
            except httpx.TransportError as exc:
                last_error = f"transport: {exc}"
                logger.warning("LLM request attempt %d failed: %s", attempt + 1, exc)
                continue
            if resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                logger.warning("LLM request attempt %d got HTTP %d", attempt + 1, resp.status_code)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(resp.status_code, resp.text[:200])
            if resp.status_code >= 400:
                raise PermanentRequestError(resp.status_code, resp.text[:200])
            try:
                payload = resp.json()
                text = payload["text"]
            except (ValueError, KeyError, TypeError):
                raise ResponseParseError("response JSON lacks a 'text' field", resp.text) from None
            probs = payload.get("class_probabilities") or {}
            p = probs.get("performance")
            return Completion(text=text, p_performance=None if p is None else float(p))
        raise TransportError(f"gave up after {attempts} attempts ({last_error})")

    def send(self, prompt: str, max_tokens: int | None = None) -> str:
        """Return the raw response text."""
        tokens = max_tokens if max_tokens is not None else self.config.classification_max_tokens
        return self.complete(prompt, tokens).text

    def classify(self, message: str) -> TeacherResponse:
        comp = self.complete(build_classification_prompt(message), self.config.classification_max_tokens)
        label = parse_class_response(comp.text)
        return TeacherResponse(label, comp.p_performance, comp.text)

    def categorize(self, record: "CommitRecord", taxonomy: "Taxonomy") -> list[tuple[str, str]]:
        prompt = build_categorization_prompt(record, taxonomy)
        text = self.send(prompt, self.config.categorization_max_tokens)
        return parse_category_response(text, taxonomy)
