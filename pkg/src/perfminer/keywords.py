"""Keyword-filter baseline classifier."""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .records import HardLabel

_WORD = "a-z0-9_"


def normalize_keyword(text: str) -> str:
    return " ".join(text.lower().split())


def _keyword_regex(keyword: str) -> str:
    words = [re.escape(w) for w in keyword.split(" ")]
    body = r"[ \-]?".join(words)
    return rf"(?<![{_WORD}]){body}(?![{_WORD}])"


@dataclass(frozen=True)
class KeywordList:
    keywords: tuple[str, ...]
    _pattern: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.keywords:
            raise ConfigError("keyword list is empty")
        seen = set()
        for kw in self.keywords:
            if kw != normalize_keyword(kw) or not kw:
                raise ConfigError(f"keyword {kw!r} is not normalized")
            if kw in seen:
                raise ConfigError(f"duplicate keyword {kw!r}")
            seen.add(kw)
        pattern = re.compile("|".join(_keyword_regex(k) for k in self.keywords))
        object.__setattr__(self, "_pattern", pattern)

    def __len__(self) -> int:
        return len(self.keywords)

    def __contains__(self, keyword: str) -> bool:
        return keyword in self.keywords

    def __iter__(self):
        return iter(self.keywords)

    def find(self, message: str) -> str | None:
        """Return the first matched span of ``message``, or None."""
        m = self._pattern.search(message.lower())
        return m.group(0) if m else None


def parse_keyword_file(text: str) -> KeywordList:
    keywords = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            keywords.append(normalize_keyword(line))
    return KeywordList(tuple(keywords))


def load_keywords(path: str | Path) -> KeywordList:
    return parse_keyword_file(Path(path).read_text(encoding="utf-8"))


@functools.lru_cache(maxsize=1)
def default_keywords() -> KeywordList:
    text = resources.files("perfminer.data").joinpath("keywords.txt").read_text(encoding="utf-8")
    return parse_keyword_file(text)


def classify_keyword(message: str, keywords: KeywordList | None = None) -> HardLabel:
    """Performance iff some keyword occurs in the lowercased message.

    Single-word keywords must sit on ASCII word boundaries; multi-word
    keywords may be joined by a space, a hyphen or nothing.
    """
    keywords = keywords if keywords is not None else default_keywords()
    if keywords.find(message) is not None:
        return HardLabel.PERFORMANCE
    return HardLabel.NON_PERFORMANCE


class KeywordClassifier:
    """Callable wrapper so the keyword filter plugs in wherever a classifier is expected."""

    name = "keyword"

    def __init__(self, keywords: KeywordList | None = None):
        self.keywords = keywords if keywords is not None else default_keywords()

    def __call__(self, message: str) -> HardLabel:
        return classify_keyword(message, self.keywords)
