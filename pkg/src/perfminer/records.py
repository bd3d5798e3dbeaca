"""Commit, label and soft-label value types plus JSONL persistence.

Every artifact in the pipeline that holds commits is a JSONL file with one
:class:`CommitRecord` per line. Writers may prepend a provenance line of the
form ``{"_provenance": {...}}``; readers skip it.
"""

from __future__ import annotations

import enum
import io
import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import IO, Any, Iterable, Iterator

from .errors import RecordParseError, ValidationError

SHA_RE = re.compile(r"[0-9a-f]{40}")

PROVENANCE_KEY = "_provenance"

FIELDS = (
    "repo_id",
    "commit_sha",
    "message",
    "language",
    "files_changed",
    "functions_changed",
    "function_before",
    "function_after",
    "diff",
    "stars",
    "committed_at",
)


class Language(str, enum.Enum):
    PYTHON = "python"
    CPP = "cpp"
    JAVA = "java"

    @classmethod
    def parse(cls, value: "str | Language") -> "Language":
        if isinstance(value, Language):
            return value
        key = value.strip().lower()
        aliases = {"c++": "cpp", "py": "python"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValidationError("language", f"unknown language {value!r}") from None


class HardLabel(enum.IntEnum):
    NON_PERFORMANCE = 0
    PERFORMANCE = 1

    @property
    def text(self) -> str:
        return "performance" if self is HardLabel.PERFORMANCE else "non-performance"

    @classmethod
    def parse(cls, value: "str | int | HardLabel") -> "HardLabel":
        if isinstance(value, HardLabel):
            return value
        if isinstance(value, int):
            return cls(value)
        key = value.strip().lower().replace("_", "-").replace(" ", "-")
        if key in ("performance", "perf", "p", "1"):
            return cls.PERFORMANCE
        if key in ("non-performance", "nonperformance", "non-perf", "n", "0"):
            return cls.NON_PERFORMANCE
        raise ValidationError("label", f"unknown label {value!r}")


class LfVote(enum.IntEnum):
    ABSTAIN = -1
    NON_PERFORMANCE = 0
    PERFORMANCE = 1


@dataclass(frozen=True)
class SoftLabel:
    """Probability that a commit is performance-related."""

    p_performance: float

    def __post_init__(self):
        p = self.p_performance
        if not (isinstance(p, (int, float)) and 0.0 <= p <= 1.0):
            raise ValidationError("p_performance", f"must lie in [0, 1], got {p!r}")

    @property
    def p_non_performance(self) -> float:
        return 1.0 - self.p_performance

    @classmethod
    def from_hard(cls, label: HardLabel) -> "SoftLabel":
        return cls(1.0 if label is HardLabel.PERFORMANCE else 0.0)


def count_changed_lines(diff: str) -> int:
    """Added plus removed lines; file headers excluded."""
    return sum(
        1
        for line in diff.split("\n")
        if line[:1] in ("+", "-") and not line.startswith(("+++ ", "--- "))
    )


def _check_count(name: str, value: Any) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValidationError(name, f"must be a non-negative integer, got {value!r}")


@dataclass(frozen=True)
class CommitRecord:
    repo_id: str
    commit_sha: str
    message: str
    language: Language
    files_changed: int
    functions_changed: int
    function_before: str
    function_after: str
    diff: str
    stars: int
    committed_at: datetime

    def __post_init__(self):
        if not isinstance(self.repo_id, str) or self.repo_id.count("/") != 1:
            raise ValidationError("repo_id", f"expected 'owner/name', got {self.repo_id!r}")
        if not isinstance(self.commit_sha, str) or not SHA_RE.fullmatch(self.commit_sha):
            raise ValidationError("commit_sha", f"expected 40 lowercase hex chars, got {self.commit_sha!r}")
        object.__setattr__(self, "language", Language.parse(self.language))
        for name in ("files_changed", "functions_changed", "stars"):
            _check_count(name, getattr(self, name))
        for name in ("message", "function_before", "function_after", "diff"):
            if not isinstance(getattr(self, name), str):
                raise ValidationError(name, "must be text")
        if not self.function_before and not self.function_after:
            raise ValidationError("function_before", "function_before and function_after are both empty")
        # every touched function owns at least one changed line
        changed = count_changed_lines(self.diff)
        if self.functions_changed > changed:
            raise ValidationError(
                "functions_changed",
                f"{self.functions_changed} exceeds the {changed} changed lines in diff",
            )
        ts = self.committed_at
        if not isinstance(ts, datetime):
            raise ValidationError("committed_at", "must be a datetime")
        if ts.tzinfo is None:
            raise ValidationError("committed_at", "must be timezone-aware")
        object.__setattr__(self, "committed_at", ts.astimezone(timezone.utc).replace(microsecond=0))

    def to_json(self) -> dict:
        return {
            "repo_id": self.repo_id,
            "commit_sha": self.commit_sha,
            "message": self.message,
            "language": self.language.value,
            "files_changed": self.files_changed,
            "functions_changed": self.functions_changed,
            "function_before": self.function_before,
            "function_after": self.function_after,
            "diff": self.diff,
            "stars": self.stars,
            "committed_at": format_timestamp(self.committed_at),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CommitRecord":
        missing = [f for f in FIELDS if f not in obj]
        if missing:
            raise ValidationError(missing[0], "missing field")
        values = {f: obj[f] for f in FIELDS}
        values["committed_at"] = parse_timestamp(values["committed_at"])
        return cls(**values)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    if not isinstance(text, str):
        raise ValidationError("committed_at", f"expected ISO-8601 string, got {text!r}")
    try:
        ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise ValidationError("committed_at", f"not ISO-8601: {text!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def dumps_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=False) + "\n"


def provenance_comment(provenance: dict) -> str:
    """Footer line for CSV and text artifacts; readers skip lines starting with ``#``."""
    return "# " + json.dumps({PROVENANCE_KEY: provenance}, sort_keys=True) + "\n"


def _text_sink(sink: IO) -> IO[str]:
    if isinstance(sink, io.TextIOBase):
        return sink
    return io.TextIOWrapper(sink, encoding="utf-8", newline="\n", write_through=True)


def write_records(
    records: Iterable[CommitRecord], sink: IO, provenance: dict | None = None
) -> int:
    """Write records as JSONL and return how many were written.

    ``sink`` may be a binary or text stream. The provenance line, when given,
    is not counted.
    """
    out = _text_sink(sink)
    if provenance is not None:
        out.write(dumps_line({PROVENANCE_KEY: provenance}))
    n = 0
    for rec in records:
        if not isinstance(rec, CommitRecord):
            raise ValidationError("record", f"expected CommitRecord, got {type(rec).__name__}")
        out.write(dumps_line(rec.to_json()))
        n += 1
    out.flush()
    if out is not sink:
        out.detach()
    return n


def iter_json_lines(source: IO, name: str | None = None) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_no, object)`` for each non-blank, non-provenance line."""
    for line_no, raw in enumerate(source, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordParseError(line_no, f"malformed JSON ({exc.msg})", name) from None
        if not isinstance(obj, dict):
            raise RecordParseError(line_no, "expected a JSON object", name)
        if PROVENANCE_KEY in obj:
            continue
        yield line_no, obj


def read_records(source: IO, name: str | None = None) -> Iterator[CommitRecord]:
    """Stream records from JSONL. Unknown fields are ignored."""
    for line_no, obj in iter_json_lines(source, name):
        try:
            yield CommitRecord.from_json(obj)
        except ValidationError as exc:
            raise RecordParseError(line_no, str(exc), name) from None
