"""Response-based knowledge distillation from an LLM teacher into a linear student."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import CheckpointError, ResponseParseError, TransportError
from .gateway import LlmGateway
from .linear import LinearTextModel, TrainConfig, train
from .records import SoftLabel
from .weak import build_balanced_set

logger = logging.getLogger(__name__)


def message_digest(message: str) -> str:
    return hashlib.sha256(message.encode("utf-8")).hexdigest()


def teacher_label(gateway: LlmGateway, message: str) -> tuple[SoftLabel, str]:
    """Soft label from the teacher plus the raw response text.

    Falls back to a one-hot distribution when the service returns no class
    probabilities. Raises :class:`ResponseParseError` on an unusable answer.
    """
    resp = gateway.classify(message)
    if resp.p_performance is not None:
        return SoftLabel(resp.p_performance), resp.raw_text
    return SoftLabel.from_hard(resp.label), resp.raw_text


@dataclass(frozen=True)
class CacheEntry:
    message_sha256: str
    p_performance: float | None
    raw_text: str


class TeacherCache:
    """Append-only JSONL cache of teacher answers keyed by message digest.

    A ``null`` probability records a response that could not be parsed, so
    the message is not re-queried on resume.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.entries: dict[str, CacheEntry] = {}
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        entry = CacheEntry(**json.loads(line))
                        self.entries.setdefault(entry.message_sha256, entry)

    def __contains__(self, digest: str) -> bool:
        return digest in self.entries

    def get(self, digest: str) -> CacheEntry | None:
        return self.entries.get(digest)

    def add(self, entry: CacheEntry) -> None:
        self.entries[entry.message_sha256] = entry
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(asdict(entry), ensure_ascii=False) + "\n")


@dataclass
class DistillReport:
    corpus_size: int = 0
    distinct_messages: int = 0
    queried: int = 0
    cache_hits: int = 0
    teacher_performance: int = 0
    teacher_non_performance: int = 0
    skipped: int = 0
    parse_errors: list[str] = field(default_factory=list)
    n_per_class: int = 0
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float | None:
        return self.epoch_losses[-1] if self.epoch_losses else None

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["final_loss"] = self.final_loss
        return doc


def _ask(gateway: LlmGateway, message: str) -> CacheEntry:
    digest = message_digest(message)
    try:
        label, raw = teacher_label(gateway, message)
    except ResponseParseError as exc:
        return CacheEntry(digest, None, exc.raw_text)
    return CacheEntry(digest, label.p_performance, raw)


def label_corpus(
    corpus: Sequence[str],
    gateway: LlmGateway,
    cache: TeacherCache,
    workers: int = 4,
    report: DistillReport | None = None,
) -> list[SoftLabel | None]:
    """Teacher-label every message, consulting and extending ``cache``.

    Each distinct message is sent at most once. Results are assembled in
    corpus order. A transport failure saves progress and raises
    :class:`CheckpointError`; rerunning with the same cache resumes.
    """
    report = report if report is not None else DistillReport()
    digests = [message_digest(m) for m in corpus]
    todo: dict[str, str] = {}
    for msg, d in zip(corpus, digests):
        if d not in cache and d not in todo:
            todo[d] = msg
    report.corpus_size = len(corpus)
    report.distinct_messages = len(set(digests))
    report.cache_hits = report.distinct_messages - len(todo)
    pending = list(todo.values())
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(_ask, gateway, msg) for msg in pending]
        failure: TransportError | None = None
        for fut in futures:
            if failure is not None and fut.cancel():
                continue
            try:
                entry = fut.result()
            except TransportError as exc:
                if failure is None:
                    failure = exc
                    for later in futures:
                        later.cancel()
                continue
            # answers that were already in flight are still kept
            cache.add(entry)
            report.queried += 1
    if failure is not None:
        raise CheckpointError(
            f"teacher unavailable after {report.queried} new labels ({failure}); "
            "rerun with the same cache to resume"
        ) from failure
    labels: list[SoftLabel | None] = []
    for msg, d in zip(corpus, digests):
        entry = cache.get(d)
        if entry.p_performance is None:
            labels.append(None)
            report.skipped += 1
            report.parse_errors.append(f"{d[:12]}: unparseable teacher response {entry.raw_text!r}")
            continue
        label = SoftLabel(entry.p_performance)
        labels.append(label)
        if label.p_performance >= 0.5:
            report.teacher_performance += 1
        else:
            report.teacher_non_performance += 1
    return labels


def distill(
    corpus: Sequence[str],
    gateway: LlmGateway,
    n_per_class: int,
    train_config: TrainConfig | None = None,
    seed: int = 0,
    cache_path: str | Path | None = None,
    workers: int = 4,
) -> tuple[LinearTextModel, DistillReport]:
    """Label ``corpus`` with the teacher, balance it and train the student."""
    train_config = train_config or TrainConfig(seed=seed)
    report = DistillReport(n_per_class=n_per_class)
    cache = TeacherCache(cache_path)
    labels = label_corpus(corpus, gateway, cache, workers, report)
    kept = [(m, lab) for m, lab in zip(corpus, labels) if lab is not None]
    balanced = build_balanced_set(
        [m for m, _ in kept], [(lab, False) for _, lab in kept], n_per_class, seed
    )
    model = train(balanced, train_config, on_epoch=lambda e, loss: report.epoch_losses.append(loss))
    logger.info(
        "distilled student on %d examples (teacher: %d perf / %d non-perf, %d skipped)",
        len(balanced),
        report.teacher_performance,
        report.teacher_non_performance,
        report.skipped,
    )
    return model, report
