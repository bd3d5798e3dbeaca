"""Repository miner: walks git history and emits single-function performance commits."""

from __future__ import annotations

import csv
import hashlib
import logging
import os
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Callable, Iterable, Iterator, Sequence

from .diffs import (
    count_changed_functions,
    enclosing,
    extract_function,
    function_spans,
    language_for_path,
    parse_unified_diff,
    changed_lines,
)
from .errors import ConfigError, DiffParseError, GitError, RecordParseError
from .records import CommitRecord, HardLabel, Language, iter_json_lines, write_records

logger = logging.getLogger(__name__)

Classifier = Callable[[str], HardLabel]

EMPTY_TREE = "4b825dc642cb6eb9a060e54bf8d69288fbee4904"
_NORMALIZE = str.maketrans("", "", "\n\r\t ")

# Map each language to git's built-in diff driver so hunk headers carry the
# enclosing function.
_ATTRIBUTES = "\n".join(
    [
        "*.py diff=python",
        "*.java diff=java",
        *(f"*{ext} diff=cpp" for ext in (".cc", ".cpp", ".cxx", ".c++", ".hpp", ".hh", ".hxx", ".h", ".ipp", ".inl")),
    ]
) + "\n"


def normalize_code(text: str) -> str:
    """Drop every newline, carriage return, tab and space character."""
    return text.translate(_NORMALIZE)


def dedup_key(before: str, after: str) -> str:
    """Hex MD5 of the normalized pair, separated by a NUL byte."""
    h = hashlib.md5()
    h.update(normalize_code(before).encode("utf-8"))
    h.update(b"\x00")
    h.update(normalize_code(after).encode("utf-8"))
    return h.hexdigest()


class DedupIndex:
    """Set of dedup digests seen so far."""

    def __init__(self, digests: Iterable[str] = ()):
        self.digests: set[str] = set(digests)

    def __len__(self) -> int:
        return len(self.digests)

    def __contains__(self, digest: str) -> bool:
        return digest in self.digests

    def add(self, digest: str) -> bool:
        """Insert ``digest``; return False if it was already present."""
        if digest in self.digests:
            return False
        self.digests.add(digest)
        return True

    def export(self, sink: IO[str]) -> int:
        for d in sorted(self.digests):
            sink.write(d + "\n")
        return len(self.digests)

    @classmethod
    def load(cls, source: IO[str]) -> "DedupIndex":
        return cls(s for s in map(str.strip, source) if s and not s.startswith("#"))


@dataclass(frozen=True)
class MinerConfig:
    languages: frozenset[Language] = frozenset(Language)
    min_stars: int = 20
    max_functions_changed: int = 1
    branch: str = "main"
    fallback_branch: str = "master"
    workers: int = 1

    def __post_init__(self):
        langs = frozenset(Language.parse(x) for x in self.languages)
        if not langs:
            raise ConfigError("at least one language must be configured")
        object.__setattr__(self, "languages", langs)
        if self.max_functions_changed < 1:
            raise ConfigError("max_functions_changed must be >= 1")
        if self.min_stars < 0:
            raise ConfigError("min_stars must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


# --- git plumbing ----------------------------------------------------------------


class Git:
    def __init__(self, path: str | Path, attributes_file: str | Path | None = None):
        self.path = Path(path)
        self.attributes_file = attributes_file

    def run(self, *args: str, check: bool = True) -> str:
        cmd = ["git", "-C", str(self.path), "-c", "core.quotepath=off"]
        if self.attributes_file:
            cmd += ["-c", f"core.attributesFile={self.attributes_file}"]
        cmd += list(args)
        proc = subprocess.run(cmd, capture_output=True, env={**os.environ, "LC_ALL": "C"})
        if check and proc.returncode != 0:
            raise GitError(f"git {' '.join(args)} failed: {proc.stderr.decode(errors='replace').strip()}")
        return proc.stdout.decode("utf-8", errors="replace")

    def resolve_branch(self, branch: str, fallback: str | None) -> str:
        for name in (branch, fallback):
            if not name:
                continue
            for ref in (f"refs/heads/{name}", f"refs/remotes/origin/{name}"):
                proc = self.run("rev-parse", "--verify", "--quiet", ref + "^{commit}", check=False)
                if proc.strip():
                    return ref
        raise GitError(f"{self.path}: neither branch {branch!r} nor {fallback!r} exists")

    def is_empty(self) -> bool:
        return not self.run("rev-parse", "--verify", "--quiet", "HEAD", check=False).strip()

    def first_parent_history(self, ref: str) -> list[str]:
        out = self.run("rev-list", "--first-parent", "--reverse", ref)
        return out.split()

    def commit_meta(self, sha: str) -> tuple[str | None, int, str]:
        out = self.run("show", "-s", "--format=%P%x00%ct%x00%B", sha)
        parents, ts, message = out.split("\x00", 2)
        parent = parents.split()[0] if parents.split() else None
        return parent, int(ts), message.rstrip("\n")

    def diff(self, parent: str | None, sha: str) -> str:
        return self.run(
            "diff", "--no-color", "--no-ext-diff", "--no-renames", "-U3", parent or EMPTY_TREE, sha
        )

    def blob(self, sha: str, path: str) -> str:
        return self.run("show", f"{sha}:{path}", check=False)


# --- mining ----------------------------------------------------------------------


@dataclass
class MiningStats:
    commits_seen: int = 0
    emitted: int = 0
    duplicates: int = 0
    skipped: dict[str, int] = field(default_factory=dict)

    def skip(self, reason: str) -> None:
        self.skipped[reason] = self.skipped.get(reason, 0) + 1


def _function_pair(git: Git, parent: str | None, sha: str, path: str, lang: Language, diff: str, name: str):
    files = [fd for fd in parse_unified_diff(diff) if fd.path == path]
    fd = files[0]
    old_src = git.blob(parent, fd.old_path) if parent and fd.old_path else ""
    new_src = git.blob(sha, fd.new_path) if fd.new_path else ""
    old_spans = function_spans(old_src, lang)
    new_spans = function_spans(new_src, lang)
    # locate the occurrence index of the changed function among same-named ones
    occurrence_new = occurrence_old = 0
    for hunk in fd.hunks:
        for cl in changed_lines(hunk):
            spans, no = (new_spans, cl.new_no) if cl.side == "+" else (old_spans, cl.old_no)
            span = enclosing(spans, no)
            if span is not None and span.name == name:
                same = [s for s in spans if s.name == name]
                idx = same.index(span)
                if cl.side == "+":
                    occurrence_new = idx
                    occurrence_old = min(idx, max(0, sum(s.name == name for s in old_spans) - 1))
                else:
                    occurrence_old = idx
                    occurrence_new = min(idx, max(0, sum(s.name == name for s in new_spans) - 1))
                break
        else:
            continue
        break
    before = extract_function(old_src, lang, name, occurrence_old) if old_src else ""
    after = extract_function(new_src, lang, name, occurrence_new) if new_src else ""
    return before, after


def mine_repository(
    path: str | Path,
    config: MinerConfig,
    index: DedupIndex,
    classifier: Classifier,
    repo_id: str | None = None,
    stars: int = 0,
    stats: MiningStats | None = None,
) -> Iterator[CommitRecord]:
    """Yield single-function performance commits along the first-parent history.

    Commits are visited oldest first. Each commit must touch a source file of
    a configured language, change at most ``max_functions_changed`` functions
    and be classified as performance. Records whose dedup key is already in
    ``index`` are dropped. Per-commit failures are logged and skipped.
    """
    path = Path(path)
    stats = stats if stats is not None else MiningStats()
    repo_id = repo_id or f"local/{path.resolve().name}"
    fd, attr_name = tempfile.mkstemp(prefix="perfminer-", suffix=".gitattributes")
    attr_file = Path(attr_name)
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(_ATTRIBUTES)
    try:
        git = Git(path, attr_file)
        if git.is_empty():
            return
        ref = git.resolve_branch(config.branch, config.fallback_branch)
        for sha in git.first_parent_history(ref):
            stats.commits_seen += 1
            try:
                record = _mine_commit(git, sha, config, index, classifier, repo_id, stars, stats)
            except (GitError, DiffParseError, ValueError) as exc:
                logger.warning("%s %s: skipped (%s)", repo_id, sha[:10], exc)
                stats.skip("extraction failure")
                continue
            if record is not None:
                stats.emitted += 1
                yield record
    finally:
        attr_file.unlink(missing_ok=True)


def _mine_commit(git, sha, config, index, classifier, repo_id, stars, stats) -> CommitRecord | None:
    parent, ts, message = git.commit_meta(sha)
    diff = git.diff(parent, sha)
    files = parse_unified_diff(diff)
    if not any(language_for_path(fd.path) in config.languages for fd in files):
        stats.skip("language")
        return None
    sources = {}
    for fd in files:
        lang = language_for_path(fd.path)
        if lang is None:
            continue
        old_src = git.blob(parent, fd.old_path) if parent and fd.old_path else ""
        new_src = git.blob(sha, fd.new_path) if fd.new_path else ""
        sources[fd.path] = (old_src, new_src)
    count, changes = count_changed_functions(diff, sources)
    if count == 0 or count > config.max_functions_changed:
        stats.skip("functions changed")
        return None
    if any(c.anonymous for c in changes):
        stats.skip("unattributed change")
        return None
    langs = {language_for_path(c.file_path) for c in changes}
    if len(langs) != 1 or not langs <= config.languages:
        stats.skip("language")
        return None
    lang = langs.pop()
    if classifier(message) is not HardLabel.PERFORMANCE:
        stats.skip("classifier")
        return None
    # several changed functions (only when the limit allows it) are joined in diff order
    befores, afters = [], []
    for change in changes:
        b, a = _function_pair(git, parent, sha, change.file_path, lang, diff, change.function_name)
        if not b and not a:
            stats.skip("extraction failure")
            return None
        befores.append(b)
        afters.append(a)
    before, after = "\n".join(x for x in befores if x), "\n".join(x for x in afters if x)
    if before == after:
        stats.skip("function unchanged")
        return None
    if not index.add(dedup_key(before, after)):
        stats.duplicates += 1
        return None
    return CommitRecord(
        repo_id=repo_id,
        commit_sha=sha,
        message=message,
        language=lang,
        files_changed=len(files),
        functions_changed=count,
        function_before=before,
        function_after=after,
        diff=diff,
        stars=stars,
        committed_at=datetime.fromtimestamp(ts, tz=timezone.utc),
    )


# --- manifest and distributed operation --------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    url: str
    language: Language
    stars: int

    @property
    def repo_id(self) -> str:
        tail = self.url.rstrip("/").removesuffix(".git").replace(":", "/").split("/")
        return f"{tail[-2]}/{tail[-1]}" if len(tail) >= 2 and tail[-2] else f"local/{tail[-1]}"


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a ``url,language,stars`` CSV (header row required)."""
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"url", "language", "stars"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: manifest needs columns url,language,stars")
        for row in reader:
            entries.append(ManifestEntry(row["url"].strip(), Language.parse(row["language"]), int(row["stars"])))
    return entries


def select_repositories(entries: Sequence[ManifestEntry], config: MinerConfig) -> list[ManifestEntry]:
    return [e for e in entries if e.stars >= config.min_stars and e.language in config.languages]


def _local_checkout(entry: ManifestEntry, clone_root: Path) -> Path:
    local = Path(entry.url)
    if local.exists():
        return local
    dest = clone_root / entry.repo_id.replace("/", "__")
    if not dest.exists():
        proc = subprocess.run(["git", "clone", "--quiet", entry.url, str(dest)], capture_output=True)
        if proc.returncode != 0:
            raise GitError(f"clone of {entry.url} failed: {proc.stderr.decode(errors='replace').strip()}")
    return dest


def mine_manifest(
    entries: Sequence[ManifestEntry],
    config: MinerConfig,
    classifier: Classifier,
    out_dir: str | Path,
    clone_root: str | Path | None = None,
    provenance: dict | None = None,
) -> list[Path]:
    """Mine repositories across ``config.workers`` workers.

    Worker ``k`` takes every repository whose position modulo ``workers`` is
    ``k``, keeps a private :class:`DedupIndex` and writes
    ``shard-{k}.jsonl``. Cross-worker duplicates remain until
    :func:`merge_shards`.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clone_root = Path(clone_root) if clone_root else out_dir / "clones"
    selected = select_repositories(entries, config)

    def work(k: int) -> Path:
        index = DedupIndex()
        shard = out_dir / f"shard-{k}.jsonl"
        records: list[CommitRecord] = []
        for entry in selected[k :: config.workers]:
            try:
                checkout = _local_checkout(entry, clone_root)
                records.extend(
                    mine_repository(checkout, config, index, classifier, entry.repo_id, entry.stars)
                )
            except GitError as exc:
                logger.error("worker %d: %s skipped (%s)", k, entry.url, exc)
        with shard.open("w", encoding="utf-8", newline="\n") as fh:
            write_records(records, fh, provenance)
        return shard

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(work, range(config.workers)))


def merge_shards(
    shard_paths: Sequence[str | Path],
    sink: IO,
    index: DedupIndex | None = None,
    provenance: dict | None = None,
) -> tuple[int, int]:
    """Concatenate shards keeping the first record per dedup key.

    Returns ``(records_written, duplicates_dropped)``.
    """
    index = index if index is not None else DedupIndex()
    dropped = 0

    def unique() -> Iterator[CommitRecord]:
        nonlocal dropped
        for shard in shard_paths:
            with open(shard, encoding="utf-8") as fh:
                for line_no, obj in iter_json_lines(fh, str(shard)):
                    try:
                        rec = CommitRecord.from_json(obj)
                    except ValueError as exc:
                        raise RecordParseError(line_no, str(exc), str(shard)) from None
                    if index.add(dedup_key(rec.function_before, rec.function_after)):
                        yield rec
                    else:
                        dropped += 1

    written = write_records(unique(), sink, provenance)
    return written, dropped
