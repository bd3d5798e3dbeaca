from __future__ import annotations

import random
import sys
from datetime import datetime, timezone
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixture_repo import build_fixture_repo  # noqa: E402

from perfminer.records import CommitRecord, Language  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"

RESERVE_DIFF = """diff --git a/matrix.cpp b/matrix.cpp
--- a/matrix.cpp
+++ b/matrix.cpp
@@ -3,2 +3,3 @@ std::vector<double> multiply(const std::vector<double>& a, double k) {
 std::vector<double> multiply(const std::vector<double>& a, double k) {
     std::vector<double> out;
+    out.reserve(a.size());
"""

RESERVE_BEFORE = """std::vector<double> multiply(const std::vector<double>& a, double k) {
    std::vector<double> out;
    for (double x : a) {
        out.push_back(x * k);
    }
    return out;
}
"""

RESERVE_AFTER = RESERVE_BEFORE.replace(
    "    std::vector<double> out;\n", "    std::vector<double> out;\n    out.reserve(a.size());\n"
)


@pytest.fixture
def reserve_record() -> CommitRecord:
    return CommitRecord(
        repo_id="example/matrix",
        commit_sha="a" * 40,
        message="Reduce memory usage in multiply by reserving the output",
        language=Language.CPP,
        files_changed=1,
        functions_changed=1,
        function_before=RESERVE_BEFORE,
        function_after=RESERVE_AFTER,
        diff=RESERVE_DIFF,
        stars=100,
        committed_at=datetime(2024, 1, 6, 12, tzinfo=timezone.utc),
    )


def make_record(i: int, before: str | None = None, after: str | None = None, **kw) -> CommitRecord:
    fields = dict(
        repo_id=f"org/repo{i % 3}",
        commit_sha=f"{i:040x}",
        message=f"Speed up step {i}",
        language=Language.PYTHON,
        files_changed=1,
        functions_changed=1,
        function_before=before if before is not None else f"def f{i}():\n    return {i}\n",
        function_after=after if after is not None else f"def f{i}():\n    return {i} + 1\n",
        diff=f"@@ -1,2 +1,2 @@\n def f{i}():\n-    return {i}\n+    return {i} + 1\n",
        stars=25,
        committed_at=datetime(2024, 1, 1, tzinfo=timezone.utc),
    )
    fields.update(kw)
    return CommitRecord(**fields)


@pytest.fixture(scope="session")
def fixture_repo(tmp_path_factory):
    path = tmp_path_factory.mktemp("fixture") / "repo"
    shas = build_fixture_repo(path)
    return path, shas


# --- synthetic commit-message corpus -------------------------------------------------

PERF_TEMPLATES = [
    "Speed up {obj} by {how}",
    "Reduce latency of {obj} lookups",
    "Optimize {obj} for large inputs",
    "Make {obj} faster with {how}",
    "Fix slow {obj} on startup",
    "Improve throughput of {obj}",
    "Avoid memory allocation in {obj}",
    "Cache {obj} results to cut overhead",
]
NONPERF_TEMPLATES = [
    "Fix typo in {obj} docs",
    "Add unit tests for {obj}",
    "Rename {obj} helper",
    "Update changelog for {obj}",
    "Fix crash when {obj} is empty",
    "Refactor {obj} error messages",
    "Bump version of {obj} dependency",
    "Add license header to {obj}",
]
OBJECTS = ["parser", "tokenizer", "renderer", "scheduler", "index", "query planner", "serializer", "config loader"]
HOWS = ["batching writes", "precomputing tables", "reusing buffers", "a lookup table", "vectorized loops"]


def synthetic_corpus(n: int, seed: int, cycle: bool = False) -> list[tuple[str, int]]:
    """Balanced (message, label) pairs; perf messages carry clear vocabulary cues.

    With ``cycle`` the templates are used round-robin instead of drawn at
    random, so every template is equally represented.
    """
    rng = random.Random(seed)
    out = []
    for i in range(n):
        perf = i % 2 == 0
        templates = PERF_TEMPLATES if perf else NONPERF_TEMPLATES
        tpl = templates[(i // 2) % len(templates)] if cycle else rng.choice(templates)
        msg = tpl.format(obj=rng.choice(OBJECTS), how=rng.choice(HOWS)) + f" (#{rng.randint(1, 9999)})"
        out.append((msg, int(perf)))
    return out


# --- acceptance summary ----------------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
