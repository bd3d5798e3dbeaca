"""Unified-diff parsing and heuristic function attribution.

No language is parsed properly. Python functions are found by ``def``/``class``
lines and indentation; C++ and Java by signature-looking lines followed by a
balanced brace block. When attribution fails, a hunk counts as its own
anonymous function. That over-counts, so tangled commits get excluded rather
than admitted.
"""

from __future__ import annotations

import posixpath
import re
from dataclasses import dataclass, field
from typing import Mapping

from .errors import DiffParseError
from .records import Language

EXTENSIONS = {
    ".py": Language.PYTHON,
    ".java": Language.JAVA,
    ".cc": Language.CPP,
    ".cpp": Language.CPP,
    ".cxx": Language.CPP,
    ".c++": Language.CPP,
    ".hpp": Language.CPP,
    ".hh": Language.CPP,
    ".hxx": Language.CPP,
    ".h": Language.CPP,
    ".ipp": Language.CPP,
    ".inl": Language.CPP,
}


def language_for_path(path: str | None) -> Language | None:
    if not path:
        return None
    return EXTENSIONS.get(posixpath.splitext(path)[1].lower())


@dataclass
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    context: str
    lines: list[str] = field(default_factory=list)


@dataclass
class FileDiff:
    old_path: str | None
    new_path: str | None
    hunks: list[Hunk] = field(default_factory=list)
    binary: bool = False

    @property
    def path(self) -> str:
        return self.new_path or self.old_path or ""


_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@ ?(.*)$")
_GIT_HEADER_RE = re.compile(r"^diff --git (?:\"?a/)?(.+?)\"? (?:\"?b/)?(.+?)\"?$")


def _strip_prefix(path: str) -> str | None:
    path = path.split("\t", 1)[0].strip().strip('"')
    if path == "/dev/null":
        return None
    if path[:2] in ("a/", "b/"):
        return path[2:]
    return path


def parse_unified_diff(text: str) -> list[FileDiff]:
    files: list[FileDiff] = []
    current: FileDiff | None = None
    hunk: Hunk | None = None
    old_left = new_left = 0
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for no, line in enumerate(lines, start=1):
        if hunk is not None and (old_left > 0 or new_left > 0):
            tag = line[:1]
            if tag == " " or line == "":
                old_left -= 1
                new_left -= 1
                hunk.lines.append(line if line else " ")
            elif tag == "-":
                old_left -= 1
                hunk.lines.append(line)
            elif tag == "+":
                new_left -= 1
                hunk.lines.append(line)
            elif tag == "\\":
                pass
            else:
                raise DiffParseError(f"line {no}: hunk ended early ({line[:40]!r})")
            if old_left < 0 or new_left < 0:
                raise DiffParseError(f"line {no}: hunk longer than its header declares")
            continue
        if line.startswith("\\"):
            continue
        if line.startswith("diff --git "):
            m = _GIT_HEADER_RE.match(line)
            current = FileDiff(m.group(1) if m else None, m.group(2) if m else None)
            files.append(current)
            hunk = None
            continue
        if line.startswith("--- "):
            old = _strip_prefix(line[4:])
            if current is None or current.hunks:
                current = FileDiff(old, None)
                files.append(current)
            else:
                current.old_path = old
            hunk = None
            continue
        if line.startswith("+++ ") and current is not None and not current.hunks:
            current.new_path = _strip_prefix(line[4:])
            continue
        if line.startswith("@@"):
            m = _HUNK_RE.match(line)
            if not m:
                raise DiffParseError(f"line {no}: malformed hunk header {line!r}")
            if current is None:
                raise DiffParseError(f"line {no}: hunk before any file header")
            old_len = int(m.group(2)) if m.group(2) is not None else 1
            new_len = int(m.group(4)) if m.group(4) is not None else 1
            hunk = Hunk(int(m.group(1)), old_len, int(m.group(3)), new_len, m.group(5))
            current.hunks.append(hunk)
            old_left, new_left = old_len, new_len
            continue
        if line.startswith("Binary files ") and current is not None:
            current.binary = True
            continue
        if current is None and line.strip() and not _is_preamble(line):
            raise DiffParseError(f"line {no}: not a unified diff ({line[:40]!r})")
        if current is not None and line[:1] in ("+", "-") and line != "-- ":
            raise DiffParseError(f"line {no}: changed line outside any hunk ({line[:40]!r})")
    if hunk is not None and (old_left > 0 or new_left > 0):
        raise DiffParseError("diff truncated inside a hunk")
    return files


def _is_preamble(line: str) -> bool:
    # Lines that may precede the first file header (e.g. `git format-patch` mail headers).
    return not line.startswith(("+", "-", " ", "@"))


# --- function scanners ---------------------------------------------------------

_PY_DEF_RE = re.compile(r"^([ \t]*)(?:async[ \t]+)?(def|class)[ \t]+([A-Za-z_]\w*)")
_CONTROL = {
    "if", "for", "while", "switch", "catch", "return", "else", "do", "new", "delete",
    "throw", "sizeof", "case", "synchronized", "try", "using", "typedef", "static_assert",
    "decltype", "alignof", "assert", "super", "this",
}
_BRACE_SIG_RE = re.compile(
    r"^\s*(?:template\s*<[^>]*>\s*)?"
    r"((?:[\w:<>,\*&\[\]~]+\s+)+[\*&]*|[\w:<>]*::)"
    r"(~?[A-Za-z_][\w]*(?:::~?[A-Za-z_]\w*)*)\s*\("
)
_STRING_RE = re.compile(r'"(?:\\.|[^"\\])*"|\'(?:\\.|[^\'\\])*\'')


def _code_only(line: str) -> str:
    line = _STRING_RE.sub('""', line)
    return line.split("//", 1)[0]


def brace_signature(line: str) -> str | None:
    """Function name if ``line`` looks like a C++/Java definition header."""
    code = _code_only(line)
    stripped = code.strip()
    if not stripped or stripped.startswith(("#", "*", "/*", "}", ".")):
        return None
    m = _BRACE_SIG_RE.match(code)
    if not m:
        return None
    prefix, name = m.group(1), m.group(2)
    before_paren = code[: m.end()]
    if "=" in before_paren or "return" in prefix.split() or "." in before_paren:
        return None
    simple = name.rsplit("::", 1)[-1].lstrip("~")
    first_word = stripped.split()[0].split("(")[0]
    if simple in _CONTROL or first_word in _CONTROL:
        return None
    if stripped.endswith(";"):
        return None
    return name


def python_def(line: str) -> tuple[int, str, str] | None:
    """``(indent, kind, name)`` for a ``def``/``class`` line."""
    m = _PY_DEF_RE.match(line)
    if not m:
        return None
    return len(m.group(1).expandtabs(8)), m.group(2), m.group(3)


def _indent(line: str) -> int:
    expanded = line.expandtabs(8)
    return len(expanded) - len(expanded.lstrip())


def _py_continuation(line: str) -> bool:
    """Blank, comment or closing-bracket lines never end a Python block."""
    stripped = line.strip()
    return not stripped or stripped.startswith(("#", ")", "]", "}"))


@dataclass(frozen=True)
class FunctionSpan:
    name: str
    start: int  # 1-based, inclusive
    end: int

    def contains(self, line_no: int) -> bool:
        return self.start <= line_no <= self.end


def python_spans(source: str) -> list[FunctionSpan]:
    lines = source.split("\n")
    spans: list[FunctionSpan] = []
    stack: list[tuple[int, str, int]] = []  # (indent, qualified name, start)
    last_code = 0

    def close(upto_indent: int, at: int):
        while stack and stack[-1][0] >= upto_indent:
            ind, qname, start = stack.pop()
            spans.append(FunctionSpan(qname, start, max(start, at)))

    for no, line in enumerate(lines, start=1):
        if _py_continuation(line):
            continue
        ind = _indent(line)
        d = python_def(line)
        if stack and ind <= stack[-1][0]:
            close(ind, last_code)
        if d is not None:
            _, _, name = d
            parent = stack[-1][1] + "." if stack else ""
            stack.append((ind, parent + name, no))
        last_code = no
    close(-1, last_code)
    spans.sort(key=lambda s: (s.start, -s.end))
    return spans


def brace_spans(source: str) -> list[FunctionSpan]:
    lines = source.split("\n")
    spans: list[FunctionSpan] = []
    i = 0
    n = len(lines)
    while i < n:
        name = brace_signature(lines[i])
        if name is None:
            i += 1
            continue
        # find the opening brace before any terminating semicolon
        depth = 0
        opened = False
        end = None
        j = i
        while j < n:
            code = _code_only(lines[j])
            for ch in code:
                if ch == ";" and not opened:
                    end = -1
                    break
                if ch == "{":
                    depth += 1
                    opened = True
                elif ch == "}":
                    depth -= 1
                    if opened and depth == 0:
                        end = j
                        break
            if end is not None:
                break
            if not opened and j - i > 8:
                end = -1
                break
            j += 1
        if end is None or end < 0:
            i += 1
            continue
        spans.append(FunctionSpan(name, i + 1, end + 1))
        i = end + 1
    return spans


def function_spans(source: str, language: Language) -> list[FunctionSpan]:
    if language is Language.PYTHON:
        return python_spans(source)
    return brace_spans(source)


def enclosing(spans: list[FunctionSpan], line_no: int) -> FunctionSpan | None:
    """Innermost span containing ``line_no``."""
    best = None
    for s in spans:
        if s.contains(line_no) and (best is None or s.end - s.start <= best.end - best.start):
            best = s
    return best


# --- attribution -----------------------------------------------------------------


@dataclass(frozen=True)
class FunctionChange:
    file_path: str
    function_name: str  # "" when attribution failed
    before: str = ""
    after: str = ""
    hunks: int = 1

    @property
    def anonymous(self) -> bool:
        return not self.function_name


@dataclass(frozen=True)
class ChangedLine:
    side: str  # "-" or "+"
    old_no: int  # old-file line (for "+" lines: the old line it is inserted before)
    new_no: int  # new-file line (for "-" lines: the new line at the deletion point)


def changed_lines(hunk: Hunk) -> list[ChangedLine]:
    out = []
    old_no, new_no = hunk.old_start, hunk.new_start
    for line in hunk.lines:
        tag = line[:1]
        if tag == "-":
            out.append(ChangedLine("-", old_no, new_no))
            old_no += 1
        elif tag == "+":
            out.append(ChangedLine("+", old_no, new_no))
            new_no += 1
        else:
            old_no += 1
            new_no += 1
    return out


def _context_function(context: str, language: Language) -> tuple[str, int] | None:
    if not context:
        return None
    if language is Language.PYTHON:
        d = python_def(context)
        return (d[2], d[0]) if d else None
    name = brace_signature(context)
    return (name, 0) if name else None


def _hunk_functions_from_text(hunk: Hunk, language: Language) -> list[str | None]:
    """Attribute each changed line of a hunk using only the diff text."""
    header = _context_function(hunk.context, language)
    current: str | None = header[0] if header else None
    py_indent = header[1] if header else 0
    depth, opened = (1, True) if header else (0, False)
    side = " +"
    out: list[str | None] = []
    for line in hunk.lines:
        tag, body = line[:1], line[1:]
        if language is Language.PYTHON:
            d = python_def(body)
            if d is not None:
                current, py_indent = d[2], d[0]
            elif current is not None and not _py_continuation(body):
                if _indent(body) <= py_indent:
                    current = None
            if tag in "+-":
                out.append(current)
            continue
        name = None
        if not (current is not None and opened and depth > 0):
            name = brace_signature(body)
        if name is not None:
            current, depth, opened = name, 0, False
            side = " -" if tag == "-" else " +"
        if tag in "+-":
            out.append(current)
        if current is not None and tag in side:
            for ch in _code_only(body):
                if ch == "{":
                    depth += 1
                    opened = True
                elif ch == "}":
                    depth -= 1
            if opened and depth <= 0:
                current = None
    return out


def count_changed_functions(
    diff: str,
    sources: Mapping[str, tuple[str, str]] | None = None,
) -> tuple[int, list[FunctionChange]]:
    """Count distinct ``(file, function)`` pairs touched by ``diff``.

    ``sources`` optionally maps a file path to its ``(old_text, new_text)``;
    with it, changed lines are attributed by scanning the whole file. Without
    it, the hunk header's function context and the hunk's own lines decide.
    Hunks in non-source files, and changed lines outside any function, count
    as one anonymous function per hunk.
    """
    files = parse_unified_diff(diff)
    order: list[tuple[str, str]] = []
    hunk_counts: dict[tuple[str, str], int] = {}
    for fd in files:
        path = fd.path
        lang = language_for_path(path)
        if fd.binary and not fd.hunks:
            key = (path, "")
            order.append(key)
            hunk_counts[key] = 1
            continue
        src = sources.get(path) if sources is not None and lang is not None else None
        old_spans = new_spans = None
        if src is not None:
            old_spans = function_spans(src[0], lang) if fd.old_path else []
            new_spans = function_spans(src[1], lang) if fd.new_path else []
        for h_idx, hunk in enumerate(fd.hunks):
            touched: list[str | None]
            if lang is None:
                touched = [None]
            elif src is not None:
                touched = []
                for cl in changed_lines(hunk):
                    span = enclosing(old_spans, cl.old_no) if cl.side == "-" else enclosing(new_spans, cl.new_no)
                    touched.append(span.name if span else None)
            else:
                touched = _hunk_functions_from_text(hunk, lang)
            seen_in_hunk = set()
            for name in touched:
                key = (path, name) if name else (path, f"<anonymous hunk {h_idx + 1}>")
                if key not in hunk_counts:
                    order.append(key)
                    hunk_counts[key] = 0
                if key not in seen_in_hunk:
                    hunk_counts[key] += 1
                    seen_in_hunk.add(key)
    changes = [
        FunctionChange(
            file_path=path,
            function_name="" if name.startswith("<anonymous") or not name else name,
            hunks=hunk_counts[(path, name)],
        )
        for path, name in order
    ]
    return len(changes), changes


def extract_function(source: str, language: Language, name: str, occurrence: int = 0) -> str:
    """Text of the ``occurrence``-th function called ``name``; "" if absent."""
    matches = [s for s in function_spans(source, language) if s.name == name]
    if len(matches) <= occurrence:
        return ""
    span = matches[occurrence]
    lines = source.split("\n")
    return "\n".join(lines[span.start - 1 : span.end]) + "\n"
