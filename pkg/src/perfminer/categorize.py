"""Two-level taxonomy, LLM-driven commit categorization and the significance table.

The significance of a subcategory within a language is the fraction of that
language's categorized commits assigned to it. Values are kept as exact
fractions; rounding happens only when a report is rendered.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from .errors import ConfigError, PerfminerError, ValidationError
from .records import CommitRecord, Language

logger = logging.getLogger(__name__)

# The catch-all category is left out of ranked reports unless asked for.
CATCH_ALL = "Other"


@dataclass(frozen=True)
class Subcategory:
    name: str
    description: str = ""


@dataclass(frozen=True)
class Category:
    name: str
    description: str = ""
    subcategories: tuple[Subcategory, ...] = ()

    @property
    def subcategory_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.subcategories)


@dataclass(frozen=True)
class Taxonomy:
    categories: tuple[Category, ...]

    def __post_init__(self):
        if not self.categories:
            raise ValidationError("categories", "taxonomy is empty")
        cats = [c.name for c in self.categories]
        if len(set(cats)) != len(cats):
            raise ValidationError("categories", "duplicate category name")
        subs = [s for c in self.categories for s in c.subcategory_names]
        if len(set(subs)) != len(subs):
            raise ValidationError("subcategories", "duplicate subcategory name")
        for c in self.categories:
            if not c.subcategories:
                raise ValidationError("subcategories", f"category {c.name!r} has no subcategories")

    def category(self, name: str) -> Category | None:
        for c in self.categories:
            if c.name == name:
                return c
        return None

    def category_of(self, subcategory: str) -> str:
        for c in self.categories:
            if subcategory in c.subcategory_names:
                return c.name
        raise ValidationError("subcategory", f"unknown subcategory {subcategory!r}")

    @property
    def pairs(self) -> list[tuple[str, str]]:
        """All (category, subcategory) pairs in taxonomy order."""
        return [(c.name, s.name) for c in self.categories for s in c.subcategories]

    @property
    def subcategory_names(self) -> list[str]:
        return [s for _, s in self.pairs]


def parse_taxonomy(text: str, source: str = "<taxonomy>") -> Taxonomy:
    cats: list[Category] = []
    current: dict | None = None

    def flush():
        if current is not None:
            cats.append(Category(current["name"], current["desc"], tuple(current["subs"])))

    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        marker, _, rest = line.partition(" ")
        name, _, desc = rest.partition("|")
        name, desc = name.strip(), desc.strip()
        if marker not in ("*", "-") or not name:
            raise ConfigError(f"{source}:{line_no}: expected '* Category | text' or '- Subcategory | text'")
        if marker == "*":
            flush()
            current = {"name": name, "desc": desc, "subs": []}
        else:
            if current is None:
                raise ConfigError(f"{source}:{line_no}: subcategory before any category")
            current["subs"].append(Subcategory(name, desc))
    flush()
    try:
        return Taxonomy(tuple(cats))
    except ValidationError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_taxonomy(path: str | Path) -> Taxonomy:
    path = Path(path)
    return parse_taxonomy(path.read_text(encoding="utf-8"), str(path))


def default_taxonomy() -> Taxonomy:
    text = resources.files("perfminer.data").joinpath("taxonomy.txt").read_text(encoding="utf-8")
    return parse_taxonomy(text, "taxonomy.txt")


# --- assignment ---------------------------------------------------------------


def assign_category(gateway, record: CommitRecord, taxonomy: Taxonomy) -> list[tuple[str, str]]:
    """Ask the model for the record's category pairs (may be several)."""
    return gateway.categorize(record, taxonomy)


@dataclass(frozen=True)
class Assignment:
    commit_sha: str
    language: Language
    pairs: tuple[tuple[str, str], ...] = ()
    error: str | None = None


def categorize_records(
    gateway, records: Sequence[CommitRecord], taxonomy: Taxonomy, workers: int = 4
) -> list[Assignment]:
    """Categorize every record; failures are recorded per record, never raised."""

    def one(rec: CommitRecord) -> Assignment:
        try:
            pairs = assign_category(gateway, rec, taxonomy)
        except (PerfminerError, ValueError) as exc:
            logger.warning("%s: categorization failed (%s)", rec.commit_sha[:10], exc)
            return Assignment(rec.commit_sha, rec.language, (), str(exc))
        return Assignment(rec.commit_sha, rec.language, tuple(pairs))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(one, records))


# --- counts and significance ----------------------------------------------------

CountKey = tuple[str, str, str]  # (language, category, subcategory)


@dataclass
class CategoryCounts:
    """Commit counts per (language, category, subcategory).

    ``totals`` defaults to the per-language sum of counts. If given
    explicitly it must agree with that sum.
    """

    counts: dict[CountKey, int]
    totals: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        sums: dict[str, int] = {}
        for key, n in self.counts.items():
            if not isinstance(n, int) or n < 0:
                raise ValidationError("counts", f"{key}: count must be a non-negative integer")
            sums[key[0]] = sums.get(key[0], 0) + n
        if not self.totals:
            self.totals = sums
            return
        for lang, total in self.totals.items():
            if sums.get(lang, 0) != total:
                raise ValidationError(
                    "totals", f"{lang}: counts sum to {sums.get(lang, 0)}, total says {total}"
                )

    @property
    def languages(self) -> list[str]:
        return list(self.totals)

    @classmethod
    def from_assignments(cls, assignments: Iterable[Assignment], taxonomy: Taxonomy) -> "CategoryCounts":
        """One count per assigned pair; unlabeled records contribute nothing."""
        counts: dict[CountKey, int] = {}
        langs: list[str] = []
        for a in assignments:
            lang = Language.parse(a.language).value
            if lang not in langs:
                langs.append(lang)
                for cat, sub in taxonomy.pairs:
                    counts.setdefault((lang, cat, sub), 0)
            for cat, sub in a.pairs:
                counts[(lang, cat, sub)] += 1
        return cls(counts)

    @classmethod
    def from_csv(cls, source: IO[str]) -> "CategoryCounts":
        """Read ``language,category,subcategory,count`` rows."""
        counts: dict[CountKey, int] = {}
        reader = csv.DictReader(line for line in source if not line.startswith("#"))
        need = {"language", "category", "subcategory", "count"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ConfigError("counts CSV needs columns language,category,subcategory,count")
        for row in reader:
            key = (row["language"], row["category"], row["subcategory"])
            counts[key] = counts.get(key, 0) + int(row["count"])
        return cls(counts)

    def to_csv(self, sink: IO[str]) -> None:
        w = csv.writer(sink, lineterminator="\n")
        w.writerow(["language", "category", "subcategory", "count"])
        for (lang, cat, sub), n in self.counts.items():
            w.writerow([lang, cat, sub, n])


@dataclass(frozen=True)
class SignificanceTable:
    """Exact σ per (language, subcategory), plus the category of each subcategory."""

    entries: Mapping[tuple[str, str], Fraction]
    categories: Mapping[str, str]

    def sigma(self, language: str, subcategory: str) -> Fraction:
        return self.entries[(language, subcategory)]

    def languages(self) -> list[str]:
        out: list[str] = []
        for lang, _ in self.entries:
            if lang not in out:
                out.append(lang)
        return out

    def for_language(self, language: str) -> list[tuple[str, Fraction]]:
        return [(sub, s) for (lang, sub), s in self.entries.items() if lang == language]


def significance(counts: CategoryCounts) -> SignificanceTable:
    entries: dict[tuple[str, str], Fraction] = {}
    cats: dict[str, str] = {}
    for (lang, cat, sub), n in counts.counts.items():
        total = counts.totals.get(lang, 0)
        if total <= 0:
            raise ValidationError("totals", f"{lang}: total is zero")
        entries[(lang, sub)] = entries.get((lang, sub), Fraction(0)) + Fraction(n, total)
        cats[sub] = cat
    return SignificanceTable(entries, cats)


def round_half_up(value: Fraction, places: int = 2) -> Fraction:
    scale = 10**places
    return Fraction(int(value * scale + Fraction(1, 2)), scale)


def top_k_report(
    table: SignificanceTable, language: str, k: int = 5, include_catch_all: bool = False
) -> list[tuple[str, float]]:
    """Non-zero subcategories by descending exact σ, ties in taxonomy order.

    Subcategories of the catch-all category are omitted unless
    ``include_catch_all`` is set.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    rows = table.for_language(language)
    if not rows:
        raise ValidationError("language", f"no counts for language {language!r}")
    if not include_catch_all:
        rows = [(sub, s) for sub, s in rows if table.categories.get(sub) != CATCH_ALL]
    rows = [(sub, s) for sub, s in rows if s > 0]
    order = sorted(range(len(rows)), key=lambda i: (-rows[i][1], i))
    return [(rows[i][0], float(round_half_up(rows[i][1]))) for i in order[:k]]


def significance_csv(table: SignificanceTable, sink: IO[str]) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["language", "category", "subcategory", "sigma"])
    for (lang, sub), s in table.entries.items():
        w.writerow([lang, table.categories[sub], sub, f"{float(s):.6f}"])


def format_top_k(table: SignificanceTable, k: int = 5, include_catch_all: bool = False) -> str:
    """Aligned text table with the top ``k`` subcategories of every language."""
    rows = [("Language", "Subcategory", "sigma")]
    for lang in table.languages():
        for sub, s in top_k_report(table, lang, k, include_catch_all):
            rows.append((lang, sub, f"{s:.2f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    buf = io.StringIO()
    for r in rows:
        buf.write(f"{r[0]:<{widths[0]}}  {r[1]:<{widths[1]}}  {r[2]:>{widths[2]}}".rstrip() + "\n")
    return buf.getvalue()
