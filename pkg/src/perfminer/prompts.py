"""Prompt builders for binary commit classification and CoT categorization.

Both builders are pure string templates. Any edit here changes every
downstream label, so the rendered prompts are pinned by golden files in the
test suite.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

from .errors import ValidationError

if TYPE_CHECKING:
    from .categorize import Taxonomy
    from .records import CommitRecord

PROMPT_VERSION = "1"

MESSAGE_END = "### End of commit message"

CLASSIFICATION_TEMPLATE = """\
You are an expert in software performance engineering. Your task is to classify a GitHub commit message into exactly one of two classes, based on whether the commit fixes a performance bug.

Label definitions:
- performance: the commit fixes a performance bug or otherwise improves efficiency. Typical examples reduce execution time, memory consumption, allocations, I/O or network traffic, lock contention or synchronization overhead, or make better use of caches, parallelism or hardware.
- non-performance: the commit makes any other kind of change, such as a functional bug fix, a new feature, refactoring, documentation, tests, build or CI configuration, formatting or dependency updates, without the goal of improving efficiency.

Commit message:
{message}
""" + MESSAGE_END + """

Answer with exactly one label and nothing else: performance or non-performance.
"""

CATEGORIZATION_TEMPLATE = """\
You are provided with a GitHub commit that fixes a performance bug, in the following format:

Commit message:
{commit_message}
### End of commit message

Original code:
{original_code}
### End of original code

Modified code:
{modified_code}
### End of modified code

Code diff:
{code_diff}
### End of code diff

Task description:
Determine the root cause of the performance bug fixed by this commit and assign it to the two-level taxonomy below. Reason step by step:
1. Identify the symptom: what was inefficient before the change (time, memory, I/O, network, concurrency, hardware usage)?
2. Locate the root cause by comparing the original code with the modified code and the diff.
3. Map the root cause to the single best-matching category.
4. Map it to the best-matching subcategory within that category. Use the "Misc." subcategory only when no specific subcategory fits.

Category descriptions:
{categories}

Output description:
Write your reasoning first. Then finish with one line per assigned label, in the exact form
Category :: Subcategory
using the category and subcategory names exactly as listed above. Assign more than one label only if the commit clearly fixes several distinct performance problems.
"""


def build_classification_prompt(message: str) -> str:
    return CLASSIFICATION_TEMPLATE.format(message=message)


def extract_message(prompt: str) -> str:
    """Recover the commit message embedded in a classification prompt."""
    head, sep, rest = prompt.partition("Commit message:\n")
    if not sep:
        raise ValueError("not a classification prompt")
    body, sep, _ = rest.rpartition("\n" + MESSAGE_END)
    if not sep:
        raise ValueError("not a classification prompt")
    return body


def render_taxonomy(taxonomy: "Taxonomy") -> str:
    lines = []
    for cat in taxonomy.categories:
        lines.append(f"{cat.name}: {cat.description}")
        for sub in cat.subcategories:
            lines.append(f"  - {sub.name}: {sub.description}")
    return "\n".join(lines)


def build_categorization_prompt(record: "CommitRecord", taxonomy: "Taxonomy") -> str:
    if not record.diff.strip():
        raise ValidationError("diff", "categorization needs a non-empty diff")
    return CATEGORIZATION_TEMPLATE.format(
        commit_message=record.message,
        original_code=record.function_before.rstrip("\n"),
        modified_code=record.function_after.rstrip("\n"),
        code_diff=record.diff.rstrip("\n"),
        categories=render_taxonomy(taxonomy),
    )
