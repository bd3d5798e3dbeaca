import pytest
from conftest import GOLDEN

from perfminer.categorize import default_taxonomy
from perfminer.errors import ValidationError
from perfminer.prompts import (
    MESSAGE_END,
    build_categorization_prompt,
    build_classification_prompt,
    extract_message,
    render_taxonomy,
)

CLASSIFICATION_GOLDENS = {
    "classification_speedup.txt": "vs opencl speedup for bilateral filter",
    "classification_false_sharing.txt": "Add padding to avoid false-sharing",
    "classification_multiline.txt": "Add comment referencing Chrome\nperformance bug for Array.splice",
}


@pytest.mark.parametrize("name, message", sorted(CLASSIFICATION_GOLDENS.items()))
def test_classification_prompt_matches_golden(name, message):
    expected = (GOLDEN / name).read_bytes()
    assert build_classification_prompt(message).encode("utf-8") == expected


def test_categorization_prompt_matches_golden(reserve_record):
    expected = (GOLDEN / "categorization_reserve.txt").read_bytes()
    assert build_categorization_prompt(reserve_record, default_taxonomy()).encode("utf-8") == expected


def test_classification_prompt_embeds_message_verbatim():
    msg = "Fix {braces} and 100% of ### headers"
    prompt = build_classification_prompt(msg)
    assert extract_message(prompt) == msg
    assert prompt.count(MESSAGE_END) == 1


def test_extract_message_rejects_other_text():
    with pytest.raises(ValueError):
        extract_message("hello")


def test_categorization_prompt_sections(reserve_record):
    prompt = build_categorization_prompt(reserve_record, default_taxonomy())
    order = [
        "Commit message:",
        "### End of commit message",
        "Original code:",
        "### End of original code",
        "Modified code:",
        "### End of modified code",
        "Code diff:",
        "### End of code diff",
        "Task description:",
        "Category descriptions:",
        "Output description:",
    ]
    positions = [prompt.index(s) for s in order]
    assert positions == sorted(positions)
    assert extract_message(prompt) == reserve_record.message
    for cat in default_taxonomy().categories:
        assert f"{cat.name}: " in prompt
        for sub in cat.subcategories:
            assert f"  - {sub.name}: " in prompt


def test_render_taxonomy_line_count():
    tax = default_taxonomy()
    assert len(render_taxonomy(tax).splitlines()) == len(tax.categories) + len(tax.pairs)


def test_categorization_needs_a_diff(reserve_record):
    from dataclasses import replace

    with pytest.raises(ValidationError):
        build_categorization_prompt(replace(reserve_record, diff=" \n"), default_taxonomy())
