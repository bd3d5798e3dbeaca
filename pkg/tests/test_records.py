import io
import json
from datetime import datetime, timedelta, timezone

import pytest
from conftest import make_record
from hypothesis import given, settings
from hypothesis import strategies as st

from perfminer.errors import RecordParseError, ValidationError
from perfminer.records import (
    FIELDS,
    CommitRecord,
    HardLabel,
    Language,
    LfVote,
    SoftLabel,
    read_records,
    write_records,
)


def roundtrip(records, provenance=None):
    buf = io.BytesIO()
    n = write_records(records, buf, provenance)
    buf.seek(0)
    return n, buf, list(read_records(buf))


def test_empty_write_produces_no_lines():
    n, buf, back = roundtrip([])
    assert n == 0 and buf.getvalue() == b"" and back == []


def test_single_record_round_trips():
    rec = make_record(1)
    n, buf, back = roundtrip([rec])
    assert n == 1
    assert buf.getvalue().count(b"\n") == 1
    assert back == [rec]


def test_jsonl_field_names_are_exact():
    _, buf, _ = roundtrip([make_record(3)])
    obj = json.loads(buf.getvalue())
    assert tuple(obj) == FIELDS
    assert obj["language"] == "python"
    assert obj["committed_at"] == "2024-01-01T00:00:00Z"


def test_bad_sha_rejected_naming_field():
    with pytest.raises(ValidationError) as exc:
        make_record(1, commit_sha="XYZ")
    assert exc.value.field == "commit_sha"


@pytest.mark.parametrize(
    "kw, field",
    [
        ({"repo_id": "noslash"}, "repo_id"),
        ({"stars": -1}, "stars"),
        ({"files_changed": True}, "files_changed"),
        ({"before": "", "after": ""}, "function_before"),
        ({"functions_changed": 3}, "functions_changed"),  # diff has two changed lines
        ({"committed_at": datetime(2024, 1, 1)}, "committed_at"),
    ],
)
def test_invariant_violations(kw, field):
    before, after = kw.pop("before", None), kw.pop("after", None)
    with pytest.raises(ValidationError) as exc:
        make_record(1, before, after, **kw)
    assert exc.value.field == field


def test_one_side_may_be_empty():
    assert make_record(1, before="").function_before == ""
    assert make_record(1, after="").function_after == ""


def test_timestamp_normalized_to_utc_seconds():
    ts = datetime(2024, 5, 1, 14, 30, 15, 999, tzinfo=timezone(timedelta(hours=2)))
    rec = make_record(1, committed_at=ts)
    assert rec.committed_at == datetime(2024, 5, 1, 12, 30, 15, tzinfo=timezone.utc)


def test_malformed_line_reports_line_number():
    good = json.dumps(make_record(1).to_json())
    src = io.StringIO(f"{good}\n{good}\n{{\n")
    with pytest.raises(RecordParseError) as exc:
        list(read_records(src, "data.jsonl"))
    assert exc.value.line_no == 3
    assert "data.jsonl:3" in str(exc.value)


def test_invalid_record_reports_line_number():
    obj = make_record(1).to_json()
    obj["commit_sha"] = "nothex"
    with pytest.raises(RecordParseError) as exc:
        list(read_records(io.StringIO("\n" + json.dumps(obj) + "\n")))
    assert exc.value.line_no == 2


def test_unknown_fields_ignored():
    obj = make_record(2).to_json()
    obj["note"] = "extra"
    (rec,) = read_records(io.StringIO(json.dumps(obj) + "\n"))
    assert rec == make_record(2)


def test_provenance_line_skipped_by_readers():
    n, buf, back = roundtrip([make_record(1)], provenance={"seed": 7})
    assert n == 1
    assert buf.getvalue().splitlines()[0] == b'{"_provenance": {"seed": 7}}'
    assert back == [make_record(1)]


def test_text_sink_supported():
    buf = io.StringIO()
    write_records([make_record(1)], buf)
    assert buf.getvalue().endswith("\n")


def test_streaming_reader_is_lazy():
    good = json.dumps(make_record(1).to_json())
    src = io.StringIO(good + "\n{broken\n")
    it = read_records(src)
    assert next(it) == make_record(1)
    with pytest.raises(RecordParseError):
        next(it)


def test_label_types():
    assert int(HardLabel.PERFORMANCE) == 1 and int(HardLabel.NON_PERFORMANCE) == 0
    assert sorted(int(v) for v in LfVote) == [-1, 0, 1]
    assert HardLabel.parse("non-performance") is HardLabel.NON_PERFORMANCE
    assert Language.parse("C++") is Language.CPP
    assert SoftLabel(0.25).p_non_performance == 0.75
    with pytest.raises(ValidationError):
        SoftLabel(1.5)


text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=40)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(text, text, text, st.integers(0, 10**6), st.integers(0, 2_000_000_000)),
        max_size=5,
    )
)
def test_round_trip_property(rows):
    records = []
    for i, (msg, before, after, stars, ts) in enumerate(rows):
        if not before and not after:
            after = "x"
        records.append(
            make_record(
                i,
                before,
                after,
                message=msg,
                stars=stars,
                committed_at=datetime.fromtimestamp(ts, tz=timezone.utc),
            )
        )
    _, _, back = roundtrip(records)
    assert back == records


def test_reader_memory_is_bounded(tmp_path):
    import tracemalloc

    path = tmp_path / "big.jsonl"
    with path.open("w", encoding="utf-8") as fh:
        write_records((make_record(i) for i in range(100_000)), fh)
    tracemalloc.start()
    with path.open(encoding="utf-8") as fh:
        count = sum(1 for _ in read_records(fh))
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert count == 100_000
    assert peak < 2_000_000  # a fully materialized list would need well over 50 MB
