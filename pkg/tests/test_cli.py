import csv
import json
import shutil

import pytest
from conftest import synthetic_corpus
from oracles import reference_counts_rows

from perfminer.cli import run


def write_lines(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


@pytest.fixture
def manifest(tmp_path, fixture_repo):
    path, _ = fixture_repo
    m = tmp_path / "manifest.csv"
    m.write_text(f"url,language,stars\n{path},python,50\n")
    return m


# --- exit codes -----------------------------------------------------------------------


def test_unknown_flag_is_usage_error(capsys):
    assert run(["classify", "--bogus"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_unknown_subcommand_and_missing_command(capsys):
    assert run(["frobnicate"]) == 1
    assert run([]) == 1


def test_help_and_version(capsys):
    assert run(["--help"]) == 0
    assert "train-hs" in capsys.readouterr().out
    assert run(["--version"]) == 0


def test_runtime_error_exit_two(tmp_path, capsys):
    assert run(["classify", "--dataset", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "o.jsonl")]) == 2
    assert "perfminer classify:" in capsys.readouterr().err


def test_bad_config_exit_two(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("nope: 1\n")
    assert run(["-c", str(cfg), "sample", "--pool", "x", "--n-per-stratum", "1", "--out", "y"]) == 2


# --- subcommands -------------------------------------------------------------------------


def test_evaluate_writes_metrics_csv(tmp_path, capsys):
    truth = write_lines(tmp_path / "truth.jsonl", [
        {"message": "a", "rater_labels": ["performance"] * 3, "final_label": "performance"},
        {"message": "b", "rater_labels": ["non-performance"] * 3, "final_label": "non-performance"},
        {"message": "c", "rater_labels": ["performance", "performance", "non-performance"], "final_label": "performance"},
    ])
    pred = write_lines(tmp_path / "kw.jsonl", [{"label": "performance"}, {"label": "performance"}, {"label": "non-performance"}])
    scores = tmp_path / "paired.csv"
    scores.write_text("a,b\n2,1\n4,2\n6,3\n8,4\n10,5\n")
    out = tmp_path / "metrics.csv"
    assert run(["evaluate", "--truth", str(truth), "--pred", str(pred), "--out", str(out), "--paired", str(scores)]) == 0
    body = out.read_text().splitlines()
    assert body[-1].startswith("# ") and "config_hash" in body[-1]
    rows = list(csv.DictReader(body[:-1]))
    assert [(r["model"], r["class"]) for r in rows] == [("kw", "performance"), ("kw", "non-performance")]
    assert rows[0]["precision"] == "0.5000" and rows[0]["recall"] == "0.5000" and rows[0]["accuracy"] == "0.3333"
    text = capsys.readouterr().out
    assert "Fleiss kappa: 0.5500" in text
    assert "t=4.2426 df=4 p=0.0132" in text


def test_mine_fixture_manifest_gives_three_records(tmp_path, manifest, capsys):
    out = tmp_path / "shards"
    assert run(["mine", "--manifest", str(manifest), "--out", str(out)]) == 0
    lines = (out / "shard-0.jsonl").read_text().splitlines()
    assert "_provenance" in json.loads(lines[0])
    assert len(lines) == 1 + 3
    merged = tmp_path / "dataset.jsonl"
    assert run(["merge", str(out / "shard-0.jsonl"), str(out / "shard-0.jsonl"), "--out", str(merged)]) == 0
    assert "written 3, duplicates dropped 3" in capsys.readouterr().out


def test_categorize_from_counts(tmp_path, capsys):
    counts = tmp_path / "counts.csv"
    with counts.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["language", "category", "subcategory", "count"])
        w.writerows(reference_counts_rows())
    out = tmp_path / "cat"
    assert run(["categorize", "--counts", str(counts), "--out", str(out)]) == 0
    assert "Unnecessary Memory Allocation" in (out / "top_k.txt").read_text()
    assert len((out / "significance.csv").read_text().splitlines()) == 1 + 93 + 1


def test_categorize_needs_an_input(tmp_path):
    assert run(["categorize", "--out", str(tmp_path / "x")]) == 2


def test_provenance_footers_are_skipped_by_readers(tmp_path):
    from perfminer.categorize import CategoryCounts
    from perfminer.miner import DedupIndex

    counts = tmp_path / "c.csv"
    counts.write_text("language,category,subcategory,count\npython,A,x,2\n# {\"_provenance\": {}}\n")
    assert CategoryCounts.from_csv(counts.open()).counts == {("python", "A", "x"): 2}
    index = tmp_path / "i.txt"
    index.write_text("a" * 32 + "\n# {}\n")
    assert DedupIndex.load(index.open()).digests == {"a" * 32}


def test_sample_is_stratified(tmp_path):
    pool = write_lines(tmp_path / "pool.jsonl", [{"message": f"m{i}", "label": "P" if i % 3 else "N"} for i in range(30)])
    out = tmp_path / "s.jsonl"
    assert run(["sample", "--pool", str(pool), "--n-per-stratum", "4", "--out", str(out)]) == 0
    rows = [json.loads(x) for x in out.read_text().splitlines()[1:]]
    assert sorted(r["label"] for r in rows) == ["N"] * 4 + ["P"] * 4


# --- full pipeline --------------------------------------------------------------------------


def _pipeline(work, manifest):
    msgs = [m for m, _ in synthetic_corpus(200, 4)]
    corpus = work / "corpus.txt"
    corpus.write_text("\n".join(msgs) + "\n")
    cfg = work / "config.yaml"
    cfg.write_text("seed: 11\ntrain:\n  epochs: 3\n  dim: 4096\nweak:\n  n_per_class: 40\ndistill:\n  n_per_class: 40\n")
    out = work / "out"
    c = ["-c", str(cfg)]
    steps = [
        ["mine", "--manifest", str(manifest), "--out", str(out / "shards")],
        ["merge", str(out / "shards" / "shard-0.jsonl"), "--out", str(out / "dataset.jsonl"), "--index-out", str(out / "index.txt")],
        ["train-hs", "--corpus", str(corpus), "--out", str(out / "hs.json")],
        ["distill", "--corpus", str(corpus), "--out", str(out / "kd.json"), "--mock-teacher", "--report", str(out / "kd-report.json")],
        ["classify", "--dataset", str(corpus), "--model", str(out / "kd.json"), "--out", str(out / "labels.jsonl")],
        ["categorize", "--dataset", str(out / "dataset.jsonl"), "--out", str(out / "cat"), "--mock-teacher"],
    ]
    for argv in steps:
        assert run(c + argv) == 0, argv
    return out


def test_pipeline_is_byte_identical_across_runs(tmp_path, manifest, capsys):
    work = tmp_path / "w"
    work.mkdir()
    out = _pipeline(work, manifest)
    first = {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
    shutil.rmtree(out)
    _pipeline(work, manifest)
    second = {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
    assert len(first) >= 10
    assert first == second
    for name, blob in first.items():
        text = blob.decode()
        if name.suffix == ".jsonl":
            doc = json.loads(text.splitlines()[0])["_provenance"]
        elif name.suffix == ".json":
            doc = json.loads(text)["provenance"]
        else:
            doc = json.loads(text.splitlines()[-1][2:])["_provenance"]
        assert doc["seed"] == 11 and len(doc["config_hash"]) == 16, name
