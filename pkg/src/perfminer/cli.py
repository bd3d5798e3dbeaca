"""``perfminer`` command line entry point.

Exit status: 0 on success, 1 on a usage error, 2 on a runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .categorize import (
    CategoryCounts,
    categorize_records,
    default_taxonomy,
    format_top_k,
    load_taxonomy,
    significance,
    significance_csv,
)
from .config import PipelineConfig
from .distill import distill
from .errors import PerfminerError
from .evaluation import (
    RatingMatrix,
    bench_table,
    bench_throughput,
    confusion,
    fleiss_kappa,
    metrics,
    metrics_csv,
    metrics_table,
    paired_t_test,
    read_ground_truth,
    stratified_sample,
    whitespace_tokens,
)
from .gateway import GatewayConfig, LlmGateway
from .keywords import KeywordClassifier, default_keywords, load_keywords
from .linear import LinearTextModel, TrainConfig, predict
from .miner import DedupIndex, MinerConfig, merge_shards, mine_manifest, read_manifest
from .mock import MockLlmServer, regex_teacher, rule_categorizer
from .records import HardLabel, dumps_line, iter_json_lines, provenance_comment, read_records
from .weak import default_lfs, load_lfs, train_heuristic_student

logger = logging.getLogger("perfminer")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --- helpers -----------------------------------------------------------------


def read_messages(path: str | Path) -> list[str]:
    """Messages from JSONL (``message`` field) or plain text (one per line)."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        if path.suffix == ".jsonl":
            return [obj["message"] for _, obj in iter_json_lines(fh, str(path))]
        return [line.rstrip("\n") for line in fh if line.strip()]


def _classifier(spec: str, cfg: PipelineConfig) -> Callable[[str], HardLabel]:
    if spec == "keyword":
        kw_path = cfg["paths"]["keywords"]
        return KeywordClassifier(load_keywords(kw_path) if kw_path else default_keywords())
    return LinearTextModel.load(spec)


def _train_config(cfg: PipelineConfig) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(t["epochs"], t["learning_rate"], t["l2"], cfg.seed, t["dim"])


def _gateway(cfg: PipelineConfig, mock: MockLlmServer | None) -> LlmGateway:
    g = dict(cfg["gateway"])
    if mock is not None:
        return mock.gateway(**{k: v for k, v in g.items() if k not in ("endpoint_url", "model_name") and v is not None})
    if not g.get("endpoint_url") or not g.get("model_name"):
        raise PerfminerError("gateway.endpoint_url and gateway.model_name must be configured")
    return LlmGateway(GatewayConfig.from_mapping(g))


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- subcommands ---------------------------------------------------------------


def cmd_mine(args, cfg: PipelineConfig) -> int:
    m = cfg["miner"]
    manifest = args.manifest or cfg["paths"]["manifest"]
    if not manifest:
        raise PerfminerError("no manifest given (--manifest or paths.manifest)")
    config = MinerConfig(
        languages=frozenset(m["languages"]),
        min_stars=m["min_stars"],
        max_functions_changed=m["max_functions_changed"],
        branch=m["branch"],
        workers=args.workers or m["workers"],
    )
    classifier = _classifier(args.classifier or m["classifier"], cfg)
    out = Path(args.out or cfg["paths"]["output_dir"])
    shards = mine_manifest(read_manifest(manifest), config, classifier, out, provenance=cfg.provenance())
    for shard in shards:
        with shard.open(encoding="utf-8") as fh:
            n = sum(1 for _ in read_records(fh, str(shard)))
        print(f"{shard}\t{n}")
    return 0


def cmd_merge(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    index = DedupIndex()
    with out.open("w", encoding="utf-8", newline="\n") as fh:
        written, dropped = merge_shards(args.shards, fh, index, cfg.provenance())
    if args.index_out:
        with open(args.index_out, "w", encoding="utf-8", newline="\n") as fh:
            index.export(fh)
            fh.write(provenance_comment(cfg.provenance()))
    print(f"written {written}, duplicates dropped {dropped}")
    return 0


def cmd_classify(args, cfg: PipelineConfig) -> int:
    messages = read_messages(args.dataset)
    clf = _classifier(args.model, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_line({"_provenance": cfg.provenance(classifier=args.model)}))
        for msg in messages:
            row = {"message": msg, "label": clf(msg).text}
            if isinstance(clf, LinearTextModel):
                row["p_performance"] = predict(clf, msg).p_performance
            fh.write(dumps_line(row))
    print(f"classified {len(messages)} messages")
    return 0


def cmd_train_hs(args, cfg: PipelineConfig) -> int:
    corpus = read_messages(args.corpus)
    lf_path = cfg["paths"]["labeling_functions"]
    lfs = load_lfs(lf_path) if lf_path else default_lfs()
    w = cfg["weak"]
    model, report = train_heuristic_student(
        lfs,
        corpus,
        args.n_per_class or w["n_per_class"],
        mode=w["label_model"],
        config=_train_config(cfg),
        sub_classifiers=w["sub_classifiers"],
        learn_prior=w["learn_prior"],
    )
    model = replace(model, provenance=cfg.provenance(step="train-hs"))
    model.save(args.out)
    print(f"label model: {report.label_model.mode.value}, abstained rows {report.abstained}")
    if report.lf_training is not None:
        print(f"LF sub-classifiers trained: {len(report.lf_training.trained)}, skipped: {len(report.lf_training.skipped)}")
    print(f"final loss {report.epoch_losses[-1]:.6f}; model written to {args.out}")
    return 0


def cmd_distill(args, cfg: PipelineConfig) -> int:
    corpus = read_messages(args.corpus)
    d = cfg["distill"]
    mock = MockLlmServer(responder=regex_teacher()) if args.mock_teacher else None
    with _gateway(cfg, mock) as gateway:
        model, report = distill(
            corpus,
            gateway,
            args.n_per_class or d["n_per_class"],
            _train_config(cfg),
            seed=cfg.seed,
            cache_path=args.cache or d["cache"],
            workers=d["workers"],
        )
    model = replace(model, provenance=cfg.provenance(step="distill", teacher="mock" if mock else cfg["gateway"]["model_name"]))
    model.save(args.out)
    if args.report:
        _write_json(Path(args.report), {**report.to_json(), "provenance": cfg.provenance(step="distill")})
    print(
        f"teacher labels: {report.teacher_performance} performance, {report.teacher_non_performance} "
        f"non-performance, {report.skipped} unparseable; final loss {report.final_loss:.6f}"
    )
    return 0


def cmd_categorize(args, cfg: PipelineConfig) -> int:
    tax_path = cfg["paths"]["taxonomy"]
    taxonomy = load_taxonomy(tax_path) if tax_path else default_taxonomy()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.counts:
        with open(args.counts, encoding="utf-8", newline="") as fh:
            counts = CategoryCounts.from_csv(fh)
    else:
        if not args.dataset:
            raise PerfminerError("categorize needs --dataset or --counts")
        with open(args.dataset, encoding="utf-8") as fh:
            records = list(read_records(fh, args.dataset))
        mock = MockLlmServer(responder=rule_categorizer()) if args.mock_teacher else None
        with _gateway(cfg, mock) as gateway:
            assignments = categorize_records(gateway, records, taxonomy, cfg["gateway"]["max_in_flight"])
        with (out / "assignments.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps_line({"_provenance": cfg.provenance()}))
            for a in assignments:
                fh.write(dumps_line({"commit_sha": a.commit_sha, "language": a.language.value,
                                     "labels": [list(p) for p in a.pairs], "error": a.error}))
        counts = CategoryCounts.from_assignments(assignments, taxonomy)
        with (out / "counts.csv").open("w", encoding="utf-8", newline="") as fh:
            counts.to_csv(fh)
            fh.write(provenance_comment(cfg.provenance()))
        failed = sum(1 for a in assignments if a.error)
        print(f"categorized {len(assignments) - failed} of {len(assignments)} records")
    table = significance(counts)
    with (out / "significance.csv").open("w", encoding="utf-8", newline="") as fh:
        significance_csv(table, fh)
        fh.write(provenance_comment(cfg.provenance()))
    text = format_top_k(table, args.k, args.include_other)
    (out / "top_k.txt").write_text(text + provenance_comment(cfg.provenance()), encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _labels_from_file(path: str) -> list[HardLabel]:
    with open(path, encoding="utf-8") as fh:
        out = []
        for _, obj in iter_json_lines(fh, path):
            value = obj.get("label", obj.get("final_label"))
            if value is None:
                raise PerfminerError(f"{path}: row without 'label' or 'final_label'")
            out.append(HardLabel.parse(value))
        return out


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    with open(args.truth, encoding="utf-8") as fh:
        truth_items = read_ground_truth(fh)
    truth = [t.final_label for t in truth_items]
    names = args.name or [Path(p).stem for p in args.pred]
    if len(names) != len(args.pred):
        raise PerfminerError("--name must be given once per --pred")
    reports = [(n, metrics(confusion(_labels_from_file(p), truth))) for n, p in zip(names, args.pred)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as fh:
        metrics_csv(reports, fh)
        fh.write(provenance_comment(cfg.provenance()))
    sys.stdout.write(metrics_table(reports))
    raters = [t.rater_labels for t in truth_items]
    if raters and all(len(r) >= 2 for r in raters) and len(raters) >= 2:
        matrix = RatingMatrix.from_labels(raters, [HardLabel.PERFORMANCE, HardLabel.NON_PERFORMANCE])
        try:
            print(f"Fleiss kappa: {fleiss_kappa(matrix):.4f}")
        except PerfminerError as exc:
            print(f"Fleiss kappa: undefined ({exc})")
    if args.paired:
        with open(args.paired, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        if len(head) != 2:
            raise PerfminerError("--paired CSV needs exactly two columns")
        res = paired_t_test([float(r[0]) for r in body], [float(r[1]) for r in body])
        print(f"paired t-test {head[0]} vs {head[1]}: t={res.t:.4f} df={res.df} p={res.p_value:.4f}")
    return 0


def cmd_bench(args, cfg: PipelineConfig) -> int:
    dataset = read_messages(args.dataset)
    results = []
    for spec in args.classifier:
        clf = _classifier(spec, cfg)
        results.append((spec, bench_throughput(clf, dataset, whitespace_tokens, runs=args.runs)))
    sys.stdout.write(bench_table(results))
    print(f"token counter: {whitespace_tokens.__name__} over the dataset, billed identically to every model")
    if args.out:
        _write_json(Path(args.out), {"provenance": cfg.provenance(), "results": {n: r.to_json() for n, r in results}})
    return 0


def cmd_sample(args, cfg: PipelineConfig) -> int:
    with open(args.pool, encoding="utf-8") as fh:
        rows = [obj for _, obj in iter_json_lines(fh, args.pool)]
    pool = [(row, row.get(args.stratum_key)) for row in rows]
    chosen = stratified_sample(pool, args.n_per_stratum, cfg.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_line({"_provenance": cfg.provenance()}))
        for row in chosen:
            fh.write(dumps_line(row))
    print(f"sampled {len(chosen)} items")
    return 0


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="perfminer", description="Mine and classify performance bug-fix commits.")
    p.add_argument("--version", action="version", version=f"perfminer {__version__}")
    p.add_argument("-c", "--config", help="pipeline config file (YAML)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("mine", help="mine repositories from a manifest into JSONL shards")
    s.add_argument("--manifest", help="CSV with columns url,language,stars")
    s.add_argument("--out", help="directory for shard-{k}.jsonl")
    s.add_argument("--workers", type=int, help="parallel workers (one shard each)")
    s.add_argument("--classifier", help="'keyword' or a saved model file")
    s.set_defaults(func=cmd_mine)

    s = sub.add_parser("merge", help="merge shards, dropping cross-shard duplicates")
    s.add_argument("shards", nargs="+")
    s.add_argument("--out", required=True)
    s.add_argument("--index-out", help="write the dedup index as sorted hex digests")
    s.set_defaults(func=cmd_merge)

    s = sub.add_parser("classify", help="label commit messages")
    s.add_argument("--dataset", required=True, help="JSONL with a message field, or text lines")
    s.add_argument("--model", default="keyword", help="'keyword' or a saved model file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("train-hs", help="train a student from labeling functions")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True, help="model output file")
    s.add_argument("--n-per-class", type=int)
    s.set_defaults(func=cmd_train_hs)

    s = sub.add_parser("distill", help="train a student from LLM teacher labels")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True, help="model output file")
    s.add_argument("--n-per-class", type=int)
    s.add_argument("--cache", help="teacher answer cache (JSONL)")
    s.add_argument("--report", help="write the distillation report as JSON")
    s.add_argument("--mock-teacher", action="store_true", help="use the offline regex teacher")
    s.set_defaults(func=cmd_distill)

    s = sub.add_parser("categorize", help="assign taxonomy categories and report significance")
    s.add_argument("--dataset", help="CommitRecord JSONL")
    s.add_argument("--counts", help="precomputed language,category,subcategory,count CSV")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("-k", type=int, default=5, help="rows per language in the top-k table")
    s.add_argument("--include-other", action="store_true", help="rank the catch-all category too")
    s.add_argument("--mock-teacher", action="store_true", help="use the offline rule-based categorizer")
    s.set_defaults(func=cmd_categorize)

    s = sub.add_parser("evaluate", help="metrics table, rater agreement and paired t-test")
    s.add_argument("--truth", required=True, help="ground truth JSONL {message, rater_labels, final_label}")
    s.add_argument("--pred", required=True, action="append", help="predictions JSONL with a label field")
    s.add_argument("--name", action="append", help="model name per --pred")
    s.add_argument("--out", required=True, help="metrics CSV")
    s.add_argument("--paired", help="two-column CSV of paired scores for a t-test")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("bench", help="throughput in tokens per second")
    s.add_argument("--dataset", required=True)
    s.add_argument("--classifier", action="append", required=True, help="'keyword' or a model file")
    s.add_argument("--runs", type=int, default=5)
    s.add_argument("--out", help="JSON results file")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("sample", help="stratified sample for manual labeling")
    s.add_argument("--pool", required=True, help="JSONL pool")
    s.add_argument("--stratum-key", default="label")
    s.add_argument("--n-per-stratum", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config)
        return args.func(args, cfg)
    except (PerfminerError, OSError, ValueError, KeyError) as exc:
        print(f"perfminer {args.command}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
