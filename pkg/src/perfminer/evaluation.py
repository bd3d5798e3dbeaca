"""Evaluation instruments: confusion metrics, rater agreement, significance tests,
sampling and throughput benchmarking.

Metric values are exact :class:`~fractions.Fraction` objects so that identities
such as ``fpr(positive) == 1 - recall(negative)`` hold without rounding error.
Convert with ``float()`` for display.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
import statistics
import time
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import IO, Callable, Hashable, Iterable, Sequence

from .errors import (
    BenchmarkError,
    ConfigError,
    DegenerateStatisticError,
    InsufficientDataError,
    ValidationError,
)
from .records import HardLabel

# --- confusion metrics ---------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValidationError(name, "must be a non-negative integer")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionCounts":
        """Counts with the other class treated as positive."""
        return ConfusionCounts(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


def confusion(
    pred: Sequence[HardLabel], truth: Sequence[HardLabel], positive: HardLabel = HardLabel.PERFORMANCE
) -> ConfusionCounts:
    if len(pred) != len(truth):
        raise ValidationError("pred", f"length {len(pred)} != truth length {len(truth)}")
    if not pred:
        raise ValidationError("pred", "empty prediction list")
    positive = HardLabel.parse(positive)
    tp = fp = fn = tn = 0
    # parse each distinct (pred, truth) pair once
    for (p, t), k in Counter(zip(pred, truth)).items():
        pp, tt = HardLabel.parse(p) is positive, HardLabel.parse(t) is positive
        if pp and tt:
            tp += k
        elif pp:
            fp += k
        elif tt:
            fn += k
        else:
            tn += k
    return ConfusionCounts(tp, fp, fn, tn)


@dataclass(frozen=True)
class ClassMetrics:
    """Per-class metrics; ``None`` marks an undefined value (zero denominator)."""

    precision: Fraction | None
    recall: Fraction | None
    f1: Fraction | None
    fpr: Fraction | None


@dataclass(frozen=True)
class MetricsReport:
    accuracy: Fraction
    per_class: dict[HardLabel, ClassMetrics]
    counts: ConfusionCounts
    positive: HardLabel


def _ratio(num: int, den: int) -> Fraction | None:
    return Fraction(num, den) if den else None


def _class_metrics(c: ConfusionCounts) -> ClassMetrics:
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    if precision is None or recall is None:
        f1 = None
    else:
        f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn) if c.tp else Fraction(0)
    return ClassMetrics(precision, recall, f1, _ratio(c.fp, c.fp + c.tn))


def metrics(c: ConfusionCounts, positive: HardLabel = HardLabel.PERFORMANCE) -> MetricsReport:
    """Accuracy plus precision, recall, F1 and FPR for both classes."""
    if c.n == 0:
        raise ValidationError("counts", "all confusion cells are zero")
    other = HardLabel(1 - int(positive))
    return MetricsReport(
        accuracy=Fraction(c.tp + c.tn, c.n),
        per_class={positive: _class_metrics(c), other: _class_metrics(c.swapped())},
        counts=c,
        positive=positive,
    )


def _fmt(v: Fraction | None, places: int = 4) -> str:
    return "" if v is None else f"{float(v):.{places}f}"


METRIC_COLUMNS = ["model", "class", "precision", "recall", "f1", "fpr", "accuracy"]


def metrics_csv(reports: Sequence[tuple[str, MetricsReport]], sink: IO[str]) -> None:
    """One row per (model, class). Undefined metrics are left empty."""
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for name, rep in reports:
        for label in (HardLabel.PERFORMANCE, HardLabel.NON_PERFORMANCE):
            m = rep.per_class[label]
            w.writerow(
                [name, label.text, _fmt(m.precision), _fmt(m.recall), _fmt(m.f1), _fmt(m.fpr), _fmt(rep.accuracy)]
            )


def format_table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    rows = [list(map(str, header))] + [list(map(str, r)) for r in rows]
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def metrics_table(reports: Sequence[tuple[str, MetricsReport]]) -> str:
    buf = io.StringIO()
    metrics_csv(reports, buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    return format_table(rows[0], ([c or "n/a" for c in r] for r in rows[1:]))


# --- rater agreement ---------------------------------------------------------------


@dataclass(frozen=True)
class RatingMatrix:
    """``rows[i][j]`` = number of raters who put item ``i`` in category ``j``."""

    rows: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(int(x) for x in r) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        if len(rows) < 2:
            raise ValidationError("rows", "need at least 2 items")
        k = len(rows[0])
        if k < 2 or any(len(r) != k for r in rows):
            raise ValidationError("rows", "every item needs the same number (>= 2) of categories")
        if any(x < 0 for r in rows for x in r):
            raise ValidationError("rows", "negative rating count")
        r0 = sum(rows[0])
        if r0 < 2:
            raise ValidationError("rows", "need at least 2 raters per item")
        if any(sum(r) != r0 for r in rows):
            raise ValidationError("rows", "every item must be rated by the same number of raters")

    @property
    def raters(self) -> int:
        return sum(self.rows[0])

    @classmethod
    def from_labels(cls, labels: Sequence[Sequence[Hashable]], categories: Sequence[Hashable]) -> "RatingMatrix":
        index = {c: j for j, c in enumerate(categories)}
        rows = []
        for item in labels:
            row = [0] * len(categories)
            for lab in item:
                row[index[lab]] += 1
            rows.append(row)
        return cls(tuple(map(tuple, rows)))


def fleiss_kappa_exact(m: RatingMatrix) -> Fraction:
    n, r = len(m.rows), m.raters
    p_bar = sum(Fraction(sum(x * x for x in row) - r, r * (r - 1)) for row in m.rows) / n
    k = len(m.rows[0])
    p_e = sum(Fraction(sum(row[j] for row in m.rows), n * r) ** 2 for j in range(k))
    if p_e == 1:
        raise DegenerateStatisticError("kappa undefined: every rating falls in one category")
    return (p_bar - p_e) / (1 - p_e)


def fleiss_kappa(m: RatingMatrix) -> float:
    return float(fleiss_kappa_exact(m))


def adjudicate(labels: Sequence[Sequence[HardLabel]]) -> list[HardLabel]:
    """Strict per-item majority over an odd number of raters."""
    out = []
    for i, item in enumerate(labels):
        if len(item) % 2 == 0:
            raise ConfigError(f"item {i}: {len(item)} raters; an odd rater count is required")
        perf = sum(1 for lab in item if HardLabel.parse(lab) is HardLabel.PERFORMANCE)
        out.append(HardLabel.PERFORMANCE if 2 * perf > len(item) else HardLabel.NON_PERFORMANCE)
    return out


@dataclass(frozen=True)
class GroundTruthItem:
    message: str
    rater_labels: tuple[HardLabel, ...]
    final_label: HardLabel


def read_ground_truth(source: IO[str]) -> list[GroundTruthItem]:
    """Read ``{message, rater_labels, final_label}`` JSONL; final label is adjudicated if absent."""
    items = []
    for line_no, line in enumerate(source, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            raters = tuple(HardLabel.parse(x) for x in obj.get("rater_labels", ()))
            final = obj.get("final_label")
            final = HardLabel.parse(final) if final is not None else adjudicate([raters])[0]
            items.append(GroundTruthItem(obj["message"], raters, final))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValidationError("ground_truth", f"line {line_no}: {exc}") from None
    return items


# --- paired t-test ------------------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    # Modified Lentz evaluation of the incomplete beta continued fraction.
    tiny, eps = 1e-300, 1e-15
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 1000):
        m2 = 2 * m
        for aa in (m * (b - m) * x / ((qam + m2) * (a + m2)), -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))):
            d = 1.0 + aa * d
            d = 1.0 / (d if abs(d) > tiny else tiny)
            c = 1.0 + aa / c
            c = c if abs(c) > tiny else tiny
            delta = d * c
            h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise DegenerateStatisticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x in (0.0, 1.0):
        return x
    log_bt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    bt = math.exp(log_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def student_t_two_tailed(t: float, df: int) -> float:
    return betainc(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p_value: float


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    if len(a) != len(b):
        raise ValidationError("b", f"length {len(b)} != {len(a)}")
    n = len(a)
    if n < 2:
        raise ValidationError("a", "need at least 2 pairs")
    d = [x - y for x, y in zip(a, b)]
    sd = statistics.stdev(d)
    if sd == 0:
        raise DegenerateStatisticError("differences have zero variance")
    t = statistics.fmean(d) / (sd / math.sqrt(n))
    return TTestResult(t, n - 1, student_t_two_tailed(t, n - 1))


# --- sampling ------------------------------------------------------------------------


def z_two_tailed(confidence: float) -> float:
    """Two-tailed normal quantile, stored to 6 decimal places."""
    return round(statistics.NormalDist().inv_cdf(0.5 + confidence / 2.0), 6)


def required_sample_size(confidence: float, margin: float, proportion: float = 0.5) -> int:
    """Nearest-integer (half up) sample size for estimating a proportion."""
    if not 0.0 < confidence < 1.0:
        raise ConfigError("confidence must lie in (0, 1)")
    if not 0.0 < margin <= 1.0:
        raise ConfigError("margin must lie in (0, 1]")
    if not 0.0 <= proportion <= 1.0:
        raise ConfigError("proportion must lie in [0, 1]")
    z = Decimal(repr(z_two_tailed(confidence)))
    p, e = Decimal(repr(proportion)), Decimal(repr(margin))
    n = z * z * p * (1 - p) / (e * e)
    return int(n.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def stratified_sample(pool: Sequence[tuple[object, Hashable]], n_per_stratum: int, seed: int) -> list:
    """Uniform sample without replacement of ``n_per_stratum`` items per stratum.

    Output is grouped by stratum in order of first appearance in ``pool``.
    """
    if n_per_stratum < 0:
        raise ConfigError("n_per_stratum must be non-negative")
    strata: dict[Hashable, list] = {}
    for item, stratum in pool:
        strata.setdefault(stratum, []).append(item)
    short = {s: len(v) for s, v in strata.items() if len(v) < n_per_stratum}
    if short:
        available = {str(s): len(v) for s, v in strata.items()}
        raise InsufficientDataError(
            f"requested {n_per_stratum} per stratum; available: "
            + ", ".join(f"{k}={v}" for k, v in available.items()),
            available,
        )
    rng = random.Random(seed)
    out = []
    for members in strata.values():
        out.extend(rng.sample(members, n_per_stratum))
    return out


# --- throughput ----------------------------------------------------------------------


def whitespace_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class ThroughputResult:
    runs: tuple[tuple[int, float], ...]
    mean_tokens_per_second: float
    token_counter: str
    warmup_runs: int

    def to_json(self) -> dict:
        return {
            "runs": [{"tokens": t, "seconds": s} for t, s in self.runs],
            "mean_tokens_per_second": self.mean_tokens_per_second,
            "token_counter": self.token_counter,
            "warmup_runs": self.warmup_runs,
        }


def bench_throughput(
    classifier: Callable[[str], object],
    dataset: Sequence[str],
    token_counter: Callable[[str], int] = whitespace_tokens,
    runs: int = 5,
    warmup: int = 1,
    clock: Callable[[], float] = time.perf_counter,
) -> ThroughputResult:
    """Time ``runs`` full passes over ``dataset`` after ``warmup`` unmeasured passes.

    Every classifier is billed the same token total, computed with
    ``token_counter`` over the dataset, whether or not it tokenizes.
    """
    if not dataset:
        raise ValidationError("dataset", "empty benchmark dataset")
    tokens = sum(token_counter(m) for m in dataset)
    samples: list[tuple[int, float]] = []
    try:
        for i in range(warmup + runs):
            start = clock()
            for message in dataset:
                classifier(message)
            elapsed = clock() - start
            if i >= warmup:
                if elapsed <= 0:
                    raise BenchmarkError(f"run {i - warmup + 1}: non-positive elapsed time")
                samples.append((tokens, elapsed))
    except BenchmarkError:
        raise
    except Exception as exc:
        raise BenchmarkError(f"classifier failed during benchmark: {exc}") from exc
    mean = statistics.fmean(t / s for t, s in samples)
    name = getattr(token_counter, "__name__", type(token_counter).__name__)
    return ThroughputResult(tuple(samples), mean, name, warmup)


def bench_table(results: Sequence[tuple[str, ThroughputResult]]) -> str:
    header = ["model", "mean tokens/s", "runs", "warm-up", "token counter"]
    rows = [
        [name, f"{r.mean_tokens_per_second:.1f}", str(len(r.runs)), str(r.warmup_runs), r.token_counter]
        for name, r in results
    ]
    return format_table(header, rows)
