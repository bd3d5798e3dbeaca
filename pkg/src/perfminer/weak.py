"""Heuristic supervision: regex labeling functions, vote matrix and label model."""

from __future__ import annotations

import enum
import logging
import math
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, InsufficientDataError, PerfminerError, ValidationError
from .linear import LinearTextModel, SoftLabeledExample, TrainConfig, predict, train
from .records import HardLabel, LfVote, SoftLabel

logger = logging.getLogger(__name__)

SUB_CLASSIFIER_CONFIDENCE = 0.9


@dataclass(frozen=True)
class LabelingFunction:
    id: str
    pattern: str
    polarity: HardLabel
    sub_classifier: LinearTextModel | None = None
    _regex: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "polarity", HardLabel.parse(self.polarity))
        try:
            regex = re.compile(self.pattern, re.IGNORECASE)
        except re.error as exc:
            raise ConfigError(f"labeling function {self.id!r}: bad regex ({exc})") from None
        object.__setattr__(self, "_regex", regex)

    def matches(self, message: str) -> bool:
        return self._regex.search(message) is not None


def apply_lf(lf: LabelingFunction, message: str) -> LfVote:
    """Vote with the LF's polarity on a regex match; otherwise defer to the
    sub-classifier (if any), which must back the polarity with at least 0.9
    confidence or the LF abstains."""
    vote = LfVote(int(lf.polarity))
    if lf.matches(message):
        return vote
    if lf.sub_classifier is None:
        return LfVote.ABSTAIN
    p = predict(lf.sub_classifier, message).p_performance
    confidence = p if lf.polarity is HardLabel.PERFORMANCE else 1.0 - p
    return vote if confidence >= SUB_CLASSIFIER_CONFIDENCE else LfVote.ABSTAIN


def parse_lf_file(text: str) -> list[LabelingFunction]:
    """Parse ``id<TAB>polarity<TAB>regex`` lines; ``#`` starts a comment line."""
    lfs = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ConfigError(f"LF file line {line_no}: expected 3 tab-separated fields")
        lf_id, polarity, pattern = (p.strip() for p in parts)
        try:
            lfs.append(LabelingFunction(lf_id, pattern, HardLabel.parse(polarity)))
        except ValidationError as exc:
            raise ConfigError(f"LF file line {line_no}: {exc}") from None
    check_unique_ids(lfs)
    return lfs


def load_lfs(path: str | Path) -> list[LabelingFunction]:
    return parse_lf_file(Path(path).read_text(encoding="utf-8"))


def default_lfs() -> list[LabelingFunction]:
    text = resources.files("perfminer.data").joinpath("labeling_functions.tsv").read_text(encoding="utf-8")
    return parse_lf_file(text)


def check_unique_ids(lfs: Sequence[LabelingFunction]) -> None:
    seen = set()
    for lf in lfs:
        if lf.id in seen:
            raise ConfigError(f"duplicate labeling function id {lf.id!r}")
        seen.add(lf.id)


@dataclass(frozen=True)
class InducedDataset:
    lf_id: str
    examples: tuple[SoftLabeledExample, ...]
    matched: int
    insufficient: bool
    reason: str = ""


def induce_lf_dataset(lf: LabelingFunction, corpus: Sequence[str]) -> InducedDataset:
    """Matches become hard targets of the LF's polarity, the rest the opposite."""
    if not corpus:
        raise ValidationError("corpus", "corpus is empty")
    hit = SoftLabel.from_hard(lf.polarity)
    miss = SoftLabel(1.0 - hit.p_performance)
    examples = []
    matched = 0
    for msg in corpus:
        if lf.matches(msg):
            matched += 1
            examples.append(SoftLabeledExample(msg, hit))
        else:
            examples.append(SoftLabeledExample(msg, miss))
    reason = ""
    if matched == 0:
        reason = "no corpus message matches the pattern"
    elif matched == len(corpus):
        reason = "every corpus message matches the pattern (single class)"
    if reason:
        logger.warning("labeling function %s: %s", lf.id, reason)
    return InducedDataset(lf.id, tuple(examples), matched, bool(reason), reason)


@dataclass
class LfTrainingReport:
    trained: list[str] = field(default_factory=list)
    skipped: dict[str, str] = field(default_factory=dict)


def train_lf_classifiers(
    lfs: Sequence[LabelingFunction],
    corpus: Sequence[str],
    config: TrainConfig | None = None,
    workers: int = 1,
) -> tuple[list[LabelingFunction], LfTrainingReport]:
    """Give each LF a sub-classifier trained on its induced dataset.

    LFs whose dataset is insufficient, or whose training fails, come back
    unchanged and are listed in the report. Output order matches input.
    """
    config = config or TrainConfig()
    check_unique_ids(lfs)

    def one(lf: LabelingFunction):
        data = induce_lf_dataset(lf, corpus)
        if data.insufficient:
            return lf, data.reason
        try:
            model = train(data.examples, config)
        except PerfminerError as exc:
            return lf, f"training failed: {exc}"
        return replace(lf, sub_classifier=model), None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, lfs))
    else:
        results = [one(lf) for lf in lfs]
    report = LfTrainingReport()
    out = []
    for lf, problem in results:
        out.append(lf)
        if problem is None:
            report.trained.append(lf.id)
        else:
            report.skipped[lf.id] = problem
    return out, report


@dataclass(frozen=True, eq=False)
class LfVoteMatrix:
    votes: np.ndarray
    lf_ids: tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.votes, dtype=np.int8)
        if v.ndim != 2:
            raise ValidationError("votes", "vote matrix must be 2-D")
        if v.shape[1] != len(self.lf_ids):
            raise ValidationError("lf_ids", f"{len(self.lf_ids)} ids for {v.shape[1]} columns")
        if v.size and not np.isin(v, (-1, 0, 1)).all():
            raise ValidationError("votes", "entries must be -1, 0 or 1")
        v.setflags(write=False)
        object.__setattr__(self, "votes", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.votes.shape

    def __eq__(self, other):
        if not isinstance(other, LfVoteMatrix):
            return NotImplemented
        return self.lf_ids == other.lf_ids and np.array_equal(self.votes, other.votes)


def build_vote_matrix(lfs: Sequence[LabelingFunction], corpus: Sequence[str]) -> LfVoteMatrix:
    check_unique_ids(lfs)
    votes = np.full((len(corpus), len(lfs)), -1, dtype=np.int8)
    for i, msg in enumerate(corpus):
        for j, lf in enumerate(lfs):
            votes[i, j] = apply_lf(lf, msg)
    return LfVoteMatrix(votes, tuple(lf.id for lf in lfs))


class LabelModelMode(str, enum.Enum):
    MAJORITY_VOTE = "majority"
    WEIGHTED_EM = "em"


@dataclass(frozen=True)
class LabelModel:
    mode: LabelModelMode
    lf_ids: tuple[str, ...]
    accuracies: tuple[float, ...] = ()
    class_prior: float = 0.5
    iterations: int = 0
    loglik_history: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "mode", LabelModelMode(self.mode))
        if not 0.0 < self.class_prior < 1.0:
            raise ValidationError("class_prior", f"must lie in (0, 1), got {self.class_prior}")
        if self.mode is LabelModelMode.WEIGHTED_EM and len(self.accuracies) != len(self.lf_ids):
            raise ValidationError("accuracies", "one accuracy per labeling function required")

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "lf_ids": list(self.lf_ids),
            "accuracies": list(self.accuracies),
            "class_prior": self.class_prior,
            "iterations": self.iterations,
            "loglik_history": list(self.loglik_history),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LabelModel":
        return cls(
            mode=doc["mode"],
            lf_ids=tuple(doc["lf_ids"]),
            accuracies=tuple(doc.get("accuracies", ())),
            class_prior=doc.get("class_prior", 0.5),
            iterations=doc.get("iterations", 0),
            loglik_history=tuple(doc.get("loglik_history", ())),
        )


EM_INIT_ACCURACY = 0.7
EM_INIT_PRIOR = 0.5
EM_TOL = 1e-6
EM_MAX_ITER = 100
ACC_MIN, ACC_MAX = 0.05, 0.95
PRIOR_MIN, PRIOR_MAX = 1e-6, 1.0 - 1e-6


def _row_log_terms(votes: np.ndarray, acc: np.ndarray) -> np.ndarray:
    """Per-row sum of log-odds contributions (y=1 vs y=0) from non-abstaining votes."""
    w = np.log(acc) - np.log1p(-acc)
    signs = np.where(votes == 1, 1.0, np.where(votes == 0, -1.0, 0.0))
    return signs @ w


def _log_likelihood(votes: np.ndarray, acc: np.ndarray, prior: float) -> float:
    """Observed-data log-likelihood of the conditionally independent symmetric model."""
    pos = votes == 1
    neg = votes == 0
    la, lb = np.log(acc), np.log1p(-acc)
    ll1 = np.log(prior) + (pos * la + neg * lb).sum(axis=1)
    ll0 = np.log1p(-prior) + (neg * la + pos * lb).sum(axis=1)
    return float(np.logaddexp(ll1, ll0).sum())


def _posterior(votes: np.ndarray, acc: np.ndarray, prior: float) -> np.ndarray:
    z = math.log(prior) - math.log1p(-prior) + _row_log_terms(votes, acc)
    return 1.0 / (1.0 + np.exp(-z))


def fit_label_model(
    matrix: LfVoteMatrix,
    mode: LabelModelMode | str = LabelModelMode.WEIGHTED_EM,
    learn_prior: bool = False,
) -> LabelModel:
    """Fit the label model.

    ``WeightedEM`` assumes labeling functions are conditionally independent
    given the true class, each with a symmetric accuracy on the rows where it
    votes. Abstentions carry no information about the class.

    The class prior stays at 0.5 unless ``learn_prior`` is set. With a learned
    prior, LFs that only ever vote one way are explained equally well by
    "every row belongs to one class", and EM drifts there.
    """
    mode = LabelModelMode(mode)
    votes = matrix.votes
    n, m = votes.shape
    if n < 1 or m < 1:
        raise ValidationError("matrix", f"need at least one row and one column, got {n}x{m}")
    if mode is LabelModelMode.MAJORITY_VOTE:
        return LabelModel(mode, matrix.lf_ids)
    active = votes != -1
    if not active.any():
        raise ValidationError("matrix", "every entry abstains; nothing to fit")
    pos = (votes == 1).astype(np.float64)
    neg = (votes == 0).astype(np.float64)
    coverage = active.sum(axis=0)
    acc = np.full(m, EM_INIT_ACCURACY)
    prior = EM_INIT_PRIOR
    history = [_log_likelihood(votes, acc, prior)]
    it = 0
    for it in range(1, EM_MAX_ITER + 1):
        q = _posterior(votes, acc, prior)
        agree = q @ pos + (1.0 - q) @ neg
        new_acc = acc.copy()
        has = coverage > 0
        new_acc[has] = np.clip(agree[has] / coverage[has], ACC_MIN, ACC_MAX)
        new_prior = float(np.clip(q.mean(), PRIOR_MIN, PRIOR_MAX)) if learn_prior else prior
        delta = max(float(np.max(np.abs(new_acc - acc))), abs(new_prior - prior))
        acc, prior = new_acc, new_prior
        history.append(_log_likelihood(votes, acc, prior))
        if delta < EM_TOL:
            break
    return LabelModel(
        mode,
        matrix.lf_ids,
        accuracies=tuple(float(a) for a in acc),
        class_prior=prior,
        iterations=it,
        loglik_history=tuple(history),
    )


def predict_soft_labels(model: LabelModel, matrix: LfVoteMatrix) -> list[tuple[SoftLabel, bool]]:
    """Return ``(soft_label, abstained)`` per row."""
    votes = matrix.votes
    if votes.shape[1] != len(model.lf_ids):
        raise ValidationError("matrix", f"{votes.shape[1]} columns but model has {len(model.lf_ids)} LFs")
    n_pos = (votes == 1).sum(axis=1)
    n_active = (votes != -1).sum(axis=1)
    if model.mode is LabelModelMode.MAJORITY_VOTE:
        out = []
        for k, a in zip(n_pos.tolist(), n_active.tolist()):
            if a == 0:
                out.append((SoftLabel(0.5), True))
            else:
                out.append((SoftLabel(k / a), False))
        return out
    acc = np.asarray(model.accuracies, dtype=np.float64)
    post = _posterior(votes, acc, model.class_prior) if votes.size else np.zeros(len(votes))
    return [
        (SoftLabel(model.class_prior), True) if a == 0 else (SoftLabel(float(p)), False)
        for p, a in zip(post.tolist(), n_active.tolist())
    ]


def build_balanced_set(
    corpus: Sequence[str],
    soft_labels: Sequence[tuple[SoftLabel, bool]],
    n_per_class: int,
    seed: int,
) -> list[SoftLabeledExample]:
    """Sample ``n_per_class`` rows with p >= 0.5 and as many with p < 0.5.

    Abstained rows are excluded. Targets stay soft; the result is shuffled.
    """
    if len(corpus) != len(soft_labels):
        raise ValidationError("soft_labels", "must align with corpus")
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be positive, got {n_per_class}")
    pos, neg = [], []
    for i, (label, abstained) in enumerate(soft_labels):
        if abstained:
            continue
        (pos if label.p_performance >= 0.5 else neg).append(i)
    if len(pos) < n_per_class or len(neg) < n_per_class:
        raise InsufficientDataError(
            f"requested {n_per_class} per class; available: {len(pos)} performance, "
            f"{len(neg)} non-performance",
            {"performance": len(pos), "non-performance": len(neg)},
        )
    rng = random.Random(seed)
    chosen = rng.sample(pos, n_per_class) + rng.sample(neg, n_per_class)
    rng.shuffle(chosen)
    return [SoftLabeledExample(corpus[i], soft_labels[i][0]) for i in chosen]


@dataclass
class HeuristicSupervisionReport:
    lf_training: LfTrainingReport | None
    label_model: LabelModel
    abstained: int
    n_per_class: int
    epoch_losses: list[float] = field(default_factory=list)


def train_heuristic_student(
    lfs: Sequence[LabelingFunction],
    corpus: Sequence[str],
    n_per_class: int,
    mode: LabelModelMode | str = LabelModelMode.WEIGHTED_EM,
    config: TrainConfig | None = None,
    sub_classifiers: bool = True,
    workers: int = 1,
    learn_prior: bool = False,
) -> tuple[LinearTextModel, HeuristicSupervisionReport]:
    """LFs, label model and balanced sampling, then train the student on soft labels."""
    config = config or TrainConfig()
    lf_report = None
    if sub_classifiers:
        lfs, lf_report = train_lf_classifiers(lfs, corpus, config, workers)
    matrix = build_vote_matrix(lfs, corpus)
    label_model = fit_label_model(matrix, mode, learn_prior)
    soft = predict_soft_labels(label_model, matrix)
    report = HeuristicSupervisionReport(
        lf_report, label_model, sum(1 for _, a in soft if a), n_per_class
    )
    examples = build_balanced_set(corpus, soft, n_per_class, config.seed)
    model = train(examples, config, on_epoch=lambda e, loss: report.epoch_losses.append(loss))
    return model, report
