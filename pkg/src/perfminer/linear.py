"""Binary logistic model over hashed n-gram features, trained on soft labels.

The same model type serves as a labeling-function sub-classifier and as the
distilled student.

Model file layout (JSON, UTF-8)::

    {
      "format": "perfminer-linear",
      "version": 1,
      "dim": 262144,
      "bias": 0.0,
      "trained_on": 400,
      "config_hash": "<16 hex chars>",
      "weights": [ ... dim floats, dense ... ],
      "provenance": {...}          # optional
    }
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateCorpusError, TrainingError, ValidationError
from .features import DEFAULT_DIM, check_dim, featurize
from .records import HardLabel, SoftLabel

EPS = 1e-12
BATCH_SIZE = 32
MODEL_FORMAT = "perfminer-linear"
MODEL_VERSION = 1


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _clamp(p: float) -> float:
    return min(max(p, EPS), 1.0 - EPS)


def distillation_loss(student_p: SoftLabel | float, teacher_t: SoftLabel | float) -> float:
    """Cross-entropy of the student's probability against the teacher's distribution."""
    s = student_p.p_performance if isinstance(student_p, SoftLabel) else float(student_p)
    t1 = teacher_t.p_performance if isinstance(teacher_t, SoftLabel) else float(teacher_t)
    t0 = 1.0 - t1
    s = _clamp(s)
    loss = 0.0
    if t1 > 0.0:
        loss -= t1 * math.log(s)
    if t0 > 0.0:
        loss -= t0 * math.log(1.0 - s)
    return loss


def batch_distillation_loss(student: Sequence[float], teacher: Sequence[float]) -> float:
    if not student:
        raise ValidationError("examples", "empty batch")
    return sum(distillation_loss(s, t) for s, t in zip(student, teacher, strict=True)) / len(student)


@dataclass(frozen=True)
class SoftLabeledExample:
    message: str
    target: SoftLabel


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 0.1
    l2: float = 1e-6
    seed: int = 0
    dim: int = DEFAULT_DIM

    def __post_init__(self):
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError(f"epochs must be a positive integer, got {self.epochs!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not self.l2 >= 0:
            raise ConfigError(f"l2 must be non-negative, got {self.l2!r}")
        check_dim(self.dim)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class LinearTextModel:
    dim: int
    weights: np.ndarray
    bias: float = 0.0
    trained_on: int = 0
    config_hash: str = ""
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        check_dim(self.dim)
        w = np.array(self.weights, dtype=np.float64)
        if w.shape != (self.dim,):
            raise ValidationError("weights", f"expected shape ({self.dim},), got {w.shape}")
        if not np.all(np.isfinite(w)) or not math.isfinite(self.bias):
            raise ValidationError("weights", "non-finite parameter")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @classmethod
    def zeros(cls, dim: int = DEFAULT_DIM) -> "LinearTextModel":
        return cls(dim, np.zeros(dim))

    def __eq__(self, other):
        if not isinstance(other, LinearTextModel):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.bias == other.bias
            and self.trained_on == other.trained_on
            and self.config_hash == other.config_hash
            and np.array_equal(self.weights, other.weights)
        )

    def logit(self, message: str) -> float:
        idx, val = featurize(message, self.dim).arrays()
        return float(self.weights[idx] @ val) + self.bias

    def __call__(self, message: str) -> HardLabel:
        return classify(self, message)

    def to_json(self) -> dict:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "dim": self.dim,
            "bias": self.bias,
            "trained_on": self.trained_on,
            "config_hash": self.config_hash,
            "weights": self.weights.tolist(),
        }
        if self.provenance:
            doc["provenance"] = self.provenance
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "LinearTextModel":
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ValidationError(
                "version",
                f"unsupported model file (format={doc.get('format')!r}, version={doc.get('version')!r})",
            )
        return cls(
            dim=doc["dim"],
            weights=np.asarray(doc["weights"], dtype=np.float64),
            bias=doc["bias"],
            trained_on=doc["trained_on"],
            config_hash=doc["config_hash"],
            provenance=doc.get("provenance", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LinearTextModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def predict(model: LinearTextModel, message: str) -> SoftLabel:
    """Probability of the performance class, kept strictly inside (0, 1)."""
    return SoftLabel(_clamp(sigmoid(model.logit(message))))


def classify(model: LinearTextModel, message: str, threshold: float = 0.5) -> HardLabel:
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must lie in (0, 1), got {threshold!r}")
    if predict(model, message).p_performance >= threshold:
        return HardLabel.PERFORMANCE
    return HardLabel.NON_PERFORMANCE


def example_gradient(
    model: LinearTextModel, message: str, target: SoftLabel
) -> tuple[dict[int, float], float]:
    """Gradient of the per-example loss w.r.t. touched weights and the bias.

    The sigmoid/cross-entropy pair gives dL/dz = S - T1 whenever S is not
    clamped.
    """
    idx, val = featurize(message, model.dim).arrays()
    s = sigmoid(float(model.weights[idx] @ val) + model.bias)
    coef = s - target.p_performance
    grads: dict[int, float] = {}
    for i, v in zip(idx.tolist(), val.tolist()):
        grads[i] = grads.get(i, 0.0) + coef * v
    return grads, coef


def _check_corpus(examples: Sequence[SoftLabeledExample]) -> None:
    if len(examples) < 2:
        raise DegenerateCorpusError(f"need at least 2 examples, got {len(examples)}")
    ps = [ex.target.p_performance for ex in examples]
    if not any(p > 0.5 for p in ps) or not any(p < 0.5 for p in ps):
        raise DegenerateCorpusError("corpus needs targets on both sides of 0.5")


def _mean_loss(w: np.ndarray, b: float, feats, targets: np.ndarray) -> float:
    total = 0.0
    for (idx, val), t in zip(feats, targets):
        total += distillation_loss(sigmoid(float(w[idx] @ val) + b), float(t))
    return total / len(feats)


def train(
    examples: Sequence[SoftLabeledExample],
    config: TrainConfig | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> LinearTextModel:
    """Mini-batch SGD from the all-zeros model.

    Minimizes mean distillation loss plus ``l2 * ||w||^2``. ``on_epoch`` is
    called with ``(epoch, mean_data_loss)`` after every epoch; epoch 0 reports
    the zero model.
    """
    config = config or TrainConfig()
    _check_corpus(examples)
    dim = config.dim
    feats = [featurize(ex.message, dim).arrays() for ex in examples]
    targets = np.array([ex.target.p_performance for ex in examples], dtype=np.float64)
    w = np.zeros(dim, dtype=np.float64)
    b = 0.0
    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    decay = 1.0 - lr * 2.0 * config.l2
    if on_epoch is not None:
        on_epoch(0, _mean_loss(w, b, feats, targets))
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(examples))
        for start in range(0, len(order), BATCH_SIZE):
            batch = order[start : start + BATCH_SIZE]
            grad = np.zeros(dim, dtype=np.float64)
            grad_b = 0.0
            for j in batch:
                idx, val = feats[j]
                s = sigmoid(float(w[idx] @ val) + b)
                coef = s - targets[j]
                np.add.at(grad, idx, coef * val)
                grad_b += coef
            n = len(batch)
            if config.l2:
                w *= decay
            w -= (lr / n) * grad
            b -= lr * grad_b / n
        loss = _mean_loss(w, b, feats, targets)
        if not math.isfinite(loss) or not math.isfinite(b) or not np.all(np.isfinite(w)):
            raise TrainingError(
                f"non-finite loss at epoch {epoch} (loss={loss}, bias={b}, "
                f"max|w|={float(np.max(np.abs(w)))}, lr={lr})"
            )
        if on_epoch is not None:
            on_epoch(epoch, loss)
    return LinearTextModel(
        dim=dim,
        weights=w,
        bias=b,
        trained_on=len(examples),
        config_hash=config.digest(),
    )
