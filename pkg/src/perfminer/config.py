"""Pipeline configuration file.

The file is YAML. Every key is optional; omitted keys take the defaults in
:data:`DEFAULTS`. Relative paths are resolved against the config file's
directory. Documented keys::

    seed: 0                         # every random choice derives from this
    paths:
      labeling_functions: null      # TSV of regex LFs (packaged set if null)
      keywords: null                # keyword list (packaged list if null)
      taxonomy: null                # taxonomy file (packaged taxonomy if null)
      manifest: null                # url,language,stars CSV for `mine`
      output_dir: out
    gateway:
      endpoint_url: null
      model_name: null
      classification_max_tokens: 5
      categorization_max_tokens: 256
      timeout: 60
      max_retries: 3
      backoff_base: 0.5
      max_in_flight: 4
    miner:
      languages: [python, cpp, java]
      min_stars: 20
      max_functions_changed: 1
      branch: main
      workers: 1
      classifier: keyword           # "keyword" or a path to a saved model
    train:
      epochs: 5
      learning_rate: 0.1
      l2: 1.0e-6
      dim: 262144
    weak:
      label_model: em               # "em" or "majority"
      n_per_class: 1000
      sub_classifiers: true
      learn_prior: false            # estimate the class prior in EM (else fixed at 0.5)
    distill:
      n_per_class: 1000
      workers: 4
      cache: null                   # teacher answer cache (JSONL)

The API key is never read from this file; set ``PERFMINER_LLM_API_KEY``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from . import __version__
from .errors import ConfigError
from .features import DEFAULT_DIM

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "paths": {
        "labeling_functions": None,
        "keywords": None,
        "taxonomy": None,
        "manifest": None,
        "output_dir": "out",
    },
    "gateway": {
        "endpoint_url": None,
        "model_name": None,
        "classification_max_tokens": 5,
        "categorization_max_tokens": 256,
        "timeout": 60.0,
        "max_retries": 3,
        "backoff_base": 0.5,
        "max_in_flight": 4,
    },
    "miner": {
        "languages": ["python", "cpp", "java"],
        "min_stars": 20,
        "max_functions_changed": 1,
        "branch": "main",
        "workers": 1,
        "classifier": "keyword",
    },
    "train": {"epochs": 5, "learning_rate": 0.1, "l2": 1e-6, "dim": DEFAULT_DIM},
    "weak": {"label_model": "em", "n_per_class": 1000, "sub_classifiers": True, "learn_prior": False},
    "distill": {"n_per_class": 1000, "workers": 4, "cache": None},
}

# Paths that must exist when set.
_INPUT_PATHS = ("labeling_functions", "keywords", "taxonomy", "manifest")


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key} must be a mapping")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class PipelineConfig:
    values: dict
    source: Path | None = None

    @classmethod
    def from_mapping(cls, mapping: dict | None, base_dir: Path | None = None, source: Path | None = None):
        values = _merge(DEFAULTS, mapping or {})
        if not isinstance(values["seed"], int):
            raise ConfigError("seed must be an integer")
        base_dir = base_dir or Path.cwd()
        for key, value in values["paths"].items():
            if value is None:
                continue
            p = Path(value)
            if not p.is_absolute():
                p = base_dir / p
            values["paths"][key] = str(p)
            if key in _INPUT_PATHS and not p.exists():
                raise ConfigError(f"paths.{key}: {p} does not exist")
        if values["distill"]["cache"] is not None:
            p = Path(values["distill"]["cache"])
            values["distill"]["cache"] = str(p if p.is_absolute() else base_dir / p)
        return cls(values, source)

    @classmethod
    def load(cls, path: str | Path | None) -> "PipelineConfig":
        if path is None:
            return cls.from_mapping({})
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_mapping(doc or {}, path.parent, path)

    def __getitem__(self, section: str):
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def digest(self) -> str:
        """First 16 hex digits of the SHA-256 of the canonical config JSON."""
        canon = json.dumps(self.values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    def provenance(self, **extra) -> dict:
        doc = {"tool": "perfminer", "version": __version__, "config_hash": self.digest(), "seed": self.seed}
        doc.update(extra)
        return doc
