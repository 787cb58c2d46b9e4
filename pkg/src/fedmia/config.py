"""Experiment configuration: a flat ``key = value`` grammar.

Lines are ``section.key = value``; ``#`` starts a comment; blank lines are
ignored. Unknown keys, duplicate keys and out-of-range values are errors.
Only ``dataset.kind`` is required; every other key has a default.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .federation import AggregationStrategy

# keys that do not change results and are left out of the config hash
NON_SEMANTIC_KEYS = ("output_dir", "run.workers")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line, self.key = line, key
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


def _unit_open(v):
    return 0.0 < v < 1.0


def _unit_half_open(v):
    return 0.0 <= v < 1.0


# key -> (type, default, range check or None, help)
SCHEMA: dict[str, tuple] = {
    "name": (str, "experiment", None, "free-form run label"),
    "seed": (int, 0, None, "master seed; every random stream derives from it"),
    "output_dir": (str, "results", None, "where run/sweep outputs are written"),
    "dataset.kind": (str, None, lambda v: v in ("synthetic", "idx", "csv"),
                     "synthetic | idx | csv"),
    "dataset.samples": (int, 3000, _positive, "synthetic sample count"),
    "dataset.features": (int, 20, _positive, "synthetic feature count"),
    "dataset.classes": (int, 5, lambda v: v >= 2, "synthetic class count"),
    "dataset.separation": (float, 3.0, _positive, "distance between class means"),
    "dataset.seed": (int, -1, None, "data seed; -1 derives it from the master seed"),
    "dataset.images": (str, "", None, "IDX images path"),
    "dataset.labels": (str, "", None, "IDX labels path"),
    "dataset.path": (str, "", None, "CSV dataset path"),
    "dataset.limit": (int, 0, _non_negative, "keep only the first N samples (0 = all)"),
    "split.shadow_pool": (int, 800, lambda v: v >= 4, "samples reserved for the adversary"),
    "split.test_size": (int, 500, _positive, "samples reserved for test accuracy"),
    "split.train_fraction": (float, 0.5, _unit_open,
                             "share of the remaining samples that are members"),
    "split.reference_fraction": (float, 0.1, _unit_half_open,
                                 "share of the member side held by the server as reference"),
    "model.hidden": (str, "64", None, "comma-separated hidden widths (empty = linear)"),
    "federation.n_clients": (int, 2, _positive, "number of clients"),
    "federation.rounds": (int, 20, _non_negative, "number of rounds"),
    "federation.strategy": (str, "fedavg", None,
                            "fedavg | first | round_robin | most_confident | correct_confident"),
    "federation.correct_mode": (str, "truth", lambda v: v in ("truth", "agreement"),
                                "correctness reference for correct_confident"),
    "train.lr": (float, 0.05, _positive, "SGD learning rate"),
    "train.batch_size": (int, 32, _positive, "mini-batch size"),
    "train.local_epochs": (int, 1, _positive, "local epochs per round"),
    "attack.k_shadows": (int, 4, _positive, "number of shadow models"),
    "attack.shadow_epochs": (int, 0, _non_negative,
                             "shadow training epochs (0 = rounds x local_epochs)"),
    "attack.eval_size": (int, 200, _positive, "evaluation samples per membership class"),
    "attack.cadence": (int, 1, _positive, "evaluate the attack every m rounds"),
    "run.workers": (int, 1, _positive, "threads for client training"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration, indexed by dotted key (``cfg["train.lr"]``)."""

    values: tuple = field(default=())

    def __getitem__(self, key: str):
        return dict(self.values)[key]

    def with_values(self, **updates) -> "ExperimentConfig":
        """Copy with keys replaced; use ``__`` for dots (``federation__n_clients=5``)."""
        merged = dict(self.values)
        for attr, value in updates.items():
            merged[attr.replace("__", ".")] = value
        return build_config(merged)

    @property
    def strategy(self) -> AggregationStrategy:
        return AggregationStrategy.parse(self["federation.strategy"])

    @property
    def hidden(self) -> list[int]:
        text = self["model.hidden"].strip()
        return [int(t) for t in text.split(",") if t.strip()] if text else []

    @property
    def shadow_epochs(self) -> int:
        e = self["attack.shadow_epochs"]
        return e if e > 0 else max(1, self["federation.rounds"] * self["train.local_epochs"])

    def serialize(self, include_non_semantic: bool = True) -> str:
        lines = []
        for key, value in self.values:
            if not include_non_semantic and key in NON_SEMANTIC_KEYS:
                continue
            lines.append(f"{key} = {_format(value)}")
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        text = self.serialize(include_non_semantic=False)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(key: str, raw: str, line: int | None):
    typ = SCHEMA[key][0]
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}", line, key) from None
    return raw


def build_config(values: dict, lines: dict | None = None,
                 base_dir=None) -> ExperimentConfig:
    lines = lines or {}
    for key in values:
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lines.get(key), key)
    resolved = {}
    for key, (typ, default, check, _) in SCHEMA.items():
        if key in values:
            value = values[key]
            if isinstance(value, str) and typ is not str:
                value = _convert(key, value, lines.get(key))
            elif typ is float and isinstance(value, int):
                value = float(value)
        elif default is None:
            raise ConfigError(f"missing required key {key!r}", None, key)
        else:
            value = default
        if check is not None and not check(value):
            raise ConfigError(f"{key} = {value!r} is out of range", lines.get(key), key)
        resolved[key] = value
    try:
        AggregationStrategy.parse(resolved["federation.strategy"])
    except ValueError as exc:
        raise ConfigError(str(exc), lines.get("federation.strategy"),
                          "federation.strategy") from None
    resolved["federation.strategy"] = AggregationStrategy.parse(
        resolved["federation.strategy"]).value
    try:
        [int(t) for t in resolved["model.hidden"].split(",") if t.strip()]
    except ValueError:
        raise ConfigError("model.hidden must be comma-separated integers",
                          lines.get("model.hidden"), "model.hidden") from None
    kind = resolved["dataset.kind"]
    required = {"idx": ("dataset.images", "dataset.labels"), "csv": ("dataset.path",)}
    for key in required.get(kind, ()):
        if not resolved[key]:
            raise ConfigError(f"dataset.kind = {kind} needs {key}", None, key)
        path = Path(resolved[key])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
            resolved[key] = str(path)
        if not path.exists():
            raise ConfigError(f"{key}: file {str(path)!r} does not exist",
                              lines.get(key), key)
    return ExperimentConfig(tuple(resolved.items()))


def parse_config(text: str, base_dir=None) -> ExperimentConfig:
    """Parse and validate config text; relative paths resolve against ``base_dir``."""
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno, key)
        values[key], lines[key] = value, lineno
    return build_config(values, lines, base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)
