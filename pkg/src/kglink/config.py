"""key=value configuration files, typed construction, and shipped presets.

The file grammar is one ``key=value`` pair per line, ``#`` comments and
blank lines allowed, keys kebab-case. Typed constructors collect every
problem before failing so a bad file is reported in one pass.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Mapping

from .builder import BuildConfig
from .complex_model import KgcTrainConfig, config_fingerprint
from .inductive import InductiveTrainConfig


class ConfigError(ValueError):
    """Carries every violation found in one validation pass."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep or not key:
            problems.append(f"{source}:{lineno}: expected key=value, got {stripped!r}")
            continue
        if key in pairs:
            problems.append(f"{source}:{lineno}: duplicate key {key!r}")
            continue
        pairs[key] = value
    if problems:
        raise ConfigError(problems)
    return pairs


def load_config(path: str | Path) -> dict[str, str]:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))


def write_config(pairs: Mapping[str, str], path: str | Path) -> None:
    lines = [f"{key}={pairs[key]}" for key in sorted(pairs)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def config_hash(pairs: Mapping[str, object]) -> bytes:
    """sha256 over the canonical sorted key=value rendering."""
    return config_fingerprint({k: str(v) for k, v in pairs.items()})


def list_presets() -> list[str]:
    root = resources.files("kglink").joinpath("presets")
    return sorted(p.name[: -len(".cfg")] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_preset(name: str) -> dict[str, str]:
    root = resources.files("kglink").joinpath("presets")
    candidate = root.joinpath(f"{name}.cfg")
    if not candidate.is_file():
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return parse_config_text(candidate.read_text(encoding="utf-8"), source=f"preset:{name}")


class _Reader:
    """Pulls typed values out of a string mapping, remembering problems."""

    def __init__(self, pairs: Mapping[str, str], source: str):
        self.pairs = dict(pairs)
        self.source = source
        self.problems: list[str] = []
        self.used: set[str] = set()

    def _raw(self, key: str):
        self.used.add(key)
        return self.pairs.get(key)

    def integer(self, key: str, default=None, required=False):
        raw = self._raw(key)
        if raw is None:
            if required:
                self.problems.append(f"{key}: required")
            return default
        try:
            return int(raw)
        except ValueError:
            self.problems.append(f"{key}: expected an integer, got {raw!r}")
            return default

    def floating(self, key: str, default=None, required=False):
        raw = self._raw(key)
        if raw is None:
            if required:
                self.problems.append(f"{key}: required")
            return default
        try:
            return float(raw)
        except ValueError:
            self.problems.append(f"{key}: expected a number, got {raw!r}")
            return default

    def boolean(self, key: str, default=None):
        raw = self._raw(key)
        if raw is None:
            return default
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        self.problems.append(f"{key}: expected true or false, got {raw!r}")
        return default

    def optional_integer(self, key: str, default=None):
        """An integer or the literal ``none``."""
        raw = self._raw(key)
        if raw is None:
            return default
        if raw.lower() == "none":
            return None
        try:
            return int(raw)
        except ValueError:
            self.problems.append(f"{key}: expected an integer or none, got {raw!r}")
            return default

    def text(self, key: str, default=None, choices=None):
        raw = self._raw(key)
        if raw is None:
            return default
        if choices and raw not in choices:
            self.problems.append(f"{key}: expected one of {choices}, got {raw!r}")
            return default
        return raw

    def finish(self, builder):
        unknown = set(self.pairs) - self.used
        for key in sorted(unknown):
            self.problems.append(f"{key}: unknown key")
        if self.problems:
            raise ConfigError(f"{self.source}: {p}" for p in self.problems)
        try:
            return builder()
        except (ValueError, TypeError) as exc:
            raise ConfigError([f"{self.source}: {exc}"]) from exc


def build_config_from(pairs: Mapping[str, str], source: str = "build") -> BuildConfig:
    r = _Reader(pairs, source)
    values = dict(
        concept_relation_count=r.integer("concept-relation-count", required=True),
        total_relation_count=r.integer("total-relation-count", required=True),
        closed_world_threshold=r.optional_integer("closed-world-threshold"),
        target_mention_split=r.floating("target-mention-split", required=True),
        target_validation_split=r.floating("target-validation-split", required=True),
        mention_threshold=r.integer("mention-threshold", default=1),
        seed=r.integer("seed", default=0),
    )
    return r.finish(lambda: BuildConfig(**values))


def kgc_config_from(pairs: Mapping[str, str], source: str = "kgc") -> KgcTrainConfig:
    r = _Reader(pairs, source)
    values = dict(
        dim=r.integer("dim", required=True),
        learning_rate=r.floating("learning-rate", required=True),
        regularizer_weight=r.floating("regularizer-weight", default=0.0),
        batch_size=r.integer("batch-size", required=True),
        max_epochs=r.integer("max-epochs", default=500),
        patience=r.optional_integer("patience", default=10),
        min_delta=r.floating("min-delta", default=0.001),
        seed=r.integer("seed", default=0),
        optimizer=r.text("optimizer", default="adagrad", choices=("adagrad",)),
    )
    return r.finish(lambda: KgcTrainConfig(**values))


def inductive_config_from(
    pairs: Mapping[str, str], source: str = "inductive"
) -> InductiveTrainConfig:
    r = _Reader(pairs, source)
    unfrozen_layers = r.integer("unfrozen-layers")
    unfrozen_flag = r.boolean("unfrozen-encoder")
    if unfrozen_flag is None:
        # published tables count unfrozen encoder layers; any nonzero count
        # maps to a trainable token table here
        unfrozen_flag = True if unfrozen_layers is None else unfrozen_layers > 0
    values = dict(
        dim=r.integer("dim", required=True),
        mode=r.text("mode", choices=("single", "multi")),
        contexts_per_sample=r.integer("contexts-per-sample", default=1),
        max_contexts=r.integer("max-contexts", default=1),
        masked=r.boolean("masked", default=False),
        learning_rate=r.floating("learning-rate", required=True),
        weight_decay=r.floating("weight-decay", default=0.0),
        regularizer_weight=r.floating("regularizer-weight", default=0.0),
        batch_size=r.integer("batch-size", default=16),
        subbatch_size=r.optional_integer("subbatch-size"),
        max_epochs=r.integer("max-epochs", default=100),
        patience=r.optional_integer("patience", default=None),
        min_delta=r.floating("min-delta", default=0.001),
        seed=r.integer("seed", default=0),
        encoder_dim=r.integer("encoder-dim", default=256),
        unfrozen_encoder=unfrozen_flag,
    )
    if values["mode"] is None:
        r.problems.append("mode: required")
    return r.finish(lambda: InductiveTrainConfig(**values))
