"""Flat ``key = value`` run configuration with dotted section names.

Example::

    # desk-scale FedProx
    seed = 3
    model.name = flnet
    round.mu = 0.0001
    round.rounds = 10
    corpus.heterogeneity = 0.5

Resolution order: command-line flag, then config file, then built-in default.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable

from flroute.data import DEFAULT_PLACEMENTS, CorpusConfig
from flroute.errors import ConfigurationError
from flroute.federation import RoundConfig
from flroute.nn import PRESETS
from flroute.personalize import PersonalizationConfig


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _int_map(text: str) -> dict[int, int]:
    out = {}
    for item in text.replace(" ", "").split(","):
        if item:
            k, v = item.split(":")
            out[int(k)] = int(v)
    return out


def _model_name(text: str) -> str:
    if text not in PRESETS:
        raise ValueError(f"expected one of {sorted(PRESETS)}")
    return text


# key -> (section, field, parser)
SCHEMA: dict[str, tuple[str, str, Callable[[str], Any]]] = {
    "seed": ("run", "seed", int),
    "model.name": ("run", "model", _model_name),
    "round.rounds": ("round", "rounds", int),
    "round.steps_per_round": ("round", "steps_per_round", int),
    "round.batch_size": ("round", "batch_size", int),
    "round.learning_rate": ("round", "learning_rate", float),
    "round.mu": ("round", "mu", float),
    "round.weight_decay": ("round", "weight_decay", float),
    "round.threads": ("round", "threads", int),
    "personalize.fine_tune_steps": ("personalize", "fine_tune_steps", int),
    "personalize.alpha": ("personalize", "alpha", float),
    "personalize.clusters": ("personalize", "clusters", int),
    "personalize.assignment": ("run", "assignment", _int_map),
    "corpus.clients": ("corpus", "clients", int),
    "corpus.families": ("corpus", "families", _int_list),
    "corpus.designs_per_client": ("corpus", "designs_per_client", _int_list),
    "corpus.placements_per_design": ("corpus", "placements_per_design", _int_map),
    "corpus.grid": ("corpus", "grid", int),
    "corpus.channels": ("corpus", "channels", int),
    "corpus.heterogeneity": ("corpus", "heterogeneity", float),
    "corpus.label_noise": ("corpus", "label_noise", float),
    "corpus.train_fraction": ("corpus", "train_fraction", float),
}

# keys that only make sense together
_REQUIRES = {"corpus.clients": ("corpus.families", "corpus.designs_per_client")}


@dataclass
class Settings:
    seed: int = 0
    model: str = "flnet"
    assignment: dict[int, int] | None = None
    round: RoundConfig = field(default_factory=RoundConfig)
    personalize: PersonalizationConfig = field(default_factory=PersonalizationConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    sources: dict[str, str] = field(default_factory=dict)

    def snapshot(self) -> dict:
        return {
            "seed": self.seed,
            "model": self.model,
            "assignment": None if self.assignment is None else {str(k): v for k, v in self.assignment.items()},
            "round": {f.name: getattr(self.round, f.name) for f in fields(self.round)},
            "personalize": {f.name: getattr(self.personalize, f.name) for f in fields(self.personalize)},
            "corpus": self.corpus.snapshot(),
        }


def parse_config(text: str, source: str = "<config>") -> dict[str, tuple[Any, int]]:
    """Parse and type-check every line; returns ``key -> (value, line number)``."""
    seen: dict[str, tuple[Any, int]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        key, value = (s.strip() for s in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigurationError(f"{source}:{lineno}: key {key!r} already set on line {seen[key][1]}")
        if not value:
            raise ConfigurationError(f"{source}:{lineno}: key {key!r} has no value")
        try:
            seen[key] = (SCHEMA[key][2](value), lineno)
        except ValueError as exc:
            raise ConfigurationError(f"{source}:{lineno}: bad value for {key!r}: {value!r} ({exc})") from None
    for key, needed in _REQUIRES.items():
        if key in seen:
            for other in needed:
                if other not in seen:
                    raise ConfigurationError(
                        f"{source}:{seen[key][1]}: {key!r} is set but required key {other!r} is missing"
                    )
    return seen


def resolve(config_path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> Settings:
    """Defaults, then the file, then non-None ``overrides`` (flag values keyed like the file)."""
    values: dict[str, Any] = {}
    sources: dict[str, str] = {}
    if config_path is not None:
        path = Path(config_path)
        try:
            text = path.read_text()
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        for key, (value, lineno) in parse_config(text, str(path)).items():
            values[key] = value
            sources[key] = f"{path}:{lineno}"
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown override {key!r}")
        values[key] = value
        sources[key] = "flag"

    grouped: dict[str, dict[str, Any]] = {"run": {}, "round": {}, "personalize": {}, "corpus": {}}
    for key, value in values.items():
        section, name, _ = SCHEMA[key]
        grouped[section][name] = value

    settings = Settings(**grouped["run"])
    corpus = dict(grouped["corpus"])
    if "placements_per_design" in corpus:
        corpus["placements_per_design"] = {**DEFAULT_PLACEMENTS, **corpus["placements_per_design"]}
    settings.round = replace(RoundConfig(), seed=settings.seed, **grouped["round"])
    settings.personalize = replace(PersonalizationConfig(), **grouped["personalize"])
    settings.corpus = replace(CorpusConfig(), seed=settings.seed, **corpus)
    settings.sources = sources
    settings.round.validate()
    settings.personalize.validate()
    settings.corpus.validate()
    return settings
