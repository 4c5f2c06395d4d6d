"""Engine configuration: one JSON document driving the whole pipeline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .classify import ClassifierConfig
from .errors import ConfigError
from .prune import PruneConfig

MODES = ("binary", "multiclass", "two-stage")


@dataclass(frozen=True)
class EnginePaths:
    logs: str = ""
    pdns: str = ""
    labels: tuple[str, ...] = ()
    segment_map: str = ""
    truth: str = ""
    out_dir: str = "out"


@dataclass(frozen=True)
class EngineConfig:
    """Everything a pipeline run needs, with paper-stated defaults."""

    window_seconds: int = 3600
    mode: str = "multiclass"
    n_classes: int = 2
    seed: int = 0
    name_clusters: int = 20
    score_knn: int = 5
    label_conflict: str = "drop"
    prune: PruneConfig = field(default_factory=PruneConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    paths: EnginePaths = field(default_factory=EnginePaths)

    def __post_init__(self):
        if self.window_seconds < 1:
            raise ConfigError("window_seconds must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be at least 2")
        if self.mode != "binary" and self.n_classes < 2:
            raise ConfigError("family modes need n_classes >= 2")
        if self.name_clusters < 1:
            raise ConfigError("name_clusters must be positive")
        if self.score_knn < 1:
            raise ConfigError("score_knn must be positive")
        if self.label_conflict not in ("drop", "randomize"):
            raise ConfigError(f"unknown label_conflict policy: {self.label_conflict!r}")

    def to_dict(self) -> dict:
        return {
            "window_seconds": self.window_seconds,
            "mode": self.mode,
            "n_classes": self.n_classes,
            "seed": self.seed,
            "graph": {"name_clusters": self.name_clusters},
            "combine": {"score_knn": self.score_knn},
            "label_conflict": self.label_conflict,
            "prune": {
                "popular_pct": self.prune.popular_pct,
                "heavy_client_pct": self.prune.heavy_client_pct,
                "min_client_domains": self.prune.min_client_domains,
                "name_rule": self.prune.name_rule,
            },
            "classifier": {
                "prior_weight": self.classifier.prior_weight,
                "solid_margin": self.classifier.solid_margin,
                "tol": self.classifier.tol,
                "max_iter": self.classifier.max_iter,
                "closed_form_cap": self.classifier.closed_form_cap,
            },
            "paths": {
                "logs": self.paths.logs,
                "pdns": self.paths.pdns,
                "labels": list(self.paths.labels),
                "segment_map": self.paths.segment_map,
                "truth": self.paths.truth,
                "out_dir": self.paths.out_dir,
            },
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8"
        )


def _take(section: dict, keys: dict, where: str) -> dict:
    unknown = set(section) - set(keys)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    picked = {}
    for name, kind in keys.items():
        if name not in section:
            continue
        value = section[name]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind):
            raise ConfigError(f"{where}.{name} must be {kind.__name__}")
        picked[name] = value
    return picked


def config_from_dict(raw: dict) -> EngineConfig:
    """Build an EngineConfig from a parsed JSON document, strictly."""
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a JSON object")
    top = _take(
        raw,
        {
            "window_seconds": int,
            "mode": str,
            "n_classes": int,
            "seed": int,
            "label_conflict": str,
            "graph": dict,
            "combine": dict,
            "prune": dict,
            "classifier": dict,
            "paths": dict,
        },
        "config",
    )
    kwargs: dict = {
        k: top[k]
        for k in ("window_seconds", "mode", "n_classes", "seed", "label_conflict")
        if k in top
    }
    if "graph" in top:
        graph = _take(top["graph"], {"name_clusters": int}, "graph")
        kwargs.update(graph)
    if "combine" in top:
        combine = _take(top["combine"], {"score_knn": int}, "combine")
        kwargs.update(combine)
    if "prune" in top:
        fields = _take(
            top["prune"],
            {
                "popular_pct": float,
                "heavy_client_pct": float,
                "min_client_domains": int,
                "name_rule": str,
            },
            "prune",
        )
        kwargs["prune"] = PruneConfig(**fields)
    if "classifier" in top:
        fields = _take(
            top["classifier"],
            {
                "prior_weight": float,
                "solid_margin": float,
                "tol": float,
                "max_iter": int,
                "closed_form_cap": int,
            },
            "classifier",
        )
        kwargs["classifier"] = ClassifierConfig(**fields)
    if "paths" in top:
        section = dict(top["paths"])
        labels = section.get("labels", ())
        if isinstance(labels, str):
            labels = (labels,)
        elif isinstance(labels, list):
            if not all(isinstance(p, str) for p in labels):
                raise ConfigError("paths.labels must be a list of strings")
            labels = tuple(labels)
        else:
            raise ConfigError("paths.labels must be a string or list of strings")
        section.pop("labels", None)
        fields = _take(
            section,
            {
                "logs": str,
                "pdns": str,
                "segment_map": str,
                "truth": str,
                "out_dir": str,
            },
            "paths",
        )
        kwargs["paths"] = EnginePaths(labels=labels, **fields)
    return EngineConfig(**kwargs)


def load_config(path: str | Path) -> EngineConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(raw)


def override_config(config: EngineConfig, **updates) -> EngineConfig:
    """Apply non-None keyword overrides onto an existing config."""
    cleaned = {k: v for k, v in updates.items() if v is not None}
    top_level = {
        k: v
        for k, v in cleaned.items()
        if k in ("window_seconds", "mode", "n_classes", "seed", "name_clusters",
                 "score_knn", "label_conflict")
    }
    result = replace(config, **top_level) if top_level else config
    classifier_updates = {
        k: v
        for k, v in cleaned.items()
        if k in ("prior_weight", "solid_margin", "tol", "max_iter")
    }
    if classifier_updates:
        result = replace(result, classifier=replace(result.classifier, **classifier_updates))
    prune_updates = {
        k: v
        for k, v in cleaned.items()
        if k in ("popular_pct", "heavy_client_pct", "min_client_domains", "name_rule")
    }
    if prune_updates:
        result = replace(result, prune=replace(result.prune, **prune_updates))
    path_updates = {
        k: v
        for k, v in cleaned.items()
        if k in ("logs", "pdns", "labels", "segment_map", "truth", "out_dir")
    }
    if path_updates:
        if "labels" in path_updates and isinstance(path_updates["labels"], list):
            path_updates["labels"] = tuple(path_updates["labels"])
        result = replace(result, paths=replace(result.paths, **path_updates))
    return result
