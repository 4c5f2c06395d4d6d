"""Windowed pipeline runs and the experiment harnesses built on them.

A run walks the fixed stage order per window: build the typed graph, prune
it, compute and weight the metapath similarities, spread the known labels,
write verdicts and reports.  Solid verdicts from one window feed the next
window's priors as local list entries, ranked below manual and public
sources.  The experiment functions reuse the same stages on a fixed window
while varying which labels are kept, flipped, or which similarity is used.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classify import (
    ClassifierConfig,
    LocalListStore,
    Metrics,
    VerdictSet,
    evaluate_assignments,
    normalize,
    one_hot,
    propagate,
    resolve_priors,
    update_local_lists,
    verdicts,
    write_verdicts,
)
from .combine import MetapathCombiner
from .config import EngineConfig
from .errors import ConfigError, EmptyGraphError
from .hin import GraphBuilder, HinGraph
from .ingest import (
    BENIGN_CLASS,
    LabelEntry,
    WindowBatch,
    build_windows,
    load_labels,
    load_segment_map,
    read_log_file,
    read_pdns_file,
)
from .metapath import ALL_METAPATHS, all_similarities
from .prune import prune


def collapse_to_binary(entries: list[LabelEntry]) -> list[LabelEntry]:
    """Map every malicious family class onto the single malicious class."""
    return [
        e if e.class_id <= 1 else dataclasses.replace(e, class_id=1)
        for e in entries
    ]


@dataclass
class Transduction:
    """Mode-aware classification outcome for one window."""

    class_ids: np.ndarray
    confidence: np.ndarray
    solid: np.ndarray
    unreached: np.ndarray
    ranking: np.ndarray
    scores: np.ndarray
    iterations_used: int
    converged: bool
    n_classes: int

    def verdict_set(self) -> VerdictSet:
        return VerdictSet(
            class_ids=self.class_ids,
            confidence=self.confidence,
            solid=self.solid,
            unreached=self.unreached,
        )


def _spread(similarity, labels: np.ndarray, n_classes: int,
            config: ClassifierConfig):
    s = normalize(similarity)
    return propagate(s, one_hot(labels, n_classes), config)


def transduce(
    similarity,
    prior_entries: list[LabelEntry],
    domains: tuple[str, ...] | list[str],
    config: EngineConfig,
) -> Transduction:
    """Spread priors over one similarity matrix under the configured mode."""
    classifier = config.classifier
    if config.mode == "binary":
        entries = collapse_to_binary(prior_entries)
        labels = resolve_priors(domains, entries, 2, config.label_conflict, config.seed)
        result = _spread(similarity, labels, 2, classifier)
        vs = verdicts(result.scores, classifier)
        return Transduction(
            class_ids=vs.class_ids, confidence=vs.confidence, solid=vs.solid,
            unreached=vs.unreached,
            ranking=result.scores[:, 1] - result.scores[:, 0],
            scores=result.scores,
            iterations_used=result.iterations_used, converged=result.converged,
            n_classes=2,
        )
    labels = resolve_priors(
        domains, prior_entries, config.n_classes, config.label_conflict, config.seed
    )
    if config.mode == "multiclass" or config.n_classes == 2:
        result = _spread(similarity, labels, config.n_classes, classifier)
        vs = verdicts(result.scores, classifier)
        return Transduction(
            class_ids=vs.class_ids, confidence=vs.confidence, solid=vs.solid,
            unreached=vs.unreached,
            ranking=result.scores[:, 1:].max(axis=1) - result.scores[:, 0],
            scores=result.scores,
            iterations_used=result.iterations_used, converged=result.converged,
            n_classes=config.n_classes,
        )
    # Two stages: a benign/malicious pass, then family assignment among the
    # domains the first pass called malicious.
    binary_entries = collapse_to_binary(prior_entries)
    binary_labels = resolve_priors(
        domains, binary_entries, 2, config.label_conflict, config.seed
    )
    stage_one = _spread(similarity, binary_labels, 2, classifier)
    first = verdicts(stage_one.scores, classifier)
    class_ids = np.zeros(len(domains), dtype=np.int64)
    confidence = first.confidence.copy()
    solid = first.solid.copy()
    flagged = np.flatnonzero(first.class_ids != BENIGN_CLASS)
    iterations = stage_one.iterations_used
    converged = stage_one.converged
    if flagged.size:
        sub = similarity[flagged][:, flagged]
        family_labels = np.where(labels[flagged] >= 1, labels[flagged] - 1, -1)
        n_families = config.n_classes - 1
        if n_families >= 2:
            stage_two = _spread(sub, family_labels, n_families, classifier)
            iterations += stage_two.iterations_used
            converged = converged and stage_two.converged
            second = verdicts(stage_two.scores, classifier)
            class_ids[flagged] = second.class_ids + 1
            confidence[flagged] = second.confidence
            solid[flagged] = second.solid
        else:
            class_ids[flagged] = 1
    return Transduction(
        class_ids=class_ids, confidence=confidence, solid=solid,
        unreached=first.unreached,
        ranking=stage_one.scores[:, 1] - stage_one.scores[:, 0],
        scores=stage_one.scores,
        iterations_used=iterations, converged=converged,
        n_classes=config.n_classes,
    )


def _mode_truth(truth_entries: list[LabelEntry], domains, config: EngineConfig) -> np.ndarray:
    if config.mode == "binary":
        return resolve_priors(domains, collapse_to_binary(truth_entries), 2,
                              config.label_conflict, config.seed)
    return resolve_priors(domains, truth_entries, config.n_classes,
                          config.label_conflict, config.seed)


def score_transduction(
    result: Transduction,
    truth_entries: list[LabelEntry],
    prior_entries: list[LabelEntry],
    domains,
    config: EngineConfig,
) -> Metrics:
    """Evaluate on truth rows that carried no prior; all rows if none are free."""
    truth = _mode_truth(truth_entries, domains, config)
    n_classes = 2 if config.mode == "binary" else config.n_classes
    priors = resolve_priors(
        domains,
        collapse_to_binary(prior_entries) if config.mode == "binary" else prior_entries,
        n_classes, config.label_conflict, config.seed,
    )
    withheld = np.where(priors >= 0, -1, truth)
    target = withheld if (withheld >= 0).any() else truth
    return evaluate_assignments(
        result.class_ids, target, n_classes,
        ranking=result.ranking, unreached=result.unreached,
    )


@dataclass
class WindowOutcome:
    window_start: int
    window_end: int
    n_clients: int
    n_domains: int
    n_ips: int
    removed: dict
    weights: dict
    n_solid: int
    n_unreached: int
    iterations_used: int
    converged: bool
    metrics: Metrics | None

    def to_dict(self) -> dict:
        payload = {
            "window_start": self.window_start,
            "window_end": self.window_end,
            "n_clients": self.n_clients,
            "n_domains": self.n_domains,
            "n_ips": self.n_ips,
            "removed": self.removed,
            "weights": self.weights,
            "n_solid": self.n_solid,
            "n_unreached": self.n_unreached,
            "iterations_used": self.iterations_used,
            "converged": self.converged,
        }
        if self.metrics is not None:
            payload["metrics"] = json.loads(self.metrics.to_json())
        return payload


@dataclass
class RunSummary:
    windows: list[WindowOutcome]
    note: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {"note": self.note, "windows": [w.to_dict() for w in self.windows]},
            indent=2, sort_keys=True,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


@dataclass
class _Inputs:
    batches: list[WindowBatch]
    segment_map: dict[str, str]
    labels: list[LabelEntry]
    truth: list[LabelEntry]


def _load_inputs(config: EngineConfig) -> _Inputs:
    paths = config.paths
    if not paths.logs:
        raise ConfigError("paths.logs is required")
    records, _ = read_log_file(paths.logs)
    pdns = []
    if paths.pdns:
        pdns, _ = read_pdns_file(paths.pdns)
    segment_map = load_segment_map(paths.segment_map) if paths.segment_map else {}
    labels: list[LabelEntry] = []
    for label_path in paths.labels:
        labels.extend(load_labels(label_path))
    truth = load_labels(paths.truth) if paths.truth else []
    batches = build_windows(records, pdns, config.window_seconds)
    return _Inputs(batches=batches, segment_map=segment_map, labels=labels, truth=truth)


def _build_graph(batch: WindowBatch, segment_map, config: EngineConfig) -> HinGraph:
    builder = GraphBuilder(
        segment_map=segment_map,
        name_clusters=config.name_clusters,
        seed=config.seed,
    )
    return builder.fit_transform(batch)


def process_window(
    batch: WindowBatch,
    segment_map: dict[str, str],
    prior_entries: list[LabelEntry],
    truth_entries: list[LabelEntry],
    config: EngineConfig,
    out_dir: Path | None = None,
) -> tuple[WindowOutcome, Transduction, tuple[str, ...]]:
    graph = _build_graph(batch, segment_map, config)
    pruned, report = prune(graph, prior_entries, config.prune)
    combiner = MetapathCombiner(score_knn=config.score_knn).fit(pruned)
    domains = pruned.registry.domains
    result = transduce(combiner.combined_, prior_entries, domains, config)
    metrics = None
    if truth_entries:
        metrics = score_transduction(result, truth_entries, prior_entries, domains, config)
    outcome = WindowOutcome(
        window_start=batch.window_start,
        window_end=batch.window_end,
        n_clients=len(pruned.registry.clients),
        n_domains=len(domains),
        n_ips=len(pruned.registry.ips),
        removed=dict(report.removed),
        weights=combiner.weights_.as_dict(),
        n_solid=int(result.solid.sum()),
        n_unreached=int(result.unreached.sum()),
        iterations_used=result.iterations_used,
        converged=result.converged,
        metrics=metrics,
    )
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_verdicts(out_dir / "verdicts.csv", domains, result.verdict_set())
        report.save(out_dir / "prune_report.json")
        (out_dir / "weights.json").write_text(
            json.dumps(combiner.weights_.as_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        if metrics is not None:
            metrics.save(out_dir / "metrics.json")
            metrics.save_roc(out_dir / "roc.csv")
    return outcome, result, domains


def run(config: EngineConfig) -> RunSummary:
    """Execute the full windowed pipeline and write reports."""
    inputs = _load_inputs(config)
    out_root = Path(config.paths.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    config.save(out_root / "resolved_config.json")
    if not inputs.batches:
        summary = RunSummary(windows=[], note="no windows")
        summary.save(out_root / "run_report.json")
        return summary
    store = LocalListStore()
    outcomes: list[WindowOutcome] = []
    for batch in inputs.batches:
        if not batch.logs:
            continue
        window_dir = out_root / f"window_{batch.window_start}"
        prior_entries = inputs.labels + store.labels()
        try:
            outcome, result, domains = process_window(
                batch, inputs.segment_map, prior_entries, inputs.truth,
                config, window_dir,
            )
        except EmptyGraphError as exc:
            raise EmptyGraphError(
                f"window [{batch.window_start}, {batch.window_end}): {exc}"
            ) from exc
        store = update_local_lists(
            store, domains, result.verdict_set(), batch.window_end
        )
        outcomes.append(outcome)
    store.save(out_root / "local_lists.csv")
    note = "" if outcomes else "no windows"
    summary = RunSummary(windows=outcomes, note=note)
    summary.save(out_root / "run_report.json")
    return summary


# --- experiment harnesses ----------------------------------------------------


@dataclass
class ExperimentRow:
    setting: str
    metrics_mean: dict
    metrics_std: dict
    repeats: int

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "repeats": self.repeats,
            "mean": self.metrics_mean,
            "std": self.metrics_std,
        }


@dataclass
class ExperimentTable:
    name: str
    rows: list[ExperimentRow]
    elapsed_seconds: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "experiment": self.name,
                "elapsed_seconds": round(self.elapsed_seconds, 3),
                "rows": [r.to_dict() for r in self.rows],
            },
            indent=2, sort_keys=True,
        )

    def to_csv(self) -> str:
        fields = ["accuracy", "precision", "recall", "F1", "unlabeled_rate"]
        lines = ["setting," + ",".join(f"{f}_mean,{f}_std" for f in fields)]
        for row in self.rows:
            cells = [row.setting]
            for f in fields:
                cells.append(f"{row.metrics_mean[f]:.6f}")
                cells.append(f"{row.metrics_std[f]:.6f}")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        header = f"{'setting':<16}{'accuracy':>10}{'precision':>11}{'recall':>9}{'F1':>9}{'unlabeled':>11}"
        lines = [f"experiment: {self.name}", header, "-" * len(header)]
        for row in self.rows:
            m = row.metrics_mean
            lines.append(
                f"{row.setting:<16}{m['accuracy']:>10.4f}{m['precision']:>11.4f}"
                f"{m['recall']:>9.4f}{m['F1']:>9.4f}{m['unlabeled_rate']:>11.4f}"
            )
        lines.append(f"({self.rows[0].repeats if self.rows else 0} repeats, "
                     f"{self.elapsed_seconds:.1f}s)")
        return "\n".join(lines) + "\n"

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{self.name}.json").write_text(self.to_json() + "\n", encoding="utf-8")
        (out / f"{self.name}.csv").write_text(self.to_csv(), encoding="utf-8")
        (out / f"{self.name}.txt").write_text(self.to_text(), encoding="utf-8")


_METRIC_FIELDS = ("accuracy", "precision", "recall", "F1", "unlabeled_rate")


def _metric_values(m: Metrics) -> dict:
    return {
        "accuracy": m.accuracy,
        "precision": m.precision,
        "recall": m.recall,
        "F1": m.f1,
        "unlabeled_rate": m.unlabeled_rate,
    }


def _aggregate(setting: str, collected: list[dict], repeats: int) -> ExperimentRow:
    mean = {}
    std = {}
    for f in _METRIC_FIELDS:
        values = np.array([c[f] for c in collected], dtype=np.float64)
        mean[f] = float(values.mean())
        std[f] = float(values.std())
    return ExperimentRow(setting=setting, metrics_mean=mean, metrics_std=std,
                         repeats=repeats)


@dataclass
class _Bench:
    """A fixed window plus its truth, shared by every experiment repeat."""

    batch: WindowBatch
    segment_map: dict[str, str]
    truth: list[LabelEntry]


def _experiment_bench(config: EngineConfig) -> _Bench:
    inputs = _load_inputs(config)
    if not inputs.truth:
        raise ConfigError("experiments need paths.truth for ground-truth labels")
    for batch in inputs.batches:
        if batch.logs:
            return _Bench(batch=batch, segment_map=inputs.segment_map,
                          truth=inputs.truth)
    raise ConfigError("no non-empty window in the input logs")


def _retained(truth: list[LabelEntry], fraction: float,
              rng: np.random.Generator) -> list[LabelEntry]:
    keep = rng.random(len(truth)) < fraction
    return [e for e, k in zip(truth, keep) if k]


def _classify_rep(
    bench: _Bench,
    prior_entries: list[LabelEntry],
    config: EngineConfig,
) -> dict:
    graph = _build_graph(bench.batch, bench.segment_map, config)
    pruned, _ = prune(graph, prior_entries, config.prune)
    combiner = MetapathCombiner(score_knn=config.score_knn).fit(pruned)
    domains = pruned.registry.domains
    result = transduce(combiner.combined_, prior_entries, domains, config)
    metrics = score_transduction(result, bench.truth, prior_entries, domains, config)
    return _metric_values(metrics)


def experiment_label_sweep(
    config: EngineConfig,
    fractions: tuple[float, ...] = (0.9, 0.7, 0.5, 0.3, 0.1),
    repeats: int = 10,
) -> ExperimentTable:
    """Re-classify while varying the fraction of retained ground-truth labels."""
    if not fractions:
        raise ConfigError("fractions must be non-empty")
    for fraction in fractions:
        if not 0.0 < fraction <= 1.0:
            raise ConfigError(f"fractions must be in (0, 1], got {fraction}")
    if repeats < 1:
        raise ConfigError("repeats must be positive")
    bench = _experiment_bench(config)
    started = time.monotonic()
    rows = []
    for fraction in fractions:
        collected = []
        for rep in range(repeats):
            rng = np.random.default_rng([config.seed, int(fraction * 1000), rep])
            prior_entries = _retained(bench.truth, fraction, rng)
            collected.append(_classify_rep(bench, prior_entries, config))
        rows.append(_aggregate(f"{fraction:.2f}", collected, repeats))
    table = ExperimentTable("sweep_labels", rows, time.monotonic() - started)
    if config.paths.out_dir:
        table.save(config.paths.out_dir)
    return table


def _flip_labels(
    entries: list[LabelEntry],
    percent: float,
    n_classes: int,
    rng: np.random.Generator,
) -> list[LabelEntry]:
    flipped = []
    for entry in entries:
        if rng.random() < percent / 100.0:
            wrong = [c for c in range(n_classes) if c != entry.class_id]
            entry = dataclasses.replace(
                entry, class_id=wrong[int(rng.integers(len(wrong)))]
            )
        flipped.append(entry)
    return flipped


def experiment_noise(
    config: EngineConfig,
    noise_percents: tuple[float, ...] = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0),
    repeats: int = 10,
    retain_fraction: float = 0.7,
) -> ExperimentTable:
    """Flip a percentage of the retained labels to random wrong classes."""
    if not noise_percents:
        raise ConfigError("noise_percents must be non-empty")
    for percent in noise_percents:
        if not 0.0 <= percent <= 100.0:
            raise ConfigError(f"noise percent must be in [0, 100], got {percent}")
    if not 0.0 < retain_fraction <= 1.0:
        raise ConfigError("retain_fraction must be in (0, 1]")
    if repeats < 1:
        raise ConfigError("repeats must be positive")
    bench = _experiment_bench(config)
    n_classes = 2 if config.mode == "binary" else config.n_classes
    started = time.monotonic()
    rows = []
    for percent in noise_percents:
        collected = []
        for rep in range(repeats):
            rng = np.random.default_rng([config.seed, int(percent * 10), rep, 7])
            prior_entries = _retained(bench.truth, retain_fraction, rng)
            if config.mode == "binary":
                prior_entries = collapse_to_binary(prior_entries)
            prior_entries = _flip_labels(prior_entries, percent, n_classes, rng)
            collected.append(_classify_rep(bench, prior_entries, config))
        rows.append(_aggregate(f"{percent:g}%", collected, repeats))
    table = ExperimentTable("sweep_noise", rows, time.monotonic() - started)
    if config.paths.out_dir:
        table.save(config.paths.out_dir)
    return table


def experiment_per_metapath(
    config: EngineConfig,
    repeats: int = 10,
    retain_fraction: float = 0.7,
) -> ExperimentTable:
    """Classify with each metapath similarity alone, then the weighted blend."""
    if repeats < 1:
        raise ConfigError("repeats must be positive")
    if not 0.0 < retain_fraction <= 1.0:
        raise ConfigError("retain_fraction must be in (0, 1]")
    bench = _experiment_bench(config)
    started = time.monotonic()
    collected: dict[str, list[dict]] = {p.value: [] for p in ALL_METAPATHS}
    collected["combined"] = []
    for rep in range(repeats):
        rng = np.random.default_rng([config.seed, rep, 13])
        prior_entries = _retained(bench.truth, retain_fraction, rng)
        graph = _build_graph(bench.batch, bench.segment_map, config)
        pruned, _ = prune(graph, prior_entries, config.prune)
        domains = pruned.registry.domains
        similarities, _ = all_similarities(pruned)
        for path in ALL_METAPATHS:
            result = transduce(similarities[path], prior_entries, domains, config)
            metrics = score_transduction(result, bench.truth, prior_entries,
                                         domains, config)
            collected[path.value].append(_metric_values(metrics))
        combiner = MetapathCombiner(score_knn=config.score_knn).fit(pruned)
        result = transduce(combiner.combined_, prior_entries, domains, config)
        metrics = score_transduction(result, bench.truth, prior_entries,
                                     domains, config)
        collected["combined"].append(_metric_values(metrics))
    rows = [
        _aggregate(name, values, repeats) for name, values in collected.items()
    ]
    table = ExperimentTable("per_metapath", rows, time.monotonic() - started)
    if config.paths.out_dir:
        table.save(config.paths.out_dir)
    return table
