"""Windowed DNS activity analysis over a heterogeneous client/domain/IP graph."""

from .classify import (
    ClassifierConfig,
    LabelMatrix,
    LocalListStore,
    Metrics,
    ScoreResult,
    TransductiveClassifier,
    VerdictSet,
    closed_form,
    evaluate,
    evaluate_assignments,
    normalize,
    one_hot,
    propagate,
    read_verdicts,
    resolve_priors,
    update_local_lists,
    verdicts,
    write_verdicts,
)
from .combine import MetapathCombiner, MetapathWeights, laplacian_score
from .config import (
    EngineConfig,
    EnginePaths,
    config_from_dict,
    load_config,
    override_config,
)
from .errors import (
    ClosedFormSizeError,
    ConfigError,
    ConflictingEntryError,
    DimensionMismatchError,
    DnshinError,
    EmptyGraphError,
    EmptyTruthError,
    InfeasibleScenarioError,
    MalformedLineError,
    UnknownNodeError,
    UnsupportedRecordTypeError,
)
from .hin import GraphBuilder, HinGraph, NodeRegistry
from .ingest import (
    BENIGN_CLASS,
    DnsLogRecord,
    LabelEntry,
    LabelSource,
    PassiveDnsRecord,
    RecordType,
    WindowBatch,
    build_windows,
    load_labels,
    load_segment_map,
    read_log_file,
    read_pdns_file,
)
from .metapath import ALL_METAPATHS, ClampStats, Metapath, all_similarities, pathsim
from .pipeline import (
    RunSummary,
    WindowOutcome,
    experiment_label_sweep,
    experiment_noise,
    experiment_per_metapath,
    run,
    transduce,
)
from .prune import GraphPruner, PruneConfig, PruneReport
from .synth import (
    FamilySpec,
    NameStyle,
    ScenarioSpec,
    default_scenario,
    generate,
    scenario_from_dict,
)

__version__ = "0.1.0"

__all__ = [
    "ALL_METAPATHS",
    "BENIGN_CLASS",
    "ClampStats",
    "ClassifierConfig",
    "ClosedFormSizeError",
    "ConfigError",
    "ConflictingEntryError",
    "DimensionMismatchError",
    "DnsLogRecord",
    "DnshinError",
    "EmptyGraphError",
    "EmptyTruthError",
    "EngineConfig",
    "EnginePaths",
    "FamilySpec",
    "GraphBuilder",
    "GraphPruner",
    "HinGraph",
    "InfeasibleScenarioError",
    "LabelEntry",
    "LabelMatrix",
    "LabelSource",
    "LocalListStore",
    "MalformedLineError",
    "Metapath",
    "MetapathCombiner",
    "MetapathWeights",
    "Metrics",
    "NameStyle",
    "NodeRegistry",
    "PassiveDnsRecord",
    "PruneConfig",
    "PruneReport",
    "RecordType",
    "RunSummary",
    "ScenarioSpec",
    "ScoreResult",
    "TransductiveClassifier",
    "UnknownNodeError",
    "UnsupportedRecordTypeError",
    "VerdictSet",
    "WindowBatch",
    "WindowOutcome",
    "all_similarities",
    "build_windows",
    "closed_form",
    "config_from_dict",
    "default_scenario",
    "evaluate",
    "evaluate_assignments",
    "experiment_label_sweep",
    "experiment_noise",
    "experiment_per_metapath",
    "generate",
    "laplacian_score",
    "load_config",
    "load_labels",
    "load_segment_map",
    "normalize",
    "one_hot",
    "override_config",
    "pathsim",
    "propagate",
    "read_log_file",
    "read_pdns_file",
    "read_verdicts",
    "resolve_priors",
    "run",
    "scenario_from_dict",
    "transduce",
    "update_local_lists",
    "verdicts",
    "write_verdicts",
]
