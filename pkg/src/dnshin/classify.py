"""Label spreading over the combined similarity matrix.

The similarity matrix is symmetrically normalized, then known labels are
propagated by the damped iteration

    F(t+1) = alpha * S F(t) + beta * Y,      F(0) = Y

with alpha = 1/(1+mu), beta = mu/(1+mu).  The fixed point has the closed
form F* = beta * (I - alpha S)^-1 Y, which doubles as a small-instance
solver and as the oracle the iterative path is tested against.  Scores
turn into verdicts by argmax (ties toward benign), verdicts with a large
enough top-two margin are "solid" and feed rolling local label lists.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.metrics import (
    auc as sk_auc,
    confusion_matrix,
    precision_recall_fscore_support,
    roc_curve,
)

from ._validation import as_csr, check_labels, check_square, check_symmetric
from .errors import ClosedFormSizeError, ConfigError, EmptyTruthError
from .ingest import BENIGN_CLASS, LabelEntry, LabelSource, second_level_domain

RETENTION_SECONDS = 7 * 86400

_SOURCE_RANK = {LabelSource.MANUAL: 0, LabelSource.PUBLIC: 1, LabelSource.LOCAL: 2}


@dataclass(frozen=True)
class ClassifierConfig:
    """Propagation knobs.

    prior_weight is the fitting-term weight: large values trust the given
    labels, small values trust the graph structure.  solid_margin is the
    top-two score margin above which a verdict is considered solid.
    """

    prior_weight: float = 0.3
    solid_margin: float = 0.2
    tol: float = 1e-6
    max_iter: int = 1000
    closed_form_cap: int = 2000

    def __post_init__(self):
        if self.prior_weight <= 0:
            raise ConfigError(f"prior_weight must be > 0, got {self.prior_weight}")
        if self.solid_margin < 0:
            raise ConfigError(f"solid_margin must be >= 0, got {self.solid_margin}")
        if self.tol <= 0:
            raise ConfigError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.closed_form_cap < 1:
            raise ConfigError(f"closed_form_cap must be >= 1, got {self.closed_form_cap}")

    @property
    def alpha(self) -> float:
        return 1.0 / (1.0 + self.prior_weight)

    @property
    def beta(self) -> float:
        return self.prior_weight / (1.0 + self.prior_weight)


@dataclass
class ScoreResult:
    scores: np.ndarray
    iterations_used: int
    converged: bool


@dataclass
class VerdictSet:
    """Per-domain classification outcome.

    class_ids holds the argmax class, confidence the top-two score margin,
    solid whether that margin clears the configured threshold, unreached
    whether the score row is entirely zero (isolated unlabeled node)."""

    class_ids: np.ndarray
    confidence: np.ndarray
    solid: np.ndarray
    unreached: np.ndarray

    def __len__(self) -> int:
        return len(self.class_ids)


def resolve_priors(
    domains: Sequence[str],
    entries: Iterable[LabelEntry],
    n_classes: int,
    conflict: str = "drop",
    seed: int | None = None,
) -> np.ndarray:
    """Per-domain class assignment from label lists; -1 means unlabeled.

    Matching precedence: source rank first (manual over public over local),
    exact name over registered-2LD inside one rank.  Entries tied at the
    winning precedence but naming different classes are a conflict; policy
    "drop" leaves the domain unlabeled, "randomize" picks one of the
    conflicting classes with a seeded generator.
    """
    if conflict not in ("drop", "randomize"):
        raise ConfigError(f"unknown conflict policy: {conflict!r}")
    exact: dict[str, list[LabelEntry]] = {}
    by_2ld: dict[str, list[LabelEntry]] = {}
    for entry in entries:
        if entry.class_id >= n_classes:
            raise ConfigError(
                f"label {entry.name!r} has class {entry.class_id}, "
                f"but only {n_classes} classes are configured"
            )
        if entry.match_2ld:
            by_2ld.setdefault(second_level_domain(entry.name), []).append(entry)
        else:
            exact.setdefault(entry.name, []).append(entry)
    rng = random.Random(seed)
    assigned = np.full(len(domains), -1, dtype=np.int64)
    for i, domain in enumerate(domains):
        candidates = [
            (_SOURCE_RANK[e.source], 0, e) for e in exact.get(domain, ())
        ] + [
            (_SOURCE_RANK[e.source], 1, e)
            for e in by_2ld.get(second_level_domain(domain), ())
        ]
        if not candidates:
            continue
        best = min(c[:2] for c in candidates)
        classes = sorted({e.class_id for rank, spec, e in candidates if (rank, spec) == best})
        if len(classes) == 1:
            assigned[i] = classes[0]
        elif conflict == "randomize":
            assigned[i] = rng.choice(classes)
    return assigned


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """One-hot rows for labeled domains, zero rows otherwise."""
    check_labels(labels, n_classes)
    y = np.zeros((len(labels), n_classes), dtype=np.float64)
    known = labels >= 0
    y[np.flatnonzero(known), labels[known]] = 1.0
    return y


@dataclass(frozen=True)
class LabelMatrix:
    """Prior-label matrix plus the mask of rows that carry a prior."""

    matrix: np.ndarray
    labeled_mask: np.ndarray

    @classmethod
    def from_labels(cls, labels: np.ndarray, n_classes: int) -> "LabelMatrix":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(matrix=one_hot(labels, n_classes), labeled_mask=labels >= 0)


def normalize(similarity) -> sparse.csr_array:
    """Symmetric degree normalization; zero-degree rows and columns stay zero."""
    similarity = as_csr(similarity, dtype=np.float64)
    check_square(similarity, "similarity")
    check_symmetric(similarity, "similarity", tol=1e-9)
    if similarity.nnz and similarity.data.min() < 0:
        raise ValueError("similarity entries must be non-negative")
    degrees = np.asarray(similarity.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(degrees > 0, 1.0 / np.sqrt(np.where(degrees > 0, degrees, 1.0)), 0.0)
    coo = sparse.coo_array(similarity)
    data = coo.data * inv_sqrt[coo.row] * inv_sqrt[coo.col]
    return sparse.csr_array((data, (coo.row, coo.col)), shape=similarity.shape)


def propagate(
    s: sparse.csr_array, y: np.ndarray, config: ClassifierConfig
) -> ScoreResult:
    """Damped iterative spreading until the max-abs step change drops
    below tolerance; non-convergence is reported, not raised."""
    s = as_csr(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if s.shape[0] != y.shape[0]:
        raise ValueError(f"similarity is {s.shape}, labels have {y.shape[0]} rows")
    alpha, beta = config.alpha, config.beta
    f = y.copy()
    for iteration in range(1, config.max_iter + 1):
        updated = alpha * (s @ f) + beta * y
        delta = np.abs(updated - f).max() if f.size else 0.0
        f = updated
        if delta < config.tol:
            return ScoreResult(scores=f, iterations_used=iteration, converged=True)
    return ScoreResult(scores=f, iterations_used=config.max_iter, converged=False)


def closed_form(
    s: sparse.csr_array, y: np.ndarray, config: ClassifierConfig
) -> ScoreResult:
    """Exact fixed point by dense solve; guarded by a size cap."""
    s = as_csr(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = s.shape[0]
    if n > config.closed_form_cap:
        raise ClosedFormSizeError(
            f"{n} domains exceed the dense-solve cap of {config.closed_form_cap}"
        )
    system = np.eye(n) - config.alpha * s.toarray()
    scores = config.beta * np.linalg.solve(system, y)
    return ScoreResult(scores=scores, iterations_used=0, converged=True)


def verdicts(f: np.ndarray, config: ClassifierConfig) -> VerdictSet:
    """Argmax with ties toward the benign column, margin-based solidity."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] < 2:
        raise ValueError(f"scores must be (n_domains, n_classes >= 2), got {f.shape}")
    class_ids = np.argmax(f, axis=1).astype(np.int64)
    ordered = np.sort(f, axis=1)
    confidence = ordered[:, -1] - ordered[:, -2]
    solid = confidence >= config.solid_margin
    unreached = ~f.any(axis=1)
    return VerdictSet(
        class_ids=class_ids,
        confidence=confidence,
        solid=solid,
        unreached=unreached,
    )


def write_verdicts(path: str | Path, domains: Sequence[str], vs: VerdictSet) -> None:
    lines = ["domain,class_id,confidence,solid"]
    for name, cid, conf, solid in zip(domains, vs.class_ids, vs.confidence, vs.solid):
        lines.append(f"{name},{cid},{conf:.6f},{'true' if solid else 'false'}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_verdicts(path: str | Path) -> tuple[list[str], VerdictSet]:
    """Read a verdict CSV back into memory."""
    from .errors import MalformedLineError

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "domain,class_id,confidence,solid":
        raise MalformedLineError(f"{path}: missing verdict header")
    domains: list[str] = []
    ids: list[int] = []
    confs: list[float] = []
    solids: list[bool] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise MalformedLineError(f"{path}:{lineno}: expected 4 fields")
        try:
            domains.append(parts[0])
            ids.append(int(parts[1]))
            confs.append(float(parts[2]))
            solids.append({"true": True, "false": False}[parts[3]])
        except (ValueError, KeyError):
            raise MalformedLineError(f"{path}:{lineno}: bad verdict row") from None
    return domains, VerdictSet(
        class_ids=np.asarray(ids, dtype=np.int64),
        confidence=np.asarray(confs, dtype=np.float64),
        solid=np.asarray(solids, dtype=bool),
        unreached=np.zeros(len(ids), dtype=bool),
    )


@dataclass(frozen=True)
class LocalListStore:
    """Rolling window of self-generated labels, newest verdict per domain."""

    entries: tuple[LabelEntry, ...] = ()
    retention_seconds: int = RETENTION_SECONDS

    def labels(self) -> list[LabelEntry]:
        return list(self.entries)

    def save(self, path: str | Path) -> None:
        from .ingest import format_label_line

        lines = [format_label_line(e, with_issued_at=True) for e in self.entries]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, retention_seconds: int = RETENTION_SECONDS) -> "LocalListStore":
        from .ingest import load_labels

        entries = [
            LabelEntry(
                name=e.name,
                class_id=e.class_id,
                source=LabelSource.LOCAL,
                issued_at=e.issued_at,
                match_2ld=e.match_2ld,
            )
            for e in load_labels(path)
        ]
        return cls(entries=tuple(entries), retention_seconds=retention_seconds)


def update_local_lists(
    store: LocalListStore,
    domains: Sequence[str],
    vs: VerdictSet,
    window_end: int,
) -> LocalListStore:
    """Fold solid verdicts into the store and drop expired entries.

    A newer verdict for a name replaces the older one; entries whose age
    relative to window_end exceeds the retention window are purged."""
    kept = {
        e.name: e
        for e in store.entries
        if window_end - e.issued_at <= store.retention_seconds
    }
    for name, cid, solid in zip(domains, vs.class_ids, vs.solid):
        if not solid:
            continue
        kept[name] = LabelEntry(
            name=name,
            class_id=int(cid),
            source=LabelSource.LOCAL,
            issued_at=window_end,
            # Two-label names carry registration-level match semantics in the
            # list format; mirroring that here keeps save/load a fixed point.
            match_2ld=name.count(".") == 1,
        )
    ordered = tuple(sorted(kept.values(), key=lambda e: e.name))
    return LocalListStore(entries=ordered, retention_seconds=store.retention_seconds)


@dataclass
class Metrics:
    """Binary detection metrics (malicious positive) plus the multi-class
    view: confusion matrix and support-weighted averages."""

    n_eval: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    roc: list[tuple[float, float, float]]
    confusion: list[list[int]]
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    unlabeled_rate: float

    def to_json(self) -> str:
        payload = {
            "n_eval": self.n_eval,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "F1": self.f1,
            "AUC": self.auc,
            "confusion": self.confusion,
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_F1": self.weighted_f1,
            "unlabeled_rate": self.unlabeled_rate,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def save_roc(self, path: str | Path) -> None:
        lines = ["fpr,tpr,threshold"]
        lines += [f"{fpr:.6f},{tpr:.6f},{thr:.6g}" for fpr, tpr, thr in self.roc]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def malicious_score(f: np.ndarray) -> np.ndarray:
    """Ranking score for the ROC sweep: best malicious mass minus benign."""
    f = np.asarray(f, dtype=np.float64)
    return f[:, 1:].max(axis=1) - f[:, BENIGN_CLASS]


def evaluate_assignments(
    class_ids: np.ndarray,
    truth: np.ndarray,
    n_classes: int,
    ranking: np.ndarray | None = None,
    unreached: np.ndarray | None = None,
) -> Metrics:
    """Score class assignments against ground truth (-1 marks rows to skip).

    ranking, when given, drives the ROC sweep; unreached marks rows the
    similarity structure never touched."""
    class_ids = np.asarray(class_ids)
    truth = np.asarray(truth)
    mask = truth >= 0
    if not mask.any():
        raise EmptyTruthError("no ground-truth rows to evaluate")
    y_true = truth[mask]
    y_pred = class_ids[mask]
    true_mal = y_true != BENIGN_CLASS
    pred_mal = y_pred != BENIGN_CLASS
    tp = int(np.sum(true_mal & pred_mal))
    fp = int(np.sum(~true_mal & pred_mal))
    tn = int(np.sum(~true_mal & ~pred_mal))
    fn = int(np.sum(true_mal & ~pred_mal))
    accuracy = (tp + tn) / len(y_true)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    roc: list[tuple[float, float, float]] = []
    auc_value: float | None = None
    if ranking is not None and true_mal.any() and (~true_mal).any():
        fpr, tpr, thresholds = roc_curve(true_mal, np.asarray(ranking)[mask])
        roc = list(zip(fpr.tolist(), tpr.tolist(), thresholds.tolist()))
        auc_value = float(sk_auc(fpr, tpr))
    confusion = confusion_matrix(y_true, y_pred, labels=np.arange(n_classes))
    w_precision, w_recall, w_f1, _ = precision_recall_fscore_support(
        y_true, y_pred, labels=np.arange(n_classes), average="weighted", zero_division=0
    )
    rate = float(np.asarray(unreached)[mask].mean()) if unreached is not None else 0.0
    return Metrics(
        n_eval=int(mask.sum()),
        accuracy=float(accuracy),
        precision=float(precision),
        recall=float(recall),
        f1=float(f1),
        auc=auc_value,
        roc=roc,
        confusion=confusion.astype(int).tolist(),
        weighted_precision=float(w_precision),
        weighted_recall=float(w_recall),
        weighted_f1=float(w_f1),
        unlabeled_rate=rate,
    )


def evaluate(f: np.ndarray, truth: np.ndarray, config: ClassifierConfig) -> Metrics:
    """Score propagated scores against ground truth (-1 marks rows to skip)."""
    f = np.asarray(f, dtype=np.float64)
    vs = verdicts(f, config)
    return evaluate_assignments(
        vs.class_ids,
        truth,
        n_classes=f.shape[1],
        ranking=malicious_score(f),
        unreached=vs.unreached,
    )


class TransductiveClassifier(BaseEstimator, ClassifierMixin):
    """Semi-supervised classifier over a fixed similarity matrix.

    fit takes the combined similarity matrix and a per-domain label vector
    (-1 for unlabeled) and spreads the known labels over the graph.  The
    prediction targets are the fitted nodes themselves, so predict ignores
    its argument and returns the transduction.

    Parameters
    ----------
    prior_weight : float, default=0.3
        Fitting-term weight; alpha = 1/(1+prior_weight) damps spreading.
    solid_margin : float, default=0.2
        Top-two margin for a verdict to count as solid.
    tol, max_iter : iteration controls.
    solver : {"auto", "iterative", "closed_form"}, default="auto"
        auto uses the dense solve below closed_form_cap domains.
    closed_form_cap : int, default=2000

    Attributes
    ----------
    scores_ : (n_domains, n_classes) propagated score matrix
    transduction_ : argmax class per domain
    confidence_, solid_, unreached_ : verdict details
    n_iter_, converged_ : iteration outcome
    classes_ : the class ids
    """

    def __init__(self, prior_weight: float = 0.3, solid_margin: float = 0.2,
                 tol: float = 1e-6, max_iter: int = 1000,
                 solver: str = "auto", closed_form_cap: int = 2000,
                 n_classes: int | None = None):
        self.prior_weight = prior_weight
        self.solid_margin = solid_margin
        self.tol = tol
        self.max_iter = max_iter
        self.solver = solver
        self.closed_form_cap = closed_form_cap
        self.n_classes = n_classes

    def _config(self) -> ClassifierConfig:
        return ClassifierConfig(
            prior_weight=self.prior_weight,
            solid_margin=self.solid_margin,
            tol=self.tol,
            max_iter=self.max_iter,
            closed_form_cap=self.closed_form_cap,
        )

    def fit(self, X, y):
        config = self._config()
        if self.solver not in ("auto", "iterative", "closed_form"):
            raise ConfigError(f"unknown solver: {self.solver!r}")
        similarity = as_csr(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n_classes = self.n_classes
        if n_classes is None:
            n_classes = max(2, int(y.max()) + 1 if y.size else 2)
        check_labels(y, n_classes)
        s = normalize(similarity)
        label_matrix = one_hot(y, n_classes)
        if self.solver == "closed_form" or (
            self.solver == "auto" and s.shape[0] <= config.closed_form_cap
        ):
            result = closed_form(s, label_matrix, config)
        else:
            result = propagate(s, label_matrix, config)
        vs = verdicts(result.scores, config)
        self.classes_ = np.arange(n_classes)
        self.scores_ = result.scores
        self.n_iter_ = result.iterations_used
        self.converged_ = result.converged
        self.transduction_ = vs.class_ids
        self.confidence_ = vs.confidence
        self.solid_ = vs.solid
        self.unreached_ = vs.unreached
        self.verdicts_ = vs
        return self

    def predict(self, X=None) -> np.ndarray:
        return self.transduction_
