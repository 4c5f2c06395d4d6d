"""Conservative node filtering applied to a built graph before inference.

Five rules run in a fixed order, each as a single pass over degrees measured
on the original (pre-filter) graph:

  1. unusual domains: malformed names, or names queried by exactly one client
  2. popular domains: queried by more than ceil(popular_pct% of clients)
  3. heavy clients: the top ceil(heavy_client_pct% of clients) by distinct
     domains queried, ties broken toward the lower registry index
  4. inactive clients: querying fewer than min_client_domains domains
  5. rare IPs: resolved from exactly one domain

Domains carrying a malicious prior from a manual or public list are immune,
and so are the clients that queried them and the IPs they resolve to.  One
pass removes less than iterating to a fixpoint would; the report therefore
also counts residual rule violations left in the output graph.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ConfigError, EmptyGraphError
from .hin import HinGraph, NodeRegistry
from .ingest import LabelEntry, LabelSource, second_level_domain

DEFAULT_NAME_RULE = r"^[a-z0-9_-]+(\.[a-z0-9_-]+)*$"

RULE_UNUSUAL_DOMAINS = "unusual_domains"
RULE_POPULAR_DOMAINS = "popular_domains"
RULE_HEAVY_CLIENTS = "heavy_clients"
RULE_INACTIVE_CLIENTS = "inactive_clients"
RULE_RARE_IPS = "rare_ips"

RULE_ORDER = (
    RULE_UNUSUAL_DOMAINS,
    RULE_POPULAR_DOMAINS,
    RULE_HEAVY_CLIENTS,
    RULE_INACTIVE_CLIENTS,
    RULE_RARE_IPS,
)


@dataclass(frozen=True)
class PruneConfig:
    """Thresholds for the five filtering rules.

    popular_pct and heavy_client_pct are percentages of the window's client
    count; min_client_domains is an absolute count.  name_rule is a regular
    expression a well-formed (already normalized) domain name must match in
    full; names longer than 253 characters fail regardless.
    """

    popular_pct: float = 25.0
    heavy_client_pct: float = 0.1
    min_client_domains: int = 3
    name_rule: str = DEFAULT_NAME_RULE

    def __post_init__(self):
        if not 0 < self.popular_pct <= 100:
            raise ConfigError(f"popular_pct must be in (0, 100], got {self.popular_pct}")
        if not 0 < self.heavy_client_pct <= 100:
            raise ConfigError(
                f"heavy_client_pct must be in (0, 100], got {self.heavy_client_pct}"
            )
        if self.min_client_domains < 0:
            raise ConfigError(
                f"min_client_domains must be >= 0, got {self.min_client_domains}"
            )
        try:
            re.compile(self.name_rule)
        except re.error as exc:
            raise ConfigError(f"name_rule does not compile: {exc}") from None


@dataclass
class PruneReport:
    """Accounting for one filtering pass.

    For every node kind, nodes_before == nodes_after + total removed, and
    kept_by_exception counts nodes a rule matched but immunity spared.
    residual counts rule violations measured on the output graph (heavy
    clients excluded: a relative top-percent rule is never satisfiable).
    """

    nodes_before: dict[str, int]
    nodes_after: dict[str, int]
    removed: dict[str, int]
    kept_by_exception: dict[str, int]
    residual: dict[str, int] = field(default_factory=dict)

    def check_accounting(self) -> None:
        removed_per_kind = {
            "domains": self.removed[RULE_UNUSUAL_DOMAINS] + self.removed[RULE_POPULAR_DOMAINS],
            "clients": self.removed[RULE_HEAVY_CLIENTS] + self.removed[RULE_INACTIVE_CLIENTS],
            "ips": self.removed[RULE_RARE_IPS],
        }
        for kind, count in removed_per_kind.items():
            if self.nodes_before[kind] != self.nodes_after[kind] + count:
                raise AssertionError(
                    f"{kind}: {self.nodes_before[kind]} != "
                    f"{self.nodes_after[kind]} + {count}"
                )

    def to_json(self) -> str:
        payload = {
            "nodes_before": self.nodes_before,
            "nodes_after": self.nodes_after,
            "removed": self.removed,
            "kept_by_exception": self.kept_by_exception,
            "residual": self.residual,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def malicious_prior_domains(
    registry: NodeRegistry, priors: Iterable[LabelEntry]
) -> set[int]:
    """Indices of domains a manual or public list marks as malicious."""
    exact: dict[str, list[LabelEntry]] = {}
    by_2ld: dict[str, list[LabelEntry]] = {}
    for entry in priors:
        if entry.class_id < 1 or entry.source is LabelSource.LOCAL:
            continue
        if entry.match_2ld:
            by_2ld.setdefault(second_level_domain(entry.name), []).append(entry)
        else:
            exact.setdefault(entry.name, []).append(entry)
    hits: set[int] = set()
    for idx, name in enumerate(registry.domains):
        if name in exact or second_level_domain(name) in by_2ld:
            hits.add(idx)
    return hits


def _degrees(graph: HinGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct-client count per domain, distinct-domain count per client,
    and distinct-domain count per IP, all on the unfiltered graph."""
    q = graph.query
    clients_per_domain = np.asarray((q != 0).sum(axis=1)).ravel()
    domains_per_client = np.asarray((q != 0).sum(axis=0)).ravel()
    domains_per_ip = np.asarray((graph.resolve != 0).sum(axis=0)).ravel()
    return clients_per_domain, domains_per_client, domains_per_ip


def _submatrix(matrix, rows: np.ndarray, cols: np.ndarray):
    return matrix[rows][:, cols]


def prune(
    graph: HinGraph,
    priors: Sequence[LabelEntry],
    config: PruneConfig | None = None,
) -> tuple[HinGraph, PruneReport]:
    """Filter the graph by the five rules and re-densify node indices."""
    config = config or PruneConfig()
    registry = graph.registry
    n_c, n_d, n_ip = registry.n_clients, registry.n_domains, registry.n_ips
    name_rule = re.compile(config.name_rule)
    clients_per_domain, domains_per_client, domains_per_ip = _degrees(graph)

    protected_domains = malicious_prior_domains(registry, priors)
    protected_clients: set[int] = set()
    protected_ips: set[int] = set()
    if protected_domains:
        rows = sorted(protected_domains)
        q_rows = graph.query[rows]
        protected_clients = set(np.unique(q_rows.nonzero()[1]).tolist())
        r_rows = graph.resolve[rows]
        protected_ips = set(np.unique(r_rows.nonzero()[1]).tolist())

    flagged: dict[str, set[int]] = {}

    bad_name = {
        i
        for i, name in enumerate(registry.domains)
        if len(name) > 253 or name_rule.fullmatch(name) is None
    }
    single_client = set(np.flatnonzero(clients_per_domain == 1).tolist())
    flagged[RULE_UNUSUAL_DOMAINS] = bad_name | single_client

    popular_cut = math.ceil(config.popular_pct / 100.0 * n_c)
    popular = set(np.flatnonzero(clients_per_domain > popular_cut).tolist())
    flagged[RULE_POPULAR_DOMAINS] = popular - flagged[RULE_UNUSUAL_DOMAINS]

    heavy_count = min(n_c, math.ceil(config.heavy_client_pct / 100.0 * n_c))
    by_activity = sorted(range(n_c), key=lambda j: (-domains_per_client[j], j))
    flagged[RULE_HEAVY_CLIENTS] = set(by_activity[:heavy_count])

    inactive = set(np.flatnonzero(domains_per_client < config.min_client_domains).tolist())
    flagged[RULE_INACTIVE_CLIENTS] = inactive - flagged[RULE_HEAVY_CLIENTS]

    flagged[RULE_RARE_IPS] = set(np.flatnonzero(domains_per_ip == 1).tolist())

    protection = {
        RULE_UNUSUAL_DOMAINS: protected_domains,
        RULE_POPULAR_DOMAINS: protected_domains,
        RULE_HEAVY_CLIENTS: protected_clients,
        RULE_INACTIVE_CLIENTS: protected_clients,
        RULE_RARE_IPS: protected_ips,
    }
    removed: dict[str, set[int]] = {}
    spared: dict[str, set[int]] = {}
    for rule in RULE_ORDER:
        removed[rule] = flagged[rule] - protection[rule]
        spared[rule] = flagged[rule] & protection[rule]

    drop_domains = removed[RULE_UNUSUAL_DOMAINS] | removed[RULE_POPULAR_DOMAINS]
    drop_clients = removed[RULE_HEAVY_CLIENTS] | removed[RULE_INACTIVE_CLIENTS]
    drop_ips = removed[RULE_RARE_IPS]

    keep_d = np.asarray([i for i in range(n_d) if i not in drop_domains], dtype=int)
    keep_c = np.asarray([j for j in range(n_c) if j not in drop_clients], dtype=int)
    keep_ip = np.asarray([k for k in range(n_ip) if k not in drop_ips], dtype=int)
    if keep_d.size == 0:
        raise EmptyGraphError(
            "filtering removed every domain; thresholds are misconfigured for this window"
        )

    new_registry = NodeRegistry(
        clients=tuple(registry.clients[j] for j in keep_c),
        domains=tuple(registry.domains[i] for i in keep_d),
        ips=tuple(registry.ips[k] for k in keep_ip),
    )
    pruned = HinGraph(
        registry=new_registry,
        query=_submatrix(graph.query, keep_d, keep_c),
        segment=_submatrix(graph.segment, keep_c, keep_c),
        resolve=_submatrix(graph.resolve, keep_d, keep_ip),
        name_sim=_submatrix(graph.name_sim, keep_d, keep_d),
        cname=_submatrix(graph.cname, keep_d, keep_d),
        ip_overlap=_submatrix(graph.ip_overlap, keep_ip, keep_ip),
    )
    pruned.validate()

    report = PruneReport(
        nodes_before={"clients": n_c, "domains": n_d, "ips": n_ip},
        nodes_after={
            "clients": new_registry.n_clients,
            "domains": new_registry.n_domains,
            "ips": new_registry.n_ips,
        },
        removed={rule: len(removed[rule]) for rule in RULE_ORDER},
        kept_by_exception={
            "domains": len(spared[RULE_UNUSUAL_DOMAINS] | spared[RULE_POPULAR_DOMAINS]),
            "clients": len(spared[RULE_HEAVY_CLIENTS] | spared[RULE_INACTIVE_CLIENTS]),
            "ips": len(spared[RULE_RARE_IPS]),
        },
        residual=_residual_violations(pruned, config, name_rule),
    )
    report.check_accounting()
    return pruned, report


def _residual_violations(
    graph: HinGraph, config: PruneConfig, name_rule: re.Pattern
) -> dict[str, int]:
    clients_per_domain, domains_per_client, domains_per_ip = _degrees(graph)
    n_c = graph.registry.n_clients
    bad_name = sum(
        1
        for name in graph.registry.domains
        if len(name) > 253 or name_rule.fullmatch(name) is None
    )
    popular_cut = math.ceil(config.popular_pct / 100.0 * n_c)
    return {
        RULE_UNUSUAL_DOMAINS: bad_name + int((clients_per_domain == 1).sum()),
        RULE_POPULAR_DOMAINS: int((clients_per_domain > popular_cut).sum()),
        RULE_INACTIVE_CLIENTS: int(
            (domains_per_client < config.min_client_domains).sum()
        ),
        RULE_RARE_IPS: int((domains_per_ip == 1).sum()),
    }


class GraphPruner(BaseEstimator, TransformerMixin):
    """Transformer applying the five filtering rules to a built graph.

    Parameters mirror PruneConfig; priors is the label list used for the
    malicious-domain immunity rule.
    """

    def __init__(self, priors: Sequence[LabelEntry] = (),
                 popular_pct: float = 25.0, heavy_client_pct: float = 0.1,
                 min_client_domains: int = 3, name_rule: str = DEFAULT_NAME_RULE):
        self.priors = priors
        self.popular_pct = popular_pct
        self.heavy_client_pct = heavy_client_pct
        self.min_client_domains = min_client_domains
        self.name_rule = name_rule

    def _config(self) -> PruneConfig:
        return PruneConfig(
            popular_pct=self.popular_pct,
            heavy_client_pct=self.heavy_client_pct,
            min_client_domains=self.min_client_domains,
            name_rule=self.name_rule,
        )

    def fit(self, X: HinGraph, y=None):
        self.graph_, self.report_ = prune(X, self.priors, self._config())
        return self

    def transform(self, X: HinGraph) -> HinGraph:
        graph, _ = prune(X, self.priors, self._config())
        return graph
