"""Heterogeneous graph construction over one detection window.

A window batch becomes three node registries (clients, domains, IP addresses)
plus six 0/1 relation matrices:

  - query      (domains x clients): domain was queried by client
  - segment    (clients x clients): clients share a network segment
  - resolve    (domains x IPs):     domain resolved to IP
  - name_sim   (domains x domains): domains cluster together on character n-grams
  - cname      (domains x domains): domains appear in one CNAME record
  - ip_overlap (IPs x IPs):         IPs were resolved from a common domain

The four homogeneous matrices are symmetric with zero diagonal; all six store
only nonzeros with explicit dimensions so empty relations stay representable.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.cluster import KMeans
from sklearn.feature_extraction.text import CountVectorizer
from sklearn.preprocessing import normalize

from ._validation import as_csr, check_symmetric
from .errors import UnknownNodeError
from .ingest import RecordType, WindowBatch

_MATRIX_NAMES = ("query", "segment", "resolve", "name_sim", "cname", "ip_overlap")


@dataclass(frozen=True)
class NodeRegistry:
    """Dense, lexicographically ordered name <-> index maps per node kind."""

    clients: tuple[str, ...]
    domains: tuple[str, ...]
    ips: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_client_idx", {n: i for i, n in enumerate(self.clients)})
        object.__setattr__(self, "_domain_idx", {n: i for i, n in enumerate(self.domains)})
        object.__setattr__(self, "_ip_idx", {n: i for i, n in enumerate(self.ips)})

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def n_domains(self) -> int:
        return len(self.domains)

    @property
    def n_ips(self) -> int:
        return len(self.ips)

    def _lookup(self, table: dict, name: str, kind: str) -> int:
        try:
            return table[name]
        except KeyError:
            raise UnknownNodeError(f"unregistered {kind}: {name!r}") from None

    def client_index(self, name: str) -> int:
        return self._lookup(self._client_idx, name, "client")

    def domain_index(self, name: str) -> int:
        return self._lookup(self._domain_idx, name, "domain")

    def ip_index(self, name: str) -> int:
        return self._lookup(self._ip_idx, name, "IP")

    def has_domain(self, name: str) -> bool:
        return name in self._domain_idx


@dataclass
class DomainFeatures:
    """Per-domain character n-gram count matrix over a shared vocabulary."""

    matrix: sparse.csr_array
    vocabulary: tuple[str, ...]


@dataclass
class HinGraph:
    registry: NodeRegistry
    query: sparse.csr_array
    segment: sparse.csr_array
    resolve: sparse.csr_array
    name_sim: sparse.csr_array
    cname: sparse.csr_array
    ip_overlap: sparse.csr_array

    def validate(self) -> None:
        n_c, n_d, n_ip = self.registry.n_clients, self.registry.n_domains, self.registry.n_ips
        expected = {
            "query": (n_d, n_c),
            "segment": (n_c, n_c),
            "resolve": (n_d, n_ip),
            "name_sim": (n_d, n_d),
            "cname": (n_d, n_d),
            "ip_overlap": (n_ip, n_ip),
        }
        for name, shape in expected.items():
            matrix = getattr(self, name)
            if matrix.shape != shape:
                raise ValueError(f"{name} has shape {matrix.shape}, expected {shape}")
        for name in ("segment", "name_sim", "cname", "ip_overlap"):
            matrix = getattr(self, name)
            check_symmetric(matrix, name)
            if matrix.shape[0] and matrix.diagonal().any():
                raise ValueError(f"{name} has a nonzero diagonal")

    def save(self, directory: str | Path) -> None:
        """Snapshot the graph: a JSON registry manifest plus one coordinate
        text file (``row col value`` lines) per relation matrix."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "clients": list(self.registry.clients),
            "domains": list(self.registry.domains),
            "ips": list(self.registry.ips),
        }
        (directory / "registry.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
        )
        for name in _MATRIX_NAMES:
            write_coordinate_file(directory / f"{name}.coo", getattr(self, name))

    @classmethod
    def load(cls, directory: str | Path) -> "HinGraph":
        directory = Path(directory)
        manifest = json.loads((directory / "registry.json").read_text(encoding="utf-8"))
        registry = NodeRegistry(
            clients=tuple(manifest["clients"]),
            domains=tuple(manifest["domains"]),
            ips=tuple(manifest["ips"]),
        )
        shapes = {
            "query": (registry.n_domains, registry.n_clients),
            "segment": (registry.n_clients, registry.n_clients),
            "resolve": (registry.n_domains, registry.n_ips),
            "name_sim": (registry.n_domains, registry.n_domains),
            "cname": (registry.n_domains, registry.n_domains),
            "ip_overlap": (registry.n_ips, registry.n_ips),
        }
        matrices = {
            name: read_coordinate_file(directory / f"{name}.coo", shapes[name])
            for name in _MATRIX_NAMES
        }
        return cls(registry=registry, **matrices)


def write_coordinate_file(path: str | Path, matrix) -> None:
    coo = sparse.coo_array(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{matrix.shape[0]} {matrix.shape[1]}"]
    for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        value = int(v) if float(v).is_integer() else float(v)
        lines.append(f"{r} {c} {value!r}" if isinstance(value, float) else f"{r} {c} {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_coordinate_file(path: str | Path, shape: tuple[int, int]) -> sparse.csr_array:
    rows, cols, values = [], [], []
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().split()
        stored = (int(header[0]), int(header[1]))
        if stored != tuple(shape):
            raise ValueError(f"{path}: stored shape {stored} does not match {shape}")
        for line in handle:
            if not line.strip():
                continue
            r, c, v = line.split()
            rows.append(int(r))
            cols.append(int(c))
            values.append(float(v))
    values = np.asarray(values)
    dtype = np.int64 if values.size == 0 or np.all(values == values.astype(np.int64)) else np.float64
    return sparse.csr_array(
        (values.astype(dtype), (rows, cols)), shape=shape
    )


def _pairs_to_csr(pairs: set[tuple[int, int]], shape: tuple[int, int]) -> sparse.csr_array:
    if not pairs:
        return sparse.csr_array(shape, dtype=np.int64)
    rows, cols = zip(*sorted(pairs))
    data = np.ones(len(rows), dtype=np.int64)
    return sparse.csr_array((data, (rows, cols)), shape=shape)


def _symmetrize(pairs: set[tuple[int, int]], n: int) -> sparse.csr_array:
    full = {(i, j) for i, j in pairs if i != j}
    full |= {(j, i) for i, j in full}
    return _pairs_to_csr(full, (n, n))


def build_registry(batch: WindowBatch) -> NodeRegistry:
    """Index every distinct client, domain (CNAME targets included) and
    answer IP seen in the window, in lexicographic order."""
    clients: set[str] = set()
    domains: set[str] = set()
    ips: set[str] = set()
    for record in batch.logs:
        clients.add(record.client_id)
        domains.add(record.qname)
        for rdata, rtype in record.answers:
            if rtype is RecordType.CNAME:
                domains.add(rdata)
            else:
                ips.add(rdata)
    for record in batch.pdns:
        domains.add(record.qname)
        if record.rtype is RecordType.CNAME:
            domains.add(record.rdata)
        else:
            ips.add(record.rdata)
    return NodeRegistry(
        clients=tuple(sorted(clients)),
        domains=tuple(sorted(domains)),
        ips=tuple(sorted(ips)),
    )


def build_query_matrix(batch: WindowBatch, registry: NodeRegistry) -> sparse.csr_array:
    """0/1 domains x clients indicator of distinct (domain, client) query pairs."""
    pairs = {
        (registry.domain_index(r.qname), registry.client_index(r.client_id))
        for r in batch.logs
    }
    return _pairs_to_csr(pairs, (registry.n_domains, registry.n_clients))


def build_segment_matrix(registry: NodeRegistry, segment_map: dict[str, str]) -> sparse.csr_array:
    """Complete graph per network segment; unmapped clients stay singletons."""
    groups: dict[str, list[int]] = {}
    for idx, client in enumerate(registry.clients):
        label = segment_map.get(client)
        if label is None:
            continue
        groups.setdefault(label, []).append(idx)
    rows, cols = [], []
    for members in groups.values():
        if len(members) < 2:
            continue
        members = np.asarray(members)
        rows.append(np.repeat(members, len(members)))
        cols.append(np.tile(members, len(members)))
    n = registry.n_clients
    if not rows:
        return sparse.csr_array((n, n), dtype=np.int64)
    row = np.concatenate(rows)
    col = np.concatenate(cols)
    keep = row != col
    data = np.ones(keep.sum(), dtype=np.int64)
    return sparse.csr_array((data, (row[keep], col[keep])), shape=(n, n))


def build_resolve_matrix(batch: WindowBatch, registry: NodeRegistry) -> sparse.csr_array:
    """0/1 domains x IPs from A/AAAA answers in logs plus window-overlapping pDNS."""
    pairs: set[tuple[int, int]] = set()
    for record in batch.logs:
        for rdata, rtype in record.answers:
            if rtype is not RecordType.CNAME:
                pairs.add((registry.domain_index(record.qname), registry.ip_index(rdata)))
    for record in batch.pdns:
        if record.rtype is not RecordType.CNAME:
            pairs.add((registry.domain_index(record.qname), registry.ip_index(record.rdata)))
    return _pairs_to_csr(pairs, (registry.n_domains, registry.n_ips))


def build_cname_matrix(batch: WindowBatch, registry: NodeRegistry) -> sparse.csr_array:
    """Symmetric 0/1 matrix over record-level CNAME pairs; self-aliases ignored."""
    pairs: set[tuple[int, int]] = set()
    for record in batch.logs:
        for rdata, rtype in record.answers:
            if rtype is RecordType.CNAME:
                pairs.add((registry.domain_index(record.qname), registry.domain_index(rdata)))
    for record in batch.pdns:
        if record.rtype is RecordType.CNAME:
            pairs.add((registry.domain_index(record.qname), registry.domain_index(record.rdata)))
    return _symmetrize(pairs, registry.n_domains)


def build_ip_overlap_matrix(resolve) -> sparse.csr_array:
    """IPs i, j are linked iff some domain resolved to both (zero diagonal).

    Equivalently the zero-diagonal indicator of (R^T R) > 0.
    """
    resolve = as_csr(resolve, dtype=np.int64)
    gram = sparse.csr_array(resolve.T @ resolve)
    gram.setdiag(0)
    gram.eliminate_zeros()
    gram.data[:] = 1
    return gram


def featurize_domains(registry: NodeRegistry) -> DomainFeatures:
    """Count concatenated character 1-grams and 2-grams per domain name;
    the vocabulary spans all names in the registry."""
    vectorizer = CountVectorizer(analyzer="char", ngram_range=(1, 2), lowercase=False)
    matrix = vectorizer.fit_transform(registry.domains)
    return DomainFeatures(
        matrix=sparse.csr_array(matrix),
        vocabulary=tuple(vectorizer.get_feature_names_out()),
    )


def build_name_similarity(
    features: DomainFeatures,
    n_clusters: int,
    seed: int,
    kmeans_max_iter: int = 100,
    kmeans_tol: float = 1e-6,
) -> sparse.csr_array:
    """Cluster L2-normalized n-gram vectors with seeded k-means++ and link
    every pair of domains sharing a cluster (symmetric, zero diagonal)."""
    n_domains = features.matrix.shape[0]
    if n_clusters < 1:
        raise ValueError("cluster count must be at least 1")
    if n_clusters > n_domains:
        warnings.warn(
            f"clustering {n_domains} domains into {n_clusters} groups is degenerate; "
            f"using {n_domains} clusters",
            stacklevel=2,
        )
        n_clusters = n_domains
    points = normalize(features.matrix)
    kmeans = KMeans(
        n_clusters=n_clusters,
        init="k-means++",
        n_init=1,
        max_iter=kmeans_max_iter,
        tol=kmeans_tol,
        random_state=seed,
    )
    labels = kmeans.fit_predict(points)
    rows, cols = [], []
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        if len(members) < 2:
            continue
        rows.append(np.repeat(members, len(members)))
        cols.append(np.tile(members, len(members)))
    if not rows:
        return sparse.csr_array((n_domains, n_domains), dtype=np.int64)
    row = np.concatenate(rows)
    col = np.concatenate(cols)
    keep = row != col
    data = np.ones(keep.sum(), dtype=np.int64)
    return sparse.csr_array((data, (row[keep], col[keep])), shape=(n_domains, n_domains))


class GraphBuilder(BaseEstimator, TransformerMixin):
    """Transformer from a window batch to the full heterogeneous graph.

    Parameters
    ----------
    segment_map : dict, default=None
        client_id -> network segment label; clients missing from the map are
        treated as singleton segments.
    name_clusters : int, default=20
        Number of k-means clusters for the character-similarity relation.
    seed : int, default=0
        Seed for the k-means++ initialization.
    """

    def __init__(self, segment_map: dict[str, str] | None = None,
                 name_clusters: int = 20, seed: int = 0):
        self.segment_map = segment_map
        self.name_clusters = name_clusters
        self.seed = seed

    def fit(self, X: WindowBatch, y=None):
        self.graph_ = self.transform(X)
        return self

    def transform(self, X: WindowBatch) -> HinGraph:
        registry = build_registry(X)
        features = featurize_domains(registry)
        resolve = build_resolve_matrix(X, registry)
        graph = HinGraph(
            registry=registry,
            query=build_query_matrix(X, registry),
            segment=build_segment_matrix(registry, self.segment_map or {}),
            resolve=resolve,
            name_sim=build_name_similarity(features, self.name_clusters, self.seed),
            cname=build_cname_matrix(X, registry),
            ip_overlap=build_ip_overlap_matrix(resolve),
        )
        graph.validate()
        return graph
