"""Domain-to-domain path counting and PathSim similarity.

Each metapath is a walk template through the graph schema that starts and
ends at domain nodes.  Its commuting matrix counts path instances between
every domain pair; PathSim rescales those counts into [0, 1]:

    sim(i, j) = 2 * M(i, j) / (M(i, i) + M(j, j))

with a value of 0 whenever the denominator vanishes.  Six metapaths are
supported, one per relation family.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from ._validation import as_csr, check_square, check_symmetric
from .errors import DimensionMismatchError
from .hin import HinGraph


class Metapath(enum.Enum):
    """The six domain-to-domain walk templates.

    NAME_SIM        d -name-> d                    (shared character cluster)
    CNAME           d -cname-> d                   (alias records)
    SHARED_CLIENT   d <-query- c -query-> d        (queried by same client)
    SHARED_IP       d -resolve-> ip <-resolve- d   (hosted on same IP)
    CLIENT_SEGMENT  d <-query- c -seg- c -query-> d
    IP_NEIGHBOR     d -resolve-> ip -overlap- ip <-resolve- d
    """

    NAME_SIM = "name_sim"
    CNAME = "cname"
    SHARED_CLIENT = "shared_client"
    SHARED_IP = "shared_ip"
    CLIENT_SEGMENT = "client_segment"
    IP_NEIGHBOR = "ip_neighbor"


ALL_METAPATHS = tuple(Metapath)


@dataclass
class ClampStats:
    """How often raw PathSim exceeded 1 and had to be clamped."""

    clamped: int = 0
    max_raw: float = 0.0


def commuting(graph: HinGraph, path: Metapath) -> sparse.csr_array:
    """Count path instances of the metapath between every domain pair.

    Products are sparse end to end; a dense domains-by-domains array is
    never formed.
    """
    n_d = graph.registry.n_domains
    if path is Metapath.NAME_SIM:
        result = as_csr(graph.name_sim, dtype=np.int64)
    elif path is Metapath.CNAME:
        result = as_csr(graph.cname, dtype=np.int64)
    elif path is Metapath.SHARED_CLIENT:
        q = graph.query
        result = sparse.csr_array(q @ q.T)
    elif path is Metapath.SHARED_IP:
        r = graph.resolve
        result = sparse.csr_array(r @ r.T)
    elif path is Metapath.CLIENT_SEGMENT:
        q = graph.query
        if graph.segment.shape[0] != q.shape[1]:
            raise DimensionMismatchError(
                f"segment matrix is {graph.segment.shape}, query expects "
                f"{q.shape[1]} clients"
            )
        result = sparse.csr_array(q @ graph.segment @ q.T)
    elif path is Metapath.IP_NEIGHBOR:
        r = graph.resolve
        if graph.ip_overlap.shape[0] != r.shape[1]:
            raise DimensionMismatchError(
                f"IP overlap matrix is {graph.ip_overlap.shape}, resolve "
                f"expects {r.shape[1]} IPs"
            )
        result = sparse.csr_array(r @ graph.ip_overlap @ r.T)
    else:  # pragma: no cover - enum is closed
        raise ValueError(path)
    if result.shape != (n_d, n_d):
        raise DimensionMismatchError(
            f"{path.value} commuting matrix is {result.shape}, expected {(n_d, n_d)}"
        )
    return result


def pathsim(counts) -> tuple[sparse.csr_array, ClampStats]:
    """Turn a symmetric path-count matrix into a [0, 1] similarity matrix.

    The similarity support is exactly the nonzero pattern of the counts plus
    the diagonal where self-counts are positive.  Cross counts larger than
    both self counts (possible for the longer walk templates, whose middle
    relation has a zero diagonal) are clamped, and the clamps counted.
    """
    counts = as_csr(counts)
    check_square(counts, "path counts")
    check_symmetric(counts, "path counts")
    if counts.nnz and counts.data.min() < 0:
        raise ValueError("path counts must be non-negative")
    n = counts.shape[0]
    diag = counts.diagonal().astype(np.float64)
    coo = sparse.coo_array(counts)
    denom = diag[coo.row] + diag[coo.col]
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(denom > 0, 2.0 * coo.data / np.where(denom > 0, denom, 1.0), 0.0)
    stats = ClampStats()
    over = values > 1.0
    if over.any():
        stats.clamped = int(over.sum())
        stats.max_raw = float(values.max())
        values = np.minimum(values, 1.0)
    sim = sparse.csr_array(
        (values, (coo.row, coo.col)), shape=(n, n)
    )
    # self-similarity is exactly 1 wherever a domain has any path mass
    sim.setdiag(np.where(diag > 0, 1.0, 0.0))
    sim.eliminate_zeros()
    return sim, stats


def similarity(graph: HinGraph, path: Metapath) -> tuple[sparse.csr_array, ClampStats]:
    """PathSim matrix of one metapath over the graph."""
    return pathsim(commuting(graph, path))


def all_similarities(
    graph: HinGraph,
) -> tuple[dict[Metapath, sparse.csr_array], dict[Metapath, ClampStats]]:
    sims: dict[Metapath, sparse.csr_array] = {}
    stats: dict[Metapath, ClampStats] = {}
    for path in ALL_METAPATHS:
        sims[path], stats[path] = similarity(graph, path)
    return sims, stats
