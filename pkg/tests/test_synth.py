"""Scene generator: determinism, format fidelity, planted structure."""

import re
from collections import defaultdict

import numpy as np
import pytest

from dnshin.errors import ConfigError, InfeasibleScenarioError
from dnshin.hin import GraphBuilder
from dnshin.ingest import (
    RecordType,
    build_windows,
    load_labels,
    load_segment_map,
    read_log_file,
    read_pdns_file,
)
from dnshin.metapath import Metapath, commuting
from dnshin.prune import DEFAULT_NAME_RULE
from dnshin.synth import (
    FamilySpec,
    NameStyle,
    ScenarioSpec,
    build_scene,
    default_scenario,
    generate,
)


def _small_spec(**overrides):
    base = dict(
        clients=20,
        benign_domains=40,
        ips=15,
        segments=2,
        families=(
            FamilySpec("fam", 6, NameStyle.DGA_HEX,
                       victim_segment_overlap=1.0, ip_pool_size=6,
                       ip_reuse_rate=0.5),
        ),
        benign_query_rate=6.0,
        seed=11,
    )
    base.update(overrides)
    return ScenarioSpec(**base)


def _victim_sets(scene):
    """Map each domain of each family to the clients that queried it."""
    family_names = set()
    for entry in scene.truth:
        if entry.class_id != 0:
            family_names.add(entry.name)
    queried = defaultdict(set)
    for record in scene.log_records:
        if record.qname in family_names and record.qtype is RecordType.A:
            queried[record.qname].add(record.client_id)
    return queried


def test_spec_validation():
    with pytest.raises(ConfigError):
        ScenarioSpec(clients=0)
    with pytest.raises(ConfigError):
        ScenarioSpec(cross_query_probability=1.5)
    with pytest.raises(ConfigError):
        FamilySpec("f", 0)
    with pytest.raises(ConfigError):
        FamilySpec("f", 3, ip_reuse_rate=-0.1)
    with pytest.raises(ConfigError):
        ScenarioSpec(families=(FamilySpec("dup", 2), FamilySpec("dup", 2)))


def test_full_overlap_gives_identical_victim_sets():
    scene = build_scene(_small_spec())
    sets = _victim_sets(scene)
    assert len(sets) == 6
    unique = {frozenset(s) for s in sets.values()}
    assert len(unique) == 1
    (victims,) = unique
    assert len(victims) >= 2


def test_full_overlap_shared_client_block_is_complete():
    spec = _small_spec(cross_query_probability=0.0)
    scene = build_scene(spec)
    batch = build_windows(scene.log_records, scene.pdns_records, spec.window_seconds)[0]
    graph = GraphBuilder(segment_map=scene.segment_map, seed=0).fit_transform(batch)
    family = [e.name for e in scene.truth if e.class_id == 1]
    idx = [graph.registry.domain_index(n) for n in family]
    block = commuting(graph, Metapath.SHARED_CLIENT).toarray()[np.ix_(idx, idx)]
    off_diag = block[~np.eye(len(idx), dtype=bool)]
    assert (off_diag > 0).all()


def test_zero_reuse_with_ample_pool_keeps_ips_disjoint():
    spec = _small_spec(
        families=(
            FamilySpec("fresh", 5, NameStyle.DGA_HEX,
                       victim_segment_overlap=1.0, ip_pool_size=5,
                       ip_reuse_rate=0.0, multi_ip_fraction=0.0),
        ),
    )
    scene = build_scene(spec)
    family = {e.name for e in scene.truth if e.class_id == 1}
    ip_of = defaultdict(set)
    for record in scene.log_records:
        if record.qname in family and record.qtype is RecordType.A:
            ip_of[record.qname].add(record.answers[0][0])
    assert len(ip_of) == 5
    all_ips = [ip for ips in ip_of.values() for ip in ips]
    assert len(all_ips) == len(set(all_ips))


def test_default_scene_truth_proportions():
    spec = default_scenario()
    scene = build_scene(spec)
    counts = defaultdict(int)
    for entry in scene.truth:
        counts[entry.class_id] += 1
    assert counts[0] == spec.benign_domains
    for class_id, family in enumerate(spec.families, start=1):
        assert counts[class_id] == family.domain_count
    assert sum(counts.values()) == spec.benign_domains + sum(
        f.domain_count for f in spec.families
    )


def test_same_seed_byte_identical(tmp_path):
    spec = _small_spec()
    first = generate(spec, tmp_path / "one")
    second = generate(spec, tmp_path / "two")
    for attr in ("log_path", "pdns_path", "segment_path", "truth_path"):
        a = getattr(first, attr).read_bytes()
        b = getattr(second, attr).read_bytes()
        assert a == b, attr


def test_different_seed_changes_logs(tmp_path):
    first = generate(_small_spec(seed=1), tmp_path / "one")
    second = generate(_small_spec(seed=2), tmp_path / "two")
    assert first.log_path.read_bytes() != second.log_path.read_bytes()


def test_every_record_parses_cleanly(tmp_path):
    files = generate(_small_spec(), tmp_path)
    records, stats = read_log_file(files.log_path)
    assert stats.malformed == 0 and stats.skipped_rtype == 0
    assert stats.parsed == len(files.log_path.read_text().splitlines())
    pdns, pstats = read_pdns_file(files.pdns_path)
    assert pstats.malformed == 0 and pstats.skipped_rtype == 0
    labels = load_labels(files.truth_path)
    assert len(labels) == 46
    segments = load_segment_map(files.segment_path)
    assert len(segments) == 20


def test_all_names_match_prune_rule_and_are_unique():
    scene = build_scene(default_scenario())
    names = [e.name for e in scene.truth]
    assert len(names) == len(set(names))
    pattern = re.compile(DEFAULT_NAME_RULE)
    assert all(pattern.match(n) and len(n) <= 253 for n in names)


def test_name_styles_have_their_shapes():
    spec = _small_spec(
        families=(
            FamilySpec("hexes", 4, NameStyle.DGA_HEX, victim_segment_overlap=1.0,
                       ip_pool_size=4, ip_reuse_rate=0.5),
            FamilySpec("words", 4, NameStyle.DGA_DICT, victim_segment_overlap=1.0,
                       ip_pool_size=4, ip_reuse_rate=0.5),
            FamilySpec("edits", 4, NameStyle.TYPO, victim_segment_overlap=1.0,
                       ip_pool_size=4, ip_reuse_rate=0.5),
        ),
    )
    scene = build_scene(spec)
    by_class = defaultdict(list)
    for entry in scene.truth:
        by_class[entry.class_id].append(entry.name)
    assert all(re.fullmatch(r"[0-9a-f]{12}\.xyz", n) for n in by_class[1])
    assert all(n.rsplit(".", 1)[1] in ("com", "net", "org") for n in by_class[2])
    benign_labels = {n.split(".")[0] for n in by_class[0]}
    for name in by_class[3]:
        label = name.split(".")[0]
        assert any(
            len(label) == len(b) and sum(x != y for x, y in zip(label, b)) == 1
            for b in benign_labels
        )


def test_infeasible_when_home_segment_too_small():
    with pytest.raises(InfeasibleScenarioError):
        build_scene(_small_spec(clients=2, segments=2))


def test_infeasible_when_pool_cannot_cover_fresh_ips():
    spec = _small_spec(
        families=(
            FamilySpec("tight", 6, NameStyle.DGA_HEX, victim_segment_overlap=1.0,
                       ip_pool_size=5, ip_reuse_rate=0.0),
        ),
    )
    with pytest.raises(InfeasibleScenarioError):
        build_scene(spec)


def test_infeasible_when_name_space_exhausted():
    with pytest.raises(InfeasibleScenarioError):
        build_scene(_small_spec(benign_domains=90 * 90))


def test_multi_ip_domains_get_pdns_second_address():
    spec = _small_spec(
        benign_multi_ip_fraction=0.0,
        families=(
            FamilySpec("twoip", 5, NameStyle.DGA_HEX, victim_segment_overlap=1.0,
                       ip_pool_size=12, ip_reuse_rate=0.0, multi_ip_fraction=1.0),
        ),
    )
    scene = build_scene(spec)
    family = {e.name for e in scene.truth if e.class_id == 1}
    log_ip = {}
    for record in scene.log_records:
        if record.qname in family and record.qtype is RecordType.A:
            log_ip[record.qname] = record.answers[0][0]
    pdns_by_name = {r.qname: r for r in scene.pdns_records}
    assert set(pdns_by_name) == family
    for name in family:
        assert pdns_by_name[name].rdata != log_ip[name]


def test_benign_cname_target_is_also_resolved():
    spec = _small_spec(cname_fraction=0.3, benign_query_rate=2.0)
    scene = build_scene(spec)
    chained = [
        r for r in scene.log_records
        if r.qtype is RecordType.CNAME and r.qname not in
        {e.name for e in scene.truth if e.class_id != 0}
    ]
    assert chained
    for record in chained:
        target = record.answers[0][0]
        followups = [
            r for r in scene.log_records
            if r.qname == target and r.qtype is RecordType.A
            and r.client_id == record.client_id
        ]
        assert followups, f"no chased answer for {target}"


def test_each_family_gets_cname_link():
    scene = build_scene(_small_spec())
    family = {e.name for e in scene.truth if e.class_id == 1}
    links = [
        r for r in scene.log_records
        if r.qtype is RecordType.CNAME and r.qname in family
    ]
    assert links
    assert all(r.answers[0][0] in family for r in links)


def test_multiple_windows_cover_the_horizon():
    spec = _small_spec(windows=3)
    scene = build_scene(spec)
    batches = build_windows(scene.log_records, scene.pdns_records, spec.window_seconds)
    assert len(batches) == 3
    assert all(batch.logs for batch in batches)
    assert all(batch.pdns == scene.pdns_records for batch in batches)


def test_segment_map_covers_all_clients():
    spec = _small_spec()
    scene = build_scene(spec)
    assert len(scene.segment_map) == spec.clients
    assert set(scene.segment_map.values()) == {"seg-00", "seg-01"}
