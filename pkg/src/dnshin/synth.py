"""Synthetic DNS scenes with planted benign and malicious structure.

A scene holds a benign population (Zipf-popular domains queried from every
network segment) and a set of malicious families.  Each family gets a home
segment whose clients form its victim pool, per-domain victim subsets drawn
from a shared core (the overlap knob), a private IP pool reused across the
family's domains, family-characteristic name shapes, and a sprinkle of CNAME
chains.  Victims keep their normal benign traffic, so cross-class edges
exist but stay weak.  Output uses exactly the ingest file formats, and the
whole construction is a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, fields as dataclass_fields
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, InfeasibleScenarioError
from .ingest import (
    BENIGN_CLASS,
    DnsLogRecord,
    LabelEntry,
    LabelSource,
    PassiveDnsRecord,
    RecordType,
    format_label_line,
    format_log_lines,
    format_pdns_line,
)

_WORDS = (
    "acorn", "amber", "anchor", "apex", "arbor", "atlas", "aurora", "badge",
    "basil", "beacon", "birch", "bloom", "bolt", "breeze", "brook", "cedar",
    "chart", "cider", "cliff", "clover", "cobalt", "comet", "coral", "crane",
    "crest", "delta", "drift", "ember", "fable", "falcon", "fern", "flint",
    "forge", "frost", "gale", "garnet", "glade", "grove", "harbor", "hazel",
    "heron", "ivory", "jasper", "juniper", "kite", "lagoon", "larch", "ledge",
    "lumen", "maple", "marsh", "meadow", "mesa", "mirth", "moss", "nectar",
    "north", "oasis", "ocean", "onyx", "orchid", "osprey", "otter", "pebble",
    "pine", "plume", "prairie", "quartz", "quill", "raven", "reef", "ridge",
    "river", "saffron", "sage", "slate", "sparrow", "spruce", "summit", "tide",
    "topaz", "trellis", "tundra", "valley", "vista", "willow", "wren", "zephyr",
)
_TLDS = ("com", "net", "org")


class NameStyle(str, Enum):
    """Shape of a malicious family's domain names."""

    DGA_HEX = "dga_hex"
    DGA_DICT = "dga_dict"
    TYPO = "typo"


@dataclass(frozen=True)
class FamilySpec:
    """One malicious family: how many domains, who they hit, what they reuse."""

    name: str
    domain_count: int
    name_style: NameStyle = NameStyle.DGA_HEX
    victim_segment_overlap: float = 0.8
    ip_pool_size: int = 40
    ip_reuse_rate: float = 0.5
    multi_ip_fraction: float = 0.0

    def __post_init__(self):
        if not self.name:
            raise ConfigError("family name must be non-empty")
        if self.domain_count < 1:
            raise ConfigError(f"family {self.name}: domain_count must be positive")
        if self.ip_pool_size < 1:
            raise ConfigError(f"family {self.name}: ip_pool_size must be positive")
        for knob in ("victim_segment_overlap", "ip_reuse_rate", "multi_ip_fraction"):
            value = getattr(self, knob)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"family {self.name}: {knob} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class ScenarioSpec:
    clients: int = 500
    benign_domains: int = 1700
    ips: int = 400
    segments: int = 10
    families: tuple[FamilySpec, ...] = ()
    benign_query_rate: float = 24.0
    cross_query_probability: float = 0.005
    cname_fraction: float = 0.06
    benign_multi_ip_fraction: float = 0.05
    zipf_exponent: float = 1.1
    window_seconds: int = 3600
    windows: int = 1
    seed: int = 0

    def __post_init__(self):
        for knob in ("clients", "benign_domains", "ips", "segments", "window_seconds", "windows"):
            if getattr(self, knob) < 1:
                raise ConfigError(f"{knob} must be positive")
        for knob in ("cross_query_probability", "cname_fraction", "benign_multi_ip_fraction"):
            value = getattr(self, knob)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{knob} must be in [0, 1], got {value}")
        if self.benign_query_rate < 0:
            raise ConfigError("benign_query_rate must be non-negative")
        if self.zipf_exponent <= 0:
            raise ConfigError("zipf_exponent must be positive")
        names = [f.name for f in self.families]
        if len(set(names)) != len(names):
            raise ConfigError("family names must be unique")

    @property
    def n_classes(self) -> int:
        return 1 + len(self.families)


def default_scenario(seed: int = 0, windows: int = 1) -> ScenarioSpec:
    """The reference scene: ~2000 domains, 500 clients, three families."""
    return ScenarioSpec(
        benign_domains=1550,
        benign_query_rate=14.0,
        zipf_exponent=1.0,
        families=(
            FamilySpec("barrage", 150, NameStyle.DGA_HEX,
                       victim_segment_overlap=0.8, ip_pool_size=30,
                       ip_reuse_rate=0.6, multi_ip_fraction=0.35),
            FamilySpec("wordsalad", 150, NameStyle.DGA_DICT,
                       victim_segment_overlap=0.7, ip_pool_size=40,
                       ip_reuse_rate=0.5, multi_ip_fraction=0.3),
            FamilySpec("lookalike", 150, NameStyle.TYPO,
                       victim_segment_overlap=0.75, ip_pool_size=35,
                       ip_reuse_rate=0.55, multi_ip_fraction=0.3),
        ),
        seed=seed,
        windows=windows,
    )


_FAMILY_KEYS = frozenset(
    f.name for f in dataclass_fields(FamilySpec)
)
_SCENARIO_KEYS = frozenset(
    f.name for f in dataclass_fields(ScenarioSpec)
)


def scenario_from_dict(payload: dict) -> ScenarioSpec:
    """Build a scenario from parsed JSON, rejecting unknown keys."""
    if not isinstance(payload, dict):
        raise ConfigError("scenario must be a JSON object")
    unknown = set(payload) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    fields = dict(payload)
    families = []
    for i, raw in enumerate(fields.pop("families", [])):
        if not isinstance(raw, dict):
            raise ConfigError(f"families[{i}] must be a JSON object")
        bad = set(raw) - _FAMILY_KEYS
        if bad:
            raise ConfigError(f"families[{i}]: unknown keys {sorted(bad)}")
        raw = dict(raw)
        if "name_style" in raw:
            try:
                raw["name_style"] = NameStyle(raw["name_style"])
            except ValueError:
                choices = ", ".join(s.value for s in NameStyle)
                raise ConfigError(
                    f"families[{i}]: name_style must be one of {choices}"
                ) from None
        families.append(FamilySpec(**raw))
    return ScenarioSpec(families=tuple(families), **fields)


@dataclass
class Scene:
    spec: ScenarioSpec
    log_records: list[DnsLogRecord]
    pdns_records: list[PassiveDnsRecord]
    segment_map: dict[str, str]
    truth: list[LabelEntry]


@dataclass(frozen=True)
class SceneFiles:
    log_path: Path
    pdns_path: Path
    segment_path: Path
    truth_path: Path


def _benign_name(index: int) -> str:
    first = _WORDS[index % len(_WORDS)]
    second = _WORDS[(index // len(_WORDS)) % len(_WORDS)]
    return f"{first}{second}.{_TLDS[index % len(_TLDS)]}"


def _family_names(style: NameStyle, count: int, used: set[str],
                  benign_names: list[str], rng: np.random.Generator) -> list[str]:
    names: list[str] = []
    while len(names) < count:
        if style is NameStyle.DGA_HEX:
            candidate = f"{rng.integers(0, 2 ** 48):012x}.xyz"
        elif style is NameStyle.DGA_DICT:
            first = _WORDS[rng.integers(len(_WORDS))]
            second = _WORDS[rng.integers(len(_WORDS))]
            candidate = f"{first}{second}.{_TLDS[rng.integers(len(_TLDS))]}"
        else:
            base = benign_names[rng.integers(len(benign_names))]
            label, _, suffix = base.partition(".")
            position = int(rng.integers(len(label)))
            letter = chr(ord("a") + int(rng.integers(26)))
            mutated = label[:position] + letter + label[position + 1:]
            candidate = f"{mutated}.{suffix}"
        if candidate in used:
            continue
        used.add(candidate)
        names.append(candidate)
    return names


class _IpPool:
    """Draws from a family's address pool with a tunable reuse bias."""

    def __init__(self, addresses: list[str], reuse_rate: float, rng: np.random.Generator):
        self.addresses = addresses
        self.reuse_rate = reuse_rate
        self.rng = rng
        self.used: list[str] = []
        self.next_fresh = 0

    def draw(self) -> str:
        exhausted = self.next_fresh >= len(self.addresses)
        if self.used and (exhausted or self.rng.random() < self.reuse_rate):
            if exhausted and self.reuse_rate == 0.0:
                raise InfeasibleScenarioError(
                    "IP pool exhausted with reuse disabled; grow ip_pool_size"
                )
            return self.used[int(self.rng.integers(len(self.used)))]
        if exhausted:
            raise InfeasibleScenarioError(
                "IP pool exhausted with reuse disabled; grow ip_pool_size"
            )
        address = self.addresses[self.next_fresh]
        self.next_fresh += 1
        self.used.append(address)
        return address


def build_scene(spec: ScenarioSpec) -> Scene:
    """Materialize the described scenario into in-memory records."""
    if spec.benign_domains > len(_WORDS) * len(_WORDS):
        raise InfeasibleScenarioError(
            f"benign name space holds {len(_WORDS) ** 2} names, "
            f"{spec.benign_domains} requested"
        )
    if spec.ips > 65536:
        raise InfeasibleScenarioError("benign IP pool limited to a /16")
    rng = np.random.default_rng(spec.seed)
    clients = [f"client-{i:04d}" for i in range(spec.clients)]
    segment_names = [f"seg-{i:02d}" for i in range(spec.segments)]
    segment_map = {c: segment_names[i % spec.segments] for i, c in enumerate(clients)}
    segment_members: list[list[int]] = [[] for _ in range(spec.segments)]
    for i in range(spec.clients):
        segment_members[i % spec.segments].append(i)

    benign_names = [_benign_name(i) for i in range(spec.benign_domains)]
    used_names = set(benign_names)
    benign_ips = [f"198.18.{i // 256}.{i % 256}" for i in range(spec.ips)]
    primary_ip = {
        name: benign_ips[int(rng.integers(spec.ips))] for name in benign_names
    }
    zipf_weights = 1.0 / np.arange(1, spec.benign_domains + 1) ** spec.zipf_exponent
    zipf_probs = zipf_weights / zipf_weights.sum()

    # Family structure is fixed once; only timestamps vary across windows.
    family_plan = []
    for f_index, family in enumerate(spec.families):
        if family.ip_pool_size > 65536:
            raise InfeasibleScenarioError("family IP pool limited to a /16")
        home = f_index % spec.segments
        pool_clients = segment_members[home]
        if len(pool_clients) < 2:
            raise InfeasibleScenarioError(
                f"family {family.name}: home segment {segment_names[home]} has "
                f"{len(pool_clients)} clients; victim overlap needs at least 2"
            )
        names = _family_names(family.name_style, family.domain_count,
                              used_names, benign_names, rng)
        shuffled = [pool_clients[int(i)] for i in rng.permutation(len(pool_clients))]
        per_domain = max(2, len(pool_clients) // 2)
        core_size = min(per_domain, int(round(family.victim_segment_overlap * per_domain)))
        core = shuffled[:core_size]
        rest = shuffled[core_size:]
        n_multi = int(family.multi_ip_fraction * family.domain_count)
        if family.ip_reuse_rate == 0.0 and family.ip_pool_size < family.domain_count + n_multi:
            raise InfeasibleScenarioError(
                f"family {family.name}: reuse disabled but pool of {family.ip_pool_size} "
                f"cannot cover {family.domain_count + n_multi} fresh assignments"
            )
        addresses = [
            f"10.{f_index + 1}.{j // 256}.{j % 256}" for j in range(family.ip_pool_size)
        ]
        ip_pool = _IpPool(addresses, family.ip_reuse_rate, rng)
        multi_idx = set(
            int(i) for i in rng.choice(family.domain_count, size=n_multi, replace=False)
        ) if n_multi else set()
        domains = []
        others = [i for i in range(spec.clients) if i not in pool_clients]
        for d_index, name in enumerate(names):
            extra_needed = per_domain - core_size
            if extra_needed > len(rest):
                extra_needed = len(rest)
            extra = (
                [rest[int(i)] for i in rng.choice(len(rest), size=extra_needed, replace=False)]
                if extra_needed
                else []
            )
            victims = sorted(core + extra)
            if others and spec.cross_query_probability > 0:
                stray_mask = rng.random(len(others)) < spec.cross_query_probability
                strays = [others[i] for i in np.flatnonzero(stray_mask)]
            else:
                strays = []
            first_ip = ip_pool.draw()
            second: str | None = None
            if d_index in multi_idx:
                candidate = ip_pool.draw()
                if candidate == first_ip:
                    candidate = ip_pool.draw()
                if candidate != first_ip:
                    second = candidate
            domains.append((name, victims, strays, first_ip, second))
        cname_links = [(0, 1)] if family.domain_count >= 2 else []
        for k in range(1, family.domain_count - 1):
            if rng.random() < spec.cname_fraction:
                cname_links.append((k, k + 1))
        family_plan.append((f_index + 1, family, names, domains, cname_links, core))

    n_cname_pairs = int(spec.cname_fraction * spec.benign_domains / 2)
    if 2 * n_cname_pairs > spec.benign_domains:
        n_cname_pairs = spec.benign_domains // 2
    benign_cname: list[tuple[int, int]] = []
    if n_cname_pairs:
        chosen = rng.choice(spec.benign_domains, size=2 * n_cname_pairs, replace=False)
        benign_cname = [
            (int(chosen[2 * i]), int(chosen[2 * i + 1])) for i in range(n_cname_pairs)
        ]

    log_records: list[DnsLogRecord] = []

    def emit(ts: int, client_index: int, qname: str, rtype: RecordType, rdata: str):
        log_records.append(
            DnsLogRecord(
                timestamp=ts,
                client_id=clients[client_index],
                qname=qname,
                qtype=rtype,
                answers=((rdata, rtype),),
            )
        )

    for window in range(spec.windows):
        start = window * spec.window_seconds
        end = start + spec.window_seconds
        for client_index in range(spec.clients):
            n_queries = int(rng.poisson(spec.benign_query_rate))
            if not n_queries:
                continue
            picks = rng.choice(spec.benign_domains, size=n_queries, p=zipf_probs)
            stamps = rng.integers(start, end, size=n_queries)
            for pick, ts in zip(picks, stamps):
                name = benign_names[int(pick)]
                emit(int(ts), client_index, name, RecordType.A, primary_ip[name])
        for class_id, family, names, domains, cname_links, core in family_plan:
            for name, victims, strays, first_ip, second in domains:
                for client_index in victims:
                    emit(int(rng.integers(start, end)), client_index, name,
                         RecordType.A, first_ip)
                for client_index in strays:
                    emit(int(rng.integers(start, end)), client_index, name,
                         RecordType.A, first_ip)
            for alias_index, target_index in cname_links:
                carrier = core[int(rng.integers(len(core)))]
                emit(int(rng.integers(start, end)), carrier,
                     names[alias_index], RecordType.CNAME, names[target_index])
        for alias_index, target_index in benign_cname:
            carrier = int(rng.integers(spec.clients))
            target = benign_names[target_index]
            ts = int(rng.integers(start, end))
            emit(ts, carrier, benign_names[alias_index], RecordType.CNAME, target)
            # the resolver chases the chain, so the carrier also sees the
            # target's address record
            emit(ts, carrier, target, RecordType.A, primary_ip[target])

    # Second addresses go only to domains the logs actually mention, so no
    # node enters the graph through passive DNS alone (such a node would have
    # no client edges and could end up isolated).
    queried_benign = sorted(
        {r.qname for r in log_records if r.qtype is RecordType.A}
        & set(benign_names)
    )
    n_benign_multi = int(spec.benign_multi_ip_fraction * len(queried_benign))
    secondary_ip: dict[str, str] = {}
    if n_benign_multi:
        picks = rng.choice(len(queried_benign), size=n_benign_multi, replace=False)
        for idx in sorted(int(i) for i in picks):
            name = queried_benign[idx]
            offset = 1 + int(rng.integers(max(1, spec.ips - 1)))
            secondary_ip[name] = benign_ips[
                (benign_ips.index(primary_ip[name]) + offset) % spec.ips
            ]

    horizon = spec.windows * spec.window_seconds - 1
    pdns_records: list[PassiveDnsRecord] = []
    for name in sorted(secondary_ip):
        pdns_records.append(
            PassiveDnsRecord(
                qname=name, rtype=RecordType.A, rdata=secondary_ip[name],
                first_seen=0, last_seen=horizon,
                count=1 + int(rng.integers(99)),
            )
        )
    for class_id, family, names, domains, cname_links, core in family_plan:
        for name, victims, strays, first_ip, second in domains:
            if second is None:
                continue
            pdns_records.append(
                PassiveDnsRecord(
                    qname=name, rtype=RecordType.A, rdata=second,
                    first_seen=0, last_seen=horizon,
                    count=1 + int(rng.integers(99)),
                )
            )

    truth: list[LabelEntry] = []
    for name in benign_names:
        truth.append(_truth_entry(name, BENIGN_CLASS))
    for class_id, family, names, domains, cname_links, core in family_plan:
        for name in names:
            truth.append(_truth_entry(name, class_id))
    truth.sort(key=lambda e: (e.class_id, e.name))

    log_records.sort(
        key=lambda r: (r.timestamp, r.client_id, r.qname, r.qtype.value, r.answers)
    )
    pdns_records.sort(key=lambda r: (r.qname, r.rdata))
    return Scene(
        spec=spec,
        log_records=log_records,
        pdns_records=pdns_records,
        segment_map=segment_map,
        truth=truth,
    )


def _truth_entry(name: str, class_id: int) -> LabelEntry:
    return LabelEntry(
        name=name,
        class_id=class_id,
        source=LabelSource.PUBLIC,
        issued_at=0,
        match_2ld=name.count(".") == 1,
    )


def generate(spec: ScenarioSpec, out_dir: str | Path) -> SceneFiles:
    """Write the scene to disk in the ingest file formats plus truth.csv."""
    scene = build_scene(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = SceneFiles(
        log_path=out / "queries.tsv",
        pdns_path=out / "pdns.jsonl",
        segment_path=out / "segments.csv",
        truth_path=out / "truth.csv",
    )
    log_lines: list[str] = []
    for record in scene.log_records:
        log_lines.extend(format_log_lines(record))
    files.log_path.write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    files.pdns_path.write_text(
        "\n".join(format_pdns_line(r) for r in scene.pdns_records) + "\n",
        encoding="utf-8",
    )
    segment_lines = [f"{client},{scene.segment_map[client]}"
                     for client in sorted(scene.segment_map)]
    files.segment_path.write_text("\n".join(segment_lines) + "\n", encoding="utf-8")
    truth_lines = [format_label_line(e) for e in scene.truth]
    files.truth_path.write_text("\n".join(truth_lines) + "\n", encoding="utf-8")
    return files
