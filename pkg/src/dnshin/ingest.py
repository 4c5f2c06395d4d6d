"""Parsing of DNS resolver logs, passive-DNS records, and label lists.

Input formats:
  - resolver log: UTF-8 TSV, one answer per line:
        timestamp <TAB> client_id <TAB> qname <TAB> qtype <TAB> rdata
    lines starting with '#' are comments.
  - passive DNS: UTF-8 JSON-lines with keys
        rrname, rrtype, rdata, time_first, time_last, count
  - label list: UTF-8 CSV ``name,class_id,source[,issued_at]``; a name of the
    form ``2ld:example.com`` (or a bare two-label name) matches every FQDN
    sharing that second-level domain.

Only A, AAAA and CNAME records are accepted; readers count and skip
everything else.
"""

from __future__ import annotations

import enum
import ipaddress
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import (
    ConflictingEntryError,
    MalformedLineError,
    UnsupportedRecordTypeError,
)

BENIGN_CLASS = 0

_TWO_LD_PREFIX = "2ld:"


class RecordType(str, enum.Enum):
    A = "A"
    AAAA = "AAAA"
    CNAME = "CNAME"


class LabelSource(str, enum.Enum):
    MANUAL = "manual"
    PUBLIC = "public"
    LOCAL = "local"


@dataclass(frozen=True)
class DnsLogRecord:
    timestamp: int
    client_id: str
    qname: str
    qtype: RecordType
    answers: tuple[tuple[str, RecordType], ...]


@dataclass(frozen=True)
class PassiveDnsRecord:
    qname: str
    rtype: RecordType
    rdata: str
    first_seen: int
    last_seen: int
    count: int


@dataclass(frozen=True)
class LabelEntry:
    name: str
    class_id: int
    source: LabelSource
    issued_at: int = 0
    match_2ld: bool = False

    def matches(self, qname: str) -> bool:
        if self.match_2ld:
            return second_level_domain(qname) == second_level_domain(self.name)
        return qname == self.name


@dataclass
class WindowBatch:
    window_start: int
    window_end: int
    logs: list[DnsLogRecord] = field(default_factory=list)
    pdns: list[PassiveDnsRecord] = field(default_factory=list)


@dataclass
class IngestStats:
    """Per-file read counters; malformed and off-type lines are skipped."""

    parsed: int = 0
    malformed: int = 0
    skipped_rtype: int = 0


def normalize_name(raw: str) -> str:
    """Lowercase a domain name and strip one trailing dot.

    Internationalized names stay in punycode; the only validation here is
    that every dot-separated label is non-empty and total length is sane.
    """
    name = raw.strip().lower()
    if name.endswith("."):
        name = name[:-1]
    if not name or len(name) > 253:
        raise MalformedLineError(f"invalid domain name: {raw!r}")
    if any(label == "" for label in name.split(".")):
        raise MalformedLineError(f"empty label in domain name: {raw!r}")
    return name


def second_level_domain(name: str) -> str:
    """Registration-level name: the last two labels (or the whole single label)."""
    labels = name.split(".")
    return ".".join(labels[-2:])


def _parse_rtype(raw: str) -> RecordType:
    token = raw.strip().upper()
    try:
        return RecordType(token)
    except ValueError:
        raise UnsupportedRecordTypeError(f"unsupported record type: {raw!r}") from None


def _parse_ip(raw: str, rtype: RecordType) -> str:
    try:
        addr = ipaddress.ip_address(raw.strip())
    except ValueError:
        raise MalformedLineError(f"unparseable IP address: {raw!r}") from None
    if rtype is RecordType.A and addr.version != 4:
        raise MalformedLineError(f"A record with non-IPv4 data: {raw!r}")
    if rtype is RecordType.AAAA and addr.version != 6:
        raise MalformedLineError(f"AAAA record with non-IPv6 data: {raw!r}")
    return str(addr)


def _parse_epoch(raw: str | int) -> int:
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise MalformedLineError(f"bad timestamp: {raw!r}") from None
    if value < 0:
        raise MalformedLineError(f"negative timestamp: {raw!r}")
    return value


def parse_log_line(line: str) -> DnsLogRecord:
    """Parse one resolver-log TSV line into a normalized record."""
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 5:
        raise MalformedLineError(f"expected 5 tab-separated fields, got {len(fields)}")
    ts_raw, client_id, qname_raw, qtype_raw, rdata_raw = fields
    timestamp = _parse_epoch(ts_raw)
    if not client_id.strip():
        raise MalformedLineError("empty client identifier")
    qtype = _parse_rtype(qtype_raw)
    qname = normalize_name(qname_raw)
    if qtype is RecordType.CNAME:
        rdata = normalize_name(rdata_raw)
    else:
        rdata = _parse_ip(rdata_raw, qtype)
    return DnsLogRecord(
        timestamp=timestamp,
        client_id=client_id.strip(),
        qname=qname,
        qtype=qtype,
        answers=((rdata, qtype),),
    )


def format_log_lines(record: DnsLogRecord) -> list[str]:
    """Serialize a record back to TSV, one line per answer."""
    return [
        "\t".join(
            (str(record.timestamp), record.client_id, record.qname, rtype.value, rdata)
        )
        for rdata, rtype in record.answers
    ]


def parse_pdns_line(line: str) -> PassiveDnsRecord:
    """Parse one passive-DNS JSON-lines record."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLineError(f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedLineError("pDNS line is not a JSON object")
    try:
        rrname = obj["rrname"]
        rrtype_raw = obj["rrtype"]
        rdata_raw = obj["rdata"]
        first_seen = _parse_epoch(obj["time_first"])
        last_seen = _parse_epoch(obj["time_last"])
        count = obj["count"]
    except KeyError as exc:
        raise MalformedLineError(f"missing pDNS field: {exc}") from None
    rtype = _parse_rtype(str(rrtype_raw))
    qname = normalize_name(str(rrname))
    if rtype is RecordType.CNAME:
        rdata = normalize_name(str(rdata_raw))
    else:
        rdata = _parse_ip(str(rdata_raw), rtype)
    if first_seen > last_seen:
        raise MalformedLineError("time_first is after time_last")
    if not isinstance(count, int) or count < 1:
        raise MalformedLineError(f"bad resolution count: {count!r}")
    return PassiveDnsRecord(
        qname=qname,
        rtype=rtype,
        rdata=rdata,
        first_seen=first_seen,
        last_seen=last_seen,
        count=count,
    )


def format_pdns_line(record: PassiveDnsRecord) -> str:
    return json.dumps(
        {
            "rrname": record.qname,
            "rrtype": record.rtype.value,
            "rdata": record.rdata,
            "time_first": record.first_seen,
            "time_last": record.last_seen,
            "count": record.count,
        },
        separators=(",", ":"),
    )


def _read_lines(lines: Iterable[str], parse, stats: IngestStats) -> list:
    records = []
    for line in lines:
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            records.append(parse(line))
        except UnsupportedRecordTypeError:
            stats.skipped_rtype += 1
        except MalformedLineError:
            stats.malformed += 1
        else:
            stats.parsed += 1
    return records


def read_log_file(path: str | Path) -> tuple[list[DnsLogRecord], IngestStats]:
    stats = IngestStats()
    with open(path, encoding="utf-8") as handle:
        return _read_lines(handle, parse_log_line, stats), stats


def read_pdns_file(path: str | Path) -> tuple[list[PassiveDnsRecord], IngestStats]:
    stats = IngestStats()
    with open(path, encoding="utf-8") as handle:
        return _read_lines(handle, parse_pdns_line, stats), stats


def parse_label_line(line: str) -> LabelEntry:
    """Parse one ``name,class_id,source[,issued_at]`` label-list line."""
    fields = [f.strip() for f in line.rstrip("\n").split(",")]
    if len(fields) not in (3, 4):
        raise MalformedLineError(f"expected 3 or 4 comma-separated fields, got {len(fields)}")
    pattern, class_raw, source_raw = fields[0], fields[1], fields[2]
    issued_at = _parse_epoch(fields[3]) if len(fields) == 4 else 0
    explicit_2ld = pattern.lower().startswith(_TWO_LD_PREFIX)
    if explicit_2ld:
        pattern = pattern[len(_TWO_LD_PREFIX):]
    name = normalize_name(pattern)
    # Bare two-label names carry registration-level semantics: public lists of
    # 2LDs (popularity top-K, DGA feeds) are written without any prefix.
    match_2ld = explicit_2ld or name.count(".") == 1
    try:
        class_id = int(class_raw)
    except ValueError:
        raise MalformedLineError(f"bad class id: {class_raw!r}") from None
    if class_id < 0:
        raise MalformedLineError(f"negative class id: {class_raw!r}")
    try:
        source = LabelSource(source_raw.lower())
    except ValueError:
        raise MalformedLineError(f"unknown label source: {source_raw!r}") from None
    return LabelEntry(
        name=name,
        class_id=class_id,
        source=source,
        issued_at=issued_at,
        match_2ld=match_2ld,
    )


def format_label_line(entry: LabelEntry, with_issued_at: bool = False) -> str:
    name = entry.name
    if entry.match_2ld and name.count(".") != 1:
        name = _TWO_LD_PREFIX + name
    fields = [name, str(entry.class_id), entry.source.value]
    if with_issued_at:
        fields.append(str(entry.issued_at))
    return ",".join(fields)


def load_labels(path: str | Path, n_classes: int | None = None) -> list[LabelEntry]:
    """Load a label list, rejecting in-file conflicts on the same exact pattern.

    Conflicts across files (a name benign in one list, malicious in another)
    are resolved downstream by the configured policy.
    """
    entries: list[LabelEntry] = []
    seen: dict[tuple[str, bool], int] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                entry = parse_label_line(line)
            except MalformedLineError as exc:
                raise MalformedLineError(f"{path}:{lineno}: {exc}") from None
            if n_classes is not None and entry.class_id >= n_classes:
                raise MalformedLineError(
                    f"{path}:{lineno}: class id {entry.class_id} outside "
                    f"configured {n_classes} classes"
                )
            key = (entry.name, entry.match_2ld)
            if key in seen and seen[key] != entry.class_id:
                raise ConflictingEntryError(
                    f"{path}:{lineno}: {entry.name!r} already mapped to class {seen[key]}"
                )
            if key not in seen:
                seen[key] = entry.class_id
                entries.append(entry)
    return entries


def load_segment_map(path: str | Path) -> dict[str, str]:
    """Load the ``client_id,segment_label`` sidecar mapping."""
    segments: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = [f.strip() for f in line.rstrip("\n").split(",")]
            if len(fields) != 2 or not fields[0] or not fields[1]:
                raise MalformedLineError(f"{path}:{lineno}: expected client_id,segment_label")
            segments[fields[0]] = fields[1]
    return segments


def build_windows(
    records: Iterable[DnsLogRecord],
    pdns: Iterable[PassiveDnsRecord],
    window_seconds: int,
) -> list[WindowBatch]:
    """Partition log records into consecutive half-open windows of fixed length.

    Windows are aligned to multiples of ``window_seconds``; every log record
    lands in exactly one window, and a pDNS record is attached to every window
    its [first_seen, last_seen] interval overlaps.  Gaps in activity yield
    empty batches so the window sequence stays consecutive.
    """
    if window_seconds <= 0:
        raise ValueError("window length must be positive")
    records = sorted(records, key=lambda r: r.timestamp)
    if not records:
        return []
    first_bucket = records[0].timestamp // window_seconds
    last_bucket = records[-1].timestamp // window_seconds
    batches = [
        WindowBatch(
            window_start=bucket * window_seconds,
            window_end=(bucket + 1) * window_seconds,
        )
        for bucket in range(first_bucket, last_bucket + 1)
    ]
    for record in records:
        batches[record.timestamp // window_seconds - first_bucket].logs.append(record)
    pdns = sorted(pdns, key=lambda r: (r.first_seen, r.last_seen, r.qname, r.rdata))
    for precord in pdns:
        for batch in batches:
            if precord.first_seen < batch.window_end and precord.last_seen >= batch.window_start:
                batch.pdns.append(precord)
    return batches
