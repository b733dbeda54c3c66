"""Parsers and time windowing for IDS alert streams.

Three input formats are supported:

* Snort "fast" alert lines, e.g.::

    11/30-20:00:01.000000 [**] [1:215:3] MSG [**] [Classification: x] \
[Priority: 2] {TCP} 10.10.255.77:4444 -> 10.10.255.254:80

  The fast format omits the year, so the caller must supply one. Only the
  signature id (the middle integer of the [gid:sid:rev] triple) and the two
  IP addresses are kept; message, classification, priority, protocol and
  ports are parsed past and discarded.

* OSSEC ``alerts.log`` blocks ("** Alert <epoch>..." through a blank line).
  Kept fields: rule id, the log file from the location suffix, and the source
  IP when a "Src IP:" line is present. The hostname in the location prefix is
  carried along for :func:`normalize_record` to resolve against a host map.

* A JSONL interchange format, one record per line:
  ``{"source": ..., "ts": ..., "fields": {...}}``. Sources other than
  snort/ossec are accepted as-is so third-party IDSs can feed the pipeline.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)

SNORT = "snort"
OSSEC = "ossec"

# Canonical layer per field key. src/dst/agent addresses share one "ip" layer
# so the same address is the same graph vertex no matter which IDS or field
# reported it. Unknown keys become their own layer.
LAYER_BY_FIELD = {
    "src_ip": "ip",
    "dst_ip": "ip",
    "agent_ip": "ip",
    "hostname": "ip",
    "sig_id": "signature",
    "rule_id": "rule",
    "logfile": "logfile",
}


def layer_for(key: str) -> str:
    """Graph layer a field key maps to."""
    return LAYER_BY_FIELD.get(key, key)


class MalformedLineError(ValueError):
    """A Snort fast line is missing its timestamp, signature triple or IP pair."""


class MalformedBlockError(ValueError):
    """An OSSEC alert block is missing its epoch header or Rule line."""


@dataclass
class ParseStats:
    """Counters accumulated while reading and normalizing alert files."""

    lines: int = 0
    parsed: int = 0
    skipped: int = 0
    dropped_before_origin: int = 0
    unresolved_hostnames: int = 0
    hostname_collisions: int = 0

    def merge(self, other: "ParseStats") -> None:
        self.lines += other.lines
        self.parsed += other.parsed
        self.skipped += other.skipped
        self.dropped_before_origin += other.dropped_before_origin
        self.unresolved_hostnames += other.unresolved_hostnames
        self.hostname_collisions += other.hostname_collisions


@dataclass
class AlertRecord:
    """One parsed IDS alert: source tag, UTC epoch timestamp, ordered fields."""

    source: str
    timestamp: float
    fields: dict[str, str]

    def validate(self) -> None:
        if self.timestamp <= 0:
            raise ValueError(f"non-positive timestamp {self.timestamp!r}")
        if not self.fields:
            raise ValueError("record has no fields")
        for key, value in self.fields.items():
            if not isinstance(value, str) or not value:
                raise ValueError(f"empty or non-string value for field {key!r}")


@dataclass
class HostMap:
    """Hostname to IPv4 mapping used to fold host-based alerts into the ip layer."""

    entries: dict[str, str] = field(default_factory=dict)

    def resolve(self, hostname: str) -> str | None:
        return self.entries.get(hostname.strip().lower())

    def __len__(self) -> int:
        return len(self.entries)


_IPV4_RE = re.compile(r"^\d{1,3}(?:\.\d{1,3}){3}$")


def _is_ipv4(text: str) -> bool:
    if not _IPV4_RE.match(text):
        return False
    return all(int(part) <= 255 for part in text.split("."))


def load_hostmap(path: str | Path) -> HostMap:
    """Load a "hostname ip" per line text file; '#' starts a comment."""
    entries: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"hostmap line needs 'hostname ip': {raw!r}")
        name, ip = parts[0].lower(), parts[1]
        if not _is_ipv4(ip):
            raise ValueError(f"hostmap value is not an IPv4 address: {raw!r}")
        if name in entries:
            raise ValueError(f"duplicate hostname in hostmap: {name!r}")
        entries[name] = ip
    return HostMap(entries)


@dataclass(frozen=True)
class WindowSpec:
    """Non-overlapping contiguous time windows: window k covers
    [origin + k*length, origin + (k+1)*length)."""

    origin: float
    length: float = 28800.0  # 8 hours
    training_cutoff: float | None = None

    def __post_init__(self) -> None:
        if self.length <= 0:
            raise ValueError("window length must be positive")
        if self.training_cutoff is None:
            object.__setattr__(self, "training_cutoff", self.origin)
        if self.training_cutoff < self.origin:
            raise ValueError("training_cutoff must be >= origin")

    def window_of(self, ts: float) -> int:
        return math.floor((ts - self.origin) / self.length)

    def span(self, index: int) -> tuple[float, float]:
        start = self.origin + index * self.length
        return start, start + self.length

    @property
    def training_windows(self) -> int:
        """Number of windows fully or partially covered by the training span."""
        return math.ceil((self.training_cutoff - self.origin) / self.length)


# --- Snort fast format ------------------------------------------------------

_SNORT_TS_RE = re.compile(
    r"^(\d{2})/(\d{2})(?:/(\d{2,4}))?-(\d{2}):(\d{2}):(\d{2})\.(\d{1,6})"
)
_SNORT_SIG_RE = re.compile(r"\[(\d+):(\d+):(\d+)\]")
_SNORT_ADDR_RE = re.compile(
    r"(\d{1,3}(?:\.\d{1,3}){3})(?::\d{1,5})?\s*->\s*(\d{1,3}(?:\.\d{1,3}){3})(?::\d{1,5})?"
)


def parse_snort_fast(line: str, year: int) -> AlertRecord:
    """Parse one Snort fast-format alert line.

    `year` is required because the fast format usually omits it; a year
    embedded in the line (MM/DD/YY- variant) takes precedence.

    Raises MalformedLineError when the timestamp, the [gid:sid:rev] triple or
    the "src -> dst" IP pair cannot be found.
    """
    line = line.strip()
    ts_match = _SNORT_TS_RE.match(line)
    if not ts_match:
        raise MalformedLineError("no leading timestamp")
    month, day, line_year, hh, mm, ss, frac = ts_match.groups()
    if line_year is not None:
        year = int(line_year)
        if year < 100:
            year += 2000
    micros = int(frac.ljust(6, "0"))
    try:
        moment = datetime(
            year, int(month), int(day), int(hh), int(mm), int(ss), micros,
            tzinfo=timezone.utc,
        )
    except ValueError as exc:
        raise MalformedLineError(f"invalid datetime: {exc}") from exc

    rest = line[ts_match.end():]
    sig_match = _SNORT_SIG_RE.search(rest)
    if not sig_match:
        raise MalformedLineError("no [gid:sid:rev] signature triple")
    addr_match = _SNORT_ADDR_RE.search(rest, sig_match.end())
    if not addr_match:
        raise MalformedLineError("no 'src -> dst' IP pair")
    src_ip, dst_ip = addr_match.group(1), addr_match.group(2)
    if not (_is_ipv4(src_ip) and _is_ipv4(dst_ip)):
        raise MalformedLineError("address is not a valid IPv4 dotted quad")

    return AlertRecord(
        source=SNORT,
        timestamp=moment.timestamp(),
        fields={"sig_id": sig_match.group(2), "src_ip": src_ip, "dst_ip": dst_ip},
    )


# --- OSSEC alerts.log -------------------------------------------------------

_OSSEC_HEAD_RE = re.compile(r"^\*\* Alert (\d+)\.\d+:")
_OSSEC_RULE_RE = re.compile(r"^Rule: (\d+)\b")
_OSSEC_LOCATION_RE = re.compile(
    r"^\d{4} \w{3}\s+\d{1,2} \d{2}:\d{2}:\d{2} (?P<loc>.+?)->(?P<logfile>\S+)\s*$"
)
_OSSEC_SRC_IP_RE = re.compile(r"^Src IP: (\S+)")


def parse_ossec_block(block: str) -> AlertRecord:
    """Parse one OSSEC alerts.log entry (header line through blank line).

    The returned record keeps rule_id, logfile and (when present) src_ip; the
    agent hostname from the location line rides along as a "hostname" field
    until normalize_record resolves it to an address.
    """
    epoch: int | None = None
    rule_id: str | None = None
    logfile: str | None = None
    hostname: str | None = None
    src_ip: str | None = None

    for raw in block.splitlines():
        line = raw.strip()
        if not line:
            continue
        if epoch is None:
            head = _OSSEC_HEAD_RE.match(line)
            if head:
                epoch = int(head.group(1))
                continue
        loc = _OSSEC_LOCATION_RE.match(line)
        if loc and logfile is None:
            logfile = loc.group("logfile")
            where = loc.group("loc").strip()
            if where.startswith("("):
                # remote agent form "(name) ip->logfile"
                hostname = where[1:].split(")", 1)[0].strip()
            else:
                hostname = where
            continue
        rule = _OSSEC_RULE_RE.match(line)
        if rule and rule_id is None:
            rule_id = rule.group(1)
            continue
        src = _OSSEC_SRC_IP_RE.match(line)
        if src and src_ip is None:
            value = src.group(1)
            if value and value != "(none)":
                src_ip = value

    if epoch is None:
        raise MalformedBlockError("no '** Alert <epoch>' header")
    if rule_id is None:
        raise MalformedBlockError("no 'Rule:' line")
    if logfile is None:
        raise MalformedBlockError("no location line with '->'")

    fields: dict[str, str] = {"rule_id": rule_id, "logfile": logfile}
    if src_ip:
        fields["src_ip"] = src_ip
    if hostname:
        fields["hostname"] = hostname
    return AlertRecord(source=OSSEC, timestamp=float(epoch), fields=fields)


def iter_ossec_blocks(text: str) -> Iterator[str]:
    """Split alerts.log text into alert blocks. A block starts at a
    "** Alert" header and ends at the next header or a blank line."""
    current: list[str] = []
    for line in text.splitlines():
        if line.startswith("** Alert"):
            if current:
                yield "\n".join(current)
            current = [line]
        elif not line.strip():
            if current:
                yield "\n".join(current)
                current = []
        elif current:
            current.append(line)
    if current:
        yield "\n".join(current)


# --- Normalization ----------------------------------------------------------

def normalize_record(
    record: AlertRecord, hostmap: HostMap | None = None, stats: ParseStats | None = None
) -> AlertRecord:
    """Canonicalize field keys and fold the hostname into the ip layer.

    An unresolvable hostname stays as the src_ip value (counted and logged,
    never fatal). A hostname that resolves to a different address than an
    existing src_ip lands in a separate agent_ip field, still in the ip
    layer. Idempotent: normalizing twice equals normalizing once.
    """
    fields = {key.strip().lower(): value for key, value in record.fields.items()}
    hostname = fields.pop("hostname", None)
    if hostname is not None:
        resolved = hostmap.resolve(hostname) if hostmap else None
        if resolved is None:
            resolved = hostname
            if stats:
                stats.unresolved_hostnames += 1
            logger.warning("unresolvable hostname %r kept as ip-layer value", hostname)
        if "src_ip" not in fields:
            fields["src_ip"] = resolved
        elif fields["src_ip"] != resolved:
            fields["agent_ip"] = resolved
            if stats:
                stats.hostname_collisions += 1
            logger.warning(
                "hostname %r resolves to %s but record already has src_ip %s",
                hostname, resolved, fields["src_ip"],
            )
    return AlertRecord(source=record.source, timestamp=record.timestamp, fields=fields)


# --- File readers -----------------------------------------------------------

def read_snort_file(path: str | Path, year: int, stats: ParseStats) -> list[AlertRecord]:
    records = []
    for raw in Path(path).read_text().splitlines():
        if not raw.strip():
            continue
        stats.lines += 1
        try:
            records.append(parse_snort_fast(raw, year))
            stats.parsed += 1
        except MalformedLineError as exc:
            stats.skipped += 1
            logger.debug("skipping snort line (%s): %r", exc, raw[:120])
    return records


def read_ossec_file(path: str | Path, stats: ParseStats) -> list[AlertRecord]:
    records = []
    for block in iter_ossec_blocks(Path(path).read_text()):
        stats.lines += 1
        try:
            records.append(parse_ossec_block(block))
            stats.parsed += 1
        except MalformedBlockError as exc:
            stats.skipped += 1
            logger.debug("skipping ossec block (%s)", exc)
    return records


def read_jsonl_file(path: str | Path, stats: ParseStats) -> list[AlertRecord]:
    records = []
    for raw in Path(path).read_text().splitlines():
        if not raw.strip():
            continue
        stats.lines += 1
        try:
            records.append(parse_jsonl_record(raw))
            stats.parsed += 1
        except (ValueError, KeyError, TypeError) as exc:
            stats.skipped += 1
            logger.debug("skipping jsonl line (%s): %r", exc, raw[:120])
    return records


def parse_jsonl_record(line: str) -> AlertRecord:
    payload = json.loads(line)
    fields = payload["fields"]
    if not isinstance(fields, dict):
        raise ValueError("'fields' must be an object")
    record = AlertRecord(
        source=str(payload["source"]).strip().lower(),
        timestamp=float(payload["ts"]),
        fields={str(k).strip().lower(): str(v) for k, v in fields.items()},
    )
    if not record.source:
        raise ValueError("empty source")
    record.validate()
    return record


def write_jsonl(records: Iterable[AlertRecord], path: str | Path) -> None:
    with open(path, "w") as fp:
        for record in records:
            fp.write(
                json.dumps(
                    {"source": record.source, "ts": record.timestamp, "fields": record.fields},
                    separators=(",", ":"),
                )
            )
            fp.write("\n")


# --- Windowing ---------------------------------------------------------------

def window_partition(
    records: Sequence[AlertRecord],
    spec: WindowSpec,
    stats: ParseStats | None = None,
    first_index: int | None = None,
    last_index: int | None = None,
) -> list[tuple[int, list[AlertRecord]]]:
    """Assign records to windows by floor((ts - origin) / length).

    Returns (window_index, records) pairs in index order, including empty
    windows between occupied ones. Records before the origin are dropped with
    a warning count. first_index/last_index force the emitted range (used by
    the pipeline to pin the scoring span regardless of record gaps).
    """
    buckets: dict[int, list[AlertRecord]] = {}
    for record in records:
        index = spec.window_of(record.timestamp)
        if index < 0:
            if stats:
                stats.dropped_before_origin += 1
            logger.warning("record at %s precedes window origin; dropped", record.timestamp)
            continue
        buckets.setdefault(index, []).append(record)

    if not buckets and first_index is None and last_index is None:
        return []
    lo = first_index if first_index is not None else min(buckets)
    hi = last_index if last_index is not None else max(buckets)
    return [(k, buckets.get(k, [])) for k in range(lo, hi + 1)]
