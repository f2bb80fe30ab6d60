"""Append-only persistence of per-cycle quantile records and the job table.

``properties.tsv`` holds one record per line::

    cycle_ts  job_id  metric  count  min  d0.1 ... d0.9  max

with reals written to 9 significant digits in scientific notation
(``2.00000000e0``). ``jobs.tsv`` carries a header row and one job per line,
node ids comma-joined.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .properties import PropertyKind
from .quantiles import LEVELS, QuantileSummary

__all__ = [
    "JobRecord",
    "JobTable",
    "StoreRecord",
    "StoreError",
    "ParseError",
    "CorruptLine",
    "DuplicateKey",
    "InvalidRecord",
    "encode_line",
    "decode_line",
    "format_real",
    "PropertyStore",
    "write_jobs",
    "read_jobs",
    "JOBS_FILE",
    "PROPERTIES_FILE",
]

log = logging.getLogger(__name__)

JOBS_FILE = "jobs.tsv"
PROPERTIES_FILE = "properties.tsv"
JOBS_HEADER = ("job_id", "owner_group", "app_tag", "cores", "nodes", "start_ts", "end_ts")
N_FIELDS = 5 + len(LEVELS) + 1


class StoreError(Exception):
    pass


class ParseError(StoreError):
    def __init__(self, message: str, field_index: Optional[int] = None):
        super().__init__(message if field_index is None else f"field {field_index}: {message}")
        self.field_index = field_index


class CorruptLine(StoreError):
    def __init__(self, lineno: int, cause: Exception):
        super().__init__(f"line {lineno}: {cause}")
        self.lineno = lineno
        self.cause = cause


class DuplicateKey(StoreError):
    pass


class InvalidRecord(StoreError):
    pass


@dataclass(frozen=True)
class JobRecord:
    job_id: str
    owner_group: str
    app_tag: str
    cores: int
    nodes: tuple[int, ...]
    start_ts: int
    end_ts: int

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(int(n) for n in self.nodes))
        if self.end_ts <= self.start_ts:
            raise ValueError(f"{self.job_id}: end_ts must exceed start_ts")
        if self.cores < 1 or not self.nodes:
            raise ValueError(f"{self.job_id}: a job needs at least one core and one node")
        for name in ("job_id", "owner_group", "app_tag"):
            v = getattr(self, name)
            if not v or any(c in v for c in "\t\n,"):
                raise ValueError(f"{name} {v!r} is empty or contains a separator")

    @property
    def runtime(self) -> int:
        return self.end_ts - self.start_ts

    def active_at(self, ts: int) -> bool:
        return self.start_ts <= ts < self.end_ts

    def check_capacity(self, cores_per_node: int) -> None:
        if self.cores > len(self.nodes) * cores_per_node:
            raise ValueError(
                f"{self.job_id}: {self.cores} cores do not fit on {len(self.nodes)} "
                f"nodes of {cores_per_node} cores"
            )


class JobTable:
    """Maps (node, core) to the job running there at a given cycle.

    A job's cores fill its nodes in order, each node taking as many cores as
    remain (up to ``cores_per_node``). When jobs share a node, they get
    consecutive core ranges in (start_ts, job_id) order.
    """

    def __init__(self, jobs: Iterable[JobRecord], cores_per_node: int):
        self.cores_per_node = cores_per_node
        self.jobs = {j.job_id: j for j in jobs}
        for j in self.jobs.values():
            j.check_capacity(cores_per_node)
        self._cache: dict[int, dict[int, dict[str, list[int]]]] = {}

    def __len__(self):
        return len(self.jobs)

    def active(self, ts: int) -> list[JobRecord]:
        return sorted((j for j in self.jobs.values() if j.active_at(ts)),
                      key=lambda j: (j.start_ts, j.job_id))

    def layout(self, ts: int) -> dict[int, dict[str, list[int]]]:
        """node -> {job_id: [local core ids]} for every job active at ``ts``."""
        cached = self._cache.get(ts)
        if cached is not None:
            return cached
        layout: dict[int, dict[str, list[int]]] = {}
        next_free: dict[int, int] = {}
        for job in self.active(ts):
            remaining = job.cores
            for node in job.nodes:
                take = min(self.cores_per_node, remaining)
                if take == 0:
                    break
                first = next_free.get(node, 0)
                if first + take > self.cores_per_node:
                    raise ValueError(f"node {node} over-subscribed at t={ts}")
                layout.setdefault(node, {})[job.job_id] = list(range(first, first + take))
                next_free[node] = first + take
                remaining -= take
        if len(self._cache) > 4:
            self._cache.clear()
        self._cache[ts] = layout
        return layout

    def cores_on(self, node: int, ts: int) -> dict[str, list[int]]:
        return self.layout(ts).get(node, {})


@dataclass(frozen=True)
class StoreRecord:
    cycle_ts: int
    job_id: str
    metric: PropertyKind
    summary: QuantileSummary

    @property
    def key(self) -> tuple[int, str, PropertyKind]:
        return (self.cycle_ts, self.job_id, self.metric)


def format_real(x: float) -> str:
    """9 significant digits, scientific, exponent without sign padding."""
    mantissa, exp = f"{x:.8e}".split("e")
    return f"{mantissa}e{int(exp)}"


def encode_line(record: StoreRecord) -> str:
    s = record.summary
    fields = [str(record.cycle_ts), record.job_id, record.metric.token, str(s.count)]
    fields.extend(format_real(v) for v in s.support)
    return "\t".join(fields) + "\n"


def decode_line(line: str) -> StoreRecord:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != N_FIELDS:
        raise ParseError(f"expected {N_FIELDS} fields, got {len(fields)}",
                         field_index=min(len(fields), N_FIELDS))
    try:
        cycle_ts = int(fields[0])
    except ValueError:
        raise ParseError(f"bad cycle_ts {fields[0]!r}", 0) from None
    job_id = fields[1]
    if not job_id:
        raise ParseError("empty job id", 1)
    try:
        metric = PropertyKind.from_token(fields[2])
    except ValueError as e:
        raise ParseError(str(e), 2) from None
    try:
        count = int(fields[3])
    except ValueError:
        raise ParseError(f"bad count {fields[3]!r}", 3) from None
    reals = []
    for i in range(4, N_FIELDS):
        try:
            v = float(fields[i])
        except ValueError:
            raise ParseError(f"bad real {fields[i]!r}", i) from None
        if not math.isfinite(v):
            raise ParseError(f"non-finite real {fields[i]!r}", i)
        reals.append(v)
    try:
        summary = QuantileSummary(count, reals[0], tuple(reals[1:-1]), reals[-1])
    except ValueError as e:
        raise ParseError(str(e)) from None
    return StoreRecord(cycle_ts, job_id, metric, summary)


def _check_record(record: StoreRecord) -> None:
    if not isinstance(record.metric, PropertyKind):
        raise InvalidRecord(f"metric {record.metric!r} is not a PropertyKind")
    if not isinstance(record.cycle_ts, int) or record.cycle_ts < 0:
        raise InvalidRecord(f"bad cycle_ts {record.cycle_ts!r}")
    if not record.job_id or any(c in record.job_id for c in "\t\n"):
        raise InvalidRecord(f"bad job id {record.job_id!r}")
    s = record.summary
    if not isinstance(s, QuantileSummary):
        raise InvalidRecord("summary is not a QuantileSummary")
    pts = s.support
    if s.count < 1 or not all(math.isfinite(v) for v in pts):
        raise InvalidRecord("summary count or values out of range")
    if any(a > b for a, b in zip(pts, pts[1:])):
        raise InvalidRecord("summary deciles are not monotone")


class PropertyStore:
    """Single-writer, append-only ``properties.tsv``.

    Existing content is indexed on open so duplicate keys are refused across
    sessions. Every append writes one full line and flushes it; pass
    ``fsync=True`` to also force it to disk.
    """

    def __init__(self, path, fsync: bool = False, strict: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self.strict = strict
        self._keys: set = set()
        if self.path.exists():
            for rec in self._scan(strict=strict):
                self._keys.add(rec.key)
        self._fh = None

    def __len__(self):
        return len(self._keys)

    def __contains__(self, key):
        return key in self._keys

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def append(self, record: StoreRecord) -> None:
        _check_record(record)
        if record.key in self._keys:
            raise DuplicateKey(f"record {record.key} already stored")
        line = encode_line(record)
        if self._fh is None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8", newline="\n")
        self._fh.write(line)
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())
        self._keys.add(record.key)

    def extend(self, records: Iterable[StoreRecord]) -> None:
        for r in records:
            self.append(r)

    def _scan(self, strict: Optional[bool] = None) -> Iterator[StoreRecord]:
        strict = self.strict if strict is None else strict
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8", newline="\n") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.endswith("\n"):
                    # a writer may be mid-line; only whole lines are visible
                    break
                try:
                    yield decode_line(line)
                except ParseError as e:
                    if strict:
                        raise CorruptLine(lineno, e) from e
                    log.warning("skipping corrupt line %d of %s: %s", lineno, self.path, e)

    def query(
        self,
        job_id: Optional[str] = None,
        metric: Optional[PropertyKind] = None,
        time_range: Optional[tuple[int, int]] = None,
        strict: Optional[bool] = None,
    ) -> list[StoreRecord]:
        """Matching records sorted by cycle. ``None`` for a filter means ALL.

        ``time_range`` is inclusive on both ends.
        """
        out = []
        for rec in self._scan(strict):
            if job_id is not None and rec.job_id != job_id:
                continue
            if metric is not None and rec.metric is not metric:
                continue
            if time_range is not None and not time_range[0] <= rec.cycle_ts <= time_range[1]:
                continue
            out.append(rec)
        out.sort(key=lambda r: r.cycle_ts)
        return out

    def record_counts(self) -> dict[str, int]:
        """Number of stored records per job id."""
        counts: dict[str, int] = {}
        for rec in self._scan():
            counts[rec.job_id] = counts.get(rec.job_id, 0) + 1
        return counts


def write_jobs(path, jobs: Sequence[JobRecord]) -> None:
    lines = ["\t".join(JOBS_HEADER)]
    for j in jobs:
        lines.append("\t".join([
            j.job_id, j.owner_group, j.app_tag, str(j.cores),
            ",".join(str(n) for n in j.nodes), str(j.start_ts), str(j.end_ts),
        ]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_jobs(path) -> list[JobRecord]:
    jobs = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != JOBS_HEADER:
            raise ParseError(f"{path}: unexpected header {header}")
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            f = line.rstrip("\n").split("\t")
            if len(f) != len(JOBS_HEADER):
                raise CorruptLine(lineno, ParseError(f"expected {len(JOBS_HEADER)} fields"))
            try:
                jobs.append(JobRecord(f[0], f[1], f[2], int(f[3]),
                                      tuple(int(n) for n in f[4].split(",")),
                                      int(f[5]), int(f[6])))
            except ValueError as e:
                raise CorruptLine(lineno, e) from e
    return jobs
