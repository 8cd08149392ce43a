"""Append-only arena event log: schema, atomic appends, replay validation.

One JSON object per line, sequence numbers contiguous from 1.  Appends
are a single write() on an O_APPEND descriptor, so concurrent writers
never interleave within a line; writers that need read-modify-append
(sequence numbering, admission decisions) serialize on an advisory
flock over the log file itself.

Replay validation reconstructs the live population from the log alone
and checks the arena's safety invariants: capacity is never exceeded,
lineage forms a tree rooted at the ancestor, every organism's lifecycle
is well ordered, and the terminal accounting balances.
"""

from __future__ import annotations

import fcntl
import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

KINDS = ("spawn", "maturity", "replication", "eviction", "sterile",
         "extinction", "shutdown")

# kinds that refer to a single organism and must echo its genome
ORGANISM_KINDS = ("spawn", "maturity", "replication", "eviction", "sterile")

GENOME_KEYS = ("lr", "hid", "noi", "aux")


class SeqViolation(ValueError):
    """An append that would break sequence contiguity."""


class LogCorrupt(ValueError):
    """The log file itself is unreadable as line-delimited JSON."""


@dataclass(frozen=True)
class Event:
    """One log record.  Fields not meaningful for a kind stay None.

    `vcost` is the deterministic multiply-accumulate tally; `wall` is
    wall-clock seconds and appears only in process mode, keeping sim
    logs byte-stable.
    """

    seq: int
    kind: str
    id: str | None = None
    parent: str | None = None
    lr: float | None = None
    hid: int | None = None
    noi: int | None = None
    aux: int | None = None
    epochs: int | None = None
    vcost: int | None = None
    wall: float | None = None
    pid: int | None = None
    children: tuple[str, ...] | None = None
    by: str | None = None      # eviction: id of the organism (or supervisor) that evicted
    reason: str | None = None  # eviction: capacity|reaped; shutdown: budget|extinction
    spawned: int | None = None  # shutdown: total spawn count observed

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.seq < 1:
            raise ValueError(f"seq must be >= 1, got {self.seq}")

    def to_line(self) -> str:
        rec = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            rec[f.name] = list(v) if isinstance(v, tuple) else v
        return json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_line(cls, line: str) -> "Event":
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogCorrupt(f"bad JSON line: {line!r}") from exc
        if not isinstance(rec, dict):
            raise LogCorrupt(f"event line is not an object: {line!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(rec) - known
        if unknown:
            raise LogCorrupt(f"unknown event fields {sorted(unknown)}")
        if "children" in rec:
            rec["children"] = tuple(rec["children"])
        try:
            return cls(**rec)
        except (TypeError, ValueError) as exc:
            raise LogCorrupt(f"malformed event: {line!r}") from exc


def genome_fields(genome) -> dict:
    """The echoed-genome portion of an organism event."""
    return {"lr": genome.lr, "hid": genome.hid, "noi": genome.noi, "aux": genome.aux}


class EventLog:
    """Appender with sequence enforcement over a JSONL file.

    The in-memory last-seq cache is authoritative for a single-writer
    (sim mode).  Multi-process writers must wrap read-modify-append
    cycles in `locked()`, which re-reads the tail so the cache reflects
    other writers' appends.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._last_seq = self._scan_last_seq()

    def _scan_last_seq(self) -> int:
        if not self.path.exists():
            return 0
        last = 0
        with open(self.path, "r", encoding="ascii") as fh:
            for line in fh:
                if line.strip():
                    last = Event.from_line(line).seq
        return last

    @property
    def last_seq(self) -> int:
        return self._last_seq

    def next_seq(self) -> int:
        return self._last_seq + 1

    def refresh(self) -> None:
        self._last_seq = self._scan_last_seq()

    def append(self, event: Event) -> None:
        if event.seq != self._last_seq + 1:
            raise SeqViolation(
                f"append seq {event.seq}, expected {self._last_seq + 1}")
        data = event.to_line().encode("ascii")
        fd = os.open(self.path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
        try:
            os.write(fd, data)
        finally:
            os.close(fd)
        self._last_seq = event.seq

    @contextmanager
    def locked(self):
        """Exclusive advisory lock over the log; refreshes the seq cache."""
        fd = os.open(self.path, os.O_RDWR | os.O_CREAT, 0o644)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX)
            self.refresh()
            yield self
        finally:
            fcntl.flock(fd, fcntl.LOCK_UN)
            os.close(fd)


def read_events(path: str | Path) -> list[Event]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            if line.strip():
                out.append(Event.from_line(line))
    return out


@dataclass
class ReplayState:
    """Live population reconstructed by walking a log prefix."""

    live: dict[str, Event] = field(default_factory=dict)  # id -> spawn event
    spawned: int = 0
    shutdown: bool = False

    def oldest(self) -> str | None:
        for oid in self.live:  # dict preserves admission order
            return oid
        return None


def replay_state(events: list[Event]) -> ReplayState:
    """Fold a log into its final live set, ignoring validity questions."""
    st = ReplayState()
    for e in events:
        if e.kind == "spawn":
            st.live[e.id] = e
            st.spawned += 1
        elif e.kind in ("replication", "sterile", "eviction"):
            st.live.pop(e.id, None)
        elif e.kind == "shutdown":
            st.shutdown = True
    return st


@dataclass
class ValidationReport:
    ok: bool
    violations: list[str]
    spawned: int = 0
    matured: int = 0
    replicated: int = 0
    evicted: int = 0
    sterile: int = 0
    alive_at_end: tuple[str, ...] = ()

    @property
    def first_violation(self) -> str | None:
        return self.violations[0] if self.violations else None


def replay_validate(events: list[Event], capacity: int | None = None) -> ValidationReport:
    """Check arena invariants over a full log; never mutates anything.

    capacity=None skips the population-bound check (for logs whose
    arena configuration is unknown); all structural checks still run.
    """
    bad: list[str] = []
    live: dict[str, Event] = {}
    seen: set[str] = set()
    matured: set[str] = set()
    replicated = evicted = sterile = spawned = 0
    ancestor: str | None = None
    replication_children: dict[str, tuple[str, ...]] = {}
    shutdown_seen = False

    def flag(e: Event, msg: str) -> None:
        bad.append(f"seq {e.seq}: {msg}")

    for i, e in enumerate(events):
        if e.seq != i + 1:
            flag(e, f"sequence break: expected {i + 1}")
        if shutdown_seen:
            flag(e, "event after shutdown")
        if e.kind in ORGANISM_KINDS:
            if e.id is None:
                flag(e, f"{e.kind} without organism id")
                continue
            if any(getattr(e, k) is None for k in GENOME_KEYS):
                flag(e, f"{e.kind} without genome echo")
            elif e.id in seen:
                spawn = next((ev for ev in events[:i] if ev.kind == "spawn" and ev.id == e.id), None)
                if spawn is not None and any(
                        getattr(e, k) != getattr(spawn, k) for k in GENOME_KEYS):
                    flag(e, "genome echo differs from spawn record")

        if e.kind == "spawn":
            if e.id in seen:
                flag(e, f"duplicate organism id {e.id}")
            seen.add(e.id)
            spawned += 1
            if e.parent is None:
                if ancestor is not None:
                    flag(e, "second parentless spawn (one ancestor allowed)")
                ancestor = e.id
            else:
                if e.parent not in replication_children:
                    flag(e, f"spawn of {e.id} precedes parent {e.parent} replication")
                elif e.id not in replication_children[e.parent]:
                    flag(e, f"{e.id} not announced by parent {e.parent}")
                if not e.id.startswith(e.parent + "."):
                    flag(e, f"id {e.id} does not extend parent id {e.parent}")
            live[e.id] = e
        elif e.kind == "maturity":
            if e.id not in live:
                flag(e, f"maturity of non-live organism {e.id}")
            if e.id in matured:
                flag(e, f"second maturity for {e.id}")
            matured.add(e.id)
            if e.epochs is None or e.vcost is None:
                flag(e, "maturity without epochs/vcost payload")
        elif e.kind == "replication":
            if e.id not in live:
                flag(e, f"replication of non-live organism {e.id}")
            if e.id not in matured:
                flag(e, f"replication of {e.id} before maturity")
            if not e.children:
                flag(e, "replication without children announcement")
            else:
                replication_children[e.id] = e.children
            live.pop(e.id, None)
            replicated += 1
        elif e.kind == "sterile":
            if e.id not in live:
                flag(e, f"sterile event for non-live organism {e.id}")
            if e.id in matured:
                flag(e, f"sterile event for matured organism {e.id}")
            live.pop(e.id, None)
            sterile += 1
        elif e.kind == "eviction":
            if e.id not in live:
                flag(e, f"eviction of non-live organism {e.id}")
            elif e.reason != "reaped":
                oldest = next(iter(live))
                if e.id != oldest:
                    flag(e, f"evicted {e.id} but oldest live is {oldest}")
            live.pop(e.id, None)
            evicted += 1
        elif e.kind == "extinction":
            if live:
                flag(e, f"extinction with live organisms {sorted(live)}")
        elif e.kind == "shutdown":
            shutdown_seen = True

        if capacity is not None and len(live) > capacity:
            flag(e, f"population {len(live)} exceeds capacity {capacity}")

    if len(matured) != replicated:
        bad.append(f"end: {len(matured)} maturities but {replicated} replications")
    balance = evicted + sterile + replicated + len(live)
    if balance != spawned:
        bad.append(
            f"end: conservation broken: evicted {evicted} + sterile {sterile}"
            f" + replicated {replicated} + alive {len(live)} != spawned {spawned}")

    return ValidationReport(
        ok=not bad,
        violations=bad,
        spawned=spawned,
        matured=len(matured),
        replicated=replicated,
        evicted=evicted,
        sterile=sterile,
        alive_at_end=tuple(live),
    )
