"""The finite-resource arena: admission, eviction, and both run modes.

Capacity is the only selective force.  When a new organism arrives at a
full arena the oldest live organism is killed (overwrite semantics), so
lineages that mature faster simply out-spawn everyone else; nothing
anywhere inspects loss curves or genomes to decide who lives.

Two interchangeable drivers share the admission policy and event
schema:

* sim mode — single-threaded cooperative scheduler.  The live organism
  with the least accumulated virtual cost (multiply-accumulate units)
  advances by one training epoch at a time.  Identical config + seed
  gives byte-identical event logs.
* process mode — every organism is a real OS process that re-executes
  this program.  Admission is decentralized: each starting organism
  takes an advisory lock on the event log, replays it, evicts the
  oldest live organism itself if needed, and appends its own spawn
  record.  A small supervisor only seeds the ancestor, reaps crashed
  processes, and finalizes the log.
"""

from __future__ import annotations

import json
import os
import signal
import subprocess
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .events import (
    Event,
    EventLog,
    genome_fields,
    read_events,
    replay_state,
    replay_validate,
    ValidationReport,
)
from .genome import MutationScales, ancestor_genome, parse_genome, serialize_genome
from .network import NetDims
from .organism import (
    DEFAULT_CLIP_NORM,
    DEFAULT_MAX_EPOCHS,
    OrganismConfig,
    OrganismRun,
    derive_seed,
    host_command,
    plan_children,
)

KILL_OLDEST = "kill-oldest"
REJECT_NEW = "reject-new"
EVICTION_MODES = (KILL_OLDEST, REJECT_NEW)

SETTINGS_FILE = "arena.json"
LOG_FILE = "events.log"
CLOSED_MARKER = "CLOSED"
ANCESTOR_ID = "0"

# evolve-run default epoch cap: generous against the ancestor's typical
# maturity (a few thousand epochs) while bounding how long a hopeless
# mutant can squat in the arena
EVOLVE_MAX_EPOCHS = 30_000


class ArenaCorrupt(RuntimeError):
    """The event log failed replay validation (or the arena is unusable)."""


class SpawnFailure(RuntimeError):
    """A child process could not be launched."""


def cost_epoch(dims: NetDims, length: int) -> int:
    """Multiply-accumulate estimate for one training epoch.

    Forward+backward for both LSTM layers plus the output projection:
    L * [8*hid*(in_dim+hid) + 8*hid*(2*hid) + 2*hid*out_dim].
    """
    h = dims.hid
    per_step = 8 * h * (dims.in_dim + h) + 8 * h * (2 * h) + 2 * h * dims.out_dim
    return length * per_step


@dataclass(frozen=True)
class ArenaSettings:
    """Arena-wide knobs shared by every organism, persisted as arena.json.

    Organisms launched as separate processes read these instead of
    taking a dozen command-line flags, so a child's behavior is fully
    determined by its genome file, its seed, and the arena directory.
    """

    capacity: int = 16
    budget: int = 500
    sigma_lr: float = 0.002
    int_span: int = 5
    eviction: str = KILL_OLDEST
    max_epochs: int = DEFAULT_MAX_EPOCHS
    eval_every: int = 1
    feedback_mode: str = "continuous"
    clip_norm: float = DEFAULT_CLIP_NORM
    copy_host: bool = False

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.eviction not in EVICTION_MODES:
            raise ValueError(f"eviction must be one of {EVICTION_MODES}")

    def scales(self) -> MutationScales:
        return MutationScales(sigma_lr=self.sigma_lr, int_span=self.int_span)

    def save(self, arena_path: Path) -> None:
        path = Path(arena_path) / SETTINGS_FILE
        path.write_text(json.dumps(asdict(self), sort_keys=True, indent=1) + "\n",
                        encoding="ascii")

    @classmethod
    def load(cls, arena_path: Path) -> "ArenaSettings":
        path = Path(arena_path) / SETTINGS_FILE
        if not path.exists():
            return cls()
        return cls(**json.loads(path.read_text(encoding="ascii")))


@dataclass(frozen=True)
class PopulationConfig:
    """One evolution run: arena settings plus driver-level knobs."""

    arena_path: Path
    capacity: int = 16
    budget: int = 500
    mode: str = "sim"
    sigma_lr: float = 0.002
    int_span: int = 5
    seed: int = 0
    poll_interval: float = 0.2
    eviction: str = KILL_OLDEST
    max_epochs: int = EVOLVE_MAX_EPOCHS
    eval_every: int = 1
    feedback_mode: str = "continuous"
    clip_norm: float = DEFAULT_CLIP_NORM
    copy_host: bool = False
    max_wall: float | None = None  # process mode: emergency shutdown timer

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.mode not in ("sim", "process"):
            raise ValueError("mode must be sim or process")
        if self.eviction not in EVICTION_MODES:
            raise ValueError(f"eviction must be one of {EVICTION_MODES}")

    def settings(self) -> ArenaSettings:
        return ArenaSettings(
            capacity=self.capacity, budget=self.budget, sigma_lr=self.sigma_lr,
            int_span=self.int_span, eviction=self.eviction,
            max_epochs=self.max_epochs, eval_every=self.eval_every,
            feedback_mode=self.feedback_mode, clip_norm=self.clip_norm,
            copy_host=self.copy_host)


@dataclass(frozen=True)
class RegistryEntry:
    organism_id: str
    stamp: int  # admission order (spawn seq)
    handle: object | None = None  # process pid or sim task; never read by policy


class Registry:
    """Live organisms in strict admission order."""

    def __init__(self) -> None:
        self._entries: list[RegistryEntry] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, organism_id: str) -> bool:
        return any(e.organism_id == organism_id for e in self._entries)

    def ids(self) -> list[str]:
        return [e.organism_id for e in self._entries]

    def add(self, organism_id: str, stamp: int, handle: object | None = None) -> None:
        if organism_id in self:
            raise ValueError(f"{organism_id} is already live")
        if self._entries and stamp <= self._entries[-1].stamp:
            raise ValueError("admission stamps must increase")
        self._entries.append(RegistryEntry(organism_id, stamp, handle))

    def remove(self, organism_id: str) -> RegistryEntry:
        for i, e in enumerate(self._entries):
            if e.organism_id == organism_id:
                return self._entries.pop(i)
        raise KeyError(organism_id)

    def oldest(self) -> RegistryEntry | None:
        return self._entries[0] if self._entries else None


@dataclass(frozen=True)
class AdmitDecision:
    action: str  # admit | admit-evict | reject
    evict_id: str | None = None


ADMIT = AdmitDecision("admit")
REJECT = AdmitDecision("reject")


def admit(registry: Registry, new_id: str, capacity: int,
          closed: bool = False, eviction: str = KILL_OLDEST) -> AdmitDecision:
    """Admission policy: a pure function of live-set size and admission order.

    No loss value, genome, or any other organism property enters the
    decision — that is the whole point of selection without a fitness
    function.  `closed` rejects everything (arena shutting down).
    """
    if new_id in registry:
        raise ValueError(f"{new_id} is already live")
    if closed:
        return REJECT
    if len(registry) < capacity:
        return ADMIT
    if eviction == REJECT_NEW:
        return REJECT
    return AdmitDecision("admit-evict", registry.oldest().organism_id)


def prepare_arena(cfg: PopulationConfig) -> Path:
    """Create/refuse the arena directory, write settings, seed g0.org."""
    arena = Path(cfg.arena_path)
    arena.mkdir(parents=True, exist_ok=True)
    log_path = arena / LOG_FILE
    if log_path.exists() and log_path.stat().st_size > 0:
        raise ArenaCorrupt(f"{log_path} already contains events; use a fresh arena")
    marker = arena / CLOSED_MARKER
    if marker.exists():
        marker.unlink()
    cfg.settings().save(arena)
    g0 = arena / f"g{ANCESTOR_ID}.org"
    if g0.exists():
        parse_genome(g0.read_text(encoding="ascii"))  # must be legal
    else:
        g0.write_text(serialize_genome(ancestor_genome()), encoding="ascii")
    return arena


def _organism_cfg(genome, organism_id: str, parent_id: str | None, seed: int,
                  settings: ArenaSettings, arena: Path) -> OrganismConfig:
    return OrganismConfig.from_genome(
        genome, organism_id=organism_id, parent_id=parent_id, seed=seed,
        max_epochs=settings.max_epochs, eval_every=settings.eval_every,
        feedback_mode=settings.feedback_mode, clip_norm=settings.clip_norm,
        arena_path=arena)


# --------------------------------------------------------------------------
# sim mode

class _SimTask:
    """One live organism inside the virtual-time scheduler."""

    def __init__(self, cfg: OrganismConfig) -> None:
        self.cfg = cfg
        self.run = OrganismRun(cfg)
        self.cost_per_epoch = cost_epoch(cfg.dims, cfg.length)
        self.vcost = 0

    def step(self) -> str:
        status = self.run.step()
        self.vcost += self.cost_per_epoch
        return status


def sim_run(cfg: PopulationConfig) -> ValidationReport:
    """Deterministic virtual-time evolution run; returns the replay report.

    Scheduling: always advance the live organism with the smallest
    accumulated virtual cost (ties broken by organism id), one epoch at
    a time.  Everything else — admission, eviction, replication — is
    shared with process mode.
    """
    arena = prepare_arena(cfg)
    settings = cfg.settings()
    log = EventLog(arena / LOG_FILE)
    registry = Registry()
    tasks: dict[str, _SimTask] = {}
    spawned = 0
    closed = False

    def emit(kind: str, **fields) -> None:
        log.append(Event(seq=log.next_seq(), kind=kind, **fields))

    def try_spawn(organism_id: str, parent_id: str | None, genome, seed: int) -> bool:
        nonlocal spawned, closed
        decision = admit(registry, organism_id, settings.capacity,
                         closed=closed, eviction=settings.eviction)
        if decision.action == "reject":
            return False
        if decision.action == "admit-evict":
            victim = tasks.pop(decision.evict_id)
            registry.remove(decision.evict_id)
            emit("eviction", id=decision.evict_id, by=organism_id,
                 reason="capacity", epochs=victim.run.epochs, vcost=victim.vcost,
                 **genome_fields(victim.cfg.genome))
        emit("spawn", id=organism_id, parent=parent_id, **genome_fields(genome))
        registry.add(organism_id, stamp=log.last_seq)
        task = _SimTask(_organism_cfg(genome, organism_id, parent_id, seed,
                                      settings, arena))
        tasks[organism_id] = task
        spawned += 1
        if spawned >= settings.budget:
            closed = True
        return True

    ancestor = parse_genome((arena / f"g{ANCESTOR_ID}.org").read_text(encoding="ascii"))
    try_spawn(ANCESTOR_ID, None, ancestor, cfg.seed)

    # the budget ends the experiment at the Mth spawn: survivors stay
    # unresolved (alive at shutdown), mirroring process mode's kill sweep
    while tasks and not closed:
        oid = min(tasks, key=lambda k: (tasks[k].vcost, k))
        task = tasks[oid]
        status = task.step()
        if status == "alive":
            continue
        if status == "sterile":
            emit("sterile", id=oid, epochs=task.run.epochs, vcost=task.vcost,
                 **genome_fields(task.cfg.genome))
            registry.remove(oid)
            del tasks[oid]
            continue
        # matured: retire the parent, then register its two children
        mut_rng = np.random.default_rng(derive_seed(task.cfg.seed, "mutation"))
        specs = plan_children(task.cfg, task.run.matured_text, mut_rng,
                              settings.scales())
        emit("maturity", id=oid, epochs=task.run.epochs, vcost=task.vcost,
             **genome_fields(task.cfg.genome))
        emit("replication", id=oid, children=tuple(s.child_id for s in specs),
             epochs=task.run.epochs, vcost=task.vcost,
             **genome_fields(task.cfg.genome))
        registry.remove(oid)
        del tasks[oid]
        for spec in specs:
            if spec.path is not None:
                spec.path.write_text(serialize_genome(spec.genome), encoding="ascii")
            try_spawn(spec.child_id, oid, spec.genome, spec.seed)

    if closed:
        emit("shutdown", reason="budget", spawned=spawned)
    else:
        emit("extinction")
        emit("shutdown", reason="extinction", spawned=spawned)
    (arena / CLOSED_MARKER).touch()

    report = replay_validate(read_events(arena / LOG_FILE), capacity=settings.capacity)
    if not report.ok:
        raise ArenaCorrupt(f"sim log failed validation: {report.first_violation}")
    return report


# --------------------------------------------------------------------------
# process mode

def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


class ProcessArena:
    """Organism-side arena interface: registration, retirement, replication.

    All mutations of the shared log happen under an exclusive flock on
    the log file, so replaying the log is always a consistent view of
    the population.  Eviction is performed by the organism being
    admitted: it kills the oldest live process and appends the eviction
    record before its own spawn record, inside one critical section.
    """

    def __init__(self, arena_path: Path) -> None:
        self.path = Path(arena_path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.settings = ArenaSettings.load(self.path)
        self.log = EventLog(self.path / LOG_FILE)

    def closed(self) -> bool:
        return (self.path / CLOSED_MARKER).exists()

    def _registry_from_log(self, events) -> tuple[Registry, dict[str, Event]]:
        st = replay_state(events)
        registry = Registry()
        for oid, spawn in st.live.items():
            registry.add(oid, stamp=spawn.seq, handle=spawn.pid)
        return registry, st.live

    def register(self, cfg: OrganismConfig, pid: int) -> bool:
        """Self-admission; returns False when the arena turned us away."""
        with self.log.locked():
            events = read_events(self.log.path)
            st = replay_state(events)
            shut = self.closed() or st.shutdown or st.spawned >= self.settings.budget
            registry, live = self._registry_from_log(events)
            decision = admit(registry, cfg.organism_id, self.settings.capacity,
                             closed=shut, eviction=self.settings.eviction)
            if decision.action == "reject":
                return False
            if decision.action == "admit-evict":
                victim = live[decision.evict_id]
                if victim.pid is not None:
                    try:
                        os.kill(victim.pid, signal.SIGKILL)
                    except (ProcessLookupError, PermissionError):
                        pass
                self.log.append(Event(
                    seq=self.log.next_seq(), kind="eviction", id=victim.id,
                    by=cfg.organism_id, reason="capacity", pid=victim.pid,
                    lr=victim.lr, hid=victim.hid, noi=victim.noi, aux=victim.aux))
            self.log.append(Event(
                seq=self.log.next_seq(), kind="spawn", id=cfg.organism_id,
                parent=cfg.parent_id, pid=pid, **genome_fields(cfg.genome)))
        return True

    def record_sterile(self, cfg: OrganismConfig, epochs: int, wall: float) -> None:
        vcost = epochs * cost_epoch(cfg.dims, cfg.length)
        with self.log.locked():
            self.log.append(Event(
                seq=self.log.next_seq(), kind="sterile", id=cfg.organism_id,
                epochs=epochs, vcost=vcost, wall=round(wall, 3),
                **genome_fields(cfg.genome)))

    def finalize_replication(self, cfg: OrganismConfig, matured_text: str,
                             epochs: int, wall: float,
                             mut_rng: np.random.Generator,
                             use_host_copy: bool = False) -> list:
        """Record maturity + replication, write child files, launch children.

        One critical section covers all of it, so an organism that was
        evicted mid-training can never have left offspring files behind,
        and the log never shows a maturity without its replication.
        """
        vcost = epochs * cost_epoch(cfg.dims, cfg.length)
        with self.log.locked():
            events = read_events(self.log.path)
            st = replay_state(events)
            specs = plan_children(cfg, matured_text, mut_rng, self.settings.scales())
            self.log.append(Event(
                seq=self.log.next_seq(), kind="maturity", id=cfg.organism_id,
                epochs=epochs, vcost=vcost, wall=round(wall, 3),
                **genome_fields(cfg.genome)))
            self.log.append(Event(
                seq=self.log.next_seq(), kind="replication", id=cfg.organism_id,
                children=tuple(s.child_id for s in specs),
                epochs=epochs, vcost=vcost, **genome_fields(cfg.genome)))
            launching = not (self.closed() or st.shutdown
                             or st.spawned >= self.settings.budget)
            if launching:
                for spec in specs:
                    spec.path.write_text(serialize_genome(spec.genome),
                                         encoding="ascii")
                for spec in specs:
                    self._launch(spec, use_host_copy)
        return specs

    def _launch(self, spec, use_host_copy: bool) -> None:
        cmd = host_command(self.path, use_host_copy) + [
            "run-organism",
            "--genome", str(spec.path),
            "--arena", str(self.path),
            "--seed", str(spec.seed),
        ]
        stderr = subprocess.DEVNULL
        if os.environ.get("ORGLAB_CHILD_STDERR"):
            stderr = open(self.path / f"child-{spec.child_id}.err", "wb")
        try:
            subprocess.Popen(
                cmd, stdin=subprocess.DEVNULL, stdout=subprocess.DEVNULL,
                stderr=stderr, start_new_session=True)
        except OSError as exc:
            raise SpawnFailure(f"could not launch {spec.child_id}: {exc}") from exc
        finally:
            if stderr is not subprocess.DEVNULL:
                stderr.close()


def _warm_kernels() -> None:
    """Compile the jitted kernels once so child processes hit a warm cache."""
    from .genome import Genome
    genome = Genome(lr=0.01, hid=4, noi=1, aux=1)
    cfg = OrganismConfig.from_genome(genome, organism_id="0", seed=0, max_epochs=1)
    OrganismRun(cfg).step()


def supervisor_run(cfg: PopulationConfig) -> ValidationReport:
    """Process-mode driver: seed the ancestor, watch, finalize.

    The supervisor never makes admission decisions — organisms admit
    themselves under the log lock.  It only launches the first organism,
    reaps processes that died without writing a terminal event, declares
    extinction, and closes the arena when the spawn budget is reached.
    """
    arena = prepare_arena(cfg)
    settings = cfg.settings()
    log = EventLog(arena / LOG_FILE)
    _warm_kernels()

    g0 = arena / f"g{ANCESTOR_ID}.org"
    cmd = host_command(arena, settings.copy_host) + [
        "run-organism", "--genome", str(g0), "--arena", str(arena),
        "--seed", str(cfg.seed),
    ]
    try:
        ancestor_proc = subprocess.Popen(
            cmd, stdin=subprocess.DEVNULL, stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL, start_new_session=True)
    except OSError as exc:
        raise SpawnFailure(f"could not launch ancestor: {exc}") from exc

    started = time.monotonic()
    last_growth = started
    last_len = 0
    extinction_grace = max(5 * cfg.poll_interval, 3.0)
    reason = None
    finalized = False

    while reason is None:
        time.sleep(cfg.poll_interval)
        ancestor_proc.poll()
        events = read_events(log.path)
        if len(events) != last_len:
            last_len = len(events)
            last_growth = time.monotonic()
        st = replay_state(events)

        if st.spawned >= settings.budget:
            reason = "budget"
            break
        if cfg.max_wall is not None and time.monotonic() - started > cfg.max_wall:
            reason = "timeout"
            break

        # reap organisms that died without a terminal event (crashes);
        # verify under the lock so we never race a clean exit
        dead = [oid for oid, sp in st.live.items()
                if sp.pid is not None and not _pid_alive(sp.pid)]
        if dead:
            with log.locked():
                events = read_events(log.path)
                st = replay_state(events)
                for oid in dead:
                    sp = st.live.get(oid)
                    if sp is None or (sp.pid is not None and _pid_alive(sp.pid)):
                        continue
                    log.append(Event(
                        seq=log.next_seq(), kind="eviction", id=oid,
                        by="supervisor", reason="reaped", pid=sp.pid,
                        lr=sp.lr, hid=sp.hid, noi=sp.noi, aux=sp.aux))
            continue

        if not st.live and time.monotonic() - last_growth > extinction_grace:
            # confirm under the lock: a child may register any moment
            with log.locked():
                events = read_events(log.path)
                st = replay_state(events)
                if st.spawned >= settings.budget:
                    reason = "budget"
                elif not st.live:
                    (arena / CLOSED_MARKER).touch()
                    log.append(Event(seq=log.next_seq(), kind="extinction"))
                    log.append(Event(seq=log.next_seq(), kind="shutdown",
                                     reason="extinction", spawned=st.spawned))
                    reason = "extinction"
                    finalized = True
                else:
                    last_growth = time.monotonic()

    if not finalized:
        with log.locked():
            (arena / CLOSED_MARKER).touch()
            events = read_events(log.path)
            st = replay_state(events)
            for oid, sp in st.live.items():
                if sp.pid is not None:
                    try:
                        os.kill(sp.pid, signal.SIGKILL)
                    except (ProcessLookupError, PermissionError):
                        pass
            log.append(Event(seq=log.next_seq(), kind="shutdown", reason=reason,
                             spawned=st.spawned))
    if ancestor_proc.poll() is None:
        try:
            ancestor_proc.kill()
        except OSError:
            pass
    try:
        ancestor_proc.wait(timeout=10)
    except subprocess.TimeoutExpired:
        pass

    report = replay_validate(read_events(log.path), capacity=settings.capacity)
    if not report.ok:
        raise ArenaCorrupt(f"process log failed validation: {report.first_violation}")
    return report


def evolve(cfg: PopulationConfig) -> ValidationReport:
    """Run one evolution by mode."""
    if cfg.mode == "sim":
        return sim_run(cfg)
    return supervisor_run(cfg)
