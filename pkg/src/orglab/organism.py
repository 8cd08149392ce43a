"""The organism lifecycle: train until the network regenerates the genome
text byte-exactly, then write two mutated copies and launch them.

An organism is defined entirely by its 45-character genome text.  It
builds a fresh network from the genome's dimensions, trains with the
genome's learning rate until one greedy rollout under live noise equals
the genome text, and then replicates: the *generated* string (not the
stored file) is parsed, mutated twice, written beside the arena log,
and executed.  Organisms that never reproduce the text within the epoch
cap die sterile and produce nothing.
"""

from __future__ import annotations

import hashlib
import os
import re
import shutil
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernel import TrainSession
from .genome import (
    ALPHABET,
    GENOME_TEXT_LEN,
    Genome,
    MutationScales,
    ParseError,
    mutate_genome,
    parse_genome,
    serialize_genome,
)
from .network import NetDims, NetworkParams, init_params

DEFAULT_MAX_EPOCHS = 200_000
DEFAULT_CLIP_NORM = 5.0

EXIT_MATURED = 0
EXIT_STERILE = 2
EXIT_CONFIG = 3
EXIT_DENIED = 4

_GENOME_FILE_RE = re.compile(r"^g(.+)\.org$")


class Sterile(Exception):
    """Lifecycle ended without maturity (epoch cap hit or training diverged)."""

    def __init__(self, epochs: int, diverged: bool = False) -> None:
        self.epochs = epochs
        self.diverged = diverged
        why = "training diverged" if diverged else "epoch cap reached"
        super().__init__(f"sterile after {epochs} epochs ({why})")


@dataclass(frozen=True)
class OrganismConfig:
    """Everything needed to run one organism deterministically."""

    genome: Genome
    genome_text: str
    organism_id: str
    parent_id: str | None
    seed: int
    max_epochs: int = DEFAULT_MAX_EPOCHS
    eval_every: int = 1
    feedback_mode: str = "continuous"
    clip_norm: float = DEFAULT_CLIP_NORM
    arena_path: Path | None = None

    def __post_init__(self) -> None:
        if self.genome_text != serialize_genome(self.genome):
            raise ValueError("genome_text is not the canonical serialization")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")

    @classmethod
    def from_genome(cls, genome: Genome, organism_id: str = "0",
                    parent_id: str | None = None, seed: int = 0,
                    **kwargs) -> "OrganismConfig":
        return cls(genome=genome, genome_text=serialize_genome(genome),
                   organism_id=organism_id, parent_id=parent_id, seed=seed,
                   **kwargs)

    @property
    def dims(self) -> NetDims:
        return NetDims(chars=ALPHABET.size, aux=self.genome.aux,
                       noi=self.genome.noi, hid=self.genome.hid)

    @property
    def length(self) -> int:
        return GENOME_TEXT_LEN


@dataclass
class OrganismOutcome:
    """Terminal record of one lifecycle."""

    status: str  # matured | sterile | killed
    epochs: int
    wall_seconds: float
    virtual_cost: int
    children: list = field(default_factory=list)  # ChildSpec entries

    def __post_init__(self) -> None:
        if self.status == "matured" and len(self.children) != 2:
            raise ValueError("a matured organism must have exactly 2 children")
        if self.status != "matured" and self.children:
            raise ValueError(f"{self.status} organism cannot have children")


def derive_seed(seed: int, label: str) -> int:
    """Stable 64-bit substream seed for a named purpose."""
    digest = hashlib.blake2b(f"{seed}:{label}".encode("ascii"), digest_size=8)
    return int.from_bytes(digest.digest(), "big")


def child_seed(parent_seed: int, index: int, child_id: str) -> int:
    return derive_seed(parent_seed, f"child:{index}:{child_id}")


class OrganismRun:
    """Stepwise lifecycle driver: one training epoch per step() call.

    Both the blocking run_to_maturity loop and the simulation scheduler
    advance organisms through this class, so the two modes share one
    definition of an epoch, of maturity, and of sterility.
    """

    def __init__(self, cfg: OrganismConfig) -> None:
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        params = init_params(cfg.dims, self.rng)
        self.session = TrainSession(params, cfg.dims, cfg.feedback_mode)
        self.target = ALPHABET.encode(cfg.genome_text)
        self.epochs = 0
        self.status = "alive"
        self.last_loss = float("nan")
        self.matured_text: str | None = None
        self.diverged = False

    def step(self) -> str:
        """Advance one epoch; returns the status afterwards."""
        if self.status != "alive":
            return self.status
        cfg = self.cfg
        self.epochs += 1
        loss, _ = self.session.train_epoch(
            self.rng, cfg.length, self.target, cfg.genome.lr, cfg.clip_norm)
        self.last_loss = loss
        if not np.isfinite(loss):
            self.status = "sterile"
            self.diverged = True
            return self.status
        if self.epochs % cfg.eval_every == 0:
            generated = self.session.eval_chars(self.rng, cfg.length)
            if np.array_equal(generated, self.target):
                self.status = "matured"
                self.matured_text = ALPHABET.decode(generated)
                return self.status
        if self.epochs >= cfg.max_epochs:
            self.status = "sterile"
        return self.status

    def params(self) -> NetworkParams:
        return self.session.params()


def run_to_maturity(cfg: OrganismConfig) -> tuple[NetworkParams, int, str]:
    """Train until one greedy rollout equals the genome text exactly.

    Returns (trained parameters, epochs used, the generated string).
    Raises Sterile when the epoch cap passes without a byte-exact match
    or when training diverges to a non-finite loss.
    """
    run = OrganismRun(cfg)
    while run.step() == "alive":
        pass
    if run.status != "matured":
        raise Sterile(run.epochs, diverged=run.diverged)
    return run.params(), run.epochs, run.matured_text


@dataclass(frozen=True)
class ChildSpec:
    """One planned offspring: identity, genome, RNG seed, genome file path."""

    child_id: str
    genome: Genome
    seed: int
    path: Path | None


def plan_children(cfg: OrganismConfig, matured_text: str,
                  rng: np.random.Generator,
                  scales: MutationScales) -> list[ChildSpec]:
    """Parse the generated string and derive two mutated offspring.

    Replication writes what the network produced, so the text must equal
    the stored genome (anything else means the maturity check lied).
    """
    if matured_text != cfg.genome_text:
        raise AssertionError("matured text differs from genome text; refusing to replicate")
    parent = parse_genome(matured_text)
    specs = []
    for i in range(2):
        cid = f"{cfg.organism_id}.{i}"
        genome = mutate_genome(parent, rng, scales)
        path = None
        if cfg.arena_path is not None:
            path = Path(cfg.arena_path) / f"g{cid}.org"
        specs.append(ChildSpec(child_id=cid, genome=genome,
                               seed=child_seed(cfg.seed, i, cid), path=path))
    return specs


def emit_offspring(cfg: OrganismConfig, matured_text: str,
                   rng: np.random.Generator, scales: MutationScales,
                   spawn=None) -> list[ChildSpec]:
    """Write both child genome files, then hand each to `spawn` if given."""
    specs = plan_children(cfg, matured_text, rng, scales)
    for spec in specs:
        if spec.path is not None:
            spec.path.write_text(serialize_genome(spec.genome), encoding="ascii")
    if spawn is not None:
        for spec in specs:
            spawn(spec)
    return specs


def copy_host(target_path: str | Path) -> Path:
    """Copy the running interpreter image next to the genomes.

    Children are then launched from the copy, so replication does not
    depend on the original binary staying in place.  The copy is created
    once per arena via an atomic rename.
    """
    target = Path(target_path)
    if not target.exists():
        tmp = target.with_name(target.name + f".tmp{os.getpid()}")
        shutil.copy2(sys.executable, tmp)
        os.replace(tmp, target)
    return target


def host_command(arena_path: Path | None, use_host_copy: bool) -> list[str]:
    """Argv prefix that re-executes this program for a child organism."""
    if use_host_copy and arena_path is not None:
        host = copy_host(Path(arena_path) / "host.bin")
        return [str(host), "-m", "orglab"]
    return [sys.executable, "-m", "orglab"]


def organism_id_from_path(genome_path: str | Path) -> str:
    """Arena files are named g<id>.org; anything else runs as a fresh ancestor."""
    m = _GENOME_FILE_RE.match(Path(genome_path).name)
    return m.group(1) if m else "0"


def parent_id_of(organism_id: str) -> str | None:
    head, dot, _ = organism_id.rpartition(".")
    return head if dot else None


def organism_main(genome_path: str | Path, arena_path: str | Path, seed: int,
                  max_epochs: int | None = None, eval_every: int | None = None,
                  feedback_mode: str | None = None, clip_norm: float | None = None,
                  use_host_copy: bool | None = None) -> int:
    """Full process-mode lifecycle; returns the process exit code.

    Registers in the arena log (evicting the oldest live organism when
    at capacity), trains, and on maturity writes + launches two mutated
    children before exiting.  Exit codes: 0 matured and replicated,
    2 sterile, 3 unusable genome/config, 4 spawn denied (arena closed).
    """
    from .arena import ProcessArena  # function-level: arena drives organisms too

    genome_path = Path(genome_path)
    try:
        text = genome_path.read_text(encoding="ascii")
        genome = parse_genome(text)
    except (OSError, UnicodeDecodeError, ParseError) as exc:
        print(f"run-organism: unusable genome {genome_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    arena = ProcessArena(Path(arena_path))
    settings = arena.settings
    oid = organism_id_from_path(genome_path)
    try:
        cfg = OrganismConfig(
            genome=genome,
            genome_text=text,
            organism_id=oid,
            parent_id=parent_id_of(oid),
            seed=seed,
            max_epochs=settings.max_epochs if max_epochs is None else max_epochs,
            eval_every=settings.eval_every if eval_every is None else eval_every,
            feedback_mode=settings.feedback_mode if feedback_mode is None else feedback_mode,
            clip_norm=settings.clip_norm if clip_norm is None else clip_norm,
            arena_path=Path(arena_path),
        )
    except ValueError as exc:
        print(f"run-organism: bad config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if not arena.register(cfg, pid=os.getpid()):
        return EXIT_DENIED

    started = time.monotonic()
    try:
        _, epochs, matured_text = run_to_maturity(cfg)
    except Sterile as sterile:
        arena.record_sterile(cfg, sterile.epochs, time.monotonic() - started)
        return EXIT_STERILE

    wall = time.monotonic() - started
    mut_rng = np.random.default_rng(derive_seed(cfg.seed, "mutation"))
    host_copy = settings.copy_host if use_host_copy is None else use_host_copy
    arena.finalize_replication(cfg, matured_text, epochs, wall, mut_rng,
                               use_host_copy=host_copy)
    return EXIT_MATURED
