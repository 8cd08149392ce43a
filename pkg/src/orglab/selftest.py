"""Built-in check suites: a quick field diagnostic, not the test suite.

Four independent suites cover the layers most likely to rot in a new
environment: the genome text format, the optimizer arithmetic, the
admission policy, and log replay against a bundled fixture.  Each
prints one PASS/FAIL line; the process exits nonzero if anything fails.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .arena import Registry, admit, KILL_OLDEST, REJECT_NEW
from .events import Event, replay_validate
from .genome import Genome, MutationScales, mutate_genome, parse_genome, serialize_genome
from .network import ADAM_EPS, AdamState, NetDims, NetworkParams, adam_step

FIXTURE_LOG = "data/fixture_events.log"
FIXTURE_META = "data/fixture_meta.json"


def _suite_genome_roundtrip(seed: int) -> str | None:
    rng = np.random.default_rng(seed)
    scales = MutationScales()
    for i in range(300):
        genome = Genome(
            lr=float(f"{rng.uniform(1e-6, 0.999999):.6f}"),
            hid=int(rng.integers(4, 1000)),
            noi=int(rng.integers(0, 65)),
            aux=int(rng.integers(0, 65)),
        )
        text = serialize_genome(genome)
        if len(text) != 45:
            return f"genome #{i} serialized to {len(text)} chars"
        if parse_genome(text) != genome:
            return f"genome #{i} failed round-trip: {text!r}"
        child = mutate_genome(genome, rng, scales)
        if len(serialize_genome(child)) != 45:
            return f"mutant of #{i} produced an illegal text"
    return None


def _suite_adam_scalar(seed: int) -> str | None:
    # from zero moments, a unit gradient must move every parameter by
    # exactly -lr * 1/(1 + eps): m-hat and v-hat are both exactly 1
    dims = NetDims(chars=3, aux=1, noi=1, hid=2)
    params = NetworkParams.zeros(dims)
    grads = NetworkParams.zeros(dims)
    for _, g in grads.arrays():
        g[:] = 1.0
    state = AdamState.zeros(dims)
    lr = 0.25
    adam_step(params, grads, state, lr)
    expected = -lr / (1.0 + ADAM_EPS)
    for name, p in params.arrays():
        err = np.max(np.abs(p - expected))
        if err > 1e-15:
            return f"{name}: worst deviation {err:.3e} from {expected!r}"
    if state.t != 1:
        return f"step counter is {state.t}, expected 1"
    return None


def _suite_admit_table(seed: int) -> str | None:
    capacity = 4
    for n in range(capacity + 1):
        for eviction in (KILL_OLDEST, REJECT_NEW):
            reg = Registry()
            for i in range(n):
                reg.add(f"o{i}", stamp=i + 1)
            d = admit(reg, "new", capacity, eviction=eviction)
            if n < capacity and d.action != "admit":
                return f"size {n} {eviction}: got {d.action}, expected admit"
            if n == capacity:
                if eviction == KILL_OLDEST and (d.action, d.evict_id) != ("admit-evict", "o0"):
                    return f"size {n} kill-oldest: got {d}"
                if eviction == REJECT_NEW and d.action != "reject":
                    return f"size {n} reject-new: got {d.action}"
            closed = admit(reg, "new2", capacity, closed=True, eviction=eviction)
            if closed.action != "reject":
                return f"size {n} closed arena admitted {closed.action}"
    return None


def _load_fixture() -> tuple[list[Event], int]:
    pkg = resources.files("orglab")
    lines = (pkg / FIXTURE_LOG).read_text(encoding="ascii").splitlines()
    events = [Event.from_line(line) for line in lines if line.strip()]
    meta = json.loads((pkg / FIXTURE_META).read_text(encoding="ascii"))
    return events, meta["capacity"]


def _suite_replay_fixture(seed: int) -> str | None:
    events, capacity = _load_fixture()
    report = replay_validate(events, capacity=capacity)
    if not report.ok:
        return f"bundled fixture rejected: {report.first_violation}"
    # negative control: removing an eviction must break capacity accounting
    evict_at = next(i for i, e in enumerate(events) if e.kind == "eviction")
    tampered = events[:evict_at] + events[evict_at + 1:]
    if replay_validate(tampered, capacity=capacity).ok:
        return "validator accepted a log with a deleted eviction"
    return None


SUITES = (
    ("genome-roundtrip", _suite_genome_roundtrip),
    ("adam-scalar", _suite_adam_scalar),
    ("admit-table", _suite_admit_table),
    ("replay-fixture", _suite_replay_fixture),
)


def run(seed: int = 0) -> int:
    failures = 0
    for name, fn in SUITES:
        problem = fn(seed)
        if problem is None:
            print(f"selftest {name}: PASS")
        else:
            print(f"selftest {name}: FAIL — {problem}")
            failures += 1
    print(f"selftest: {len(SUITES) - failures}/{len(SUITES)} suites passed")
    return 1 if failures else 0
