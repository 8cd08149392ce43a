"""Acceptance criteria, one test per criterion.

Each test prints one `criterion N: PASS/FAIL` line (shown with -rP/-s or
on failure); the pytest verdict per test is the authoritative pass/fail.
The heavyweight evolutionary runs (criteria 3 and 4) share one set of
five sim-mode populations via a module-scoped fixture.
"""

import inspect
import statistics
import time

import numpy as np
import pytest

from orglab.arena import PopulationConfig, admit, sim_run, supervisor_run
from orglab.events import Event, read_events, replay_validate
from orglab.genome import Genome, ancestor_genome, serialize_genome
from orglab.organism import OrganismConfig, run_to_maturity
from orglab.network import (
    NetDims,
    bptt,
    finite_difference_grad,
    generate_sequence,
    init_params,
)
from orglab.report import summarize

TREND_SEEDS = (1, 2, 3, 4, 5)


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} — {detail}"
    print(line)
    assert ok, line


# criterion 1 ---------------------------------------------------------------

def test_criterion_1_gradient_correctness():
    """BPTT vs central differences at chars=5, hid=4, aux=1, noi=1, L=6."""
    started = time.monotonic()
    dims = NetDims(chars=5, hid=4, aux=1, noi=1)
    rng = np.random.default_rng(0)
    params = init_params(dims, rng)
    noise = rng.standard_normal((6, dims.noi))
    target = rng.integers(0, dims.chars, 6)
    cache = generate_sequence(params, dims, 6, rng=None, mode="argmax",
                              noise=noise)
    analytic = bptt(cache, target, params).flatten()
    numeric = finite_difference_grad(params, dims, target, noise, step=1e-5)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    worst = float((np.abs(analytic - numeric) / denom).max())
    elapsed = time.monotonic() - started
    verdict(1, worst < 1e-4 and elapsed < 5.0,
            f"max relative error {worst:.3e} (< 1e-4) in {elapsed:.2f}s (< 5s)")


# criterion 2 ---------------------------------------------------------------

def test_criterion_2_quine_maturity():
    """Ancestor reaches byte-exact reproduction within 200k epochs, 4/5 seeds."""
    matured = 0
    details = []
    for seed in (1, 2, 3, 4, 5):
        cfg = OrganismConfig.from_genome(ancestor_genome(), seed=seed,
                                         max_epochs=200_000)
        started = time.monotonic()
        try:
            _, epochs, text = run_to_maturity(cfg)
        except Exception:
            details.append(f"seed {seed}: sterile")
            continue
        elapsed = time.monotonic() - started
        assert text == serialize_genome(ancestor_genome())
        assert elapsed < 900.0, f"seed {seed} took {elapsed:.0f}s (>= 15 min)"
        matured += 1
        details.append(f"seed {seed}: {epochs} epochs in {elapsed:.1f}s")
    verdict(2, matured >= 4, f"{matured}/5 seeds matured ({'; '.join(details)})")


# criteria 3 + 4 ------------------------------------------------------------

@pytest.fixture(scope="module")
def trend_runs(tmp_path_factory):
    """Five sim populations at K=8, M=120, sigma_lr=0.002, kill-oldest."""
    root = tmp_path_factory.mktemp("trend")
    runs = {}
    total = 0.0
    for seed in TREND_SEEDS:
        started = time.monotonic()
        cfg = PopulationConfig(arena_path=root / f"s{seed}", capacity=8,
                               budget=120, mode="sim", sigma_lr=0.002,
                               int_span=5, eviction="kill-oldest", seed=seed)
        report = sim_run(cfg)
        elapsed = time.monotonic() - started
        total += elapsed
        assert report.ok
        events = read_events(root / f"s{seed}" / "events.log")
        runs[seed] = (events, report, elapsed)
    return runs, total


def test_criterion_3_evolutionary_trend(trend_runs):
    """Last-quartile maturity cost < 0.7 x first-quartile in >= 4 of 5 seeds."""
    runs, total = trend_runs
    passing = 0
    details = []
    for seed in TREND_SEEDS:
        events, _, elapsed = runs[seed]
        try:
            stats = summarize(events, window=16)
            ratio = stats.ratio
            ok = ratio < 0.7
        except Exception:
            ratio = float("nan")
            ok = False
        passing += ok
        details.append(f"seed {seed}: ratio {ratio:.3f} in {elapsed:.0f}s")
    details.append(f"total {total:.0f}s (< 1800s)")
    verdict(3, passing >= 4 and total < 1800.0,
            f"{passing}/5 seeds below 0.7 ({'; '.join(details)})")


def test_criterion_4_learning_rate_drift(trend_runs):
    """Median lr of the final 16 matured organisms > 0.001 in >= 3 of 5 seeds."""
    runs, _ = trend_runs
    passing = 0
    details = []
    for seed in TREND_SEEDS:
        events, _, _ = runs[seed]
        matured = [e for e in events if e.kind == "maturity"]
        if matured:
            median_lr = statistics.median(e.lr for e in matured[-16:])
            ok = median_lr > 0.001
        else:
            median_lr = float("nan")
            ok = False
        passing += ok
        details.append(f"seed {seed}: median lr {median_lr:.6f}")
    verdict(4, passing >= 3,
            f"{passing}/5 seeds drifted above 0.001 ({'; '.join(details)})")


# criterion 5 ---------------------------------------------------------------

def test_criterion_5_selection_blindness():
    """admit() sees only live-set size and admission order; table at K=4."""
    from orglab.arena import Registry

    table_ok = True
    for size in range(5):
        for eviction in ("kill-oldest", "reject-new"):
            reg = Registry()
            for i in range(size):
                reg.add(f"o{i}", stamp=i + 1)
            d = admit(reg, "new", 4, eviction=eviction)
            if size < 4:
                table_ok &= d.action == "admit"
            elif eviction == "kill-oldest":
                table_ok &= (d.action, d.evict_id) == ("admit-evict", "o0")
            else:
                table_ok &= d.action == "reject"
            table_ok &= admit(reg, "x", 4, closed=True,
                              eviction=eviction).action == "reject"
    sig = set(inspect.signature(admit).parameters)
    blind = sig == {"registry", "new_id", "capacity", "closed", "eviction"}
    verdict(5, table_ok and blind,
            f"table over sizes 0..4 exhaustive; signature {sorted(sig)} "
            f"carries no loss/genome inputs")


# criterion 6 ---------------------------------------------------------------

def negative_fixture_set():
    G = dict(lr=0.001, hid=16, noi=8, aux=8)
    base = [
        Event(seq=1, kind="spawn", id="0", **G),
        Event(seq=2, kind="maturity", id="0", epochs=1, vcost=1, **G),
        Event(seq=3, kind="replication", id="0", children=("0.0", "0.1"),
              epochs=1, vcost=1, **G),
        Event(seq=4, kind="spawn", id="0.0", parent="0", **G),
        Event(seq=5, kind="spawn", id="0.1", parent="0", **G),
    ]
    return {
        "capacity overflow": (base, 1),
        "orphan child": ([base[0],
                          Event(seq=2, kind="spawn", id="0.9", parent="0", **G)],
                         None),
        "sequence gap": ([base[0],
                          Event(seq=5, kind="sterile", id="0", epochs=1,
                                vcost=1, **G)], None),
        "duplicate id": (base + [Event(seq=6, kind="spawn", id="0.0",
                                       parent="0", **G)], None),
        "non-oldest eviction": (base + [Event(seq=6, kind="eviction", id="0.1",
                                              by="x", reason="capacity", **G)],
                                None),
        "extinction with survivors": (base + [Event(seq=6, kind="extinction")],
                                      None),
        "event after shutdown": (base + [Event(seq=6, kind="shutdown",
                                               reason="budget", spawned=3),
                                         Event(seq=7, kind="spawn", id="0.1.x",
                                               parent="0.1", **G)], None),
    }


def test_criterion_6_supervisor_safety(tmp_path):
    """20 seeded sim logs all validate; every negative fixture is caught."""
    fast = serialize_genome(Genome(lr=0.01, hid=8, noi=2, aux=2))
    clean = 0
    for seed in range(20):
        arena = tmp_path / f"s{seed}"
        arena.mkdir()
        (arena / "g0.org").write_text(fast, encoding="ascii")
        report = sim_run(PopulationConfig(
            arena_path=arena, capacity=1 + seed % 3, budget=4, mode="sim",
            seed=seed, max_epochs=3000))
        clean += report.ok
    caught = []
    for name, (events, capacity) in negative_fixture_set().items():
        if replay_validate(events, capacity=capacity).ok:
            caught.append(name)
    verdict(6, clean == 20 and not caught,
            f"{clean}/20 sim logs valid; uncaught negatives: {caught or 'none'}")


# criterion 7 ---------------------------------------------------------------

def test_criterion_7_determinism(tmp_path):
    """Identical config + seed => byte-identical sim event logs."""
    fast = serialize_genome(Genome(lr=0.01, hid=8, noi=2, aux=2))
    logs = []
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        (tmp_path / name / "g0.org").write_text(fast, encoding="ascii")
        cfg = PopulationConfig(arena_path=tmp_path / name, capacity=4,
                               budget=10, mode="sim", seed=11,
                               max_epochs=30_000)
        report = sim_run(cfg)
        assert report.ok
        logs.append((tmp_path / name / "events.log").read_bytes())
    verdict(7, logs[0] == logs[1],
            f"two runs, {len(logs[0])} bytes each, byte-identical")


# criterion 8 ---------------------------------------------------------------

def test_criterion_8_process_mode_smoke(tmp_path):
    """K=4, M=12 with real OS processes: valid log, 12 spawns, no orphans."""
    started = time.monotonic()
    cfg = PopulationConfig(arena_path=tmp_path / "arena", capacity=4,
                           budget=12, mode="process", seed=1,
                           max_epochs=30_000, max_wall=1100)
    report = supervisor_run(cfg)
    elapsed = time.monotonic() - started
    events = read_events(tmp_path / "arena" / "events.log")
    spawns = sum(e.kind == "spawn" for e in events)
    evicted = [e.id for e in events if e.kind == "eviction"]
    orphans = [f"g{eid}.{i}.org" for eid in evicted for i in (0, 1)
               if (tmp_path / "arena" / f"g{eid}.{i}.org").exists()]
    verdict(8, report.ok and spawns == 12 and not orphans and elapsed < 1200.0,
            f"valid={report.ok} spawns={spawns} evicted={len(evicted)} "
            f"orphan files={orphans or 'none'} in {elapsed:.0f}s (< 20 min)")


# criterion 9 ---------------------------------------------------------------

def test_criterion_9_zero_mutation_fidelity(tmp_path):
    """sigma_lr=0, integer deltas 0: every genome equals the ancestor's."""
    arena = tmp_path / "arena"
    cfg = PopulationConfig(arena_path=arena, capacity=4, budget=20,
                           mode="sim", seed=1, sigma_lr=0.0, int_span=0,
                           max_epochs=30_000)
    report = sim_run(cfg)
    assert report.ok
    ancestor_text = serialize_genome(ancestor_genome())
    files = sorted(arena.glob("g*.org"))
    mismatched = [p.name for p in files
                  if p.read_text(encoding="ascii") != ancestor_text]
    a = ancestor_genome()
    drifted = [e.id for e in read_events(arena / "events.log")
               if e.kind == "spawn"
               and (e.lr, e.hid, e.noi, e.aux) != (a.lr, a.hid, a.noi, a.aux)]
    verdict(9, report.spawned == 20 and not mismatched and not drifted,
            f"{len(files)} genome files all byte-identical to the ancestor; "
            f"{report.spawned} spawns, drifted: {drifted or 'none'}")
