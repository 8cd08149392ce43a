"""Arena policy and both run modes (sim scheduler, process registration)."""

import os
import signal
import subprocess
import time

import numpy as np
import pytest

from orglab.arena import (
    ArenaCorrupt,
    ArenaSettings,
    PopulationConfig,
    ProcessArena,
    Registry,
    admit,
    cost_epoch,
    prepare_arena,
    sim_run,
)
from orglab.events import read_events, replay_validate
from orglab.genome import Genome, ancestor_genome, parse_genome, serialize_genome
from orglab.organism import (
    EXIT_CONFIG,
    EXIT_DENIED,
    EXIT_MATURED,
    EXIT_STERILE,
    OrganismConfig,
    organism_main,
)

FAST = Genome(lr=0.01, hid=8, noi=2, aux=2)


def seed_fast_arena(tmp_path, name="arena"):
    arena = tmp_path / name
    arena.mkdir()
    (arena / "g0.org").write_text(serialize_genome(FAST), encoding="ascii")
    return arena


def test_cost_epoch_ancestor_value():
    # 45 * (8*16*71 + 8*16*32 + 2*16*47) multiply-accumulates
    cfg = OrganismConfig.from_genome(ancestor_genome(), seed=0)
    assert cost_epoch(cfg.dims, cfg.length) == 660_960


def test_cost_epoch_scaling():
    cfg = OrganismConfig.from_genome(ancestor_genome(), seed=0)
    assert cost_epoch(cfg.dims, 90) == 2 * cost_epoch(cfg.dims, 45)
    big = OrganismConfig.from_genome(Genome(lr=0.001, hid=32, noi=8, aux=8), seed=0)
    assert cost_epoch(big.dims, 45) > 2 * cost_epoch(cfg.dims, 45)


def test_arena_settings_round_trip(tmp_path):
    s = ArenaSettings(capacity=4, budget=12, sigma_lr=0.01, int_span=2,
                      max_epochs=500)
    s.save(tmp_path)
    assert ArenaSettings.load(tmp_path) == s
    assert ArenaSettings.load(tmp_path / "absent") == ArenaSettings()


def test_settings_validation():
    with pytest.raises(ValueError):
        ArenaSettings(capacity=0)
    with pytest.raises(ValueError):
        ArenaSettings(budget=0)
    with pytest.raises(ValueError):
        ArenaSettings(eviction="coinflip")


def test_population_config_validation(tmp_path):
    with pytest.raises(ValueError):
        PopulationConfig(arena_path=tmp_path, mode="threads")
    with pytest.raises(ValueError):
        PopulationConfig(arena_path=tmp_path, capacity=0)
    cfg = PopulationConfig(arena_path=tmp_path, capacity=5, budget=9,
                           sigma_lr=0.004)
    s = cfg.settings()
    assert (s.capacity, s.budget, s.sigma_lr) == (5, 9, 0.004)


def test_registry_keeps_admission_order():
    reg = Registry()
    reg.add("0", stamp=1)
    reg.add("0.0", stamp=4)
    reg.add("0.1", stamp=5)
    assert reg.ids() == ["0", "0.0", "0.1"]
    assert reg.oldest().organism_id == "0"
    with pytest.raises(ValueError):
        reg.add("0.0", stamp=9)  # already live
    with pytest.raises(ValueError):
        reg.add("0.2", stamp=2)  # stamps must increase
    reg.remove("0")
    assert reg.oldest().organism_id == "0.0"
    with pytest.raises(KeyError):
        reg.remove("0")


def filled_registry(n):
    reg = Registry()
    for i in range(n):
        reg.add(f"id{i}", stamp=i + 1)
    return reg


def test_admit_below_capacity():
    for size in range(4):
        decision = admit(filled_registry(size), "new", capacity=4)
        assert decision.action == "admit"
        assert decision.evict_id is None


def test_admit_at_capacity_evicts_oldest():
    decision = admit(filled_registry(4), "new", capacity=4)
    assert decision.action == "admit-evict"
    assert decision.evict_id == "id0"


def test_admit_rejects_when_closed():
    assert admit(filled_registry(0), "new", capacity=4, closed=True).action == "reject"
    assert admit(filled_registry(4), "new", capacity=4, closed=True).action == "reject"


def test_admit_reject_new_mode():
    decision = admit(filled_registry(4), "new", capacity=4, eviction="reject-new")
    assert decision.action == "reject"
    assert admit(filled_registry(3), "new", capacity=4,
                 eviction="reject-new").action == "admit"


def test_admit_rejects_duplicate_live_id():
    with pytest.raises(ValueError):
        admit(filled_registry(2), "id1", capacity=4)


def test_prepare_arena_seeds_ancestor(tmp_path):
    arena = tmp_path / "a"
    cfg = PopulationConfig(arena_path=arena, capacity=2, budget=4)
    prepare_arena(cfg)
    assert parse_genome((arena / "g0.org").read_text()) == ancestor_genome()
    assert ArenaSettings.load(arena).capacity == 2


def test_prepare_arena_refuses_used_log(tmp_path):
    arena = tmp_path / "a"
    arena.mkdir()
    (arena / "events.log").write_text('{"kind":"spawn","seq":1}\n')
    with pytest.raises(ArenaCorrupt):
        prepare_arena(PopulationConfig(arena_path=arena))


def test_prepare_arena_clears_stale_closed_marker(tmp_path):
    arena = tmp_path / "a"
    arena.mkdir()
    (arena / "CLOSED").touch()
    prepare_arena(PopulationConfig(arena_path=arena))
    assert not (arena / "CLOSED").exists()


def test_sim_run_small_population(tmp_path):
    arena = seed_fast_arena(tmp_path)
    cfg = PopulationConfig(arena_path=arena, capacity=3, budget=8, mode="sim",
                           seed=1)
    report = sim_run(cfg)
    assert report.ok
    assert report.spawned == 8  # exactly M spawn events
    assert report.evicted + report.sterile + report.replicated \
        + len(report.alive_at_end) == 8
    events = read_events(arena / "events.log")
    assert replay_validate(events, capacity=3).ok
    assert events[-1].kind == "shutdown"
    assert events[-1].reason == "budget"
    # every maturity's virtual cost is epochs * per-epoch cost of its dims
    for e in events:
        if e.kind == "maturity":
            dims_cfg = OrganismConfig.from_genome(
                Genome(lr=e.lr, hid=e.hid, noi=e.noi, aux=e.aux), seed=0)
            assert e.vcost == e.epochs * cost_epoch(dims_cfg.dims, 45)
            assert (arena / f"g{e.id}.org").exists()


def test_sim_run_is_deterministic(tmp_path):
    logs = []
    for name in ("one", "two"):
        arena = seed_fast_arena(tmp_path, name)
        cfg = PopulationConfig(arena_path=arena, capacity=2, budget=6,
                               mode="sim", seed=7)
        sim_run(cfg)
        logs.append((arena / "events.log").read_bytes())
    assert logs[0] == logs[1]
    other = seed_fast_arena(tmp_path, "three")
    sim_run(PopulationConfig(arena_path=other, capacity=2, budget=6,
                             mode="sim", seed=8))
    assert (other / "events.log").read_bytes() != logs[0]


def test_sim_run_reject_new_never_evicts(tmp_path):
    arena = seed_fast_arena(tmp_path)
    cfg = PopulationConfig(arena_path=arena, capacity=1, budget=4, mode="sim",
                           seed=1, eviction="reject-new")
    report = sim_run(cfg)
    assert report.ok
    assert report.evicted == 0
    assert report.spawned == 4


def test_sim_run_kill_oldest_evicts_in_order(tmp_path):
    arena = seed_fast_arena(tmp_path)
    cfg = PopulationConfig(arena_path=arena, capacity=1, budget=5, mode="sim",
                           seed=1)
    report = sim_run(cfg)
    assert report.ok
    assert report.evicted > 0  # single slot forces sibling evictions


def test_sim_run_extinction(tmp_path):
    arena = seed_fast_arena(tmp_path)
    cfg = PopulationConfig(arena_path=arena, capacity=3, budget=50, mode="sim",
                           seed=1, max_epochs=3)
    report = sim_run(cfg)
    assert report.ok
    assert report.sterile == 1
    assert report.spawned == 1
    events = read_events(arena / "events.log")
    assert [e.kind for e in events] == ["spawn", "sterile", "extinction",
                                        "shutdown"]
    assert events[-1].reason == "extinction"


def test_sim_run_budget_one_stops_at_ancestor_spawn(tmp_path):
    arena = seed_fast_arena(tmp_path)
    report = sim_run(PopulationConfig(arena_path=arena, capacity=2, budget=1,
                                      mode="sim", seed=1))
    assert report.ok
    assert report.spawned == 1
    assert report.alive_at_end == ("0",)
    events = read_events(arena / "events.log")
    assert [e.kind for e in events] == ["spawn", "shutdown"]


def test_sim_zero_mutation_keeps_genome_constant(tmp_path):
    arena = seed_fast_arena(tmp_path)
    cfg = PopulationConfig(arena_path=arena, capacity=3, budget=8, mode="sim",
                           seed=2, sigma_lr=0.0, int_span=0)
    report = sim_run(cfg)
    assert report.ok
    fast_text = serialize_genome(FAST)
    for e in read_events(arena / "events.log"):
        if e.kind == "spawn":
            assert (e.lr, e.hid, e.noi, e.aux) == (FAST.lr, FAST.hid,
                                                   FAST.noi, FAST.aux)
    for path in arena.glob("g*.org"):
        assert path.read_text(encoding="ascii") == fast_text


def test_sim_log_has_no_wall_times(tmp_path):
    arena = seed_fast_arena(tmp_path)
    sim_run(PopulationConfig(arena_path=arena, capacity=2, budget=5,
                             mode="sim", seed=3))
    for e in read_events(arena / "events.log"):
        assert e.wall is None
        assert e.pid is None


def test_sim_logs_validate_across_twenty_seeds(tmp_path):
    # fuzz property: every sim run, whatever its fate, leaves a valid log
    for seed in range(20):
        arena = seed_fast_arena(tmp_path, f"fuzz{seed}")
        cfg = PopulationConfig(arena_path=arena, capacity=1 + seed % 2,
                               budget=3, mode="sim", seed=seed,
                               max_epochs=3000)
        report = sim_run(cfg)  # raises ArenaCorrupt on any violation
        assert report.ok
        assert report.spawned <= 3


# --------------------------------------------------------------------------
# process-mode registration (organism side), without the full supervisor

def process_arena(tmp_path, capacity=2, budget=50, max_epochs=2000):
    arena = tmp_path / "parena"
    cfg = PopulationConfig(arena_path=arena, capacity=capacity, budget=budget,
                           mode="process", max_epochs=max_epochs)
    prepare_arena(cfg)
    (arena / "g0.org").write_text(serialize_genome(FAST), encoding="ascii")
    return ProcessArena(arena)


def org_cfg(arena, oid, parent=None, genome=FAST, seed=1):
    return OrganismConfig.from_genome(
        genome, organism_id=oid, parent_id=parent, seed=seed,
        max_epochs=2000, arena_path=arena.path)


def test_register_admits_until_capacity(tmp_path):
    arena = process_arena(tmp_path, capacity=2)
    assert arena.register(org_cfg(arena, "0"), pid=os.getpid())
    assert arena.register(org_cfg(arena, "0.0", parent="0"), pid=os.getpid())
    events = read_events(arena.log.path)
    assert [e.kind for e in events] == ["spawn", "spawn"]
    assert events[0].pid == os.getpid()


def test_register_evicts_oldest_with_sigkill(tmp_path):
    arena = process_arena(tmp_path, capacity=2)
    victim = subprocess.Popen(["sleep", "60"])
    try:
        assert arena.register(org_cfg(arena, "0"), pid=victim.pid)
        assert arena.register(org_cfg(arena, "0.0", parent="0"), pid=os.getpid())
        assert arena.register(org_cfg(arena, "0.1", parent="0"), pid=os.getpid())
        assert victim.wait(timeout=10) == -signal.SIGKILL
    finally:
        if victim.poll() is None:
            victim.kill()
    events = read_events(arena.log.path)
    assert [e.kind for e in events] == ["spawn", "spawn", "eviction", "spawn"]
    ev = events[2]
    assert ev.id == "0" and ev.by == "0.1" and ev.reason == "capacity"


def test_register_rejects_when_closed(tmp_path):
    arena = process_arena(tmp_path)
    (arena.path / "CLOSED").touch()
    assert not arena.register(org_cfg(arena, "0"), pid=os.getpid())
    assert read_events(arena.log.path) == []


def test_register_rejects_past_budget(tmp_path):
    arena = process_arena(tmp_path, capacity=4, budget=1)
    assert arena.register(org_cfg(arena, "0"), pid=os.getpid())
    assert not arena.register(org_cfg(arena, "0.0", parent="0"), pid=os.getpid())


def test_finalize_replication_under_closed_arena_writes_no_children(tmp_path):
    arena = process_arena(tmp_path, budget=1)
    cfg = org_cfg(arena, "0")
    assert arena.register(cfg, pid=os.getpid())
    rng = np.random.default_rng(0)
    specs = arena.finalize_replication(cfg, cfg.genome_text, epochs=10,
                                       wall=0.5, mut_rng=rng)
    events = read_events(arena.log.path)
    assert [e.kind for e in events] == ["spawn", "maturity", "replication"]
    assert events[2].children == ("0.0", "0.1")
    assert events[1].wall == 0.5
    # budget reached: no child files, no launches
    for spec in specs:
        assert not spec.path.exists()


def test_record_sterile(tmp_path):
    arena = process_arena(tmp_path)
    cfg = org_cfg(arena, "0")
    assert arena.register(cfg, pid=os.getpid())
    arena.record_sterile(cfg, epochs=2000, wall=3.25)
    e = read_events(arena.log.path)[-1]
    assert e.kind == "sterile" and e.epochs == 2000 and e.wall == 3.25


# --------------------------------------------------------------------------
# organism_main: the full process-side lifecycle minus the supervisor

def test_organism_main_matures_and_exits_zero(tmp_path):
    arena = process_arena(tmp_path, budget=1)  # budget stops child launches
    code = organism_main(arena.path / "g0.org", arena.path, seed=1,
                         max_epochs=30_000)
    assert code == EXIT_MATURED
    events = read_events(arena.log.path)
    assert [e.kind for e in events] == ["spawn", "maturity", "replication"]
    assert events[1].epochs > 0 and events[1].wall is not None


def test_organism_main_sterile_exit(tmp_path):
    arena = process_arena(tmp_path, budget=1)
    code = organism_main(arena.path / "g0.org", arena.path, seed=1,
                         max_epochs=2)
    assert code == EXIT_STERILE
    assert read_events(arena.log.path)[-1].kind == "sterile"


def test_organism_main_bad_genome_exit(tmp_path):
    arena = process_arena(tmp_path)
    bad = arena.path / "g0.org"
    bad.write_text("org1\nlr 9.999999\nhid 016\nnoi 008\naux 008\nend\n")
    assert organism_main(bad, arena.path, seed=1) == EXIT_CONFIG
    assert read_events(arena.log.path) == []


def test_organism_main_denied_exit(tmp_path):
    arena = process_arena(tmp_path)
    (arena.path / "CLOSED").touch()
    code = organism_main(arena.path / "g0.org", arena.path, seed=1)
    assert code == EXIT_DENIED
