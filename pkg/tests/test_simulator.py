import math

import numpy as np
import pytest

from persyst.presets import (
    MachinePreset,
    WorkloadProfile,
    lognormal_from_quartiles,
    machine_preset,
    workload_preset,
)
from persyst.properties import PropertyKind, derive_value
from persyst.simulator import (
    CapacityExceeded,
    ConfigError,
    FaultSpec,
    ProfileEntry,
    SimConfig,
    generate_jobs,
    parse_config,
    run_simulation,
    sample_counters,
    simulate_cycles,
)
from persyst.store import PropertyStore


def flat_profile(name="flat", **kw):
    base = dict(cpi_mean=2.0, cpi_sd=0.0, mispredict_mean=0.01, mispredict_sd=0.0,
                flops_rate_mean=2.0e9, flops_rate_sd=0.0, avx_fraction_mean=0.8,
                avx_fraction_sd=0.0, runtime_mu=math.log(3000), runtime_sigma=0.0,
                cores_dist=((16, 1.0),))
    base.update(kw)
    return WorkloadProfile(name, **base)


def test_machine_presets():
    assert [machine_preset(n).cores_per_node for n in ("phase1_thin", "phase1_fat", "phase2")] == [16, 40, 28]
    with pytest.raises(ValueError):
        MachinePreset("phase2", 16)
    with pytest.raises(ValueError):
        machine_preset("phase3")


def test_lognormal_fit_reproduces_quartiles():
    mu, sigma = lognormal_from_quartiles(86, 95, 112)
    q = np.exp(mu + sigma * np.array([-0.6744897501960817, 0, 0.6744897501960817]))
    assert q[1] == pytest.approx(95)
    assert q[2] / q[0] == pytest.approx(112 / 86)


def test_signature_presets():
    assert workload_preset("seissol_unopt").avx_fraction_mean <= 0.02
    bqcd = workload_preset("bqcd")
    assert bqcd.cpi_mean > workload_preset("seissol_opt").cpi_mean and bqcd.avx_fraction_mean > 0.8


def test_degenerate_profile_realizes_means_exactly():
    p = flat_profile()
    for core in range(5):
        for ts in (0, 600, 1200):
            s = sample_counters(p, "J1", core, ts, seed=3)
            assert derive_value(PropertyKind.CPI, s) == 2.0
            assert derive_value(PropertyKind.BRANCH_MISPREDICT_RATIO, s) == 0.01
            assert derive_value(PropertyKind.FLOPS, s) == 2.0e9
            assert derive_value(PropertyKind.AVX_FRACTION, s) == 0.8


def test_no_vector_ops_when_fraction_zero():
    s = sample_counters(flat_profile(avx_fraction_mean=0.0), "J", 0, 0, seed=1)
    assert s.fp_avx_ops == 0


def test_counter_stream_is_keyed():
    p = workload_preset("namd")
    a = sample_counters(p, "J1", 3, 600, seed=9)
    assert a == sample_counters(p, "J1", 3, 600, seed=9)
    assert a != sample_counters(p, "J1", 4, 600, seed=9)
    assert a != sample_counters(p, "J2", 3, 600, seed=9)
    assert a != sample_counters(p, "J1", 3, 1200, seed=9)
    assert a != sample_counters(p, "J1", 3, 600, seed=10)


def test_law_of_large_numbers_on_cpi():
    p = workload_preset("gadget")
    n = 10_000
    cpis = [derive_value(PropertyKind.CPI, sample_counters(p, "J7", i, 600 * (i % 7), seed=5))
            for i in range(n)]
    assert abs(np.mean(cpis) - p.cpi_mean) <= 3 * p.cpi_sd / math.sqrt(n)


def test_physicality_of_draws():
    # wide sds force clipping at every physical bound
    p = flat_profile(cpi_sd=3.0, mispredict_mean=0.5, mispredict_sd=1.0, flops_rate_sd=5e9,
                     avx_fraction_mean=0.5, avx_fraction_sd=1.0)
    for i in range(100_000):
        s = sample_counters(p, "J", i % 997, 600 * (i // 997), seed=2)
        # CounterSample validates its own invariants on construction
        assert s.window > 0 and s.branch_mispredictions <= s.instructions


def _config(profiles, **kw):
    kw.setdefault("machine", MachinePreset("phase1_thin", 16, 8))
    return SimConfig(profiles=tuple(profiles), **kw)


def test_generate_jobs_point_mass_cluster():
    p = flat_profile("bq", runtime_mu=math.log(150), runtime_sigma=0.05, cores_dist=((1000, 1.0),))
    cfg = _config([ProfileEntry(p, 40)], machine=MachinePreset("phase1_thin", 16, 64), horizon=86400)
    jobs = generate_jobs(cfg)
    assert len(jobs) == 40
    assert all(j.cores == 1000 and len(j.nodes) == 63 for j in jobs)
    assert all(100 <= j.runtime <= 200 for j in jobs)
    # Kolmogorov-Smirnov distance of log runtimes against N(log 150, 0.05)
    from statistics import NormalDist

    logs = np.sort(np.log([j.runtime for j in jobs]))
    cdf = np.array([NormalDist(math.log(150), 0.05).cdf(v) for v in logs])
    n = len(logs)
    d = max(np.max(np.arange(1, n + 1) / n - cdf), np.max(cdf - np.arange(n) / n))
    assert d < 1.36 / math.sqrt(n) + 0.01  # 5% critical value plus integer-second rounding


def test_generate_jobs_edge_cases():
    assert generate_jobs(_config([])) == []
    whole = flat_profile(cores_dist=((128, 1.0),))
    (job,) = generate_jobs(_config([ProfileEntry(whole, 1)]))
    assert job.nodes == tuple(range(8))
    with pytest.raises(CapacityExceeded):
        generate_jobs(_config([ProfileEntry(flat_profile(cores_dist=((129, 1.0),)), 1)]))
    with pytest.raises(CapacityExceeded):
        generate_jobs(_config([ProfileEntry(whole, 40)], horizon=86400))


def test_generated_jobs_never_overlap_on_a_node(desk_config):
    jobs = generate_jobs(desk_config)
    per_node = {}
    for j in jobs:
        assert 0 <= j.start_ts and j.end_ts <= desk_config.horizon
        assert len(j.nodes) == -(-j.cores // 16)
        for n in j.nodes:
            per_node.setdefault(n, []).append((j.start_ts, j.end_ts))
    for spans in per_node.values():
        spans.sort()
        assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))


def test_single_interval_horizon(tmp_path):
    p = flat_profile(runtime_mu=math.log(600), cores_dist=((16, 1.0),))
    cfg = _config([ProfileEntry(p, 1)], horizon=600, interval=600)
    _, store_path = run_simulation(cfg, tmp_path)
    cycles = {r.cycle_ts for r in PropertyStore(store_path).query()}
    assert cycles == {0}


def test_faulted_node_never_reported(tmp_path):
    p = flat_profile(cores_dist=((16, 1.0),), runtime_mu=math.log(2000))
    cfg = _config([ProfileEntry(p, 30)], faults=(FaultSpec(2, 0, 86400),), horizon=86400)
    jobs = generate_jobs(cfg)
    results = list(simulate_cycles(cfg, jobs))
    on_2 = {j.job_id for j in jobs if 2 in j.nodes}
    assert on_2
    for res in results:
        assert not {job for job, _, _ in res.records} & on_2


def test_faults_only_remove_data(desk_config):
    faulty = SimConfig(**{**desk_config.__dict__,
                          "faults": (FaultSpec(3, 0, 86400), FaultSpec(40, 20000, 50000))})
    jobs = generate_jobs(desk_config)
    clean = {(r.cycle_ts, j, m): s.count for r in simulate_cycles(desk_config, jobs)
             for j, m, s in r.records}
    broken = {(r.cycle_ts, j, m): s.count for r in simulate_cycles(faulty, jobs)
              for j, m, s in r.records}
    assert set(broken) <= set(clean)
    assert all(broken[k] <= clean[k] for k in broken)
    assert sum(broken.values()) < sum(clean.values())


def test_same_seed_same_bytes(tmp_path, desk_config):
    a = run_simulation(desk_config, tmp_path / "a")
    b = run_simulation(desk_config, tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    with pytest.raises(FileExistsError):
        run_simulation(desk_config, tmp_path / "a")


CONFIG_TEXT = """
# comment
interval = 300
horizon = 7200
seed = 99

[machine phase2]
node_count = 8

[profile small]
preset = mglet
jobs = 3
owner = cfd
cores = 28:0.5, 112:0.5
runtime_median = 900
runtime_sigma = 0.1

[fault]
node = 1
from_cycle = 600
to_cycle = 1200
"""


def test_parse_config():
    cfg = parse_config(CONFIG_TEXT)
    assert (cfg.interval, cfg.horizon, cfg.seed) == (300, 7200, 99)
    assert cfg.machine == MachinePreset("phase2", 28, 8)
    (entry,) = cfg.profiles
    assert entry.job_count == 3 and entry.owner_group == "cfd"
    assert entry.profile.cores_dist == ((28, 0.5), (112, 0.5))
    assert entry.profile.runtime_median == pytest.approx(900)
    assert entry.profile.cpi_mean == workload_preset("mglet").cpi_mean
    assert cfg.faults == (FaultSpec(1, 600, 1200),)
    assert cfg.down_nodes(900) == {1} and cfg.down_nodes(1500) == set()


@pytest.mark.parametrize("text", [
    "bogus = 1",
    "[machine phase9]",
    "[profile]",
    "[fault]\nfrom_cycle = 0",
    "interval = ten",
    "[profile bqcd]\njobs = 1\njobs = 2",
    "interval = 600\nhorizon = 300",
    "[profile x]\npreset = bqcd\nsurprise = 1",
    "[fault]\nnode = 1\nfrom_cycle = 5\nto_cycle = 1",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)
