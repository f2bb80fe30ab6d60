import pytest

from persyst.agents import (
    AgentMessage,
    MixedKey,
    MsgKind,
    NodeDown,
    Report,
    check_cycle,
    collector_aggregate,
    persyst_measure,
    run_cycle,
    sync_merge,
)
from persyst.presets import workload_preset
from persyst.properties import KINDS, CounterSample, PropertyKind, derive_value
from persyst.quantiles import QuantileSummary, exact_summary
from persyst.simulator import SyntheticCounters
from persyst.store import JobRecord, JobTable
from persyst.topology import build_tree

from oracles import summary_tuple


def constant_source(job, node, core, ts):
    return CounterSample(2_000_000_000, 1_000_000_000, 1_000_000, 600_000_000, 400_000_000)


def test_check_cycle():
    assert check_cycle(1200, 600) == 1200
    with pytest.raises(ValueError):
        check_cycle(1201, 600)


def test_measure_constant_node():
    table = JobTable([JobRecord("J1", "g", "app", 16, (0,), 0, 1000)], 16)
    reports = persyst_measure(0, 600, table, constant_source)
    assert [r.metric for r in reports] == list(KINDS)
    cpi = reports[0].summary
    assert cpi.count == 16 and cpi.min == cpi.max == 2.0


def test_measure_two_jobs_on_a_node():
    table = JobTable([JobRecord("A", "g", "app", 8, (0,), 0, 1000),
                      JobRecord("B", "g", "app", 8, (0,), 0, 1000)], 16)
    reports = persyst_measure(0, 0, table, constant_source)
    by_job = {}
    for r in reports:
        by_job.setdefault(r.job_id, set()).add(r.summary.count)
    assert by_job == {"A": {8}, "B": {8}}


def test_measure_down_node():
    table = JobTable([JobRecord("A", "g", "app", 8, (0,), 0, 1000)], 16)
    with pytest.raises(NodeDown):
        persyst_measure(0, 0, table, constant_source, down=True)


def test_measure_drops_idle_windows():
    def source(job, node, core, ts):
        fp = 0 if core < 3 else 100
        return CounterSample(10, 10, 0, fp, 0)

    table = JobTable([JobRecord("A", "g", "app", 16, (0,), 0, 10)], 16)
    reports = {r.metric: r for r in persyst_measure(0, 0, table, source)}
    assert reports[PropertyKind.CPI].summary.count == 16
    assert reports[PropertyKind.AVX_FRACTION].summary.count == 13


def test_measure_matches_emitted_values():
    prof = workload_preset("seissol_opt")
    counters = SyntheticCounters({"seissol_opt": prof}, 16, seed=7, record=True)
    table = JobTable([JobRecord("J1", "g", "seissol_opt", 24, (3, 4), 0, 5000)], 16)
    for node in (3, 4):
        for r in persyst_measure(node, 1800, table, counters):
            raw = [derive_value(r.metric, s) for (j, n, c, t), s in counters.emitted.items()
                   if n == node and t == 1800]
            expect = summary_tuple(raw)
            assert (r.summary.count, r.summary.min, r.summary.deciles, r.summary.max) == expect


def _report(job="J", values=None, ts=0, metric=PropertyKind.CPI, raw=True):
    s = exact_summary(values)
    return Report(ts, job, metric, s, tuple(values) if raw else None)


def test_collector_exact_over_pooled_raw():
    a, b = _report(values=list(range(1, 9))), _report(values=list(range(9, 17)))
    s = collector_aggregate([a, b])
    assert (s.count, s.min, s.deciles, s.max) == summary_tuple(range(1, 17))


def test_collector_without_raw_estimates():
    a = _report(values=list(range(1, 9)), raw=False)
    b = _report(values=list(range(9, 17)), raw=False)
    s = collector_aggregate([a, b], raw_values_available=True)
    assert s.count == 16 and (s.min, s.max) == (1, 16)


def test_single_report_identity():
    r = _report(values=[3.0, 1.0, 2.0])
    assert collector_aggregate([r]) == r.summary
    assert sync_merge([r]) == r.summary


@pytest.mark.parametrize("other", [
    dict(job="K"), dict(ts=600), dict(metric=PropertyKind.FLOPS),
])
def test_mixed_key(other):
    a = _report(values=[1.0])
    b = _report(values=[2.0], **other)
    with pytest.raises(MixedKey):
        collector_aggregate([a, b])
    with pytest.raises(MixedKey):
        sync_merge([a, b])


def test_sync_merge_constant_children():
    reps = [Report(0, "J", PropertyKind.CPI, QuantileSummary.constant(1.5, n)) for n in (4, 16)]
    assert sync_merge(reps) == QuantileSummary.constant(1.5, 20)


def test_report_message_must_match_cycle():
    with pytest.raises(ValueError):
        AgentMessage(MsgKind.REPORT, 600, "a", "b", _report(values=[1.0], ts=0))


# -- whole cycles ----------------------------------------------------------

@pytest.fixture(scope="module")
def cluster():
    prof = workload_preset("gadget")
    counters = SyntheticCounters({"gadget": prof}, 16, seed=11, record=True)
    jobs = [JobRecord("J1", "astro", "gadget", 64 * 16, tuple(range(64)), 0, 10_000)]
    return build_tree(64, 16, 2), JobTable(jobs, 16), counters


def test_full_cycle_counts_and_extrema(cluster):
    topo, table, counters = cluster
    res = run_cycle(topo, 600, table, counters)
    assert res.missing_nodes == ()
    assert [m for _, m, _ in res.records] == list(KINDS)
    for job, metric, s in res.records:
        assert s.count == 1024
        raw = [derive_value(metric, counters(table.jobs[job], n, c, 600))
               for n in range(64) for c in range(16)]
        assert (s.min, s.max) == (min(raw), max(raw))
        exact = exact_summary(raw)
        span = exact.max - exact.min
        assert max(abs(a - b) for a, b in zip(s.deciles, exact.deciles)) <= 0.05 * span


def test_one_node_down(cluster):
    topo, table, counters = cluster
    res = run_cycle(topo, 600, table, counters, down_nodes=[17])
    assert res.missing_nodes == (17,)
    assert {s.count for _, _, s in res.records} == {1024 - 16}


def test_all_nodes_down(cluster):
    topo, table, counters = cluster
    res = run_cycle(topo, 600, table, counters, down_nodes=range(64))
    assert res.records == ()
    assert res.missing_nodes == tuple(range(64))


def test_straggler_dropped_not_carried(cluster):
    topo, table, counters = cluster
    res = run_cycle(topo, 600, table, counters, deadline=60, latency={5: 45.0, 6: 1.0})
    assert res.missing_nodes == (5,)
    assert {s.count for _, _, s in res.records} == {1024 - 16}


def test_cycle_purity_and_schedule_independence(cluster):
    topo, table, counters = cluster
    results = [run_cycle(topo, 1200, table, counters, scheduling_seed=s, down_nodes=[3, 40])
               for s in range(4)]
    assert all(r == results[0] for r in results)
    assert results[0].cycle_ts == 1200


def test_idle_machine_cycle(cluster):
    topo, table, counters = cluster
    res = run_cycle(topo, 12_000, table, counters)
    assert res.records == () and res.missing_nodes == ()


def test_unaligned_cycle_rejected(cluster):
    topo, table, counters = cluster
    with pytest.raises(ValueError):
        run_cycle(topo, 601, table, counters)
