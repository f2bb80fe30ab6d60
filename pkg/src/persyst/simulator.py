"""Synthetic cluster: job stream, per-core counters, faults, full runs."""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from .agents import DEFAULT_INTERVAL, CycleResult, run_cycle
from .presets import MachinePreset, WorkloadProfile, machine_preset, workload_preset
from .properties import CounterSample
from .store import (
    JOBS_FILE,
    PROPERTIES_FILE,
    JobRecord,
    JobTable,
    PropertyStore,
    StoreRecord,
    write_jobs,
)
from .topology import DEFAULT_COLLECTOR_FANOUT, DEFAULT_SYNC_FANOUT, TreeTopology, build_tree

__all__ = [
    "FaultSpec",
    "ProfileEntry",
    "SimConfig",
    "CapacityExceeded",
    "ConfigError",
    "generate_jobs",
    "sample_counters",
    "SyntheticCounters",
    "simulate_cycles",
    "run_simulation",
    "parse_config",
    "load_config",
]

log = logging.getLogger(__name__)

INSTRUCTIONS_PER_WINDOW = 10**9
_CPI_FLOOR = 0.05


class CapacityExceeded(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FaultSpec:
    node_id: int
    from_cycle: int
    to_cycle: int
    kind: str = "AGENT_DOWN"

    def __post_init__(self):
        if self.kind != "AGENT_DOWN":
            raise ValueError(f"unsupported fault kind {self.kind!r}")
        if self.from_cycle > self.to_cycle:
            raise ValueError("fault from_cycle must not exceed to_cycle")

    def covers(self, node: int, cycle_ts: int) -> bool:
        return node == self.node_id and self.from_cycle <= cycle_ts <= self.to_cycle


@dataclass(frozen=True)
class ProfileEntry:
    profile: WorkloadProfile
    job_count: int
    owner_group: str = "users"


@dataclass(frozen=True)
class SimConfig:
    machine: MachinePreset
    profiles: tuple[ProfileEntry, ...] = ()
    interval: int = DEFAULT_INTERVAL
    horizon: int = 86400
    seed: int = 0
    faults: tuple[FaultSpec, ...] = ()
    window: float = 1.0
    deadline: Optional[float] = None
    collector_fanout: int = DEFAULT_COLLECTOR_FANOUT
    sync_fanout: int = DEFAULT_SYNC_FANOUT

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("interval must be positive")
        if self.horizon < self.interval:
            raise ValueError("horizon must be at least one interval")
        if self.window <= 0:
            raise ValueError("window must be positive")
        names = [e.profile.name for e in self.profiles]
        if len(set(names)) != len(names):
            raise ValueError("profile names must be unique")
        for f in self.faults:
            if not 0 <= f.node_id < self.machine.node_count:
                raise ValueError(f"fault names node {f.node_id}, outside the machine")

    @property
    def workloads(self) -> dict[str, WorkloadProfile]:
        return {e.profile.name: e.profile for e in self.profiles}

    def down_nodes(self, cycle_ts: int) -> set[int]:
        return {f.node_id for f in self.faults if f.from_cycle <= cycle_ts <= f.to_cycle}


# -- job stream -------------------------------------------------------------

def _draw_runtime(rng: np.random.Generator, p: WorkloadProfile, horizon: int) -> int:
    r = rng.lognormal(p.runtime_mu, p.runtime_sigma)
    lo = p.runtime_min if p.runtime_min is not None else 1.0
    hi = p.runtime_max if p.runtime_max is not None else horizon
    return int(min(max(round(min(max(r, lo), hi)), 1), horizon))


def generate_jobs(config: SimConfig) -> list[JobRecord]:
    """Draw the job population and place it first-fit on whole nodes.

    Every job gets its cores, runtime and a desired start uniform over
    ``[0, horizon - runtime]``; jobs are then placed in order of desired
    start at the earliest time no sooner than that where enough nodes are
    free for the whole runtime. A job that cannot finish inside the horizon
    raises :class:`CapacityExceeded`.
    """
    m = config.machine
    rng = np.random.default_rng([config.seed, 0x6A6F6273])
    drawn = []
    for entry in config.profiles:
        p = entry.profile
        cores_opts = np.array([c for c, _ in p.cores_dist])
        weights = np.array([w for _, w in p.cores_dist])
        weights = weights / weights.sum()
        for _ in range(entry.job_count):
            cores = int(rng.choice(cores_opts, p=weights))
            runtime = _draw_runtime(rng, p, config.horizon)
            start = int(rng.integers(0, config.horizon - runtime, endpoint=True))
            drawn.append((start, len(drawn), cores, runtime, entry))

    width = max(5, len(str(len(drawn))))
    busy: list[list[tuple[int, int]]] = [[] for _ in range(m.node_count)]
    jobs = []
    for start, idx, cores, runtime, entry in sorted(drawn, key=lambda d: (d[0], d[1])):
        job_id = f"J{idx:0{width}d}"
        need = -(-cores // m.cores_per_node)
        if need > m.node_count:
            raise CapacityExceeded(
                f"{job_id} needs {need} nodes, the machine has {m.node_count}")
        t, nodes = _first_fit(busy, start, runtime, need, config.horizon)
        if nodes is None:
            raise CapacityExceeded(
                f"{job_id} ({cores} cores, {runtime} s) cannot be placed within the horizon")
        for n in nodes:
            busy[n].append((t, t + runtime))
        jobs.append(JobRecord(job_id, entry.owner_group, entry.profile.name, cores,
                              tuple(nodes), t, t + runtime))
    jobs.sort(key=lambda j: j.job_id)
    return jobs


def _first_fit(busy, start, runtime, need, horizon):
    ends = sorted({e for intervals in busy for _, e in intervals if e > start})
    for t in [start] + ends:
        if t + runtime > horizon:
            break
        free = [n for n, intervals in enumerate(busy)
                if all(e <= t or s >= t + runtime for s, e in intervals)]
        if len(free) >= need:
            return t, free[:need]
    return None, None


# -- counters ---------------------------------------------------------------

def _stream(seed: int, job_id: str, core: int, cycle_ts: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(job_id.encode()), core, cycle_ts])


def sample_counters(
    profile: WorkloadProfile,
    job_id: str,
    core: int,
    cycle_ts: int,
    seed: int,
    window: float = 1.0,
) -> CounterSample:
    """One core's counters for one window, deterministic in (seed, job, core, cycle).

    Property targets are drawn from the profile (clipped to their physical
    ranges) and realized with a fixed 10**9 instructions per window.
    """
    rng = _stream(seed, job_id, core, cycle_ts)
    cpi, misp, rate, avx = rng.normal(
        (profile.cpi_mean, profile.mispredict_mean, profile.flops_rate_mean,
         profile.avx_fraction_mean),
        (profile.cpi_sd, profile.mispredict_sd, profile.flops_rate_sd,
         profile.avx_fraction_sd),
    )
    cpi = max(cpi, _CPI_FLOOR)
    misp = min(max(misp, 0.0), 1.0)
    rate = max(rate, 0.0)
    avx = min(max(avx, 0.0), 1.0)
    ins = INSTRUCTIONS_PER_WINDOW
    fp_total = int(round(rate * window))
    fp_avx = int(round(fp_total * avx))
    return CounterSample(
        cycles=int(round(cpi * ins)),
        instructions=ins,
        branch_mispredictions=int(round(misp * ins)),
        fp_scalar_ops=fp_total - fp_avx,
        fp_avx_ops=fp_avx,
        window=window,
    )


class SyntheticCounters:
    """Counter source for the agents, keyed by each job's app tag.

    With ``record=True`` every emitted sample is kept in ``emitted`` under
    ``(job_id, node, core, cycle_ts)`` so tests can pool the raw values.
    """

    def __init__(self, workloads: Mapping[str, WorkloadProfile], cores_per_node: int,
                 seed: int, window: float = 1.0, record: bool = False):
        self.workloads = dict(workloads)
        self.cores_per_node = cores_per_node
        self.seed = seed
        self.window = window
        self.emitted: Optional[dict] = {} if record else None

    def __call__(self, job: JobRecord, node: int, core: int, cycle_ts: int) -> CounterSample:
        sample = sample_counters(self.workloads[job.app_tag], job.job_id,
                                 node * self.cores_per_node + core, cycle_ts,
                                 self.seed, self.window)
        if self.emitted is not None:
            self.emitted[(job.job_id, node, core, cycle_ts)] = sample
        return sample


# -- runs -------------------------------------------------------------------

def simulate_cycles(
    config: SimConfig,
    jobs: Sequence[JobRecord],
    counters=None,
    topology: Optional[TreeTopology] = None,
    scheduling_seed: int = 0,
) -> Iterator[CycleResult]:
    """Run every cycle ``0, interval, ...`` up to the horizon over ``jobs``."""
    m = config.machine
    table = JobTable(jobs, m.cores_per_node)
    if topology is None:
        topology = build_tree(m.node_count, config.collector_fanout, config.sync_fanout)
    if counters is None:
        counters = SyntheticCounters(config.workloads, m.cores_per_node, config.seed,
                                     config.window)
    for ts in range(0, config.horizon + 1, config.interval):
        yield run_cycle(topology, ts, table, counters, deadline=config.deadline,
                        interval=config.interval, down_nodes=config.down_nodes(ts),
                        scheduling_seed=scheduling_seed)


def run_simulation(config: SimConfig, out_dir, overwrite: bool = False,
                   counters=None) -> tuple[Path, Path]:
    """Generate jobs, run all cycles and persist ``jobs.tsv`` / ``properties.tsv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs_path, store_path = out / JOBS_FILE, out / PROPERTIES_FILE
    for p in (jobs_path, store_path):
        if p.exists():
            if not overwrite:
                raise FileExistsError(f"{p} exists; refusing to overwrite")
            p.unlink()
    jobs = generate_jobs(config)
    write_jobs(jobs_path, jobs)
    log.info("generated %d jobs on %d nodes", len(jobs), config.machine.node_count)
    with PropertyStore(store_path) as store:
        for result in simulate_cycles(config, jobs, counters):
            for job_id, metric, summary in result.records:
                store.append(StoreRecord(result.cycle_ts, job_id, metric, summary))
            if result.missing_nodes:
                log.debug("cycle %d: %d nodes missing", result.cycle_ts,
                          len(result.missing_nodes))
    return jobs_path, store_path


# -- config file ------------------------------------------------------------

_GLOBAL_KEYS = {"interval": int, "horizon": int, "seed": int, "window": float,
                "deadline": float, "collector_fanout": int, "sync_fanout": int}
_PROFILE_FLOATS = ("cpi_mean", "cpi_sd", "mispredict_mean", "mispredict_sd",
                   "flops_rate_mean", "flops_rate_sd", "avx_fraction_mean",
                   "avx_fraction_sd", "runtime_mu", "runtime_sigma", "runtime_min",
                   "runtime_max")


def _parse_cores(text: str) -> tuple[tuple[int, float], ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        cores, _, weight = part.partition(":")
        out.append((int(cores), float(weight) if weight else 1.0))
    return tuple(out)


def parse_config(text: str) -> SimConfig:
    """Parse the flat ``key = value`` format.

    Top-level keys set run parameters; ``[machine NAME]``, ``[profile NAME]``
    and ``[fault]`` open blocks. ``#`` starts a comment.
    """
    blocks: list[tuple[str, Optional[str], dict, int]] = [("global", None, {}, 0)]
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: unterminated block header")
            head = line[1:-1].split()
            if not head or head[0] not in ("machine", "profile", "fault"):
                raise ConfigError(f"line {lineno}: unknown block {line}")
            if head[0] == "fault" and len(head) != 1:
                raise ConfigError(f"line {lineno}: [fault] takes no name")
            if head[0] != "fault" and len(head) != 2:
                raise ConfigError(f"line {lineno}: [{head[0]} NAME] needs one name")
            blocks.append((head[0], head[1] if len(head) > 1 else None, {}, lineno))
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key = key.strip()
        if key in blocks[-1][2]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        blocks[-1][2][key] = (value.strip(), lineno)

    try:
        return _build_config(blocks)
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


def _build_config(blocks) -> SimConfig:
    def take(values, key, conv, default=None):
        if key not in values:
            return default
        text, lineno = values.pop(key)
        try:
            return conv(text)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {text!r}") from None

    def leftovers(kind, values):
        if values:
            key, (_, lineno) = next(iter(values.items()))
            raise ConfigError(f"line {lineno}: unknown key {key!r} in {kind}")

    glob = dict(blocks[0][2])
    kwargs = {k: take(glob, k, conv) for k, conv in _GLOBAL_KEYS.items() if k in glob}
    leftovers("top level", glob)

    machine = None
    profiles, faults = [], []
    for kind, name, values, lineno in blocks[1:]:
        values = dict(values)
        if kind == "machine":
            if machine is not None:
                raise ConfigError(f"line {lineno}: more than one [machine] block")
            nodes = take(values, "node_count", int, 64)
            cpn = take(values, "cores_per_node", int)
            machine = (MachinePreset(name, cpn, nodes) if cpn is not None
                       else machine_preset(name, nodes))
            leftovers(f"[machine {name}]", values)
        elif kind == "profile":
            base = take(values, "preset", str, name)
            profile = workload_preset(base).with_(name=name)
            changes = {k: take(values, k, float) for k in _PROFILE_FLOATS if k in values}
            median = take(values, "runtime_median", float)
            if median is not None:
                changes["runtime_mu"] = math.log(median)
            cores = take(values, "cores", _parse_cores)
            if cores is not None:
                changes["cores_dist"] = cores
            profile = profile.with_(**changes)
            count = take(values, "jobs", int, 0)
            owner = take(values, "owner", str, "users")
            leftovers(f"[profile {name}]", values)
            profiles.append(ProfileEntry(profile, count, owner))
        else:
            node = take(values, "node", int)
            if node is None:
                raise ConfigError(f"line {lineno}: [fault] needs a node")
            faults.append(FaultSpec(node, take(values, "from_cycle", int, 0),
                                    take(values, "to_cycle", int, 2**62),
                                    take(values, "kind", str, "AGENT_DOWN")))
            leftovers("[fault]", values)
    if machine is None:
        machine = machine_preset("phase1_thin")
    return SimConfig(machine=machine, profiles=tuple(profiles), faults=tuple(faults), **kwargs)


def load_config(path) -> SimConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
