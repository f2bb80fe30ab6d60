"""Synchronized measurement cycles over an agent tree.

Each agent is a small state machine that handles one message at a time.
A :class:`Scheduler` delivers messages in per-pair FIFO order, picking among
simultaneously deliverable pairs with a seeded RNG, so any interleaving the
protocol could see in practice can be replayed. Aggregation always walks
children in canonical (ascending id) order, which makes the result
independent of the interleaving.
"""

from __future__ import annotations

import enum
import heapq
import random
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .properties import KINDS, CounterSample, PropertyKind, ZeroDenominator, derive_value
from .quantiles import QuantileSummary, exact_summary, merge_estimate
from .store import JobRecord, JobTable
from .topology import Role, TreeTopology

__all__ = [
    "DEFAULT_INTERVAL",
    "MsgKind",
    "AgentMessage",
    "Report",
    "CycleResult",
    "NodeDown",
    "MixedKey",
    "CounterSource",
    "check_cycle",
    "persyst_measure",
    "collector_aggregate",
    "sync_merge",
    "Scheduler",
    "run_cycle",
]

DEFAULT_INTERVAL = 600

CounterSource = Callable[[JobRecord, int, int, int], CounterSample]
"""``(job, node, local_core, cycle_ts) -> CounterSample``"""


class NodeDown(RuntimeError):
    pass


class MixedKey(ValueError):
    pass


class MsgKind(enum.Enum):
    MEASURE = "MEASURE"
    REPORT = "REPORT"
    CYCLE_DONE = "CYCLE_DONE"
    TIMEOUT = "TIMEOUT"


@dataclass(frozen=True)
class Report:
    cycle_ts: int
    job_id: str
    metric: PropertyKind
    summary: QuantileSummary
    values: Optional[tuple[float, ...]] = None

    @property
    def key(self):
        return (self.cycle_ts, self.job_id, self.metric)


@dataclass(frozen=True)
class AgentMessage:
    kind: MsgKind
    cycle_ts: int
    sender: str
    receiver: str
    report: Optional[Report] = None
    missing: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind is MsgKind.REPORT:
            if self.report is None or self.report.cycle_ts != self.cycle_ts:
                raise ValueError("REPORT must carry a report for its own cycle")


@dataclass(frozen=True)
class CycleResult:
    cycle_ts: int
    records: tuple[tuple[str, PropertyKind, QuantileSummary], ...]
    missing_nodes: tuple[int, ...] = ()

    def record(self, job_id: str, metric: PropertyKind) -> Optional[QuantileSummary]:
        for j, m, s in self.records:
            if j == job_id and m is metric:
                return s
        return None


def check_cycle(cycle_ts: int, interval: int) -> int:
    if interval <= 0:
        raise ValueError("interval must be positive")
    if cycle_ts % interval:
        raise ValueError(f"cycle {cycle_ts} is not aligned to the {interval}s interval")
    return cycle_ts


def _record_order(key):
    job_id, metric = key
    return (job_id, KINDS.index(metric))


# -- per-layer operations ---------------------------------------------------

def persyst_measure(
    node: int,
    cycle_ts: int,
    job_table: JobTable,
    counter_source: CounterSource,
    down: bool = False,
) -> list[Report]:
    """Measure every core of ``node`` and summarize exactly per (job, property).

    Idle windows (zero denominator) are left out, so a summary's count is
    the number of cores that produced a value. Cores without a job are not
    reported.
    """
    if down:
        raise NodeDown(f"PerSyst agent on node {node} is down")
    out = []
    for job_id, cores in sorted(job_table.cores_on(node, cycle_ts).items()):
        job = job_table.jobs[job_id]
        samples = [counter_source(job, node, core, cycle_ts) for core in cores]
        for kind in KINDS:
            vals = []
            for s in samples:
                try:
                    vals.append(derive_value(kind, s))
                except ZeroDenominator:
                    continue
            if vals:
                out.append(Report(cycle_ts, job_id, kind, exact_summary(vals), tuple(vals)))
    return out


def _same_key(reports: Sequence[Report]):
    if not reports:
        raise ValueError("no reports to aggregate")
    key = reports[0].key
    for r in reports[1:]:
        if r.key != key:
            raise MixedKey(f"cannot aggregate {r.key} with {key}")
    return key


def collector_aggregate(reports: Sequence[Report], raw_values_available: bool = True) -> QuantileSummary:
    """Exact pooled summary when raw values travel with the reports, else an estimate."""
    _same_key(reports)
    if len(reports) == 1:
        return reports[0].summary
    if raw_values_available and all(r.values is not None for r in reports):
        return exact_summary(np.concatenate([np.asarray(r.values, dtype=float) for r in reports]))
    return merge_estimate([r.summary for r in reports])


def sync_merge(reports: Sequence[Report]) -> QuantileSummary:
    _same_key(reports)
    return merge_estimate([r.summary for r in reports])


# -- message scheduling -----------------------------------------------------

class Scheduler:
    """Discrete-event message delivery, FIFO per (sender, receiver) pair.

    Among messages deliverable at the same simulated time one pair is chosen
    with ``random.Random(seed)``. Timers fire only after every message due
    at or before their time has been delivered.
    """

    def __init__(self, seed: int = 0, latency: Optional[Callable[[str, str], float]] = None):
        self.rng = random.Random(seed)
        self.latency = latency or (lambda s, r: 0.0)
        self.now = 0.0
        self._queues: dict[tuple[str, str], deque] = {}
        self._timers: list = []
        self._timer_seq = 0
        self.delivered = 0

    def send(self, msg: AgentMessage) -> None:
        pair = (msg.sender, msg.receiver)
        q = self._queues.get(pair)
        if q is None:
            q = self._queues[pair] = deque()
        at = self.now + self.latency(msg.sender, msg.receiver)
        if q and q[-1][0] > at:
            at = q[-1][0]
        q.append((at, msg))

    def set_timer(self, agent_id: str, at: float, cycle_ts: int) -> None:
        self._timer_seq += 1
        heapq.heappush(self._timers, (at, self._timer_seq, agent_id, cycle_ts))

    def run(self, agents: Mapping[str, "_Agent"]) -> None:
        queues = self._queues
        while True:
            t_msg = None
            ready: list = []
            for pair, q in queues.items():
                t = q[0][0]
                if t_msg is None or t < t_msg:
                    t_msg, ready = t, [pair]
                elif t == t_msg:
                    ready.append(pair)
            t_timer = self._timers[0][0] if self._timers else None
            if t_msg is None and t_timer is None:
                return
            if t_msg is not None and (t_timer is None or t_msg <= t_timer):
                pair = ready[0] if len(ready) == 1 else self.rng.choice(sorted(ready))
                q = queues[pair]
                self.now, msg = q.popleft()
                if not q:
                    del queues[pair]
                self.delivered += 1
                target = agents.get(msg.receiver)
                if target is not None:
                    target.handle(msg, self)
            else:
                at, _, aid, cycle_ts = heapq.heappop(self._timers)
                self.now = at
                agents[aid].handle(
                    AgentMessage(MsgKind.TIMEOUT, cycle_ts, aid, aid), self)


# -- agents -----------------------------------------------------------------

class _Agent:
    def __init__(self, agent_id: str, parent: Optional[str]):
        self.id = agent_id
        self.parent = parent

    def handle(self, msg: AgentMessage, net: Scheduler) -> None:
        raise NotImplementedError


class _PersystAgent(_Agent):
    def __init__(self, agent_id, parent, node, job_table, counter_source, down):
        super().__init__(agent_id, parent)
        self.node = node
        self.job_table = job_table
        self.counter_source = counter_source
        self.down = down

    def handle(self, msg, net):
        if msg.kind is not MsgKind.MEASURE:
            return
        try:
            reports = persyst_measure(self.node, msg.cycle_ts, self.job_table,
                                      self.counter_source, self.down)
        except NodeDown:
            return
        for r in reports:
            net.send(AgentMessage(MsgKind.REPORT, msg.cycle_ts, self.id, self.parent, r))
        net.send(AgentMessage(MsgKind.CYCLE_DONE, msg.cycle_ts, self.id, self.parent))


class _AggregatingAgent(_Agent):
    def __init__(self, agent_id, parent, children, subtree_nodes, timeout, exact):
        super().__init__(agent_id, parent)
        self.children = tuple(children)
        self.subtree_nodes = subtree_nodes
        self.timeout = timeout
        self.exact = exact
        self.cycle_ts: Optional[int] = None
        self.finished = False
        self.reports: dict[str, list[Report]] = {}
        self.done: dict[str, tuple[int, ...]] = {}
        self.result: Optional[CycleResult] = None

    def handle(self, msg, net):
        kind = msg.kind
        if kind is MsgKind.MEASURE:
            self.cycle_ts = msg.cycle_ts
            self.finished = False
            self.reports = {c: [] for c in self.children}
            self.done = {}
            for c in self.children:
                net.send(AgentMessage(MsgKind.MEASURE, msg.cycle_ts, self.id, c))
            net.set_timer(self.id, net.now + self.timeout, msg.cycle_ts)
            return
        # late or foreign-cycle traffic is dropped, never carried forward
        if self.finished or msg.cycle_ts != self.cycle_ts:
            return
        if kind is MsgKind.TIMEOUT:
            self._finish(net)
        elif msg.sender not in self.reports or msg.sender in self.done:
            return
        elif kind is MsgKind.REPORT:
            self.reports[msg.sender].append(msg.report)
        elif kind is MsgKind.CYCLE_DONE:
            self.done[msg.sender] = msg.missing
            if len(self.done) == len(self.children):
                self._finish(net)

    def _finish(self, net):
        self.finished = True
        missing: list[int] = []
        grouped: dict[tuple, list[Report]] = {}
        for c in self.children:
            if c not in self.done:
                missing.extend(self.subtree_nodes[c])
                continue
            missing.extend(self.done[c])
            for r in self.reports[c]:
                grouped.setdefault((r.job_id, r.metric), []).append(r)
        out = []
        for key in sorted(grouped, key=_record_order):
            reps = grouped[key]
            summary = collector_aggregate(reps) if self.exact else sync_merge(reps)
            out.append(Report(self.cycle_ts, key[0], key[1], summary))
        missing_t = tuple(sorted(missing))
        if self.parent is None:
            self.result = CycleResult(
                self.cycle_ts, tuple((r.job_id, r.metric, r.summary) for r in out), missing_t)
            return
        for r in out:
            net.send(AgentMessage(MsgKind.REPORT, self.cycle_ts, self.id, self.parent, r))
        net.send(AgentMessage(MsgKind.CYCLE_DONE, self.cycle_ts, self.id, self.parent,
                              missing=missing_t))


def _heights(topology: TreeTopology) -> dict[str, int]:
    heights: dict[str, int] = {}

    def h(aid):
        if aid not in heights:
            kids = topology.agents[aid].children
            heights[aid] = 0 if not kids else 1 + max(h(c) for c in kids)
        return heights[aid]

    h(topology.root.id)
    return heights


def run_cycle(
    topology: TreeTopology,
    cycle_ts: int,
    job_table: JobTable,
    counter_source: CounterSource,
    deadline: Optional[float] = None,
    interval: int = DEFAULT_INTERVAL,
    down_nodes: Iterable[int] = (),
    latency: Optional[Mapping[int, float]] = None,
    scheduling_seed: int = 0,
) -> CycleResult:
    """Run one synchronized measurement cycle and return the front end's output.

    ``deadline`` (default ``interval / 10``) is the front end's cut-off,
    measured from the broadcast. Lower layers time out proportionally
    earlier, by height in the tree, so their partial results still reach
    the front end in time. ``latency`` delays a node's uplink to its
    collector by that many seconds; a node whose reports arrive after the
    collector's cut-off is recorded as missing.
    """
    check_cycle(cycle_ts, interval)
    if deadline is None:
        deadline = interval / 10
    if deadline <= 0:
        raise ValueError("deadline must be positive")
    down = set(down_nodes)
    heights = _heights(topology)
    root = topology.root
    top = heights[root.id]

    agents: dict[str, _Agent] = {}
    for spec in topology.agents.values():
        if spec.role is Role.PERSYST:
            agents[spec.id] = _PersystAgent(spec.id, spec.parent, spec.node_id, job_table,
                                            counter_source, spec.node_id in down)
    for spec in topology.agents.values():
        if spec.role is not Role.PERSYST:
            sub = {c: tuple(topology.descendant_nodes(c)) for c in spec.children}
            agents[spec.id] = _AggregatingAgent(
                spec.id, spec.parent, spec.children, sub,
                timeout=deadline * heights[spec.id] / top,
                exact=spec.role is Role.COLLECTOR,
            )

    node_latency = dict(latency or {})
    leaf_node = {aid: a.node for aid, a in agents.items() if isinstance(a, _PersystAgent)}

    def link_latency(sender, receiver):
        node = leaf_node.get(sender)
        return node_latency.get(node, 0.0) if node is not None else 0.0

    net = Scheduler(scheduling_seed, link_latency)
    net.send(AgentMessage(MsgKind.MEASURE, cycle_ts, "harness", root.id))
    net.run(agents)
    result = agents[root.id].result
    assert result is not None, "front end never finished the cycle"
    return result
