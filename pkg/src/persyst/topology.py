"""The agent tree: PerSyst agents per node, collectors, SyncAgent layers."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional

__all__ = [
    "Role",
    "AgentSpec",
    "TreeTopology",
    "Violation",
    "build_tree",
    "validate",
    "dump_tree",
    "load_tree",
    "DEFAULT_COLLECTOR_FANOUT",
    "DEFAULT_SYNC_FANOUT",
]

DEFAULT_COLLECTOR_FANOUT = 512
DEFAULT_SYNC_FANOUT = 64


class Role(enum.Enum):
    SYNC_FRONTEND = "SYNC_FRONTEND"
    SYNC_MIDDLE = "SYNC_MIDDLE"
    COLLECTOR = "COLLECTOR"
    PERSYST = "PERSYST"

    @property
    def is_sync(self) -> bool:
        return self in (Role.SYNC_FRONTEND, Role.SYNC_MIDDLE)


@dataclass(frozen=True)
class AgentSpec:
    id: str
    role: Role
    parent: Optional[str]
    children: tuple[str, ...] = ()
    node_id: Optional[int] = None


@dataclass(frozen=True)
class TreeTopology:
    agents: Mapping[str, AgentSpec]
    collector_fanout: int
    sync_fanout: int
    _nodes: dict = field(default=None, init=False, repr=False, compare=False)

    @property
    def root(self) -> AgentSpec:
        roots = [a for a in self.agents.values() if a.parent is None]
        if len(roots) != 1:
            raise ValueError(f"topology has {len(roots)} roots")
        return roots[0]

    def persyst_for_node(self, node_id: int) -> AgentSpec:
        if self._nodes is None:
            object.__setattr__(
                self,
                "_nodes",
                {a.node_id: a for a in self.agents.values() if a.role is Role.PERSYST},
            )
        return self._nodes[node_id]

    @property
    def node_ids(self) -> list[int]:
        return sorted(a.node_id for a in self.agents.values() if a.role is Role.PERSYST)

    def by_role(self, role: Role) -> list[AgentSpec]:
        return sorted((a for a in self.agents.values() if a.role is role), key=lambda a: a.id)

    def walk(self) -> Iterator[AgentSpec]:
        """Breadth-first from the front end, children in canonical order."""
        queue = [self.root]
        while queue:
            agent = queue.pop(0)
            yield agent
            queue.extend(self.agents[c] for c in agent.children)

    def descendant_nodes(self, agent_id: str) -> list[int]:
        agent = self.agents[agent_id]
        if agent.role is Role.PERSYST:
            return [agent.node_id]
        out: list[int] = []
        for child in agent.children:
            out.extend(self.descendant_nodes(child))
        return out

    @property
    def middle_layers(self) -> int:
        depth, agent = 0, self.root
        while agent.children and self.agents[agent.children[0]].role is Role.SYNC_MIDDLE:
            depth += 1
            agent = self.agents[agent.children[0]]
        return depth


def _ids(prefix: str, count: int) -> list[str]:
    width = max(4, len(str(count - 1)))
    return [f"{prefix}{i:0{width}d}" for i in range(count)]


def _chunks(items: list, size: int) -> list[list]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def build_tree(
    node_count: int,
    collector_fanout: int = DEFAULT_COLLECTOR_FANOUT,
    sync_fanout: int = DEFAULT_SYNC_FANOUT,
) -> TreeTopology:
    """Build the canonical agent tree for ``node_count`` compute nodes.

    Nodes are grouped into collectors in ascending order, then SyncAgent
    layers of ``ceil(previous / sync_fanout)`` agents are stacked until a
    single front end remains.
    """
    for name, v in (("node_count", node_count), ("collector_fanout", collector_fanout),
                    ("sync_fanout", sync_fanout)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    n_collectors = -(-node_count // collector_fanout)
    if sync_fanout == 1 and n_collectors > 1:
        # every layer would be as wide as the one below it
        raise ValueError("sync_fanout=1 cannot reduce more than one collector to a front end")

    parent: dict[str, Optional[str]] = {}
    children: dict[str, list[str]] = {}
    roles: dict[str, Role] = {}
    node_of: dict[str, int] = {}

    leaves = _ids("persyst-", node_count)
    for i, aid in enumerate(leaves):
        roles[aid] = Role.PERSYST
        node_of[aid] = i
        children[aid] = []

    layer = leaves
    groups = _chunks(layer, collector_fanout)
    upper = _ids("collector-", len(groups))
    role = Role.COLLECTOR
    level = 0
    while True:
        for aid, group in zip(upper, groups):
            roles[aid] = role
            children[aid] = group
            for c in group:
                parent[c] = aid
        layer = upper
        if role.is_sync and len(layer) == 1:
            break
        groups = _chunks(layer, sync_fanout)
        level += 1
        if len(groups) == 1:
            upper, role = ["sync-front"], Role.SYNC_FRONTEND
        else:
            upper, role = _ids(f"sync-l{level}-", len(groups)), Role.SYNC_MIDDLE

    parent["sync-front"] = None
    agents = {
        aid: AgentSpec(aid, roles[aid], parent[aid], tuple(children[aid]), node_of.get(aid))
        for aid in sorted(roles)
    }
    return TreeTopology(agents, collector_fanout, sync_fanout)


@dataclass(frozen=True)
class Violation:
    kind: str
    agent_ids: tuple[str, ...]

    def __str__(self):
        return f"{self.kind}: {', '.join(self.agent_ids)}"


_ALLOWED_CHILDREN = {
    Role.PERSYST: (),
    Role.COLLECTOR: (Role.PERSYST,),
    Role.SYNC_MIDDLE: (Role.COLLECTOR, Role.SYNC_MIDDLE),
    Role.SYNC_FRONTEND: (Role.COLLECTOR, Role.SYNC_MIDDLE),
}


def validate(tree: TreeTopology) -> list[Violation]:
    """Return every violated tree invariant; an empty list means the tree is ok."""
    out: list[Violation] = []
    agents = tree.agents

    def add(kind, ids):
        out.append(Violation(kind, tuple(sorted(ids))))

    roots = [a.id for a in agents.values() if a.parent is None]
    if not roots:
        add("no root", [])
    elif len(roots) > 1:
        add("multiple roots", roots)
    bad_root = [r for r in roots if agents[r].role is not Role.SYNC_FRONTEND]
    if bad_root:
        add("root role", bad_root)
    stray_front = [a.id for a in agents.values()
                   if a.role is Role.SYNC_FRONTEND and a.parent is not None]
    if stray_front:
        add("frontend has parent", stray_front)

    dangling = [a.id for a in agents.values()
                if (a.parent is not None and a.parent not in agents)
                or any(c not in agents for c in a.children)]
    if dangling:
        add("dangling reference", dangling)

    mismatched, layer, order, fanout = [], [], [], []
    for a in agents.values():
        kids = [agents[c] for c in a.children if c in agents]
        for k in kids:
            if k.parent != a.id:
                mismatched.append(k.id)
            if k.role not in _ALLOWED_CHILDREN[a.role]:
                layer.append(k.id)
        if a.parent in agents and a.id not in agents[a.parent].children:
            mismatched.append(a.id)
        if list(a.children) != sorted(a.children):
            order.append(a.id)
        limit = (0 if a.role is Role.PERSYST
                 else tree.collector_fanout if a.role is Role.COLLECTOR
                 else tree.sync_fanout)
        if len(a.children) > limit:
            fanout.append(a.id)
    for kind, ids in (("parent mismatch", mismatched), ("layer order", layer),
                      ("child order", order), ("fanout", fanout)):
        if ids:
            add(kind, set(ids))

    persyst = [a for a in agents.values() if a.role is Role.PERSYST]
    no_node = [a.id for a in persyst if a.node_id is None]
    if no_node:
        add("missing node id", no_node)
    seen: dict[int, list[str]] = {}
    for a in persyst:
        if a.node_id is not None:
            seen.setdefault(a.node_id, []).append(a.id)
    dup = [i for ids in seen.values() if len(ids) > 1 for i in ids]
    if dup:
        add("duplicate node", dup)
    node_on_other = [a.id for a in agents.values()
                     if a.role is not Role.PERSYST and a.node_id is not None]
    if node_on_other:
        add("node id on non-leaf", node_on_other)

    if len(roots) == 1 and not dangling:
        stack = [roots[0]]
        visited = set()
        while stack:
            aid = stack.pop()
            if aid in visited:
                add("cycle", [aid])
                break
            visited.add(aid)
            stack.extend(agents[aid].children)
        unreachable = set(agents) - visited
        if unreachable:
            add("unreachable", unreachable)
    return out


def dump_tree(tree: TreeTopology) -> str:
    """One agent per line: ``id role parent child_count node_id``, tab separated."""
    lines = []
    for a in tree.walk():
        fields = [
            a.id,
            a.role.value,
            a.parent or "-",
            str(len(a.children)),
            "-" if a.node_id is None else str(a.node_id),
        ]
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


def load_tree(text: str, collector_fanout: int = DEFAULT_COLLECTOR_FANOUT,
              sync_fanout: int = DEFAULT_SYNC_FANOUT) -> TreeTopology:
    """Inverse of :func:`dump_tree`. Child lists are rebuilt from parent links."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        rows.append(parts)
    kids: dict[str, list[str]] = {r[0]: [] for r in rows}
    for aid, _, par, _, _ in rows:
        if par != "-":
            kids.setdefault(par, []).append(aid)
    agents = {}
    for aid, role, par, count, node in rows:
        ch = tuple(sorted(kids[aid]))
        if int(count) != len(ch):
            raise ValueError(f"{aid}: child_count {count} but {len(ch)} children listed")
        agents[aid] = AgentSpec(aid, Role(role), None if par == "-" else par, ch,
                                None if node == "-" else int(node))
    return TreeTopology(agents, collector_fanout, sync_fanout)
