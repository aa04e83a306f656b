"""Data graph, cascades, and diffusion-topology construction.

A cascade is an ordered sequence of distinct activated nodes over a static
directed graph.  At time step t the "activation attempt" edges seen so far
form a DAG: every edge runs from a node activated before t to a node that is
either still inactive or was activated later than the source.  These DAGs
grow monotonically as the cascade proceeds, so consecutive snapshots share a
single append-only timeline instead of copying edge sets at every step.
"""

from __future__ import annotations

import logging
import threading
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DataError

log = logging.getLogger(__name__)

NodeId = int


@dataclass(frozen=True)
class DataGraph:
    """Immutable directed graph with dense zero-based node ids."""

    labels: tuple[str, ...]
    out: tuple[tuple[NodeId, ...], ...]   # sorted successor lists
    in_: tuple[tuple[NodeId, ...], ...]   # sorted predecessor lists
    edges: frozenset[tuple[NodeId, NodeId]]

    @property
    def node_count(self) -> int:
        return len(self.labels)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def has_edge(self, u: NodeId, v: NodeId) -> bool:
        return (u, v) in self.edges

    def id_of(self, label: str) -> NodeId:
        try:
            return self._label_index()[label]
        except KeyError:
            raise DataError(f"unknown node label {label!r}") from None

    def _label_index(self) -> dict[str, NodeId]:
        # Cached on first use; the dataclass is frozen so build lazily.
        idx = getattr(self, "_label_idx", None)
        if idx is None:
            idx = {lab: i for i, lab in enumerate(self.labels)}
            object.__setattr__(self, "_label_idx", idx)
        return idx

    @classmethod
    def from_edges(
        cls,
        node_count: int,
        edges: Iterable[tuple[NodeId, NodeId]],
        labels: Sequence[str] | None = None,
    ) -> "DataGraph":
        """Build a graph from (src, dst) id pairs; labels default to str(id)."""
        if labels is None:
            labels = tuple(str(i) for i in range(node_count))
        else:
            labels = tuple(labels)
            if len(labels) != node_count:
                raise ValueError("labels length must equal node_count")
        edge_set = set()
        for u, v in edges:
            if not (0 <= u < node_count and 0 <= v < node_count):
                raise ValueError(f"edge ({u}, {v}) out of range for {node_count} nodes")
            if u == v:
                raise DataError(f"self-loop on node {u}")
            edge_set.add((u, v))
        out: list[list[NodeId]] = [[] for _ in range(node_count)]
        in_: list[list[NodeId]] = [[] for _ in range(node_count)]
        for u, v in edge_set:
            out[u].append(v)
            in_[v].append(u)
        return cls(
            labels=labels,
            out=tuple(tuple(sorted(s)) for s in out),
            in_=tuple(tuple(sorted(s)) for s in in_),
            edges=frozenset(edge_set),
        )


def load_graph(text: str, undirected: bool = False) -> DataGraph:
    """Parse a whitespace-separated edge list into a DataGraph.

    Lines starting with '#' and blank lines are ignored.  Node labels are
    interned to dense ids in first-appearance order.  With ``undirected``
    each line yields both directions.  Duplicate edges are dropped with a
    warning; self-loops and malformed lines raise DataError naming the line.
    """
    label_to_id: dict[str, NodeId] = {}
    edge_set: set[tuple[NodeId, NodeId]] = set()
    duplicates = 0

    def intern(label: str) -> NodeId:
        if label not in label_to_id:
            label_to_id[label] = len(label_to_id)
        return label_to_id[label]

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"graph line {lineno}: expected 'src dst', got {line!r}")
        src, dst = parts
        if src == dst:
            raise DataError(f"graph line {lineno}: self-loop on node {src!r}")
        u, v = intern(src), intern(dst)
        pairs = [(u, v), (v, u)] if undirected else [(u, v)]
        for pair in pairs:
            if pair in edge_set:
                duplicates += 1
            else:
                edge_set.add(pair)

    if duplicates:
        log.warning("dropped %d duplicate edge(s) while loading graph", duplicates)

    labels = tuple(sorted(label_to_id, key=label_to_id.__getitem__))
    return DataGraph.from_edges(len(labels), edge_set, labels)


def load_graph_file(path, undirected: bool = False) -> DataGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return load_graph(fh.read(), undirected=undirected)


def save_graph_file(path, graph: DataGraph, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for u, v in sorted(graph.edges):
            fh.write(f"{graph.labels[u]} {graph.labels[v]}\n")


def save_labels(path, graph: DataGraph, header: str | None = None) -> None:
    """Persist the label <-> id mapping as two whitespace-separated columns."""
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for i, lab in enumerate(graph.labels):
            fh.write(f"{lab} {i}\n")


def load_labels(path) -> tuple[str, ...]:
    labels: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"labels line {lineno}: expected 'label id', got {line!r}")
            labels[int(parts[1])] = parts[0]
    if sorted(labels) != list(range(len(labels))):
        raise DataError("label mapping ids are not dense zero-based")
    return tuple(labels[i] for i in range(len(labels)))


@dataclass(frozen=True)
class Cascade:
    """Ordered sequence of distinct activated nodes; timestamps are implicit 1..T."""

    nodes: tuple[NodeId, ...]

    def __post_init__(self):
        if len(self.nodes) < 1:
            raise ValueError("cascade must contain at least one node")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("cascade nodes must be distinct")

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def __getitem__(self, i):
        return self.nodes[i]


def load_cascades(text: str, graph: DataGraph) -> list[Cascade]:
    """Parse one cascade per line (labels in activation order), validated against graph."""
    idx = {lab: i for i, lab in enumerate(graph.labels)}
    cascades: list[Cascade] = []
    unknown: dict[str, int] = {}  # offending label -> first line seen
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        labels = line.split()
        ids = []
        for lab in labels:
            if lab not in idx:
                unknown.setdefault(lab, lineno)
                continue
            ids.append(idx[lab])
        if unknown:
            continue  # keep scanning so the diagnostic lists every offender
        if len(set(ids)) != len(ids):
            raise DataError(f"cascade line {lineno}: repeated node in {line!r}")
        cascades.append(Cascade(tuple(ids)))
    if unknown:
        listing = ", ".join(f"{lab!r} (line {ln})" for lab, ln in sorted(unknown.items()))
        raise DataError(f"cascade nodes not present in graph: {listing}")
    return cascades


def load_cascades_file(path, graph: DataGraph) -> list[Cascade]:
    with open(path, "r", encoding="utf-8") as fh:
        return load_cascades(fh.read(), graph)


def save_cascades_file(path, cascades: Iterable[Cascade], graph: DataGraph,
                       header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for cascade in cascades:
            fh.write(" ".join(graph.labels[v] for v in cascade) + "\n")


class _TopologyTimeline:
    """Append-only edge/precedent log shared by the snapshots of one cascade.

    Edges out of the node activated at time t become visible at time t+1.
    Snapshots read only prefixes of the logs fixed by their time stamp, so
    later appends never change what an earlier snapshot observes.
    """

    __slots__ = ("graph", "order", "time_of", "edge_src", "edge_dst",
                 "edge_counts", "prec_nodes", "prec_times", "head_lock")

    def __init__(self, graph: DataGraph):
        self.graph = graph
        self.order: list[NodeId] = []
        self.time_of: dict[NodeId, int] = {}
        self.edge_src: list[NodeId] = []
        self.edge_dst: list[NodeId] = []
        self.edge_counts: list[int] = [0]  # edge_counts[t-1] == |E*_t|
        self.prec_nodes: dict[NodeId, list[NodeId]] = {}
        self.prec_times: dict[NodeId, list[int]] = {}
        # Guards head extension only; snapshot reads touch settled prefixes
        # of the logs and need no lock.
        self.head_lock = threading.Lock()

    @property
    def max_time(self) -> int:
        return len(self.order) + 1

    def append(self, node: NodeId) -> None:
        t = len(self.order) + 1
        self.order.append(node)
        self.time_of[node] = t
        for u in self.graph.out[node]:
            if u in self.time_of:
                continue  # target activated earlier: never an attempt edge
            self.edge_src.append(node)
            self.edge_dst.append(u)
            self.prec_nodes.setdefault(u, []).append(node)
            self.prec_times.setdefault(u, []).append(t + 1)
        self.edge_counts.append(len(self.edge_src))

    def precedents_at(self, v: NodeId, time: int) -> tuple[NodeId, ...]:
        times = self.prec_times.get(v)
        if not times:
            return ()
        k = bisect_right(times, time)
        return tuple(self.prec_nodes[v][:k])

    def branch_copy(self, upto_time: int) -> "_TopologyTimeline":
        fresh = _TopologyTimeline(self.graph)
        for node in self.order[: upto_time - 1]:
            fresh.append(node)
        return fresh


class DiffusionTopology:
    """The DAG of activation attempts at one time step of a cascade.

    Exposes the active prefix Q (nodes activated strictly before ``time``), the
    attempt edge set, and per-node precedent lists ordered by the precedents'
    activation times.  Instances are immutable snapshots.
    """

    __slots__ = ("_timeline", "time")

    def __init__(self, timeline: _TopologyTimeline, time: int):
        self._timeline = timeline
        self.time = time

    @property
    def active_prefix(self) -> tuple[NodeId, ...]:
        return tuple(self._timeline.order[: self.time - 1])

    @property
    def edge_count(self) -> int:
        return self._timeline.edge_counts[self.time - 1]

    @property
    def edges(self) -> frozenset[tuple[NodeId, NodeId]]:
        k = self.edge_count
        tl = self._timeline
        return frozenset(zip(tl.edge_src[:k], tl.edge_dst[:k]))

    def precedents(self, v: NodeId) -> tuple[NodeId, ...]:
        return self._timeline.precedents_at(v, self.time)

    def is_active(self, v: NodeId) -> bool:
        t = self._timeline.time_of.get(v)
        return t is not None and t < self.time

    def __eq__(self, other) -> bool:
        if not isinstance(other, DiffusionTopology):
            return NotImplemented
        return (self.time == other.time
                and self.active_prefix == other.active_prefix
                and self.edges == other.edges)

    def __hash__(self):
        return hash((self.time, self.active_prefix))

    def __repr__(self):
        return (f"DiffusionTopology(t={self.time}, "
                f"active={list(self.active_prefix)}, edges={self.edge_count})")


def build_topology(graph: DataGraph, cascade: Cascade, t: int) -> DiffusionTopology:
    """Construct the diffusion topology of ``cascade`` at time ``t`` from scratch.

    ``t`` may range over 1..T+1; t = T+1 is the topology seen when predicting
    the activation after the full observed prefix.
    """
    if not (1 <= t <= len(cascade) + 1):
        raise ValueError(f"time {t} out of range for cascade of length {len(cascade)}")
    timeline = _TopologyTimeline(graph)
    for node in cascade.nodes[: t - 1]:
        timeline.append(node)
    return DiffusionTopology(timeline, t)


def extend_topology(topo: DiffusionTopology, graph: DataGraph,
                    next_active: NodeId) -> DiffusionTopology:
    """Advance a topology one step by activating ``next_active``.

    Only edges out of ``next_active`` (into not-yet-active targets) are added;
    the result equals a fresh construction at time+1.
    """
    timeline = topo._timeline
    if timeline.graph is not graph:
        raise ValueError("topology was built over a different graph")
    if not (0 <= next_active < graph.node_count):
        raise ValueError(f"node {next_active} out of range")
    active_time = timeline.time_of.get(next_active)
    if active_time is not None and active_time < topo.time:
        raise ValueError(f"node {next_active} is already active")
    with timeline.head_lock:
        extended_in_place = timeline.max_time == topo.time
        if extended_in_place:
            timeline.append(next_active)
    if not extended_in_place:
        # The shared timeline has advanced past this snapshot (or beyond the
        # snapshot's own prefix); branch a private copy before appending.
        timeline = timeline.branch_copy(topo.time)
        timeline.append(next_active)
    return DiffusionTopology(timeline, topo.time + 1)


def build_topologies(graph: DataGraph, cascade: Cascade) -> list[DiffusionTopology]:
    """Incrementally build the topology chain for t = 1..T+1 (shared timeline)."""
    topos = [build_topology(graph, cascade, 1)]
    for node in cascade:
        topos.append(extend_topology(topos[-1], graph, node))
    return topos


def precedents(topo: DiffusionTopology, v: NodeId) -> tuple[NodeId, ...]:
    """Nodes with an attempt edge into ``v``, ordered by their activation time."""
    return topo.precedents(v)
