"""Time-indexed directed estimate graph, symmetry checks, flooding and paths."""

from __future__ import annotations

import bisect
import heapq
import math
from collections.abc import Hashable, Iterable, Mapping
from dataclasses import dataclass, field

from .core_time import ContractViolation

NodeId = Hashable
Edge = tuple[NodeId, NodeId]

UNBOUNDED = math.inf


def ukey(u: NodeId, v: NodeId) -> frozenset:
    return frozenset((u, v))


@dataclass(frozen=True)
class EdgeAttrs:
    epsilon: float
    delay: float
    tau_up: float

    def __post_init__(self) -> None:
        if self.epsilon < 0 or self.tau_up < 0:
            raise ContractViolation("epsilon and tau_up must be non-negative")
        if self.delay <= 0:
            raise ContractViolation("delay must be positive")


@dataclass(frozen=True)
class EdgeEvent:
    time: int
    edge: Edge
    add: bool


@dataclass
class Path:
    nodes: tuple
    kappa: int = 0
    eps: float = 0.0


@dataclass
class DynamicGraph:
    """Directed edges toggled by timestamped events.

    ``(u, v)`` present means u has an estimate of v. Presence intervals are
    half open: an edge added at ``a`` and removed at ``b`` exists on [a, b).
    """

    nodes: list
    events: list[EdgeEvent] = field(default_factory=list)
    attrs: dict[frozenset, EdgeAttrs] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.events = sorted(self.events, key=lambda e: e.time)
        self._toggles: dict[Edge, list[int]] = {}
        for ev in self.events:
            times = self._toggles.setdefault(ev.edge, [])
            expect_add = len(times) % 2 == 0
            if ev.add != expect_add:
                kind = "add" if ev.add else "remove"
                raise ContractViolation(f"{kind} of {ev.edge} at {ev.time} does not alternate")
            if times and ev.time <= times[-1]:
                raise ContractViolation(f"events on {ev.edge} not strictly ordered")
            times.append(ev.time)
        self._event_times = sorted({ev.time for ev in self.events})

    @property
    def directed_edges(self) -> list[Edge]:
        return list(self._toggles)

    @property
    def event_times(self) -> list[int]:
        return self._event_times

    def toggles(self, edge: Edge) -> list[int]:
        return self._toggles.get(edge, [])

    def present(self, edge: Edge, t: int) -> bool:
        times = self._toggles.get(edge)
        if not times:
            return False
        return bisect.bisect_right(times, t) % 2 == 1

    def present_throughout(self, edge: Edge, start: int, end: int) -> bool:
        times = self._toggles.get(edge)
        if not times:
            return False
        i = bisect.bisect_right(times, start)
        if i % 2 == 0:
            return False
        return i == len(times) or times[i] > end

    def next_window(self, edge: Edge, start: int, length: int) -> int | None:
        """Earliest s >= start with ``edge`` present throughout [s, s + length]."""
        times = self._toggles.get(edge)
        if not times:
            return None
        i = bisect.bisect_right(times, start)
        s = start
        if i % 2 == 0:
            if i == len(times):
                return None
            s = times[i]
            i += 1
        while True:
            if i == len(times) or times[i] > s + length:
                return s
            i += 1
            if i >= len(times):
                return None
            s = times[i]
            i += 1

    def edges_at(self, t: int) -> set[Edge]:
        if t < 0:
            raise ContractViolation("query time must be non-negative")
        return {e for e in self._toggles if self.present(e, t)}

    def neighbors_at(self, u: NodeId, t: int) -> set[NodeId]:
        return {v for (a, v) in self._toggles if a == u and self.present((a, v), t)}

    def undirected_at(self, t: int) -> set[frozenset]:
        es = self.edges_at(t)
        return {ukey(u, v) for (u, v) in es if (v, u) in es}

    def attr(self, u: NodeId, v: NodeId) -> EdgeAttrs:
        return self.attrs[ukey(u, v)]


def _intervals(times: list[int], present: bool) -> list[tuple[int, float]]:
    """Presence (or absence) intervals [a, b) of one directed edge."""
    bounds: list[float] = [0, *times, math.inf]
    out = []
    for k in range(len(bounds) - 1):
        is_present = k % 2 == 1
        a, b = bounds[k], bounds[k + 1]
        if is_present == present and b > a:
            out.append((a, b))
    return out


def validate_symmetry(g: DynamicGraph) -> list[tuple[Edge, int, str]]:
    """Violations of the approximate-symmetry constraints.

    (a): (u,v) present throughout [t - tau, t + tau] forces (v,u) present at t.
    (b): the same with absence. Edges count as absent before time 0. Each
    offending window is reported once, as (premise edge, earliest time, label).
    """
    pairs = set(g.directed_edges)
    pairs |= {(v, u) for (u, v) in pairs}
    out: list[tuple[Edge, int, str]] = []
    for u, v in sorted(pairs, key=repr):
        attrs = g.attrs.get(ukey(u, v))
        tau = 0 if attrs is None else int(round(attrs.tau_up * 1e9))
        mine, theirs = g.toggles((u, v)), g.toggles((v, u))
        for label, want in (("a", True), ("b", False)):
            for a, b in _intervals(mine, want):
                lo = a + tau if (want or a > 0) else 0
                hi = b - tau
                if hi <= lo:
                    continue
                for c, d in _intervals(theirs, not want):
                    start = max(lo, c)
                    if start < min(hi, d):
                        out.append(((u, v), int(start), label))
                        break
    return out


def _out_edges(g: DynamicGraph) -> dict[NodeId, list[NodeId]]:
    cached = getattr(g, "_out_cache", None)
    if cached is None:
        cached = {}
        for a, b in sorted(g.directed_edges, key=repr):
            cached.setdefault(a, []).append(b)
        g._out_cache = cached
    return cached


def flood_completion(
    g: DynamicGraph,
    source: NodeId,
    start: int,
    delays: Mapping[frozenset, int],
    frozen: bool = False,
) -> float:
    """Time at which a flood started at ``source`` has reached every node.

    A hop x -> y leaves at the earliest time the directed edge is present
    for its whole delay. With ``frozen`` the topology at ``start`` is held
    fixed, which gives the flood duration of a long static stretch.
    """
    order = {n: k for k, n in enumerate(g.nodes)}
    out_edges = _out_edges(g)
    arrival = {source: start}
    heap = [(start, order[source], source)]
    done = set()
    while heap:
        t, _, x = heapq.heappop(heap)
        if x in done:
            continue
        done.add(x)
        for y in out_edges.get(x, ()):
            if y in done:
                continue
            d = delays[ukey(x, y)]
            if frozen:
                s = t if g.present((x, y), start) else None
            else:
                s = g.next_window((x, y), t, d)
            if s is None:
                continue
            arr = s + d
            if arr < arrival.get(y, math.inf):
                arrival[y] = arr
                heapq.heappush(heap, (arr, order[y], y))
    if len(done) < len(g.nodes):
        return math.inf
    return max(arrival.values())


def dynamic_diameter(
    g: DynamicGraph,
    horizon: int,
    delays: Mapping[frozenset, int] | None = None,
    grid_step: int | None = None,
) -> float:
    """Worst flood duration over all sources and start times in [0, horizon].

    Returns a fixed-point duration, or ``UNBOUNDED`` if some flood never
    completes. The topology after the last event is taken to persist.
    Starts are 0, every event time, and grid points from which a flood
    could still overlap an event; floods that see no event are covered by
    the frozen-topology duration of each inter-event stretch.
    """
    if horizon <= 0:
        raise ContractViolation("horizon must be positive")
    if delays is None:
        delays = {k: int(round(a.delay * 1e9)) for k, a in g.attrs.items()}
    if grid_step is None:
        grid_step = max(1, min(delays.values(), default=2) // 2)
    events = [t for t in g.event_times if 0 < t <= horizon]
    marks = [0, *events]
    worst = 0.0

    def evaluate(s: int, frozen: bool = False) -> float:
        return max(flood_completion(g, src, s, delays, frozen) - s for src in g.nodes)

    for k, s in enumerate(marks):
        gap = (marks[k + 1] if k + 1 < len(marks) else math.inf) - s
        static = evaluate(s, frozen=True)
        if static <= gap:
            worst = max(worst, static)
        worst = max(worst, evaluate(s))
        if worst == math.inf:
            return UNBOUNDED
    seen: set[int] = set()
    while True:
        window = int(worst)
        todo = set()
        for e in events:
            first = max(0, -(-(e - window) // grid_step))
            for q in range(first, e // grid_step + 1):
                if q * grid_step < e and q * grid_step not in seen:
                    todo.add(q * grid_step)
        if not todo:
            return worst
        for s in sorted(todo):
            seen.add(s)
            worst = max(worst, evaluate(s))
            if worst == math.inf:
                return UNBOUNDED


def shortest_kappa_paths(
    edges: Iterable[frozenset],
    kappa: Mapping[frozenset, int],
    source: NodeId,
    bound: int,
) -> dict[NodeId, tuple[int, Path]]:
    """Minimum-kappa path to every node reachable within ``bound``.

    ``edges`` are undirected edges present at the query time; see
    ``DynamicGraph.undirected_at``.
    """
    adj: dict[NodeId, list[tuple[NodeId, int]]] = {}
    for e in edges:
        a, b = tuple(e)
        w = kappa[e]
        adj.setdefault(a, []).append((b, w))
        adj.setdefault(b, []).append((a, w))
    best: dict[NodeId, tuple[int, Path]] = {}
    heap: list = [(0, (repr(source),), (source,))]
    while heap:
        d, _, nodes = heapq.heappop(heap)
        x = nodes[-1]
        if x in best:
            continue
        best[x] = (d, Path(nodes, d))
        for y, w in adj.get(x, ()):
            nd = d + w
            if y not in best and nd <= bound:
                path = (*nodes, y)
                heapq.heappush(heap, (nd, tuple(repr(n) for n in path), path))
    return best
