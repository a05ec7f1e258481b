"""Packet-selection engine: build a weighted coding graph over the output
queue, reduce it to an undirected gain graph, threshold it, and pick the set
of packets to XOR together with a greedy max-clique heuristic."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from .core import NativePacket
from .pu import p_active

DEFAULT_GAIN_THRESHOLD = 1.5
DEFAULT_CODING_WINDOW = 16
EXACT_CLIQUE_LIMIT = 20


@dataclass
class NeighbourBelief:
    """What a node believes about one neighbour: which packet ids sit in its
    pool (with a confidence each), the loss probability of the link towards
    it, and the activity rates of the PUs that can disturb that link."""

    pool: dict[int, tuple[float, float]] = field(default_factory=dict)  # pid -> (confidence, recorded_at)
    p_link: float = 0.0
    pu_lambdas: list[float] = field(default_factory=list)
    last_report_at: float = -1.0

    def note_packet(self, pid: int, confidence: float, now: float) -> None:
        """Record that the neighbour holds `pid`, keeping the higher confidence
        when the id is already believed present."""
        old = self.pool.get(pid)
        if old is None or confidence >= old[0]:
            self.pool[pid] = (confidence, now)

    def confidence(self, pid: int, now: float, ttl: float) -> float:
        entry = self.pool.get(pid)
        if entry is None:
            return 0.0
        conf, at = entry
        if now - at > ttl:
            return 0.0
        return conf

    def expire(self, now: float, ttl: float) -> None:
        stale = [pid for pid, (_, at) in self.pool.items() if now - at > ttl]
        for pid in stale:
            del self.pool[pid]


@dataclass(frozen=True)
class CodingVertex:
    queue_pos: int
    packet: NativePacket

    @property
    def dest(self) -> int:
        return self.packet.next_hop


@dataclass
class CodingGraph:
    vertices: list[CodingVertex]
    weights: dict[tuple[int, int], float]  # (i, j) indices into vertices


@dataclass
class CodingGainGraph:
    vertices: list[CodingVertex]
    gains: dict[tuple[int, int], float]  # (i, j) with i < j


def edge_weight(
    packet_j: NativePacket,
    belief: NeighbourBelief | None,
    tau: float,
    now: float,
    belief_ttl: float,
    ignore_pu: bool = False,
) -> float:
    """Probability that the destination of packet i decodes it when coded with
    packet j: (1 - P_active) * P_dest * (1 - P_link).

    `belief` is the sender's knowledge about dest(i); P_dest is the confidence
    that packet j already sits in that destination's pool. A missing belief
    yields weight 0 rather than an error.
    """
    if belief is None:
        return 0.0
    p_dest = belief.confidence(packet_j.pid, now, belief_ttl)
    if p_dest == 0.0:
        return 0.0
    p_act = 0.0 if ignore_pu else p_active(belief.pu_lambdas, tau)
    return (1.0 - p_act) * p_dest * (1.0 - belief.p_link)


def build_coding_graph(
    packets: list[NativePacket],
    beliefs: dict[int, NeighbourBelief],
    tau: float,
    now: float = 0.0,
    belief_ttl: float = float("inf"),
    window: int = DEFAULT_CODING_WINDOW,
    ignore_pu: bool = False,
) -> CodingGraph:
    """One vertex per untagged queued packet (head-first, bounded by `window`);
    a directed edge (i, j) carries the decode probability at dest(i) and is
    omitted when the packets share a next hop or the weight is zero."""
    vertices = [CodingVertex(pos, p) for pos, p in enumerate(packets[:window])]
    weights: dict[tuple[int, int], float] = {}
    for i, vi in enumerate(vertices):
        belief_i = beliefs.get(vi.dest)
        for j, vj in enumerate(vertices):
            if i == j or vi.dest == vj.dest:
                continue
            w = edge_weight(vj.packet, belief_i, tau, now, belief_ttl, ignore_pu)
            if w > 0.0:
                weights[(i, j)] = w
    return CodingGraph(vertices, weights)


def to_gain_graph(graph: CodingGraph) -> CodingGainGraph:
    """Undirected reduction: gain(i, j) = w_ij + w_ji, present only when both
    directions exist."""
    gains: dict[tuple[int, int], float] = {}
    for (i, j), w_ij in graph.weights.items():
        if i > j:
            continue
        w_ji = graph.weights.get((j, i))
        if w_ji is not None:
            gains[(i, j)] = w_ij + w_ji
    return CodingGainGraph(graph.vertices, gains)


def threshold_graph(graph: CodingGainGraph, theta: float) -> dict[int, set[int]]:
    """Keep edges with gain >= theta; returns an adjacency map over vertex
    indices with isolated vertices retained."""
    adjacency: dict[int, set[int]] = {i: set() for i in range(len(graph.vertices))}
    for (i, j), gain in graph.gains.items():
        if gain >= theta:
            adjacency[i].add(j)
            adjacency[j].add(i)
    return adjacency


def greedy_max_clique(adjacency: dict[int, set[int]]) -> list[int]:
    """Greedy clique growth. Seeds with the head-of-queue vertex when it has
    any edge (else the highest-degree vertex) and repeatedly adds the
    highest-degree vertex adjacent to every current member; ties break towards
    the head of the queue. An edgeless graph yields the head-of-queue
    singleton.

    Vertex indices are queue positions, so "head of queue" is the lowest index.
    """
    if not adjacency:
        return []
    order = sorted(adjacency, key=lambda v: (-len(adjacency[v]), v))
    head = min(adjacency)
    if not adjacency[order[0]]:
        return [head]
    seed = head if adjacency[head] else order[0]
    clique = [seed]
    candidates = set(adjacency[seed])
    while candidates:
        best = min(candidates, key=lambda v: (-len(adjacency[v]), v))
        clique.append(best)
        candidates &= adjacency[best]
    return sorted(clique)


def exact_max_clique(adjacency: dict[int, set[int]]) -> list[int]:
    """Branch-and-bound maximum clique, usable as a test oracle for the greedy
    heuristic. Ties break towards the lexicographically smallest vertex set.
    Refuses graphs with more than EXACT_CLIQUE_LIMIT vertices."""
    n = len(adjacency)
    if n > EXACT_CLIQUE_LIMIT:
        raise ValueError(f"exact clique search limited to {EXACT_CLIQUE_LIMIT} vertices, got {n}")
    if n == 0:
        return []
    indices = sorted(adjacency)
    pos = {v: k for k, v in enumerate(indices)}
    masks = [0] * n
    for v, neighbours in adjacency.items():
        for u in neighbours:
            masks[pos[v]] |= 1 << pos[u]

    best: list[int] = []

    def expand(current: list[int], candidates: int) -> None:
        nonlocal best
        if candidates == 0:
            if len(current) > len(best):
                best = list(current)
            return
        while candidates:
            if len(current) + candidates.bit_count() <= len(best):
                return
            k = (candidates & -candidates).bit_length() - 1
            candidates &= candidates - 1
            current.append(k)
            expand(current, candidates & masks[k])
            current.pop()

    expand([], (1 << n) - 1)
    return sorted(indices[k] for k in best)


def enumerate_max_clique(adjacency: dict[int, set[int]]) -> list[int]:
    """Full subset enumeration; independent cross-check for exact_max_clique
    on small graphs."""
    vertices = sorted(adjacency)
    best: list[int] = []
    for size in range(len(vertices), 0, -1):
        if size < len(best):
            break
        found = None
        for subset in combinations(vertices, size):
            if all(v in adjacency[u] for u, v in combinations(subset, 2)):
                found = list(subset)
                break
        if found:
            return found
    return best


def select_encoding(
    packets: list[NativePacket],
    beliefs: dict[int, NeighbourBelief],
    theta: float,
    tau: float,
    now: float = 0.0,
    belief_ttl: float = float("inf"),
    window: int = DEFAULT_CODING_WINDOW,
    ignore_pu: bool = False,
) -> list[tuple[NativePacket, int]] | None:
    """Pick the packet set to XOR from the given untagged queue slice: build
    the coding graph, reduce, threshold, run the greedy clique. Returns the
    member list as (packet, next_hop) pairs, a singleton meaning a native
    send, or None when there is nothing to send."""
    if not packets:
        return None
    graph = build_coding_graph(packets, beliefs, tau, now, belief_ttl, window, ignore_pu)
    adjacency = threshold_graph(to_gain_graph(graph), theta)
    clique = greedy_max_clique(adjacency)
    if not clique:
        return None
    return [(graph.vertices[i].packet, graph.vertices[i].dest) for i in clique]
