"""Deterministic discrete-event engine: binds nodes, channels, PU processes,
CBR traffic, and an abstract contention MAC into runnable scenarios, and
accumulates the run metrics."""
from __future__ import annotations

import heapq
import math
import random
import statistics
from collections import Counter, deque
from dataclasses import dataclass, field

from . import wire
from .core import NativePacket, PacketIdAllocator
from .node import HOLD, PU_DEFER, Frame, Node
from .pu import OFF, ON, PuProcess, pus_affecting_link

MODES = ("PUNCH", "BASELINE", "PU_IGNORE")


class ScenarioError(ValueError):
    """Raised when a scenario fails validation; message lists every violation."""


@dataclass
class FlowSpec:
    src: int
    dst: int
    rate_bps: float
    start: float = 0.0


@dataclass
class PuConfig:
    index: int
    channel: int
    position: tuple[float, float]
    lam: float
    mu: float | None = None  # defaults to lam (symmetric duty cycle)
    radius: float = 250.0


@dataclass
class Scenario:
    nodes: list[tuple[int, tuple[float, float]]]
    flows: list[FlowSpec] = field(default_factory=list)
    pus: list[PuConfig] = field(default_factory=list)
    channel_count: int = 3
    channel_bitrate: float = 256_000.0
    comm_range: float = 250.0
    p_link: float = 0.0
    p_link_overrides: dict[tuple[int, int], float] = field(default_factory=dict)
    duration: float = 60.0
    seed: int = 1
    mode: str = "PUNCH"
    theta: float = 1.5
    packet_bytes: int = 512
    warmup_frac: float = 0.1
    # protocol timers and limits
    report_period: float = 0.5
    report_jitter: float = 0.1
    ack_timeout: float = 0.25
    max_retries: int = 4
    ack_advertise_ttl: float = 1.0
    pool_ttl: float = 2.0
    pool_capacity: int = 512
    queue_capacity: int = 64
    coding_window: int = 16
    hold_time: float = 0.0
    hold_queue_limit: int = 4
    mac_gap: float = 0.0005
    mac_overhead_bytes: int = 34
    report_ids_cap: int = 32
    ack_ids_cap: int = 16
    sample_period: float = 1.0
    channel_reeval_period: float = 5.0
    trace: bool = False

    @property
    def warmup(self) -> float:
        return self.duration * self.warmup_frac

    def validate(self) -> list[str]:
        """Returns a list of violations; empty means runnable."""
        problems: list[str] = []
        ids = [nid for nid, _ in self.nodes]
        if len(ids) != len(set(ids)):
            problems.append("node ids are not unique")
        if any(not 0 <= nid <= 0xFFFF for nid in ids):
            problems.append("node ids must fit 16 bits")
        known = set(ids)
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 1 <= self.channel_count <= 256:
            problems.append("channel_count must be in [1, 256]")
        if self.channel_bitrate <= 0:
            problems.append("channel_bitrate must be positive")
        if not 0 <= self.warmup_frac < 1:
            problems.append("warmup_frac must be in [0, 1)")
        if self.duration <= self.warmup:
            problems.append("duration must exceed the warmup window")
        if not 0 <= self.theta <= 2:
            problems.append("theta must be in [0, 2]")
        if not 0 <= self.p_link <= 1:
            problems.append("p_link must be in [0, 1]")
        if self.packet_bytes <= 0:
            problems.append("packet_bytes must be positive")
        for k, flow in enumerate(self.flows):
            if flow.src not in known or flow.dst not in known:
                problems.append(f"flow {k} references unknown nodes ({flow.src} -> {flow.dst})")
            elif flow.src == flow.dst:
                problems.append(f"flow {k} has identical source and destination")
            if flow.rate_bps <= 0:
                problems.append(f"flow {k} rate must be positive")
        for pu in self.pus:
            if not 0 <= pu.channel < self.channel_count:
                problems.append(f"PU {pu.index} uses channel {pu.channel} out of range")
            if pu.lam <= 0 or (pu.mu is not None and pu.mu <= 0):
                problems.append(f"PU {pu.index} rates must be positive")
        if not problems and self.flows:
            adjacency = _build_adjacency(self.nodes, self.comm_range)
            for k, flow in enumerate(self.flows):
                if not _reachable(adjacency, flow.src, flow.dst):
                    problems.append(f"flow {k} destination {flow.dst} unreachable from {flow.src}")
        return problems


def _build_adjacency(nodes: list[tuple[int, tuple[float, float]]], comm_range: float) -> dict[int, list[int]]:
    positions = dict(nodes)
    adjacency: dict[int, list[int]] = {nid: [] for nid, _ in nodes}
    ids = sorted(positions)
    for i, u in enumerate(ids):
        for v in ids[i + 1 :]:
            if math.dist(positions[u], positions[v]) <= comm_range:
                adjacency[u].append(v)
                adjacency[v].append(u)
    return adjacency


def _reachable(adjacency: dict[int, list[int]], src: int, dst: int) -> bool:
    seen = {src}
    frontier = deque([src])
    while frontier:
        u = frontier.popleft()
        if u == dst:
            return True
        for v in adjacency[u]:
            if v not in seen:
                seen.add(v)
                frontier.append(v)
    return False


def mac_grant_policy(contenders: list[int], rng: random.Random) -> int:
    """Slotted CSMA abstraction: a uniform random winner among the eligible
    contenders; everyone else backs off to the next opportunity."""
    return rng.choice(sorted(contenders))


def frame_outcome(
    sender_pos: tuple[float, float],
    receivers: list[tuple[int, tuple[float, float]]],
    member_hops: list[tuple[float, float]],
    channel: int,
    airtime: float,
    now: float,
    pus: list[PuProcess],
    p_link,
    rng: random.Random,
) -> dict[int, bool]:
    """Per-receiver reception of one frame. Each receiver independently loses
    the frame with its link's loss probability; the whole frame dies for
    everyone when a PU affecting any member link switches ON mid-air; a
    receiver whose own link is under an active PU cannot hear it either."""
    kill_regions = member_hops if member_hops else [sender_pos]
    kill_pus = []
    seen = set()
    for hop_pos in kill_regions:
        for pu in pus_affecting_link(sender_pos, hop_pos, channel, pus):
            if pu.index not in seen:
                seen.add(pu.index)
                kill_pus.append(pu)
    frame_killed = any(
        pu.state == ON or pu.next_toggle_at <= now + airtime for pu in kill_pus
    )
    outcome: dict[int, bool] = {}
    for rcv_id, rcv_pos in receivers:
        lost = rng.random() < p_link(rcv_id)
        if frame_killed:
            lost = True
        elif not lost:
            for pu in pus_affecting_link(sender_pos, rcv_pos, channel, pus):
                if pu.state == ON or pu.next_toggle_at <= now + airtime:
                    lost = True
                    break
        outcome[rcv_id] = not lost
    return outcome


class MetricsLedger:
    """Run accumulators: post-warmup counters for the rate metrics plus a
    full-run per-packet registry that makes the conservation identity exact."""

    LIVE = "live"
    DELIVERED = "delivered"
    DROP_RETRY = "drop_retry"
    DROP_OVERFLOW = "drop_overflow"

    def __init__(self, duration: float, warmup: float, node_ids: list[int]):
        self.duration = duration
        self.warmup = warmup
        self.node_ids = list(node_ids)
        self.generated = 0
        self.delivered = 0
        self.transmissions = 0
        self.lost_retry = 0
        self.lost_overflow = 0
        self.counters: Counter[str] = Counter()
        self.registry: dict[int, str] = {}
        self.state_counts: Counter[str] = Counter()
        self.queue_integral = 0.0
        self._queue_state: dict[int, tuple[float, int]] = {nid: (0.0, 0) for nid in node_ids}
        self.series: list[dict] = []

    # -------------------------------------------------------------- packets

    def packet_generated(self, packet: NativePacket, now: float) -> None:
        self.registry[packet.uid] = self.LIVE
        self.state_counts[self.LIVE] += 1
        if now >= self.warmup:
            self.generated += 1

    def packet_delivered(self, packet: NativePacket, now: float) -> None:
        prev = self.registry.get(packet.uid)
        if prev == self.DELIVERED:
            return
        if prev is not None:
            self.state_counts[prev] -= 1
        self.registry[packet.uid] = self.DELIVERED
        self.state_counts[self.DELIVERED] += 1
        if now >= self.warmup:
            self.delivered += 1

    def packet_dropped(self, packet: NativePacket, now: float, reason: str) -> None:
        if self.registry.get(packet.uid) != self.LIVE:
            return
        state = self.DROP_RETRY if reason == "retry" else self.DROP_OVERFLOW
        self.state_counts[self.LIVE] -= 1
        self.state_counts[state] += 1
        self.registry[packet.uid] = state
        if now >= self.warmup:
            if reason == "retry":
                self.lost_retry += 1
            else:
                self.lost_overflow += 1
        self.counters[f"drop_{reason}"] += 1

    # ---------------------------------------------------------------- other

    def count_transmission(self, frame: Frame, now: float) -> None:
        if now >= self.warmup:
            self.transmissions += 1
        if frame.n_xor > 1:
            self.counters["coded_frames"] += 1
        elif frame.n_xor == 1:
            self.counters["native_frames"] += 1
        else:
            self.counters["report_frames"] += 1

    def count(self, name: str) -> None:
        self.counters[name] += 1

    def queue_changed(self, node_id: int, new_len: int, now: float) -> None:
        since, length = self._queue_state[node_id]
        start = max(since, self.warmup)
        if now > start:
            self.queue_integral += length * (now - start)
        self._queue_state[node_id] = (now, new_len)

    def _flush_queues(self, now: float) -> None:
        for nid in self.node_ids:
            self.queue_changed(nid, self._queue_state[nid][1], now)

    def sample(self, now: float) -> dict:
        self._flush_queues(now)
        elapsed = max(now - self.warmup, 0.0)
        lost = self.lost_retry + self.lost_overflow
        row = {
            "t": now,
            "delivered": self.delivered,
            "transmissions": self.transmissions,
            "avg_queue": self.queue_integral / (elapsed * len(self.node_ids)) if elapsed > 0 else 0.0,
            "loss": lost / self.generated if self.generated else 0.0,
        }
        self.series.append(row)
        return row

    def conservation(self) -> dict:
        """Full-run packet accounting; `balanced` must always hold."""
        total = len(self.registry)
        counts = {
            "generated": total,
            "delivered": self.state_counts[self.DELIVERED],
            "dropped_retry": self.state_counts[self.DROP_RETRY],
            "dropped_overflow": self.state_counts[self.DROP_OVERFLOW],
            "residual": self.state_counts[self.LIVE],
        }
        counts["balanced"] = (
            counts["delivered"] + counts["dropped_retry"] + counts["dropped_overflow"] + counts["residual"]
            == total
        )
        return counts

    def summary(self) -> dict:
        lost = self.lost_retry + self.lost_overflow
        span = self.duration - self.warmup
        return {
            "generated": self.generated,
            "delivered": self.delivered,
            "transmissions": self.transmissions,
            "lost": lost,
            "loss_rate": lost / self.generated if self.generated else 0.0,
            "avg_queue_len": self.queue_integral / (span * len(self.node_ids)) if span > 0 else 0.0,
            "throughput_pps": self.delivered / span if span > 0 else 0.0,
            "tx_per_delivered": self.transmissions / self.delivered if self.delivered else None,
        }


def compute_metrics(ledger_punch: MetricsLedger, ledger_baseline: MetricsLedger) -> dict:
    """Gains of a coded run against its no-coding twin. Transmission counts
    are normalized per delivered packet before the ratio, so the coding gain
    compares transmissions needed to deliver the same packet count."""
    p, b = ledger_punch.summary(), ledger_baseline.summary()
    throughput_gain = p["delivered"] / b["delivered"] if b["delivered"] else None
    coding_gain = None
    if p["tx_per_delivered"] and b["tx_per_delivered"]:
        coding_gain = b["tx_per_delivered"] / p["tx_per_delivered"]
    return {
        "throughput_gain": throughput_gain,
        "coding_gain": coding_gain,
        "punch": p,
        "baseline": b,
    }


class Simulation:
    """One deterministic event-loop run of a scenario."""

    def __init__(self, scenario: Scenario, trace_writer=None):
        problems = scenario.validate()
        if problems:
            raise ScenarioError("invalid scenario:\n  " + "\n  ".join(problems))
        self.sc = scenario
        self.now = 0.0
        self._trace_writer = trace_writer
        self._events: list[tuple[float, int, str, object]] = []
        self._seq = 0

        self.rng_traffic = random.Random(f"{scenario.seed}:traffic")
        self.rng_pus = random.Random(f"{scenario.seed}:pus")
        self.rng_links = random.Random(f"{scenario.seed}:links")
        self.rng_mac = random.Random(f"{scenario.seed}:mac")
        self.rng_timers = random.Random(f"{scenario.seed}:timers")

        self.positions = dict(scenario.nodes)
        self.adjacency = _build_adjacency(scenario.nodes, scenario.comm_range)
        self.nodes: dict[int, Node] = {}
        for nid in sorted(self.positions):
            self.nodes[nid] = Node(
                nid,
                self.positions[nid],
                queue_capacity=scenario.queue_capacity,
                pool_ttl=scenario.pool_ttl,
                pool_capacity=scenario.pool_capacity,
            )

        self.pus: list[PuProcess] = []
        self._pu_by_index: dict[int, PuProcess] = {}
        for cfg in scenario.pus:
            pu = PuProcess(
                index=cfg.index,
                channel=cfg.channel,
                position=cfg.position,
                lam=cfg.lam,
                mu=cfg.mu if cfg.mu is not None else cfg.lam,
                interference_radius=cfg.radius,
                state=OFF,
            )
            self.pus.append(pu)
            self._pu_by_index[pu.index] = pu

        self._link_channels: dict[tuple[int, int], int] = {}
        self._assign_link_channels()
        self._compute_routes()
        self._seed_node_knowledge()

        self.ledger = MetricsLedger(scenario.duration, scenario.warmup, sorted(self.positions))
        self.allocator = PacketIdAllocator()
        self._next_uid = 0
        self._busy_until = [0.0] * scenario.channel_count
        self._pending_pokes: set[tuple[int, float]] = set()
        self._tau = (scenario.packet_bytes + wire.HEADER_BASE_LEN + scenario.mac_overhead_bytes) * 8 / scenario.channel_bitrate

        # protocol knobs read by node code
        self.coding_enabled = scenario.mode != "BASELINE"
        self.ignore_pu = scenario.mode == "PU_IGNORE"
        self.theta = scenario.theta
        self.coding_window = scenario.coding_window
        self.pool_ttl = scenario.pool_ttl
        self.ack_timeout = scenario.ack_timeout
        self.max_retries = scenario.max_retries
        self.ack_advertise_ttl = scenario.ack_advertise_ttl
        self.report_period = scenario.report_period
        self.report_ids_cap = scenario.report_ids_cap
        self.ack_ids_cap = scenario.ack_ids_cap
        self.hold_time = scenario.hold_time
        self.hold_queue_limit = scenario.hold_queue_limit
        self.channel_count = scenario.channel_count

    # ------------------------------------------------------------- topology

    def _assign_link_channels(self) -> None:
        """Each link uses the channel with the least PU pressure. Ties prefer
        a channel either endpoint already uses, which keeps a node's outgoing
        links together and preserves its coding opportunities."""
        node_channels: dict[int, set[int]] = {nid: set() for nid in self.positions}
        assignment: dict[tuple[int, int], int] = {}
        for u in sorted(self.adjacency):
            for v in sorted(self.adjacency[u]):
                if v < u:
                    continue
                loads = []
                for c in range(self.sc.channel_count):
                    load = sum(
                        pu.lam
                        for pu in pus_affecting_link(self.positions[u], self.positions[v], c, self.pus)
                    )
                    loads.append((load, c))
                best = min(load for load, _ in loads)
                ties = [c for load, c in loads if load == best]
                familiar = [c for c in ties if c in node_channels[u] or c in node_channels[v]]
                channel = min(familiar) if familiar else ties[0]
                assignment[(u, v)] = channel
                assignment[(v, u)] = channel
                node_channels[u].add(channel)
                node_channels[v].add(channel)
        self._link_channels = assignment

    def _compute_routes(self) -> None:
        """Static shortest-path (hop count) next-hop tables."""
        for dst in sorted(self.positions):
            parent: dict[int, int] = {dst: dst}
            frontier = deque([dst])
            while frontier:
                u = frontier.popleft()
                for v in sorted(self.adjacency[u]):
                    if v not in parent:
                        parent[v] = u
                        frontier.append(v)
            for nid, node in self.nodes.items():
                if nid != dst and nid in parent:
                    node.routes[dst] = parent[nid]

    def _seed_node_knowledge(self) -> None:
        from .coding import NeighbourBelief

        for nid, node in self.nodes.items():
            node.sensed_pus = sorted(
                (pu.index, pu.lam) for pu in self.pus if pu.covers(node.position)
            )
            for nbr in sorted(self.adjacency[nid]):
                channel = self._link_channels[(nid, nbr)]
                lambdas = sorted(
                    lam for idx, lam in node.sensed_pus if self._pu_by_index[idx].channel == channel
                )
                node.beliefs[nbr] = NeighbourBelief(
                    p_link=self.p_link(nid, nbr),
                    pu_lambdas=lambdas,
                )

    # ------------------------------------------------------------ env hooks

    def link_channel(self, u: int, v: int) -> int:
        return self._link_channels.get((u, v), 0)

    def p_link(self, u: int, v: int) -> float:
        key = (u, v) if (u, v) in self.sc.p_link_overrides else (v, u)
        return self.sc.p_link_overrides.get(key, self.sc.p_link)

    def tau(self, channel: int) -> float:
        return self._tau

    def pu_channel(self, index: int) -> int:
        pu = self._pu_by_index.get(index)
        return pu.channel if pu else -1

    def pu_blocks_links(self, sender: int, hops: list[int], channel: int, now: float) -> bool:
        spos = self.positions[sender]
        for hop in hops:
            for pu in pus_affecting_link(spos, self.positions[hop], channel, self.pus):
                if pu.state == ON:
                    return True
        return False

    def link_lambdas_estimate(self, node: Node, sender: int, hop: int) -> list[float]:
        belief = node.beliefs.get(hop)
        if belief is not None and belief.pu_lambdas:
            return belief.pu_lambdas
        channel = self.link_channel(sender, hop)
        return [lam for idx, lam in node.sensed_pus if self.pu_channel(idx) == channel]

    def frame_size(self, frame: Frame) -> int:
        header = wire.header_length(
            frame.n_xor,
            len(frame.report_ids),
            len(frame.ack_ids),
            len(frame.pu_entries),
            len(frame.link_entries),
        )
        payload = max((p.size_bytes for p, _ in frame.members), default=0)
        return payload + header + self.sc.mac_overhead_bytes

    def count(self, name: str) -> None:
        self.ledger.count(name)

    def packet_delivered(self, packet: NativePacket, now: float) -> None:
        self.ledger.packet_delivered(packet, now)
        self.allocator.release(packet.pid)
        self._trace("delivered", node=packet.final_dest, pid=packet.pid, uid=packet.uid)

    def packet_dropped(self, packet: NativePacket, now: float, reason: str) -> None:
        self.ledger.packet_dropped(packet, now, reason)
        self.allocator.release(packet.pid)
        self._trace("dropped", reason=reason, pid=packet.pid, uid=packet.uid)

    def queue_changed(self, node_id: int, new_len: int, now: float) -> None:
        self.ledger.queue_changed(node_id, new_len, now)

    # ------------------------------------------------------------ scheduling

    def _push(self, at: float, kind: str, data: object) -> None:
        self._seq += 1
        heapq.heappush(self._events, (at, self._seq, kind, data))

    def schedule_poke(self, channel: int, at: float) -> None:
        at = max(at, self.now)
        key = (channel, at)
        if key in self._pending_pokes:
            return
        self._pending_pokes.add(key)
        self._push(at, "poke", channel)

    def schedule_ack_timeout(self, node_id: int, uid: int, deadline: float, epoch: int) -> None:
        self._push(deadline, "timeout", (node_id, uid, epoch))

    def schedule_link_ack(self, sender: int, uid: int) -> None:
        self._push(self.now, "ack", (sender, uid))

    def _trace(self, event: str, **detail) -> None:
        if self._trace_writer is not None:
            self._trace_writer({"t": round(self.now, 9), "event": event, **detail})

    # ------------------------------------------------------------------ run

    def run(self) -> MetricsLedger:
        sc = self.sc
        for k, flow in enumerate(sc.flows):
            self._push(flow.start, "arrival", k)
        for pu in self.pus:
            pu.schedule_first_toggle(0.0, self.rng_pus)
            self._push(pu.next_toggle_at, "pu", pu.index)
        if self.coding_enabled:
            for nid in sorted(self.nodes):
                first = self.rng_timers.uniform(0.0, sc.report_period)
                self._push(first, "report", nid)
        t = sc.sample_period
        while t < sc.duration:
            self._push(t, "sample", None)
            t += sc.sample_period
        t = sc.channel_reeval_period
        while t < sc.duration:
            self._push(t, "reeval", None)
            t += sc.channel_reeval_period

        while self._events:
            at, _, kind, data = heapq.heappop(self._events)
            if at > sc.duration:
                break
            self.now = at
            if kind == "poke":
                self._pending_pokes.discard((data, at))
                self._handle_poke(data)
            elif kind == "deliver":
                frame, survivor_ids = data
                for rid in survivor_ids:
                    self.nodes[rid].on_receive(frame, self, at)
            elif kind == "arrival":
                self._handle_arrival(data)
            elif kind == "ack":
                sender, uid = data
                self.nodes[sender].confirm_delivery(uid, self, at)
            elif kind == "timeout":
                nid, uid, epoch = data
                self.nodes[nid].on_ack_timeout(uid, epoch, self, at)
            elif kind == "pu":
                self._handle_pu_toggle(data)
            elif kind == "report":
                self.nodes[data].on_report_timer(self, at)
                nxt = at + sc.report_period * self.rng_timers.uniform(
                    1 - sc.report_jitter, 1 + sc.report_jitter
                )
                self._push(nxt, "report", data)
            elif kind == "sample":
                self.ledger.sample(at)
                balance = self.ledger.conservation()
                if not balance["balanced"]:
                    raise RuntimeError(f"packet conservation violated at t={at}: {balance}")
            elif kind == "reeval":
                self._assign_link_channels()

        self.now = sc.duration
        self.ledger.sample(sc.duration)
        balance = self.ledger.conservation()
        if not balance["balanced"]:
            raise RuntimeError(f"packet conservation violated at end of run: {balance}")
        return self.ledger

    # -------------------------------------------------------------- handlers

    def _handle_arrival(self, flow_idx: int) -> None:
        flow = self.sc.flows[flow_idx]
        interval = self.sc.packet_bytes * 8 / flow.rate_bps
        self._push(self.now + interval, "arrival", flow_idx)

        src = self.nodes[flow.src]
        next_hop = src.routes.get(flow.dst)
        if next_hop is None:
            return
        pid = self.allocator.allocate(flow.src)
        packet = NativePacket(
            uid=self._next_uid,
            pid=pid,
            source=flow.src,
            final_dest=flow.dst,
            next_hop=next_hop,
            size_bytes=self.sc.packet_bytes,
            created_at=self.now,
        )
        self._next_uid += 1
        self.ledger.packet_generated(packet, self.now)
        if self.coding_enabled:
            src.pool.insert(packet, self.now)
        if src.queue.push(packet):
            self.queue_changed(flow.src, len(src.queue), self.now)
            channel = self.link_channel(flow.src, next_hop)
            src.clear_hold(channel)
            self.schedule_poke(channel, self.now)
        else:
            self.packet_dropped(packet, self.now, "overflow")
        self._trace("arrival", node=flow.src, uid=packet.uid, pid=pid)

    def _handle_pu_toggle(self, index: int) -> None:
        pu = self._pu_by_index[index]
        state = pu.toggle(self.now, self.rng_pus)
        self._push(pu.next_toggle_at, "pu", index)
        self._trace("pu_toggle", pu=index, state=state)
        self.schedule_poke(pu.channel, self.now)

    def _is_contender(self, node: Node, channel: int) -> bool:
        if node.is_holding(channel, self.now):
            return False
        for pu in self.pus:
            if pu.channel == channel and pu.state == ON and pu.covers(node.position):
                return False
        if node.eligible_packets(channel, self):
            return True
        return (
            self.coding_enabled
            and node.report_pending
            and node.report_channel(self) == channel
        )

    def _handle_poke(self, channel: int) -> None:
        if self._busy_until[channel] > self.now:
            return
        excluded: set[int] = set()
        while True:
            contenders = [
                nid
                for nid, node in self.nodes.items()
                if nid not in excluded and self._is_contender(node, channel)
            ]
            if not contenders:
                return
            winner = mac_grant_policy(contenders, self.rng_mac)
            result = self.nodes[winner].on_send_opportunity(channel, self, self.now)
            if isinstance(result, Frame):
                self._transmit(result)
                return
            if result == PU_DEFER:
                self.count("pu_deferrals")
            excluded.add(winner)

    def _transmit(self, frame: Frame) -> None:
        airtime = frame.size_bytes * 8 / self.sc.channel_bitrate
        release = self.now + airtime + self.sc.mac_gap
        self._busy_until[frame.channel] = release
        self.ledger.count_transmission(frame, self.now)
        sender_pos = self.positions[frame.sender]
        receivers = [(rid, self.positions[rid]) for rid in sorted(self.adjacency[frame.sender])]
        outcome = frame_outcome(
            sender_pos,
            receivers,
            [self.positions[hop] for _, hop in frame.members],
            frame.channel,
            airtime,
            self.now,
            self.pus,
            lambda rid: self.p_link(frame.sender, rid),
            self.rng_links,
        )
        survivors = [rid for rid, ok in outcome.items() if ok]
        if not self.coding_enabled:
            survivors = [rid for rid in survivors if rid == frame.link_dest]
        if frame.members and not survivors:
            self.count("frames_fully_lost")
        self._push(self.now + airtime, "deliver", (frame, survivors))
        self.schedule_poke(frame.channel, release)
        self._trace(
            "tx",
            node=frame.sender,
            channel=frame.channel,
            n_xor=frame.n_xor,
            dest=frame.link_dest,
            members=[p.pid for p, _ in frame.members],
            size=frame.size_bytes,
        )


def run(scenario: Scenario, trace_writer=None) -> MetricsLedger:
    """Run a validated scenario to completion; identical (scenario, seed)
    pairs produce identical ledgers."""
    return Simulation(scenario, trace_writer).run()


# ---------------------------------------------------------------- topologies


def build_star_topology(
    leaves: int = 4,
    data_rate_kbps: float = 32.0,
    pu_count: int = 3,
    pu_lambda: float = 0.5,
    channel_count: int = 3,
    seed: int = 1,
    mode: str = "PUNCH",
    duration: float = 60.0,
    p_link: float = 0.0,
    **overrides,
) -> Scenario:
    """Central relay with `leaves` nodes around it; opposite leaves exchange
    crossing CBR flows through the centre. Leaves sit outside each other's
    range so every flow takes two hops."""
    if leaves < 2:
        raise ScenarioError("star topology needs at least 2 leaves")
    nodes: list[tuple[int, tuple[float, float]]] = [(0, (0.0, 0.0))]
    radius = 200.0
    for k in range(leaves):
        angle = 2 * math.pi * k / leaves
        nodes.append((k + 1, (radius * math.cos(angle), radius * math.sin(angle))))
    rate = data_rate_kbps * 1000
    flows = []
    half = (leaves + 1) // 2
    for k in range(leaves // 2):
        a, b = k + 1, ((k + half) % leaves) + 1
        flows.append(FlowSpec(a, b, rate))
        flows.append(FlowSpec(b, a, rate))
    rng = random.Random(f"{seed}:topology")
    pus = [
        PuConfig(
            index=i,
            channel=rng.randrange(channel_count),
            position=(rng.uniform(-300, 300), rng.uniform(-300, 300)),
            lam=pu_lambda,
        )
        for i in range(pu_count)
    ]
    interval = 512 * 8 / rate
    defaults = dict(
        channel_count=channel_count,
        seed=seed,
        mode=mode,
        duration=duration,
        p_link=p_link,
        hold_time=min(0.5 * interval, 0.2),
    )
    defaults.update(overrides)
    return Scenario(nodes=nodes, flows=flows, pus=pus, **defaults)


def build_random_topology(
    n_nodes: int = 20,
    n_flows: int = 8,
    data_rate_kbps: float = 32.0,
    pu_count: int = 3,
    pu_lambda: float = 0.5,
    channel_count: int = 3,
    seed: int = 1,
    mode: str = "PUNCH",
    duration: float = 60.0,
    p_link: float = 0.05,
    area: float = 865.0,
    comm_range: float = 250.0,
    max_attempts: int = 200,
    **overrides,
) -> Scenario:
    """Connected uniform-random layout sized so the median node degree lands
    in [4, 6], with `n_flows` single-source CBR flows to distinct random
    destinations."""
    rng = random.Random(f"{seed}:topology")
    nodes = None
    for _ in range(max_attempts):
        candidate = [(i, (rng.uniform(0, area), rng.uniform(0, area))) for i in range(n_nodes)]
        adjacency = _build_adjacency(candidate, comm_range)
        if any(not adjacency[i] for i in adjacency):
            continue
        if not _reachable(adjacency, 0, n_nodes - 1):
            continue
        if not all(_reachable(adjacency, 0, i) for i in range(1, n_nodes)):
            continue
        median_degree = statistics.median(len(adjacency[i]) for i in adjacency)
        if 4 <= median_degree <= 6:
            nodes = candidate
            break
    if nodes is None:
        raise ScenarioError(
            f"could not sample a connected layout with median degree 4-6 in {max_attempts} attempts"
        )
    ids = [nid for nid, _ in nodes]
    srcs = rng.sample(ids, n_flows)
    while True:
        dsts = rng.sample(ids, n_flows)
        if all(s != d for s, d in zip(srcs, dsts)):
            break
    rate = data_rate_kbps * 1000
    interval = 512 * 8 / rate
    flows = [
        FlowSpec(s, d, rate, start=k * interval / n_flows)
        for k, (s, d) in enumerate(zip(srcs, dsts))
    ]
    pus = [
        PuConfig(
            index=i,
            channel=rng.randrange(channel_count),
            position=(rng.uniform(0, area), rng.uniform(0, area)),
            lam=pu_lambda,
        )
        for i in range(pu_count)
    ]
    defaults = dict(
        channel_count=channel_count,
        comm_range=comm_range,
        seed=seed,
        mode=mode,
        duration=duration,
        p_link=p_link,
        hold_time=min(0.5 * interval, 0.2),
    )
    defaults.update(overrides)
    return Scenario(nodes=nodes, flows=flows, pus=pus, **defaults)
