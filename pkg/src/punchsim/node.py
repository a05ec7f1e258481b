"""Per-node protocol runtime: the send path (graph -> encode -> transmit),
the receive path (decode -> consume/forward/store), reception reports,
pseudo-broadcast acknowledgements, and retransmissions."""
from __future__ import annotations

from dataclasses import dataclass, field

from . import wire
from .coding import NeighbourBelief, select_encoding
from .core import NativePacket, OutputQueue, PacketPool, ReceptionReport
from .pu import p_active

HOLD = "hold"
PU_DEFER = "pu_defer"

# hold state sentinel: the hold window expired without a coding partner
_SPENT = -1.0


@dataclass
class Frame:
    """One over-the-air transmission: an XOR of `members` unicast to
    `link_dest` with the remaining receivers listed in the header, plus the
    piggybacked report/ack/PU/link blocks."""

    sender: int
    channel: int
    link_dest: int | None
    members: list[tuple[NativePacket, int]]
    report_ids: list[int] = field(default_factory=list)
    ack_ids: list[int] = field(default_factory=list)
    pu_entries: list[tuple[int, float]] = field(default_factory=list)
    link_entries: list[tuple[int, float]] = field(default_factory=list)
    size_bytes: int = 0

    @property
    def n_xor(self) -> int:
        return len(self.members)


@dataclass
class PendingAck:
    deadline: float
    epoch: int


class Node:
    """Protocol state for one secondary user."""

    def __init__(
        self,
        node_id: int,
        position: tuple[float, float],
        *,
        queue_capacity: int,
        pool_ttl: float,
        pool_capacity: int,
    ):
        self.id = node_id
        self.position = position
        self.queue = OutputQueue(queue_capacity)
        self.pool = PacketPool(pool_ttl, pool_capacity)
        self.beliefs: dict[int, NeighbourBelief] = {}
        self.pending_acks: dict[int, PendingAck] = {}
        self.retry_counts: dict[int, int] = {}
        self.acked_accum: dict[int, float] = {}  # pid -> advertise until
        self.routes: dict[int, int] = {}
        self.sensed_pus: list[tuple[int, float]] = []  # (pu index, lambda)
        self.seen_uids: set[int] = set()
        self.report_pending = False
        self.last_advertise_at = float("-inf")
        self.gossip_links: dict[tuple[int, int], float] = {}  # (owner, neighbour) -> p_link
        self._epoch = 0
        self._hold: dict[int, float] = {}  # channel -> hold deadline or _SPENT

    # ------------------------------------------------------------------ send

    def eligible_packets(self, channel: int, env) -> list[NativePacket]:
        return [
            p
            for p in self.queue.untagged(env.coding_window)
            if env.link_channel(self.id, p.next_hop) == channel
        ]

    def is_holding(self, channel: int, now: float) -> bool:
        deadline = self._hold.get(channel)
        return deadline is not None and deadline != _SPENT and now < deadline

    def clear_hold(self, channel: int) -> None:
        self._hold.pop(channel, None)

    def on_send_opportunity(self, channel: int, env, now: float) -> Frame | str | None:
        """Build the frame to transmit on `channel`, or report a hold / PU
        deferral. Returns None when there is nothing to send."""
        plan = None
        if env.coding_enabled:
            packets = self.eligible_packets(channel, env)
            if packets:
                self._refresh_beliefs(env, now)
                plan = select_encoding(
                    packets,
                    self.beliefs,
                    env.theta,
                    env.tau(channel),
                    now=now,
                    belief_ttl=env.pool_ttl,
                    window=env.coding_window,
                    ignore_pu=env.ignore_pu,
                )
        else:
            packets = self.eligible_packets(channel, env)
            if packets:
                plan = [(packets[0], packets[0].next_hop)]

        if plan is None:
            if self.report_pending and env.coding_enabled:
                return self._build_frame([], channel, env, now)
            return None

        if len(plan) == 1 and env.hold_time > 0 and env.coding_enabled:
            held = self._maybe_hold(channel, env, now, len(packets))
            if held:
                return HOLD

        if env.pu_blocks_links(self.id, [hop for _, hop in plan], channel, now):
            return PU_DEFER

        return self._build_frame(plan, channel, env, now)

    def _maybe_hold(self, channel: int, env, now: float, queued: int) -> bool:
        """Singleton plan: briefly wait for a coding partner unless the queue
        is building up or the hold window was already spent."""
        if queued > env.hold_queue_limit:
            return False
        deadline = self._hold.get(channel)
        if deadline == _SPENT:
            return False
        if deadline is None:
            deadline = now + env.hold_time
            self._hold[channel] = deadline
            env.schedule_poke(channel, deadline)
            return True
        if now < deadline:
            return True
        self._hold[channel] = _SPENT
        return False

    def _build_frame(self, plan: list[tuple[NativePacket, int]], channel: int, env, now: float) -> Frame:
        frame = Frame(sender=self.id, channel=channel, link_dest=None, members=list(plan))
        if env.coding_enabled:
            report_due = self.report_pending or now - self.last_advertise_at >= env.report_period / 2
            report = self.emit_reception_report(env, now)
            frame.ack_ids = sorted(report.acked_ids)
            if report_due:
                frame.report_ids = sorted(report.pool_ids)
                # carry what the wire can actually express
                frame.pu_entries = [
                    (idx, wire.q8_8_to_lambda(wire.lambda_to_q8_8(lam))) for idx, lam in report.pu_entries
                ]
                frame.link_entries = [
                    (nbr, wire.u16_to_p_link(wire.p_link_to_u16(p))) for nbr, p in report.link_entries
                ]
                self.report_pending = False
                self.last_advertise_at = now
        if plan:
            frame.link_dest = self._pick_link_dest(plan, env, now)
            for packet, _ in plan:
                self.queue.tag(packet.uid)
                self._epoch += 1
                deadline = now + env.ack_timeout
                self.pending_acks[packet.uid] = PendingAck(deadline, self._epoch)
                env.schedule_ack_timeout(self.id, packet.uid, deadline, self._epoch)
        frame.size_bytes = env.frame_size(frame)
        self.clear_hold(channel)
        return frame

    def _pick_link_dest(self, plan: list[tuple[NativePacket, int]], env, now: float) -> int:
        """The unicast destination gets the reliable link-layer ack path, so
        give it to the member with the weakest delivery probability."""
        if len(plan) == 1:
            return plan[0][1]

        def delivery_prob(hop: int) -> float:
            belief = self.beliefs.get(hop)
            if belief is None:
                return 1.0
            p_act = 0.0 if env.ignore_pu else p_active(belief.pu_lambdas, env.tau(env.link_channel(self.id, hop)))
            return (1.0 - p_act) * (1.0 - belief.p_link)

        return min((hop for _, hop in plan), key=lambda h: (delivery_prob(h), h))

    def _refresh_beliefs(self, env, now: float) -> None:
        self.pool.prune(now)
        for belief in self.beliefs.values():
            belief.expire(now, env.pool_ttl)

    # --------------------------------------------------------------- receive

    def on_receive(self, frame: Frame, env, now: float) -> None:
        if env.coding_enabled:
            self._ingest_piggyback(frame, env, now)
        if not frame.members:
            return
        if not env.coding_enabled and frame.link_dest != self.id:
            return

        available: list[NativePacket] = []
        missing: list[NativePacket] = []
        for packet, _ in frame.members:
            if len(frame.members) == 1 or packet.pid in self.pool:
                available.append(packet)
            else:
                missing.append(packet)

        decodable = len(missing) <= 1
        if not decodable:
            env.count("overheard_undecodable")
            return
        recovered = missing[0] if missing else None

        if env.coding_enabled:
            for packet in available:
                self.pool.insert(packet, now)
            if recovered is not None:
                self.pool.insert(recovered, now)

        for packet, hop in frame.members:
            if hop != self.id:
                continue
            self.acked_accum[packet.pid] = now + env.ack_advertise_ttl
            if frame.link_dest == self.id:
                env.schedule_link_ack(frame.sender, packet.uid)
            self._accept(packet, env, now)

    def _accept(self, packet: NativePacket, env, now: float) -> None:
        if packet.uid in self.seen_uids:
            return
        self.seen_uids.add(packet.uid)
        if packet.final_dest == self.id:
            env.packet_delivered(packet, now)
            return
        next_hop = self.routes.get(packet.final_dest)
        if next_hop is None:
            env.packet_dropped(packet, now, "no_route")
            return
        onward = packet.with_next_hop(next_hop)
        if self.queue.push(onward):
            env.queue_changed(self.id, len(self.queue), now)
            channel = env.link_channel(self.id, next_hop)
            self.clear_hold(channel)
            env.schedule_poke(channel, now)
        else:
            env.packet_dropped(packet, now, "overflow")

    def _ingest_piggyback(self, frame: Frame, env, now: float) -> None:
        belief = self.beliefs.get(frame.sender)
        if belief is not None:
            belief.last_report_at = now
            for pid in frame.report_ids:
                belief.note_packet(pid, 1.0, now)
            # the transmitter certainly holds everything it just encoded
            for packet, _ in frame.members:
                belief.note_packet(packet.pid, 1.0, now)
            self._merge_link_pus(frame.sender, frame.pu_entries, env)

        for pid in frame.ack_ids:
            self._confirm_by_pid(pid, frame.sender, env, now)

        for neighbour, p in frame.link_entries:
            self.gossip_links[(frame.sender, neighbour)] = p
        for packet, _ in frame.members:
            src_belief = self.beliefs.get(packet.source)
            if src_belief is not None:
                src_belief.note_packet(packet.pid, 1.0, now)
            self._note_overheard_in_flight(frame, packet, env, now)

    def _merge_link_pus(self, neighbour: int, reported: list[tuple[int, float]], env) -> None:
        """PUs disturbing the link to `neighbour` are the ones either end can
        hear, restricted to the link's channel."""
        belief = self.beliefs[neighbour]
        channel = env.link_channel(self.id, neighbour)
        merged: dict[int, float] = {}
        for idx, lam in self.sensed_pus:
            if env.pu_channel(idx) == channel:
                merged[idx] = lam
        for idx, lam in reported:
            if env.pu_channel(idx) == channel:
                merged[idx] = lam
        belief.pu_lambdas = [merged[idx] for idx in sorted(merged)]

    def _note_overheard_in_flight(self, frame: Frame, packet: NativePacket, env, now: float) -> None:
        """Every neighbour of the transmitter also heard this packet with a
        probability set by its link towards the transmitter and the PU
        pressure there; remember that for future coding decisions."""
        for nbr, belief in self.beliefs.items():
            if nbr == frame.sender or nbr == self.id:
                continue
            p_link = self.gossip_links.get((frame.sender, nbr))
            if p_link is None:
                continue  # no evidence the neighbour can hear the transmitter
            if env.ignore_pu:
                p_act = 0.0
            else:
                lambdas = env.link_lambdas_estimate(self, frame.sender, nbr)
                p_act = p_active(lambdas, env.tau(frame.channel))
            confidence = (1.0 - p_link) * (1.0 - p_act)
            if confidence > 0.0:
                belief.note_packet(packet.pid, confidence, now)

    # ------------------------------------------------------------------ acks

    def _confirm_by_pid(self, pid: int, origin: int, env, now: float) -> None:
        for uid, _ in list(self.pending_acks.items()):
            packet = self._queued_packet(uid)
            if packet is not None and packet.pid == pid and packet.next_hop == origin:
                self.confirm_delivery(uid, env, now)

    def _queued_packet(self, uid: int) -> NativePacket | None:
        for p in self.queue.packets():
            if p.uid == uid:
                return p
        return None

    def confirm_delivery(self, uid: int, env, now: float) -> None:
        """Next hop has the packet: custody transfers, retransmission state
        drops."""
        self.pending_acks.pop(uid, None)
        self.retry_counts.pop(uid, None)
        if self.queue.remove(uid) is not None:
            env.queue_changed(self.id, len(self.queue), now)

    def on_ack_timeout(self, uid: int, epoch: int, env, now: float) -> None:
        pending = self.pending_acks.get(uid)
        if pending is None or pending.epoch != epoch:
            return
        del self.pending_acks[uid]
        retries = self.retry_counts.get(uid, 0) + 1
        self.retry_counts[uid] = retries
        packet = self._queued_packet(uid)
        if packet is None:
            return
        if retries > env.max_retries:
            self.queue.remove(uid)
            self.retry_counts.pop(uid, None)
            env.queue_changed(self.id, len(self.queue), now)
            env.packet_dropped(packet, now, "retry")
            return
        self.queue.untag(uid)
        env.schedule_poke(env.link_channel(self.id, packet.next_hop), now)

    # --------------------------------------------------------------- reports

    def emit_reception_report(self, env, now: float) -> ReceptionReport:
        self.pool.prune(now)
        self.acked_accum = {pid: t for pid, t in self.acked_accum.items() if t >= now}
        return ReceptionReport(
            origin=self.id,
            pool_ids=set(self.pool.recent_ids(env.report_ids_cap)),
            acked_ids=set(sorted(self.acked_accum)[: env.ack_ids_cap]),
            pu_entries=list(self.sensed_pus)[:8],
            link_entries=[(nbr, self.beliefs[nbr].p_link) for nbr in sorted(self.beliefs)][:12],
            issued_at=now,
        )

    def on_report_timer(self, env, now: float) -> None:
        if now - self.last_advertise_at >= env.report_period / 2:
            self.report_pending = True
            env.schedule_poke(self.report_channel(env), now)

    def report_channel(self, env) -> int:
        """Broadcast reports on the least PU-loaded of the node's channels."""
        loads = []
        for channel in range(env.channel_count):
            load = sum(lam for idx, lam in self.sensed_pus if env.pu_channel(idx) == channel)
            loads.append((load, channel))
        return min(loads)[1]
