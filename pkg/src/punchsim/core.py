"""Shared domain vocabulary: packets, queues, packet pools, reception reports."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace

U16_MAX = 0xFFFF
U8_MAX = 0xFF

DEFAULT_PACKET_BYTES = 512
DEFAULT_POOL_TTL = 2.0
DEFAULT_POOL_CAPACITY = 512
DEFAULT_QUEUE_CAPACITY = 64


def xor_combine(payloads: list[bytes]) -> bytes:
    """Bytewise XOR of one or more payloads, zero-padding shorter ones to the longest."""
    if not payloads:
        raise ValueError("xor_combine requires at least one payload")
    width = max(len(p) for p in payloads)
    out = bytearray(width)
    for p in payloads:
        for i, b in enumerate(p):
            out[i] ^= b
    return bytes(out)


@dataclass(frozen=True)
class NativePacket:
    """An original, un-coded packet. `uid` identifies the packet across hops;
    `pid` is the 16-bit identifier that goes on the wire."""

    uid: int
    pid: int
    source: int
    final_dest: int
    next_hop: int
    size_bytes: int = DEFAULT_PACKET_BYTES
    created_at: float = 0.0

    def with_next_hop(self, next_hop: int) -> "NativePacket":
        return replace(self, next_hop=next_hop)


class PacketIdAllocator:
    """16-bit wire ids: per-source monotone counter folded as
    (source low 6 bits << 10) | (seq mod 1024), with collision detection
    against the set of live ids."""

    def __init__(self) -> None:
        self._seq: dict[int, int] = {}
        self._live: set[int] = set()

    def allocate(self, source: int) -> int:
        seq = self._seq.get(source, 0)
        self._seq[source] = seq + 1
        pid = ((source & 0x3F) << 10) | (seq % 1024)
        if pid in self._live:
            raise RuntimeError(f"wire packet id collision among live packets: {pid}")
        self._live.add(pid)
        return pid

    def release(self, pid: int) -> None:
        self._live.discard(pid)


class PacketPool:
    """Cache of packets a node has heard, kept for `ttl` seconds and capped at
    `capacity` entries (oldest evicted first)."""

    def __init__(self, ttl: float = DEFAULT_POOL_TTL, capacity: int = DEFAULT_POOL_CAPACITY):
        if capacity <= 0:
            raise ValueError("pool capacity must be positive")
        self.ttl = ttl
        self.capacity = capacity
        self._entries: OrderedDict[int, tuple[NativePacket, float]] = OrderedDict()

    def insert(self, packet: NativePacket, now: float) -> None:
        if packet.pid in self._entries:
            self._entries[packet.pid] = (packet, now)
            self._entries.move_to_end(packet.pid)
            return
        if len(self._entries) >= self.capacity:
            self._entries.popitem(last=False)
        self._entries[packet.pid] = (packet, now)

    def prune(self, now: float) -> None:
        stale = [pid for pid, (_, at) in self._entries.items() if now - at > self.ttl]
        for pid in stale:
            del self._entries[pid]

    def get(self, pid: int) -> NativePacket | None:
        entry = self._entries.get(pid)
        return entry[0] if entry else None

    def __contains__(self, pid: int) -> bool:
        return pid in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def ids(self) -> list[int]:
        return list(self._entries.keys())

    def recent_ids(self, limit: int) -> list[int]:
        if len(self._entries) <= limit:
            return list(self._entries.keys())
        return list(self._entries.keys())[-limit:]


class OutputQueue:
    """FIFO of packets awaiting transmission. Packets sent but not yet
    acknowledged stay in the queue tagged by uid; tagged packets are not
    re-selected for coding until the tag is cleared."""

    def __init__(self, capacity: int = DEFAULT_QUEUE_CAPACITY):
        if capacity <= 0:
            raise ValueError("queue capacity must be positive")
        self.capacity = capacity
        self._packets: list[NativePacket] = []
        self.sent_tags: set[int] = set()

    def push(self, packet: NativePacket) -> bool:
        """Append; returns False (tail-drop) when the queue is full."""
        if len(self._packets) >= self.capacity:
            return False
        self._packets.append(packet)
        return True

    def untagged(self, window: int | None = None) -> list[NativePacket]:
        out = [p for p in self._packets if p.uid not in self.sent_tags]
        return out if window is None else out[:window]

    def tag(self, uid: int) -> None:
        self.sent_tags.add(uid)

    def untag(self, uid: int) -> None:
        self.sent_tags.discard(uid)

    def remove(self, uid: int) -> NativePacket | None:
        for i, p in enumerate(self._packets):
            if p.uid == uid:
                self.sent_tags.discard(uid)
                return self._packets.pop(i)
        return None

    def packets(self) -> list[NativePacket]:
        return list(self._packets)

    def __len__(self) -> int:
        return len(self._packets)


@dataclass
class ReceptionReport:
    """Periodic broadcast advertising pool contents, accumulated acks, locally
    heard PU parameters, and measured link qualities."""

    origin: int
    pool_ids: set[int] = field(default_factory=set)
    acked_ids: set[int] = field(default_factory=set)
    pu_entries: list[tuple[int, float]] = field(default_factory=list)
    link_entries: list[tuple[int, float]] = field(default_factory=list)
    issued_at: float = 0.0
