"""Bit-exact encoder/decoder for the PUNCH header that rides between the MAC
and IP headers.

Layout, big-endian, in this order:

    [u32 n_xor]  [(u16 packet_id, u16 next_hop) * n_xor]
    [u32 n_rep]  [u16 packet_id * n_rep, zero-padded to a 32-bit boundary]
    [u32 n_ack]  [u16 packet_id * n_ack, zero-padded to a 32-bit boundary]
    [u32 n_pu]   [(u16 pu_index, u16 lambda_q8_8) * n_pu]
    [u32 n_link] [(u16 neighbour_id, u16 p_link_u16) * n_link]

PU activity rates use Q8.8 fixed point; link loss probabilities are scaled to
the full u16 range.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

HEADER_BASE_LEN = 20
MAX_BLOCK_ITEMS = 0xFFFF

_BLOCK_NAMES = ("xored", "report", "ack", "pu", "link")


class FramingError(ValueError):
    """Raised when a byte sequence cannot be decoded as a header."""


class EncodeError(ValueError):
    """Raised when a header violates the wire limits."""


@dataclass
class PunchHeader:
    xored: list[tuple[int, int]] = field(default_factory=list)
    report_ids: list[int] = field(default_factory=list)
    ack_ids: list[int] = field(default_factory=list)
    pu_block: list[tuple[int, int]] = field(default_factory=list)
    link_block: list[tuple[int, int]] = field(default_factory=list)


def lambda_to_q8_8(lam: float) -> int:
    """Quantize an activity rate to Q8.8; rates >= 256 saturate with a warning."""
    if lam < 0:
        raise ValueError(f"activity rate must be nonnegative, got {lam}")
    if lam >= 256:
        warnings.warn(f"activity rate {lam} saturates the Q8.8 wire field", stacklevel=2)
        return 0xFFFF
    return round(lam * 256)


def q8_8_to_lambda(value: int) -> float:
    return value / 256.0


def p_link_to_u16(p: float) -> int:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"link loss probability must be in [0, 1], got {p}")
    return round(p * 0xFFFF)


def u16_to_p_link(value: int) -> float:
    return value / 0xFFFF


def _padded_u16_block(ids: list[int]) -> bytes:
    out = struct.pack(f">{len(ids)}H", *ids)
    if len(ids) % 2:
        out += b"\x00\x00"
    return out


def header_length(n_xor: int, n_rep: int, n_ack: int, n_pu: int, n_link: int) -> int:
    def padded(n: int) -> int:
        return 2 * n + (2 if n % 2 else 0)

    return HEADER_BASE_LEN + 4 * n_xor + padded(n_rep) + padded(n_ack) + 4 * n_pu + 4 * n_link


def encoded_length(header: PunchHeader) -> int:
    return header_length(
        len(header.xored),
        len(header.report_ids),
        len(header.ack_ids),
        len(header.pu_block),
        len(header.link_block),
    )


def encode_header(header: PunchHeader) -> bytes:
    blocks = (header.xored, header.report_ids, header.ack_ids, header.pu_block, header.link_block)
    for name, block in zip(_BLOCK_NAMES, blocks):
        if len(block) > MAX_BLOCK_ITEMS:
            raise EncodeError(f"{name} block exceeds {MAX_BLOCK_ITEMS} entries")
    out = bytearray()
    out += struct.pack(">I", len(header.xored))
    for pid, hop in header.xored:
        out += struct.pack(">HH", pid, hop)
    out += struct.pack(">I", len(header.report_ids))
    out += _padded_u16_block(header.report_ids)
    out += struct.pack(">I", len(header.ack_ids))
    out += _padded_u16_block(header.ack_ids)
    out += struct.pack(">I", len(header.pu_block))
    for idx, lam in header.pu_block:
        out += struct.pack(">HH", idx, lam)
    out += struct.pack(">I", len(header.link_block))
    for nid, p in header.link_block:
        out += struct.pack(">HH", nid, p)
    return bytes(out)


def decode_header(data: bytes) -> tuple[PunchHeader, int]:
    """Inverse of encode_header; returns the header and the number of bytes
    consumed. Truncated input raises a FramingError naming the block reached."""
    offset = 0

    def take(count: int, block: str) -> bytes:
        nonlocal offset
        if offset + count > len(data):
            raise FramingError(f"truncated header in {block} block")
        chunk = data[offset : offset + count]
        offset += count
        return chunk

    def count_of(block: str) -> int:
        return struct.unpack(">I", take(4, block))[0]

    n_xor = count_of("xored")
    xored = [struct.unpack(">HH", take(4, "xored")) for _ in range(n_xor)]

    def u16_list(block: str) -> list[int]:
        n = count_of(block)
        ids = list(struct.unpack(f">{n}H", take(2 * n, block)))
        if n % 2:
            take(2, block)
        return ids

    report_ids = u16_list("report")
    ack_ids = u16_list("ack")

    n_pu = count_of("pu")
    pu_block = [struct.unpack(">HH", take(4, "pu")) for _ in range(n_pu)]
    n_link = count_of("link")
    link_block = [struct.unpack(">HH", take(4, "link")) for _ in range(n_link)]

    return PunchHeader(xored, report_ids, ack_ids, pu_block, link_block), offset
