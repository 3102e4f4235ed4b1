"""Bit-exact DATA/ACK frame codec with the full-duplex header.

Layout (all multi-bit fields MSB first), see docs/FRAME_FORMAT.md:

    PHY placeholder : SYNC(8) LENGTH(16)            -- payload length in bytes
    MAC header      : KIND(1) DUR(16) SA(8) DA(8) FRAG(1)
    FD header       : DUPMODE(1) HOL(1) [DURNXT(16)] [DURFD(16)] CTS(1) SRB(10)
    payload         : 8 * LENGTH bits
    CRC             : 32 bits over MAC header .. payload

DURNXT/DURFD presence is not signalled in-band. It follows from the frame
kind and the header flags:

    DURNXT present  <=> kind == DATA or hol
    DURFD present   <=> dupmode == FD
"""

from __future__ import annotations

import enum
import math
import zlib
from dataclasses import dataclass

SYNC = 0xA7
SYNC_BITS = 8
LENGTH_BITS = 16
PHY_BITS = SYNC_BITS + LENGTH_BITS
MAC_BITS = 1 + 16 + 8 + 8 + 1
FD_MIN_BITS = 13
OPT_FIELD_BITS = 16
CRC_BITS = 32
SRB_MAX = (1 << 10) - 1
U16_MAX = (1 << 16) - 1
NODE_ID_MAX = (1 << 8) - 1


class Kind(enum.IntEnum):
    DATA = 0
    ACK = 1


class DupMode(enum.IntEnum):
    HD = 0
    FD = 1


class FrameError(Exception):
    """Base class for codec failures."""


class FrameEncodeError(FrameError, ValueError):
    pass


class FrameDecodeError(FrameError):
    pass


class TruncatedFrame(FrameDecodeError):
    pass


class BadCrc(FrameDecodeError):
    pass


class SrbOutOfRange(FrameDecodeError):
    pass


@dataclass(frozen=True)
class FdHeader:
    dupmode: DupMode = DupMode.HD
    hol: bool = False
    durnxt: int | None = None
    durfd: int | None = None
    cts: bool = False
    srb: int = 0

    @property
    def durnxt_present(self) -> bool:
        return self.durnxt is not None

    @property
    def durfd_present(self) -> bool:
        return self.durfd is not None

    def bit_length(self) -> int:
        return FD_MIN_BITS + OPT_FIELD_BITS * (self.durnxt_present + self.durfd_present)


@dataclass(frozen=True)
class MacHeader:
    kind: Kind
    dur: int
    sa: int
    da: int
    frag: bool = False


@dataclass(frozen=True)
class Frame:
    mac: MacHeader
    fd: FdHeader
    payload_bytes: int = 0
    payload: bytes | None = None

    @property
    def header_bits(self) -> int:
        return MAC_BITS + self.fd.bit_length()

    def body(self) -> bytes:
        if self.payload is not None:
            return self.payload
        return bytes(self.payload_bytes)


def durnxt_required(kind: Kind, hol: bool) -> bool:
    return kind == Kind.DATA or hol


def durfd_required(dupmode: DupMode) -> bool:
    return dupmode == DupMode.FD


def make_fd_header(kind: Kind, dupmode: DupMode = DupMode.HD, hol: bool = False,
                   durnxt: int = 0, durfd: int = 0, cts: bool = False, srb: int = 0) -> FdHeader:
    """Build an FdHeader whose optional fields obey the presence rule."""
    return FdHeader(
        dupmode=DupMode(dupmode),
        hol=hol,
        durnxt=durnxt if durnxt_required(kind, hol) else None,
        durfd=durfd if durfd_required(dupmode) else None,
        cts=cts,
        srb=srb,
    )


def validate(frame: Frame) -> None:
    mac, fd = frame.mac, frame.fd
    if not 0 <= fd.srb <= SRB_MAX:
        raise FrameEncodeError(f"srb={fd.srb} does not fit in 10 bits")
    if fd.dupmode == DupMode.FD and fd.durfd is None:
        raise FrameEncodeError("FD frame without DURFD")
    if fd.durnxt_present != durnxt_required(mac.kind, fd.hol):
        raise FrameEncodeError("DURNXT presence violates the presence rule")
    if fd.durfd_present != durfd_required(fd.dupmode):
        raise FrameEncodeError("DURFD presence violates the presence rule")
    for name, value in (("dur", mac.dur), ("durnxt", fd.durnxt or 0), ("durfd", fd.durfd or 0)):
        if not 0 <= value <= U16_MAX:
            raise FrameEncodeError(f"{name}={value} does not fit in 16 bits")
    for name, value in (("sa", mac.sa), ("da", mac.da)):
        if not 0 <= value <= NODE_ID_MAX:
            raise FrameEncodeError(f"{name}={value} does not fit in 8 bits")
    if mac.sa == mac.da:
        raise FrameEncodeError("sa == da")
    if mac.kind == Kind.ACK and frame.payload_bytes != 0:
        raise FrameEncodeError("ACK frames carry no payload")
    if frame.payload is not None and len(frame.payload) != frame.payload_bytes:
        raise FrameEncodeError("payload length disagrees with payload_bytes")
    if frame.payload_bytes > U16_MAX:
        raise FrameEncodeError("payload too long for LENGTH field")


class Bits:
    """A bitstring: ``value`` holds ``length`` bits, first bit is the MSB."""

    __slots__ = ("value", "length")

    def __init__(self, value: int = 0, length: int = 0):
        self.value = value
        self.length = length

    def push(self, value: int, width: int) -> None:
        self.value = (self.value << width) | (value & ((1 << width) - 1))
        self.length += width

    def __len__(self) -> int:
        return self.length

    def __eq__(self, other) -> bool:
        return isinstance(other, Bits) and (self.value, self.length) == (other.value, other.length)

    def __hash__(self) -> int:
        return hash((self.value, self.length))

    def __repr__(self) -> str:
        return f"Bits({self.to_str()!r})"

    def to_str(self) -> str:
        return format(self.value, f"0{self.length}b") if self.length else ""

    @classmethod
    def from_str(cls, s: str) -> "Bits":
        return cls(int(s, 2) if s else 0, len(s))

    def to_hex(self) -> str:
        """Hex dump, zero-padded on the right to a whole number of bytes."""
        nbytes = (self.length + 7) // 8
        padded = self.value << (nbytes * 8 - self.length)
        return padded.to_bytes(nbytes, "big").hex()

    @classmethod
    def from_hex(cls, text: str, length: int) -> "Bits":
        raw = int.from_bytes(bytes.fromhex(text), "big")
        return cls(raw >> (len(text) * 4 - length), length)

    def truncated(self, nbits: int) -> "Bits":
        return Bits(self.value >> nbits, self.length - nbits)

    def flipped(self, position: int) -> "Bits":
        """Copy with bit ``position`` (0 = first transmitted) inverted."""
        return Bits(self.value ^ (1 << (self.length - 1 - position)), self.length)

    def slice(self, start: int, width: int) -> int:
        return (self.value >> (self.length - start - width)) & ((1 << width) - 1)


def crc32_bits(value: int, length: int) -> int:
    """CRC-32 (reflected 0xEDB88320) over a bit field zero-padded to bytes."""
    nbytes = (length + 7) // 8
    data = (value << (nbytes * 8 - length)).to_bytes(nbytes, "big")
    return zlib.crc32(data) & 0xFFFFFFFF


def _covered(frame: Frame) -> Bits:
    mac, fd = frame.mac, frame.fd
    b = Bits()
    b.push(int(mac.kind), 1)
    b.push(mac.dur, 16)
    b.push(mac.sa, 8)
    b.push(mac.da, 8)
    b.push(int(mac.frag), 1)
    b.push(int(fd.dupmode), 1)
    b.push(int(fd.hol), 1)
    if fd.durnxt is not None:
        b.push(fd.durnxt, 16)
    if fd.durfd is not None:
        b.push(fd.durfd, 16)
    b.push(int(fd.cts), 1)
    b.push(fd.srb, 10)
    body = frame.body()
    if body:
        b.value = (b.value << (8 * len(body))) | int.from_bytes(body, "big")
        b.length += 8 * len(body)
    return b


def encode(frame: Frame) -> Bits:
    validate(frame)
    covered = _covered(frame)
    out = Bits()
    out.push(SYNC, SYNC_BITS)
    out.push(frame.payload_bytes, LENGTH_BITS)
    out.value = (out.value << covered.length) | covered.value
    out.length += covered.length
    out.push(crc32_bits(covered.value, covered.length), CRC_BITS)
    return out


def decode(bits: Bits) -> Frame:
    n = bits.length
    if n < PHY_BITS + MAC_BITS + FD_MIN_BITS + CRC_BITS:
        raise TruncatedFrame(f"{n} bits is shorter than the smallest frame")
    if bits.slice(0, SYNC_BITS) != SYNC:
        raise FrameDecodeError("bad PHY sync placeholder")
    payload_bytes = bits.slice(SYNC_BITS, LENGTH_BITS)
    pos = PHY_BITS
    kind = Kind(bits.slice(pos, 1))
    dur = bits.slice(pos + 1, 16)
    sa = bits.slice(pos + 17, 8)
    da = bits.slice(pos + 25, 8)
    frag = bool(bits.slice(pos + 33, 1))
    pos += MAC_BITS
    dupmode = DupMode(bits.slice(pos, 1))
    hol = bool(bits.slice(pos + 1, 1))
    pos += 2
    has_nxt = durnxt_required(kind, hol)
    has_fd = durfd_required(dupmode)
    expected = PHY_BITS + MAC_BITS + FD_MIN_BITS + OPT_FIELD_BITS * (has_nxt + has_fd) \
        + 8 * payload_bytes + CRC_BITS
    if n < expected:
        raise TruncatedFrame(f"{n} bits, header announces {expected}")
    if n > expected:
        raise FrameDecodeError(f"{n - expected} trailing bits")
    durnxt = durfd = None
    if has_nxt:
        durnxt = bits.slice(pos, 16)
        pos += 16
    if has_fd:
        durfd = bits.slice(pos, 16)
        pos += 16
    cts = bool(bits.slice(pos, 1))
    srb = bits.slice(pos + 1, 10)
    pos += 11
    payload = bits.slice(pos, 8 * payload_bytes).to_bytes(payload_bytes, "big")
    pos += 8 * payload_bytes
    covered_len = pos - PHY_BITS
    if crc32_bits(bits.slice(PHY_BITS, covered_len), covered_len) != bits.slice(pos, CRC_BITS):
        raise BadCrc("CRC mismatch")
    if srb > SRB_MAX:  # unreachable with a 10-bit field; kept for the error contract
        raise SrbOutOfRange(srb)
    if kind == Kind.ACK and payload_bytes:
        raise FrameDecodeError("ACK with payload")
    return Frame(
        mac=MacHeader(kind=kind, dur=dur, sa=sa, da=da, frag=frag),
        fd=FdHeader(dupmode=dupmode, hol=hol, durnxt=durnxt, durfd=durfd, cts=cts, srb=srb),
        payload_bytes=payload_bytes,
        payload=payload,
    )


def encoded_length(kind: Kind, dupmode: DupMode, hol: bool, payload_bytes: int) -> int:
    """Exact encoded bit length; affine in payload_bytes."""
    opt = durnxt_required(kind, hol) + durfd_required(dupmode)
    return PHY_BITS + MAC_BITS + FD_MIN_BITS + OPT_FIELD_BITS * opt + 8 * payload_bytes + CRC_BITS


@dataclass(frozen=True)
class Timing:
    """Rates and preamble length used for airtime accounting."""

    preamble_us: int = 20
    base_rate_bps: float = 6e6
    data_rate_bps: float = 12e6


def airtime_bits(header_bits: int, payload_bytes: int, rate_bps: float, preamble_us: int) -> int:
    bits = header_bits + 8 * payload_bytes + CRC_BITS
    return preamble_us + math.ceil(bits * 1e6 / rate_bps - 1e-9)


def airtime_us(frame: Frame, timing: Timing = Timing()) -> int:
    """Airtime in whole microseconds; DATA at the data rate, ACK at the base rate."""
    rate = timing.data_rate_bps if frame.mac.kind == Kind.DATA else timing.base_rate_bps
    return airtime_bits(frame.header_bits, frame.payload_bytes, rate, timing.preamble_us)


def header_time_us(frame: Frame, timing: Timing = Timing()) -> int:
    """Time after frame start at which MAC+FD headers are known to listeners."""
    rate = timing.data_rate_bps if frame.mac.kind == Kind.DATA else timing.base_rate_bps
    return timing.preamble_us + math.ceil(frame.header_bits * 1e6 / rate - 1e-9)
