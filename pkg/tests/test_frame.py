import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from fdmac.frame import (
    BadCrc, Bits, DupMode, FdHeader, Frame, FrameDecodeError, FrameEncodeError, Kind, MacHeader,
    Timing, TruncatedFrame, airtime_us, crc32_bits, decode, encode, encoded_length, header_time_us,
    make_fd_header,
)

from oracles import airtime_oracle, bits_to_bytes_padded, crc32_bitwise, frame_bits

GOLDEN = json.loads((Path(__file__).parent / "fixtures" / "golden_frames.json").read_text())


def frame_from_fields(f) -> Frame:
    kind = Kind(f["kind"])
    payload = bytes.fromhex(f["payload"])
    fd = make_fd_header(kind, DupMode(f["dupmode"]), bool(f["hol"]), f["durnxt"], f["durfd"], bool(f["cts"]),
                        f["srb"])
    return Frame(MacHeader(kind, f["dur"], f["sa"], f["da"], bool(f["frag"])), fd, len(payload), payload)


def random_frame(rng: random.Random) -> Frame:
    kind = rng.choice([Kind.DATA, Kind.ACK])
    dupmode = rng.choice([DupMode.HD, DupMode.FD])
    hol = rng.random() < 0.5
    sa = rng.randrange(256)
    da = rng.choice([x for x in (rng.randrange(256), (sa + 1) % 256) if x != sa])
    n = 0 if kind == Kind.ACK else rng.choice([0, 1, rng.randrange(64), rng.randrange(2000)])
    payload = rng.randbytes(n)
    fd = make_fd_header(kind, dupmode, hol, rng.randrange(1 << 16), rng.randrange(1 << 16),
                        rng.random() < 0.5, rng.randrange(1024))
    return Frame(MacHeader(kind, rng.randrange(1 << 16), sa, da, rng.random() < 0.5), fd, n, payload)


@pytest.mark.parametrize("vec", GOLDEN, ids=lambda v: v["name"])
def test_golden_vectors(vec):
    f = vec["fields"]
    oracle = frame_bits(f["kind"], f["dur"], f["sa"], f["da"], f["frag"], f["dupmode"], f["hol"], f["durnxt"],
                        f["durfd"], f["cts"], f["srb"], bytes.fromhex(f["payload"]))
    assert bits_to_bytes_padded(oracle).hex() == vec["hex"]
    bits = encode(frame_from_fields(f))
    assert len(bits) == vec["bits"]
    assert bits.to_hex() == vec["hex"]
    assert decode(Bits.from_hex(vec["hex"], vec["bits"])) == frame_from_fields(f)


def test_paper_header_example_field_positions():
    # FD, HOL=1, DURNXT=300, DURFD=500, CTS=1, SRB=677 on an ACK
    f = Frame(MacHeader(Kind.ACK, 0, 1, 2), make_fd_header(Kind.ACK, DupMode.FD, True, 300, 500, True, 677))
    b = encode(f)
    fd_start = 24 + 34
    assert b.slice(fd_start, 1) == 1
    assert b.slice(fd_start + 1, 1) == 1
    assert b.slice(fd_start + 2, 16) == 300
    assert b.slice(fd_start + 18, 16) == 500
    assert b.slice(fd_start + 34, 1) == 1
    assert b.slice(fd_start + 35, 10) == 677


def test_minimal_fd_header_is_13_bits():
    fd = make_fd_header(Kind.ACK, DupMode.HD, False)
    assert fd.bit_length() == 13
    f = Frame(MacHeader(Kind.ACK, 0, 0, 1), fd)
    assert len(encode(f)) == 24 + 34 + 13 + 32


@pytest.mark.parametrize("kind", list(Kind))
@pytest.mark.parametrize("dupmode", list(DupMode))
@pytest.mark.parametrize("hol", [False, True])
def test_length_law(kind, dupmode, hol):
    sizes = [0] if kind == Kind.ACK else [0, 1, 2, 100, 1500]
    opt = (kind == Kind.DATA or hol) + (dupmode == DupMode.FD)
    for n in sizes:
        f = Frame(MacHeader(kind, 0, 0, 1), make_fd_header(kind, dupmode, hol, 1, 2), n)
        expect = 24 + 34 + 13 + 16 * opt + 8 * n + 32
        assert len(encode(f)) == expect == encoded_length(kind, dupmode, hol, n)


def test_round_trip_fuzz_1e5():
    rng = random.Random(20240611)
    for _ in range(100_000):
        f = random_frame(rng)
        got = decode(encode(f))
        assert got.mac == f.mac and got.fd == f.fd
        assert got.payload_bytes == f.payload_bytes and got.body() == f.body()


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_truncation_by_one_bit_is_detected(seed):
    f = random_frame(random.Random(seed))
    b = encode(f)
    with pytest.raises(TruncatedFrame):
        decode(b.truncated(1))


def test_flipping_a_payload_bit_breaks_crc():
    rng = random.Random(5)
    for _ in range(200):
        f = random_frame(rng)
        if f.payload_bytes == 0:
            continue
        b = encode(f)
        pos = b.length - 32 - 1 - rng.randrange(8 * f.payload_bytes)
        with pytest.raises(BadCrc):
            decode(b.flipped(pos))


def test_crc_matches_bitwise_oracle():
    rng = random.Random(9)
    for n in (0, 1, 7, 8, 9, 33, 1000):
        v = rng.getrandbits(n) if n else 0
        bits = format(v, f"0{n}b") if n else ""
        assert crc32_bits(v, n) == crc32_bitwise(bits_to_bytes_padded(bits))


def test_encode_rejects_bad_headers():
    with pytest.raises(FrameEncodeError):
        encode(Frame(MacHeader(Kind.ACK, 0, 0, 1), FdHeader(DupMode.HD, False, None, None, False, 1024)))
    with pytest.raises(FrameEncodeError):
        encode(Frame(MacHeader(Kind.DATA, 0, 0, 1), FdHeader(DupMode.FD, False, 5, None, False, 0)))
    with pytest.raises(FrameEncodeError):
        encode(Frame(MacHeader(Kind.DATA, 0, 3, 3), make_fd_header(Kind.DATA)))
    with pytest.raises(FrameEncodeError):
        encode(Frame(MacHeader(Kind.ACK, 0, 0, 1), make_fd_header(Kind.ACK), 10))


def test_decode_rejects_garbage():
    with pytest.raises(TruncatedFrame):
        decode(Bits.from_str("1010"))
    b = encode(Frame(MacHeader(Kind.ACK, 0, 0, 1), make_fd_header(Kind.ACK)))
    with pytest.raises(FrameDecodeError):
        decode(Bits(b.value << 3, b.length + 3))
    with pytest.raises(FrameDecodeError):
        decode(b.flipped(0))  # sync byte


def test_airtime_against_oracle():
    t = Timing()
    ack = Frame(MacHeader(Kind.ACK, 0, 0, 1), make_fd_header(Kind.ACK))
    ack_hol = Frame(MacHeader(Kind.ACK, 0, 0, 1), make_fd_header(Kind.ACK, hol=True))
    assert airtime_us(ack, t) == airtime_oracle(34 + 13 + 32, 6e6) == 34
    assert airtime_us(ack_hol, t) == airtime_oracle(34 + 29 + 32, 6e6) == 36
    for n in (1, 100, 1500):
        for dm, extra in ((DupMode.HD, 16), (DupMode.FD, 32)):
            d = Frame(MacHeader(Kind.DATA, 0, 0, 1), make_fd_header(Kind.DATA, dm), n)
            assert airtime_us(d, t) == airtime_oracle(34 + 13 + extra + 8 * n + 32, 12e6)
            assert header_time_us(d, t) < airtime_us(d, t)
