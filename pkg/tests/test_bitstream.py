import pytest
from hypothesis import given, strategies as st

from bitscreen.bitstream import (
    SEGMENT_LEN,
    STRIDED,
    XILINX_SYNC,
    BitstreamError,
    RawBitstream,
    Segment,
    extract_payload,
    locate_sync,
    make_segment,
)

SYNC = XILINX_SYNC


def test_locate_sync_after_header():
    data = bytes(48) + SYNC + b"\x01\x02\x03"
    assert locate_sync(RawBitstream(data)) == 52


def test_locate_sync_absent():
    assert locate_sync(bytes(range(200))) is None


def test_locate_sync_first_match_wins():
    assert locate_sync(SYNC + SYNC + b"\x00") == 4


def test_locate_sync_rejects_bad_pattern():
    with pytest.raises(ValueError):
        locate_sync(b"\x00" * 10, b"\xaa\x99")


def test_extract_payload_lengths():
    data = bytes(10) + SYNC + bytes(range(86))
    assert len(data) == 100
    assert extract_payload(data) == bytes(range(86))


def test_extract_payload_fallback_whole_buffer():
    data = bytes(range(1, 120))
    assert extract_payload(data) == data


def test_extract_payload_empty_after_sync():
    with pytest.raises(BitstreamError, match="empty payload"):
        extract_payload(bytes(10) + SYNC)


def test_extract_payload_empty_input():
    with pytest.raises(BitstreamError, match="empty bitstream"):
        extract_payload(b"")
    with pytest.raises(BitstreamError):
        RawBitstream(b"")


def test_vendor_specific_sync():
    other = b"\x7e\xaa\x99\x7e"
    data = b"hdr" + other + b"xyz"
    assert extract_payload(data, other) == b"xyz"


def test_make_segment_prefix():
    payload = bytes(i % 251 for i in range(10_000))
    seg = make_segment(payload)
    assert seg.payload_len == SEGMENT_LEN
    assert seg.data == payload[:SEGMENT_LEN]


def test_make_segment_padding():
    payload = bytes([7]) * 1000
    seg = make_segment(payload)
    assert seg.payload_len == 1000
    assert seg.data[:1000] == payload
    assert seg.data[1000:] == bytes(3096)


def test_make_segment_identity():
    payload = bytes(i % 256 for i in range(SEGMENT_LEN))
    seg = make_segment(payload)
    assert seg.data == payload and seg.payload_len == SEGMENT_LEN


def test_make_segment_empty():
    with pytest.raises(BitstreamError):
        make_segment(b"")


def test_strided_segment_spans_payload():
    payload = bytes(range(256)) * 64
    seg = make_segment(payload, STRIDED)
    assert seg.data[0] == 0 and seg.data[-1] == payload[(SEGMENT_LEN - 1) * len(payload) // SEGMENT_LEN]


def test_segment_rejects_dirty_padding():
    with pytest.raises(BitstreamError):
        Segment(b"\x01" * SEGMENT_LEN, 10)


@given(st.binary(min_size=1, max_size=3 * SEGMENT_LEN))
def test_segment_length_and_prefix_preserved(payload):
    seg = make_segment(payload)
    assert len(seg.data) == SEGMENT_LEN
    assert seg.data[: seg.payload_len] == payload[: seg.payload_len]
    assert seg.payload_len == min(len(payload), SEGMENT_LEN)


@given(st.binary(min_size=1, max_size=300), st.booleans())
def test_sync_absent_iff_identity(data, plant):
    if plant:
        data = data + SYNC + b"\x01"
    off = locate_sync(data)
    assert (off is None) == (extract_payload(data) == data)
