"""Container parsing: find the sync word, strip the header, cut the analysis segment."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

SEGMENT_LEN = 4096
XILINX_SYNC = bytes.fromhex("AA995566")

# Segment sampling strategies. Only the prefix rule is used by default; the
# strided variant exists for sensitivity experiments (scripts/segment_sensitivity.py).
PREFIX = "prefix"
STRIDED = "strided"
SEGMENT_STRATEGY = PREFIX


class BitstreamError(ValueError):
    """Raised for inputs that cannot be turned into an analysis segment."""


@dataclass(frozen=True)
class RawBitstream:
    data: bytes
    source_id: str = ""

    def __post_init__(self):
        if len(self.data) < 1:
            raise BitstreamError("empty bitstream")

    def __len__(self) -> int:
        return len(self.data)

    @classmethod
    def from_file(cls, path: str | Path) -> "RawBitstream":
        path = Path(path)
        return cls(path.read_bytes(), source_id=str(path))


@dataclass(frozen=True)
class Segment:
    data: bytes
    payload_len: int

    def __post_init__(self):
        if len(self.data) != SEGMENT_LEN:
            raise BitstreamError(f"segment must be {SEGMENT_LEN} bytes, got {len(self.data)}")
        if not 0 <= self.payload_len <= SEGMENT_LEN:
            raise BitstreamError(f"payload_len out of range: {self.payload_len}")
        if any(self.data[self.payload_len:]):
            raise BitstreamError("non-zero padding")

    @property
    def payload(self) -> bytes:
        return self.data[: self.payload_len]

    def as_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8)


def _as_bytes(raw: RawBitstream | bytes | bytearray) -> bytes:
    return raw.data if isinstance(raw, RawBitstream) else bytes(raw)


def locate_sync(raw: RawBitstream | bytes, sync: bytes = XILINX_SYNC) -> int | None:
    """Offset of the first byte after the first sync-word match, or None."""
    if len(sync) != 4:
        raise ValueError("sync pattern must be 4 bytes")
    idx = _as_bytes(raw).find(sync)
    return None if idx < 0 else idx + len(sync)


def extract_payload(raw: RawBitstream | bytes, sync: bytes = XILINX_SYNC) -> bytes:
    data = _as_bytes(raw)
    if not data:
        raise BitstreamError("empty bitstream")
    off = locate_sync(data, sync)
    if off is None:
        # unknown container: analyze everything rather than reject
        return data
    payload = data[off:]
    if not payload:
        raise BitstreamError("empty payload")
    return payload


def make_segment(payload: bytes, strategy: str = SEGMENT_STRATEGY) -> Segment:
    n = len(payload)
    if n == 0:
        raise BitstreamError("empty payload")
    if n >= SEGMENT_LEN:
        if strategy == PREFIX:
            chunk = payload[:SEGMENT_LEN]
        elif strategy == STRIDED:
            idx = (np.arange(SEGMENT_LEN, dtype=np.int64) * n) // SEGMENT_LEN
            chunk = np.frombuffer(payload, dtype=np.uint8)[idx].tobytes()
        else:
            raise ValueError(f"unknown segment strategy {strategy!r}")
        return Segment(bytes(chunk), SEGMENT_LEN)
    return Segment(bytes(payload) + bytes(SEGMENT_LEN - n), n)


def load_segment(path: str | Path, sync: bytes = XILINX_SYNC) -> Segment:
    return make_segment(extract_payload(RawBitstream.from_file(path), sync))
