"""Binary codec for telemetry frames.

Layout (API mode 1, no escaping, all integers big-endian)::

    7E | len_hi len_lo | api_data (19 bytes) | checksum

    api_data = type(0x10) addr(u64) seq(u8) ts(u32) temp_code(u16) flags(u8) batt_mv(u16)

The checksum is ``0xFF - (sum(api_data) & 0xFF)``.  See docs/wire-format.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator

from .errors import (
    BadDelimiter,
    ChecksumMismatch,
    EmptyData,
    InvalidPayload,
    LengthMismatch,
    TrailingGarbage,
    TruncatedFrame,
    UnknownFrameType,
)

START = 0x7E
TELEMETRY_TYPE = 0x10
API_DATA_LEN = 19
FRAME_LEN = API_DATA_LEN + 4

FLAG_OIL_LOW = 0x01
FLAG_TEMP_HIGH = 0x02
FLAG_MASK = FLAG_OIL_LOW | FLAG_TEMP_HIGH

_API = struct.Struct(">BQBIHBH")
assert _API.size == API_DATA_LEN


@dataclass(frozen=True)
class TelemetryPayload:
    source_addr: int
    sequence: int
    timestamp_s: int
    temp_code: int
    status_flags: int
    battery_mv: int
    frame_type: int = TELEMETRY_TYPE

    def validate(self):
        if self.frame_type != TELEMETRY_TYPE:
            raise InvalidPayload(f"frame_type must be 0x{TELEMETRY_TYPE:02X}")
        if not 0 <= self.temp_code <= 1023:
            raise InvalidPayload(f"temp_code {self.temp_code} exceeds 10 bits")
        if self.status_flags & ~FLAG_MASK:
            raise InvalidPayload(f"reserved status flag bits set: 0x{self.status_flags:02X}")
        for name, value, bits in (
            ("source_addr", self.source_addr, 64),
            ("sequence", self.sequence, 8),
            ("timestamp_s", self.timestamp_s, 32),
            ("battery_mv", self.battery_mv, 16),
        ):
            if not 0 <= value < (1 << bits):
                raise InvalidPayload(f"{name}={value} does not fit in u{bits}")

    @property
    def oil_low(self) -> bool:
        return bool(self.status_flags & FLAG_OIL_LOW)

    @property
    def temp_high(self) -> bool:
        return bool(self.status_flags & FLAG_TEMP_HIGH)


def checksum(api_data: bytes) -> int:
    if not api_data:
        raise EmptyData("checksum of empty api_data")
    return 0xFF - (sum(api_data) & 0xFF)


def encode(payload: TelemetryPayload) -> bytes:
    payload.validate()
    api = _API.pack(
        payload.frame_type,
        payload.source_addr,
        payload.sequence,
        payload.timestamp_s,
        payload.temp_code,
        payload.status_flags,
        payload.battery_mv,
    )
    return bytes((START,)) + struct.pack(">H", len(api)) + api + bytes((checksum(api),))


def decode(data: bytes) -> TelemetryPayload:
    """Parse exactly one frame.  Raises a :class:`FrameError` subclass for
    anything else; never raises other exception types on ``bytes`` input."""
    data = bytes(data)
    if not data:
        raise TruncatedFrame("empty input")
    if data[0] != START:
        raise BadDelimiter(f"expected 0x7E, got 0x{data[0]:02X}")
    if len(data) < 3:
        raise TruncatedFrame("missing length field")
    length = (data[1] << 8) | data[2]
    total = length + 4
    if len(data) < total:
        raise TruncatedFrame(f"length field promises {length} bytes, only {max(len(data) - 4, 0)} present")
    if len(data) > total:
        raise TrailingGarbage(f"{len(data) - total} bytes after checksum")
    if length == 0:
        raise LengthMismatch("frame carries no api_data")
    api = data[3:3 + length]
    if checksum(api) != data[-1]:
        raise ChecksumMismatch(f"checksum 0x{data[-1]:02X}, computed 0x{checksum(api):02X}")
    if api[0] != TELEMETRY_TYPE:
        raise UnknownFrameType(f"frame type 0x{api[0]:02X}")
    if length != API_DATA_LEN:
        raise LengthMismatch(f"telemetry api_data is {API_DATA_LEN} bytes, got {length}")
    ftype, addr, seq, ts, code, flags, batt = _API.unpack(api)
    payload = TelemetryPayload(addr, seq, ts, code, flags, batt, ftype)
    payload.validate()
    return payload


def iter_frames(stream: bytes) -> Iterator[bytes]:
    """Split a concatenated capture into raw frames.

    Bytes before a start delimiter are skipped.  A trailing partial frame is
    yielded as-is so the caller's decode reports it as truncated.
    """
    i, n = 0, len(stream)
    while i < n:
        j = stream.find(bytes((START,)), i)
        if j < 0:
            return
        if j + 3 > n:
            yield stream[j:]
            return
        total = ((stream[j + 1] << 8) | stream[j + 2]) + 4
        yield stream[j:j + total]
        i = j + total
