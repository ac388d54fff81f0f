"""CAN-like frame type and the line-oriented wire codec.

One frame per line, lowercase hex: ``<id-3-hex>#<data-hex-pairs>``,
e.g. ``7df#02010d``. Ids are 11 bit, payloads are 0-8 bytes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

MAX_FRAME_ID = 0x7FF
MAX_DATA_LEN = 8

_LINE_RE = re.compile(r"^([0-9a-fA-F]{1,3})#((?:[0-9a-fA-F]{2})*)$")


class FrameError(ValueError):
    """Raised for malformed frame lines or out-of-range frame fields."""


@dataclass(frozen=True)
class Frame:
    """A single bus frame: 11-bit id plus 0-8 data bytes."""

    id: int
    data: bytes = b""

    def __post_init__(self) -> None:
        if not 0 <= self.id <= MAX_FRAME_ID:
            raise FrameError(f"frame id {self.id:#x} exceeds 11 bits")
        if len(self.data) > MAX_DATA_LEN:
            raise FrameError(f"frame data is {len(self.data)} bytes, max is {MAX_DATA_LEN}")

    def to_line(self) -> str:
        return f"{self.id:03x}#{self.data.hex()}"


def parse_line(line: str) -> Frame:
    """Parse one wire line into a Frame.

    Raises FrameError on anything that is not a well-formed frame line.
    """
    m = _LINE_RE.match(line.strip())
    if m is None:
        raise FrameError(f"not a frame line: {line!r}")
    frame_id = int(m.group(1), 16)
    data = bytes.fromhex(m.group(2))
    if frame_id > MAX_FRAME_ID:
        raise FrameError(f"frame id {frame_id:#x} exceeds 11 bits")
    if len(data) > MAX_DATA_LEN:
        raise FrameError(f"frame data is {len(data)} bytes, max is {MAX_DATA_LEN}")
    return Frame(frame_id, data)


def format_line(frame: Frame) -> str:
    return frame.to_line()
