"""Binary time-tag stream format (PTTG) and the in-memory stream container.

Layout, little-endian:
  magic "PTTG" (4 bytes), version u16 = 1, resolution_ps u32,
  channel_count u8, 5 reserved bytes, then repeated 10-byte records:
  timestamp u64 (ps), channel u8, setting_id u8.

Streams are timestamp-sorted; the writer enforces this and the reader
validates it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, InvalidInputError

MAGIC = b"PTTG"
VERSION = 1
_HEADER = struct.Struct("<4sHIB5x")

RECORD_DTYPE = np.dtype([("timestamp", "<u8"), ("channel", "u1"), ("setting", "u1")])
assert RECORD_DTYPE.itemsize == 10


@dataclass
class TagStream:
    """A sorted sequence of detector clicks.

    ``timestamps`` are integer picoseconds, ``channels`` and ``settings``
    are u8 ids parallel to it.
    """

    timestamps: np.ndarray
    channels: np.ndarray
    settings: np.ndarray
    resolution_ps: int = 1
    channel_count: int = 4

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.uint64)
        self.channels = np.asarray(self.channels, dtype=np.uint8)
        self.settings = np.asarray(self.settings, dtype=np.uint8)
        if not (len(self.timestamps) == len(self.channels) == len(self.settings)):
            raise InvalidInputError("tag stream arrays must have equal lengths")

    def __len__(self):
        return len(self.timestamps)

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.timestamps.astype(np.int64)) >= 0))

    def channel_times(self, channel: int) -> np.ndarray:
        """Timestamps (int64 ps) of one channel, in stream order."""
        return self.timestamps[self.channels == channel].astype(np.int64)

    def records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=RECORD_DTYPE)
        rec["timestamp"] = self.timestamps
        rec["channel"] = self.channels
        rec["setting"] = self.settings
        return rec


def write_pttg(path, stream: TagStream) -> None:
    """Write a stream to a PTTG file; rejects unsorted timestamps."""
    if not stream.is_sorted():
        raise InvalidInputError("refusing to write an unsorted tag stream")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, stream.resolution_ps, stream.channel_count))
        fh.write(stream.records().tobytes())


def read_pttg(path) -> TagStream:
    """Read and validate a PTTG file."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise DataFormatError("truncated PTTG header", path=str(path), offset=0)
        magic, version, resolution_ps, channel_count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise DataFormatError(f"bad magic {magic!r}", path=str(path), offset=0)
        if version != VERSION:
            raise DataFormatError(f"unsupported PTTG version {version}", path=str(path), offset=4)
        body = fh.read()
    if len(body) % RECORD_DTYPE.itemsize:
        raise DataFormatError(
            f"record section length {len(body)} is not a multiple of {RECORD_DTYPE.itemsize}",
            path=str(path), offset=_HEADER.size + len(body) - len(body) % RECORD_DTYPE.itemsize)
    rec = np.frombuffer(body, dtype=RECORD_DTYPE)
    stream = TagStream(rec["timestamp"].copy(), rec["channel"].copy(), rec["setting"].copy(),
                       resolution_ps=resolution_ps, channel_count=channel_count)
    if not stream.is_sorted():
        bad = int(np.argmax(np.diff(stream.timestamps.astype(np.int64)) < 0))
        raise DataFormatError("timestamps not sorted", path=str(path),
                              offset=_HEADER.size + (bad + 1) * RECORD_DTYPE.itemsize)
    return stream
