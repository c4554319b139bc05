"""DSEQ depth-sequence and EVT1 event-stream binary containers (little endian).

DSEQ: "DSEQ" u32 version=1 u32 width u32 height u32 frame_count f32 fps,
      then frame_count * width * height f32 meters, row-major.
EVT1: "EVT1" u32 version=1 u32 width u32 height u64 event_count,
      then records of u16 x, u16 y, f64 t, i8 p, u8 pad (14 bytes).
"""

from __future__ import annotations

import struct

import numpy as np

from .sim import DepthFrame, EventStream

DSEQ_MAGIC = b"DSEQ"
EVT1_MAGIC = b"EVT1"
VERSION = 1

_DSEQ_HEADER = struct.Struct("<4sIIIIf")
_EVT1_HEADER = struct.Struct("<4sIIIQ")
EVENT_RECORD = np.dtype(
    {"names": ["x", "y", "t", "p", "pad"], "formats": ["<u2", "<u2", "<f8", "i1", "u1"], "offsets": [0, 2, 4, 12, 13], "itemsize": 14}
)


class FormatError(ValueError):
    def __init__(self, msg, offset):
        self.offset = offset
        super().__init__(f"{msg} (at byte offset {offset})")


def _header(buf, st, magic):
    if len(buf) < 4 or buf[:4] != magic:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {magic!r}", 0)
    if len(buf) < st.size:
        raise FormatError(f"truncated header: {len(buf)} of {st.size} bytes", len(buf))
    fields = st.unpack_from(buf, 0)
    if fields[1] != VERSION:
        raise FormatError(f"unsupported version {fields[1]}", 4)
    return fields


def write_dseq(frames, fps=10.0):
    frames = [f.values if isinstance(f, DepthFrame) else np.asarray(f, np.float32) for f in frames]
    if not frames:
        raise ValueError("need at least one frame")
    h, w = frames[0].shape
    if any(f.shape != (h, w) for f in frames):
        raise ValueError("all frames must share one shape")
    body = np.stack(frames).astype("<f4").tobytes()
    return _DSEQ_HEADER.pack(DSEQ_MAGIC, VERSION, w, h, len(frames), fps) + body


def read_dseq(buf):
    """Returns (frames, fps); frames carry timestamps i / fps."""
    buf = bytes(buf)
    _, _, w, h, n, fps = _header(buf, _DSEQ_HEADER, DSEQ_MAGIC)
    if w < 1 or h < 1:
        raise FormatError(f"invalid frame size {w}x{h}", 8)
    if not fps > 0:
        raise FormatError(f"invalid fps {fps}", 20)
    need = _DSEQ_HEADER.size + n * w * h * 4
    if len(buf) < need:
        frame_bytes = w * h * 4
        bad = (len(buf) - _DSEQ_HEADER.size) // frame_bytes
        raise FormatError(f"truncated frame {bad} of {n}", _DSEQ_HEADER.size + bad * frame_bytes)
    data = np.frombuffer(buf, "<f4", count=n * w * h, offset=_DSEQ_HEADER.size).reshape(n, h, w)
    bad = ~np.isfinite(data) | (data <= 0)
    if bad.any():
        i = int(np.flatnonzero(bad.ravel())[0])
        raise FormatError("depth value must be finite and > 0", _DSEQ_HEADER.size + 4 * i)
    return [DepthFrame(data[i].astype(np.float32), i / fps) for i in range(n)], float(fps)


def write_evt1(stream: EventStream):
    rec = np.zeros(len(stream), dtype=EVENT_RECORD)
    rec["x"], rec["y"], rec["t"], rec["p"] = stream.x, stream.y, stream.t, stream.p
    return _EVT1_HEADER.pack(EVT1_MAGIC, VERSION, stream.width, stream.height, len(stream)) + rec.tobytes()


serialize_events = write_evt1


def read_evt1(buf):
    buf = bytes(buf)
    _, _, w, h, n = _header(buf, _EVT1_HEADER, EVT1_MAGIC)
    off = _EVT1_HEADER.size
    have = (len(buf) - off) // EVENT_RECORD.itemsize
    if have < n:
        raise FormatError(f"truncated record {have} of {n}", off + have * EVENT_RECORD.itemsize)
    rec = np.frombuffer(buf, EVENT_RECORD, count=n, offset=off)
    bad = (rec["x"] >= w) | (rec["y"] >= h)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise FormatError(f"event {i} at ({rec['x'][i]}, {rec['y'][i]}) outside {w}x{h}", off + i * EVENT_RECORD.itemsize)
    bad = (rec["p"] != 1) & (rec["p"] != -1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise FormatError(f"event {i} polarity {rec['p'][i]} not +1/-1", off + i * EVENT_RECORD.itemsize + 12)
    return EventStream(w, h, rec["x"].copy(), rec["y"].copy(), rec["t"].copy(), rec["p"].copy())


parse_events = read_evt1


def events_to_csv(stream: EventStream):
    lines = ["x,y,t,p"]
    lines += [f"{x},{y},{t!r},{p}" for x, y, t, p in stream.records()]
    return "\n".join(lines) + "\n"
