"""Binary pose/frame wire messages.

Little-endian, fixed headers. A pose request is 50 bytes; a frame response is
a 23-byte header, the payload, then a trailing f32 render time:

    PoseRequest:   magic u16 = 0xDB01, object_id u32, seq u64,
                   observer_pos 3 x f32, observer_quat 4 x f32 (w,x,y,z),
                   width u16, height u16, time_s f32
    FrameResponse: magic u16 = 0xDB02, object_id u32, seq u64,
                   width u16, height u16, encoding u8 (0 raw-RGBA8, 1 PNG),
                   payload_len u32, payload bytes, render_ms f32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

REQUEST_MAGIC = 0xDB01
RESPONSE_MAGIC = 0xDB02

ENCODING_RAW = 0
ENCODING_PNG = 1

MIN_DIM = 16
MAX_DIM = 1024

_REQ = struct.Struct("<HIQ3f4fHHf")
_RESP_HEAD = struct.Struct("<HIQHHBI")
_RESP_TAIL = struct.Struct("<f")


class ProtocolError(ValueError):
    pass


class BadMagic(ProtocolError):
    pass


class ShortBuffer(ProtocolError):
    pass


class FieldOutOfRange(ProtocolError):
    pass


def _check_dims(width: int, height: int):
    for name, v in (("width", width), ("height", height)):
        if not (MIN_DIM <= v <= MAX_DIM):
            raise FieldOutOfRange(f"{name} {v} outside [{MIN_DIM}, {MAX_DIM}]")


@dataclass(frozen=True)
class PoseRequest:
    object_id: int
    seq: int
    observer_pos: np.ndarray    # (3,) float32
    observer_quat: np.ndarray   # (4,) float32, (w, x, y, z)
    width: int
    height: int
    time_s: float = 0.0

    def __post_init__(self):
        _check_dims(self.width, self.height)
        object.__setattr__(self, "observer_pos",
                           np.asarray(self.observer_pos, dtype=np.float32).reshape(3))
        object.__setattr__(self, "observer_quat",
                           np.asarray(self.observer_quat, dtype=np.float32).reshape(4))


@dataclass(frozen=True)
class FrameResponse:
    object_id: int
    seq: int
    width: int
    height: int
    encoding: int
    payload: bytes
    render_ms: float

    def __post_init__(self):
        _check_dims(self.width, self.height)
        if self.encoding not in (ENCODING_RAW, ENCODING_PNG):
            raise FieldOutOfRange(f"unknown encoding {self.encoding}")
        if self.encoding == ENCODING_RAW and len(self.payload) != self.width * self.height * 4:
            raise FieldOutOfRange(
                f"raw payload length {len(self.payload)} != width*height*4 "
                f"= {self.width * self.height * 4}")


def encode_pose_request(req: PoseRequest) -> bytes:
    return _REQ.pack(REQUEST_MAGIC, req.object_id, req.seq,
                     *(float(c) for c in req.observer_pos),
                     *(float(c) for c in req.observer_quat),
                     req.width, req.height, req.time_s)


def decode_pose_request(buf: bytes) -> PoseRequest:
    if len(buf) < _REQ.size:
        raise ShortBuffer(f"pose request needs {_REQ.size} bytes, got {len(buf)}")
    fields = _REQ.unpack_from(buf)
    if fields[0] != REQUEST_MAGIC:
        raise BadMagic(f"bad request magic 0x{fields[0]:04X}")
    if len(buf) != _REQ.size:
        raise ProtocolError(f"{len(buf) - _REQ.size} trailing bytes in pose request")
    return PoseRequest(object_id=fields[1], seq=fields[2],
                       observer_pos=np.array(fields[3:6], dtype=np.float32),
                       observer_quat=np.array(fields[6:10], dtype=np.float32),
                       width=fields[10], height=fields[11], time_s=fields[12])


def encode_frame_response(resp: FrameResponse) -> bytes:
    head = _RESP_HEAD.pack(RESPONSE_MAGIC, resp.object_id, resp.seq,
                           resp.width, resp.height, resp.encoding, len(resp.payload))
    return head + resp.payload + _RESP_TAIL.pack(resp.render_ms)


def decode_frame_response(buf: bytes) -> FrameResponse:
    if len(buf) < _RESP_HEAD.size:
        raise ShortBuffer(f"frame response header needs {_RESP_HEAD.size} bytes, "
                          f"got {len(buf)}")
    magic, object_id, seq, width, height, encoding, payload_len = _RESP_HEAD.unpack_from(buf)
    if magic != RESPONSE_MAGIC:
        raise BadMagic(f"bad response magic 0x{magic:04X}")
    total = _RESP_HEAD.size + payload_len + _RESP_TAIL.size
    if len(buf) < total:
        raise ShortBuffer(f"frame response needs {total} bytes, got {len(buf)}")
    if len(buf) != total:
        raise ProtocolError(f"{len(buf) - total} trailing bytes in frame response")
    payload = buf[_RESP_HEAD.size:_RESP_HEAD.size + payload_len]
    (render_ms,) = _RESP_TAIL.unpack_from(buf, _RESP_HEAD.size + payload_len)
    return FrameResponse(object_id, seq, width, height, encoding, payload, render_ms)


def decode_frame_pixels(resp: FrameResponse) -> np.ndarray:
    """RGBA8 pixel array (height, width, 4) regardless of encoding."""
    if resp.encoding == ENCODING_RAW:
        return np.frombuffer(resp.payload, dtype=np.uint8).reshape(
            resp.height, resp.width, 4).copy()
    from .volume import RenderedImage
    return RenderedImage.from_png_bytes(resp.payload).to_rgba8()
