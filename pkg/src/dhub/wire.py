"""Binary message framing for all hub <-> supervisor traffic.

Layout (big-endian throughout)::

    magic 0x44 0x48 | version u8 = 0x01 | type u8 | payload_len u32
    | payload | crc u32

The CRC is CRC-32C over every preceding byte of the message. Control-plane
payloads are canonical JSON (sorted keys, compact separators); PING/PONG and
TIMESYNC carry fixed binary fields; FRAME carries a 32-byte binary header
followed by the encoded payload so the data plane never parses JSON.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

from .crc import crc32c

MAGIC = b"DH"
VERSION = 0x01
HEADER_LEN = 8  # magic(2) + version(1) + type(1) + payload_len(4)
TRAILER_LEN = 4
MAX_PAYLOAD = 0xFFFFFFFF

T_HELLO = 0x01
T_PING = 0x02
T_PONG = 0x03
T_TIMESYNC_REQ = 0x04
T_TIMESYNC_RESP = 0x05
T_SUBSCRIBE = 0x06
T_UNSUBSCRIBE = 0x07
T_FRAME = 0x08
T_METRICS = 0x09
T_CONTROL = 0x0A
T_CONTROL_ACK = 0x0B
T_ERROR = 0x0C
T_BYE = 0x0D

_HEADER = struct.Struct(">2sBBI")
_U64 = struct.Struct(">Q")
_TSRESP = struct.Struct(">QQQ")
FRAME_HEADER = struct.Struct(">IQQQHBB")  # stream_id, seq, capture, session, flags, codec, reserved
FRAME_HEADER_LEN = FRAME_HEADER.size  # 32

# decode error codes
BAD_MAGIC = "BAD_MAGIC"
BAD_VERSION = "BAD_VERSION"
UNKNOWN_TYPE = "UNKNOWN_TYPE"
TRUNCATED = "TRUNCATED"
CRC_MISMATCH = "CRC_MISMATCH"
BAD_JSON = "BAD_JSON"
BAD_PAYLOAD = "BAD_PAYLOAD"
OVERSIZE = "OVERSIZE"


class WireError(Exception):
    def __init__(self, code: str, detail: str = "", needed: int | None = None):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.needed = needed  # for TRUNCATED: total bytes required from offset


@dataclass(frozen=True)
class Hello:
    payload: dict
    type: int = field(default=T_HELLO, init=False)


@dataclass(frozen=True)
class Ping:
    nonce: int
    type: int = field(default=T_PING, init=False)


@dataclass(frozen=True)
class Pong:
    nonce: int
    type: int = field(default=T_PONG, init=False)


@dataclass(frozen=True)
class TimeSyncReq:
    t1: int
    type: int = field(default=T_TIMESYNC_REQ, init=False)


@dataclass(frozen=True)
class TimeSyncResp:
    t1: int
    t2: int
    t3: int
    type: int = field(default=T_TIMESYNC_RESP, init=False)


@dataclass(frozen=True)
class Subscribe:
    payload: dict
    type: int = field(default=T_SUBSCRIBE, init=False)


@dataclass(frozen=True)
class Unsubscribe:
    payload: dict
    type: int = field(default=T_UNSUBSCRIBE, init=False)


@dataclass(frozen=True)
class FrameMsg:
    stream_id: int
    seq: int
    capture_ts_ns: int
    session_ts_ns: int
    flags: int
    codec_id: int
    data: bytes
    type: int = field(default=T_FRAME, init=False)


@dataclass(frozen=True)
class Metrics:
    payload: dict
    type: int = field(default=T_METRICS, init=False)


@dataclass(frozen=True)
class Control:
    payload: dict
    type: int = field(default=T_CONTROL, init=False)


@dataclass(frozen=True)
class ControlAck:
    payload: dict
    type: int = field(default=T_CONTROL_ACK, init=False)


@dataclass(frozen=True)
class ErrorMsg:
    payload: dict
    type: int = field(default=T_ERROR, init=False)


@dataclass(frozen=True)
class Bye:
    type: int = field(default=T_BYE, init=False)


_JSON_TYPES = {T_HELLO, T_SUBSCRIBE, T_UNSUBSCRIBE, T_METRICS, T_CONTROL, T_CONTROL_ACK, T_ERROR}
_JSON_CLASSES = {
    T_HELLO: Hello,
    T_SUBSCRIBE: Subscribe,
    T_UNSUBSCRIBE: Unsubscribe,
    T_METRICS: Metrics,
    T_CONTROL: Control,
    T_CONTROL_ACK: ControlAck,
    T_ERROR: ErrorMsg,
}
_ALL_TYPES = _JSON_TYPES | {T_PING, T_PONG, T_TIMESYNC_REQ, T_TIMESYNC_RESP, T_FRAME, T_BYE}

Message = (Hello | Ping | Pong | TimeSyncReq | TimeSyncResp | Subscribe | Unsubscribe
           | FrameMsg | Metrics | Control | ControlAck | ErrorMsg | Bye)


def _json_bytes(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _encode_payload(msg: Message) -> bytes:
    t = msg.type
    if t in _JSON_TYPES:
        return _json_bytes(msg.payload)
    if t in (T_PING, T_PONG):
        return _U64.pack(msg.nonce)
    if t == T_TIMESYNC_REQ:
        return _U64.pack(msg.t1)
    if t == T_TIMESYNC_RESP:
        return _TSRESP.pack(msg.t1, msg.t2, msg.t3)
    if t == T_FRAME:
        return FRAME_HEADER.pack(msg.stream_id, msg.seq, msg.capture_ts_ns,
                                 msg.session_ts_ns, msg.flags, msg.codec_id, 0) + bytes(msg.data)
    return b""  # BYE


def encode_message(msg: Message) -> bytes:
    """Serialize one message; deterministic for identical inputs."""
    payload = _encode_payload(msg)
    if len(payload) > MAX_PAYLOAD:
        raise WireError(OVERSIZE, f"payload {len(payload)} exceeds u32 bound")
    head = _HEADER.pack(MAGIC, VERSION, msg.type, len(payload))
    crc = crc32c(payload, crc32c(head))
    return head + payload + crc.to_bytes(4, "big")


def encode_frame_parts(stream_id: int, seq: int, capture_ts_ns: int, session_ts_ns: int,
                       flags: int, codec_id: int, data) -> tuple[bytes, memoryview, bytes]:
    """FRAME split into (head, data, trailer) so senders can avoid copying *data*."""
    n = FRAME_HEADER_LEN + len(data)
    if n > MAX_PAYLOAD:
        raise WireError(OVERSIZE, f"payload {n} exceeds u32 bound")
    head = (_HEADER.pack(MAGIC, VERSION, T_FRAME, n)
            + FRAME_HEADER.pack(stream_id, seq, capture_ts_ns, session_ts_ns, flags, codec_id, 0))
    crc = crc32c(data, crc32c(head))
    return head, memoryview(data), crc.to_bytes(4, "big")


def _parse_payload(t: int, body) -> Message:
    n = len(body)
    if t in _JSON_TYPES:
        try:
            obj = json.loads(bytes(body).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise WireError(BAD_JSON, str(e)) from None
        if not isinstance(obj, dict):
            raise WireError(BAD_JSON, "payload must be a JSON object")
        return _JSON_CLASSES[t](obj)
    if t in (T_PING, T_PONG):
        if n != 8:
            raise WireError(BAD_PAYLOAD, f"ping/pong payload must be 8 bytes, got {n}")
        cls = Ping if t == T_PING else Pong
        return cls(_U64.unpack(body)[0])
    if t == T_TIMESYNC_REQ:
        if n != 8:
            raise WireError(BAD_PAYLOAD, f"timesync req payload must be 8 bytes, got {n}")
        return TimeSyncReq(_U64.unpack(body)[0])
    if t == T_TIMESYNC_RESP:
        if n != 24:
            raise WireError(BAD_PAYLOAD, f"timesync resp payload must be 24 bytes, got {n}")
        return TimeSyncResp(*_TSRESP.unpack(body))
    if t == T_FRAME:
        if n < FRAME_HEADER_LEN:
            raise WireError(BAD_PAYLOAD, f"frame payload shorter than header ({n})")
        sid, seq, cap, ses, flags, codec, reserved = FRAME_HEADER.unpack_from(body, 0)
        return FrameMsg(sid, seq, cap, ses, flags, codec, bytes(body[FRAME_HEADER_LEN:]))
    # BYE
    if n != 0:
        raise WireError(BAD_PAYLOAD, f"bye payload must be empty, got {n}")
    return Bye()


def decode_message(data, offset: int = 0) -> tuple[Message, int]:
    """Decode one message starting at *offset*; returns (message, bytes consumed).

    Raises :class:`WireError`; TRUNCATED errors carry ``needed`` (total bytes
    required from *offset*) and are recoverable for stream decoding.
    """
    view = memoryview(data)[offset:]
    avail = len(view)
    if avail >= 1 and view[0] != MAGIC[0]:
        raise WireError(BAD_MAGIC, f"first byte 0x{view[0]:02X}")
    if avail >= 2 and view[1] != MAGIC[1]:
        raise WireError(BAD_MAGIC, f"second byte 0x{view[1]:02X}")
    if avail >= 3 and view[2] != VERSION:
        raise WireError(BAD_VERSION, f"version 0x{view[2]:02X}")
    if avail >= 4 and view[3] not in _ALL_TYPES:
        raise WireError(UNKNOWN_TYPE, f"type 0x{view[3]:02X}")
    if avail < HEADER_LEN:
        raise WireError(TRUNCATED, "incomplete fixed header", needed=HEADER_LEN)
    _, _, mtype, plen = _HEADER.unpack_from(view, 0)
    total = HEADER_LEN + plen + TRAILER_LEN
    if avail < total:
        raise WireError(TRUNCATED, f"have {avail} of {total} bytes", needed=total)
    body = view[HEADER_LEN:HEADER_LEN + plen]
    stored = int.from_bytes(view[HEADER_LEN + plen:total], "big")
    actual = crc32c(body, crc32c(view[:HEADER_LEN]))
    if stored != actual:
        raise WireError(CRC_MISMATCH, f"stored 0x{stored:08X} != computed 0x{actual:08X}")
    return _parse_payload(mtype, body), total


def decode_stream(data) -> list[Message]:
    """Decode a concatenation of whole messages; raises on any residue."""
    out = []
    off = 0
    n = len(data)
    while off < n:
        msg, used = decode_message(data, off)
        out.append(msg)
        off += used
    return out


class MessageSocket:
    """Blocking socket wrapper: exact-length reads, minimal copies for FRAME."""

    def __init__(self, sock):
        self.sock = sock

    def _read_exact_into(self, buf: memoryview) -> None:
        pos = 0
        n = len(buf)
        while pos < n:
            got = self.sock.recv_into(buf[pos:])
            if got == 0:
                raise ConnectionError("peer closed mid-message" if pos else "peer closed")
            pos += got

    def read_message(self):
        """Read one message. FRAME payloads come back as memoryview (no copy)."""
        head = bytearray(HEADER_LEN)
        self._read_exact_into(memoryview(head))
        if head[0] != MAGIC[0] or head[1] != MAGIC[1]:
            raise WireError(BAD_MAGIC, head[:2].hex())
        if head[2] != VERSION:
            raise WireError(BAD_VERSION, f"0x{head[2]:02X}")
        mtype = head[3]
        if mtype not in _ALL_TYPES:
            raise WireError(UNKNOWN_TYPE, f"0x{mtype:02X}")
        plen = int.from_bytes(head[4:8], "big")
        rest = bytearray(plen + TRAILER_LEN)
        self._read_exact_into(memoryview(rest))
        body = memoryview(rest)[:plen]
        stored = int.from_bytes(rest[plen:], "big")
        actual = crc32c(body, crc32c(head))
        if stored != actual:
            raise WireError(CRC_MISMATCH, f"stored 0x{stored:08X} != computed 0x{actual:08X}")
        if mtype == T_FRAME:
            if plen < FRAME_HEADER_LEN:
                raise WireError(BAD_PAYLOAD, f"frame payload shorter than header ({plen})")
            sid, seq, cap, ses, flags, codec, _ = FRAME_HEADER.unpack_from(body, 0)
            return FrameMsg(sid, seq, cap, ses, flags, codec, body[FRAME_HEADER_LEN:])
        return _parse_payload(mtype, body)

    def send_message(self, msg: Message, lock=None) -> None:
        if msg.type == T_FRAME:
            head, data, tail = encode_frame_parts(
                msg.stream_id, msg.seq, msg.capture_ts_ns, msg.session_ts_ns,
                msg.flags, msg.codec_id, msg.data)
            if lock:
                with lock:
                    self.sock.sendall(head)
                    self.sock.sendall(data)
                    self.sock.sendall(tail)
            else:
                self.sock.sendall(head)
                self.sock.sendall(data)
                self.sock.sendall(tail)
            return
        raw = encode_message(msg)
        if lock:
            with lock:
                self.sock.sendall(raw)
        else:
            self.sock.sendall(raw)
