"""Shared domain types: stream descriptors, frames, poses, session config.

All timestamps are unsigned nanoseconds. Two clock domains exist: each hub's
monotonic clock (``capture_ts_ns``) and the supervisor's clock
(``session_ts_ns``, 0 until an offset estimate has been applied). Every
multi-byte integer in any serialized form is big-endian.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from enum import Enum


class StreamKind(str, Enum):
    IMAGE_RGB = "IMAGE_RGB"
    IMAGE_DEPTH = "IMAGE_DEPTH"
    POSE = "POSE"


class PixelFormat(str, Enum):
    RGB8 = "RGB8"
    DEPTH16 = "DEPTH16"
    NONE = "NONE"


class PortKind(str, Enum):
    HDMI_IN = "HDMI_IN"
    ETHERNET = "ETHERNET"
    USB_C = "USB_C"
    USB_A = "USB_A"
    VIRTUAL = "VIRTUAL"


POSE_PAYLOAD_SIZE = 56  # 7 big-endian float64: px,py,pz,qw,qx,qy,qz
_POSE_STRUCT = struct.Struct(">7d")


@dataclass(frozen=True)
class StreamDescriptor:
    stream_id: int
    name: str
    kind: StreamKind
    width: int
    height: int
    pixel_format: PixelFormat
    nominal_fps: float
    source_hub: str
    source_port_kind: PortKind = PortKind.VIRTUAL

    def to_json_dict(self) -> dict:
        return {
            "stream_id": self.stream_id,
            "name": self.name,
            "kind": self.kind.value,
            "width": self.width,
            "height": self.height,
            "pixel_format": self.pixel_format.value,
            "nominal_fps": self.nominal_fps,
            "source_hub": self.source_hub,
            "source_port_kind": self.source_port_kind.value,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "StreamDescriptor":
        return cls(
            stream_id=int(d["stream_id"]),
            name=str(d["name"]),
            kind=StreamKind(d["kind"]),
            width=int(d.get("width", 0)),
            height=int(d.get("height", 0)),
            pixel_format=PixelFormat(d["pixel_format"]),
            nominal_fps=float(d["nominal_fps"]),
            source_hub=str(d["source_hub"]),
            source_port_kind=PortKind(d.get("source_port_kind", "VIRTUAL")),
        )


@dataclass
class Frame:
    stream_id: int
    seq: int
    capture_ts_ns: int
    session_ts_ns: int
    codec_id: int
    payload: bytes  # bytes-like; memoryview allowed on hot paths


@dataclass(frozen=True)
class Pose:
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]  # (w, x, y, z), unit norm

    def to_payload(self) -> bytes:
        return _POSE_STRUCT.pack(*self.position, *self.orientation)

    @classmethod
    def from_payload(cls, payload: bytes) -> "Pose":
        if len(payload) != POSE_PAYLOAD_SIZE:
            raise ValueError(f"pose payload must be {POSE_PAYLOAD_SIZE} bytes, got {len(payload)}")
        v = _POSE_STRUCT.unpack(payload)
        return cls(position=(v[0], v[1], v[2]), orientation=(v[3], v[4], v[5], v[6]))


@dataclass(frozen=True)
class AdapterConfig:
    adapter_type: str  # SIM_US | SIM_POSE | SIM_RGBD
    seed: int = 1
    fps: float | None = None  # overrides descriptor nominal_fps when set
    jitter_ppm: int = 0

    def to_json_dict(self) -> dict:
        d = {"adapter_type": self.adapter_type, "seed": self.seed, "jitter_ppm": self.jitter_ppm}
        if self.fps is not None:
            d["fps"] = self.fps
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "AdapterConfig":
        return cls(
            adapter_type=str(d["adapter_type"]),
            seed=int(d.get("seed", 1)),
            fps=float(d["fps"]) if "fps" in d and d["fps"] is not None else None,
            jitter_ppm=int(d.get("jitter_ppm", 0)),
        )


@dataclass(frozen=True)
class StreamConfig:
    descriptor: StreamDescriptor
    adapter: AdapterConfig
    codec_id: int = 0

    @property
    def fps(self) -> float:
        return self.adapter.fps if self.adapter.fps is not None else self.descriptor.nominal_fps


@dataclass(frozen=True)
class HubEndpoint:
    hub_id: str
    address: str  # host:port control address


@dataclass(frozen=True)
class SessionConfig:
    session_name: str
    hubs: tuple[HubEndpoint, ...]
    streams: tuple[StreamConfig, ...]
    storage_dir: str
    queue_capacity: int = 256
    metrics_interval_ms: int = 500

    def to_json_dict(self) -> dict:
        return {
            "session_name": self.session_name,
            "hubs": [{"hub_id": h.hub_id, "address": h.address} for h in self.hubs],
            "streams": [
                {
                    **s.descriptor.to_json_dict(),
                    "adapter": s.adapter.to_json_dict(),
                    "codec_id": s.codec_id,
                }
                for s in self.streams
            ],
            "storage_dir": self.storage_dir,
            "queue_capacity": self.queue_capacity,
            "metrics_interval_ms": self.metrics_interval_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @classmethod
    def from_json_dict(cls, d: dict) -> "SessionConfig":
        streams = []
        for s in d.get("streams", []):
            streams.append(
                StreamConfig(
                    descriptor=StreamDescriptor.from_json_dict(s),
                    adapter=AdapterConfig.from_json_dict(s["adapter"]),
                    codec_id=int(s.get("codec_id", 0)),
                )
            )
        return cls(
            session_name=str(d["session_name"]),
            hubs=tuple(HubEndpoint(str(h["hub_id"]), str(h["address"])) for h in d.get("hubs", [])),
            streams=tuple(streams),
            storage_dir=str(d.get("storage_dir", "")),
            queue_capacity=int(d.get("queue_capacity", 256)),
            metrics_interval_ms=int(d.get("metrics_interval_ms", 500)),
        )

    @classmethod
    def from_json(cls, text: str | bytes) -> "SessionConfig":
        return cls.from_json_dict(json.loads(text))

    def stream(self, stream_id: int) -> StreamConfig:
        for s in self.streams:
            if s.descriptor.stream_id == stream_id:
                return s
        raise KeyError(stream_id)


def payload_size(desc: StreamDescriptor) -> int:
    """Decoded payload byte count for one frame of *desc*."""
    if desc.kind is StreamKind.IMAGE_RGB:
        return desc.width * desc.height * 3
    if desc.kind is StreamKind.IMAGE_DEPTH:
        return desc.width * desc.height * 2
    return POSE_PAYLOAD_SIZE


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    detail: str

    def to_json_dict(self) -> dict:
        return {"code": self.code, "path": self.path, "detail": self.detail}


_ADAPTER_TYPES = {"SIM_US", "SIM_POSE", "SIM_RGBD"}
_SESSION_NAME_RE = re.compile(r"^[A-Za-z0-9._-]+$")

# machine-readable violation codes
DUP_STREAM_ID = "DUP_STREAM_ID"
UNKNOWN_HUB = "UNKNOWN_HUB"
BAD_FPS = "BAD_FPS"
BAD_DESCRIPTOR = "BAD_DESCRIPTOR"
BAD_SESSION_NAME = "BAD_SESSION_NAME"
EMPTY_STORAGE_DIR = "EMPTY_STORAGE_DIR"
DUP_HUB_ID = "DUP_HUB_ID"
BAD_HUB_ADDRESS = "BAD_HUB_ADDRESS"
UNKNOWN_ADAPTER = "UNKNOWN_ADAPTER"
RESERVED_CODEC = "RESERVED_CODEC"
BAD_QUEUE_CAPACITY = "BAD_QUEUE_CAPACITY"
BAD_METRICS_INTERVAL = "BAD_METRICS_INTERVAL"
RGBD_UNPAIRED = "RGBD_UNPAIRED"
NO_STREAMS = "NO_STREAMS"


def validate_descriptor(desc: StreamDescriptor, path: str = "") -> list[Violation]:
    out = []
    k, pf = desc.kind, desc.pixel_format
    if k is StreamKind.IMAGE_RGB and (pf is not PixelFormat.RGB8 or desc.width <= 0 or desc.height <= 0):
        out.append(Violation(BAD_DESCRIPTOR, path, "IMAGE_RGB requires RGB8 and positive width/height"))
    elif k is StreamKind.IMAGE_DEPTH and (pf is not PixelFormat.DEPTH16 or desc.width <= 0 or desc.height <= 0):
        out.append(Violation(BAD_DESCRIPTOR, path, "IMAGE_DEPTH requires DEPTH16 and positive width/height"))
    elif k is StreamKind.POSE and (pf is not PixelFormat.NONE or desc.width != 0 or desc.height != 0):
        out.append(Violation(BAD_DESCRIPTOR, path, "POSE requires pixel_format NONE and width=height=0"))
    if not (desc.nominal_fps > 0):
        out.append(Violation(BAD_FPS, path, f"nominal_fps must be > 0, got {desc.nominal_fps}"))
    if not (0 <= desc.stream_id <= 0xFFFFFFFF):
        out.append(Violation(BAD_DESCRIPTOR, path, "stream_id out of u32 range"))
    return out


def validate_session_config(cfg: SessionConfig) -> list[Violation]:
    """Every violated invariant, with a machine-readable code. Empty list means ok."""
    out: list[Violation] = []
    if not cfg.session_name or not _SESSION_NAME_RE.match(cfg.session_name):
        out.append(Violation(BAD_SESSION_NAME, "session_name",
                             "session_name must be non-empty and filesystem-safe"))
    if not cfg.storage_dir:
        out.append(Violation(EMPTY_STORAGE_DIR, "storage_dir", "storage_dir must be non-empty"))
    if cfg.queue_capacity < 1:
        out.append(Violation(BAD_QUEUE_CAPACITY, "queue_capacity", "queue_capacity must be >= 1"))
    if cfg.metrics_interval_ms < 1:
        out.append(Violation(BAD_METRICS_INTERVAL, "metrics_interval_ms", "metrics_interval_ms must be >= 1"))

    hub_ids = [h.hub_id for h in cfg.hubs]
    for i, h in enumerate(cfg.hubs):
        if hub_ids.count(h.hub_id) > 1:
            out.append(Violation(DUP_HUB_ID, f"hubs[{i}]", f"duplicate hub_id {h.hub_id!r}"))
        if ":" not in h.address:
            out.append(Violation(BAD_HUB_ADDRESS, f"hubs[{i}]", f"address {h.address!r} is not host:port"))
    known_hubs = set(hub_ids)

    if not cfg.streams:
        out.append(Violation(NO_STREAMS, "streams", "at least one stream required"))
    seen_ids: set[int] = set()
    for i, s in enumerate(cfg.streams):
        path = f"streams[{i}]"
        d = s.descriptor
        if d.stream_id in seen_ids:
            out.append(Violation(DUP_STREAM_ID, path, f"stream_id {d.stream_id} used more than once"))
        seen_ids.add(d.stream_id)
        out.extend(validate_descriptor(d, path))
        if d.source_hub not in known_hubs:
            out.append(Violation(UNKNOWN_HUB, path, f"source_hub {d.source_hub!r} not in hubs list"))
        if s.adapter.adapter_type not in _ADAPTER_TYPES:
            out.append(Violation(UNKNOWN_ADAPTER, path, f"adapter_type {s.adapter.adapter_type!r} unknown"))
        if s.adapter.fps is not None and not (s.adapter.fps > 0):
            out.append(Violation(BAD_FPS, path, f"adapter fps override must be > 0, got {s.adapter.fps}"))
        if 2 <= s.codec_id <= 127:
            out.append(Violation(RESERVED_CODEC, path, f"codec_id {s.codec_id} is reserved (use 0, 1 or >= 128)"))
        if s.adapter.adapter_type == "SIM_US" and d.kind is not StreamKind.IMAGE_RGB:
            out.append(Violation(BAD_DESCRIPTOR, path, "SIM_US emits IMAGE_RGB streams"))
        if s.adapter.adapter_type == "SIM_POSE" and d.kind is not StreamKind.POSE:
            out.append(Violation(BAD_DESCRIPTOR, path, "SIM_POSE emits POSE streams"))

    # SIM_RGBD adapters emit a lock-stepped RGB+depth pair; group by (hub, seed)
    rgbd: dict[tuple[str, int], list[StreamConfig]] = {}
    for s in cfg.streams:
        if s.adapter.adapter_type == "SIM_RGBD":
            rgbd.setdefault((s.descriptor.source_hub, s.adapter.seed), []).append(s)
    for (hub, seed), members in rgbd.items():
        kinds = sorted(m.descriptor.kind.value for m in members)
        if kinds != ["IMAGE_DEPTH", "IMAGE_RGB"]:
            out.append(Violation(RGBD_UNPAIRED, f"streams(SIM_RGBD hub={hub} seed={seed})",
                                 "SIM_RGBD needs exactly one IMAGE_RGB and one IMAGE_DEPTH stream "
                                 "sharing hub and seed"))
            continue
        a, b = members
        if (a.fps != b.fps or a.descriptor.width != b.descriptor.width
                or a.descriptor.height != b.descriptor.height):
            out.append(Violation(RGBD_UNPAIRED, f"streams(SIM_RGBD hub={hub} seed={seed})",
                                 "paired SIM_RGBD streams must share fps, width and height"))
    return out


def mean_fps(timestamps_ns, window_ns: int, now_ns: int | None = None) -> float:
    """Frames/second over the trailing *window_ns* window.

    The window is anchored at *now_ns* when given, else at the last timestamp.
    Input must be sorted ascending.
    """
    if window_ns <= 0:
        raise ValueError("window must be > 0")
    if len(timestamps_ns) == 0:
        return 0.0
    anchor = now_ns if now_ns is not None else timestamps_ns[-1]
    lo = anchor - window_ns
    # timestamps sorted: count entries in (lo, anchor]
    import bisect

    left = bisect.bisect_right(timestamps_ns, lo)
    right = bisect.bisect_right(timestamps_ns, anchor)
    return (right - left) / (window_ns / 1e9)
