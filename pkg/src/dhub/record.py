"""Chunked on-disk recording: writer, time-indexed reader, verifier, repair.

Layout per session directory::

    <storage>/<session>/
        .partial                   removed by finalize
        config.json                session config echo (lets repair rebuild)
        manifest.json              written at finalize only
        streams/<id>/chunk-NNNNNN.dhc
        streams/<id>/index.dhi

Chunk files: ``"DHC1" | stream_id u32 | chunk_index u32`` then records of
``seq u64 | capture_ts_ns u64 | session_ts_ns u64 | codec_id u8 | reserved u8
| payload_len u32 | payload | crc u32`` with CRC-32C over seq..payload.
Index files: ``session_ts_ns u64 | chunk_index u32 | byte_offset u64`` per
record, sorted by session timestamp. All integers big-endian.
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec as codec_mod
from .clocksync import OffsetEstimate
from .core import Frame, SessionConfig, StreamConfig, StreamKind, payload_size
from . import simdev

FORMAT_VERSION = 1
CHUNK_MAGIC = b"DHC1"
CHUNK_HEADER = struct.Struct(">4sII")  # magic, stream_id, chunk_index
RECORD_PREFIX = struct.Struct(">QQQBBI")  # seq, capture, session, codec, reserved, payload_len
RECORD_OVERHEAD = RECORD_PREFIX.size + 4  # 34 bytes: prefix + trailing crc
INDEX_ENTRY = struct.Struct(">QIQ")
INDEX_DTYPE = np.dtype([("ts", ">u8"), ("chunk", ">u4"), ("off", ">u8")])

CHUNK_MAX_BYTES = 256 * 1024 * 1024
CHUNK_MAX_SPAN_NS = 10 * 1_000_000_000
FLUSH_INTERVAL_NS = 1_000_000_000

WRITE_FAILED = "WRITE_FAILED"
SEQ_ORDER = "SEQ_ORDER"
UNKNOWN_STREAM = "UNKNOWN_STREAM"
CRC_MISMATCH = "CRC_MISMATCH"
BAD_CHUNK = "BAD_CHUNK"
NOT_FINALIZED = "NOT_FINALIZED"
EXISTS = "EXISTS"

from .crc import crc32c


class RecordError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


def _stream_dir(root: Path, stream_id: int) -> Path:
    return root / "streams" / str(stream_id)


def _chunk_name(index: int) -> str:
    return f"chunk-{index:06d}.dhc"


class _StreamWriter:
    def __init__(self, root: Path, cfg: StreamConfig):
        self.cfg = cfg
        self.stream_id = cfg.descriptor.stream_id
        self.dir = _stream_dir(root, self.stream_id)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.frame_count = 0
        self.byte_count = 0
        self.first_ts: int | None = None
        self.last_ts: int | None = None
        self.last_seq = -1
        self.index: list[tuple[int, int, int]] = []
        self.chunks: list[dict] = []
        self._fh = None
        self._chunk_index = -1
        self._chunk_bytes = 0
        self._chunk_records = 0
        self._chunk_first_ts: int | None = None
        self._chunk_crc = 0
        self._last_flush_ns = time.monotonic_ns()

    def _open_chunk(self) -> None:
        self._close_chunk()
        self._chunk_index += 1
        path = self.dir / _chunk_name(self._chunk_index)
        self._fh = open(path, "wb", buffering=1024 * 1024)
        header = CHUNK_HEADER.pack(CHUNK_MAGIC, self.stream_id, self._chunk_index)
        self._fh.write(header)
        self._chunk_bytes = len(header)
        self._chunk_records = 0
        self._chunk_first_ts = None
        self._chunk_crc = crc32c(header)

    def _close_chunk(self) -> None:
        if self._fh is None:
            return
        self._fh.flush()
        self._fh.close()
        self.chunks.append({
            "file": f"streams/{self.stream_id}/{_chunk_name(self._chunk_index)}",
            "chunk_index": self._chunk_index,
            "records": self._chunk_records,
            "bytes": self._chunk_bytes,
            "crc32c": self._chunk_crc,
        })
        self._fh = None

    def append(self, frame: Frame) -> None:
        if frame.seq <= self.last_seq:
            raise RecordError(SEQ_ORDER,
                              f"stream {self.stream_id}: seq {frame.seq} after {self.last_seq}")
        payload = frame.payload
        rec_len = RECORD_OVERHEAD + len(payload)
        ts = frame.session_ts_ns
        try:
            if self._fh is None:
                self._open_chunk()
            elif self._chunk_records > 0 and (
                    self._chunk_bytes + rec_len > CHUNK_MAX_BYTES
                    or (self._chunk_first_ts is not None
                        and ts - self._chunk_first_ts >= CHUNK_MAX_SPAN_NS)):
                self._open_chunk()
            offset = self._chunk_bytes
            prefix = RECORD_PREFIX.pack(frame.seq, frame.capture_ts_ns, ts,
                                        frame.codec_id, 0, len(payload))
            crc = crc32c(payload, crc32c(prefix))
            self._fh.write(prefix)
            self._fh.write(payload)
            self._fh.write(crc.to_bytes(4, "big"))
            now = time.monotonic_ns()
            if now - self._last_flush_ns >= FLUSH_INTERVAL_NS:
                self._fh.flush()
                self._last_flush_ns = now
            self._chunk_crc = crc32c(crc.to_bytes(4, "big"),
                                     crc32c(payload, crc32c(prefix, self._chunk_crc)))
        except OSError as e:
            raise RecordError(WRITE_FAILED, str(e)) from e
        self._chunk_bytes += rec_len
        self._chunk_records += 1
        if self._chunk_first_ts is None:
            self._chunk_first_ts = ts
        self.index.append((ts, self._chunk_index, offset))
        self.frame_count += 1
        self.byte_count += len(payload)
        self.last_seq = frame.seq
        self.first_ts = ts if self.first_ts is None else min(self.first_ts, ts)
        self.last_ts = ts if self.last_ts is None else max(self.last_ts, ts)

    def finish(self) -> None:
        self._close_chunk()
        self.index.sort(key=lambda e: e[0])
        with open(self.dir / "index.dhi", "wb") as f:
            f.write(b"".join(INDEX_ENTRY.pack(*e) for e in self.index))


class RecordingWriter:
    """One open recording session; one append path per declared stream."""

    def __init__(self, storage_dir, config: SessionConfig,
                 registry: codec_mod.CodecRegistry = codec_mod.DEFAULT_REGISTRY):
        self.config = config
        self.registry = registry
        self.root = Path(storage_dir) / config.session_name
        if self.root.exists():
            raise RecordError(EXISTS, str(self.root))
        self.root.mkdir(parents=True)
        (self.root / ".partial").write_bytes(b"")
        (self.root / "config.json").write_text(config.to_json())
        self.created_ts_ns = time.time_ns()
        self._writers = {s.descriptor.stream_id: _StreamWriter(self.root, s)
                         for s in config.streams}
        self.finalized = False

    def append(self, frame: Frame) -> None:
        w = self._writers.get(frame.stream_id)
        if w is None:
            raise RecordError(UNKNOWN_STREAM, f"stream {frame.stream_id} not declared")
        w.append(frame)

    def stream_counters(self, stream_id: int) -> dict:
        w = self._writers[stream_id]
        return {"frame_count": w.frame_count, "byte_count": w.byte_count}

    def finalize(self, clock_estimates: dict[str, OffsetEstimate] | None = None,
                 drop_counts: dict[int, int] | None = None,
                 degraded: bool = False) -> dict:
        """Flush everything, write index + manifest, drop the .partial marker."""
        drop_counts = drop_counts or {}
        streams = []
        for sid, w in sorted(self._writers.items()):
            w.finish()
            cfg = w.cfg
            streams.append({
                "descriptor": cfg.descriptor.to_json_dict(),
                "adapter": cfg.adapter.to_json_dict(),
                "codec_id": cfg.codec_id,
                "codec": self.registry.describe(cfg.codec_id)
                         if self.registry.is_registered(cfg.codec_id) else {"kind": "unknown"},
                "lossy": self.registry.is_lossy(cfg.codec_id),
                "frame_count": w.frame_count,
                "byte_count": w.byte_count,
                "first_session_ts_ns": w.first_ts,
                "last_session_ts_ns": w.last_ts,
                "drop_count": int(drop_counts.get(sid, 0)),
                "chunks": w.chunks,
                "index_file": f"streams/{sid}/index.dhi",
            })
        manifest = {
            "format_version": FORMAT_VERSION,
            "session_name": self.config.session_name,
            "created_ts_ns": self.created_ts_ns,
            "finalized_ts_ns": time.time_ns(),
            "degraded": degraded,
            "clock": {hub: est.to_json_dict() for hub, est in (clock_estimates or {}).items()},
            "streams": streams,
        }
        tmp = self.root / "manifest.json.tmp"
        with open(tmp, "w") as f:
            json.dump(manifest, f, indent=2)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self.root / "manifest.json")
        (self.root / ".partial").unlink(missing_ok=True)
        self.finalized = True
        return manifest

    def abort(self) -> None:
        for w in self._writers.values():
            if w._fh is not None:
                w._fh.flush()
                w._fh.close()
                w._fh = None


def _load_config(root: Path) -> SessionConfig:
    return SessionConfig.from_json((root / "config.json").read_text())


@dataclass
class _StreamIndex:
    cfg: StreamConfig
    entry: dict
    ts: np.ndarray
    chunk: np.ndarray
    off: np.ndarray


class Recording:
    """Read access to a finalized (or repaired) recording."""

    def __init__(self, path, registry: codec_mod.CodecRegistry = codec_mod.DEFAULT_REGISTRY):
        self.root = Path(path)
        self.registry = registry
        mpath = self.root / "manifest.json"
        if not mpath.exists() or (self.root / ".partial").exists():
            raise RecordError(NOT_FINALIZED,
                              f"{self.root} has no manifest (run repair for partial recordings)")
        self.manifest = json.loads(mpath.read_text())
        self.config = _load_config(self.root)
        self._streams: dict[int, _StreamIndex] = {}
        for entry in self.manifest["streams"]:
            sid = entry["descriptor"]["stream_id"]
            cfg = self.config.stream(sid)
            raw = np.fromfile(self.root / entry["index_file"], dtype=INDEX_DTYPE)
            self._streams[sid] = _StreamIndex(
                cfg=cfg, entry=entry,
                ts=raw["ts"].astype(np.uint64),
                chunk=raw["chunk"].astype(np.uint32),
                off=raw["off"].astype(np.uint64),
            )
        self._fh_cache: dict[tuple[int, int], object] = {}

    def close(self) -> None:
        for fh in self._fh_cache.values():
            fh.close()
        self._fh_cache.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def stream_ids(self) -> list[int]:
        return sorted(self._streams)

    def stream_entry(self, stream_id: int) -> dict:
        return self._streams[stream_id].entry

    def _chunk_file(self, stream_id: int, chunk_index: int):
        key = (stream_id, chunk_index)
        fh = self._fh_cache.get(key)
        if fh is None:
            fh = open(_stream_dir(self.root, stream_id) / _chunk_name(chunk_index), "rb")
            self._fh_cache[key] = fh
        return fh

    def _read_record(self, stream_id: int, chunk_index: int, offset: int,
                     decode: bool) -> Frame:
        fh = self._chunk_file(stream_id, chunk_index)
        fh.seek(offset)
        prefix = fh.read(RECORD_PREFIX.size)
        if len(prefix) != RECORD_PREFIX.size:
            raise RecordError(BAD_CHUNK, f"short record at chunk {chunk_index} offset {offset}")
        seq, cap, ses, codec_id, _, plen = RECORD_PREFIX.unpack(prefix)
        rest = fh.read(plen + 4)
        if len(rest) != plen + 4:
            raise RecordError(BAD_CHUNK, f"short payload at chunk {chunk_index} offset {offset}")
        payload, stored = rest[:plen], int.from_bytes(rest[plen:], "big")
        if crc32c(payload, crc32c(prefix)) != stored:
            raise RecordError(CRC_MISMATCH,
                              f"stream {stream_id} chunk {chunk_index} offset {offset}")
        if decode:
            expected = payload_size(self._streams[stream_id].cfg.descriptor)
            payload = self.registry.decode(codec_id, payload, expected)
        return Frame(stream_id=stream_id, seq=seq, capture_ts_ns=cap,
                     session_ts_ns=ses, codec_id=codec_id, payload=payload)

    def read_range(self, stream_id: int, t0: int, t1: int, decode: bool = True):
        """Frames with t0 <= session_ts_ns < t1, in session-time order."""
        si = self._streams.get(stream_id)
        if si is None:
            raise RecordError(UNKNOWN_STREAM, str(stream_id))
        lo = int(np.searchsorted(si.ts, t0, side="left"))
        hi = int(np.searchsorted(si.ts, t1, side="left"))
        for i in range(lo, hi):
            yield self._read_record(stream_id, int(si.chunk[i]), int(si.off[i]), decode)

    def read_all(self, stream_id: int, decode: bool = True):
        si = self._streams[stream_id]
        for i in range(len(si.ts)):
            yield self._read_record(stream_id, int(si.chunk[i]), int(si.off[i]), decode)

    def aligned_cursor(self, stream_ids, master_stream: int, decode: bool = True):
        """Sample-and-hold alignment: per master frame at time t, pair it with
        each other stream's latest frame whose session_ts_ns <= t (None if none).
        """
        ids = list(stream_ids)
        if master_stream not in ids:
            raise RecordError(UNKNOWN_STREAM, f"master {master_stream} not in stream set")
        for sid in ids:
            if sid not in self._streams:
                raise RecordError(UNKNOWN_STREAM, str(sid))
        others = [sid for sid in ids if sid != master_stream]
        mi = self._streams[master_stream]
        ptr = {sid: -1 for sid in others}
        held: dict[int, Frame | None] = {sid: None for sid in others}
        for i in range(len(mi.ts)):
            t = int(mi.ts[i])
            master = self._read_record(master_stream, int(mi.chunk[i]), int(mi.off[i]), decode)
            row: dict[int, Frame | None] = {}
            for sid in others:
                si = self._streams[sid]
                p = ptr[sid]
                while p + 1 < len(si.ts) and int(si.ts[p + 1]) <= t:
                    p += 1
                if p != ptr[sid]:
                    ptr[sid] = p
                    held[sid] = self._read_record(sid, int(si.chunk[p]), int(si.off[p]), decode)
                row[sid] = held[sid]
            yield master, row


@dataclass
class Finding:
    kind: str
    stream_id: int | None
    file: str | None
    offset: int | None
    detail: str

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "stream_id": self.stream_id, "file": self.file,
                "offset": self.offset, "detail": self.detail}


@dataclass
class VerifyReport:
    findings: list[Finding] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.findings

    def add(self, kind, detail, stream_id=None, file=None, offset=None):
        self.findings.append(Finding(kind, stream_id, file, offset, detail))


def _walk_chunk(path: Path):
    """Yield (offset, seq, capture, session, codec_id, payload, crc_ok) per record;
    stops at the first structurally broken or CRC-failing record."""
    data = path.read_bytes()
    if len(data) < CHUNK_HEADER.size:
        return None, []
    magic, stream_id, chunk_index = CHUNK_HEADER.unpack_from(data, 0)
    header = (magic, stream_id, chunk_index)
    records = []
    pos = CHUNK_HEADER.size
    n = len(data)
    while pos + RECORD_PREFIX.size <= n:
        seq, cap, ses, codec_id, _, plen = RECORD_PREFIX.unpack_from(data, pos)
        end = pos + RECORD_PREFIX.size + plen + 4
        if end > n:
            break
        payload = data[pos + RECORD_PREFIX.size:end - 4]
        stored = int.from_bytes(data[end - 4:end], "big")
        ok = crc32c(data[pos:end - 4]) == stored
        records.append((pos, seq, cap, ses, codec_id, payload, ok))
        if not ok:
            break
        pos = end
    return header, records


def verify(path, registry: codec_mod.CodecRegistry = codec_mod.DEFAULT_REGISTRY,
           deep: bool = False) -> VerifyReport:
    """Re-check CRCs, counts, seq density and simulated payload integrity."""
    root = Path(path)
    report = VerifyReport()
    if (root / ".partial").exists() or not (root / "manifest.json").exists():
        report.add("PARTIAL", "recording not finalized; run repair to salvage")
        return report
    manifest = json.loads((root / "manifest.json").read_text())
    try:
        config = _load_config(root)
    except OSError:
        config = None
        report.add("MISSING_FILE", "config.json missing")

    total_frames = 0
    for entry in manifest.get("streams", []):
        sid = entry["descriptor"]["stream_id"]
        adapter = entry.get("adapter") or {}
        atype = adapter.get("adapter_type")
        seed = int(adapter.get("seed", 0))
        desc = None
        if config is not None:
            try:
                desc = config.stream(sid).descriptor
            except KeyError:
                report.add("MISSING_FILE", f"stream {sid} absent from config.json", stream_id=sid)
        fps = adapter.get("fps") or (desc.nominal_fps if desc else None)
        expected_len = payload_size(desc) if desc else None

        seen = 0
        bytes_seen = 0
        gap_total = 0
        prev_seq = None
        for chunk in entry.get("chunks", []):
            cpath = root / chunk["file"]
            if not cpath.exists():
                report.add("MISSING_FILE", f"chunk missing: {chunk['file']}",
                           stream_id=sid, file=chunk["file"])
                continue
            file_crc = crc32c(cpath.read_bytes())
            if file_crc != chunk.get("crc32c"):
                report.add("CHUNK_CRC", f"file crc 0x{file_crc:08X} != manifest "
                                        f"0x{chunk.get('crc32c', 0):08X}",
                           stream_id=sid, file=chunk["file"])
            header, records = _walk_chunk(cpath)
            if header is None or header[0] != CHUNK_MAGIC or header[1] != sid:
                report.add("BAD_CHUNK", "bad chunk header", stream_id=sid, file=chunk["file"])
                continue
            for off, seq, cap, ses, codec_id, payload, ok in records:
                if not ok:
                    report.add(CRC_MISMATCH, f"record crc failure at offset {off}",
                               stream_id=sid, file=chunk["file"], offset=off)
                    continue
                seen += 1
                bytes_seen += len(payload)
                if prev_seq is not None:
                    if seq <= prev_seq:
                        report.add(SEQ_ORDER, f"seq {seq} after {prev_seq}",
                                   stream_id=sid, file=chunk["file"], offset=off)
                    else:
                        gap_total += seq - prev_seq - 1
                else:
                    gap_total += seq  # records start at 0 unless frames were dropped
                prev_seq = seq

                if atype and expected_len is not None and registry.is_registered(codec_id):
                    try:
                        decoded = registry.decode(codec_id, payload, expected_len)
                    except codec_mod.CodecError as e:
                        report.add("DECODE_FAILED", str(e), stream_id=sid,
                                   file=chunk["file"], offset=off)
                        continue
                    if atype in (simdev.SIM_US, simdev.SIM_RGBD) and desc.kind is not StreamKind.IMAGE_DEPTH:
                        try:
                            emb = simdev.embedded_seq(decoded)
                        except ValueError as e:
                            report.add("SIM_PAYLOAD", str(e), stream_id=sid,
                                       file=chunk["file"], offset=off)
                            continue
                        if emb != seq:
                            report.add("SIM_PAYLOAD", f"embedded seq {emb} != record seq {seq}",
                                       stream_id=sid, file=chunk["file"], offset=off)
                        elif deep:
                            want = simdev.expected_sim_payload(atype, desc.kind, seed, seq,
                                                               desc.width, desc.height, fps or 0)
                            if decoded != want:
                                report.add("SIM_PAYLOAD", "payload bytes differ from regeneration",
                                           stream_id=sid, file=chunk["file"], offset=off)
                    elif atype == simdev.SIM_RGBD:
                        want = simdev.generate_depth_frame(seed, seq, desc.width, desc.height)
                        if decoded != want:
                            report.add("SIM_PAYLOAD", "depth payload differs from formula",
                                       stream_id=sid, file=chunk["file"], offset=off)
                    elif atype == simdev.SIM_POSE and fps:
                        resid = simdev.pose_trajectory_residual(decoded, seed, seq, fps)
                        if resid > 1e-9:
                            report.add("SIM_PAYLOAD", f"trajectory residual {resid:.3e}",
                                       stream_id=sid, file=chunk["file"], offset=off)

        if seen != entry.get("frame_count"):
            report.add("COUNT_MISMATCH",
                       f"manifest frame_count {entry.get('frame_count')} != on-disk {seen}",
                       stream_id=sid)
        if bytes_seen != entry.get("byte_count"):
            report.add("BYTES_MISMATCH",
                       f"manifest byte_count {entry.get('byte_count')} != on-disk {bytes_seen}",
                       stream_id=sid)
        drop_count = int(entry.get("drop_count", 0))
        if gap_total > drop_count:
            report.add("SEQ_GAP", f"{gap_total} missing seqs exceed drop_count {drop_count}",
                       stream_id=sid)
        ipath = root / entry.get("index_file", f"streams/{sid}/index.dhi")
        if not ipath.exists():
            report.add("MISSING_FILE", "index file missing", stream_id=sid)
        else:
            idx = np.fromfile(ipath, dtype=INDEX_DTYPE)
            if len(idx) != entry.get("frame_count"):
                report.add("COUNT_MISMATCH",
                           f"index has {len(idx)} entries, manifest {entry.get('frame_count')}",
                           stream_id=sid)
            if len(idx) > 1 and np.any(np.diff(idx["ts"].astype(np.int64)) < 0):
                report.add("INDEX_ORDER", "index not sorted by session_ts", stream_id=sid)
        total_frames += seen
    report.stats["frames_checked"] = total_frames
    return report


def repair(path, registry: codec_mod.CodecRegistry = codec_mod.DEFAULT_REGISTRY) -> dict:
    """Rebuild index + manifest from the CRC-intact prefix of each stream."""
    root = Path(path)
    config = _load_config(root)
    streams = []
    for cfg in config.streams:
        sid = cfg.descriptor.stream_id
        sdir = _stream_dir(root, sid)
        chunks = sorted(sdir.glob("chunk-*.dhc")) if sdir.exists() else []
        index: list[tuple[int, int, int]] = []
        chunk_entries = []
        frame_count = 0
        byte_count = 0
        first_ts = last_ts = None
        stopped = False
        for cpath in chunks:
            if stopped:
                break
            header, records = _walk_chunk(cpath)
            if header is None or header[0] != CHUNK_MAGIC:
                break
            chunk_index = header[2]
            good = 0
            good_end = CHUNK_HEADER.size
            for off, seq, cap, ses, codec_id, payload, ok in records:
                if not ok:
                    stopped = True
                    break
                index.append((ses, chunk_index, off))
                frame_count += 1
                byte_count += len(payload)
                first_ts = ses if first_ts is None else min(first_ts, ses)
                last_ts = ses if last_ts is None else max(last_ts, ses)
                good += 1
                good_end = off + RECORD_OVERHEAD + len(payload)
            data = cpath.read_bytes()[:good_end]
            chunk_entries.append({
                "file": f"streams/{sid}/{cpath.name}",
                "chunk_index": chunk_index,
                "records": good,
                "bytes": good_end,
                "crc32c": crc32c(data),
            })
            if good_end < cpath.stat().st_size:
                stopped = True
        index.sort(key=lambda e: e[0])
        with open(sdir / "index.dhi", "wb") as f:
            f.write(b"".join(INDEX_ENTRY.pack(*e) for e in index))
        streams.append({
            "descriptor": cfg.descriptor.to_json_dict(),
            "adapter": cfg.adapter.to_json_dict(),
            "codec_id": cfg.codec_id,
            "codec": registry.describe(cfg.codec_id)
                     if registry.is_registered(cfg.codec_id) else {"kind": "unknown"},
            "lossy": registry.is_lossy(cfg.codec_id),
            "frame_count": frame_count,
            "byte_count": byte_count,
            "first_session_ts_ns": first_ts,
            "last_session_ts_ns": last_ts,
            "drop_count": 0,
            "chunks": chunk_entries,
            "index_file": f"streams/{sid}/index.dhi",
            "recovered": True,
        })
    manifest = {
        "format_version": FORMAT_VERSION,
        "session_name": config.session_name,
        "created_ts_ns": None,
        "finalized_ts_ns": time.time_ns(),
        "recovered": True,
        "degraded": True,
        "clock": {},
        "streams": streams,
    }
    tmp = root / "manifest.json.tmp"
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=2)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, root / "manifest.json")
    (root / ".partial").unlink(missing_ok=True)
    return manifest
