"""Data Hub daemon: hosts adapters, encodes and publishes frames, obeys control.

One TCP connection to the supervisor carries control and data interleaved.
Per stream there is a drop-oldest ring buffer between the adapter tick loop
and a publisher thread; a slow link therefore costs the oldest frames, never
blocks capture, and every loss is counted. State machine::

    IDLE --configure--> READY --start--> STREAMING --stop--> READY
    any --reset--> IDLE          (configure re-validates and replaces in READY)
"""

from __future__ import annotations

import argparse
import collections
import json
import logging
import os
import socket
import threading
import time

from . import codec as codec_mod
from .clocksync import OffsetTracker, RESYNC_PERIOD_S, SyncSample
from .core import (AdapterConfig, Frame, StreamConfig, StreamDescriptor, mean_fps,
                   validate_descriptor)
from .crc import warm_up
from .simdev import SIM_RGBD, WallClock, run_adapter
from .wire import (Bye, Control, ControlAck, ErrorMsg, FrameMsg, Hello, Metrics,
                   MessageSocket, Ping, Pong, TimeSyncReq, TimeSyncResp, WireError)

log = logging.getLogger("hubd")

IDLE = "IDLE"
READY = "READY"
STREAMING = "STREAMING"

BAD_TRANSITION = "BAD_TRANSITION"
BAD_SPEC = "BAD_SPEC"
UNKNOWN_COMMAND = "UNKNOWN_COMMAND"

COMMANDS = ("CONFIGURE", "START", "STOP", "RESET", "STATUS")


def validate_hub_streams(streams: list[StreamConfig]):
    """Hub-side validation of the stream set assigned to this hub."""
    from .core import (RGBD_UNPAIRED, UNKNOWN_ADAPTER, BAD_FPS, DUP_STREAM_ID,
                       StreamKind, Violation)

    out: list[Violation] = []
    seen = set()
    for i, s in enumerate(streams):
        path = f"streams[{i}]"
        if s.descriptor.stream_id in seen:
            out.append(Violation(DUP_STREAM_ID, path, f"stream_id {s.descriptor.stream_id}"))
        seen.add(s.descriptor.stream_id)
        out.extend(validate_descriptor(s.descriptor, path))
        if s.adapter.adapter_type not in ("SIM_US", "SIM_POSE", "SIM_RGBD"):
            out.append(Violation(UNKNOWN_ADAPTER, path, s.adapter.adapter_type))
        if s.adapter.fps is not None and not (s.adapter.fps > 0):
            out.append(Violation(BAD_FPS, path, f"fps override {s.adapter.fps}"))
    rgbd: dict[int, list[StreamConfig]] = {}
    for s in streams:
        if s.adapter.adapter_type == SIM_RGBD:
            rgbd.setdefault(s.adapter.seed, []).append(s)
    for seed, members in rgbd.items():
        kinds = sorted(m.descriptor.kind.value for m in members)
        if kinds != ["IMAGE_DEPTH", "IMAGE_RGB"]:
            out.append(Violation(RGBD_UNPAIRED, f"streams(seed={seed})",
                                 "SIM_RGBD needs one IMAGE_RGB plus one IMAGE_DEPTH"))
    return out


def handle_control(state: str, cmd: dict) -> tuple[str, dict]:
    """Pure transition: (state, command) -> (new state, reply payload).

    Replies carry ok/state on success; ok=false plus a code on rejection.
    No side effects here; the daemon applies adapter start/stop by diffing
    states around this call.
    """
    name = cmd.get("cmd")
    req_id = cmd.get("req_id")
    if name not in COMMANDS:
        return state, {"ok": False, "code": UNKNOWN_COMMAND, "req_id": req_id,
                       "message": f"unknown command {name!r}"}
    if name == "STATUS":
        return state, {"ok": True, "state": state, "req_id": req_id}
    if name == "RESET":
        return IDLE, {"ok": True, "state": IDLE, "req_id": req_id}
    if name == "CONFIGURE":
        if state == STREAMING:
            return state, {"ok": False, "code": BAD_TRANSITION, "req_id": req_id,
                           "message": "cannot configure while streaming"}
        try:
            streams = [StreamConfig(
                descriptor=__import__("dhub.core", fromlist=["StreamDescriptor"])
                .StreamDescriptor.from_json_dict(s),
                adapter=__import__("dhub.core", fromlist=["AdapterConfig"])
                .AdapterConfig.from_json_dict(s["adapter"]),
                codec_id=int(s.get("codec_id", 0)),
            ) for s in cmd.get("args", {}).get("streams", [])]
        except (KeyError, ValueError, TypeError) as e:
            return state, {"ok": False, "code": BAD_SPEC, "req_id": req_id,
                           "message": f"malformed stream spec: {e}"}
        if not streams:
            return state, {"ok": False, "code": BAD_SPEC, "req_id": req_id,
                           "message": "no streams in configure"}
        violations = validate_hub_streams(streams)
        if violations:
            return state, {"ok": False, "code": BAD_SPEC, "req_id": req_id,
                           "message": "; ".join(f"{v.code} at {v.path}" for v in violations),
                           "violations": [v.to_json_dict() for v in violations]}
        return READY, {"ok": True, "state": READY, "req_id": req_id}
    if name == "START":
        if state != READY:
            return state, {"ok": False, "code": BAD_TRANSITION, "req_id": req_id,
                           "message": f"start invalid in {state}"}
        return STREAMING, {"ok": True, "state": STREAMING, "req_id": req_id}
    # STOP
    if state != STREAMING:
        return state, {"ok": False, "code": BAD_TRANSITION, "req_id": req_id,
                       "message": f"stop invalid in {state}"}
    return READY, {"ok": True, "state": READY, "req_id": req_id}


class FrameRing:
    """Bounded frame queue; overflow evicts the oldest entry and counts it."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._q: collections.deque = collections.deque()
        self._lock = threading.Lock()
        self._not_empty = threading.Condition(self._lock)
        self.captured = 0
        self.dropped = 0
        self.capture_times: collections.deque = collections.deque()

    def put(self, frame: Frame) -> bool:
        with self._lock:
            if len(self._q) >= self.capacity:
                self._q.popleft()
                self.dropped += 1
            self._q.append(frame)
            self.captured += 1
            self.capture_times.append(frame.capture_ts_ns)
            while len(self.capture_times) > 4096:
                self.capture_times.popleft()
            self._not_empty.notify()
        return True

    def get(self, timeout: float | None = None) -> Frame | None:
        with self._not_empty:
            if not self._q and timeout:
                self._not_empty.wait(timeout)
            return self._q.popleft() if self._q else None

    def qsize(self) -> int:
        with self._lock:
            return len(self._q)

    def fps_1s(self, now_ns: int) -> float:
        with self._lock:
            ts = list(self.capture_times)
        return mean_fps(ts, 1_000_000_000, now_ns=now_ns)


class _StreamPipeline:
    def __init__(self, cfg: StreamConfig, capacity: int, daemon: "HubDaemon"):
        self.cfg = cfg
        self.ring = FrameRing(capacity)
        self.daemon = daemon
        self.published = 0
        self.bytes_encoded = 0
        self._stop = threading.Event()
        self._drained = threading.Event()
        self._thread = threading.Thread(
            target=self._run, name=f"publish-{cfg.descriptor.stream_id}", daemon=True)
        self._thread.start()

    def _run(self):
        sid = self.cfg.descriptor.stream_id
        codec_id = self.cfg.codec_id
        registry = self.daemon.registry
        while not self._stop.is_set() or self.ring.qsize():
            frame = self.ring.get(timeout=0.1)
            if frame is None:
                if self._stop.is_set():
                    break
                continue
            try:
                encoded = registry.encode(codec_id, frame.payload)
            except codec_mod.CodecError as e:
                log.error("stream %d encode failed: %s", sid, e)
                continue
            est = self.daemon.tracker.current()
            session_ts = max(0, frame.capture_ts_ns + est.offset_ns) if est else 0
            msg = FrameMsg(stream_id=sid, seq=frame.seq, capture_ts_ns=frame.capture_ts_ns,
                           session_ts_ns=session_ts, flags=0, codec_id=codec_id, data=encoded)
            if self.daemon.send(msg):
                self.published += 1
                self.bytes_encoded += len(encoded)
        self._drained.set()

    def stop(self, drain: bool = True):
        self._stop.set()
        if drain:
            self._drained.wait(timeout=10.0)

    def counters(self, now_ns: int) -> dict:
        return {
            "captured": self.ring.captured,
            "published": self.published,
            "dropped": self.ring.dropped,
            "bytes_encoded": self.bytes_encoded,
            "fps_1s": round(self.ring.fps_1s(now_ns), 2),
            "queue_depth": self.ring.qsize(),
        }


class HubDaemon:
    """Connects to the supervisor, hosts adapters, publishes frames and metrics."""

    def __init__(self, hub_id: str, supervisor: str, clock=None,
                 registry: codec_mod.CodecRegistry = codec_mod.DEFAULT_REGISTRY,
                 clock_skew_ns: int = 0, metrics_interval_ms: int = 500):
        self.hub_id = hub_id
        host, port = supervisor.rsplit(":", 1)
        self.sup_addr = (host, int(port))
        self.clock = clock or WallClock()
        self.registry = registry
        self.clock_skew_ns = clock_skew_ns
        self.metrics_interval_ms = metrics_interval_ms
        self.state = IDLE
        self.queue_capacity = 256
        self.stream_cfgs: list[StreamConfig] = []
        self.pipelines: dict[int, _StreamPipeline] = {}
        self.adapters = []
        self.tracker = OffsetTracker()
        self._sock: MessageSocket | None = None
        self._send_lock = threading.Lock()
        self._conn_up = threading.Event()
        self._shutdown = threading.Event()
        self._threads: list[threading.Thread] = []
        self._pending_sync: dict[int, bool] = {}

    # -- clock ----------------------------------------------------------

    def now_ns(self) -> int:
        return time.monotonic_ns() + self.clock_skew_ns

    # -- connection -----------------------------------------------------

    def send(self, msg) -> bool:
        """Send when connected; returns False (frame stays accounted) when down."""
        if not self._conn_up.is_set():
            self._conn_up.wait(timeout=0.2)
            if not self._conn_up.is_set():
                return False
        ms = self._sock
        if ms is None:
            return False
        try:
            ms.send_message(msg, lock=self._send_lock)
            return True
        except OSError:
            self._mark_down()
            return False

    def _mark_down(self):
        if self._conn_up.is_set():
            self._conn_up.clear()
            log.warning("connection to supervisor lost")

    def _connect_loop(self):
        backoff = 0.5
        while not self._shutdown.is_set():
            if self._conn_up.is_set():
                time.sleep(0.1)
                continue
            try:
                raw = socket.create_connection(self.sup_addr, timeout=5.0)
                raw.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self._sock = MessageSocket(raw)
                self._sock.send_message(Hello({
                    "hub_id": self.hub_id,
                    "state": self.state,
                    "capabilities": {"codecs": [codec_mod.RAW, codec_mod.DRLE],
                                     "adapters": ["SIM_US", "SIM_POSE", "SIM_RGBD"]},
                }), lock=self._send_lock)
                self._conn_up.set()
                backoff = 0.5
                log.info("connected to supervisor %s:%d", *self.sup_addr)
                t = threading.Thread(target=self._reader, args=(self._sock,),
                                     name="hub-reader", daemon=True)
                t.start()
                self._sync_once()
                t.join()
            except OSError as e:
                log.debug("connect failed: %s", e)
            self._mark_down()
            if self._shutdown.is_set():
                return
            time.sleep(backoff)
            backoff = min(backoff * 2, 8.0)

    def _reader(self, ms: MessageSocket):
        try:
            while not self._shutdown.is_set():
                msg = ms.read_message()
                if isinstance(msg, Control):
                    self._on_control(msg.payload)
                elif isinstance(msg, TimeSyncResp):
                    t4 = self.now_ns()
                    if self._pending_sync.pop(msg.t1, None):
                        self.tracker.add_sample(SyncSample(msg.t1, msg.t2, msg.t3, t4))
                elif isinstance(msg, Ping):
                    self.send(Pong(msg.nonce))
                elif isinstance(msg, Bye):
                    return
        except (OSError, ConnectionError, WireError) as e:
            log.debug("reader stopped: %s", e)
        finally:
            self._mark_down()
            try:
                ms.sock.close()
            except OSError:
                pass

    # -- control --------------------------------------------------------

    def _on_control(self, cmd: dict):
        old = self.state
        new, reply = handle_control(old, cmd)
        if reply.get("ok"):
            self._apply_transition(old, new, cmd)
            self.state = new
            reply["hub_id"] = self.hub_id
            reply["adapters"] = self._adapter_status()
            self.send(ControlAck(reply))
        else:
            reply["hub_id"] = self.hub_id
            self.send(ErrorMsg(reply))

    def _apply_transition(self, old: str, new: str, cmd: dict):
        name = cmd.get("cmd")
        if name == "CONFIGURE":
            self._teardown(drain=False)
            args = cmd.get("args", {})
            self.queue_capacity = int(args.get("queue_capacity", 256))
            self.metrics_interval_ms = int(args.get("metrics_interval_ms",
                                                    self.metrics_interval_ms))
            from .core import AdapterConfig, StreamDescriptor
            self.stream_cfgs = [StreamConfig(
                descriptor=StreamDescriptor.from_json_dict(s),
                adapter=AdapterConfig.from_json_dict(s["adapter"]),
                codec_id=int(s.get("codec_id", 0)),
            ) for s in args.get("streams", [])]
        elif name == "START":
            self._start_streaming()
        elif name == "STOP":
            self._stop_streaming()
        elif name == "RESET":
            self._teardown(drain=False)
            self.stream_cfgs = []

    def _start_streaming(self):
        for cfg in self.stream_cfgs:
            self.pipelines[cfg.descriptor.stream_id] = _StreamPipeline(
                cfg, self.queue_capacity, self)

        def make_sink():
            pipes = self.pipelines

            def sink(frame: Frame):
                return pipes[frame.stream_id].ring.put(frame)
            return sink

        sink = make_sink()
        groups: dict[tuple, list[StreamConfig]] = {}
        for cfg in self.stream_cfgs:
            if cfg.adapter.adapter_type == SIM_RGBD:
                groups.setdefault((SIM_RGBD, cfg.adapter.seed), []).append(cfg)
            else:
                groups.setdefault((cfg.adapter.adapter_type, cfg.descriptor.stream_id),
                                  []).append(cfg)
        for members in groups.values():
            self.adapters.append(run_adapter(members, sink, self.clock))

    def _stop_streaming(self):
        for a in self.adapters:
            a.stop()
        self.adapters = []
        for p in self.pipelines.values():
            p.stop(drain=True)
        # pipelines kept for final metrics; replaced on next START

    def _teardown(self, drain: bool):
        for a in self.adapters:
            a.stop()
        self.adapters = []
        for p in self.pipelines.values():
            p.stop(drain=drain)
        self.pipelines = {}

    def _adapter_status(self) -> list[dict]:
        return [{"adapter_type": a.adapter_type, "state": a.state,
                 "frames_emitted": dict(a.frames_emitted)} for a in self.adapters]

    # -- timesync / metrics ----------------------------------------------

    def _sync_once(self):
        t1 = self.now_ns()
        self._pending_sync[t1] = True
        self.send(TimeSyncReq(t1))

    def _sync_loop(self):
        # a quick초 burst at startup fills the estimator window fast
        for _ in range(3):
            if self._shutdown.wait(0.1):
                return
            if self._conn_up.is_set():
                self._sync_once()
        while not self._shutdown.wait(RESYNC_PERIOD_S):
            if self._conn_up.is_set():
                self._sync_once()

    def metrics_payload(self) -> dict:
        now = self.now_ns()
        est = self.tracker.current()
        return {
            "hub_id": self.hub_id,
            "state": self.state,
            "ts_ns": now,
            "streams": {str(sid): p.counters(now) for sid, p in self.pipelines.items()},
            "clock": est.to_json_dict() if est else None,
            "adapters": self._adapter_status(),
        }

    def _metrics_loop(self):
        while not self._shutdown.wait(self.metrics_interval_ms / 1000.0):
            if self._conn_up.is_set():
                self.send(Metrics(self.metrics_payload()))

    # -- lifecycle --------------------------------------------------------

    def start(self):
        warm_up()
        for target, name in ((self._connect_loop, "hub-connect"),
                             (self._sync_loop, "hub-sync"),
                             (self._metrics_loop, "hub-metrics")):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)

    def shutdown(self):
        self._shutdown.set()
        self._teardown(drain=False)
        if self._sock is not None:
            try:
                self._sock.send_message(Bye(), lock=self._send_lock)
            except OSError:
                pass
            try:
                self._sock.sock.close()
            except OSError:
                pass
        self._conn_up.clear()

    def run_forever(self):
        self.start()
        try:
            while not self._shutdown.wait(0.5):
                pass
        except KeyboardInterrupt:
            pass
        finally:
            self.shutdown()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hubd", description="Data hub daemon")
    parser.add_argument("--hub-id", default=os.environ.get("DHUB_HUB_ID"),
                        help="hub identifier (env DHUB_HUB_ID)")
    parser.add_argument("--supervisor", default=os.environ.get("DHUB_SUPERVISOR"),
                        help="supervisor host:port (env DHUB_SUPERVISOR)")
    parser.add_argument("--config", help="JSON file with stream specs to preload (hub "
                                         "starts READY once connected)")
    parser.add_argument("--clock-skew-ns", type=int,
                        default=int(os.environ.get("DHUB_CLOCK_SKEW_NS", "0")),
                        help="constant offset added to this hub's clock (testing)")
    parser.add_argument("--log-level", default="info",
                        choices=["debug", "info", "warning", "error"])
    args = parser.parse_args(argv)
    if not args.hub_id or not args.supervisor:
        parser.error("--hub-id and --supervisor are required (or set DHUB_HUB_ID/DHUB_SUPERVISOR)")
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    daemon = HubDaemon(args.hub_id, args.supervisor, clock_skew_ns=args.clock_skew_ns)
    if args.config:
        with open(args.config) as f:
            cfg = json.load(f)
        _, reply = handle_control(IDLE, {"cmd": "CONFIGURE", "args": cfg})
        if not reply.get("ok"):
            print(f"config rejected: {reply.get('message')}")
            return 2
        daemon._apply_transition(IDLE, READY, {"cmd": "CONFIGURE", "args": cfg})
        daemon.state = READY
    daemon.run_forever()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
