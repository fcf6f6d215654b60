"""Simulated device adapters: ultrasound-style image source, pose tracker, RGB-D pair.

Frame content is a pure function of (seed, seq), so a verifier can regenerate
any payload bit-exactly. Image bodies come from an xorshift64* stream; the
generator below evaluates it through independent lanes using GF(2) jump-ahead
matrices (the state update is linear), which keeps generation vectorized while
matching the scalar recurrence byte for byte.

Adapters run one tick loop each against an injected clock; tests use
:class:`SimulatedClock` for exact frame counts, daemons use :class:`WallClock`.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .core import Frame, Pose, StreamConfig, StreamKind, payload_size

_MASK = (1 << 64) - 1
_MULT = 0x2545F4914F6CDD1D

SIM_US = "SIM_US"
SIM_POSE = "SIM_POSE"
SIM_RGBD = "SIM_RGBD"

IMAGE_MAGIC = b"SIMF"
IMAGE_HEADER_LEN = 12  # magic + seq u64

# pose trajectory constants (meters, rad/s)
POSE_R = 0.15
POSE_Z0 = 0.40
POSE_A = 0.02
POSE_OMEGA = 0.5

DEPTH_BASE_MM = 400
DEPTH_SPAN_MM = 1648


def _xs_update(x: int) -> int:
    x ^= x >> 12
    x = (x ^ (x << 25)) & _MASK
    x ^= x >> 27
    return x


def xorshift64star_words_ref(seed: int, count: int) -> list[int]:
    """Scalar reference: *count* output words (update state, then multiply)."""
    x = seed & _MASK
    out = []
    for _ in range(count):
        x = _xs_update(x)
        out.append((x * _MULT) & _MASK)
    return out


def _basis_matrix() -> np.ndarray:
    # column j = state-update image of the unit state 1<<j
    return np.array([_xs_update(1 << j) for j in range(64)], dtype=np.uint64)


_SHIFTS = np.arange(64, dtype=np.uint64)


def _apply_matrix(mat: np.ndarray, states: np.ndarray) -> np.ndarray:
    bits = ((states[:, None] >> _SHIFTS[None, :]) & np.uint64(1)).astype(bool)
    return np.bitwise_xor.reduce(np.where(bits, mat[None, :], np.uint64(0)), axis=1)


def _compose(m_outer: np.ndarray, m_inner: np.ndarray) -> np.ndarray:
    return _apply_matrix(m_outer, m_inner)


def _matrix_power(mat: np.ndarray, n: int) -> np.ndarray:
    result = np.uint64(1) << _SHIFTS  # identity
    base = mat
    while n:
        if n & 1:
            result = _compose(base, result)
        base = _compose(base, base)
        n >>= 1
    return result


_BASIS = _basis_matrix()
_jump_cache: dict[tuple[int, int], list[np.ndarray]] = {}
_jump_lock = threading.Lock()


def _jump_matrices(lanes: int, steps: int) -> list[np.ndarray]:
    """Matrices advancing a state by steps*2^k updates, k = 0..log2(lanes)-1."""
    key = (lanes, steps)
    with _jump_lock:
        cached = _jump_cache.get(key)
        if cached is not None:
            return cached
        mats = []
        m = _matrix_power(_BASIS, steps)
        for _ in range(lanes.bit_length() - 1):
            mats.append(m)
            m = _compose(m, m)
        _jump_cache[key] = mats
        return mats


def _lane_count(words: int) -> int:
    if words >= 32768:
        return 4096
    if words >= 2048:
        return 512
    return 1


def xorshift64star_bytes(seed: int, nbytes: int) -> np.ndarray:
    """First *nbytes* of the xorshift64* byte stream (high byte of each word first)."""
    words = (nbytes + 7) // 8
    if words == 0:
        return np.empty(0, dtype=np.uint8)
    lanes = _lane_count(words)
    if lanes == 1:
        arr = np.array(xorshift64star_words_ref(seed, words), dtype=np.uint64)
        return arr.astype(">u8").view(np.uint8)[:nbytes].copy()
    steps = (words + lanes - 1) // lanes
    seeds = np.array([seed & _MASK], dtype=np.uint64)
    for mat in _jump_matrices(lanes, steps):
        seeds = np.concatenate((seeds, _apply_matrix(mat, seeds)))
    x = seeds
    out = np.empty((steps, lanes), dtype=np.uint64)
    mult = np.uint64(_MULT)
    s12, s25, s27 = np.uint64(12), np.uint64(25), np.uint64(27)
    for t in range(steps):
        x = x ^ (x >> s12)
        x = x ^ (x << s25)
        x = x ^ (x >> s27)
        out[t] = x * mult
    return out.T.astype(">u8").view(np.uint8).reshape(-1)[:nbytes]


def generate_us_frame(seed: int, seq: int, width: int, height: int) -> bytes:
    """Simulated ultrasound video frame: SIMF magic, seq, then PRNG body."""
    size = width * height * 3
    if size < 16:
        raise ValueError("frame too small for header")
    out = np.empty(size, dtype=np.uint8)
    out[:4] = np.frombuffer(IMAGE_MAGIC, dtype=np.uint8)
    out[4:12] = np.frombuffer(seq.to_bytes(8, "big"), dtype=np.uint8)
    out[12:] = xorshift64star_bytes(seed ^ seq, size - IMAGE_HEADER_LEN)
    return out.tobytes()


def generate_pose(seed: int, t_seconds: float) -> Pose:
    """Circular sweep with vertical bob; orientation spins about z. Seed reserved."""
    wt = POSE_OMEGA * t_seconds
    return Pose(
        position=(POSE_R * math.cos(wt), POSE_R * math.sin(wt),
                  POSE_Z0 + POSE_A * math.sin(2 * wt)),
        orientation=(math.cos(wt / 2), 0.0, 0.0, math.sin(wt / 2)),
    )


def generate_depth_frame(seed: int, seq: int, width: int, height: int) -> bytes:
    """Row-major u16 millimeters: 400 + ((x + y + seq) mod 1648)."""
    xs = np.arange(width, dtype=np.int64)[None, :]
    ys = np.arange(height, dtype=np.int64)[:, None]
    mm = DEPTH_BASE_MM + ((xs + ys + (seq % DEPTH_SPAN_MM)) % DEPTH_SPAN_MM)
    return mm.astype(">u2").tobytes()


def generate_rgbd_frame(seed: int, seq: int, width: int, height: int) -> tuple[bytes, bytes]:
    rgb_seed = seed ^ ((seq + (1 << 63)) & _MASK)
    size = width * height * 3
    out = np.empty(size, dtype=np.uint8)
    out[:4] = np.frombuffer(IMAGE_MAGIC, dtype=np.uint8)
    out[4:12] = np.frombuffer(seq.to_bytes(8, "big"), dtype=np.uint8)
    out[12:] = xorshift64star_bytes(rgb_seed, size - IMAGE_HEADER_LEN)
    return out.tobytes(), generate_depth_frame(seed, seq, width, height)


def embedded_seq(payload) -> int:
    """Sequence number embedded in a simulated image payload."""
    view = memoryview(payload)
    if len(view) < IMAGE_HEADER_LEN or bytes(view[:4]) != IMAGE_MAGIC:
        raise ValueError("payload lacks simulated-image header")
    return int.from_bytes(view[4:12], "big")


def pose_time_for_seq(seq: int, fps: float) -> float:
    # tick k = seq + 1 fires at k/fps seconds after stream start
    return (seq + 1) / fps


def pose_trajectory_residual(payload, seed: int, seq: int, fps: float) -> float:
    """Max abs deviation of a recorded pose from the parametric trajectory."""
    got = Pose.from_payload(bytes(payload))
    want = generate_pose(seed, pose_time_for_seq(seq, fps))
    return max(
        max(abs(a - b) for a, b in zip(got.position, want.position)),
        max(abs(a - b) for a, b in zip(got.orientation, want.orientation)),
    )


def expected_sim_payload(adapter_type: str, kind: StreamKind, seed: int, seq: int,
                         width: int, height: int, fps: float) -> bytes:
    """Regenerate the exact payload an adapter emitted (deep verification)."""
    if adapter_type == SIM_US:
        return generate_us_frame(seed, seq, width, height)
    if adapter_type == SIM_POSE:
        return generate_pose(seed, pose_time_for_seq(seq, fps)).to_payload()
    if adapter_type == SIM_RGBD:
        if kind is StreamKind.IMAGE_DEPTH:
            return generate_depth_frame(seed, seq, width, height)
        rgb, _ = generate_rgbd_frame(seed, seq, width, height)
        return rgb
    raise ValueError(f"unknown adapter type {adapter_type!r}")


class WallClock:
    def now_ns(self) -> int:
        return time.monotonic_ns()

    def sleep_until(self, t_ns: int, stop_event: threading.Event | None = None) -> None:
        while True:
            dt = t_ns - self.now_ns()
            if dt <= 0:
                return
            step = min(dt / 1e9, 0.05)
            if stop_event is not None:
                if stop_event.wait(step):
                    return
            else:
                time.sleep(step)


class SimulatedClock:
    """Virtual clock: sleepers block until test code advances time past them."""

    def __init__(self, start_ns: int = 0):
        self._now = start_ns
        self._cond = threading.Condition()
        self._sleepers: list[int] = []

    def now_ns(self) -> int:
        with self._cond:
            return self._now

    def sleep_until(self, t_ns: int, stop_event: threading.Event | None = None) -> None:
        with self._cond:
            if t_ns <= self._now:
                return
            self._sleepers.append(t_ns)
            self._cond.notify_all()
            while self._now < t_ns and not (stop_event and stop_event.is_set()):
                self._cond.wait(0.05)
            self._sleepers.remove(t_ns)
            self._cond.notify_all()

    def advance_to(self, t_ns: int, settle: float = 0.02) -> None:
        """Fire every sleeper deadline <= t_ns in order, then set now = t_ns.

        Lets sleeping threads run between steps so tick loops stay ordered;
        *settle* bounds the wait for a new sleeper to appear.
        """
        while True:
            with self._cond:
                pending = sorted(t for t in self._sleepers if t <= t_ns)
                if pending:
                    self._now = pending[0]
                    self._cond.notify_all()
                    deadline = time.monotonic() + 5.0
                    while pending[0] in self._sleepers:
                        if not self._cond.wait(0.1) and time.monotonic() > deadline:
                            raise TimeoutError("sleeper did not wake")
                    continue
            # no due sleeper right now: give loops a moment to re-arm
            end = time.monotonic() + settle
            armed = False
            while time.monotonic() < end:
                with self._cond:
                    if any(t <= t_ns for t in self._sleepers):
                        armed = True
                        break
                time.sleep(0.001)
            if not armed:
                break
        with self._cond:
            self._now = t_ns
            self._cond.notify_all()


@dataclass
class AdapterHandle:
    adapter_type: str
    streams: tuple[StreamConfig, ...]
    state: str = "STOPPED"
    frames_emitted: dict[int, int] = field(default_factory=dict)
    drops: int = 0
    _thread: threading.Thread | None = None
    _stop: threading.Event = field(default_factory=threading.Event)

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        self.state = "STOPPED"


def _jitter_ns(rng_state: list[int], period_ns: int, jitter_ppm: int) -> int:
    if jitter_ppm <= 0:
        return 0
    rng_state[0] = _xs_update(rng_state[0] or 0x9E3779B97F4A7C15)
    word = (rng_state[0] * _MULT) & _MASK
    amp = max(1, period_ns * jitter_ppm // 1_000_000)
    return int(word % (2 * amp + 1)) - amp


def run_adapter(streams, sink, clock, queue_capacity: int = 0) -> AdapterHandle:
    """Start one adapter tick loop emitting frames for *streams* into *sink*.

    *streams* is the list of StreamConfig entries served by this adapter
    (one for SIM_US/SIM_POSE, the rgb+depth pair for SIM_RGBD). The sink is
    called as sink(frame) -> bool; False means rejected (counted, never blocks).
    """
    streams = tuple(streams)
    atype = streams[0].adapter.adapter_type
    handle = AdapterHandle(adapter_type=atype, streams=streams,
                           frames_emitted={s.descriptor.stream_id: 0 for s in streams})
    fps = streams[0].fps
    seed = streams[0].adapter.seed
    jitter_ppm = streams[0].adapter.jitter_ppm
    period_ns = 1e9 / fps

    if atype == SIM_RGBD:
        by_kind = {s.descriptor.kind: s for s in streams}
        rgb_s = by_kind[StreamKind.IMAGE_RGB]
        dep_s = by_kind[StreamKind.IMAGE_DEPTH]

        def make_payloads(seq):
            rgb, dep = generate_rgbd_frame(seed, seq, rgb_s.descriptor.width,
                                           rgb_s.descriptor.height)
            return [(rgb_s.descriptor.stream_id, rgb), (dep_s.descriptor.stream_id, dep)]
    elif atype == SIM_POSE:
        sid = streams[0].descriptor.stream_id

        def make_payloads(seq):
            return [(sid, generate_pose(seed, pose_time_for_seq(seq, fps)).to_payload())]
    elif atype == SIM_US:
        sid = streams[0].descriptor.stream_id
        w, h = streams[0].descriptor.width, streams[0].descriptor.height

        def make_payloads(seq):
            return [(sid, generate_us_frame(seed, seq, w, h))]
    else:
        raise ValueError(f"unknown adapter type {atype!r}")

    def loop():
        start = clock.now_ns()
        rng_state = [seed & _MASK]
        k = 0
        while not handle._stop.is_set():
            k += 1
            t_k = start + int(round(k * period_ns))
            clock.sleep_until(t_k, handle._stop)
            if handle._stop.is_set():
                return
            seq = k - 1
            capture = t_k + _jitter_ns(rng_state, int(period_ns), jitter_ppm)
            for stream_id, payload in make_payloads(seq):
                frame = Frame(stream_id=stream_id, seq=seq, capture_ts_ns=capture,
                              session_ts_ns=0, codec_id=0, payload=payload)
                handle.frames_emitted[stream_id] += 1
                if sink(frame) is False:  # rejected; None counts as accepted
                    handle.drops += 1

    handle.state = "RUNNING"
    handle._thread = threading.Thread(target=loop, name=f"adapter-{atype}", daemon=True)
    handle._thread.start()
    return handle
