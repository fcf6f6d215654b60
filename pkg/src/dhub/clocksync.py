"""Two-way clock offset estimation between a hub and the supervisor.

A sync exchange yields four timestamps: t1 hub send, t2 supervisor receive,
t3 supervisor send, t4 hub receive. The offset (supervisor minus hub) and
round-trip time follow the standard two-way time-transfer formulas; the
estimator keeps the lowest-RTT third of a sliding window and takes the
median offset, with median absolute deviation as the dispersion figure.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

INVALID_SAMPLE = "INVALID_SAMPLE"
NO_SYNC = "NO_SYNC"

DEFAULT_WINDOW = 9
RESYNC_PERIOD_S = 5.0


class ClockSyncError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


@dataclass(frozen=True)
class SyncSample:
    t1: int  # hub send (hub clock, ns)
    t2: int  # supervisor receive (supervisor clock, ns)
    t3: int  # supervisor send (supervisor clock, ns)
    t4: int  # hub receive (hub clock, ns)


@dataclass(frozen=True)
class OffsetEstimate:
    offset_ns: int  # supervisor_time - hub_time
    rtt_ns: int
    sample_count: int
    dispersion_ns: int  # median absolute deviation of retained offsets

    def to_json_dict(self) -> dict:
        return {
            "offset_ns": self.offset_ns,
            "rtt_ns": self.rtt_ns,
            "sample_count": self.sample_count,
            "dispersion_ns": self.dispersion_ns,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "OffsetEstimate":
        return cls(int(d["offset_ns"]), int(d["rtt_ns"]), int(d["sample_count"]),
                   int(d["dispersion_ns"]))


def sample_offset(s: SyncSample) -> tuple[int, int]:
    """(offset_ns, rtt_ns) from one exchange; offset rounds toward zero."""
    rtt = (s.t4 - s.t1) - (s.t3 - s.t2)
    if rtt < 0:
        raise ClockSyncError(INVALID_SAMPLE, f"negative rtt {rtt}")
    num = (s.t2 - s.t1) + (s.t3 - s.t4)
    offset = -((-num) // 2) if num < 0 else num // 2  # truncate toward zero, exact for big ints
    return offset, rtt


def _median_int(values: list[int]) -> int:
    v = sorted(values)
    n = len(v)
    mid = n // 2
    if n % 2:
        return v[mid]
    return (v[mid - 1] + v[mid]) // 2


def estimate_offset(samples, window: int = DEFAULT_WINDOW) -> OffsetEstimate:
    """Combine the most recent *window* samples into one estimate.

    Keeps the ceil(window/3) lowest-RTT valid samples; offset is their median,
    rtt the minimum retained, dispersion the MAD of retained offsets.
    """
    recent = list(samples)[-window:]
    pairs = []
    for s in recent:
        try:
            pairs.append(sample_offset(s))
        except ClockSyncError:
            continue
    if not pairs:
        raise ClockSyncError(NO_SYNC, "no valid samples")
    keep = math.ceil(window / 3)
    pairs = sorted(enumerate(pairs), key=lambda ip: (ip[1][1], ip[0]))[:keep]
    offsets = [p[1][0] for p in pairs]
    best_rtt = min(p[1][1] for p in pairs)
    med = _median_int(offsets)
    mad = _median_int([abs(o - med) for o in offsets])
    return OffsetEstimate(offset_ns=med, rtt_ns=best_rtt, sample_count=len(offsets),
                          dispersion_ns=mad)


def to_session_time(capture_ts_ns: int, est: OffsetEstimate) -> int:
    """Map a hub capture timestamp into session time, saturating at 0."""
    return max(0, capture_ts_ns + est.offset_ns)


class OffsetTracker:
    """Per-hub rolling estimator; one writer task, snapshot readers."""

    def __init__(self, window: int = DEFAULT_WINDOW):
        self.window = window
        self._samples: list[SyncSample] = []
        self._estimate: OffsetEstimate | None = None
        self._lock = threading.Lock()

    def add_sample(self, s: SyncSample) -> OffsetEstimate | None:
        with self._lock:
            self._samples.append(s)
            if len(self._samples) > self.window:
                del self._samples[:-self.window]
            try:
                self._estimate = estimate_offset(self._samples, self.window)
            except ClockSyncError:
                pass
            return self._estimate

    def current(self) -> OffsetEstimate | None:
        with self._lock:
            return self._estimate
