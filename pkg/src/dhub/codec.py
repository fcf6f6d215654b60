"""Frame payload compression: codec registry, RAW pass-through, DRLE, external hooks.

DRLE is the built-in lossless codec: the payload is delta-transformed
(d[0]=b[0], d[i]=b[i]-b[i-1] mod 256), then run-length encoded with a
control byte per block: c in [0,127] copies the next c+1 literal bytes,
c in [128,255] repeats the next single byte c-125 times (runs of 3..130).
The encoder is canonical-greedy, so encodings are byte-identical across
runs and platforms.

External codecs are separate processes reading one payload on stdin and
writing the transformed payload to stdout (exit 0 on success).
"""

from __future__ import annotations

import subprocess
import threading
from dataclasses import dataclass

import numpy as np

RAW = 0
DRLE = 1
FIRST_EXTERNAL_ID = 128

MAX_REPEAT = 130
MAX_LITERAL = 128

UNKNOWN_CODEC = "UNKNOWN_CODEC"
CORRUPT = "CORRUPT"
ID_TAKEN = "ID_TAKEN"
ENCODE_FAILED = "ENCODE_FAILED"
DECODE_FAILED = "DECODE_FAILED"
BAD_ID = "BAD_ID"


class CodecError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


def _as_u8(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return data if data.dtype == np.uint8 else data.view(np.uint8)
    return np.frombuffer(data, dtype=np.uint8)


def _delta(b: np.ndarray) -> np.ndarray:
    d = np.empty_like(b)
    if len(b):
        d[0] = b[0]
        np.subtract(b[1:], b[:-1], out=d[1:])  # uint8 wraps mod 256
    return d


def _encode_literal_span(d: np.ndarray, start: int, end: int, chunks: list) -> None:
    """Append the canonical literal encoding of d[start:end] to *chunks*."""
    n = end - start
    if n <= 0:
        return
    full = n // MAX_LITERAL
    if full:
        block = np.empty((full, MAX_LITERAL + 1), dtype=np.uint8)
        block[:, 0] = MAX_LITERAL - 1
        block[:, 1:] = d[start:start + full * MAX_LITERAL].reshape(full, MAX_LITERAL)
        chunks.append(block.reshape(-1))
    rem = n - full * MAX_LITERAL
    if rem:
        tail = np.empty(rem + 1, dtype=np.uint8)
        tail[0] = rem - 1
        tail[1:] = d[end - rem:end]
        chunks.append(tail)


def _repeat_runs(d: np.ndarray):
    """(starts, lengths) of maximal runs of >=3 equal bytes in *d*."""
    n = len(d)
    if n < 3:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    eq = d[1:] == d[:-1]
    rep3 = eq[:-1] & eq[1:]
    sites = np.flatnonzero(rep3)
    if len(sites) == 0:
        return sites, sites
    brk = np.flatnonzero(np.diff(sites) > 1)
    starts = sites[np.concatenate(([0], brk + 1))]
    last = sites[np.concatenate((brk, [len(sites) - 1]))]
    return starts, last - starts + 3


def _encode_drle_sparse(d: np.ndarray, starts, lens) -> bytes:
    """Segment loop: fine while repeat runs are few (noise, smooth data)."""
    chunks: list[np.ndarray] = []
    pos = 0
    for s, ln in zip(starts.tolist(), lens.tolist()):
        _encode_literal_span(d, pos, s, chunks)
        v = d[s]
        full, rem = divmod(ln, MAX_REPEAT)
        if full:
            rb = np.empty((full, 2), dtype=np.uint8)
            rb[:, 0] = 255  # MAX_REPEAT + 125
            rb[:, 1] = v
            chunks.append(rb.reshape(-1))
        covered = full * MAX_REPEAT
        if rem >= 3:
            chunks.append(np.array([rem + 125, v], dtype=np.uint8))
            covered += rem
        pos = s + covered  # 1-2 leftover bytes fall into the next literal span
    _encode_literal_span(d, pos, len(d), chunks)
    if not chunks:
        return b""
    return np.concatenate(chunks).tobytes()


def _ragged_arange(counts: np.ndarray) -> np.ndarray:
    # [0..c0-1, 0..c1-1, ...] for counts ci
    total = int(counts.sum())
    out = np.ones(total, dtype=np.int64)
    ends = np.cumsum(counts)
    out[0] = 0
    out[ends[:-1]] = 1 - counts[:-1]
    return np.cumsum(out)


def _encode_drle_dense(d: np.ndarray, rstarts, rlens) -> bytes:
    """Fully vectorized block assembly for run-dense data."""
    n = len(d)
    full = rlens // MAX_REPEAT
    rem = rlens % MAX_REPEAT
    rem_rep = rem >= 3
    covered = rlens - np.where(rem_rep, 0, rem)
    nblocks = full + rem_rep

    # repeat blocks: positions, counts, values
    keep = nblocks > 0
    r_start_k = rstarts[keep]
    nblocks_k = nblocks[keep]
    run_of_block = np.repeat(np.arange(len(r_start_k)), nblocks_k)
    within = _ragged_arange(nblocks_k)
    rb_pos = r_start_k[run_of_block] + within * MAX_REPEAT
    rb_cnt = np.full(len(rb_pos), MAX_REPEAT, dtype=np.int64)
    lasts = np.cumsum(nblocks_k) - 1
    rem_k = rem[keep]
    rem_rep_k = rem_rep[keep]
    rb_cnt[lasts[rem_rep_k]] = rem_k[rem_rep_k]
    rb_val = d[rb_pos]

    # literal regions between covered intervals
    lit_starts = np.concatenate(([0], rstarts + covered))
    lit_ends = np.concatenate((rstarts, [n]))
    nz = lit_ends > lit_starts
    lit_starts, lit_ends = lit_starts[nz], lit_ends[nz]
    lit_len = lit_ends - lit_starts
    nchunks = (lit_len + MAX_LITERAL - 1) // MAX_LITERAL
    reg_of_chunk = np.repeat(np.arange(len(lit_starts)), nchunks)
    cwithin = _ragged_arange(nchunks)
    lb_pos = lit_starts[reg_of_chunk] + cwithin * MAX_LITERAL
    lb_len = np.minimum(MAX_LITERAL, lit_ends[reg_of_chunk] - lb_pos)

    # merge both block lists by data position
    all_pos = np.concatenate((rb_pos, lb_pos))
    order = np.argsort(all_pos, kind="stable")
    is_rep = np.concatenate((np.ones(len(rb_pos), dtype=bool), np.zeros(len(lb_pos), dtype=bool)))[order]
    sizes = np.concatenate((np.full(len(rb_pos), 2, dtype=np.int64), lb_len + 1))[order]
    offs = np.cumsum(sizes) - sizes
    out = np.empty(int(sizes.sum()), dtype=np.uint8)

    rep_offs = offs[is_rep]
    out[rep_offs] = (rb_cnt + 125).astype(np.uint8)
    out[rep_offs + 1] = rb_val

    lit_offs = offs[~is_rep]
    out[lit_offs] = (lb_len - 1).astype(np.uint8)
    if len(lb_pos):
        dst = np.repeat(lit_offs + 1, lb_len) + _ragged_arange(lb_len)
        src = np.repeat(lb_pos, lb_len) + _ragged_arange(lb_len)
        out[dst] = d[src]
    return out.tobytes()


# above this many repeat runs the vectorized assembly wins over the segment loop
_DENSE_RUN_THRESHOLD = 4096


def drle_encode(payload) -> bytes:
    b = _as_u8(payload)
    if len(b) == 0:
        return b""
    d = _delta(b)
    starts, lens = _repeat_runs(d)
    if len(starts) > _DENSE_RUN_THRESHOLD:
        return _encode_drle_dense(d, starts, lens)
    return _encode_drle_sparse(d, starts, lens)


def drle_decode(payload, expected_len: int) -> bytes:
    enc = _as_u8(payload)
    out = np.empty(expected_len, dtype=np.uint8)
    i, o, n = 0, 0, len(enc)
    while i < n:
        c = enc[i]
        if c < 128:
            ln = int(c) + 1
            if i + 1 + ln > n:
                raise CodecError(CORRUPT, "literal block overruns input")
            if o + ln > expected_len:
                raise CodecError(CORRUPT, "output overruns expected length")
            out[o:o + ln] = enc[i + 1:i + 1 + ln]
            i += 1 + ln
        else:
            if i + 1 >= n:
                raise CodecError(CORRUPT, "repeat control with no value byte")
            ln = int(c) - 125
            if o + ln > expected_len:
                raise CodecError(CORRUPT, "output overruns expected length")
            out[o:o + ln] = enc[i + 1]
            i += 2
        o += ln
    if o != expected_len:
        raise CodecError(CORRUPT, f"decoded {o} bytes, expected {expected_len}")
    np.add.accumulate(out, out=out)  # inverse delta, wraps mod 256
    return out.tobytes()


@dataclass(frozen=True)
class ExternalCodec:
    codec_id: int
    encoder_cmd: tuple[str, ...]
    decoder_cmd: tuple[str, ...]
    lossy: bool = False

    def describe(self) -> dict:
        return {
            "kind": "external",
            "encoder": list(self.encoder_cmd),
            "decoder": list(self.decoder_cmd),
            "lossy": self.lossy,
        }


def _run_pipe(cmd: tuple[str, ...], data, fail_code: str) -> bytes:
    try:
        proc = subprocess.run(cmd, input=bytes(data), stdout=subprocess.PIPE,
                              stderr=subprocess.PIPE)
    except OSError as e:
        raise CodecError(fail_code, str(e)) from None
    if proc.returncode != 0:
        err = proc.stderr.decode("utf-8", "replace").strip()
        raise CodecError(fail_code, f"exit {proc.returncode}: {err}")
    return proc.stdout


class CodecRegistry:
    """Maps codec ids to built-in or external codecs; ids 2-127 are reserved."""

    def __init__(self):
        self._external: dict[int, ExternalCodec] = {}
        self._lock = threading.Lock()

    def register_external(self, codec_id: int, encoder_cmd, decoder_cmd,
                          lossy: bool = False) -> None:
        if codec_id < FIRST_EXTERNAL_ID or codec_id > 255:
            raise CodecError(ID_TAKEN if codec_id in (RAW, DRLE) else BAD_ID,
                             f"external codec ids are {FIRST_EXTERNAL_ID}-255, got {codec_id}")
        ext = ExternalCodec(codec_id, tuple(encoder_cmd), tuple(decoder_cmd), lossy)
        with self._lock:
            if codec_id in self._external:
                raise CodecError(ID_TAKEN, f"codec id {codec_id} already registered")
            self._external[codec_id] = ext

    def is_registered(self, codec_id: int) -> bool:
        return codec_id in (RAW, DRLE) or codec_id in self._external

    def is_lossy(self, codec_id: int) -> bool:
        ext = self._external.get(codec_id)
        return bool(ext and ext.lossy)

    def describe(self, codec_id: int) -> dict:
        if codec_id == RAW:
            return {"kind": "builtin", "name": "RAW", "lossy": False}
        if codec_id == DRLE:
            return {"kind": "builtin", "name": "DRLE", "lossy": False}
        ext = self._external.get(codec_id)
        if ext is None:
            raise CodecError(UNKNOWN_CODEC, f"codec id {codec_id}")
        return ext.describe()

    def encode(self, codec_id: int, payload) -> bytes:
        if codec_id == RAW:
            return bytes(payload)
        if codec_id == DRLE:
            return drle_encode(payload)
        ext = self._external.get(codec_id)
        if ext is None:
            raise CodecError(UNKNOWN_CODEC, f"codec id {codec_id}")
        return _run_pipe(ext.encoder_cmd, payload, ENCODE_FAILED)

    def decode(self, codec_id: int, payload, expected_len: int) -> bytes:
        if codec_id == RAW:
            if len(payload) != expected_len:
                raise CodecError(CORRUPT, f"raw payload {len(payload)} != expected {expected_len}")
            return bytes(payload)
        if codec_id == DRLE:
            return drle_decode(payload, expected_len)
        ext = self._external.get(codec_id)
        if ext is None:
            raise CodecError(UNKNOWN_CODEC, f"codec id {codec_id}")
        out = _run_pipe(ext.decoder_cmd, payload, DECODE_FAILED)
        if len(out) != expected_len:
            raise CodecError(CORRUPT, f"external decode returned {len(out)} bytes, "
                                      f"expected {expected_len}")
        return out


DEFAULT_REGISTRY = CodecRegistry()


def encode(codec_id: int, payload) -> bytes:
    return DEFAULT_REGISTRY.encode(codec_id, payload)


def decode(codec_id: int, payload, expected_len: int) -> bytes:
    return DEFAULT_REGISTRY.decode(codec_id, payload, expected_len)


def register_external(codec_id: int, encoder_cmd, decoder_cmd, lossy: bool = False) -> None:
    DEFAULT_REGISTRY.register_external(codec_id, encoder_cmd, decoder_cmd, lossy)
