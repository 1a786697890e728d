"""GOP coding, container serialization and compression-ratio accounting.

Every CS frame in a GOP is coded as measurements of its difference from the
GOP's key frame *as the decoder will see it*: the encoder decodes its own key
bitstream and subtracts that.  The decoder adds the recovered residual back
onto the same decoded key, so key-frame coding error cancels and only the
reconstruction error of the residual remains.

Container layout (little-endian)::

    "CSVC" | u8 version | u16 width | u16 height | u32 frame_count | u8 gop_size
    | f32 cr_key | f32 cr_cs | u32 m | u64 seed | f32 frame_rate
    then per GOP:  u32 key length | key IntraBitstream
                   per CS frame: f32 scale | m x i16 codes
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from csvideo.frames import Frame, Residual, VideoSequence, frame_add, frame_diff
from csvideo.intra import BitstreamError, IntraBitstream, RateResult, decode_intra, encode_at_cr
from csvideo.measurement import (MeasurementMatrix, QuantizedMeasurements, build_matrix, gop_seed,
                                 quantize, rows_for_ratio)
from csvideo.tv import ReconResult, SolverParams, reconstruct

MAGIC = b"CSVC"
VERSION = 1
HEADER = struct.Struct("<4sBHHIBffIQf")
SCALE = struct.Struct("<f")
LENGTH = struct.Struct("<I")


class ContainerError(ValueError):
    """Bad magic, unsupported version, truncation or inconsistent fields."""


@dataclass(frozen=True)
class GopConfig:
    gop_size: int = 5
    cr_key: float = 23.0
    cr_cs: float = 50.0
    seed: int = 42
    per_gop_seed: bool = False

    def __post_init__(self):
        if not 1 <= self.gop_size <= 255:
            raise ValueError(f"gop_size must be in [1, 255], got {self.gop_size}")
        if not self.cr_key > 1:
            raise ValueError(f"cr_key must exceed 1, got {self.cr_key}")
        if not self.cr_cs >= 1:
            raise ValueError(f"cr_cs must be >= 1, got {self.cr_cs}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def rows(self, n: int) -> int:
        return rows_for_ratio(n, self.cr_cs)

    def matrix(self, n: int, gop_index: int = 0) -> MeasurementMatrix:
        seed = gop_seed(self.seed, gop_index) if self.per_gop_seed else self.seed
        return build_matrix(seed, self.rows(n), n)


@dataclass(frozen=True)
class EncodedGop:
    key: IntraBitstream
    cs_frames: tuple[QuantizedMeasurements, ...]
    # the decoded key frame the encoder subtracted; not serialized
    reference: Frame | None = field(default=None, compare=False, repr=False)
    key_rate: RateResult | None = field(default=None, compare=False, repr=False)

    @property
    def size(self) -> int:
        return 1 + len(self.cs_frames)

    def nbytes(self) -> int:
        return LENGTH.size + self.key.nbytes + sum(SCALE.size + 2 * q.m for q in self.cs_frames)


def total_cr(gop_size: float, cr_key: float, cr_cs: float) -> float:
    """GOP compression ratio from per-frame ratios: ``G / (1/cr_key + (G-1)/cr_cs)``."""
    if gop_size <= 0 or cr_key <= 0 or cr_cs <= 0:
        raise ValueError("arguments must be positive")
    return gop_size / (1.0 / cr_key + (gop_size - 1) / cr_cs)


def nominal_cr(frame_count: int, gop_size: int, cr_key: float, cr_cs: float) -> float:
    """Sample-count ratio of a whole sequence, counting a short final GOP as it is."""
    keys = -(-frame_count // gop_size)
    return frame_count / (keys / cr_key + (frame_count - keys) / cr_cs)


def gop_lengths(frame_count: int, gop_size: int) -> list[int]:
    full, rest = divmod(frame_count, gop_size)
    return [gop_size] * full + ([rest] if rest else [])


def _check_frames(frames: Sequence[Frame], n: int):
    shape = frames[0].pixels.shape
    for f in frames:
        if f.pixels.shape != shape:
            raise ValueError("frames in a GOP must share dimensions")
    if frames[0].size != n:
        raise ValueError(f"frame has {frames[0].size} pixels, matrix expects n={n}")


def encode_gop(frames: Sequence[Frame], cfg: GopConfig, A: MeasurementMatrix) -> EncodedGop:
    """Intra-code ``frames[0]`` and measure every other frame's residual."""
    frames = list(frames)
    if len(frames) != cfg.gop_size:
        raise ValueError(f"expected {cfg.gop_size} frames, got {len(frames)}")
    _check_frames(frames, A.n)
    rate = encode_at_cr(frames[0], cfg.cr_key)
    reference = decode_intra(rate.bitstream)
    cs = tuple(quantize(A.measure(frame_diff(f, reference).vector())) for f in frames[1:])
    return EncodedGop(rate.bitstream, cs, reference, rate)


def decode_gop_with_info(g: EncodedGop, cfg: GopConfig, A: MeasurementMatrix,
                         solver: SolverParams | None = None,
                         workers: int = 1) -> tuple[list[Frame], list[ReconResult]]:
    """Decode a GOP and return per-CS-frame solver results alongside the frames."""
    key = decode_intra(g.key)
    if key.size != A.n:
        raise ValueError(f"key frame has {key.size} pixels, matrix expects n={A.n}")
    for q in g.cs_frames:
        if q.m != A.m:
            raise ValueError(f"CS frame has {q.m} measurements, matrix expects m={A.m}")

    def one(q: QuantizedMeasurements) -> ReconResult:
        return reconstruct(A, q.dequantize(), key.width, key.height, solver)

    if workers > 1 and len(g.cs_frames) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, g.cs_frames))
    else:
        results = [one(q) for q in g.cs_frames]
    frames = [key] + [frame_add(key, Residual.from_vector(r.x, key.width, key.height)) for r in results]
    return frames, results


def decode_gop(g: EncodedGop, cfg: GopConfig, A: MeasurementMatrix,
               solver: SolverParams | None = None, workers: int = 1) -> list[Frame]:
    return decode_gop_with_info(g, cfg, A, solver, workers)[0]


# ---------------------------------------------------------------------------
# container

@dataclass(frozen=True)
class ContainerHeader:
    width: int
    height: int
    frame_count: int
    gop_size: int
    cr_key: float
    cr_cs: float
    m: int
    seed: int
    frame_rate: float
    version: int = VERSION

    def pack(self) -> bytes:
        return HEADER.pack(MAGIC, self.version, self.width, self.height, self.frame_count,
                           self.gop_size, self.cr_key, self.cr_cs, self.m, self.seed, self.frame_rate)

    @classmethod
    def unpack(cls, buf: bytes) -> ContainerHeader:
        if len(buf) < HEADER.size:
            raise ContainerError("truncated container header")
        magic, ver, w, h, count, gop, crk, crc, m, seed, rate = HEADER.unpack_from(buf)
        if magic != MAGIC:
            raise ContainerError(f"bad magic {magic!r}")
        if ver != VERSION:
            raise ContainerError(f"unsupported container version {ver}")
        hdr = cls(w, h, count, gop, crk, crc, m, seed, rate, ver)
        if count < 1 or gop < 1:
            raise ContainerError("frame_count and gop_size must be >= 1")
        if not (crk > 1 and crc >= 1):
            raise ContainerError("bad compression ratio fields")
        if m != rows_for_ratio(w * h, crc):
            raise ContainerError(f"m={m} inconsistent with {w}x{h} at cr_cs={crc}")
        return hdr

    @property
    def n(self) -> int:
        return self.width * self.height

    def config(self) -> GopConfig:
        return GopConfig(self.gop_size, float(self.cr_key), float(self.cr_cs), self.seed)


@dataclass(frozen=True)
class EncodedSequence:
    header: ContainerHeader
    gops: tuple[EncodedGop, ...]

    def to_bytes(self) -> bytes:
        parts = [self.header.pack()]
        for g in self.gops:
            key = g.key.to_bytes()
            parts.append(LENGTH.pack(len(key)))
            parts.append(key)
            for q in g.cs_frames:
                parts.append(SCALE.pack(q.scale))
                parts.append(q.codes.astype("<i2").tobytes())
        return b"".join(parts)

    @property
    def nominal_cr(self) -> float:
        h = self.header
        return nominal_cr(h.frame_count, h.gop_size, h.cr_key, h.cr_cs)

    def realized_cr(self) -> float:
        h = self.header
        total = HEADER.size + sum(g.nbytes() for g in self.gops)
        return h.frame_count * h.n / total

    def key_cr(self) -> float:
        """Achieved key-frame ratio over all GOPs, from actual key sizes."""
        return len(self.gops) * self.header.n / sum(g.key.nbytes for g in self.gops)


def _f32(v: float) -> float:
    return float(np.float32(v))


def encode_sequence(seq: VideoSequence, cfg: GopConfig) -> EncodedSequence:
    """Encode a whole sequence; the final GOP may be shorter than ``cfg.gop_size``."""
    if cfg.per_gop_seed:
        raise ValueError("per-GOP seeds cannot be signalled in a version-1 container")
    # the header stores the ratios as f32; encode with exactly those values
    cfg = replace(cfg, cr_key=_f32(cfg.cr_key), cr_cs=_f32(cfg.cr_cs))
    n = seq.width * seq.height
    A = cfg.matrix(n)
    gops = []
    pos = 0
    for length in gop_lengths(len(seq), cfg.gop_size):
        chunk = seq.frames[pos:pos + length]
        gops.append(encode_gop(chunk, replace(cfg, gop_size=length), A))
        pos += length
    header = ContainerHeader(seq.width, seq.height, len(seq), cfg.gop_size, cfg.cr_key,
                             cfg.cr_cs, A.m, cfg.seed, seq.frame_rate)
    return EncodedSequence(header, tuple(gops))


def write_container(seq: VideoSequence, cfg: GopConfig) -> bytes:
    return encode_sequence(seq, cfg).to_bytes()


def parse_container(buf: bytes) -> EncodedSequence:
    """Split a container into header and GOPs without reconstructing anything."""
    header = ContainerHeader.unpack(buf)
    pos = HEADER.size
    m = header.m
    gops = []
    for length in gop_lengths(header.frame_count, header.gop_size):
        if pos + LENGTH.size > len(buf):
            raise ContainerError("truncated GOP")
        (klen,) = LENGTH.unpack_from(buf, pos)
        pos += LENGTH.size
        if pos + klen > len(buf):
            raise ContainerError("truncated key frame")
        try:
            key, end = IntraBitstream.from_bytes(buf[pos:pos + klen])
        except BitstreamError as exc:
            raise ContainerError(str(exc)) from exc
        if end != klen:
            raise ContainerError("key frame length mismatch")
        if (key.width, key.height) != (header.width, header.height):
            raise ContainerError("key frame dimensions disagree with header")
        pos += klen
        cs = []
        for _ in range(length - 1):
            need = SCALE.size + 2 * m
            if pos + need > len(buf):
                raise ContainerError("truncated CS frame")
            (scale,) = SCALE.unpack_from(buf, pos)
            codes = np.frombuffer(buf, dtype="<i2", count=m, offset=pos + SCALE.size)
            try:
                cs.append(QuantizedMeasurements(float(scale), codes.astype(np.int16)))
            except ValueError as exc:
                raise ContainerError(str(exc)) from exc
            pos += need
        gops.append(EncodedGop(key, tuple(cs)))
    if pos != len(buf):
        raise ContainerError(f"{len(buf) - pos} trailing bytes after last GOP")
    return EncodedSequence(header, tuple(gops))


@dataclass
class DecodeInfo:
    header: ContainerHeader
    nominal_cr: float
    realized_cr: float
    key_cr: float
    gop_lengths: list[int]
    # per frame: True for key frames and converged CS reconstructions
    converged: list[bool]


def decode_sequence(enc: EncodedSequence, solver: SolverParams | None = None,
                    workers: int = 1) -> tuple[VideoSequence, DecodeInfo]:
    h = enc.header
    cfg = h.config()
    A = build_matrix(cfg.seed, h.m, h.n)

    def one(g: EncodedGop):
        try:
            return decode_gop_with_info(g, replace(cfg, gop_size=g.size), A, solver)
        except BitstreamError as exc:
            raise ContainerError(str(exc)) from exc

    if workers > 1 and len(enc.gops) > 1:
        with ThreadPoolExecutor(workers) as pool:
            decoded = list(pool.map(one, enc.gops))
    else:
        decoded = [one(g) for g in enc.gops]
    frames: list[Frame] = []
    converged: list[bool] = []
    for gop_frames, results in decoded:
        frames.extend(gop_frames)
        converged.append(True)
        converged.extend(r.converged for r in results)
    info = DecodeInfo(h, enc.nominal_cr, enc.realized_cr(), enc.key_cr(),
                      [g.size for g in enc.gops], converged)
    return VideoSequence(tuple(frames), h.frame_rate), info


def read_container(buf: bytes, solver: SolverParams | None = None,
                   workers: int = 1) -> tuple[VideoSequence, DecodeInfo]:
    return decode_sequence(parse_container(buf), solver, workers)
