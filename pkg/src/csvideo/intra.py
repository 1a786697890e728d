"""Key-frame intra coder: 8x8 block DCT with canonical Huffman coding.

The coder is JPEG-like: level shift, orthonormal 2-D DCT per block, uniform
quantization by ``quant_scale`` times the standard luminance matrix, zigzag
scan, DC prediction from the previous block, and (run, size) coding of AC
coefficients.  Huffman tables are built per frame and stored in the payload
as 16 length counts plus the symbol list.  A CRC-32 closes the payload.

Bitstream layout (little-endian)::

    u16 width | u16 height | f32 quant_scale | u32 payload length | payload
"""

from __future__ import annotations

import heapq
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from csvideo.frames import Frame

BLOCK = 8
HEADER = struct.Struct("<HHfI")
MIN_SCALE = 2.0 ** -6
MAX_SCALE = 2.0 ** 10
MAX_CODE_LEN = 16
MAX_CATEGORY = 15

# standard luminance quantization table, row-major
BASE_QUANT = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
], dtype=np.float64).reshape(8, 8)


def _zigzag_order() -> np.ndarray:
    order = sorted(((r, c) for r in range(BLOCK) for c in range(BLOCK)),
                   key=lambda rc: (rc[0] + rc[1], rc[0] if (rc[0] + rc[1]) % 2 else rc[1]))
    return np.array([r * BLOCK + c for r, c in order])


ZIGZAG = _zigzag_order()


class BitstreamError(ValueError):
    """Truncated or corrupt intra bitstream."""


@dataclass(frozen=True)
class IntraBitstream:
    width: int
    height: int
    quant_scale: float
    payload: bytes

    def to_bytes(self) -> bytes:
        return HEADER.pack(self.width, self.height, self.quant_scale, len(self.payload)) + self.payload

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple[IntraBitstream, int]:
        """Parse one bitstream at ``offset``; returns it and the end offset."""
        if len(buf) - offset < HEADER.size:
            raise BitstreamError("truncated intra header")
        w, h, qs, plen = HEADER.unpack_from(buf, offset)
        start = offset + HEADER.size
        if len(buf) - start < plen:
            raise BitstreamError(f"truncated intra payload: need {plen} bytes, have {len(buf) - start}")
        return cls(w, h, qs, bytes(buf[start:start + plen])), start + plen

    @property
    def nbytes(self) -> int:
        return HEADER.size + len(self.payload)

    @property
    def compression_ratio(self) -> float:
        return self.width * self.height / self.nbytes


# ---------------------------------------------------------------------------
# bit I/O

class _BitWriter:
    def __init__(self):
        self.out = bytearray()
        self.acc = 0
        self.nacc = 0
        self.nbits = 0

    def write(self, value: int, length: int):
        if length == 0:
            return
        self.acc = (self.acc << length) | (value & ((1 << length) - 1))
        self.nacc += length
        self.nbits += length
        while self.nacc >= 8:
            self.nacc -= 8
            self.out.append((self.acc >> self.nacc) & 0xFF)
        self.acc &= (1 << self.nacc) - 1

    def finish(self) -> bytes:
        if self.nacc:
            self.out.append((self.acc << (8 - self.nacc)) & 0xFF)
            self.acc = self.nacc = 0
        return bytes(self.out)


class _BitReader:
    def __init__(self, data: bytes, nbits: int):
        self.value = int.from_bytes(data, "big")
        self.total = len(data) * 8
        self.nbits = nbits
        self.pos = 0

    def read(self, length: int) -> int:
        if length == 0:
            return 0
        if self.pos + length > self.nbits:
            raise BitstreamError("bitstream exhausted")
        self.pos += length
        return (self.value >> (self.total - self.pos)) & ((1 << length) - 1)


# ---------------------------------------------------------------------------
# canonical Huffman

def _code_lengths(freqs: dict[int, int]) -> dict[int, int]:
    """Huffman code lengths, flattened until none exceeds 16 bits."""
    if len(freqs) == 1:
        return {next(iter(freqs)): 1}
    weights = dict(freqs)
    while True:
        heap = [(w, sym, (sym,)) for sym, w in sorted(weights.items())]
        heapq.heapify(heap)
        depth = dict.fromkeys(weights, 0)
        while len(heap) > 1:
            w1, k1, s1 = heapq.heappop(heap)
            w2, k2, s2 = heapq.heappop(heap)
            for s in s1 + s2:
                depth[s] += 1
            heapq.heappush(heap, (w1 + w2, min(k1, k2), s1 + s2))
        if max(depth.values()) <= MAX_CODE_LEN:
            return depth
        weights = {s: (w + 1) // 2 for s, w in weights.items()}


def _canonical(lengths: dict[int, int]) -> dict[int, tuple[int, int]]:
    codes = {}
    code = 0
    prev = 0
    for sym, ln in sorted(lengths.items(), key=lambda kv: (kv[1], kv[0])):
        code <<= ln - prev
        codes[sym] = (code, ln)
        code += 1
        prev = ln
    return codes


def _pack_table(lengths: dict[int, int]) -> bytes:
    counts = [0] * MAX_CODE_LEN
    for ln in lengths.values():
        counts[ln - 1] += 1
    symbols = [s for s, _ in sorted(lengths.items(), key=lambda kv: (kv[1], kv[0]))]
    return bytes(counts) + bytes(symbols)


def _unpack_table(buf: bytes, pos: int) -> tuple[dict[tuple[int, int], int], int]:
    if pos + MAX_CODE_LEN > len(buf):
        raise BitstreamError("truncated Huffman table")
    counts = buf[pos:pos + MAX_CODE_LEN]
    pos += MAX_CODE_LEN
    nsym = sum(counts)
    if nsym == 0 or pos + nsym > len(buf):
        raise BitstreamError("bad Huffman table")
    symbols = buf[pos:pos + nsym]
    pos += nsym
    lengths = {}
    k = 0
    for ln, cnt in enumerate(counts, start=1):
        for _ in range(cnt):
            lengths[symbols[k]] = ln
            k += 1
    if len(lengths) != nsym:
        raise BitstreamError("duplicate Huffman symbols")
    decode = {(ln, code): sym for sym, (code, ln) in _canonical(lengths).items()}
    return decode, pos


def _read_symbol(reader: _BitReader, table: dict[tuple[int, int], int]) -> int:
    code = 0
    for ln in range(1, MAX_CODE_LEN + 1):
        code = (code << 1) | reader.read(1)
        sym = table.get((ln, code))
        if sym is not None:
            return sym
    raise BitstreamError("invalid Huffman code")


# ---------------------------------------------------------------------------
# coefficient coding

def _category(v: int) -> int:
    return int(abs(v)).bit_length()


def _amplitude_bits(v: int, size: int) -> int:
    return v if v >= 0 else v + (1 << size) - 1


def _amplitude_value(bits: int, size: int) -> int:
    if size == 0:
        return 0
    return bits if bits >> (size - 1) else bits - (1 << size) + 1


def _block_symbols(zz: np.ndarray):
    """Yield (dc_diff, [(symbol, value, size), ...]) per block."""
    prev_dc = 0
    for blk in zz:
        dc = int(blk[0])
        ac = []
        run = 0
        nz = np.flatnonzero(blk[1:])
        last = nz[-1] + 1 if nz.size else 0
        for k in range(1, last + 1):
            v = int(blk[k])
            if v == 0:
                run += 1
                continue
            while run > 15:
                ac.append((0xF0, 0, 0))
                run -= 16
            size = _category(v)
            ac.append(((run << 4) | size, v, size))
            run = 0
        if last < BLOCK * BLOCK - 1:
            ac.append((0x00, 0, 0))
        yield dc - prev_dc, ac
        prev_dc = dc


def _padded(frame: Frame) -> np.ndarray:
    px = frame.pixels.astype(np.float64)
    ph = -frame.height % BLOCK
    pw = -frame.width % BLOCK
    if ph or pw:
        px = np.pad(px, ((0, ph), (0, pw)), mode="edge")
    return px


def _to_blocks(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return img.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).swapaxes(1, 2).reshape(-1, BLOCK, BLOCK)


def _from_blocks(blocks: np.ndarray, h: int, w: int) -> np.ndarray:
    return blocks.reshape(h // BLOCK, w // BLOCK, BLOCK, BLOCK).swapaxes(1, 2).reshape(h, w)


def _storable_scale(quant_scale: float) -> float:
    if not (quant_scale > 0 and math.isfinite(quant_scale)):
        raise ValueError(f"quant_scale must be positive, got {quant_scale}")
    return float(np.float32(min(max(quant_scale, MIN_SCALE), MAX_SCALE)))


def encode_intra(f: Frame, quant_scale: float) -> IntraBitstream:
    """Encode one frame; ``quant_scale`` is clamped to [2**-6, 2**10]."""
    qs = _storable_scale(quant_scale)
    blocks = _to_blocks(_padded(f) - 128.0)
    coef = dctn(blocks, axes=(1, 2), norm="ortho")
    q = np.rint(coef / (BASE_QUANT * qs)).astype(np.int64)
    limit = (1 << MAX_CATEGORY) - 1
    np.clip(q, -limit, limit, out=q)
    zz = q.reshape(len(q), -1)[:, ZIGZAG]

    blocks_syms = list(_block_symbols(zz))
    dc_freq: dict[int, int] = {}
    ac_freq: dict[int, int] = {}
    for diff, ac in blocks_syms:
        c = _category(diff)
        dc_freq[c] = dc_freq.get(c, 0) + 1
        for sym, _, _ in ac:
            ac_freq[sym] = ac_freq.get(sym, 0) + 1
    dc_len = _code_lengths(dc_freq)
    dc_codes = _canonical(dc_len)
    header = bytearray(_pack_table(dc_len))
    if ac_freq:
        ac_len = _code_lengths(ac_freq)
        ac_codes = _canonical(ac_len)
        header += _pack_table(ac_len)
    else:
        ac_codes = {}
        header += bytes(MAX_CODE_LEN)

    bw = _BitWriter()
    for diff, ac in blocks_syms:
        size = _category(diff)
        bw.write(*dc_codes[size])
        bw.write(_amplitude_bits(diff, size), size)
        for sym, v, sz in ac:
            bw.write(*ac_codes[sym])
            bw.write(_amplitude_bits(v, sz), sz)
    nbits = bw.nbits
    body = bytes(header) + struct.pack("<I", nbits) + bw.finish()
    payload = body + struct.pack("<I", zlib.crc32(body))
    return IntraBitstream(f.width, f.height, qs, payload)


def decode_intra(b: IntraBitstream) -> Frame:
    """Inverse of :func:`encode_intra`; raises :class:`BitstreamError` on corruption."""
    p = b.payload
    if len(p) < 4 or zlib.crc32(p[:-4]) != struct.unpack("<I", p[-4:])[0]:
        raise BitstreamError("intra payload checksum mismatch")
    if b.width < BLOCK or b.height < BLOCK:
        raise BitstreamError(f"bad intra dimensions {b.width}x{b.height}")
    if not (b.quant_scale > 0 and math.isfinite(b.quant_scale)):
        raise BitstreamError("bad quant_scale")
    body = p[:-4]
    dc_table, pos = _unpack_table(body, 0)
    if body[pos:pos + MAX_CODE_LEN] == bytes(MAX_CODE_LEN):
        ac_table, pos = {}, pos + MAX_CODE_LEN
    else:
        ac_table, pos = _unpack_table(body, pos)
    if pos + 4 > len(body):
        raise BitstreamError("truncated intra payload")
    (nbits,) = struct.unpack_from("<I", body, pos)
    data = body[pos + 4:]
    if nbits > len(data) * 8:
        raise BitstreamError("bit count exceeds payload")
    reader = _BitReader(data, nbits)

    hp = b.height + (-b.height % BLOCK)
    wp = b.width + (-b.width % BLOCK)
    nblocks = (hp // BLOCK) * (wp // BLOCK)
    zz = np.zeros((nblocks, BLOCK * BLOCK), dtype=np.int64)
    prev_dc = 0
    for i in range(nblocks):
        size = _read_symbol(reader, dc_table)
        if size > MAX_CATEGORY:
            raise BitstreamError("bad DC category")
        prev_dc += _amplitude_value(reader.read(size), size)
        zz[i, 0] = prev_dc
        k = 1
        while k < BLOCK * BLOCK:
            if not ac_table:
                raise BitstreamError("AC data without AC table")
            sym = _read_symbol(reader, ac_table)
            if sym == 0x00:
                break
            run, size = sym >> 4, sym & 0x0F
            if sym == 0xF0:
                k += 16
                continue
            k += run
            if size == 0 or k >= BLOCK * BLOCK:
                raise BitstreamError("AC run past end of block")
            zz[i, k] = _amplitude_value(reader.read(size), size)
            k += 1
    if reader.pos != nbits:
        raise BitstreamError("trailing bits in intra payload")

    q = np.zeros_like(zz)
    q[:, ZIGZAG] = zz
    coef = q.reshape(nblocks, BLOCK, BLOCK) * (BASE_QUANT * b.quant_scale)
    img = _from_blocks(idctn(coef, axes=(1, 2), norm="ortho"), hp, wp) + 128.0
    img = np.clip(np.rint(img), 0, 255)[:b.height, :b.width]
    return Frame(img.astype(np.uint8))


@dataclass(frozen=True)
class RateResult:
    """Outcome of a rate search; ``in_range`` is False when the target was unreachable."""

    bitstream: IntraBitstream
    target_cr: float
    achieved_cr: float
    in_range: bool
    probes: int


def encode_at_cr(f: Frame, target_cr: float, tolerance: float = 0.05, max_probes: int = 20) -> RateResult:
    """Bisect ``quant_scale`` (in log domain) to hit ``n*8/target_cr`` bits.

    Header bytes count against the budget.  When the target lies outside what
    the coder can produce, the closest achievable stream is returned with
    ``in_range=False``.
    """
    if not target_cr > 1:
        raise ValueError(f"target_cr must exceed 1, got {target_cr}")
    target = f.size * 8 / target_cr
    probes = 0
    best = None

    def probe(log_scale):
        nonlocal probes, best
        probes += 1
        bs = encode_intra(f, 2.0 ** log_scale)
        bits = bs.nbytes * 8
        if best is None or abs(bits - target) < abs(best.nbytes * 8 - target):
            best = bs
        return bits

    def done(bits):
        return abs(bits - target) <= tolerance * target

    def result(ok):
        return RateResult(best, target_cr, f.size / best.nbytes, ok, probes)

    lo, hi = math.log2(MIN_SCALE), math.log2(MAX_SCALE)
    bits_lo = probe(lo)
    if done(bits_lo):
        return result(True)
    if bits_lo < target:
        return result(False)
    bits_hi = probe(hi)
    if done(bits_hi):
        return result(True)
    if bits_hi > target:
        return result(False)
    while probes < max_probes:
        mid = 0.5 * (lo + hi)
        bits = probe(mid)
        if done(bits):
            return result(True)
        if bits > target:
            lo = mid
        else:
            hi = mid
    return result(done(best.nbytes * 8))
