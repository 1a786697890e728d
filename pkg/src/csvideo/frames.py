"""Frames, residuals, sequences and their file formats.

Pixels are stored row-major as ``(height, width)`` arrays.  Flattening a frame
with :meth:`Frame.vector` gives the solver-side signal ``x`` in the same order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

MIN_SIDE = 8

FORMATS = ("pgm-dir", "y4m", "raw")


class FrameFormatError(ValueError):
    """Raised on malformed or inconsistent image/sequence files."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Frame:
    """One 8-bit grayscale plane."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"frame must be 2-D, got shape {px.shape}")
        h, w = px.shape
        if w < MIN_SIDE or h < MIN_SIDE:
            raise ValueError(f"frame {w}x{h} below minimum side {MIN_SIDE}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("pixel values outside [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", _readonly(np.array(px, dtype=np.uint8, copy=True)))

    @classmethod
    def from_bytes(cls, width: int, height: int, data: bytes) -> Frame:
        if len(data) != width * height:
            raise FrameFormatError(f"expected {width * height} bytes for {width}x{height}, got {len(data)}")
        return cls(np.frombuffer(data, dtype=np.uint8).reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> int:
        return self.pixels.size

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    def vector(self) -> np.ndarray:
        return self.pixels.astype(np.float64).ravel()

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


@dataclass(frozen=True, eq=False)
class Residual:
    """Signed per-pixel difference plane, samples in [-255, 255]."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2:
            raise ValueError(f"residual must be 2-D, got shape {s.shape}")
        if s.size and (s.min() < -255 or s.max() > 255):
            raise ValueError("residual samples outside [-255, 255]")
        object.__setattr__(self, "samples", _readonly(np.array(s, dtype=np.int16, copy=True)))

    @classmethod
    def from_vector(cls, x: np.ndarray, width: int, height: int) -> Residual:
        """Round a real solver output to the nearest integer residual."""
        r = np.clip(np.rint(np.asarray(x, dtype=np.float64)), -255, 255)
        return cls(r.reshape(height, width).astype(np.int16))

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    def vector(self) -> np.ndarray:
        return self.samples.astype(np.float64).ravel()

    def __eq__(self, other):
        if not isinstance(other, Residual):
            return NotImplemented
        return self.samples.shape == other.samples.shape and np.array_equal(self.samples, other.samples)

    def __hash__(self):
        return hash((self.samples.shape, self.samples.tobytes()))


@dataclass(frozen=True)
class VideoSequence:
    frames: tuple[Frame, ...]
    frame_rate: float = field(default=30.0)

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("no frames")
        shape = frames[0].pixels.shape
        for i, f in enumerate(frames):
            if f.pixels.shape != shape:
                raise FrameFormatError(
                    f"frame {i} is {f.width}x{f.height}, expected {shape[1]}x{shape[0]}")
        object.__setattr__(self, "frames", frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]


def _check_same_shape(a, b):
    sa = a.pixels.shape if isinstance(a, Frame) else a.samples.shape
    sb = b.pixels.shape if isinstance(b, Frame) else b.samples.shape
    if sa != sb:
        raise ValueError(f"dimension mismatch: {sa[1]}x{sa[0]} vs {sb[1]}x{sb[0]}")


def frame_diff(a: Frame, b: Frame) -> Residual:
    """Exact signed difference ``a - b``."""
    _check_same_shape(a, b)
    return Residual(a.pixels.astype(np.int16) - b.pixels.astype(np.int16))


def frame_add(base: Frame, r: Residual) -> Frame:
    """``base + r`` saturated to [0, 255]."""
    _check_same_shape(base, r)
    out = base.pixels.astype(np.int16) + r.samples
    return Frame(np.clip(out, 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# PGM

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(path) -> Frame:
    buf = Path(path).read_bytes()
    return parse_pgm(buf, source=str(path))


def parse_pgm(buf: bytes, source: str = "<bytes>") -> Frame:
    if not buf.startswith(b"P5"):
        raise FrameFormatError(f"{source}: not a binary PGM (P5)")
    pos = 2
    values = []
    for _ in range(3):
        m = _PGM_TOKEN.match(buf, pos)
        if m is None:
            raise FrameFormatError(f"{source}: truncated PGM header")
        try:
            values.append(int(m.group(1)))
        except ValueError:
            raise FrameFormatError(f"{source}: bad PGM header token {m.group(1)!r}") from None
        pos = m.end()
    width, height, maxval = values
    if maxval != 255:
        raise FrameFormatError(f"{source}: maxval {maxval} unsupported (8-bit only)")
    # exactly one whitespace byte separates header and raster
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FrameFormatError(f"{source}: malformed PGM header")
    pos += 1
    raster = buf[pos:pos + width * height]
    if len(raster) != width * height:
        raise FrameFormatError(f"{source}: truncated raster")
    return Frame.from_bytes(width, height, raster)


def format_pgm(frame: Frame) -> bytes:
    return b"P5\n%d %d\n255\n" % (frame.width, frame.height) + frame.data


# ---------------------------------------------------------------------------
# Y4M

def _y4m_chroma_bytes(width: int, height: int, colorspace: str) -> int:
    cw, ch = (width + 1) // 2, (height + 1) // 2
    if colorspace.startswith("420"):
        return 2 * cw * ch
    if colorspace.startswith("422"):
        return 2 * cw * height
    if colorspace == "444":
        return 2 * width * height
    if colorspace == "444alpha":
        return 3 * width * height
    if colorspace == "mono":
        return 0
    raise FrameFormatError(f"unsupported y4m colorspace C{colorspace}")


def parse_y4m(buf: bytes, source: str = "<bytes>") -> VideoSequence:
    end = buf.find(b"\n")
    if end < 0 or not buf.startswith(b"YUV4MPEG2"):
        raise FrameFormatError(f"{source}: missing YUV4MPEG2 signature")
    params = buf[:end].split()[1:]
    width = height = None
    rate = 30.0
    colorspace = "420jpeg"
    for p in params:
        tag, val = chr(p[0]), p[1:].decode("ascii", "replace")
        if tag == "W":
            width = int(val)
        elif tag == "H":
            height = int(val)
        elif tag == "F":
            num, _, den = val.partition(":")
            rate = int(num) / int(den or 1)
        elif tag == "C":
            colorspace = val
    if width is None or height is None:
        raise FrameFormatError(f"{source}: y4m header lacks W/H")
    if re.search(r"p\d+$", colorspace):
        raise FrameFormatError(f"{source}: high bit depth C{colorspace} unsupported")
    luma = width * height
    frame_bytes = luma + _y4m_chroma_bytes(width, height, colorspace)

    frames = []
    pos = end + 1
    while pos < len(buf):
        nl = buf.find(b"\n", pos)
        if nl < 0 or not buf.startswith(b"FRAME", pos):
            raise FrameFormatError(f"{source}: bad FRAME marker at byte {pos}")
        pos = nl + 1
        if pos + frame_bytes > len(buf):
            raise FrameFormatError(f"{source}: truncated frame {len(frames)}")
        frames.append(Frame.from_bytes(width, height, buf[pos:pos + luma]))
        pos += frame_bytes
    return VideoSequence(tuple(frames), rate)


def format_y4m(seq: VideoSequence) -> bytes:
    w, h = seq.width, seq.height
    num, den = _rate_fraction(seq.frame_rate)
    # neutral 4:2:0 chroma keeps the file readable by ordinary players
    if w % 2 == 0 and h % 2 == 0:
        cs, chroma = "420jpeg", bytes([128]) * (w * h // 2)
    else:
        cs, chroma = "mono", b""
    parts = [f"YUV4MPEG2 W{w} H{h} F{num}:{den} Ip A1:1 C{cs}\n".encode("ascii")]
    for f in seq.frames:
        parts.append(b"FRAME\n")
        parts.append(f.data)
        parts.append(chroma)
    return b"".join(parts)


def _rate_fraction(rate: float) -> tuple[int, int]:
    fr = Fraction(rate).limit_denominator(1001)
    return fr.numerator, fr.denominator


# ---------------------------------------------------------------------------
# sequence I/O

def detect_format(path) -> str:
    p = Path(path)
    if p.is_dir():
        return "pgm-dir"
    if p.suffix.lower() == ".y4m":
        return "y4m"
    return "raw"


def load_sequence(path, format: str | None = None, width: int | None = None,
                  height: int | None = None, frame_rate: float = 30.0) -> VideoSequence:
    """Read a grayscale sequence from a PGM directory, a Y4M file or raw planar bytes.

    Raw input needs ``width`` and ``height``; Y4M keeps only the luma plane.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file or directory")
    fmt = format or detect_format(path)
    if fmt == "pgm-dir":
        if not path.is_dir():
            raise FrameFormatError(f"{path}: not a directory")
        files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".pgm")
        if not files:
            raise FrameFormatError(f"{path}: no frames")
        return VideoSequence(tuple(read_pgm(p) for p in files), frame_rate)
    if fmt == "y4m":
        return parse_y4m(path.read_bytes(), source=str(path))
    if fmt == "raw":
        if not width or not height:
            raise ValueError("raw input requires width and height")
        buf = path.read_bytes()
        n = width * height
        if not buf:
            raise FrameFormatError(f"{path}: no frames")
        if len(buf) % n:
            raise FrameFormatError(f"{path}: size {len(buf)} is not a multiple of {width}x{height}")
        frames = tuple(Frame.from_bytes(width, height, buf[i:i + n]) for i in range(0, len(buf), n))
        return VideoSequence(frames, frame_rate)
    raise ValueError(f"unknown sequence format {fmt!r}; expected one of {FORMATS}")


def save_sequence(seq: VideoSequence, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or (detect_format(path) if path.exists() else
                     "y4m" if path.suffix.lower() == ".y4m" else
                     "raw" if path.suffix else "pgm-dir")
    if fmt == "pgm-dir":
        path.mkdir(parents=True, exist_ok=True)
        digits = max(4, len(str(len(seq) - 1)))
        for i, f in enumerate(seq.frames):
            (path / f"frame_{i:0{digits}d}.pgm").write_bytes(format_pgm(f))
    elif fmt == "y4m":
        path.write_bytes(format_y4m(seq))
    elif fmt == "raw":
        path.write_bytes(b"".join(f.data for f in seq.frames))
    else:
        raise ValueError(f"unknown sequence format {fmt!r}; expected one of {FORMATS}")


def frames_from_arrays(arrays: Sequence[np.ndarray], frame_rate: float = 30.0) -> VideoSequence:
    return VideoSequence(tuple(Frame(np.asarray(a)) for a in arrays), frame_rate)


__all__ = [
    "Frame", "Residual", "VideoSequence", "FrameFormatError",
    "frame_diff", "frame_add", "load_sequence", "save_sequence",
    "read_pgm", "parse_pgm", "format_pgm", "parse_y4m", "format_y4m",
    "detect_format", "frames_from_arrays", "FORMATS",
]
