"""Quality metrics, template tracking and configuration sweeps."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from csvideo.frames import Frame, VideoSequence
from csvideo.pipeline import GopConfig, decode_sequence, encode_sequence, total_cr
from csvideo.tv import SolverParams

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
DEFAULT_SR_THRESHOLD = 20.0

SWEEP_COLUMNS = ("gop", "cr_key", "cr_cs", "nominal_cr", "realized_cr", "mean_psnr", "key_psnr", "track_sr")
NOISE_COLUMNS = ("variance", "psnr", "track_sr")

Box = tuple[float, float, float, float]  # center x, center y, width, height


def psnr(a: Frame, b: Frame) -> float:
    """Peak signal-to-noise ratio in dB; identical frames give 99 dB."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}")
    diff = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0 ** 2 / mse))


def sequence_psnr(a: VideoSequence, b: VideoSequence) -> list[float]:
    if len(a) != len(b):
        raise ValueError(f"sequence lengths differ: {len(a)} vs {len(b)}")
    return [psnr(x, y) for x, y in zip(a, b)]


def add_noise(f: Frame, variance: float, seed: int = 0) -> Frame:
    """Additive white Gaussian noise, rounded and clamped to 8 bits."""
    if variance < 0:
        raise ValueError("variance must be non-negative")
    if variance == 0:
        return f
    rng = np.random.default_rng(seed)
    noisy = f.pixels + rng.normal(0.0, math.sqrt(variance), f.pixels.shape)
    return Frame(np.clip(np.rint(noisy), 0, 255).astype(np.uint8))


def add_noise_sequence(seq: VideoSequence, variance: float, seed: int = 0) -> VideoSequence:
    return VideoSequence(tuple(add_noise(f, variance, seed + i) for i, f in enumerate(seq)), seq.frame_rate)


# ---------------------------------------------------------------------------
# tracking

@dataclass
class TrackState:
    template: np.ndarray
    box: Box
    search_radius: int

    @property
    def top_left(self) -> tuple[int, int]:
        cx, cy, w, h = self.box
        return int(round(cx - w / 2)), int(round(cy - h / 2))


def _check_box(box: Box, width: int, height: int):
    cx, cy, w, h = box
    x0, y0 = round(cx - w / 2), round(cy - h / 2)
    if w < 2 or h < 2 or x0 < 0 or y0 < 0 or x0 + w > width or y0 + h > height:
        raise ValueError(f"box {box} outside {width}x{height} frame")


def _ncc_map(region: np.ndarray, template: np.ndarray) -> np.ndarray:
    win = sliding_window_view(region, template.shape)
    t = template - template.mean()
    tn = math.sqrt(float(np.sum(t * t)))
    wz = win - win.mean(axis=(2, 3), keepdims=True)
    num = np.einsum("ijkl,kl->ij", wz, t)
    den = np.sqrt(np.einsum("ijkl,ijkl->ij", wz, wz)) * tn
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / den, 0.0)


def track(seq: VideoSequence, init_box: Box, search_radius: int = 8,
          update_rate: float = 0.05, confidence: float = 0.5) -> list[Box]:
    """Normalized cross-correlation template tracker.

    Each frame is searched within ``search_radius`` pixels of the previous box;
    the template is blended toward the match at ``update_rate`` whenever the
    correlation reaches ``confidence``.  Returns one box per frame.
    """
    _check_box(init_box, seq.width, seq.height)
    cx, cy, w, h = init_box
    iw, ih = int(w), int(h)
    state = TrackState(None, (cx, cy, float(iw), float(ih)), search_radius)
    x0, y0 = state.top_left
    state.template = seq[0].pixels[y0:y0 + ih, x0:x0 + iw].astype(np.float64)
    boxes = [state.box]
    for f in seq.frames[1:]:
        img = f.pixels.astype(np.float64)
        px, py = state.top_left
        lx = max(0, px - search_radius)
        ly = max(0, py - search_radius)
        hx = min(seq.width - iw, px + search_radius)
        hy = min(seq.height - ih, py + search_radius)
        region = img[ly:hy + ih, lx:hx + iw]
        scores = _ncc_map(region, state.template)
        best = int(np.argmax(scores))
        dy, dx = divmod(best, scores.shape[1])
        nx, ny = lx + dx, ly + dy
        if scores.flat[best] >= confidence:
            patch = img[ny:ny + ih, nx:nx + iw]
            state.template = (1 - update_rate) * state.template + update_rate * patch
        state.box = (nx + iw / 2, ny + ih / 2, float(iw), float(ih))
        boxes.append(state.box)
    return boxes


def success_rate(pred: Sequence[Box], truth: Sequence[Box],
                 center_threshold: float = DEFAULT_SR_THRESHOLD) -> float:
    """Percent of frames whose predicted center lies within the threshold."""
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(truth)} truth boxes")
    if not pred:
        raise ValueError("no boxes")
    hits = sum(math.hypot(p[0] - t[0], p[1] - t[1]) <= center_threshold for p, t in zip(pred, truth))
    return 100.0 * hits / len(pred)


def read_boxes(path) -> list[Box]:
    """Read ``frame_index,cx,cy,w,h`` lines (a header line is allowed)."""
    boxes: dict[int, Box] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                idx = int(row[0])
            except ValueError:
                continue  # header
            if len(row) != 5:
                raise ValueError(f"{path}: expected 5 fields, got {len(row)}")
            boxes[idx] = tuple(float(v) for v in row[1:])
    if sorted(boxes) != list(range(len(boxes))):
        raise ValueError(f"{path}: frame indices must be 0..N-1 without gaps")
    return [boxes[i] for i in range(len(boxes))]


def write_boxes(boxes: Sequence[Box], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("frame_index", "cx", "cy", "w", "h"))
        for i, b in enumerate(boxes):
            w.writerow((i, *(f"{v:g}" for v in b)))


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepRow:
    gop: int
    cr_key: float
    cr_cs: float
    nominal_total_cr: float
    realized_total_cr: float | None = None
    mean_psnr_db: float | None = None
    key_psnr_db: float | None = None
    track_sr_percent: float | None = None
    error: str | None = None

    def csv_fields(self) -> list[str]:
        def fmt(v, spec):
            return "NA" if v is None else format(v, spec)

        return [str(self.gop), f"{self.cr_key:g}", f"{self.cr_cs:g}",
                fmt(self.nominal_total_cr, ".2f"), fmt(self.realized_total_cr, ".2f"),
                fmt(self.mean_psnr_db, ".2f"), fmt(self.key_psnr_db, ".2f"),
                fmt(self.track_sr_percent, ".1f")]


def evaluate_cell(seq: VideoSequence, cfg: GopConfig, solver: SolverParams | None = None,
                  truth: Sequence[Box] | None = None, sr_threshold: float = DEFAULT_SR_THRESHOLD,
                  workers: int = 1) -> SweepRow:
    row = SweepRow(cfg.gop_size, cfg.cr_key, cfg.cr_cs, total_cr(cfg.gop_size, cfg.cr_key, cfg.cr_cs))
    try:
        enc = encode_sequence(seq, cfg)
        dec, _ = decode_sequence(enc, solver, workers)
        scores = sequence_psnr(seq, dec)
        row.realized_total_cr = enc.realized_cr()
        row.mean_psnr_db = float(np.mean(scores))
        row.key_psnr_db = float(np.mean(scores[::cfg.gop_size]))
        if truth is not None:
            row.track_sr_percent = success_rate(track(dec, truth[0]), truth, sr_threshold)
    except Exception as exc:  # recorded in-row; the sweep carries on
        log.warning("sweep cell G=%d %g:%g failed: %s", cfg.gop_size, cfg.cr_key, cfg.cr_cs, exc)
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def run_sweep(seq: VideoSequence, grid: Iterable[tuple[int, float, float]],
              solver: SolverParams | None = None, truth: Sequence[Box] | None = None,
              seed: int = 42, workers: int = 1, sr_threshold: float = DEFAULT_SR_THRESHOLD) -> list[SweepRow]:
    """Encode, decode and score ``seq`` for each ``(G, cr_key, cr_cs)`` cell.

    Rows come back in grid order whatever ``workers`` is.
    """
    cells = [GopConfig(int(g), float(k), float(c), seed) for g, k, c in grid]
    if not cells:
        raise ValueError("empty sweep grid")
    if truth is not None and len(truth) != len(seq):
        raise ValueError(f"{len(truth)} truth boxes for {len(seq)} frames")

    def one(cfg):
        return evaluate_cell(seq, cfg, solver, truth, sr_threshold)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, cells))
    return [one(c) for c in cells]


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


@dataclass
class NoiseRow:
    variance: float
    psnr_db: float
    track_sr_percent: float | None


def noise_experiment(seq: VideoSequence, variances: Sequence[float], truth: Sequence[Box] | None = None,
                     seed: int = 0, sr_threshold: float = DEFAULT_SR_THRESHOLD) -> list[NoiseRow]:
    """Degrade ``seq`` over a variance ladder and record mean PSNR and tracking SR."""
    rows = []
    for v in variances:
        noisy = add_noise_sequence(seq, v, seed)
        p = float(np.mean(sequence_psnr(seq, noisy)))
        sr = None
        if truth is not None:
            sr = success_rate(track(noisy, truth[0]), truth, sr_threshold)
        rows.append(NoiseRow(float(v), p, sr))
    return rows


def noise_csv(rows: Sequence[NoiseRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(NOISE_COLUMNS)
    for r in rows:
        w.writerow((f"{r.variance:g}", f"{r.psnr_db:.2f}",
                    "NA" if r.track_sr_percent is None else f"{r.track_sr_percent:.1f}"))
    return buf.getvalue()


def write_text(text: str, path) -> None:
    Path(path).write_text(text)
