import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays

from csvideo.evaluation import psnr
from csvideo.frames import Frame
from csvideo.intra import (MIN_SCALE, BitstreamError, IntraBitstream, decode_intra, encode_at_cr,
                           encode_intra)

SCALES = [0.25, 0.5, 1, 2, 4, 8, 16, 32]


@pytest.fixture(scope="module")
def qcif_frame():
    from csvideo.synthetic import moving_square
    return moving_square(176, 144, 1).sequence[0]


def test_flat_frame_is_tiny():
    f = Frame(np.full((144, 176), 77, np.uint8))
    bs = encode_intra(f, 1.0)
    assert bs.nbytes < f.size / 20
    out = decode_intra(bs)
    assert np.ptp(out.pixels) == 0 and abs(int(out.pixels[0, 0]) - 77) <= 1


def test_size_non_increasing_with_scale(qcif_frame):
    sizes = [encode_intra(qcif_frame, s).nbytes for s in SCALES]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


def test_psnr_non_increasing_with_scale(qcif_frame):
    scores = [psnr(qcif_frame, decode_intra(encode_intra(qcif_frame, s))) for s in SCALES]
    assert all(a >= b - 1e-9 for a, b in zip(scores, scores[1:]))


def test_min_scale_near_lossless(qcif_frame):
    out = decode_intra(encode_intra(qcif_frame, MIN_SCALE))
    assert psnr(qcif_frame, out) >= 45


@given(arrays(np.uint8, (13, 21)))
@settings(max_examples=30, deadline=None)
def test_odd_sizes_round_trip_shape(px):
    f = Frame(px)
    out = decode_intra(encode_intra(f, 0.25))
    assert (out.width, out.height) == (21, 13)
    assert psnr(f, out) > 30


def test_double_decode_identical(qcif_frame):
    bs = encode_intra(qcif_frame, 1.0)
    assert decode_intra(bs).pixels.tobytes() == decode_intra(bs).pixels.tobytes()


def test_serialization_round_trip(qcif_frame):
    bs = encode_intra(qcif_frame, 3.0)
    buf = b"xx" + bs.to_bytes() + b"tail"
    back, end = IntraBitstream.from_bytes(buf, 2)
    assert back == bs and buf[end:] == b"tail"
    with pytest.raises(BitstreamError):
        IntraBitstream.from_bytes(bs.to_bytes()[:-1])


def test_corrupt_byte_is_detected(qcif_frame):
    bs = encode_intra(qcif_frame, 1.0)
    for pos in (0, len(bs.payload) // 2, len(bs.payload) - 1):
        bad = bytearray(bs.payload)
        bad[pos] ^= 0x5A
        with pytest.raises(BitstreamError):
            decode_intra(IntraBitstream(bs.width, bs.height, bs.quant_scale, bytes(bad)))


def test_rate_control_hits_target(qcif_frame):
    r = encode_at_cr(qcif_frame, 23)
    target_bits = 176 * 144 * 8 / 23
    assert round(target_bits) == 8815
    assert r.in_range
    assert abs(r.bitstream.nbytes * 8 - 8816) <= 0.05 * 8816
    assert r.probes <= 20


def test_rate_control_unreachable(qcif_frame):
    r = encode_at_cr(qcif_frame, 1.01)
    assert not r.in_range
    assert r.achieved_cr > 1.01


def test_higher_target_is_smaller(qcif_frame):
    assert encode_at_cr(qcif_frame, 40).bitstream.nbytes <= encode_at_cr(qcif_frame, 23).bitstream.nbytes


def test_invalid_arguments(qcif_frame):
    with pytest.raises(ValueError):
        encode_intra(qcif_frame, 0)
    with pytest.raises(ValueError):
        encode_at_cr(qcif_frame, 1.0)
