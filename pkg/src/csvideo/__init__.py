"""Low-complexity compressive-sensing video codec for surveillance footage.

A group of pictures (GOP) is coded as one intra key frame followed by
``G - 1`` CS frames.  Each CS frame is sent as Gaussian measurements of its
residual against the *decoded* key frame and recovered at the decoder by
total-variation minimization.
"""

from csvideo.frames import Frame, Residual, VideoSequence, frame_add, frame_diff, load_sequence, save_sequence
from csvideo.measurement import MeasurementMatrix, QuantizedMeasurements, build_matrix, rows_for_ratio
from csvideo.tv import ReconResult, SolverParams, reconstruct
from csvideo.intra import IntraBitstream, decode_intra, encode_at_cr, encode_intra
from csvideo.pipeline import EncodedGop, GopConfig, decode_gop, encode_gop, read_container, total_cr, write_container
from csvideo.evaluation import psnr, run_sweep, success_rate, track

__version__ = "0.1.0"

__all__ = [
    "Frame",
    "Residual",
    "VideoSequence",
    "frame_add",
    "frame_diff",
    "load_sequence",
    "save_sequence",
    "MeasurementMatrix",
    "QuantizedMeasurements",
    "build_matrix",
    "rows_for_ratio",
    "ReconResult",
    "SolverParams",
    "reconstruct",
    "IntraBitstream",
    "decode_intra",
    "encode_at_cr",
    "encode_intra",
    "EncodedGop",
    "GopConfig",
    "decode_gop",
    "encode_gop",
    "read_container",
    "total_cr",
    "write_container",
    "psnr",
    "run_sweep",
    "success_rate",
    "track",
]
