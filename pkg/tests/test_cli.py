import subprocess
import sys

import pytest

from csvideo.cli import main
from csvideo.frames import load_sequence

SOLVER = ["--max-outer", "5", "--max-inner", "15", "--max-refine", "2"]


@pytest.fixture(scope="module")
def clip_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", str(root / "clip"), "--width", "48", "--height", "40", "--frames", "6",
                 "--boxes", str(root / "truth.csv")]) == 0
    return root


@pytest.fixture(scope="module")
def container(clip_dir):
    out = clip_dir / "clip.csv1"
    assert main(["encode", str(clip_dir / "clip"), "--gop", "5", "--cr-key", "23", "--cr-cs", "60",
                 "--seed", "42", "-o", str(out)]) == 0
    return out


def test_info_reports_nominal_ratio(container, capsys):
    assert main(["info", str(container)]) == 0
    out = capsys.readouterr().out
    assert "45.39" in out
    assert "realized CR" in out and "6 @ 30 fps" in out


def test_decode_frame_count_and_determinism(clip_dir, container):
    a, b = clip_dir / "dec_a.y4m", clip_dir / "dec_b.y4m"
    assert main(["decode", str(container), "-o", str(a), *SOLVER]) == 0
    assert main(["decode", str(container), "-o", str(b), *SOLVER, "--workers", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(load_sequence(a)) == len(load_sequence(clip_dir / "clip")) == 6


def test_psnr_command(clip_dir, container, capsys):
    dec = clip_dir / "dec_psnr"
    assert main(["decode", str(container), "-o", str(dec), "--format", "pgm-dir", *SOLVER]) == 0
    capsys.readouterr()
    assert main(["psnr", str(clip_dir / "clip"), str(dec)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "frame,psnr" and len(lines) == 7


def test_track_and_noise(clip_dir, capsys):
    truth = str(clip_dir / "truth.csv")
    assert main(["track", str(clip_dir / "clip"), "--truth", truth]) == 0
    captured = capsys.readouterr()
    assert len(captured.out.splitlines()) == 6
    assert "success rate 100.0%" in captured.err
    assert main(["noise", str(clip_dir / "clip"), "--variances", "0,100", "--truth", truth]) == 0
    assert capsys.readouterr().out.splitlines()[1] == "0,99.00,100.0"


def test_sweep_command(clip_dir, capsys):
    assert main(["sweep", str(clip_dir / "clip"), "--gops", "3", "--cr-keys", "10", "--cr-cs", "5,10",
                 *SOLVER]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and lines[1].startswith("3,10,5,")


@pytest.mark.parametrize("argv, flag", [
    (["encode", "x", "-o", "y", "--gop", "0"], "--gop"),
    (["encode", "x", "-o", "y", "--cr-key", "1"], "--cr-key"),
    (["encode", "x", "-o", "y", "--cr-cs", "abc"], "--cr-cs"),
    (["encode", "x", "-o", "y", "--seed", "-3"], "--seed"),
    (["decode", "x", "-o", "y", "--max-inner", "0"], "--max-inner"),
    (["sweep", "x", "--gops", "3,0"], "--gops"),
])
def test_invalid_flag_names_flag(argv, flag, capsys):
    assert main(argv) == 1
    assert flag in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1


def test_missing_input_is_io_error(tmp_path, capsys):
    assert main(["info", str(tmp_path / "missing.csv1")]) == 2
    assert main(["encode", str(tmp_path / "nothing"), "-o", str(tmp_path / "o")]) == 2


def test_corrupt_container_is_format_error(tmp_path, container, capsys):
    bad = tmp_path / "bad.csv1"
    bad.write_bytes(b"JUNK" + container.read_bytes()[4:])
    assert main(["info", str(bad)]) == 3
    assert "magic" in capsys.readouterr().err
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["encode", str(empty), "-o", str(tmp_path / "o")]) == 3


def test_entry_point_runs(container):
    proc = subprocess.run([sys.executable, "-m", "csvideo.cli", "info", str(container)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "45.39" in proc.stdout
