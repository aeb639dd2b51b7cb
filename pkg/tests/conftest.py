import sys
from pathlib import Path

import numpy as np
import pytest

from blurbench.blur_synth import default_schedule, synthesize_traverse, write_traverse
from blurbench.dataset import Traverse, save_manifest
from blurbench.imaging import Image, write_image
from blurbench.synthetic import panning_sequence

PANNING_STRIDE = 10


def identity_deblur_cmd():
    code = (
        "import shutil, sys, pathlib\n"
        "for p in sorted(pathlib.Path(sys.argv[1]).iterdir()):\n"
        "    shutil.copy(p, sys.argv[2])\n"
    )
    return [sys.executable, "-c", code, "{in_dir}", "{out_dir}"]


def write_frames(directory, arrays, fmt="{:06d}.png"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, a in enumerate(arrays):
        write_image(Image(a), directory / fmt.format(k))
    return directory


@pytest.fixture
def frame_dir(tmp_path):
    def make(arrays, name="frames", fmt="{:06d}.png"):
        return write_frames(tmp_path / name, arrays, fmt)
    return make


@pytest.fixture(scope="session")
def panning():
    """480-frame 512x128 panning sequence (2 px/frame) and its blurred traverse."""
    seq = panning_sequence(seed=1)
    return seq, synthesize_traverse(seq, default_schedule(), stride=PANNING_STRIDE)


@pytest.fixture(scope="session")
def panning_on_disk(panning, tmp_path_factory):
    """The panning traverse written in the level/place layout with a manifest."""
    _, blurred = panning
    root = tmp_path_factory.mktemp("panning")
    written = write_traverse(blurred, root, "PAN")
    t = Traverse(
        name="PAN", route="custom", fps=240.0,
        images=tuple((p, l, rel) for (p, l), rel in written.items()),
    )
    manifest = root / "PAN" / "manifest.json"
    save_manifest(t, manifest)
    return manifest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config._acceptance_lines

    def record(number, title, ok, detail=""):
        lines.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} ({detail})")
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
