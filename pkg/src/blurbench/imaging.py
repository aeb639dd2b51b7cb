"""8-bit raster images, frame sequences and the pixel primitives built on them."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import (
    BadFrameNameError,
    BadImageError,
    BadResizeError,
    BadArgument,
    InconsistentFramesError,
    NoFramesError,
)

FRAME_EXTENSIONS = (".png", ".ppm", ".pgm")

# BT.601 luma weights in thousandths, so conversion stays in integers
_LUMA = np.array([299, 587, 114], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable 8-bit image.

    ``pixels`` is ``(height, width)`` for gray or ``(height, width, 3)`` for
    RGB. The array is copied on construction and marked read-only.
    """

    pixels: np.ndarray
    colorspace: str = "gamma-encoded"

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise BadImageError(f"unsupported pixel array shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise BadImageError("image must be at least 1x1")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise BadImageError("samples must lie in [0, 255]")
            if np.issubdtype(arr.dtype, np.floating) and not np.all(arr == np.floor(arr)):
                raise BadImageError("samples must be integers")
        arr = np.array(arr, dtype=np.uint8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    @property
    def shape(self):
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"Image({self.width}x{self.height}x{self.channels})"


@dataclass(frozen=True)
class FrameSequence:
    frames: tuple
    fps: float
    source_id: str = ""
    paths: tuple = field(default=(), compare=False)

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise NoFramesError("a frame sequence needs at least one frame")
        if not self.fps > 0:
            raise BadArgument(f"fps must be positive, got {self.fps}")
        first = frames[0].shape
        for k, f in enumerate(frames):
            if f.shape != first:
                raise InconsistentFramesError(
                    f"frame {k} has shape {f.shape}, expected {first}"
                )
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, k):
        return self.frames[k]

    def stack(self, start=0, stop=None) -> np.ndarray:
        """Frames ``start:stop`` as one ``(n, h, w[, c])`` uint8 array."""
        return np.stack([f.pixels for f in self.frames[start:stop]])


def round_half_up_div(num, den):
    """floor(num / den + 1/2) for non-negative integer arrays/scalars."""
    return (2 * num + den) // (2 * den)


def read_image(path) -> Image:
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode == "P":
                im = im.convert("RGB")
            if im.mode not in ("L", "RGB"):
                raise BadImageError(f"{path}: unsupported mode {im.mode} (need 8-bit gray or RGB)")
            return Image(np.asarray(im))
    except (OSError, SyntaxError) as exc:
        raise BadImageError(f"{path}: {exc}") from exc


def write_image(img: Image, path) -> None:
    """Write ``img`` as PNG. Parent directories are created as needed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "L" if img.channels == 1 else "RGB"
    PILImage.fromarray(np.ascontiguousarray(img.pixels), mode=mode).save(path, format="PNG")


def _frame_index(stems):
    prefixes = {re.match(r"\D*", s).group(0) for s in stems}
    if len(prefixes) != 1:
        raise BadFrameNameError(f"frame names do not share a common prefix: {sorted(prefixes)}")
    prefix = prefixes.pop()
    out = []
    for s in stems:
        digits = s[len(prefix):]
        if not digits.isdigit() or not digits.isascii():
            raise BadFrameNameError(f"cannot parse frame index from {s!r}")
        out.append(int(digits))
    if len(set(out)) != len(out):
        raise BadFrameNameError("duplicate frame indices")
    return out


def list_frame_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise NoFramesError(f"{directory} is not a directory")
    files = [
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in FRAME_EXTENSIONS
    ]
    if not files:
        raise NoFramesError(f"no frame files in {directory}")
    idx = _frame_index([p.stem for p in files])
    return [p for _, p in sorted(zip(idx, files))]


def load_frame_sequence(directory, fps: float, source_id=None) -> FrameSequence:
    """Load every PNG/PPM/PGM frame in ``directory`` ordered by numeric stem.

    Stems may carry a shared non-digit prefix (``frame_000012.png``).
    """
    if not fps > 0:
        raise BadArgument(f"fps must be positive, got {fps}")
    files = list_frame_files(directory)
    frames = []
    for p in files:
        img = read_image(p)
        if frames and img.shape != frames[0].shape:
            raise InconsistentFramesError(
                f"{p.name} has shape {img.shape}, expected {frames[0].shape}"
            )
        frames.append(img)
    if source_id is None:
        source_id = os.path.basename(os.path.normpath(str(directory)))
    return FrameSequence(tuple(frames), float(fps), source_id, tuple(str(p) for p in files))


def to_grayscale(img: Image) -> Image:
    if img.channels == 1:
        return img
    if img.channels != 3:
        raise BadImageError(f"unsupported channel count {img.channels}")
    acc = img.pixels.astype(np.int64) @ _LUMA
    return Image(round_half_up_div(acc, 1000))


def downsample_box(img: Image, out_w: int, out_h: int) -> Image:
    """Area-average ``img`` down to ``out_w`` x ``out_h``.

    A source pixel belongs to the output cell its centre falls into; each
    output sample is the round-half-up mean of its cell.
    """
    if out_w < 1 or out_h < 1:
        raise BadResizeError("output dimensions must be >= 1")
    if out_w > img.width or out_h > img.height:
        raise BadResizeError(
            f"cannot upscale {img.width}x{img.height} to {out_w}x{out_h}"
        )
    if (out_w, out_h) == (img.width, img.height):
        return img
    # centre of pixel x is x + 0.5; cell = floor((x + 0.5) * out / size)
    col_cell = (2 * np.arange(img.width) + 1) * out_w // (2 * img.width)
    row_cell = (2 * np.arange(img.height) + 1) * out_h // (2 * img.height)
    # cells are contiguous runs, so reduceat over their first indices sums them
    col_start = np.searchsorted(col_cell, np.arange(out_w))
    row_start = np.searchsorted(row_cell, np.arange(out_h))
    px = img.pixels.astype(np.int64)
    sums = np.add.reduceat(np.add.reduceat(px, row_start, axis=0), col_start, axis=1)
    counts = np.bincount(row_cell, minlength=out_h)[:, None] * np.bincount(col_cell, minlength=out_w)[None, :]
    if px.ndim == 3:
        counts = counts[:, :, None]
    return Image(round_half_up_div(sums, counts))
