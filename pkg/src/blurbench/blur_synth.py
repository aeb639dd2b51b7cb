"""Motion blur by averaging consecutive high-frame-rate frames.

A blurred image at level ``L`` starting at frame ``j`` is the integer mean of
frames ``j .. j+L-1``; ``L = 1`` is the sharp frame itself. The virtual
exposure time is ``L / fps``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadArgument, SequenceTooShortError, WindowOutOfRangeError
from .imaging import FrameSequence, Image, write_image

DEFAULT_LEVELS = (1, 10, 20, 30, 40, 60, 80, 120, 240)


@dataclass(frozen=True)
class BlurSpec:
    level: int
    start: int = 0

    def __post_init__(self):
        if int(self.level) != self.level or self.level < 1:
            raise BadArgument(f"blur level must be an integer >= 1, got {self.level}")
        if int(self.start) != self.start or self.start < 0:
            raise BadArgument(f"start frame must be an integer >= 0, got {self.start}")


@dataclass(frozen=True)
class BlurSchedule:
    levels: tuple

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels)
        if not levels:
            raise BadArgument("a schedule needs at least one level")
        if any(v < 1 for v in levels):
            raise BadArgument("blur levels must be >= 1")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise BadArgument(f"blur levels must be strictly increasing: {levels}")
        object.__setattr__(self, "levels", levels)

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k):
        return self.levels[k]

    @property
    def max_level(self) -> int:
        return self.levels[-1]


def default_schedule() -> BlurSchedule:
    return BlurSchedule(DEFAULT_LEVELS)


def exposure_time(level: int, fps: float) -> float:
    """Virtual exposure in seconds for ``level`` frames at ``fps``."""
    if level < 1:
        raise BadArgument(f"level must be >= 1, got {level}")
    if not fps > 0:
        raise BadArgument(f"fps must be positive, got {fps}")
    return level / fps


def _mean_of_sum(acc: np.ndarray, level: int) -> Image:
    return Image((acc + level // 2) // level)


def synthesize_blur(seq: FrameSequence, spec: BlurSpec) -> Image:
    n = len(seq)
    if spec.start + spec.level > n:
        raise WindowOutOfRangeError(
            f"window [{spec.start}, {spec.start + spec.level}) exceeds {n} frames"
        )
    if spec.level == 1:
        return seq[spec.start]
    acc = seq.stack(spec.start, spec.start + spec.level).sum(axis=0, dtype=np.int64)
    return _mean_of_sum(acc, spec.level)


def anchors(n_frames: int, stride: int, max_level: int) -> list[int]:
    """Start frames of every place: 0, stride, 2*stride, ... with room for ``max_level``."""
    if stride < 1:
        raise BadArgument(f"stride must be >= 1, got {stride}")
    if n_frames < max_level:
        raise SequenceTooShortError(
            f"{n_frames} frames cannot hold a window of {max_level}"
        )
    return list(range(0, n_frames - max_level + 1, stride))


def synthesize_traverse(seq: FrameSequence, schedule: BlurSchedule, stride=None, max_level=None):
    """Blur every place of ``seq`` at every schedule level.

    Returns ``{level: [Image per place]}``. All levels share the anchor set,
    so index ``k`` is the same place at every level.
    """
    if max_level is None:
        max_level = schedule.max_level
    if max_level < schedule.max_level:
        raise BadArgument("max_level must cover the largest schedule level")
    if stride is None:
        stride = max_level
    starts = anchors(len(seq), stride, max_level)
    out = {level: [] for level in schedule}
    wanted = set(schedule)
    for j in starts:
        # one running sum per anchor, emitting each level as it is reached
        acc = np.zeros(seq[0].shape, dtype=np.int64)
        for count in range(1, schedule.max_level + 1):
            acc += seq[j + count - 1].pixels
            if count in wanted:
                out[count].append(seq[j] if count == 1 else _mean_of_sum(acc, count))
    return out


def level_dirname(level: int) -> str:
    return f"{level:03d}"


def place_filename(index: int) -> str:
    return f"{index:06d}.png"


def write_traverse(blurred: dict, out_root, name: str) -> dict:
    """Write ``<out_root>/<name>/<LLL>/<place>.png``; returns ``{(place, level): relpath}``.

    Returned paths are relative to ``<out_root>/<name>``.
    """
    base = Path(out_root) / name
    written = {}
    for level, images in blurred.items():
        for k, img in enumerate(images):
            rel = f"{level_dirname(level)}/{place_filename(k)}"
            write_image(img, base / rel)
            written[(k, level)] = rel
    return written
