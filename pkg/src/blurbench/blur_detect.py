"""Variance-of-Laplacian sharpness scoring and supervised threshold calibration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import BadCalibrationError, BadFormatError, TooSmallError
from .imaging import Image, to_grayscale

SHARP = "sharp"
BLURRED = "blurred"


@dataclass(frozen=True)
class BlurScore:
    variance: float
    image_id: str = ""


@dataclass(frozen=True)
class Threshold:
    cutoff: float
    n_sharp: int = 0
    n_blurred: int = 0
    errors: int = 0
    warning: bool = False

    @property
    def error_rate(self) -> float:
        n = self.n_sharp + self.n_blurred
        return self.errors / n if n else 0.0


def laplacian_response(img: Image) -> np.ndarray:
    """4-neighbour Laplacian over interior pixels only (no padding)."""
    g = to_grayscale(img).pixels.astype(np.int64)
    if g.shape[0] < 3 or g.shape[1] < 3:
        raise TooSmallError(f"need at least 3x3 pixels, got {g.shape[1]}x{g.shape[0]}")
    return (
        g[:-2, 1:-1] + g[2:, 1:-1] + g[1:-1, :-2] + g[1:-1, 2:] - 4 * g[1:-1, 1:-1]
    )


def laplacian_variance(img: Image, image_id: str = "") -> BlurScore:
    resp = laplacian_response(img).astype(np.float64)
    return BlurScore(float(resp.var()), image_id)


def classify(score, th: Threshold) -> str:
    variance = score.variance if isinstance(score, BlurScore) else float(score)
    return SHARP if variance >= th.cutoff else BLURRED


def _variances(scores):
    return [s.variance if isinstance(s, BlurScore) else float(s) for s in scores]


def misclassified(sharp, blurred, cutoff: float) -> int:
    return sum(v < cutoff for v in sharp) + sum(v >= cutoff for v in blurred)


def calibrate_threshold(sharp_scores, blurred_scores) -> Threshold:
    """Pick the cutoff with the fewest training errors.

    Candidates are midpoints between adjacent distinct scores (or the single
    distinct score when all are equal); ties go to the lowest cutoff.
    ``warning`` is set when the populations cannot be separated.
    """
    sharp, blurred = _variances(sharp_scores), _variances(blurred_scores)
    if not sharp or not blurred:
        raise BadCalibrationError("need at least one sharp and one blurred score")
    values = sorted(set(sharp) | set(blurred))
    candidates = [(a + b) / 2 for a, b in zip(values, values[1:])] or values
    best_cut, best_err = None, None
    for c in candidates:
        e = misclassified(sharp, blurred, c)
        if best_err is None or e < best_err:
            best_cut, best_err = c, e
    return Threshold(
        cutoff=max(0.0, best_cut),
        n_sharp=len(sharp),
        n_blurred=len(blurred),
        errors=best_err,
        warning=best_err > 0,
    )


def save_threshold(th: Threshold, path) -> None:
    Path(path).write_text(json.dumps(asdict(th), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_threshold(path) -> Threshold:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        th = Threshold(
            cutoff=float(d["cutoff"]),
            n_sharp=int(d.get("n_sharp", 0)),
            n_blurred=int(d.get("n_blurred", 0)),
            errors=int(d.get("errors", 0)),
            warning=bool(d.get("warning", False)),
        )
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise BadFormatError(f"{path}: not a threshold file ({exc})") from exc
    if th.cutoff < 0:
        raise BadFormatError(f"{path}: negative cutoff")
    return th
