"""No-deblur / all-deblur / detect-then-deblur query pipelines with cost accounting.

Deblurring is delegated to an external program that reads a directory of PNG
files and writes same-named, same-sized PNG files to another directory.
"""

from __future__ import annotations

import csv
import json
import logging
import shlex
import subprocess
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .blur_detect import BLURRED, Threshold, classify, laplacian_variance
from .descriptors import SadConfig, extract_sad
from .errors import (
    BadArgument,
    BadConfigError,
    BadOutputError,
    BadPowerLogError,
    DeblurError,
    DeblurFailedError,
    DeblurTimeoutError,
    IncompleteOutputError,
)
from .evaluation import EvalResult, evaluate
from .imaging import read_image, write_image

log = logging.getLogger(__name__)

NO_DEBLUR = "no-deblur"
ALL_DEBLUR = "all-deblur"
DETECT_DEBLUR = "detect"
MODES = (NO_DEBLUR, ALL_DEBLUR, DETECT_DEBLUR)


@dataclass(frozen=True)
class DeblurBridge:
    """argv template with ``{in_dir}`` and ``{out_dir}`` placeholders; run without a shell."""

    command: tuple
    timeout: float = 600.0
    batch_size: int = 32

    def __post_init__(self):
        cmd = self.command
        if isinstance(cmd, str):
            cmd = shlex.split(cmd)
        cmd = tuple(str(c) for c in cmd)
        joined = " ".join(cmd)
        if "{in_dir}" not in joined or "{out_dir}" not in joined:
            raise BadConfigError("deblur command must contain {in_dir} and {out_dir}")
        if not self.timeout > 0:
            raise BadConfigError("deblur timeout must be positive")
        if self.batch_size < 1:
            raise BadConfigError("batch size must be >= 1")
        object.__setattr__(self, "command", cmd)

    def argv(self, in_dir, out_dir) -> list[str]:
        return [c.replace("{in_dir}", str(in_dir)).replace("{out_dir}", str(out_dir)) for c in self.command]


def invoke_deblurrer(bridge: DeblurBridge, images) -> list:
    """Run the external deblurrer once over ``images``; outputs come back in input order."""
    images = list(images)
    if not images:
        return []
    with tempfile.TemporaryDirectory(prefix="blurbench-deblur-") as tmp:
        in_dir, out_dir = Path(tmp, "in"), Path(tmp, "out")
        in_dir.mkdir()
        out_dir.mkdir()
        names = [f"{k:06d}.png" for k in range(len(images))]
        for name, img in zip(names, images):
            write_image(img, in_dir / name)
        argv = bridge.argv(in_dir, out_dir)
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=bridge.timeout)
        except subprocess.TimeoutExpired:
            raise DeblurTimeoutError(f"deblurrer exceeded {bridge.timeout}s") from None
        except OSError as exc:
            raise DeblurFailedError(f"cannot start deblurrer {argv[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            tail = proc.stderr.decode(errors="replace").strip()[-500:]
            raise DeblurFailedError(f"deblurrer exited with {proc.returncode}: {tail}")
        missing = [n for n in names if not (out_dir / n).is_file()]
        if missing:
            raise IncompleteOutputError(
                f"deblurrer produced {len(names) - len(missing)} of {len(names)} outputs (missing {missing[0]})"
            )
        out = []
        for name, img in zip(names, images):
            res = read_image(out_dir / name)
            if (res.width, res.height) != (img.width, img.height):
                raise BadOutputError(
                    f"{name}: deblurred size {res.width}x{res.height} != input {img.width}x{img.height}"
                )
            out.append(res)
        return out


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = NO_DEBLUR
    threshold: Threshold | None = None
    bridge: DeblurBridge | None = None
    metric: str = "neg_mad"
    sad: SadConfig = SadConfig()
    describe: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise BadConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.mode == DETECT_DEBLUR and self.threshold is None:
            raise BadConfigError("detect mode needs a calibrated threshold")
        if self.mode != NO_DEBLUR and self.bridge is None:
            raise BadConfigError(f"{self.mode} mode needs a deblur bridge")

    def descriptor(self, img):
        if self.describe is not None:
            return self.describe(img)
        return extract_sad(img, self.sad)


@dataclass
class PipelineStats:
    mode: str
    n_queries: int = 0
    time_per_query_ms: float = 0.0
    total_time_s: float = 0.0
    energy_j: float | None = None
    deblur_invocations: int = 0
    detected_blurred: int = 0
    deblur_batches: int = 0
    deblur_time_s: float = 0.0
    auc: float | None = None
    start_s: float = 0.0
    end_s: float = 0.0
    per_query_ms: list = field(default_factory=list, repr=False)

    def merge_query(self, ms: float) -> None:
        self.per_query_ms.append(ms)
        self.n_queries = len(self.per_query_ms)
        self.time_per_query_ms = sum(self.per_query_ms) / self.n_queries

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("per_query_ms")
        d["time_per_query_ms"] = round(self.time_per_query_ms, 2)
        d["total_time_s"] = round(self.total_time_s, 4)
        d["deblur_time_s"] = round(self.deblur_time_s, 4)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def run_pipeline(mix, reference, gt, cfg: PipelineConfig, power_log=None):
    """Describe every query of ``mix`` under ``cfg.mode`` and score against ``reference``.

    Per-query time covers load, detection, that query's share of its deblur
    batch, and description. Returns ``(EvalResult, PipelineStats)``. Bridge
    errors propagate with ``partial_stats`` and ``query_index`` attached.
    """
    stats = PipelineStats(cfg.mode)
    paths = mix.paths() if hasattr(mix, "paths") else list(mix)
    batch = cfg.bridge.batch_size if cfg.bridge is not None else max(1, len(paths))
    descriptors = []
    stats.start_s = time.time()
    t_start = time.perf_counter()
    for s in range(0, len(paths), batch):
        chunk = paths[s:s + batch]
        images, costs, flagged = [], [], []
        for k, p in enumerate(chunk):
            t0 = time.perf_counter()
            img = read_image(p)
            if cfg.mode == ALL_DEBLUR:
                flagged.append(k)
            elif cfg.mode == DETECT_DEBLUR:
                if classify(laplacian_variance(img), cfg.threshold) == BLURRED:
                    flagged.append(k)
                    stats.detected_blurred += 1
            images.append(img)
            costs.append(time.perf_counter() - t0)
        if flagged:
            t0 = time.perf_counter()
            try:
                restored = invoke_deblurrer(cfg.bridge, [images[k] for k in flagged])
            except DeblurError as exc:
                stats.total_time_s = time.perf_counter() - t_start
                stats.end_s = time.time()
                exc.partial_stats = stats
                exc.query_index = s + flagged[0]
                raise
            spent = time.perf_counter() - t0
            # whole-call time kept apart so fixed per-call cost (model load) can be recovered
            stats.deblur_time_s += spent
            share = spent / len(flagged)
            for k, img in zip(flagged, restored):
                images[k] = img
                costs[k] += share
            stats.deblur_invocations += len(flagged)
            stats.deblur_batches += 1
        for k, img in enumerate(images):
            t0 = time.perf_counter()
            descriptors.append(np.asarray(cfg.descriptor(img), dtype=np.float64))
            costs[k] += time.perf_counter() - t0
            stats.merge_query(costs[k] * 1000.0)
    stats.total_time_s = time.perf_counter() - t_start
    stats.end_s = time.time()
    if power_log is not None:
        stats.energy_j = integrate_energy(power_log, stats.start_s, stats.end_s)
    ref = reference.vectors if hasattr(reference, "vectors") else reference
    result: EvalResult = evaluate(np.stack(descriptors), ref, gt, cfg.metric)
    stats.auc = result.auc
    return result, stats


def read_power_log(path) -> list[tuple[float, float]]:
    """Parse a ``timestamp_s,watts`` CSV (header optional)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip():
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if lineno == 1:
                    continue
                raise BadPowerLogError(f"{path}:{lineno}: expected timestamp_s,watts") from None
    return rows


def _interp(ts, ws, t):
    k = int(np.searchsorted(ts, t, side="right")) - 1
    k = min(max(k, 0), len(ts) - 2)
    t0, t1 = ts[k], ts[k + 1]
    return ws[k] + (ws[k + 1] - ws[k]) * (t - t0) / (t1 - t0)


def integrate_energy(power_log, t0: float, t1: float):
    """Joules drawn over ``[t0, t1]``; ``None`` when the log does not cover the interval."""
    if t1 < t0:
        raise BadArgument(f"interval end {t1} precedes start {t0}")
    if not power_log:
        return None
    ts = np.array([float(t) for t, _ in power_log])
    ws = np.array([float(w) for _, w in power_log])
    if np.any(np.diff(ts) <= 0):
        raise BadPowerLogError("power log timestamps must be strictly increasing")
    if ts[0] > t0 or ts[-1] < t1:
        return None
    if t0 == t1:
        return 0.0
    inside = (ts > t0) & (ts < t1)
    xs = np.concatenate([[t0], ts[inside], [t1]])
    ys = np.concatenate([[_interp(ts, ws, t0)], ws[inside], [_interp(ts, ws, t1)]])
    return float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2))
