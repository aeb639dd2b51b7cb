"""Place descriptors: native SAD vectors and externally computed descriptor files.

Descriptor file layout (little-endian)::

    b"BBDSC1\\0\\0"   magic, 8 bytes
    uint32          dimension d
    uint32          count n
    float32[n * d]  row-major payload

A sidecar text file ``<file>.txt`` lists ``index<TAB>level<TAB>source_path``
for each row.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadConfigError, BadDimensionsError, BadFormatError, TruncatedError
from .imaging import Image, downsample_box, to_grayscale
from .parallel import pmap

MAGIC = b"BBDSC1\x00\x00"
_HEADER = struct.Struct("<8sII")

METRICS = ("neg_mad", "cosine")


@dataclass(frozen=True)
class SadConfig:
    down_w: int = 64
    down_h: int = 32
    patch: int = 8

    def __post_init__(self):
        if min(self.down_w, self.down_h, self.patch) < 1:
            raise BadConfigError("SAD dimensions must be positive")
        if self.down_w % self.patch or self.down_h % self.patch:
            raise BadConfigError(
                f"{self.down_w}x{self.down_h} is not divisible into {self.patch}x{self.patch} patches"
            )


def extract_sad(img: Image, cfg: SadConfig = SadConfig()) -> np.ndarray:
    """Downsampled grayscale with every patch standardised to zero mean, unit std."""
    small = downsample_box(to_grayscale(img), cfg.down_w, cfg.down_h).pixels.astype(np.float64)
    p = cfg.patch
    tiles = small.reshape(cfg.down_h // p, p, cfg.down_w // p, p)
    mean = tiles.mean(axis=(1, 3), keepdims=True)
    std = tiles.std(axis=(1, 3), keepdims=True)
    centred = tiles - mean
    safe = np.where(std < 1e-12, 1.0, std)
    normed = np.where(std < 1e-12, 0.0, centred / safe)
    return normed.reshape(cfg.down_h, cfg.down_w).ravel()


def similarity(a, b, metric: str = "neg_mad") -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise BadDimensionsError(f"dimension mismatch {a.size} vs {b.size}")
    if metric == "neg_mad":
        return -float(np.abs(a - b).mean())
    if metric == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            return 0.0
        return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
    raise BadConfigError(f"unknown metric {metric!r}; choose from {METRICS}")


@dataclass(frozen=True, eq=False)
class DescriptorSet:
    """One float32 descriptor per place, rows aligned to ``ids``.

    ``ids`` holds ``(place index, level, source path)`` per row.
    """

    vectors: np.ndarray
    ids: tuple
    method: str = "sad"

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float32, copy=True)
        if v.ndim != 2 or v.shape[1] < 1:
            raise BadDimensionsError(f"descriptor matrix must be (n, d>=1), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise BadFormatError("descriptors contain non-finite values")
        ids = tuple((int(i), int(l), str(s)) for i, l, s in self.ids)
        if len(ids) != v.shape[0]:
            raise BadDimensionsError(f"{len(ids)} ids for {v.shape[0]} descriptors")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __eq__(self, other):
        if not isinstance(other, DescriptorSet):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.vectors.shape == other.vectors.shape
            and self.vectors.tobytes() == other.vectors.tobytes()
        )

    def in_place_order(self) -> "DescriptorSet":
        """Rows reordered by place index; indices must be 0..n-1."""
        order = sorted(range(len(self.ids)), key=lambda k: self.ids[k][0])
        places = [self.ids[k][0] for k in order]
        if places != list(range(len(places))):
            raise BadFormatError("descriptor place indices are not contiguous from 0")
        return DescriptorSet(self.vectors[order], tuple(self.ids[k] for k in order), self.method)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".txt")


def save_descriptor_set(dset: DescriptorSet, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, d = dset.vectors.shape
    payload = np.ascontiguousarray(dset.vectors, dtype="<f4").tobytes()
    path.write_bytes(_HEADER.pack(MAGIC, d, n) + payload)
    lines = "".join(f"{i}\t{l}\t{s}\n" for i, l, s in dset.ids)
    sidecar_path(path).write_text(lines, encoding="utf-8")


def load_descriptor_set(path, method=None) -> DescriptorSet:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedError(f"{path}: shorter than the header")
    magic, d, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadFormatError(f"{path}: bad magic {magic!r}")
    if d < 1:
        raise BadFormatError(f"{path}: dimension 0")
    expected = _HEADER.size + 4 * n * d
    if len(raw) < expected:
        raise TruncatedError(f"{path}: payload holds {(len(raw) - _HEADER.size) // 4} floats, header needs {n * d}")
    if len(raw) > expected:
        raise BadFormatError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    vectors = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=n * d).reshape(n, d)
    side = sidecar_path(path)
    if side.is_file():
        ids = []
        for line in side.read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3:
                raise BadFormatError(f"{side}: malformed line {line!r}")
            try:
                ids.append((int(parts[0]), int(parts[1]), parts[2]))
            except ValueError:
                raise BadFormatError(f"{side}: malformed line {line!r}") from None
        if len(ids) != n:
            raise BadFormatError(f"{side}: lists {len(ids)} descriptors, header declares {n}")
    else:
        ids = [(k, 0, "") for k in range(n)]
    if method is None:
        method = path.parent.name or "external"
    return DescriptorSet(vectors, tuple(ids), method)


def describe_images(images, level=0, sources=None, cfg: SadConfig = SadConfig(), jobs=1) -> DescriptorSet:
    """SAD descriptors for a place-ordered list of images."""
    vecs = pmap(lambda im: extract_sad(im, cfg), images, jobs)
    sources = sources or [""] * len(vecs)
    ids = tuple((k, level, str(s)) for k, s in enumerate(sources))
    return DescriptorSet(np.stack(vecs), ids, "sad")
