"""Traverses, query/reference pairs, ground truth and shuffled blur mixes."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    BadArgument,
    BadGroundTruthError,
    BadManifestError,
    LevelUnavailableError,
    MissingImageError,
)

CONDITION_TAGS = frozenset({"MB", "W", "I", "VP"})

LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407
_MASK64 = (1 << 64) - 1


class LCG:
    """64-bit linear congruential generator; draws are the upper 32 bits."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u32(self) -> int:
        self.state = (self.state * LCG_MULTIPLIER + LCG_INCREMENT) & _MASK64
        return self.state >> 32

    def below(self, bound: int) -> int:
        return self.next_u32() % bound


def shuffle(items, seed: int) -> list:
    """Fisher-Yates shuffle driven by :class:`LCG` (i from n-1 down to 1)."""
    out = list(items)
    rng = LCG(seed)
    for i in range(len(out) - 1, 0, -1):
        j = rng.below(i + 1)
        out[i], out[j] = out[j], out[i]
    return out


@dataclass(frozen=True)
class Traverse:
    """One recorded pass along a route, as blurred place images per level.

    ``images`` holds ``(place index, level, path)`` triples. Relative paths
    are resolved against ``root`` (the manifest directory once loaded).
    """

    name: str
    route: str = "custom"
    conditions: frozenset = frozenset()
    fps: float = 240.0
    images: tuple = ()
    notes: str = ""
    root: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "conditions", frozenset(self.conditions))
        images = tuple(sorted((int(p), int(l), str(path)) for p, l, path in self.images))
        object.__setattr__(self, "images", images)
        if not self.fps > 0:
            raise BadManifestError(f"{self.name}: fps must be positive")
        bad = self.conditions - CONDITION_TAGS
        if bad:
            raise BadManifestError(f"{self.name}: unknown condition tags {sorted(bad)}")
        per_level = {}
        for place, level, _ in images:
            per_level.setdefault(level, []).append(place)
        counts = set()
        for level, places in per_level.items():
            if level < 1:
                raise BadManifestError(f"{self.name}: level {level} < 1")
            if len(set(places)) != len(places):
                raise BadManifestError(f"{self.name}: duplicate place index at level {level}")
            if places != list(range(len(places))):
                raise BadManifestError(f"{self.name}: place indices at level {level} are not contiguous from 0")
            counts.add(len(places))
        if len(counts) > 1:
            raise BadManifestError(f"{self.name}: levels have different place counts")

    @property
    def levels(self) -> list[int]:
        return sorted({l for _, l, _ in self.images})

    @property
    def n_places(self) -> int:
        lv = self.levels
        return sum(1 for _, l, _ in self.images if l == lv[0]) if lv else 0

    def has_level(self, level: int) -> bool:
        return any(l == level for _, l, _ in self.images)

    def paths(self, level: int) -> list[Path]:
        """Resolved image paths for ``level`` in place order."""
        if not self.has_level(level):
            raise LevelUnavailableError(f"{self.name} has no images at L={level}")
        base = Path(self.root) if self.root else Path()
        return [base / p for _, l, p in self.images if l == level]

    def image_path(self, place: int, level: int) -> Path:
        return self.paths(level)[place]

    def check_files(self) -> None:
        for level in self.levels:
            for p in self.paths(level):
                if not p.is_file():
                    raise MissingImageError(f"{self.name}: missing image {p}")


@dataclass(frozen=True)
class GroundTruth:
    """Correct reference places for each query; ``matches[i]`` may be empty."""

    matches: tuple
    tolerance: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "matches", tuple(tuple(sorted(set(int(r) for r in m))) for m in self.matches)
        )

    def __len__(self):
        return len(self.matches)

    def __getitem__(self, i):
        return self.matches[i]

    @property
    def n_positive(self) -> int:
        return sum(1 for m in self.matches if m)

    def validate(self, n_query: int, n_reference: int) -> None:
        if len(self.matches) != n_query:
            raise BadGroundTruthError(
                f"ground truth covers {len(self.matches)} queries, expected {n_query}"
            )
        for i, m in enumerate(self.matches):
            if any(r < 0 or r >= n_reference for r in m):
                raise BadGroundTruthError(f"query {i}: reference index out of range [0, {n_reference})")
        if not self.n_positive:
            raise BadGroundTruthError("no query has a correct reference")


def identity_ground_truth(n_query: int, tolerance: int = 1) -> GroundTruth:
    """Query ``i`` matches reference places ``i - W .. i + W`` clipped to the traverse."""
    if n_query < 1 or tolerance < 0:
        raise BadArgument("need n_query >= 1 and tolerance >= 0")
    return GroundTruth(
        tuple(
            tuple(range(max(0, i - tolerance), min(n_query - 1, i + tolerance) + 1))
            for i in range(n_query)
        ),
        tolerance,
    )


def read_correspondence(path, n_query=None) -> GroundTruth:
    """Parse ``query<TAB>ref_low<TAB>ref_high`` lines (inclusive ranges)."""
    rows = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        try:
            q, lo, hi = (int(x) for x in parts)
        except ValueError:
            raise BadGroundTruthError(f"{path}:{lineno}: expected three tab-separated integers") from None
        if lo > hi or q < 0 or lo < 0:
            raise BadGroundTruthError(f"{path}:{lineno}: bad range")
        rows.setdefault(q, set()).update(range(lo, hi + 1))
    if n_query is None:
        n_query = max(rows) + 1 if rows else 0
    return GroundTruth(tuple(tuple(rows.get(i, ())) for i in range(n_query)), 0)


def write_correspondence(gt: GroundTruth, path) -> None:
    lines = []
    for q, m in enumerate(gt.matches):
        # split into contiguous runs
        run = []
        for r in m:
            if run and r != run[-1] + 1:
                lines.append(f"{q}\t{run[0]}\t{run[-1]}")
                run = []
            run.append(r)
        if run:
            lines.append(f"{q}\t{run[0]}\t{run[-1]}")
    Path(path).write_text("".join(l + "\n" for l in lines), encoding="utf-8")


@dataclass(frozen=True)
class DatasetPair:
    query: Traverse
    query_level: int
    reference: Traverse
    ground_truth: GroundTruth
    reference_level: int = 1
    name: str = ""

    def __post_init__(self):
        if not self.name:
            object.__setattr__(self, "name", f"{self.query.name}-{self.reference.name}")

    @property
    def conditions(self) -> frozenset:
        tags = self.query.conditions ^ self.reference.conditions
        if self.query_level > 1:
            tags = tags | {"MB"}
        return frozenset(tags)

    def at_level(self, level: int) -> "DatasetPair":
        return build_pair(self.query, level, self.reference, self.ground_truth,
                          reference_level=self.reference_level, name=self.name)


def build_pair(query: Traverse, query_level: int, reference: Traverse, gt: GroundTruth,
               reference_level: int = 1, name: str = "") -> DatasetPair:
    if not query.has_level(query_level):
        raise LevelUnavailableError(f"query {query.name} has no images at L={query_level}")
    if not reference.has_level(reference_level):
        raise LevelUnavailableError(f"reference {reference.name} has no images at L={reference_level}")
    gt.validate(query.n_places, reference.n_places)
    return DatasetPair(query, query_level, reference, gt, reference_level, name)


@dataclass(frozen=True)
class MixSequence:
    """Each place of ``traverse`` once, in place order, at a shuffled level."""

    traverse: Traverse
    entries: tuple
    seed: int
    proportions: tuple

    def __len__(self):
        return len(self.entries)

    def counts(self) -> dict:
        out = {level: 0 for level, _ in self.proportions}
        for _, level in self.entries:
            out[level] += 1
        return out

    def paths(self) -> list[Path]:
        cache = {}
        out = []
        for place, level in self.entries:
            if level not in cache:
                cache[level] = self.traverse.paths(level)
            out.append(cache[level][place])
        return out


def allocate_counts(proportions: dict, total: int) -> dict:
    """Largest-remainder apportionment of ``total`` items; ties go to the lower level."""
    levels = sorted(proportions)
    targets = {l: proportions[l] * total for l in levels}
    # the epsilon absorbs float error such as 0.29 * 100 = 28.999999999999996
    counts = {l: math.floor(targets[l] + 1e-9) for l in levels}
    left = total - sum(counts.values())
    order = sorted(levels, key=lambda l: (-(targets[l] - counts[l]), l))
    for l in order[:max(left, 0)]:
        counts[l] += 1
    return counts


def build_shuffled_mix(traverse: Traverse, proportions: dict, seed: int) -> MixSequence:
    proportions = {int(k): float(v) for k, v in proportions.items()}
    if not proportions:
        raise BadArgument("proportions must name at least one level")
    for level in proportions:
        if not traverse.has_level(level):
            raise LevelUnavailableError(f"{traverse.name} has no images at L={level}")
    if any(v < 0 for v in proportions.values()) or abs(sum(proportions.values()) - 1.0) > 1e-9:
        raise BadArgument("proportions must be non-negative and sum to 1")
    n = traverse.n_places
    counts = allocate_counts(proportions, n)
    order = shuffle(range(n), seed)
    level_of = {}
    pos = 0
    for level in sorted(counts):
        for place in order[pos:pos + counts[level]]:
            level_of[place] = level
        pos += counts[level]
    entries = tuple((p, level_of[p]) for p in range(n))
    return MixSequence(traverse, entries, int(seed), tuple(sorted(proportions.items())))


# --- manifests -------------------------------------------------------------

def _rebase(t: Traverse, base):
    """Image paths rewritten relative to ``base`` when ``t`` came from a manifest elsewhere."""
    if base is None or not t.root:
        return t.images
    out = []
    for p, l, path in t.images:
        resolved = os.path.abspath(os.path.join(t.root, path))
        out.append((p, l, Path(os.path.relpath(resolved, os.path.abspath(base))).as_posix()))
    return tuple(out)


def traverse_to_dict(t: Traverse, base=None) -> dict:
    return {
        "name": t.name,
        "route": t.route,
        "conditions": sorted(t.conditions),
        "notes": t.notes,
        "fps": t.fps,
        "levels": t.levels,
        "places": [{"index": p, "level": l, "path": path} for p, l, path in _rebase(t, base)],
    }


def _need(d, key, kind, where):
    if not isinstance(d, dict) or key not in d:
        raise BadManifestError(f"{where}: missing field {key!r}")
    v = d[key]
    if kind is float:
        ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    elif kind is int:
        ok = isinstance(v, int) and not isinstance(v, bool)
    else:
        ok = isinstance(v, kind)
    if not ok:
        raise BadManifestError(f"{where}: field {key!r} has wrong type")
    return v


def traverse_from_dict(d: dict, root="") -> Traverse:
    where = f"traverse {d.get('name', '?')}" if isinstance(d, dict) else "traverse"
    name = _need(d, "name", str, where)
    places = _need(d, "places", list, where)
    images = []
    for entry in places:
        images.append((
            _need(entry, "index", int, where),
            _need(entry, "level", int, where),
            _need(entry, "path", str, where),
        ))
    t = Traverse(
        name=name,
        route=d.get("route", "custom"),
        conditions=frozenset(_need(d, "conditions", list, where)),
        fps=float(_need(d, "fps", float, where)),
        images=tuple(images),
        notes=d.get("notes", ""),
        root=str(root),
    )
    declared = d.get("levels")
    if declared is not None and sorted(declared) != t.levels:
        raise BadManifestError(f"{where}: declared levels {declared} do not match places")
    return t


def gt_to_dict(gt: GroundTruth) -> dict:
    return {"tolerance": gt.tolerance, "matches": [list(m) for m in gt.matches]}


def gt_from_value(v, root="") -> GroundTruth:
    if isinstance(v, str):
        p = Path(v)
        if not p.is_absolute() and root:
            p = Path(root) / p
        if not p.is_file():
            raise MissingImageError(f"correspondence file {p} not found")
        return read_correspondence(p)
    matches = _need(v, "matches", list, "ground_truth")
    try:
        return GroundTruth(tuple(tuple(int(r) for r in m) for m in matches),
                           int(v.get("tolerance", 0)))
    except (TypeError, ValueError):
        raise BadManifestError("ground_truth: malformed matches") from None


def pair_to_dict(pair: DatasetPair, base=None) -> dict:
    return {
        "name": pair.name,
        "query": {"level": pair.query_level, "traverse": traverse_to_dict(pair.query, base)},
        "reference": {"level": pair.reference_level, "traverse": traverse_to_dict(pair.reference, base)},
        "conditions": sorted(pair.conditions),
        "ground_truth": gt_to_dict(pair.ground_truth),
    }


def _side(d, key, root):
    side = _need(d, key, dict, "pair")
    level = _need(side, "level", int, f"pair.{key}")
    t = side.get("traverse")
    if isinstance(t, str):
        p = Path(t)
        if not p.is_absolute() and root:
            p = Path(root) / p
        t = load_manifest(p, check_files=False)
    elif isinstance(t, dict):
        t = traverse_from_dict(t, root)
    else:
        raise BadManifestError(f"pair.{key}: traverse must be an object or a manifest path")
    return t, level


def pair_from_dict(d: dict, root="") -> DatasetPair:
    q, ql = _side(d, "query", root)
    r, rl = _side(d, "reference", root)
    if "ground_truth" not in d:
        raise BadManifestError("pair: missing field 'ground_truth'")
    gt = gt_from_value(d["ground_truth"], root)
    try:
        return build_pair(q, ql, r, gt, reference_level=rl, name=d.get("name", ""))
    except (LevelUnavailableError, BadGroundTruthError) as exc:
        raise BadManifestError(f"pair: {exc}") from exc


def dumps(obj, base=None) -> str:
    """JSON text for a traverse, pair or mix; ``base`` is the directory it will live in."""
    if isinstance(obj, Traverse):
        d = traverse_to_dict(obj, base)
    elif isinstance(obj, DatasetPair):
        d = pair_to_dict(obj, base)
    elif isinstance(obj, MixSequence):
        d = mix_to_dict(obj, base)
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


def save_manifest(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj, base=path.parent), encoding="utf-8")


def loads(text: str, root="", check_files=True):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BadManifestError(f"not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise BadManifestError("manifest must be a JSON object")
    if "entries" in d:
        obj = mix_from_dict(d, root)
        traverses = [obj.traverse]
    elif "query" in d:
        obj = pair_from_dict(d, root)
        traverses = [obj.query, obj.reference]
    else:
        obj = traverse_from_dict(d, root)
        traverses = [obj]
    if check_files:
        for t in traverses:
            t.check_files()
    return obj


def load_manifest(path, check_files=True):
    """Load a traverse, pair or mix manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise BadManifestError(f"cannot read manifest {path}: {exc}") from exc
    return loads(text, root=str(path.parent), check_files=check_files)


def mix_to_dict(mix: MixSequence, base=None) -> dict:
    return {
        "seed": mix.seed,
        "proportions": {str(l): f for l, f in mix.proportions},
        "traverse": traverse_to_dict(mix.traverse, base),
        "entries": [{"index": p, "level": l} for p, l in mix.entries],
    }


def mix_from_dict(d: dict, root="") -> MixSequence:
    t = traverse_from_dict(_need(d, "traverse", dict, "mix"), root)
    try:
        props = tuple(sorted((int(k), float(v)) for k, v in _need(d, "proportions", dict, "mix").items()))
        entries = tuple((int(e["index"]), int(e["level"])) for e in _need(d, "entries", list, "mix"))
    except (KeyError, TypeError, ValueError):
        raise BadManifestError("mix: malformed proportions or entries") from None
    if sorted(p for p, _ in entries) != list(range(t.n_places)):
        raise BadManifestError("mix: entries must cover every place exactly once")
    for _, level in entries:
        if not t.has_level(level):
            raise BadManifestError(f"mix: traverse has no images at L={level}")
    return MixSequence(t, entries, _need(d, "seed", int, "mix"), props)
