"""blurbench command line.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .adaptive import (
    MODES,
    DETECT_DEBLUR,
    NO_DEBLUR,
    DeblurBridge,
    DeblurError,
    PipelineConfig,
    integrate_energy,
    read_power_log,
    run_pipeline,
)
from .blur_detect import (
    calibrate_threshold,
    classify,
    laplacian_variance,
    load_threshold,
    save_threshold,
)
from .blur_synth import BlurSchedule, default_schedule, synthesize_traverse, write_traverse
from .dataset import (
    DatasetPair,
    MixSequence,
    Traverse,
    build_pair,
    build_shuffled_mix,
    identity_ground_truth,
    load_manifest,
    read_correspondence,
    save_manifest,
)
from .descriptors import (
    SadConfig,
    describe_images,
    load_descriptor_set,
    save_descriptor_set,
)
from .errors import BlurBenchError, LevelUnavailableError
from .evaluation import Variant, evaluate_grid, level_column
from .imaging import FRAME_EXTENSIONS, load_frame_sequence, read_image
from .parallel import pmap

log = logging.getLogger("blurbench")


class UsageError(Exception):
    pass


class MissingDescriptorError(BlurBenchError):
    pass


def parse_levels(text):
    try:
        return BlurSchedule(tuple(int(x) for x in str(text).split(",") if x.strip()))
    except (ValueError, BlurBenchError) as exc:
        raise UsageError(f"bad --levels {text!r}: {exc}") from None


def parse_proportions(text):
    out = {}
    try:
        for part in str(text).split(","):
            level, frac = part.split(":")
            out[int(level)] = float(frac)
    except ValueError:
        raise UsageError(f"bad --proportions {text!r}; expected LEVEL:FRACTION,...") from None
    return out


def parse_size(text):
    try:
        w, h = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise UsageError(f"bad size {text!r}; expected WxH") from None
    return w, h


def need(args, *names):
    for name in names:
        if getattr(args, name, None) in (None, "", []):
            raise UsageError(f"--{name.replace('_', '-')} is required")


def write_run_record(args, target) -> None:
    """Write the resolved flags next to ``target`` so the run can be replayed."""
    record = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    record = json.loads(json.dumps(record, default=str))
    target = Path(target)
    path = target / "run_config.json" if target.is_dir() else target.with_name(target.name + ".run.json")
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit(text, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --- subcommands -------------------------------------------------------------

def cmd_synth(args):
    need(args, "frames", "out")
    schedule = parse_levels(args.levels) if args.levels else default_schedule()
    stride = args.stride or schedule.max_level
    seq = load_frame_sequence(args.frames, args.fps)
    name = args.name or seq.source_id
    blurred = synthesize_traverse(seq, schedule, stride=stride)
    out_root = Path(args.out)
    written = write_traverse(blurred, out_root, name)
    conditions = frozenset(c for c in (args.conditions or "").split(",") if c)
    t = Traverse(
        name=name, route=args.route, conditions=conditions, fps=seq.fps,
        images=tuple((p, l, rel) for (p, l), rel in written.items()),
        notes=args.notes or "",
    )
    manifest = out_root / name / "manifest.json"
    save_manifest(t, manifest)
    write_run_record(args, manifest)
    log.info("wrote %d places x %d levels to %s", t.n_places, len(schedule), manifest.parent)
    return 0


def cmd_dataset_pair(args):
    need(args, "query", "reference", "out")
    q = load_manifest(args.query)
    r = load_manifest(args.reference)
    if args.correspondence:
        gt = read_correspondence(args.correspondence, n_query=q.n_places)
    else:
        if q.n_places != r.n_places:
            raise UsageError("identity ground truth needs equal place counts; pass --correspondence")
        gt = identity_ground_truth(q.n_places, args.tolerance)
    pair = build_pair(q, args.query_level, r, gt, reference_level=args.reference_level, name=args.name or "")
    save_manifest(pair, args.out)
    write_run_record(args, Path(args.out))
    return 0


def cmd_dataset_mix(args):
    need(args, "traverse", "proportions", "out")
    t = load_manifest(args.traverse)
    mix = build_shuffled_mix(t, parse_proportions(args.proportions), args.seed)
    save_manifest(mix, args.out)
    write_run_record(args, Path(args.out))
    counts = ", ".join(f"L{l}: {c}" for l, c in mix.counts().items())
    log.info("mix of %d places (%s)", len(mix), counts)
    return 0


def _sad_config(args):
    w, h = parse_size(args.sad_size)
    return SadConfig(w, h, args.patch)


def _describe_level(t: Traverse, level, cfg, jobs):
    paths = t.paths(level)
    images = pmap(read_image, paths, jobs)
    return describe_images(images, level, [str(p) for p in paths], cfg, jobs)


def descriptor_file(root, method, deblur, traverse, level) -> Path:
    return Path(root) / method / deblur / f"{traverse}_{level_column(level)}.bbd"


def cmd_describe(args):
    need(args, "traverse", "out")
    t = load_manifest(args.traverse)
    cfg = _sad_config(args)
    levels = parse_levels(args.levels).levels if args.levels else t.levels
    for level in levels:
        dset = _describe_level(t, level, cfg, args.jobs)
        save_descriptor_set(dset, descriptor_file(args.out, "sad", args.deblur, t.name, level))
    write_run_record(args, Path(args.out))
    return 0


def _native_variant(cfg, metric, jobs):
    cache = {}

    def get(t, level):
        key = (t.name, t.root, level)
        if key not in cache:
            cache[key] = _describe_level(t, level, cfg, jobs)
        return cache[key]

    def fetch(pair: DatasetPair, level):
        return get(pair.query, level), get(pair.reference, pair.reference_level)

    return Variant("sad", "none", fetch, metric)


def _file_variant(root, method, deblur, metric):
    def load(traverse, level, dset_deblur):
        path = descriptor_file(root, method, dset_deblur, traverse.name, level)
        if not path.is_file():
            raise MissingDescriptorError(
                f"missing descriptors for cell {method}/{dset_deblur}/{traverse.name}/L{level}: {path}"
            )
        return load_descriptor_set(path, method).in_place_order()

    def fetch(pair: DatasetPair, level):
        if not pair.query.has_level(level):
            raise LevelUnavailableError(f"{pair.query.name} has no images at L={level}")
        # references are always the undeblurred sharp images
        return load(pair.query, level, deblur), load(pair.reference, pair.reference_level, "none")

    return Variant(method, deblur, fetch, metric)


def resolve_metric(metric, method):
    if metric == "auto":
        return "neg_mad" if method == "sad" else "cosine"
    return metric


def cmd_evaluate(args):
    need(args, "pair", "out")
    pairs = [load_manifest(p) for p in args.pair]
    for p, src in zip(pairs, args.pair):
        if not isinstance(p, DatasetPair):
            raise UsageError(f"{src} is not a pair manifest")
    schedule = parse_levels(args.levels) if args.levels else default_schedule()
    variants = []
    if args.descriptors:
        root = Path(args.descriptors)
        if not root.is_dir():
            raise MissingDescriptorError(f"descriptor root {root} does not exist")
        for mdir in sorted(d for d in root.iterdir() if d.is_dir()):
            if args.method and mdir.name not in args.method:
                continue
            for ddir in sorted(d for d in mdir.iterdir() if d.is_dir()):
                metric = resolve_metric(args.metric, mdir.name)
                variants.append(_file_variant(root, mdir.name, ddir.name, metric))
    else:
        methods = args.method or ["sad"]
        if methods != ["sad"]:
            raise UsageError("only 'sad' can be computed natively; pass --descriptors for other methods")
        variants.append(_native_variant(_sad_config(args), resolve_metric(args.metric, "sad"), args.jobs))
    grid = evaluate_grid(pairs, schedule.levels, variants, fatal=(MissingDescriptorError,))
    _emit(grid.to_csv(), args.out)
    if args.pr_json:
        _emit(grid.curves_json(), args.pr_json)
    write_run_record(args, Path(args.out))
    return 0


def _image_files(items):
    out = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            out.extend(sorted(f for f in p.iterdir() if f.suffix.lower() in FRAME_EXTENSIONS))
        else:
            out.append(p)
    return out


def cmd_detect(args):
    need(args, "images")
    th = load_threshold(args.threshold_file) if args.threshold_file else None
    files = _image_files(args.images)
    scores = pmap(lambda f: laplacian_variance(read_image(f), str(f)), files, args.jobs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image", "variance", "decision"])
    for s in scores:
        w.writerow([s.image_id, repr(s.variance), classify(s, th) if th else ""])
    _emit(buf.getvalue(), args.out)
    if args.out:
        write_run_record(args, Path(args.out))
    return 0


def _variances(files, jobs):
    return pmap(lambda f: laplacian_variance(read_image(f)).variance, files, jobs)


def cmd_calibrate(args):
    need(args, "out")
    if args.traverse:
        t = load_manifest(args.traverse)
        sharp_files, blurred_files = t.paths(args.sharp_level), t.paths(args.blurred_level)
    else:
        need(args, "sharp", "blurred")
        sharp_files, blurred_files = _image_files(args.sharp), _image_files(args.blurred)
    th = calibrate_threshold(_variances(sharp_files, args.jobs), _variances(blurred_files, args.jobs))
    if th.warning:
        log.warning("calibration could not separate the samples (%d errors)", th.errors)
    save_threshold(th, args.out)
    write_run_record(args, Path(args.out))
    return 0


def cmd_adaptive(args):
    need(args, "mix", "out")
    if args.mode == DETECT_DEBLUR and not args.threshold_file:
        raise UsageError("--mode detect requires --threshold-file")
    if args.mode != NO_DEBLUR and not args.deblur_cmd:
        raise UsageError(f"--mode {args.mode} requires --deblur-cmd")
    mix = load_manifest(args.mix)
    if not isinstance(mix, MixSequence):
        raise UsageError(f"{args.mix} is not a mix manifest")
    cfg_sad = _sad_config(args)
    if args.reference_descriptors:
        reference = load_descriptor_set(args.reference_descriptors).in_place_order()
        method = reference.method
    elif args.reference:
        ref_t = load_manifest(args.reference)
        reference = _describe_level(ref_t, 1, cfg_sad, args.jobs)
        method = "sad"
    else:
        raise UsageError("pass --reference or --reference-descriptors")
    if args.correspondence:
        gt = read_correspondence(args.correspondence, n_query=len(mix))
    else:
        if len(reference) != len(mix):
            raise UsageError("identity ground truth needs equal place counts; pass --correspondence")
        gt = identity_ground_truth(len(mix), args.tolerance)
    bridge = None
    if args.deblur_cmd:
        bridge = DeblurBridge(args.deblur_cmd, timeout=args.timeout, batch_size=args.batch_size)
    cfg = PipelineConfig(
        mode=args.mode,
        threshold=load_threshold(args.threshold_file) if args.threshold_file else None,
        bridge=bridge,
        metric=resolve_metric(args.metric, method),
        sad=cfg_sad,
    )
    try:
        _, stats = run_pipeline(mix, reference, gt, cfg)
    except DeblurError as exc:
        if exc.partial_stats is not None:
            partial = exc.partial_stats.to_dict()
            partial["failed_query"] = exc.query_index
            partial["error"] = str(exc)
            _emit(json.dumps(partial, indent=2, sort_keys=True) + "\n", args.out)
        raise
    if args.power_log:
        stats.energy_j = integrate_energy(read_power_log(args.power_log), stats.start_s, stats.end_s)
        if stats.energy_j is None:
            log.warning("power log does not cover the run; energy unavailable")
    _emit(stats.to_json(), args.out)
    write_run_record(args, Path(args.out))
    return 0


def cmd_report(args):
    need(args, "out")
    if not args.results and not args.stats:
        raise UsageError("pass --results and/or --stats")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.results:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pair", "method", "deblur", "level", "auc"])
        for path in args.results:
            with open(path, newline="", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    for col, val in row.items():
                        if col.startswith("L") and col[1:].isdigit() and val:
                            w.writerow([row["pair"], row["method"], row["deblur"], int(col[1:]), val])
        (out / "auc_by_level.csv").write_text(buf.getvalue(), encoding="utf-8")
    if args.stats:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["source", "mode", "time_per_query_ms", "total_time_s", "energy_kj", "auc", "deblur_invocations"])
        for path in args.stats:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
            energy = "" if d.get("energy_j") is None else f"{d['energy_j'] / 1000:.4f}"
            w.writerow([Path(path).name, d["mode"], f"{d['time_per_query_ms']:.2f}", f"{d['total_time_s']:.2f}",
                        energy, f"{d['auc']:.4f}", d["deblur_invocations"]])
        (out / "adaptive_summary.csv").write_text(buf.getvalue(), encoding="utf-8")
    write_run_record(args, out)
    return 0


# --- parser ------------------------------------------------------------------

def _global_flags(p, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=default(0), help="seed for the shuffle generator")
    p.add_argument("--jobs", type=int, default=default(1), help="worker threads")
    p.add_argument("--json", action="store_true", default=default(False), help="errors as one-line JSON on stderr")
    p.add_argument("--config", default=default(None), help="JSON file of flag defaults")
    p.add_argument("-v", "--verbose", action="store_true", default=default(False))


def _sad_flags(p):
    p.add_argument("--sad-size", default="64x32", help="SAD downsample size WxH")
    p.add_argument("--patch", type=int, default=8, help="SAD normalisation patch size")


def build_parser():
    parser = argparse.ArgumentParser(prog="blurbench", description="Motion-blur VPR benchmark tools")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="blur a frame directory at every level")
    p.add_argument("frames", nargs="?", help="directory of numbered frames")
    p.add_argument("--fps", type=float, default=240.0)
    p.add_argument("--out", help="output root")
    p.add_argument("--levels", help="comma-separated blur levels (default 1,10,...,240)")
    p.add_argument("--stride", type=int, help="frames between places (default: largest level)")
    p.add_argument("--name", help="traverse name (default: frame directory name)")
    p.add_argument("--route", default="custom")
    p.add_argument("--conditions", help="comma-separated tags from MB,W,I,VP")
    p.add_argument("--notes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dataset", parents=[common], help="build pair or mix manifests")
    dsub = p.add_subparsers(dest="action", required=True)
    q = dsub.add_parser("pair", parents=[common])
    q.add_argument("--query")
    q.add_argument("--reference")
    q.add_argument("--query-level", type=int, default=1)
    q.add_argument("--reference-level", type=int, default=1)
    q.add_argument("--tolerance", type=int, default=1, help="identity ground-truth window in places")
    q.add_argument("--correspondence", help="query<TAB>ref_low<TAB>ref_high file")
    q.add_argument("--name")
    q.add_argument("--out")
    q.set_defaults(func=cmd_dataset_pair)
    q = dsub.add_parser("mix", parents=[common])
    q.add_argument("--traverse")
    q.add_argument("--proportions", help="LEVEL:FRACTION,... e.g. 1:0.5,240:0.5")
    q.add_argument("--out")
    q.set_defaults(func=cmd_dataset_mix)

    p = sub.add_parser("describe", parents=[common], help="compute SAD descriptor files")
    p.add_argument("--traverse")
    p.add_argument("--levels")
    p.add_argument("--deblur", default="none", help="label for the deblur variant directory")
    p.add_argument("--out", help="descriptor root")
    _sad_flags(p)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("evaluate", parents=[common], help="AUC grid over pairs and levels")
    p.add_argument("--pair", action="append", help="pair manifest (repeatable)")
    p.add_argument("--descriptors", help="root of <method>/<deblur>/<traverse>_L<LLL>.bbd files")
    p.add_argument("--method", action="append", help="restrict to these methods")
    p.add_argument("--metric", choices=("auto", "neg_mad", "cosine"), default="auto")
    p.add_argument("--levels")
    p.add_argument("--out", help="results CSV")
    p.add_argument("--pr-json", help="write PR points per cell")
    _sad_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("detect", parents=[common], help="Laplacian variance per image")
    p.add_argument("images", nargs="*", help="image files or directories")
    p.add_argument("--threshold-file")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("calibrate", parents=[common], help="fit a sharp/blurred cutoff")
    p.add_argument("--sharp", nargs="*", help="sharp image files or directories")
    p.add_argument("--blurred", nargs="*", help="blurred image files or directories")
    p.add_argument("--traverse", help="traverse manifest to sample from instead")
    p.add_argument("--sharp-level", type=int, default=1)
    p.add_argument("--blurred-level", type=int, default=240)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("adaptive", parents=[common], help="run a deblurring strategy over a mix")
    p.add_argument("--mix")
    p.add_argument("--mode", choices=MODES, default=NO_DEBLUR)
    p.add_argument("--reference", help="reference traverse manifest (SAD at L=1)")
    p.add_argument("--reference-descriptors", help="reference descriptor file")
    p.add_argument("--tolerance", type=int, default=1)
    p.add_argument("--correspondence")
    p.add_argument("--threshold-file")
    p.add_argument("--deblur-cmd", help="argv template with {in_dir} and {out_dir}")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--timeout", type=float, default=600.0)
    p.add_argument("--power-log", help="timestamp_s,watts CSV covering the run")
    p.add_argument("--metric", choices=("auto", "neg_mad", "cosine"), default="auto")
    p.add_argument("--out", help="stats JSON")
    _sad_flags(p)
    p.set_defaults(func=cmd_adaptive)

    p = sub.add_parser("report", parents=[common], help="plot-ready tables from results and stats")
    p.add_argument("--results", nargs="*", help="evaluate CSVs")
    p.add_argument("--stats", nargs="*", help="adaptive stats JSONs")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def _subparsers(parser, argv_ns):
    """The parser chain selected by the parsed subcommand(s)."""
    chain = [parser]
    cur = parser
    for dest in ("command", "action"):
        actions = [a for a in cur._actions if isinstance(a, argparse._SubParsersAction)]
        name = getattr(argv_ns, dest, None)
        if not actions or name is None:
            break
        cur = actions[0].choices[name]
        chain.append(cur)
    return chain


def parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read --config {args.config}: {exc}")
        if not isinstance(cfg, dict):
            parser.error("--config must hold a JSON object")
        cfg = {k.lstrip("-").replace("-", "_"): v for k, v in cfg.items()}
        # config values become defaults, so explicit flags still win
        for p in _subparsers(parser, args):
            p.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return parser, args


def _fail(args, kind, exc, code):
    if getattr(args, "json", False):
        sys.stderr.write(json.dumps({"error": kind, "message": str(exc), "exit": code}) + "\n")
    else:
        sys.stderr.write(f"blurbench: error: {exc}\n")
    return code


def main(argv=None):
    parser, args = parse(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        if args.json:
            return _fail(args, "UsageError", exc, 2)
        parser.print_usage(sys.stderr)
        return _fail(args, "UsageError", exc, 2)
    except BlurBenchError as exc:
        return _fail(args, type(exc).__name__, exc, 1)
    except OSError as exc:
        return _fail(args, "OSError", exc, 1)


if __name__ == "__main__":
    sys.exit(main())
