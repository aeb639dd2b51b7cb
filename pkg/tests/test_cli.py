import csv
import json
import shlex

import numpy as np
import pytest

from blurbench.cli import main
from blurbench.dataset import load_manifest
from blurbench.descriptors import DescriptorSet, save_descriptor_set
from blurbench.synthetic import panning_sequence

from conftest import identity_deblur_cmd, write_frames


def run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


@pytest.fixture
def small_frames(tmp_path):
    seq = panning_sequence(n_frames=60, width=128, height=32, shift=3, seed=4)
    return write_frames(tmp_path / "src", [f.pixels for f in seq.frames])


@pytest.fixture
def small_traverse(tmp_path, small_frames):
    out = tmp_path / "bench"
    assert run("synth", small_frames, "--out", out, "--levels", "1,10,20", "--stride", 10, "--name", "SM") == 0
    return out / "SM" / "manifest.json"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSynth:
    def test_defaults(self, tmp_path):
        src = write_frames(tmp_path / "f", [np.full((4, 4), k % 256, np.uint8) for k in range(480)])
        assert run("synth", src, "--out", tmp_path / "o", "--name", "T") == 0
        dirs = sorted(p.name for p in (tmp_path / "o" / "T").iterdir() if p.is_dir())
        assert dirs == ["001", "010", "020", "030", "040", "060", "080", "120", "240"]
        assert all(len(list((tmp_path / "o" / "T" / d).iterdir())) == 2 for d in dirs)
        t = load_manifest(tmp_path / "o" / "T" / "manifest.json")
        assert t.n_places == 2 and t.levels == [1, 10, 20, 30, 40, 60, 80, 120, 240]
        assert (tmp_path / "o" / "T" / "manifest.json.run.json").is_file()

    def test_single_level(self, tmp_path, small_frames):
        assert run("synth", small_frames, "--out", tmp_path / "o", "--levels", "1", "--name", "T") == 0
        assert [p.name for p in (tmp_path / "o" / "T").iterdir() if p.is_dir()] == ["001"]

    def test_missing_frames(self, tmp_path, capsys):
        assert run("synth", tmp_path / "nope", "--out", tmp_path / "o") == 1
        assert "nope" in capsys.readouterr().err

    def test_json_errors(self, tmp_path, capsys):
        assert run("--json", "synth", tmp_path / "nope", "--out", tmp_path / "o") == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "NoFramesError" and err["exit"] == 1


def make_pair(tmp_path, manifest, name="pair.json", level=1):
    out = tmp_path / name
    assert run("dataset", "pair", "--query", manifest, "--reference", manifest,
               "--query-level", level, "--out", out) == 0
    return out


class TestEvaluate:
    def test_self_pair_sad(self, tmp_path, small_traverse):
        pair = make_pair(tmp_path, small_traverse)
        out = tmp_path / "res.csv"
        assert run("evaluate", "--pair", pair, "--levels", "1,10,20", "--out", out) == 0
        rows = read_csv(out)
        assert rows[0] == ["pair", "method", "deblur", "L001", "L010", "L020", "avg", "std"]
        assert rows[1][:4] == ["SM-SM", "sad", "none", "1.0000"]

    def test_default_schedule_two_pairs(self, tmp_path, small_traverse):
        p1 = make_pair(tmp_path, small_traverse, "a.json")
        p2 = make_pair(tmp_path, small_traverse, "b.json", level=10)
        out = tmp_path / "res.csv"
        assert run("evaluate", "--pair", p1, "--pair", p2, "--out", out) == 0
        rows = read_csv(out)
        assert len(rows) == 3 and len(rows[0]) == 14
        # levels the traverse lacks are blank
        assert rows[1][6] == ""

    def test_unknown_metric(self, tmp_path, small_traverse):
        pair = make_pair(tmp_path, small_traverse)
        assert run("evaluate", "--pair", pair, "--metric", "l2", "--out", tmp_path / "r.csv") == 2

    def test_descriptor_files(self, tmp_path, small_traverse):
        pair = make_pair(tmp_path, small_traverse)
        root = tmp_path / "desc"
        assert run("describe", "--traverse", small_traverse, "--out", root) == 0
        assert (root / "sad" / "none" / "SM_L010.bbd").is_file()
        out = tmp_path / "r.csv"
        assert run("evaluate", "--pair", pair, "--descriptors", root, "--levels", "1,10,20", "--out", out) == 0
        native = tmp_path / "n.csv"
        assert run("evaluate", "--pair", pair, "--levels", "1,10,20", "--out", native) == 0
        assert read_csv(out) == read_csv(native)

    def test_external_method_missing_cell(self, tmp_path, small_traverse, capsys):
        pair = make_pair(tmp_path, small_traverse)
        root = tmp_path / "desc"
        rng = np.random.default_rng(0)
        ids = tuple((k, 1, "") for k in range(5))
        save_descriptor_set(DescriptorSet(rng.random((5, 16)), ids, "ext"), root / "ext" / "none" / "SM_L001.bbd")
        code = run("evaluate", "--pair", pair, "--descriptors", root, "--levels", "1,10", "--out", tmp_path / "r.csv")
        assert code == 1
        assert "ext/none/SM/L10" in capsys.readouterr().err

    def test_pr_json(self, tmp_path, small_traverse):
        pair = make_pair(tmp_path, small_traverse)
        assert run("evaluate", "--pair", pair, "--levels", "1", "--out", tmp_path / "r.csv",
                   "--pr-json", tmp_path / "pr.json") == 0
        cells = json.loads((tmp_path / "pr.json").read_text())
        assert cells[0]["level"] == 1 and cells[0]["recall"][-1] == 1.0


class TestDetectCalibrate:
    def test_constant_image(self, tmp_path, capsys):
        write_frames(tmp_path / "imgs", [np.full((8, 8), 9, np.uint8)])
        assert run("detect", tmp_path / "imgs") == 0
        rows = list(csv.reader(capsys.readouterr().out.splitlines()))
        assert rows[0] == ["image", "variance", "decision"]
        assert float(rows[1][1]) == 0.0

    def test_calibrate_and_detect(self, tmp_path, small_traverse):
        th = tmp_path / "th.json"
        assert run("calibrate", "--traverse", small_traverse, "--blurred-level", 20, "--out", th) == 0
        d = json.loads(th.read_text())
        assert d["errors"] == 0 and d["n_sharp"] == 5
        out = tmp_path / "d.csv"
        assert run("detect", small_traverse.parent / "001", "--threshold-file", th, "--out", out) == 0
        assert {r[2] for r in read_csv(out)[1:]} == {"sharp"}

    def test_calibrate_dirs(self, tmp_path, small_traverse):
        base = small_traverse.parent
        th = tmp_path / "th.json"
        assert run("calibrate", "--sharp", base / "001", "--blurred", base / "020", "--out", th) == 0


class TestAdaptive:
    @pytest.fixture
    def mix(self, tmp_path, small_traverse):
        out = tmp_path / "mix.json"
        assert run("--seed", 9, "dataset", "mix", "--traverse", small_traverse,
                   "--proportions", "1:0.6,20:0.4", "--out", out) == 0
        return out

    def test_no_deblur(self, tmp_path, mix, small_traverse):
        out = tmp_path / "s.json"
        assert run("adaptive", "--mix", mix, "--reference", small_traverse, "--mode", "no-deblur", "--out", out) == 0
        stats = json.loads(out.read_text())
        assert stats["deblur_invocations"] == 0
        assert {"mode", "time_per_query_ms", "total_time_s", "energy_j", "auc"} <= set(stats)

    def test_detect_needs_threshold(self, tmp_path, mix, small_traverse):
        assert run("adaptive", "--mix", mix, "--reference", small_traverse, "--mode", "detect",
                   "--deblur-cmd", "x {in_dir} {out_dir}", "--out", tmp_path / "s.json") == 2

    def test_all_deblur_with_power_log(self, tmp_path, mix, small_traverse):
        (tmp_path / "p.csv").write_text("timestamp_s,watts\n0,100\n99999999999,100\n")
        cmd = shlex.join(identity_deblur_cmd())
        out = tmp_path / "s.json"
        assert run("adaptive", "--mix", mix, "--reference", small_traverse, "--mode", "all-deblur",
                   "--deblur-cmd", cmd, "--power-log", tmp_path / "p.csv", "--out", out) == 0
        stats = json.loads(out.read_text())
        assert stats["deblur_invocations"] == 5 and stats["energy_j"] > 0

    def test_failing_bridge_writes_partial(self, tmp_path, mix, small_traverse):
        out = tmp_path / "s.json"
        cmd = shlex.join(["python3", "-c", "import sys; sys.exit(4)", "{in_dir}", "{out_dir}"])
        assert run("adaptive", "--mix", mix, "--reference", small_traverse, "--mode", "all-deblur",
                   "--deblur-cmd", cmd, "--out", out) == 1
        assert json.loads(out.read_text())["failed_query"] == 0

    def test_report(self, tmp_path, mix, small_traverse):
        s = tmp_path / "s.json"
        run("adaptive", "--mix", mix, "--reference", small_traverse, "--out", s)
        pair = make_pair(tmp_path, small_traverse)
        run("evaluate", "--pair", pair, "--levels", "1,10,20", "--out", tmp_path / "r.csv")
        assert run("report", "--results", tmp_path / "r.csv", "--stats", s, "--out", tmp_path / "rep") == 0
        long = read_csv(tmp_path / "rep" / "auc_by_level.csv")
        assert long[0] == ["pair", "method", "deblur", "level", "auc"] and len(long) == 4
        summary = read_csv(tmp_path / "rep" / "adaptive_summary.csv")
        assert summary[1][1] == "no-deblur"


class TestConfig:
    def test_config_supplies_and_flags_override(self, tmp_path, small_frames):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"levels": "1,10", "stride": 20, "name": "FromCfg", "out": str(tmp_path / "o")}))
        assert run("synth", small_frames, "--config", cfg) == 0
        t = load_manifest(tmp_path / "o" / "FromCfg" / "manifest.json")
        assert t.levels == [1, 10] and t.n_places == 3
        assert run("synth", small_frames, "--config", cfg, "--levels", "1") == 0
        t = load_manifest(tmp_path / "o" / "FromCfg" / "manifest.json")
        assert t.levels == [1]
        record = json.loads((tmp_path / "o" / "FromCfg" / "manifest.json.run.json").read_text())
        assert record["levels"] == "1" and record["stride"] == 20

    def test_missing_required(self, tmp_path):
        assert run("synth") == 2
