import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dtstereo.cli import main, parse_args
from dtstereo.io import read_grid, read_keyvalue, write_grid
from dtstereo.fusion import load_manifest


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(tmp, *argv):
    return main(["--out-dir", str(tmp), *map(str, argv)])


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert run(out, "synth") == 0
    return out


# --- synth ------------------------------------------------------------------------


def test_synth_default_has_four_frames(synth_dir):
    frames, doc = load_manifest(synth_dir / "manifest.json")
    assert len(frames) == 4 and doc["seed"] == 42
    assert "gt_depth" in frames[0].extras


def test_synth_frames_flag(tmp_path):
    assert run(tmp_path, "synth", "--frames", 2) == 0
    assert len(load_manifest(tmp_path / "manifest.json")[0]) == 2
    assert run(tmp_path, "synth", "--frames", 1) == 3


def test_synth_is_byte_identical(tmp_path, synth_dir):
    assert run(tmp_path, "synth") == 0
    for f in synth_dir.iterdir():
        assert f.read_bytes() == (tmp_path / f.name).read_bytes(), f.name


# --- stereo ----------------------------------------------------------------------------


def test_stereo_sweep(tmp_path, synth_dir):
    assert run(tmp_path, "stereo", "--manifest", synth_dir / "manifest.json", "--iterations", 3, "--dump") == 0
    r = rows(tmp_path / "stereo_metrics.csv")
    assert [(x["setting"], x["iterations"]) for x in r] == [("mono", "0")] + [("stereo", str(i)) for i in range(4)]
    # zero iterations is the mono baseline
    assert r[1]["abs_rel"] == r[0]["abs_rel"] and r[1]["rmse"] == r[0]["rmse"]
    assert float(r[4]["abs_rel"]) < float(r[1]["abs_rel"])
    assert read_grid(tmp_path / "depth_it3.bin").shape == (64, 176, 1)
    assert (tmp_path / "mu_it3_split1.bin").exists()


def test_stereo_destroyed_features_fall_back_to_mono(tmp_path, synth_dir):
    assert run(tmp_path, "stereo", "--manifest", synth_dir / "manifest.json", "--noise", 1e9) == 0
    r = rows(tmp_path / "stereo_metrics.csv")
    mono, last = r[0], r[-1]
    for k in ("silog", "abs_rel", "sq_rel", "log10", "rmse"):
        assert abs(float(last[k]) - float(mono[k])) <= 0.05 * float(mono[k])


def test_stereo_missing_manifest(tmp_path):
    assert run(tmp_path, "stereo", "--manifest", tmp_path / "nope.json") == 3


def test_stereo_bad_config_value_is_usage_error(tmp_path, synth_dir):
    assert run(tmp_path, "stereo", "--manifest", synth_dir / "manifest.json", "--candidates-per-pixel", 0) == 2


# --- fuse ---------------------------------------------------------------------------------


def test_fuse(tmp_path, synth_dir):
    argv = ["--deterministic", "--out-dir", tmp_path, "fuse", "--manifest", synth_dir / "manifest.json",
            "--nx", 16, "--ny", 16, "--num-bins", 56]
    assert main([str(a) for a in argv]) == 0
    summary = json.loads((tmp_path / "fuse_summary.json").read_text())
    assert summary["groups"] == [[3, [2]], [1, [0]]]
    assert summary["channels"] == 96
    first = (tmp_path / "bev.bin").read_bytes()
    assert main([str(a) for a in argv]) == 0
    assert (tmp_path / "bev.bin").read_bytes() == first


def test_fuse_plan_error_is_data_error(tmp_path, synth_dir):
    assert run(tmp_path, "fuse", "--manifest", synth_dir / "manifest.json", "--interval", 3) == 3


# --- nms ---------------------------------------------------------------------------------------


def test_nms_fig_left_overlap(tmp_path):
    assert run(tmp_path, "nms", "--layout", "fig-left-overlap") == 0
    r = rows(tmp_path / "nms_kept.csv")
    assert [x["kept_size_aware"] for x in r] == ["1", "0"]


def test_nms_flags_circle_disagreement(tmp_path):
    assert run(tmp_path, "nms", "--layout", "fig-right-adjacent-small") == 0
    r = rows(tmp_path / "nms_kept.csv")
    assert [x["kept_size_aware"] for x in r] == ["1", "1"]
    assert [x["kept_circle"] for x in r] == ["1", "0"]
    assert [x["circle_disagrees"] for x in r] == ["0", "1"]


def test_nms_box_file_round_trip(tmp_path):
    assert run(tmp_path / "a", "nms", "--layout", "random", "--n", 50) == 0
    assert run(tmp_path / "b", "nms", "--boxes", tmp_path / "a" / "boxes.csv") == 0
    assert (tmp_path / "a" / "nms_kept.csv").read_bytes() == (tmp_path / "b" / "nms_kept.csv").read_bytes()


def test_nms_bad_inputs(tmp_path):
    assert run(tmp_path, "nms", "--boxes", tmp_path / "missing.csv") == 3
    (tmp_path / "bad.csv").write_text("cx,cy\n1,2\n")
    assert run(tmp_path, "nms", "--boxes", tmp_path / "bad.csv") == 3
    assert run(tmp_path, "nms", "--layout", "grid") == 2
    assert run(tmp_path, "nms", "--w", -1) == 3


def test_nms_bench_writes_timing(tmp_path):
    assert run(tmp_path, "nms", "--bench", "--repeats", 3) == 0
    assert len(rows(tmp_path / "nms_timing.csv")) >= 3


# --- pool-bench -----------------------------------------------------------------------------


def test_pool_bench(tmp_path):
    assert main(["--deterministic", "--out-dir", str(tmp_path), "pool-bench", "--sizes", "2000x8x4", "500x4x4",
                 "--repeats", "3", "--warmup", "1", "--nx", "16", "--ny", "16"]) == 0
    timing = rows(tmp_path / "pool_timing.csv")
    assert [(r["variant"], r["P"]) for r in timing] == [("v1", "2000"), ("v2", "2000"), ("v1", "500"), ("v2", "500")]
    assert all(float(r["max_rel_diff"]) == 0.0 for r in rows(tmp_path / "pool_check.csv"))


def test_pool_bench_bad_size(tmp_path):
    assert run(tmp_path, "pool-bench", "--sizes", "10x2") == 3


# --- eval ----------------------------------------------------------------------------------


def test_eval_perfect_prediction(tmp_path):
    gt = np.random.default_rng(0).uniform(1, 50, (8, 9))
    write_grid(tmp_path / "gt.bin", gt)
    assert run(tmp_path, "eval", "--pred", tmp_path / "gt.bin", "--gt", tmp_path / "gt.bin") == 0
    doc = read_keyvalue(tmp_path / "eval_depth.yaml")
    assert all(doc[k] == 0.0 for k in ("silog", "abs_rel", "sq_rel", "log10", "rmse"))
    assert doc["n_pixels"] == 72


def test_eval_recall(tmp_path):
    (tmp_path / "p.csv").write_text("cx,cy,dx,dy,theta,score,class_id\n1.5,0,1,1,0,1,0\n")
    (tmp_path / "g.csv").write_text("cx,cy,dx,dy,theta,score,class_id\n0,0,1,1,0,1,0\n")
    assert run(tmp_path, "eval", "--pred-boxes", tmp_path / "p.csv", "--gt-boxes", tmp_path / "g.csv") == 0
    doc = read_keyvalue(tmp_path / "eval_recall.yaml")
    assert [doc[f"recall@{t}"] for t in ("0.5", "1", "2", "4")] == [0.0, 0.0, 1.0, 1.0]


def test_eval_errors(tmp_path):
    assert run(tmp_path, "eval") == 3
    assert run(tmp_path, "eval", "--pred", tmp_path / "x.bin", "--gt", tmp_path / "y.bin") == 3
    (tmp_path / "junk.bin").write_bytes(b"junkjunkjunkjunk")
    assert run(tmp_path, "eval", "--pred", tmp_path / "junk.bin", "--gt", tmp_path / "junk.bin") == 3


# --- parsing, config, exit codes ---------------------------------------------------------------


def test_usage_errors():
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["synth", "--frames", "two"]) == 2
    assert main(["--threads", "0", "synth"]) == 2


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0


def test_config_file_sets_defaults_and_flags_win(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 7\nstereo:\n  candidates_per_pixel: 6\n  iterations: 1\n")
    args = parse_args(["--config", str(cfg), "stereo"])
    assert (args.seed, args.candidates_per_pixel, args.iterations) == (7, 6, 1)
    args = parse_args(["--config", str(cfg), "--seed", "9", "stereo", "--iterations", "2"])
    assert (args.seed, args.candidates_per_pixel, args.iterations) == (9, 6, 2)


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense_key: 1\n")
    assert main(["--config", str(bad), "synth"]) == 2
    bad.write_text("[1, 2\n")
    assert main(["--config", str(bad), "synth"]) == 3
    assert main(["--config", str(tmp_path / "none.yaml"), "synth"]) == 3


def test_error_line_is_json(tmp_path, capsys):
    assert run(tmp_path, "stereo", "--manifest", tmp_path / "nope.json") == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["code"] == 3 and err["error"] == "data"


def test_console_script_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dtstereo.cli", "--out-dir", str(tmp_path), "eval"],
                          capture_output=True, text=True)
    assert proc.returncode == 3
