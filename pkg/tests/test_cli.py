import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from pairsel.matio import read_square, write_square


def run_cli(*args, **kwargs):
    return subprocess.run(
        [sys.executable, "-m", "pairsel", *[str(a) for a in args]],
        capture_output=True,
        text=True,
        **kwargs,
    )


def _quick_pipeline(out, seed=3, n=16, epochs=8):
    return run_cli(
        "pipeline", "--n", n, "--dims", "3,3,2,2", "--epochs", epochs,
        "--scl-epochs", 4, "--interval", 4, "--schedule", "linear",
        "--seed", seed, "--out", out,
    )


def test_help_mentions_exit_codes():
    proc = run_cli("--help")
    assert proc.returncode == 0
    for code in ("0  success", "1  usage", "2  malformed", "3  numeric", "4  training divergence"):
        assert code in proc.stdout


def test_no_command_exits_one():
    proc = run_cli()
    assert proc.returncode == 1


def test_unknown_flag_exits_one():
    proc = run_cli("gen-data", "--frobnicate")
    assert proc.returncode == 1
    assert "error" in proc.stderr


def test_gen_data_writes_dataset(tmp_path):
    proc = run_cli("gen-data", "--n", 6, "--dims", "3,3,2,2", "--out", tmp_path / "d", "--seed", 1)
    assert proc.returncode == 0, proc.stderr
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["n"] == 6
    assert (tmp_path / "d" / "video.mat").is_file()


def test_gen_data_bad_group_spec_exits_one(tmp_path):
    proc = run_cli("gen-data", "--n", 6, "--groups", "2:2", "--out", tmp_path / "d")
    assert proc.returncode == 1  # histogram covers 4 samples, not 6
    assert "group spec" in proc.stderr


def test_stagewise_equals_pipeline(tmp_path):
    """Running the six stages by hand reproduces the pipeline byte for byte."""
    pipe = tmp_path / "pipe"
    assert _quick_pipeline(pipe).returncode == 0
    by_hand = tmp_path / "hand"
    by_hand.mkdir()
    steps = [
        ("gen-data", "--n", 16, "--dims", "3,3,2,2", "--noise", 0.1, "--seed", 3,
         "--out", by_hand / "data"),
        ("train-ref", "--data", by_hand / "data", "--epochs", 8, "--batch-size", 16,
         "--interval", 4, "--seed", 3, "--out", by_hand / "ref"),
        ("analyze", "--series", by_hand / "ref", "--out", by_hand / "analysis"),
        ("build-batches", "--delta", by_hand / "analysis" / "delta.mat", "--schedule", "linear",
         "--epochs", 4, "--batch-size", 8, "--seed", 3, "--data", by_hand / "data",
         "--out", by_hand / "plan.jsonl"),
        ("train-scl", "--data", by_hand / "data", "--plan", by_hand / "plan.jsonl",
         "--batch-size", 8, "--interval", 4, "--seed", 3, "--out", by_hand / "scl"),
    ]
    for step in steps:
        proc = run_cli(*step)
        assert proc.returncode == 0, (step[0], proc.stderr)
    for rel in ("data/video.mat", "ref/loss.csv", "analysis/delta.mat", "plan.jsonl", "scl/encoder.json"):
        assert (by_hand / rel).read_bytes() == (pipe / rel).read_bytes(), rel


def test_pipeline_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _quick_pipeline(a).returncode == 0
    assert _quick_pipeline(b).returncode == 0
    for rel_a in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
        assert (a / rel_a).read_bytes() == (b / rel_a).read_bytes(), str(rel_a)


def test_different_seed_changes_plan(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _quick_pipeline(a, seed=1).returncode == 0
    assert _quick_pipeline(b, seed=2).returncode == 0
    assert (a / "plan.jsonl").read_bytes() != (b / "plan.jsonl").read_bytes()


def test_analyze_threads_do_not_change_output(tmp_path):
    assert _quick_pipeline(tmp_path / "p").returncode == 0
    for threads, out in ((1, "t1"), (8, "t8")):
        proc = run_cli(
            "analyze", "--series", tmp_path / "p" / "ref", "--mode", "cico",
            "--threads", threads, "--out", tmp_path / out,
        )
        assert proc.returncode == 0, proc.stderr
    a = (tmp_path / "t1" / "delta.mat").read_bytes()
    b = (tmp_path / "t8" / "delta.mat").read_bytes()
    assert a == b


def test_analyze_missing_series_exits_one(tmp_path):
    proc = run_cli("analyze", "--series", tmp_path / "missing", "--out", tmp_path / "out")
    assert proc.returncode == 1
    assert "missing input" in proc.stderr


def test_corrupt_delta_exits_two(tmp_path):
    bad = tmp_path / "delta.mat"
    bad.write_text("0 2 0.0 nonsense\n1 2 0.1 0.0\n")
    proc = run_cli("build-batches", "--delta", bad, "--schedule", "linear", "--epochs", 2,
                   "--out", tmp_path / "plan.jsonl")
    assert proc.returncode == 2
    assert "format error" in proc.stderr


def test_nonzero_delta_diagonal_exits_two(tmp_path):
    bad = tmp_path / "delta.mat"
    write_square(bad, np.array([[0.5, 0.1], [0.2, 0.0]]))
    proc = run_cli("build-batches", "--delta", bad, "--schedule", "linear", "--epochs", 2,
                   "--out", tmp_path / "plan.jsonl")
    assert proc.returncode == 2


def test_single_checkpoint_series_exits_three(tmp_path):
    data = tmp_path / "data"
    assert run_cli("gen-data", "--n", 4, "--dims", "2,2,1,1", "--out", data).returncode == 0
    ref = tmp_path / "ref"
    proc = run_cli("train-ref", "--data", data, "--epochs", 0, "--out", ref)
    assert proc.returncode == 0, proc.stderr
    proc = run_cli("analyze", "--series", ref, "--out", tmp_path / "analysis")
    assert proc.returncode == 3
    assert "degeneracy" in proc.stderr


def test_divergent_temperature_exits_four(tmp_path):
    data = tmp_path / "data"
    assert run_cli("gen-data", "--n", 4, "--dims", "2,2,1,1", "--out", data).returncode == 0
    enc = tmp_path / "enc.json"
    enc.write_text(json.dumps({
        "embed_dim": 2, "d_video": 2, "d_text": 2, "log_tau": -800.0,
        "w_video": [[1.0, 0.0], [0.0, 1.0]], "w_text": [[1.0, 0.0], [0.0, 1.0]],
    }))
    proc = run_cli("train-ref", "--data", data, "--epochs", 1, "--init-from", enc,
                   "--embed-dim", 2, "--out", tmp_path / "ref")
    assert proc.returncode == 4
    assert "diverged" in proc.stderr


def test_exclude_duplicate_texts_needs_data(tmp_path):
    delta = tmp_path / "delta.mat"
    write_square(delta, np.zeros((4, 4)))
    proc = run_cli("build-batches", "--delta", delta, "--schedule", "linear", "--epochs", 1,
                   "--exclude-duplicate-texts", "--out", tmp_path / "plan.jsonl")
    assert proc.returncode == 1
    assert "--data" in proc.stderr


def test_exclude_duplicate_texts_separates_groups(tmp_path):
    data = tmp_path / "data"
    assert run_cli("gen-data", "--n", 8, "--dims", "3,3,2,2", "--groups", "2:4",
                   "--seed", 5, "--out", data).returncode == 0
    delta = tmp_path / "delta.mat"
    rng = np.random.default_rng(0)
    d = rng.normal(size=(8, 8))
    np.fill_diagonal(d, 0.0)
    write_square(delta, d)
    plan = tmp_path / "plan.jsonl"
    proc = run_cli("build-batches", "--delta", delta, "--schedule", "hard", "--epochs", 3,
                   "--batch-size", 4, "--exclude-duplicate-texts", "--data", data,
                   "--out", plan)
    assert proc.returncode == 0, proc.stderr
    groups = json.loads((data / "manifest.json").read_text())["group_ids"]
    for line in plan.read_text().splitlines():
        rec = json.loads(line)
        batch_groups = [groups[i] for i in rec["ids"]]
        assert len(batch_groups) == len(set(batch_groups)), rec


def test_report_command_renders_all_files(tmp_path):
    assert _quick_pipeline(tmp_path / "p").returncode == 0
    out = tmp_path / "rep"
    proc = run_cli(
        "report", "--analysis", tmp_path / "p" / "analysis", "--schedule", "log",
        "--epochs", 12, "--loss-log", tmp_path / "p" / "ref" / "loss.csv",
        tmp_path / "p" / "scl" / "loss.csv", "--out", out,
    )
    assert proc.returncode == 0, proc.stderr
    for name in ("report.csv", "trajectories.svg", "schedule.svg", "loss.svg"):
        assert (out / name).is_file(), name
        if name.endswith(".svg"):
            ET.parse(out / name)


def test_report_without_analysis_exits_one(tmp_path):
    proc = run_cli("report", "--analysis", tmp_path / "nope", "--out", tmp_path / "rep")
    assert proc.returncode == 1


def test_verbose_prints_progress_to_stderr(tmp_path):
    proc = run_cli("gen-data", "--n", 4, "--dims", "2,2,1,1", "--out", tmp_path / "d",
                   "--verbose")
    assert proc.returncode == 0
    assert "gen-data" in proc.stderr
    assert proc.stdout == ""


def test_precomputed_similarity_series_feeds_analyze(tmp_path):
    """analyze accepts externally produced per-checkpoint similarity matrices."""
    from pairsel.snapshots import SimilarityMatrix, write_similarity_series

    rng = np.random.default_rng(17)
    stack = np.clip(rng.normal(scale=0.3, size=(3, 5, 5)), -1, 1)
    mats = [SimilarityMatrix(k, stack[m]) for m, k in enumerate((0, 2, 4))]
    write_similarity_series(mats, tmp_path / "sims")
    proc = run_cli("analyze", "--series", tmp_path / "sims", "--out", tmp_path / "analysis")
    assert proc.returncode == 0, proc.stderr
    delta = read_square(tmp_path / "analysis" / "delta.mat", 5)
    assert np.all(np.diag(delta) == 0.0)
