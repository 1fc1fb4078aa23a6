import json
import os
import shutil
import subprocess
import sys

import numpy as np

from mdpp import cli, io
from mdpp.data_model import Summary


def run(argv):
    return cli.dispatch(argv)


def _synth(tmp_path, name, seed, steps=40):
    features = tmp_path / f"{name}.mdv"
    annotations = tmp_path / f"{name}.annotations.json"
    code = run([
        "synth", "--views", "2", "--steps", str(steps), "--dim", "8",
        "--events", "2", "--event-min", "3", "--event-max", "3",
        "--seed", str(seed), "--out", str(features),
        "--annotations-out", str(annotations),
    ])
    assert code == 0
    return features, annotations


def test_synth_writes_files_and_manifest(tmp_path, capsys):
    features, annotations = _synth(tmp_path, "a", seed=0)
    assert "2 views x 40 steps x 8 dims" in capsys.readouterr().out
    sequence = io.read_feature_file(features)
    assert (sequence.num_views, sequence.num_steps) == (2, 40)
    io.read_annotations(annotations, sequence)

    manifest = json.loads((tmp_path / "a.mdv.manifest.json").read_text())
    assert manifest["subcommand"] == "synth"
    assert manifest["seed"] == 0
    assert str(features) in manifest["outputs"]
    assert manifest["wall_time_s"] >= 0


def test_segment_reports_change_points(tmp_path, capsys):
    features, _ = _synth(tmp_path, "a", seed=1)
    out = tmp_path / "segments.txt"
    assert run(["segment", "--features", str(features), "--max-segments", "6",
                "--penalty", "0.05", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "view 0:" in text and "view 1:" in text
    assert out.read_text() in text


def test_oracle_then_eval(tmp_path, capsys):
    features, annotations = _synth(tmp_path, "a", seed=2)
    summary = tmp_path / "oracle.summary.json"
    assert run(["oracle", "--features", str(features), "--annotations", str(annotations),
                "--penalty", "0.05", "--max-segments", "8", "--out", str(summary)]) == 0
    loaded = io.read_summary(summary)
    assert 0 < len(loaded.selections) <= 6  # ceil(0.15 * 40)

    report = tmp_path / "report.json"
    assert run(["eval", "--summary", str(summary), "--annotations", str(annotations),
                "--features", str(features), "--out", str(report)]) == 0
    out = capsys.readouterr().out
    assert "mean\t" in out and "tolerant_f1" in out
    doc = json.loads(report.read_text())
    assert doc["f1"] > 0.5  # the oracle should align well with its own truth
    plot = (tmp_path / "report.json.plot.tsv").read_text()
    assert plot.startswith("tau\tf1\n")


def test_summarize_unsupervised(tmp_path):
    features, _ = _synth(tmp_path, "a", seed=3)
    out = tmp_path / "u.summary.json"
    assert run(["summarize", "--features", str(features), "--unsupervised",
                "--penalty", "0.05", "--max-segments", "8", "--out", str(out)]) == 0
    summary = io.read_summary(out)
    assert 0 < len(summary.selections) <= 6


def test_summarize_mode_conflicts_exit_1(tmp_path):
    features, _ = _synth(tmp_path, "a", seed=4)
    out = tmp_path / "x.summary.json"
    assert run(["summarize", "--features", str(features), "--unsupervised",
                "--checkpoint", "nope.ckpt", "--out", str(out)]) == 1
    assert run(["summarize", "--features", str(features), "--baseline", "merge-views",
                "--out", str(out)]) == 1  # needs --baseline-checkpoint


def test_usage_errors_exit_1(tmp_path):
    assert run(["summarize"]) == 1  # missing required arguments
    assert run(["frobnicate"]) == 1  # unknown subcommand
    assert run(["synth", "--views", "0", "--out", str(tmp_path / "x.mdv"),
                "--annotations-out", str(tmp_path / "x.json")]) == 1


def test_missing_input_exits_1(tmp_path):
    assert run(["segment", "--features", str(tmp_path / "missing.mdv")]) == 1


def test_check_suites(capsys):
    assert run(["check", "all", "--trials", "3", "--n", "4"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert out.count("ok") >= 5


def _training_dir(tmp_path, steps=40):
    root = tmp_path / "corpus"
    for c in range(3):
        coll = root / f"c{c}"
        coll.mkdir(parents=True)
        for i in range(2):
            seed = 10 * c + i
            features = coll / f"s{i}.mdv"
            annotations = coll / f"s{i}.annotations.json"
            assert run([
                "synth", "--views", "2", "--steps", str(steps), "--dim", "8",
                "--events", "2", "--event-min", "3", "--event-max", "3",
                "--seed", str(seed), "--out", str(features),
                "--annotations-out", str(annotations),
            ]) == 0
            assert run([
                "oracle", "--features", str(features), "--annotations", str(annotations),
                "--penalty", "0.05", "--max-segments", "8",
                "--out", str(coll / "s{}.summary.json".format(i)),
            ]) == 0
    return root


def test_train_summarize_eval_pipeline(tmp_path, capsys):
    root = _training_dir(tmp_path)
    ckpt = tmp_path / "model.ckpt"
    assert run([
        "train", "--features-dir", str(root), "--val", "c1", "--test", "c2",
        "--hidden", "4", "--output-dim", "8", "--iterations", "2",
        "--batch-size", "4", "--out", str(ckpt),
    ]) == 0
    assert "best epoch" in capsys.readouterr().out
    history = (tmp_path / "model.ckpt.history.tsv").read_text().splitlines()
    assert history[0] == "epoch\ttrain_loss\tval_loss"
    assert len(history) == 3

    manifest = json.loads((tmp_path / "model.ckpt.manifest.json").read_text())
    assert len(manifest["inputs"]) == 12  # 6 feature files + 6 target summaries

    test_features = root / "c2" / "s0.mdv"
    out = tmp_path / "model.summary.json"
    assert run(["summarize", "--features", str(test_features),
                "--checkpoint", str(ckpt), "--penalty", "0.05",
                "--max-segments", "8", "--out", str(out)]) == 0
    summary = io.read_summary(out)
    assert len(summary.selections) <= 6

    assert run(["eval", "--summary", str(out),
                "--annotations", str(root / "c2" / "s0.annotations.json"),
                "--features", str(test_features)]) == 0


def test_baseline_summarize_modes(tmp_path):
    root = _training_dir(tmp_path)
    ckpt = tmp_path / "model.ckpt"
    assert run([
        "train", "--features-dir", str(root), "--hidden", "4", "--output-dim", "8",
        "--iterations", "1", "--batch-size", "4", "--out", str(ckpt),
    ]) == 0
    features = root / "c0" / "s0.mdv"
    for baseline, extra in (
        ("random", []),
        ("merge-views", ["--baseline-checkpoint", str(ckpt)]),
        ("merge-summaries", ["--baseline-checkpoint", str(ckpt)]),
    ):
        out = tmp_path / f"{baseline}.summary.json"
        assert run(["summarize", "--features", str(features), "--baseline", baseline,
                    "--penalty", "0.05", "--max-segments", "8",
                    "--out", str(out), *extra]) == 0
        assert len(io.read_summary(out).selections) <= 6


def test_numeric_failure_exits_2(tmp_path):
    # a checkpoint whose feature head always outputs the zero vector cannot
    # be row-normalized; the CLI maps the NumericError to exit code 2
    from mdpp import training
    from mdpp.encoder import ModelParams, init_params

    features, _ = _synth(tmp_path, "a", seed=5)
    params = init_params(8, hidden_size=3, output_dim=4, seed=0)
    values = dict(params.named_arrays())
    values["feat_w2"] = np.zeros_like(values["feat_w2"])
    values["feat_b2"] = np.zeros_like(values["feat_b2"])
    broken = ModelParams(input_dim=8, hidden_size=3, output_dim=4, seed=0, **values)
    ckpt = tmp_path / "broken.ckpt"
    training.save_checkpoint(ckpt, broken)
    assert run(["summarize", "--features", str(features), "--checkpoint", str(ckpt),
                "--out", str(tmp_path / "s.summary.json")]) == 2


def test_module_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "mdpp.cli", "check", "knapsack", "--trials", "2"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "ok" in proc.stdout
    assert shutil.which("mdpp") is not None


def test_threads_env_caps_blas_pools():
    env = {k: v for k, v in os.environ.items()
           if k not in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")}
    env["MDPP_THREADS"] = "3"
    proc = subprocess.run(
        [sys.executable, "-c",
         "import mdpp.cli, os; print(os.environ['OMP_NUM_THREADS'], "
         "os.environ['OPENBLAS_NUM_THREADS'], os.environ['MKL_NUM_THREADS'])"],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0
    assert proc.stdout.split() == ["3", "3", "3"]
