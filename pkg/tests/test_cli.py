import json

import numpy as np
import pytest

from repsketch.cli import main
from repsketch.data import Dataset, emit_libsvm
from repsketch.distill import KernelModel, Task, predict_batch, save_model
from repsketch.kde import KernelConfig
from repsketch.lsh import Family, LshFamilyConfig


@pytest.fixture
def planted(tmp_path):
    """A classification file whose teacher scores come from a planted 3-point kernel model."""
    rng = np.random.default_rng(0)
    teacher = KernelModel(np.array([[-1.0, 0.0], [1.0, 0.5], [0.0, -1.5]]), np.array([0.9, -0.4, 0.6]),
                          KernelConfig(LshFamilyConfig(Family.L2PStable, 2, 2.0)))
    X = rng.uniform(-2, 2, (300, 2))
    s = predict_batch(teacher, X)
    ds = Dataset(X, (s >= 0.5).astype(float), Task.BinaryClassification)
    (tmp_path / "d.svm").write_text(emit_libsvm(ds))
    (tmp_path / "t.txt").write_text("".join(f"{float(v)!r}\n" for v in s))
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def distill_args(d, out="m.rkm", **extra):
    args = ["distill", "--data", d / "d.svm", "--teacher", d / "t.txt", "--model-out", d / out,
            "--M", 6, "--r", 2.0, "--epochs", 60, "--lr", 0.1, "--batch-size", 32, "--momentum", 0.9,
            "--lr-decay", 1.0]
    for k, v in extra.items():
        args += [f"--{k.replace('_', '-')}", v]
    return args


def test_dataset_info(planted, capsys):
    code, out, _ = run(capsys, "dataset-info", "--data", planted / "d.svm", "--format", "json-lines")
    assert code == 0
    rec = json.loads(out)
    assert rec["rows"] == 300 and rec["features"] == 2


def test_distill_build_query_evaluate(planted, capsys):
    code, out, _ = run(capsys, *distill_args(planted), "--format", "json-lines")
    assert code == 0
    rec = json.loads(out.strip().splitlines()[-1])
    assert rec["train_mse"] <= 1e-3 and rec["val_mse"] <= 1e-3

    code, out, _ = run(capsys, "build", "--model", planted / "m.rkm", "--sketch-out", planted / "s.rsk",
                       "--L", 400, "--R", 50)
    assert code == 0 and "params_count=20000" in out and "memory_bytes=160000" in out
    assert (planted / "s.rsk").stat().st_size == 64 + 400 * 50 * 8

    code, out, _ = run(capsys, "query", "--sketch", planted / "s.rsk", "--point", "0.5,-0.25")
    assert code == 0 and np.isfinite(float(out))

    code, out, _ = run(capsys, "evaluate", "--sketch", planted / "s.rsk", "--data", planted / "d.svm",
                       "--nn-spec", "16/8", "--format", "json-lines")
    assert code == 0
    recs = [json.loads(x) for x in out.splitlines()]
    assert recs[0]["metric"] == "Accuracy" and recs[0]["value"] >= 0.9
    assert recs[-1]["record"] == "reduction"

    code, _, err = run(capsys, "evaluate", "--sketch", planted / "s.rsk", "--data", planted / "d.svm",
                       "--min-metric", 1.01)
    assert code == 1 and "misses threshold" in err


def test_distill_is_byte_identical_on_rerun(planted, capsys):
    assert run(capsys, *distill_args(planted, "a.rkm", seed=3))[0] == 0
    assert run(capsys, *distill_args(planted, "b.rkm", seed=3))[0] == 0
    assert (planted / "a.rkm").read_bytes() == (planted / "b.rkm").read_bytes()


def test_build_is_idempotent(planted, capsys):
    run(capsys, *distill_args(planted))
    for name in ("a.rsk", "b.rsk"):
        assert run(capsys, "build", "--model", planted / "m.rkm", "--sketch-out", planted / name,
                   "--L", 30, "--R", 20, "--seed", 4)[0] == 0
    assert (planted / "a.rsk").read_bytes() == (planted / "b.rsk").read_bytes()


def test_missing_teacher_file(planted, capsys):
    code, _, err = run(capsys, "distill", "--data", planted / "d.svm", "--teacher", planted / "absent.txt",
                       "--model-out", planted / "m.rkm")
    assert code == 2 and "absent.txt" in err
    assert not (planted / "m.rkm").exists()


def test_teacher_count_mismatch(planted, capsys):
    (planted / "short.txt").write_text("0.5\n0.1\n")
    code, _, err = run(capsys, "distill", "--data", planted / "d.svm", "--teacher", planted / "short.txt",
                       "--model-out", planted / "m.rkm")
    assert code == 2 and "2" in err and "300" in err


def test_missing_required_option(capsys):
    code, _, err = run(capsys, "build", "--sketch-out", "x.rsk")
    assert code == 2 and "--model" in err


def test_range_one_is_rejected(planted, capsys):
    run(capsys, *distill_args(planted))
    code, _, _ = run(capsys, "build", "--model", planted / "m.rkm", "--sketch-out", planted / "s.rsk", "--R", 1)
    assert code == 2
    assert not (planted / "s.rsk").exists()


def test_mean_and_single_group_mom_identical(planted, capsys):
    run(capsys, *distill_args(planted))
    run(capsys, "build", "--model", planted / "m.rkm", "--sketch-out", planted / "s.rsk", "--L", 60, "--R", 30)
    q = ["query", "--sketch", planted / "s.rsk", "--data", planted / "d.svm"]
    _, mean_out, _ = run(capsys, *q, "--estimator", "mean")
    _, mom_out, _ = run(capsys, *q, "--estimator", "mom", "--groups", 1)
    assert mean_out == mom_out and len(mean_out.splitlines()) == 300


def test_groups_not_dividing_L(planted, capsys):
    run(capsys, *distill_args(planted))
    run(capsys, "build", "--model", planted / "m.rkm", "--sketch-out", planted / "s.rsk", "--L", 60, "--R", 30)
    code, _, err = run(capsys, "query", "--sketch", planted / "s.rsk", "--point", "0,0", "--groups", 7)
    assert code == 2 and "divide" in err


def test_corrupted_sketch_exits_3(planted, capsys):
    run(capsys, *distill_args(planted))
    run(capsys, "build", "--model", planted / "m.rkm", "--sketch-out", planted / "s.rsk", "--L", 10, "--R", 10)
    blob = bytearray((planted / "s.rsk").read_bytes())
    blob[4] = 7
    (planted / "bad.rsk").write_bytes(bytes(blob))
    for cmd in (["query", "--sketch", planted / "bad.rsk", "--point", "0,0"],
                ["verify", "--sketch", planted / "bad.rsk", "--suite", "unbiasedness"]):
        code, _, err = run(capsys, *cmd)
        assert code == 3 and "offset 4" in err


def test_config_file_with_flag_override(planted, capsys):
    cfg = planted / "run.cfg"
    cfg.write_text(f"data = {planted / 'd.svm'}\nteacher = {planted / 't.txt'}\n"
                   f"model_out = {planted / 'cfg.rkm'}\nM = 4\nr = 2.0\nepochs = 2\n")
    code, out, _ = run(capsys, "distill", "--config", cfg, "--M", 5)
    assert code == 0 and "M=5" in out
    cfg.write_text("nonsense = 1\n")
    assert run(capsys, "distill", "--config", cfg)[0] == 2


def test_bandwidth_grid_search(planted, capsys):
    code, out, _ = run(capsys, "distill", "--data", planted / "d.svm", "--teacher", planted / "t.txt",
                       "--model-out", planted / "g.rkm", "--M", 4, "--epochs", 2, "--format", "json-lines")
    recs = [json.loads(x) for x in out.splitlines()]
    assert code == 0 and sum(r["record"] == "bandwidth" for r in recs) == 5


def test_verify_quick_passes(capsys):
    code, out, _ = run(capsys, "verify", "--quick")
    assert code == 0
    assert out.count("status=PASS") == 4


def test_query_point_dimension_mismatch(planted, capsys):
    run(capsys, *distill_args(planted))
    run(capsys, "build", "--model", planted / "m.rkm", "--sketch-out", planted / "s.rsk", "--L", 10, "--R", 10)
    code, _, err = run(capsys, "query", "--sketch", planted / "s.rsk", "--point", "1,2,3")
    assert code == 2


def test_handwritten_model_file(tmp_path, capsys):
    m = KernelModel(np.array([[0.0, 0.0]]), np.array([1.5]), KernelConfig(LshFamilyConfig(Family.L2PStable, 2, 1.0)))
    save_model(m, tmp_path / "m.rkm")
    run(capsys, "build", "--model", tmp_path / "m.rkm", "--sketch-out", tmp_path / "s.rsk", "--L", 20, "--R", 8)
    code, out, _ = run(capsys, "query", "--sketch", tmp_path / "s.rsk", "--point", "0,0", "--estimator", "mean")
    assert code == 0 and float(out) == 1.5
