from __future__ import annotations

import json
import subprocess
import sys
import time

import numpy as np
import pytest

from heact.cli import main
from heact.model import (
    BatchNormParams,
    LinearLayer,
    RawModel,
    load_model,
    save_model,
    synthesize_fixture,
)
from heact.poly_approx import published_softplus


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    raw, feats = synthesize_fixture(42, d=64, h=64, classes=10, t=200)
    save_model(raw, root / "raw.json")
    save_model(raw.fold(), root / "bundle.json")
    feats.save(root / "feats.csv")
    return root


# ---------------------------------------------------------------- fit and verify


def test_fit_softplus(capsys, tmp_path):
    d = run_json(capsys, "fit", "--activation", "softplus", "--degree", 4, "--domain", -7, 7, "--weights", "paper")
    assert d["e_max_unweighted"] <= 0.08
    assert d["config"]["activation"] == "softplus" and d["config"]["grid"] == 1401
    _, _, err = run(capsys, "fit", "--output", tmp_path / "f.json")
    assert err.startswith("Softplus & 4 & [-7, 7] & 0.07")
    again = json.loads((tmp_path / "f.json").read_text())
    assert again["coeffs_ascending"] == d["coeffs_ascending"]


def test_fit_relu_and_local(capsys):
    d = run_json(capsys, "fit", "--activation", "relu")
    assert 0.28 <= d["e_max_unweighted"] <= 0.38
    d = run_json(capsys, "fit", "--degree", 1, "--activation", "softplus", "--domain", 0, 0.001)
    assert d["e_max_unweighted"] < 1e-3


def test_fit_csv(capsys):
    code, out, _ = run(capsys, "fit", "--format", "csv", "--grid", 201)
    assert code == 0
    assert out.splitlines()[0] == "x,f(x),p(x),abs_error"


@pytest.mark.parametrize(
    "argv",
    [
        ["fit", "--weights", "0:1"],
        ["fit", "--activation", "tanh"],
        ["fit", "--domain", "3", "1"],
        ["fit", "--bogus"],
        ["params"],
        ["params", "--preset", "nope"],
        [],
    ],
)
def test_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1
    if "nope" in argv:
        assert "ci-small" in err and "cifar10-paper" in err


def test_verify(capsys, tmp_path):
    run(capsys, "fit", "--output", tmp_path / "f4.json")
    d = run_json(capsys, "verify", "--fit", tmp_path / "f4.json")
    assert d["alternation_count"] >= 6 and d["pass"] is True
    run(capsys, "fit", "--degree", 2, "--output", tmp_path / "f2.json")
    d2 = run_json(capsys, "verify", "--fit", tmp_path / "f2.json")
    assert d2["e_max_weighted_lp"] > d["e_max_weighted_lp"]
    code, out, _ = run(capsys, "verify", "--fit", tmp_path / "f4.json", "--format", "csv")
    assert out.splitlines()[0] == "activation,degree,e_max_weighted_lp,alternation_count,pass"


def test_verify_bad_file(capsys, tmp_path):
    (tmp_path / "x.json").write_text("{")
    assert run(capsys, "verify", "--fit", tmp_path / "x.json")[0] == 2
    assert run(capsys, "verify", "--fit", tmp_path / "missing.json")[0] == 1


# ---------------------------------------------------------------- fold


def test_fold_identity_bn_byte_identical(capsys, tmp_path):
    rng = np.random.default_rng(0)
    fc1 = LinearLayer(rng.normal(size=(5, 4)), rng.normal(size=5))
    raw = RawModel(fc1, BatchNormParams.identity(5), LinearLayer(rng.normal(size=(3, 5)), np.zeros(3)), published_softplus())
    save_model(raw, tmp_path / "raw.json")
    run_json(capsys, "fold", "--model", tmp_path / "raw.json", "--out", tmp_path / "b.json")
    b = load_model(tmp_path / "b.json")
    assert b.fc1.W.tobytes() == fc1.W.tobytes() and b.fc1.b.tobytes() == fc1.b.tobytes()


def test_fold_check(capsys, files, tmp_path):
    d = run_json(capsys, "fold", "--model", files / "raw.json", "--out", tmp_path / "b.json", "--check", 100)
    assert d["check"]["max_discrepancy"] < 1e-9
    assert load_model(tmp_path / "b.json").digest() == d["model_sha256"]
    assert run(capsys, "fold", "--model", files / "bundle.json", "--out", tmp_path / "c.json")[0] == 2


# ---------------------------------------------------------------- infer


def test_infer_ci_small(capsys, files):
    d = run_json(
        capsys, "infer", "--model", files / "bundle.json", "--features", files / "feats.csv",
        "--preset", "ci-small", "--limit", 50, "--seed", 1,
    )
    assert d["samples"] == 50
    assert abs(d["accuracy"] - d["oracle_accuracy"]) <= 0.005
    assert d["config"]["cli"]["limit"] == 50 and d["config"]["preset"] == "ci-small"
    again = run_json(
        capsys, "infer", "--model", files / "bundle.json", "--features", files / "feats.csv",
        "--preset", "ci-small", "--limit", 50, "--seed", 1, "--threads", 1,
    )
    assert [r["logits"] for r in again["per_sample"]] == [r["logits"] for r in d["per_sample"]]


def test_infer_plaintext_and_csv(capsys, files):
    d = run_json(capsys, "infer", "--model", files / "bundle.json", "--features", files / "feats.csv", "--plaintext-oracle")
    assert d["config"]["mode"] == "plaintext-oracle" and d["config"]["params"] is None
    assert d["samples"] == 200
    code, out, _ = run(
        capsys, "infer", "--model", files / "bundle.json", "--features", files / "feats.csv",
        "--limit", 3, "--format", "csv", "--threads", 1,
    )
    assert code == 0 and len(out.splitlines()) == 4


def test_infer_dim_mismatch(capsys, files, tmp_path):
    _, feats = synthesize_fixture(1, d=32, h=8, classes=10, t=120)
    feats.save(tmp_path / "f32.csv")
    code, _, err = run(capsys, "infer", "--model", files / "bundle.json", "--features", tmp_path / "f32.csv")
    assert code == 2 and "dimension" in err


# ---------------------------------------------------------------- bench and params


def test_bench(capsys):
    t0 = time.perf_counter()
    code, out, _ = run(capsys, "bench", "--preset", "ci-small", "--samples", 10, "--format", "csv")
    assert time.perf_counter() - t0 < 60
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "stage,mean_s,median_s,p95_s,share_pct"
    stages = [ln.split(",")[0] for ln in lines[1:]]
    assert stages == ["encode&encrypt", "FC", "activation", "decryption", "total"]
    shares = [float(ln.split(",")[-1]) for ln in lines[1:-1]]
    assert abs(sum(shares) - 100) <= 1


def test_params(capsys):
    d = run_json(capsys, "params", "--preset", "cifar10-paper")
    assert (d["ring_dim"], d["coeff_mod_bits"], d["scale_log2"]) == (8192, [60, 40, 40, 60], 40)
    d = run_json(capsys, "params", "--preset", "cifar100-paper")
    assert (d["ring_dim"], d["coeff_mod_bits"], d["scale_log2"]) == (16384, [60, 40, 60], 40)
    code, out, _ = run(capsys, "params", "--preset", "ci-small", "--format", "csv")
    assert code == 0 and out.startswith("name,")


def test_synth_roundtrip(capsys, tmp_path):
    run_json(
        capsys, "synth", "--d", 8, "--h", 4, "--classes", 3, "--samples", 120,
        "--model-out", tmp_path / "m.json", "--features-out", tmp_path / "f.csv", "--folded",
    )
    assert load_model(tmp_path / "m.json").feature_dim == 8


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "heact", "params", "--preset", "bad"], capture_output=True, text=True)
    assert res.returncode == 1 and "usage" in res.stderr
