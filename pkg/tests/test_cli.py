import json

import numpy as np
import pytest

from discop import cli
from discop.io import load_dataset

TINY = {
    "benchmarks": ["advection"], "grid": 32, "n_train": 12, "n_val": 4, "n_test": 6,
    "seeds": [0],
    "models": {"don": {"m": 16, "p": 4, "branch_hidden": [8], "trunk_hidden": [8]},
               "sdon": {"m": 16, "p": 2, "branch_hidden": [8], "trunk_hidden": [8],
                        "shift_hidden": [8]},
               "fno": {"d_v": 4, "k_max": 3, "n_layers": 1}},
    "train": {"epochs": 3, "batch_size": 4, "val_every": 1},
}


def write_config(tmp_path, **over):
    cfg = dict(TINY, output=str(tmp_path / "run"), **over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def checksums(capsys):
    return [ln.split()[0] for ln in capsys.readouterr().out.splitlines() if ln.strip()]


# ---------------------------------------------------------------------------
# config

def test_unknown_keys_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"gird": 64}))
    assert cli.run(["generate", "--config", str(bad), "-o", str(tmp_path)]) == cli.EXIT_CONFIG
    bad.write_text(json.dumps({"train": {"learning_rate": 1e-3}}))
    assert cli.run(["generate", "--config", str(bad), "-o", str(tmp_path)]) == cli.EXIT_CONFIG
    bad.write_text(json.dumps({"models": {"don": {"width": 3}}}))
    assert cli.run(["generate", "--config", str(bad), "-o", str(tmp_path)]) == cli.EXIT_CONFIG
    bad.write_text(json.dumps({"measures": {"advection": {"hieght": [0, 1]}}}))
    assert cli.run(["generate", "--config", str(bad), "-o", str(tmp_path)]) == cli.EXIT_CONFIG


def test_invalid_values_rejected(tmp_path):
    for over in ({"grid": 0}, {"benchmarks": ["heat"]}, {"train": {"lr": -1.0}},
                 {"seeds": []}, {"n_train": -3}):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(over))
        assert cli.run(["generate", "--config", str(cfg), "-o", str(tmp_path)]) == cli.EXIT_CONFIG


def test_malformed_json_is_config_error_and_missing_file_is_io(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert cli.run(["generate", "--config", str(cfg), "-o", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.run(["generate", "--config", str(tmp_path / "nope.json"),
                    "-o", str(tmp_path)]) == cli.EXIT_IO


def test_flags_override_config_and_resolved_config_written(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "o"
    assert cli.run(["generate", "--config", cfg, "--grid", "16", "--n-train", "3",
                    "-o", str(out)]) == 0
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["grid"] == 16 and resolved["n_train"] == 3 and resolved["n_val"] == 4
    ds = load_dataset(out / "data" / "advection" / "train.dpl")
    assert ds.inputs.shape == (3, 1, 16)
    assert ds.manifest["config_hash"] == cli.config_hash(resolved)


def test_config_hash_ignores_output_and_threads():
    a = cli.validate_config(dict(cli.DEFAULT_CONFIG))
    b = dict(a, output="elsewhere", threads=4)
    c = dict(a, grid=64)
    assert cli.config_hash(a) == cli.config_hash(b)
    assert cli.config_hash(a) != cli.config_hash(c)


# ---------------------------------------------------------------------------
# generate

def test_generate_paper_invocation_shapes(tmp_path, capsys):
    out = tmp_path / "g"
    assert cli.run(["generate", "--benchmark", "advection", "--n-train", "1024", "--n-val", "0",
                    "--n-test", "128", "--grid", "2048", "--seed", "7", "-o", str(out)]) == 0
    tr = load_dataset(out / "data" / "advection" / "train.dpl")
    te = load_dataset(out / "data" / "advection" / "test.dpl")
    assert tr.inputs.shape == (1024, 1, 2048) and te.outputs.shape == (128, 2048)
    assert tr.manifest["seed"] == 7 and te.manifest["start"] == 1024
    assert len(tr.manifest["parameters"]["h"]) == 1024


def test_generate_empty_split(tmp_path):
    out = tmp_path / "e"
    assert cli.run(["generate", "--benchmark", "advection", "--n-train", "0", "--n-val", "0",
                    "--n-test", "0", "--grid", "64", "-o", str(out)]) == 0
    ds = load_dataset(out / "data" / "advection" / "train.dpl")
    assert len(ds) == 0 and ds.manifest["n_samples"] == 0 and ds.manifest["benchmark"] == "advection"


def test_generate_twice_identical_checksums_and_threads_independent(tmp_path, capsys):
    args = ["generate", "--benchmark", "burgers-grf", "--n-train", "150", "--n-val", "2",
            "--n-test", "3", "--grid", "32", "--seed", "3"]
    assert cli.run(args + ["-o", str(tmp_path / "a")]) == 0
    first = checksums(capsys)
    assert cli.run(args + ["-o", str(tmp_path / "a")]) == 0
    second = checksums(capsys)
    assert cli.run(args + ["-o", str(tmp_path / "b"), "--threads", "3"]) == 0
    third = checksums(capsys)
    assert first == second == third and len(first) == 3
    a = (tmp_path / "a" / "data" / "burgers-grf" / "train.dpl").read_bytes()
    b = (tmp_path / "b" / "data" / "burgers-grf" / "train.dpl").read_bytes()
    assert a == b
    assert (tmp_path / "a" / "config.json").read_bytes().count(b"threads") == 1


def test_chunked_generation_matches_single_call():
    from discop.measures import BoxWaveMeasure, generate_dataset
    m = BoxWaveMeasure()
    whole = generate_dataset(m, 150, 32, 5, start=10)
    parts = cli.generate_split(m, 150, 32, 5, 10, threads=2)
    assert np.array_equal(whole.inputs, parts.inputs)
    assert np.array_equal(whole.outputs, parts.outputs)
    assert whole.manifest == parts.manifest


# ---------------------------------------------------------------------------
# spectrum

def test_spectrum_reports(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"benchmarks": ["advection"], "grid": 256, "n_train": 1024,
                               "n_val": 0, "n_test": 0, "output": str(tmp_path / "s")}))
    assert cli.run(["generate", "--config", str(cfg)]) == 0
    assert cli.run(["spectrum", "--config", str(cfg)]) == 0
    rep = json.loads((tmp_path / "s" / "spectrum" / "advection.json").read_text())
    assert -1.3 <= rep["meta"]["tail_exponent"] <= -0.7
    assert rep["meta"]["fourier_check"]["translation_invariant"] is False
    assert rep["meta"]["projection_median_rel_l1"] > 0.5
    header = (tmp_path / "s" / "spectrum" / "advection.csv").read_text().splitlines()[0]
    assert header == "k,lambda,tail,config_hash"


def test_spectrum_rank_one_dataset(tmp_path):
    from discop import io as dio
    from discop.grid import Grid
    from discop.measures import Dataset
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"benchmarks": ["advection"], "grid": 128, "n_train": 80,
                               "n_val": 0, "n_test": 0, "output": str(tmp_path / "r"),
                               "spectrum": {"ps": [1, 2, 4], "p_max": 8}}))
    assert cli.run(["generate", "--config", str(cfg)]) == 0
    path = tmp_path / "r" / "data" / "advection" / "train.dpl"
    ds = dio.load_dataset(path)
    g = Grid(128, 1.0)
    shape = np.sin(2 * np.pi * g.points)
    coef = np.linspace(0.5, 2.0, 80)[:, None]
    dio.save_dataset(Dataset(ds.inputs, coef * shape, ds.grid, ds.manifest), path)
    assert cli.run(["spectrum", "--config", str(cfg)]) == 0
    rep = json.loads((tmp_path / "r" / "spectrum" / "advection.json").read_text())
    eig = np.array(rep["eigenvalues"])
    assert eig[0] > 0.1 and np.all(eig[1:] < 1e-12 * eig[0])
    assert rep["meta"]["tail_exponent"] is None


# ---------------------------------------------------------------------------
# construct

def test_construct_burg_fno_rejects_small_grid(tmp_path, capsys):
    code = cli.run(["construct", "burg-fno", "--N", "2", "-o", str(tmp_path)])
    assert code == cli.EXIT_CONFIG
    assert "N < 3" in capsys.readouterr().err


def test_construct_adv_fno_ladder(tmp_path):
    assert cli.run(["construct", "adv-fno", "--N", "64,128,256", "--n-mc", "32",
                    "-o", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "construct" / "adv-fno.json").read_text())
    assert rep["budgets"] == [64, 128, 256]
    assert -1.3 <= rep["fit"]["slope"] <= -0.7
    lines = (tmp_path / "construct" / "adv-fno.csv").read_text().splitlines()
    assert lines[0] == "budget,size,mean_err,median_err,config_hash" and len(lines) == 4


def test_construct_burg_sdon_logs_time_caveat(tmp_path, capsys):
    assert cli.run(["construct", "burg-sdon", "--eps", "1e-2", "--t", "1.5", "--n-mc", "8",
                    "--n-eval", "128", "-o", str(tmp_path)]) == 0
    assert "t > pi" in capsys.readouterr().err
    rep = json.loads((tmp_path / "construct" / "burg-sdon.json").read_text())
    assert rep["meta"]["t_caveat"] is True and rep["meta"]["fit_skipped"] == "single budget"
    assert "t > pi" in (tmp_path / "run.log").read_text()


def test_construct_two_varying_axes_rejected(tmp_path):
    assert cli.run(["construct", "adv-sdon", "--m", "128,256", "--eps", "1e-3,1e-4",
                    "-o", str(tmp_path)]) == cli.EXIT_CONFIG


def test_construct_idempotent(tmp_path):
    args = ["construct", "adv-fno", "--N", "64,128", "--n-mc", "8", "-o", str(tmp_path)]
    assert cli.run(args) == 0
    first = (tmp_path / "construct" / "adv-fno.json").read_bytes()
    assert cli.run(args) == 0
    assert (tmp_path / "construct" / "adv-fno.json").read_bytes() == first


# ---------------------------------------------------------------------------
# train / evaluate / report

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("train")
    cfg = write_config(tmp)
    assert cli.run(["generate", "--config", cfg]) == 0
    assert cli.run(["train", "--config", cfg]) == 0
    return tmp, cfg


def test_train_writes_checkpoints_histories_and_table(trained):
    tmp, _ = trained
    run = tmp / "run"
    for kind in ("don", "sdon", "fno"):
        assert (run / "checkpoints" / "advection" / f"{kind}_s0.ckpt").exists()
        hist = (run / "checkpoints" / "advection" / f"{kind}_s0_history.csv").read_text()
        assert hist.splitlines()[0] == "epoch,train_loss,val_rel_l1,config_hash"
        assert len(hist.splitlines()) == 1 + 4
    header = (run / "table_test.csv").read_text().splitlines()[0]
    assert header == ",".join(cli.TABLE_HEADER)


def test_train_rerun_identical(trained, tmp_path):
    tmp, cfg = trained
    first = (tmp / "run" / "table_test.csv").read_bytes()
    ckpt = (tmp / "run" / "checkpoints" / "advection" / "sdon_s0.ckpt").read_bytes()
    assert cli.run(["train", "--config", cfg, "--threads", "2"]) == 0
    assert (tmp / "run" / "table_test.csv").read_bytes() == first
    assert (tmp / "run" / "checkpoints" / "advection" / "sdon_s0.ckpt").read_bytes() == ckpt


def test_evaluate_other_split(trained):
    tmp, cfg = trained
    assert cli.run(["evaluate", "--config", cfg, "--split", "train"]) == 0
    row = json.loads((tmp / "run" / "eval" / "advection" / "don_s0_train.json").read_text())
    assert row["n"] == 12 and row["split"] == "train"


def test_evaluate_rejects_checkpoint_from_other_config(trained, tmp_path):
    tmp, _ = trained
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(dict(TINY, output=str(tmp / "run"),
                                   train={"epochs": 5, "batch_size": 4, "val_every": 1})))
    assert cli.run(["evaluate", "--config", str(cfg)]) == cli.EXIT_CONFIG


def test_report_aggregates_and_checks_ordering(trained):
    tmp, _ = trained
    out = tmp / "rep"
    assert cli.run(["report", str(tmp / "run"), "-o", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert {r["model"] for r in doc["rows"]} == {"don", "sdon", "fno"}
    assert "advection" in doc["ordering"]
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == ",".join(cli.REPORT_HEADER) and len(lines) == 4


def test_report_refuses_mismatched_hashes(trained, tmp_path):
    tmp, _ = trained
    src = tmp / "run" / "eval" / "advection" / "don_s0_test.json"
    row = json.loads(src.read_text())
    other = tmp_path / "other.json"
    other.write_text(json.dumps(dict(row, config_hash="0" * 16)))
    assert cli.run(["report", str(src), str(other), "-o", str(tmp_path)]) == cli.EXIT_CONFIG
    assert not (tmp_path / "report.csv").exists()


def test_report_missing_inputs_is_io_error(tmp_path):
    assert cli.run(["report", str(tmp_path / "absent"), "-o", str(tmp_path)]) == cli.EXIT_IO


def test_train_without_data_is_io_error(tmp_path):
    cfg = write_config(tmp_path)
    assert cli.run(["train", "--config", cfg]) == cli.EXIT_IO


def test_train_divergence_exit_code(tmp_path):
    cfg = write_config(tmp_path, train={"epochs": 3, "batch_size": 4, "lr": 1e300})
    assert cli.run(["generate", "--config", cfg]) == 0
    assert cli.run(["train", "--config", cfg, "--models", "don"]) == cli.EXIT_NUMERIC
    hist = tmp_path / "run" / "checkpoints" / "advection" / "don_s0_history.csv"
    assert hist.exists()


def test_ordering_helper():
    rows = [{"benchmark": "b", "seed": 0, "model": k, "median": v}
            for k, v in (("fno", 0.01), ("sdon", 0.05), ("don", 0.2))]
    rows += [{"benchmark": "b", "seed": 1, "model": k, "median": v}
             for k, v in (("fno", 0.01), ("sdon", 0.011), ("don", 0.2))]
    res = cli.ordering(rows)["b"]
    assert res["seeds"]["0"]["holds"] and not res["seeds"]["1"]["holds"]
    assert res["n_holds"] == 1
