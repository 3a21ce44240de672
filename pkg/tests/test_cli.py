import csv
import filecmp
import json
import subprocess
import sys

import numpy as np
import pytest

from czhash.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from czhash.dataset import load_dataset, load_split
from czhash.encoder import encode_features
from czhash.experiment import load_checkpoint
from czhash.retrieval import load_codes_packed, load_codes_text
from czhash.trainer import least_squares_category, sign_codes

SMALL = ["--n", "60", "--c", "6", "--d", "4", "--d1", "6", "--d2", "5"]
FAST = ["--iterations", "3", "--hidden-dims", "8", "--bits", "8"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def data(tmp_path):
    assert run("generate", *SMALL, "--seed", 3, "--out", tmp_path / "ds") == EXIT_OK
    return tmp_path / "ds"


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_generate_is_deterministic_and_loadable(tmp_path):
    for name in ("a", "b"):
        assert run("generate", "--n", 200, "--c", 10, "--seed", 7, "--out", tmp_path / name) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert mismatch == [] and errors == []
    assert load_dataset(tmp_path / "a").n == 200
    assert "seed = 7" in (tmp_path / "a" / "config.resolved").read_text()


def test_generate_overlap_gives_two_universes(tmp_path):
    run("generate", "--n", 100, "--c", 10, "--label-space-overlap", 0.5, "--out", tmp_path / "ds")
    ds = load_dataset(tmp_path / "ds")
    u1, u2 = set(ds.modality1.label_universe), set(ds.modality2.label_universe)
    assert len(u1 & u2) == 5 and len(u1 | u2) == 10


def test_split_subcommand(tmp_path, data):
    assert run("split", "--data", data, "--scenario", "C", "--seed", 1, "--out", tmp_path / "s.json") == 0
    split = load_split(tmp_path / "s.json")
    assert split.scenario == "C" and split.masked


def test_train_log_and_loss(tmp_path, data):
    out = tmp_path / "model"
    assert run("train", "--data", data, "--iterations", 15, "--bits", 8, "--out", out) == 0
    log = [json.loads(line) for line in (out / "train_log.jsonl").read_text().splitlines()]
    assert log[0]["ablation"] == "full" and log[0]["similarity"] == "composite"
    epochs = log[1:]
    assert [e["epoch"] for e in epochs] == list(range(1, 16))
    assert epochs[-1]["total"] < epochs[0]["total"]
    assert (out / "config.resolved").is_file() and (out / "VERSION").is_file()


def test_train_ablation_flag_is_logged(tmp_path, data):
    out = tmp_path / "model"
    assert run("train", "--data", data, *FAST, "--ablation", "nFS", "--out", out) == 0
    header = json.loads((out / "train_log.jsonl").read_text().splitlines()[0])
    assert header == {"epoch": 0, "ablation": "nFS", "similarity": "label"}
    assert load_checkpoint(out).trainer.ablation == "nFS"


def test_zero_iterations_checkpoint_is_initialisation(tmp_path, data):
    out = tmp_path / "model"
    assert run("train", "--data", data, "--iterations", 0, "--bits", 8, "--out", out) == 0
    model = load_checkpoint(out)
    ds = load_dataset(data)
    train = list(model.split.train)
    a = ds.attributes.vectors
    st = model.state
    assert st.iteration == 0
    np.testing.assert_array_equal(st.f1, encode_features(model.params1, ds.modality1.features[train]))
    np.testing.assert_array_equal(st.f2, encode_features(model.params2, ds.modality2.features[train]))
    np.testing.assert_array_equal(st.c1, least_squares_category(st.f1, a, model.trainer.ridge))
    np.testing.assert_array_equal(st.w1, st.w2)
    np.testing.assert_array_equal(st.codes, sign_codes(st.c1 @ st.w1 + st.c2 @ st.w2))
    # no training, so the untouched biases are still zero
    assert all(not b.any() for b in model.params1.biases)


def test_dump_similarity(tmp_path, data):
    run("train", "--data", data, *FAST, "--out", tmp_path / "m", "--dump-similarity", tmp_path / "sim")
    s12 = np.loadtxt(tmp_path / "sim" / "s12.csv", delimiter=",")
    assert s12.shape[0] == s12.shape[1] and ((s12 >= 0) & (s12 <= 1)).all()


def test_encode_and_retrieve(tmp_path, data):
    run("train", "--data", data, *FAST, "--out", tmp_path / "m")
    assert run("encode", "--checkpoint", tmp_path / "m", "--data", data, "--modality", 2,
               "--out", tmp_path / "db.bin", "--format", "packed") == 0
    assert run("encode", "--checkpoint", tmp_path / "m", "--data", data, "--modality", 1,
               "--rows", "test", "--out", tmp_path / "q.txt") == 0
    db = load_codes_packed(tmp_path / "db.bin")
    q = load_codes_text(tmp_path / "q.txt")
    assert db.n == 60 and db.bits == 8 and q.shape == (12, 8)
    assert run("retrieve", "--database", tmp_path / "db.bin", "--queries", tmp_path / "q.txt",
               "--k", 5, "--out", tmp_path / "ranked.txt") == 0
    ranked = [list(map(int, line.split())) for line in (tmp_path / "ranked.txt").read_text().splitlines()]
    assert len(ranked) == 12 and all(len(r) == 5 for r in ranked)
    dist = [(db.codes[j] != q[0]).sum() for j in ranked[0]]
    assert dist == sorted(dist)


def test_evaluate_checkpoint_reports_both_directions(tmp_path, data):
    run("train", "--data", data, *FAST, "--out", tmp_path / "m")
    out = tmp_path / "eval"
    assert run("evaluate", "--checkpoint", tmp_path / "m", "--data", data, "--out", out) == 0
    table = rows(out / "results.csv")
    assert {r["direction"] for r in table} == {"img_to_txt", "txt_to_img"}
    assert all(0.0 <= float(r["map"]) <= 1.0 for r in table)


def test_evaluate_missing_checkpoint(tmp_path, data):
    code = run("evaluate", "--checkpoint", tmp_path / "nope", "--data", data, "--out", tmp_path / "e")
    assert code == EXIT_DATA


def test_evaluate_pipeline_table_layout(tmp_path, data):
    out = tmp_path / "eval"
    assert run("evaluate", "--data", data, *FAST[:4], "--bits", "4,8", "--scenarios", "A,B",
               "--repeats", 1, "--out", out) == 0
    table = rows(out / "results.csv")
    assert list(table[0]) == ["scenario", "direction", "bits", "map", "std", "runs"]
    assert len(table) == 2 * 2 * 2


def test_sweep_alpha_five_rows(tmp_path, data):
    out = tmp_path / "sw"
    assert run("sweep", "--data", data, *FAST, "--repeats", 1, "--param", "alpha",
               "--values", "0.01,0.1,1,10,100", "--out", out) == 0
    table = [r for r in rows(out / "sweep.csv") if r["direction"] == "img_to_txt"]
    assert [float(r["value"]) for r in table] == [0.01, 0.1, 1.0, 10.0, 100.0]


def test_sweep_is_deterministic(tmp_path, data):
    for name in ("a", "b"):
        run("sweep", "--data", data, *FAST, "--repeats", 1, "--param", "beta",
            "--values", "0.1,1", "--out", tmp_path / name)
    assert (tmp_path / "a/sweep.csv").read_bytes() == (tmp_path / "b/sweep.csv").read_bytes()


def test_ablate_subcommand(tmp_path, data):
    out = tmp_path / "ab"
    assert run("ablate", "--data", data, *FAST, "--repeats", 1, "--scenarios", "C",
               "--variants", "full,nLS", "--out", out) == 0
    assert {r["ablation"] for r in rows(out / "ablation.csv")} == {"full", "nLS"}


def test_config_file_with_flag_override(tmp_path, data):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("alpha = 7.0\nbeta = 0.25\n")
    out = tmp_path / "m"
    assert run("train", "--config", cfg, "--data", data, *FAST, "--alpha", 2, "--out", out) == 0
    trainer = load_checkpoint(out).trainer
    assert (trainer.alpha, trainer.beta) == (2.0, 0.25)


@pytest.mark.parametrize("argv, code", [
    ([], EXIT_USAGE),
    (["train"], EXIT_USAGE),
    (["sweep", "--param", "gamma", "--values", "1"], EXIT_USAGE),
    (["generate", "--alpha", "1", "--out", "x"], EXIT_USAGE),
    (["generate", "--n", "lots", "--out", "x"], EXIT_USAGE),
    (["train", "--data", "/nonexistent/ds", "--out", "x"], EXIT_DATA),
])
def test_exit_codes(argv, code, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_numeric(tmp_path, data):
    code = run("train", "--data", data, *FAST, "--learning-rate", "1e300", "--alpha", "1e300",
               "--out", tmp_path / "m")
    assert code == EXIT_NUMERIC


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "czhash.cli", "--version"],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.startswith("czhash ")
