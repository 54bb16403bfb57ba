import csv

import numpy as np
import pytest

from tsrep.cli import main

TINY = """\
[data.synthetic]
num_records = 40
task = band_power
[encoder.stem]
out_dims = [16, 16, 16, 16]
[encoder.backbone]
model_dim = 16
depth = 2
causal = true
[train]
epochs = 1
batch_size = 32
[eval]
epochs = 2
num_heads = 2
fractions = [1.0, 0.5]
[analysis]
cka_num_samples = 50
bootstrap_resamples = 100
"""


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.cfg").write_text(TINY)
    assert main(["synth-data", "--config", str(root / "tiny.cfg"), "--out", str(root / "syn")]) == 0
    for run, seed in (("run1", 0), ("run2", 1)):
        argv = ["pretrain", "--config", str(root / "tiny.cfg"), "--set", f"train.seed={seed}", "--set", f"encoder.seed={seed}"]
        assert main(argv + ["--data", str(root / "syn" / "manifest.tsv"), "--out", str(root / run)]) == 0
    return root


def _run(ws, *argv):
    return main([argv[0], "--config", str(ws / "tiny.cfg"), *argv[1:]])


def test_synth_and_pretrain_outputs(ws):
    assert (ws / "syn" / "manifest.tsv").is_file()
    for name in ("checkpoint/manifest.json", "train_loss.csv", "val_loss.csv", "config.cfg"):
        assert (ws / "run1" / name).is_file(), name
    echo = (ws / "run1" / "config.cfg").read_text()
    assert "seed = 0" in echo and "model_dim = 16" in echo


def test_continual(ws, tmp_path):
    ck = str(ws / "run1" / "checkpoint")
    data = str(ws / "syn" / "manifest.tsv")
    assert _run(ws, "continual", "--checkpoint", ck, "--data", data, "--out", str(tmp_path / "c")) == 0
    assert (tmp_path / "c" / "checkpoint" / "manifest.json").is_file()
    assert _run(ws, "continual", "--checkpoint", ck, "--data", data, "--objective", "jepa", "--out", str(tmp_path / "d")) == 2


@pytest.mark.parametrize("mode", ["linear", "frozen", "finetune"])
def test_evaluate(ws, tmp_path, mode):
    out = tmp_path / mode
    argv = ["evaluate", "--checkpoint", str(ws / "run1" / "checkpoint"), "--task", str(ws / "syn" / "manifest.tsv")]
    assert _run(ws, *argv, "--mode", mode, "--out", str(out)) == 0
    for name in ("metrics.csv", "summary.json", "predictions.f32", "labels.f32", "config.cfg"):
        assert (out / name).is_file(), name


def test_label_efficiency_and_rank(ws, tmp_path):
    task = str(ws / "syn" / "manifest.tsv")
    for run in ("run1", "run2"):
        argv = ["label-eff", "--checkpoint", str(ws / run / "checkpoint"), "--task", task, "--mode", "linear", "--name", run]
        assert _run(ws, *argv, "--out", str(tmp_path / f"le_{run}")) == 0
    rows = list(csv.DictReader(open(tmp_path / "le_run1" / "label_efficiency.csv")))
    assert [r["fraction"] for r in rows] == ["1.0", "0.5"]
    assert (tmp_path / "le_run1" / "label_efficiency.png").is_file()

    inputs = [str(tmp_path / f"le_{r}" / "label_efficiency.csv") for r in ("run1", "run2")]
    assert _run(ws, "analyze", "label-efficiency", "--in", *inputs, "--out", str(tmp_path / "lea")) == 0
    models = {r["model"] for r in csv.DictReader(open(tmp_path / "lea" / "label_efficiency.csv"))}
    assert models == {"run1", "run2"}

    reports = [str(tmp_path / f"le_{r}" / "fraction_1") for r in ("run1", "run2")]
    assert _run(ws, "analyze", "rank", "--in", *reports, "--names", "a", "b", "--out", str(tmp_path / "rk")) == 0
    ranks = list(csv.DictReader(open(tmp_path / "rk" / "ranks.csv")))
    assert [r["model"] for r in ranks] == ["a", "b"] and all(r["rank"] in ("1", "2") for r in ranks)


def test_cka_is_reproducible(ws, tmp_path):
    argv = ["analyze", "cka", "--in", str(ws / "run1" / "checkpoint"), str(ws / "run2" / "checkpoint"), "--probe", str(ws / "syn" / "manifest.tsv")]
    assert _run(ws, *argv, "--out", str(tmp_path / "a")) == 0
    assert _run(ws, *argv, "--out", str(tmp_path / "b")) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "cka_layers_run1.csv" in files and "cka_stage_late.png" in files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    rows = list(csv.reader(open(tmp_path / "a" / "cka_layers_run1.csv")))
    assert rows[0][0] == "layer" and len(rows) == 1 + 6


def test_scaling_and_spearman(tmp_path, monkeypatch):
    monkeypatch.setenv("TSREP_OUT_ROOT", str(tmp_path / "root"))
    n = np.array([1e3, 4e3, 1.6e4, 6.4e4, 2.56e5])
    with open(tmp_path / "losses.csv", "w") as fh:
        fh.write("N,loss\n" + "".join(f"{a:g},{float(3 * a**-0.2 + 0.4)!r}\n" for a in n))
    assert main(["analyze", "scaling", "--in", str(tmp_path / "losses.csv")]) == 0
    out = tmp_path / "root" / "analyze-scaling"
    fit = next(csv.DictReader(open(out / "fits.csv")))
    assert float(fit["alpha"]) == pytest.approx(0.2, rel=1e-5) and fit["model"] == "power_plus_floor"
    assert (out / "fit_losses.png").is_file() and (out / "config.cfg").is_file()

    (tmp_path / "sp.csv").write_text("x,y\n1,2\n2,4\n3,5\n4,9\n5,10\n")
    argv = ["analyze", "spearman", "--in", str(tmp_path / "sp.csv"), "--method", "exact", "--alternative", "greater"]
    assert main(argv) == 0
    row = next(csv.DictReader(open(tmp_path / "root" / "analyze-spearman" / "spearman.csv")))
    assert float(row["r"]) == 1.0 and float(row["p"]) == pytest.approx(1 / 120, abs=1e-15)


def test_exit_codes(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("TSREP_OUT_ROOT", raising=False)
    assert main(["synth-data", "--bogus"]) == 2
    assert main(["synth-data", "--set", "data.synthetic.colour=red", "--out", str(tmp_path / "x")]) == 2
    assert "colour" in capsys.readouterr().err
    assert main(["synth-data"]) == 2  # no --out and no output root
    assert main(["pretrain", "--data", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "p")]) == 3
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert err.startswith("tsrep: error: data: ")
    (tmp_path / "bad.csv").write_text("N,loss\n1,x\n")
    assert main(["analyze", "scaling", "--in", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "s")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["synth-data", "--out", str(blocker / "sub")]) == 5
    assert main(["--help"]) == 0
