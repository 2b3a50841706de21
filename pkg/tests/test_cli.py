import csv

import pytest

from ordquant.cli import main

SYNTH = "[synth]\nsignal = S1:3:0.6\nnoise = N1:4,N2:4\nper_class = 120\n"
RUN = """[run]
quantifier = emq
seed = 2
[paths]
features = data/features.csv
labels = data/labels.csv
schema = data/schema.ini
unlabelled = data/features.csv
[protocol]
repetitions = 1
batch_size = 200
batch_count = 2
app_samples = 15
app_sample_size = 100
val_samples = 10
val_sample_size = 80
grid_regs = 1.0
grid_weightings = uniform
[selection]
initial = all
"""


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "synth.ini").write_text(SYNTH)
    (tmp_path / "run.ini").write_text(RUN)
    assert main(["synth", "--config", str(tmp_path / "synth.ini"), "--out", str(tmp_path / "data")]) == 0
    return tmp_path


def test_missing_config(tmp_path, capsys):
    assert main(["stress", "--config", str(tmp_path / "nope.ini")]) != 0
    assert capsys.readouterr().err.startswith("error: config-not-found:")


def test_missing_paths_is_config_error(tmp_path, capsys):
    (tmp_path / "empty.ini").write_text("[run]\nseed = 1\n")
    assert main(["stress", "--config", str(tmp_path / "empty.ini"), "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith("error: config:")


def test_stress_row_count(workspace):
    out = workspace / "stress"
    assert main(["stress", "--config", str(workspace / "run.ini"), "--out", str(out), "--threads", "1"]) == 0
    with open(out / "eval.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 2 * 15
    assert rows[0][-1] == "nmd"
    assert (out / "summary.txt").read_text().startswith("quantifier emq")


def test_quantify(workspace):
    out = workspace / "q"
    assert main(["quantify", "--config", str(workspace / "run.ini"), "--out", str(out), "--quantifier", "pacc"]) == 0
    with open(out / "prevalence.csv") as fh:
        rows = list(csv.reader(fh))[1:]
    assert len(rows) == 5 and abs(sum(float(r[1]) for r in rows) - 1) < 1e-9
    assert (out / "model.json").exists()


def test_select_then_report(workspace, capsys):
    runs = []
    for task, seed in (("activity", "2"), ("toxicity", "3")):
        out = workspace / task
        args = ["select", "--config", str(workspace / "run.ini"), "--out", str(out), "--task", task, "--seed", seed]
        assert main(args) == 0
        assert (out / "selection.txt").read_text().strip()
        for name in ("trace.csv", "order.csv", "initial.csv", "run.ini"):
            assert (out / name).exists()
        runs.append(str(out))
    rep = workspace / "report"
    assert main(["report", *runs, "--out", str(rep)]) == 0
    with open(rep / "overlap.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["task_a"], r["task_b"]) for r in rows] == [("activity", "toxicity")]
    sel = [set((workspace / t / "selection.txt").read_text().split()) for t in ("activity", "toxicity")]
    assert float(rows[0]["jaccard"]) == pytest.approx(len(sel[0] & sel[1]) / len(sel[0] | sel[1]))
    text = (rep / "report.txt").read_text()
    assert "MNMD all" in text and "activity" in text
    assert (rep / "importance_activity.csv").exists() and (rep / "heatmap.csv").exists()


def test_label_command(tmp_path):
    assert main(["synth", "--kind", "comments", "--out", str(tmp_path / "c"), "--seed", "1"]) == 0
    (tmp_path / "lab.ini").write_text("[paths]\ncomments = c/comments.jsonl\nfeatures = c/features.csv\nschema = c/schema.ini\n")
    for task in ("activity", "toxicity", "diversity"):
        out = tmp_path / task
        assert main(["label", "--config", str(tmp_path / "lab.ini"), "--task", task, "--out", str(out)]) == 0
        with open(out / "labels.csv") as fh:
            got = {r["id"]: r["label"] for r in csv.DictReader(fh)}
        with open(tmp_path / "c" / "expected_labels.csv") as fh:
            expected = {r["id"]: r[task] for r in csv.DictReader(fh)}
        assert got == expected
