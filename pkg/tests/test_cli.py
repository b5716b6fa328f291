import json

import pytest

from deeperbind.cli import main
from deeperbind.encoding import one_hot

TRAIN = ["--model", "deepbind", "--filters", "2", "--width", "5", "--max-epochs", "3", "--learning-rate", "1e-2"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_no_command_and_missing_data_are_usage_errors(capsys, tmp_path):
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["train", "--out", str(tmp_path)])
    assert e.value.code == 2
    assert "--data" in capsys.readouterr().err


def test_encode(capsys, tmp_path):
    code, out, _ = run(capsys, "encode", "-s", "acgn")
    rec = json.loads(out)
    assert code == 0 and rec["sequence"] == "ACGN" and rec["rows"] == "ACGT"
    assert rec["matrix"] == one_hot("ACGN").tolist()
    f = tmp_path / "seqs.txt"
    f.write_text("AC\nGT\n")
    code, out, _ = run(capsys, "encode", "--input", f)
    assert [r["sequence"] for r in json.loads(out)] == ["AC", "GT"]
    code, _, err = run(capsys, "encode", "-s", "AXC")
    assert code == 1 and "position 1" in err


def test_generate(capsys, tmp_path):
    out = tmp_path / "syn.tsv"
    code, _, _ = run(capsys, "generate", "--dataset", "positional", "--n", 50, "--length", 20, "--out", out)
    assert code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 51
    side = json.loads((tmp_path / "syn.tsv.json").read_text())
    assert side["normalization"]["kind"] == "zscore"
    again = tmp_path / "again.tsv"
    run(capsys, "generate", "--dataset", "positional", "--n", 50, "--length", 20, "--out", again)
    assert again.read_bytes() == out.read_bytes()


def test_train_writes_report_and_checkpoint_deterministically(capsys, tmp_path, tail_tsv):
    for d in ("a", "b"):
        code, _, _ = run(capsys, "train", "--data", tail_tsv, *TRAIN, "--out", tmp_path / d)
        assert code == 0
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert -1.0 <= report["best_spearman"] <= 1.0
    for name in ("report.json", "checkpoint.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ckpt = json.loads((tmp_path / "a" / "checkpoint.json").read_text())
    assert ckpt["metadata"]["normalization"]["kind"] == "zscore"


def test_train_rejects_out_of_range_hyperparameters(capsys, tmp_path, tail_tsv):
    code, _, err = run(capsys, "train", "--data", tail_tsv, *TRAIN, "--dropout", "0.9", "--out", tmp_path)
    assert code == 1 and "dropout" in err


def test_grid(capsys, tmp_path, tail_tsv):
    code, out, _ = run(capsys, "grid", "--data", tail_tsv, "--model", "deepbind", "--filters", 2, "--width", 5,
                       "--max-epochs", 2, "--out", tmp_path)
    assert code == 0 and "best cell" in out
    best = json.loads((tmp_path / "best_report.json").read_text())
    assert -1.0 <= best["best_spearman"] <= 1.0
    assert (tmp_path / "checkpoint.json").exists() and (tmp_path / "cells" / "manifest.json").exists()


def test_evaluate_writes_all_artifacts(capsys, tmp_path, tail_tsv, tail_tsv_test):
    run(capsys, "train", "--data", tail_tsv, *TRAIN, "--out", tmp_path / "m")
    out = tmp_path / "eval"
    code, stdout, _ = run(capsys, "evaluate", "--checkpoint", tmp_path / "m" / "checkpoint.json",
                          "--data", tail_tsv_test, "--k", 10, "--out", out)
    assert code == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert -1.0 <= metrics["spearman"] <= 1.0 and 0.0 <= metrics["auc"] <= 1.0
    assert 0.0 <= metrics["tpr_at_1pct_fpr"] <= 1.0 and metrics["positives"] > 0
    for name in ("roc.csv", "scatter.csv", "rankchart.csv", "roc.svg", "scatter.svg", "rankchart.svg"):
        assert (out / name).stat().st_size > 0
    assert json.loads(stdout)["spearman"] == metrics["spearman"]


def test_evaluate_on_own_training_data(capsys, tmp_path, tail_tsv):
    run(capsys, "train", "--data", tail_tsv, *TRAIN, "--out", tmp_path / "m")
    code, _, _ = run(capsys, "evaluate", "--checkpoint", tmp_path / "m" / "checkpoint.json", "--data", tail_tsv,
                     "--out", tmp_path / "e")
    assert code == 0
    assert -1.0 <= json.loads((tmp_path / "e" / "metrics.json").read_text())["spearman"] <= 1.0


def test_evaluate_failures(capsys, tmp_path, tail_tsv):
    bad = tmp_path / "broken.json"
    bad.write_text('{"format": ')
    code, _, err = run(capsys, "evaluate", "--checkpoint", bad, "--data", tail_tsv, "--out", tmp_path / "e")
    assert code == 1 and "broken.json" in err
    run(capsys, "train", "--data", tail_tsv, *TRAIN, "--out", tmp_path / "m")
    empty = tmp_path / "empty.tsv"
    empty.write_text("")
    code, _, err = run(capsys, "evaluate", "--checkpoint", tmp_path / "m" / "checkpoint.json", "--data", empty,
                       "--out", tmp_path / "e")
    assert code == 1 and "empty.tsv" in err


def test_plot_roundtrip_and_determinism(capsys, tmp_path):
    roc_csv = tmp_path / "roc.csv"
    roc_csv.write_text("fpr,tpr\n0,0\n0,1\n1,1\n")
    for name in ("a.svg", "b.svg"):
        code, _, _ = run(capsys, "plot", roc_csv, "--label", "perfect", "--out", tmp_path / name)
        assert code == 0
    svg = (tmp_path / "a.svg").read_text()
    assert svg == (tmp_path / "b.svg").read_text()
    assert 'points="80,530 80,50 770,50"' in svg and "AUC 1.000" in svg
    rank_csv = tmp_path / "rank.csv"
    rank_csv.write_text("probe_index,measured,predicted_rank\n4,3.5,1\n2,3.1,7\n")
    code, _, _ = run(capsys, "plot", rank_csv, "--n", 50, "--out", tmp_path / "r.svg")
    assert code == 0 and (tmp_path / "r.svg").read_text().count("<circle") == 2


def test_plot_rejects_malformed_header(capsys, tmp_path):
    f = tmp_path / "odd.csv"
    f.write_text("false_pos,true_pos\n0,0\n1,1\n")
    code, _, err = run(capsys, "plot", f, "--out", tmp_path / "x.svg")
    assert code == 1 and "columns" in err and "fpr" in err
    assert not (tmp_path / "x.svg").exists()


def test_config_file_supplies_flags(capsys, tmp_path, tail_tsv):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"data = {tail_tsv}\nmodel = deepbind\nfilters = 2\nwidth = 5\nmax-epochs = 2\n"
                   f"learning_rate = 0.01\nout = {tmp_path / 'cfg'}\n")
    code, _, _ = run(capsys, "--config", cfg, "train")
    assert code == 0
    report = json.loads((tmp_path / "cfg" / "report.json").read_text())
    assert report["hyperparams"]["max_epochs"] == 2
    # the command line wins over the config file
    code, _, _ = run(capsys, "--config", cfg, "train", "--max-epochs", 1)
    assert json.loads((tmp_path / "cfg" / "report.json").read_text())["hyperparams"]["max_epochs"] == 1


def test_experiment_subcommand(capsys, tmp_path):
    spec = tmp_path / "exp.json"
    spec.write_text(json.dumps({"dataset": "standard", "n_probes": 300, "probe_length": 20, "models": ["deepbind"],
                                "grid": [{"learning_rate": 0.01}], "max_epochs": 2, "n_filters": 2, "width": 5}))
    code, out, _ = run(capsys, "experiment", "--spec", spec, "--seed", 2, "--out", tmp_path / "x")
    assert code == 0 and "deepbind: test Spearman" in out
    result = json.loads((tmp_path / "x" / "result.json").read_text())
    assert result["provenance"]["seed"] == 2
    with pytest.raises(SystemExit) as e:
        main(["experiment", "--spec", str(spec)])
    assert e.value.code == 2
