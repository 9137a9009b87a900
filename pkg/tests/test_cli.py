import csv
import json

import numpy as np
import pytest

from ecgmatch import cli
from ecgmatch.cli import REPORT_HEADER, main


def smoke_config(tmp_path, out_name="run", **overrides):
    doc = {
        "output_dir": str(tmp_path / out_name),
        "seeds": [0],
        "data": {"synth": {"n_samples": 200, "channels": 2, "signal_length": 64,
                           "noise_level": 0.2, "seed": 0}},
        "split": {"protocol": "within", "labeled_frac": 0.2},
        "train": {
            "batch_labeled": 16, "batch_unlabeled": 32, "max_epochs": 2, "patience": 2,
            "hidden_dims": [32], "feature_dim": 16, "head_hidden": 16, "pool_len": 8,
            "pretrain_max_epochs": 3, "pretrain_patience": 2,
            "knn": {"k": 5}, "optimizer": {"max_steps": 100},
        },
    }
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path, doc


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_missing_config_exits_2(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2


def test_run_unknown_key_exits_2(tmp_path):
    path, doc = smoke_config(tmp_path)
    doc["trian"] = {}
    path.write_text(json.dumps(doc))
    assert main(["run", "--config", str(path)]) == 2


def test_run_smoke_writes_reports_with_finite_metrics(tmp_path, capsys):
    path, doc = smoke_config(tmp_path)
    assert main(["run", "--config", str(path)]) == 0
    rows = read_csv(tmp_path / "run" / "reports.csv")
    assert rows[0] == REPORT_HEADER
    assert len(rows) == 2  # header + one seed
    values = [float(v) for v in rows[1][3:9]]
    assert all(np.isfinite(values))
    log_rows = read_csv(tmp_path / "run" / "train_log_seed0.csv")
    assert log_rows[0] == ["step", "epoch", "lb", "lu", "lf", "lr", "val_metric"]
    assert (tmp_path / "run" / "checkpoints" / "student_seed0.bin").exists()


def test_run_outputs_are_byte_identical_for_same_config(tmp_path):
    path_a, _ = smoke_config(tmp_path, out_name="a")
    assert main(["run", "--config", str(path_a)]) == 0
    path_b, doc = smoke_config(tmp_path, out_name="b")
    assert main(["run", "--config", str(path_b)]) == 0
    a = (tmp_path / "a" / "reports.csv").read_bytes()
    b = (tmp_path / "b" / "reports.csv").read_bytes()
    assert a == b


def test_eval_known_fixture(tmp_path, capsys):
    scores = tmp_path / "scores.csv"
    labels = tmp_path / "labels.csv"
    scores.write_text("0.9,0.8,0.7,0.1,0.05\n")
    labels.write_text("1,0,1,0,0\n")
    assert main(["eval", "--scores", str(scores), "--labels", str(labels),
                 "--out", str(tmp_path / "eval")]) == 0
    out = capsys.readouterr().out
    assert "coverage: 3.000000" in out
    assert "ranking_loss: 0.166667" in out  # one mispair of six
    rows = read_csv(tmp_path / "eval" / "metrics_report.csv")
    assert rows[0][0] == "ranking_loss"


def test_eval_shape_mismatch_exits_2(tmp_path):
    scores = tmp_path / "s.csv"
    labels = tmp_path / "l.csv"
    scores.write_text("0.9,0.1\n")
    labels.write_text("1,0,1\n")
    assert main(["eval", "--scores", str(scores), "--labels", str(labels)]) == 2


def test_eval_non_numeric_cell_exits_2(tmp_path):
    scores = tmp_path / "s.csv"
    labels = tmp_path / "l.csv"
    scores.write_text("0.9,oops\n")
    labels.write_text("1,0\n")
    assert main(["eval", "--scores", str(scores), "--labels", str(labels)]) == 2


def _write_reports(path, model, per_dataset_values):
    """One reports.csv with a fixed metric value per dataset; all six metrics equal."""
    rows = []
    for dataset, value in per_dataset_values.items():
        for seed in (0, 1):
            rows.append([model, dataset, str(seed)] + [repr(value)] * 6 + ["0"] * 4)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        writer.writerows(rows)


def test_compare_reference_cd_and_verdicts(tmp_path, capsys):
    # 8 models over 4 datasets; model_0 best everywhere, worst models far behind
    datasets = ["d1", "d2", "d3", "d4"]
    for j in range(8):
        _write_reports(tmp_path / f"reports_m{j}.csv", f"model_{j}",
                       {d: 1.0 - 0.1 * j for d in datasets})
    code = main(["compare", "--reports", str(tmp_path / "reports_m*.csv"),
                 "--control", "model_0", "--out", str(tmp_path / "cmp")])
    assert code == 0
    out = capsys.readouterr().out
    assert "4.6592" in out
    rows = read_csv(tmp_path / "cmp" / "comparison.csv")
    assert rows[0] == cli.COMPARISON_HEADER
    by_model = {r[1]: r for r in rows[1:] if r[0] == "map"}
    # distance in mean ranks between rank 1 and rank 8 is 7 >= CD
    assert by_model["model_7"][4] == "true"
    assert by_model["model_1"][4] == "false"
    assert float(by_model["model_0"][8]) == 3.2590  # reference critical value surfaced
    assert (tmp_path / "cmp" / "cd_plot.csv").exists()


def test_compare_identical_models_nothing_significant(tmp_path, capsys):
    for j in range(3):
        _write_reports(tmp_path / f"r{j}.csv", f"m{j}", {"d1": 0.5, "d2": 0.5})
    assert main(["compare", "--reports", str(tmp_path / "r*.csv"), "--control", "m0",
                 "--out", str(tmp_path / "cmp")]) == 0
    rows = read_csv(tmp_path / "cmp" / "comparison.csv")
    assert all(r[4] in ("false", "control") for r in rows[1:])
    assert all(float(r[6]) == 0.0 for r in rows[1:])  # F statistic 0 on identical ranks


def test_compare_missing_cells_exits_2(tmp_path, capsys):
    _write_reports(tmp_path / "r0.csv", "m0", {"d1": 0.5, "d2": 0.5})
    _write_reports(tmp_path / "r1.csv", "m1", {"d1": 0.5})
    assert main(["compare", "--reports", str(tmp_path / "r*.csv"), "--control", "m0"]) == 2
    err = capsys.readouterr().err
    assert "m1" in err and "d2" in err


def test_compare_needs_two_models_and_datasets(tmp_path):
    _write_reports(tmp_path / "r0.csv", "m0", {"d1": 0.5, "d2": 0.5})
    assert main(["compare", "--reports", str(tmp_path / "r0.csv"), "--control", "m0"]) == 2


def test_annotate_known_lines(tmp_path, capsys):
    terms = tmp_path / "terms.txt"
    terms.write_text(
        "atrial fibrillation;right bundle branch block\n"
        "sinus rhythm\n"
        "sinus rhythm;st depression\n"
    )
    assert main(["annotate", "--terms", str(terms)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[1].endswith("-> 1,0,1,0,0")
    assert out[2].endswith("-> 0,0,0,0,1")
    assert out[3].endswith("-> 0,1,0,0,0")


def test_annotate_unknown_term_exits_1(tmp_path, capsys):
    terms = tmp_path / "terms.txt"
    terms.write_text("totally unknown condition\n")
    with pytest.warns(UserWarning):
        code = main(["annotate", "--terms", str(terms)])
    assert code == 1
    assert "unmappable" in capsys.readouterr().err


def test_synth_writes_dataset_and_manifest(tmp_path, capsys):
    config, doc = smoke_config(tmp_path)
    doc["data"]["synth"]["n_samples"] = 5000
    config.write_text(json.dumps(doc))
    out_file = tmp_path / "ds.csv"
    assert main(["synth", "--config", str(config), "--out-file", str(out_file)]) == 0
    manifest = json.loads((tmp_path / "ds.csv.manifest.json").read_text())
    marginals = np.array(manifest["empirical_marginals"])
    np.testing.assert_allclose(marginals, [0.35, 0.3, 0.25, 0.3, 0.2], atol=0.02)
    corr = np.array(manifest["empirical_label_correlation"])
    np.testing.assert_allclose(corr, corr.T)
    np.testing.assert_allclose(np.diag(corr), 1.0)


def test_synth_byte_identical_given_seed(tmp_path):
    config, _ = smoke_config(tmp_path)
    out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["synth", "--config", str(config), "--out-file", str(out_a)]) == 0
    assert main(["synth", "--config", str(config), "--out-file", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()


def test_gridsearch_sweep_writes_one_row_per_cell(tmp_path):
    config, doc = smoke_config(tmp_path, out_name="grid")
    doc["grid"] = {"axis": "lambda_f", "values": [0.0, 0.8], "fixed": 0.8}
    doc["data"]["synth"]["n_samples"] = 120
    doc["train"]["max_epochs"] = 1
    doc["train"]["pretrain_max_epochs"] = 1
    config.write_text(json.dumps(doc))
    assert main(["gridsearch", "--config", str(config)]) == 0
    rows = read_csv(tmp_path / "grid" / "gridsearch.csv")
    assert len(rows) == 3  # header + 2 cells
    assert rows[1][0] == "0.8" and rows[1][1] == "0.0"
    assert (tmp_path / "grid" / "grid_plot.csv").exists()
    assert (tmp_path / "grid" / "cell_lu0.8_lf0" / "reports.csv").exists()
