"""
Tests for the report parsers, the baseline/contrastive comparison and the markdown reporters.
"""

import json

import pandas as pd
import pytest

from errors import DataError
from tools.ComparisonData import ComparisonData
from tools.ComparisonReporter import ComparisonReporter
from tools.Parser import LedgerParser, ReportParser
from tools.Plotter import RunGraphs
from tools.Reporter import ReadmeGen, matrix_table

# configuration -> (mean dice, mean hd95), the same for every region
BASELINE = {"none": (0.75, 2.0), "t1": (0.5, 4.0), "flair": (0.25, 8.0)}
CONTRASTIVE = {"none": (0.75, 2.0), "t1": (0.625, 3.0), "flair": (0.5, 8.0)}


def _record(case_id, dropped, beta, dice, hd95):
    return {
        "case_id": case_id,
        "dropped_modality": None if dropped == "none" else dropped,
        "beta": beta,
        "dice": {"et": dice, "tc": dice, "wt": dice},
        "hd95": {"et": hd95, "tc": hd95, "wt": hd95},
    }


def _records(means, beta):
    """Two cases per configuration, 1/8 either side of the mean, listed out of order."""
    records = []
    for configuration in ("flair", "none", "t1"):
        dice, hd95 = means[configuration]
        records.append(_record("case_000", configuration, beta, dice + 0.125, hd95 + 0.5))
        records.append(_record("case_001", configuration, beta, dice - 0.125, hd95 - 0.5))
    return records


def _comparison():
    return ComparisonData("beta=0", "beta=1",
                          ReportParser(_records(BASELINE, 0.0)).matrix_summary(),
                          ReportParser(_records(CONTRASTIVE, 1.0)).matrix_summary())


def test_report_parser_summary():
    parser = ReportParser(_records(BASELINE, 0.0))
    frame = parser.frame()
    assert len(frame) == 6
    assert set(frame["configuration"]) == {"none", "t1", "flair"}

    summary = parser.matrix_summary()
    assert list(summary.index) == ["none", "t1", "flair"]
    assert summary.loc["t1", "dice_wt"] == 0.5
    assert summary.loc["flair", "hd95_et"] == 8.0
    assert parser.beta() == 0.0


def test_report_parser_reads_files(tmp_path):
    path = tmp_path / "matrix.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in _records(CONTRASTIVE, 1.0)) + "\n\n", encoding="utf-8")
    parser = ReportParser(path)
    assert parser.beta() == 1.0
    assert parser.matrix_summary().loc["t1", "hd95_tc"] == 3.0


def test_report_parser_errors(tmp_path):
    mixed = _records(BASELINE, 0.0) + [_record("case_002", "none", 1.0, 0.5, 1.0)]
    assert ReportParser(mixed).beta() is None
    with pytest.raises(DataError):
        ReportParser([]).matrix_summary()
    with pytest.raises(DataError):
        ReportParser([{"case_id": "x"}]).frame()
    path = tmp_path / "broken.jsonl"
    path.write_text("{not json\n", encoding="utf-8")
    with pytest.raises(DataError):
        ReportParser(path)


def test_cell_comparison():
    cells = _comparison().get_cell_comparison()
    assert list(cells) == ["none", "t1", "flair"]

    t1 = cells["t1"]["dice_wt"]
    assert t1["beta=0"] == 0.5
    assert t1["beta=1"] == 0.625
    assert t1["difference"] == 0.125
    assert t1["percent_change"] == 25.0
    assert t1["improved"] is True

    assert cells["t1"]["hd95_et"]["difference"] == -1.0
    assert cells["t1"]["hd95_et"]["improved"] is True
    assert cells["none"]["dice_tc"]["improved"] is None
    assert cells["flair"]["hd95_wt"]["improved"] is None


def test_percent_change_of_a_zero_baseline():
    assert _comparison()._calculate_percent_change(0.0, 0.5) is None


def test_drop_degradation_and_statistics():
    data = _comparison()
    degradation = data.get_drop_degradation()
    assert degradation["beta=0"]["t1"]["dice_wt"] == -0.25
    assert degradation["beta=0"]["flair"]["dice_wt"] == -0.5
    assert degradation["beta=1"]["t1"]["dice_wt"] == -0.125
    assert "none" not in degradation["beta=1"]

    summary = data.get_summary_statistics()
    assert summary["dice"] == {"total": 9, "improved": 6, "degraded": 0, "unchanged": 3,
                               "avg_percent_change": 41.67}
    assert summary["hd95"]["improved"] == 3
    assert summary["hd95"]["unchanged"] == 6
    assert summary["mean_wt_dice_drop"] == {"beta=0": -0.375, "beta=1": -0.1875}


def test_difference_frame():
    frame = _comparison().get_difference_frame("dice")
    assert list(frame.columns) == ["ET", "TC", "WT"]
    assert frame.loc["flair", "WT"] == 0.25


def test_comparison_needs_matching_configurations():
    baseline = ReportParser(_records(BASELINE, 0.0)).matrix_summary()
    contrastive = baseline.drop(index="t1")
    with pytest.raises(DataError):
        ComparisonData("a", "b", baseline, contrastive)


def test_comparison_report_is_reproducible(tmp_path):
    reporter = ComparisonReporter()
    first = tmp_path / "first"
    second = tmp_path / "second"
    for out in (first, second):
        reporter.generate_report(_comparison(), str(out), {"Dice difference": "img/dice_difference.png"})
        reporter.generate_json_summary(_comparison(), str(out))
    assert (first / "README.md").read_bytes() == (second / "README.md").read_bytes()
    assert (first / "comparison_summary.json").read_bytes() == (second / "comparison_summary.json").read_bytes()

    readme = (first / "README.md").read_text(encoding="utf-8")
    assert "| t1 | no | 0.5000 | 0.5000 | 0.5000 | 4.000 | 4.000 | 4.000 |" in readme
    assert "| t1 | yes | 0.6250 | 0.6250 | 0.6250 | 3.000 | 3.000 | 3.000 |" in readme
    assert "| - | no |" in readme
    assert "![Dice difference](img/dice_difference.png)" in readme

    summary = json.loads((first / "comparison_summary.json").read_text(encoding="utf-8"))
    assert summary["baseline"] == "beta=0"
    assert summary["drop_degradation"]["beta=1"]["flair"]["dice_et"] == -0.25


def test_matrix_table():
    summary = ReportParser(_records(BASELINE, 0.0)).matrix_summary()
    table = matrix_table(summary).splitlines()
    assert table[0].startswith("| Configuration | Dice ET")
    assert table[2] == "| full | 0.7500 | 0.7500 | 0.7500 | 2.000 | 2.000 | 2.000 |"
    assert table[4].startswith("| drop flair |")


def _ledger_records():
    records = []
    for step in (1, 2, 3):
        records.append({"kind": "step", "step": step, "epoch": 1 + (step > 2), "L_Final": 1.0 / step,
                        "L_Dice": 0.5, "L_Focal": 0.25, "L_C": 0.0, "beta": 0.0, "presence": "t1,t1c,t2,flair"})
    for epoch, dice in ((1, 0.25), (2, 0.5)):
        for split in ("train", "val"):
            report = _record(f"case_{split}", "none", 0.0, dice, 1.0)
            records.append({"kind": "eval", "epoch": epoch, "split": split, "report": report})
    return records


def test_ledger_parser():
    parser = LedgerParser(_ledger_records())
    steps = parser.steps_frame()
    assert list(steps["step"]) == [1, 2, 3]
    assert parser.last_step()["step"] == 3
    assert len(parser.evals_frame()) == 4

    latest = parser.eval_summary()
    assert list(latest.index) == ["train", "val"]
    assert latest.loc["val", "dice_wt"] == 0.5
    assert LedgerParser([]).last_step() is None
    assert LedgerParser([]).eval_summary().empty


def test_run_readme(tmp_path):
    parser = LedgerParser(_ledger_records())
    graphs = RunGraphs(tmp_path)
    image = graphs.plot_loss_curves(parser.steps_frame())
    assert image == "img/run_loss_curves.png"
    assert (tmp_path / image).is_file()

    readme = ReadmeGen(tmp_path)
    readme.start("Training run")
    readme.append_loss_curves(image, parser.last_step(), parser.eval_summary())
    readme.append_matrix(ReportParser(_records(BASELINE, 0.0)).matrix_summary(), None, 0.0, 0.1)
    text = (tmp_path / "README.md").read_text(encoding="utf-8")
    assert text.startswith("# Training run\n")
    assert "Final step 3 (epoch 2)" in text
    assert "| val | 0.5000 | 0.5000 | 0.5000 |" in text
    assert "sigma 0.1" in text

    with pytest.raises(DataError):
        graphs.plot_loss_curves(pd.DataFrame(columns=["step", "L_Final", "L_Dice", "L_Focal", "L_C"]))
