import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from errors import DataError

CONFIGURATION_ORDER = ["none", "t1", "t1c", "t2", "flair"]
REGION_KEYS = ["et", "tc", "wt"]
SUMMARY_COLUMNS = [f"{metric}_{region}" for metric in ("dice", "hd95") for region in REGION_KEYS]


def _read_json_lines(path: Union[str, Path]) -> List[Dict]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise OSError(f"Cannot read {path}: {e}") from e
    records = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except ValueError as e:
            raise DataError(f"{path}:{number}: malformed JSON line: {e}") from e
    return records


class ReportParser:

    """Parser for drop-modality metrics reports

    Reads the JSON lines written by the evaluation matrix (one MetricsReport
    per case and configuration) into a flat DataFrame, and aggregates it into
    the per-configuration summary used by the plots and tables.

    """

    def __init__(self, source: Union[str, Path, Sequence[Dict]]):
        """ReportParser init method

        Keyword arguments:
        source -- Path to a JSON-lines report, or already decoded report records
        """
        if isinstance(source, (str, Path)):
            self.records = _read_json_lines(source)
        else:
            self.records = list(source)

    def frame(self) -> pd.DataFrame:
        """One row per report: case_id, configuration, beta and the six metric columns"""
        rows = []
        for record in self.records:
            try:
                row = {
                    "case_id": record["case_id"],
                    "configuration": record["dropped_modality"] or "none",
                    "beta": float(record["beta"]),
                }
                for region in REGION_KEYS:
                    row[f"dice_{region}"] = float(record["dice"][region])
                    row[f"hd95_{region}"] = float(record["hd95"][region])
            except (KeyError, TypeError, ValueError) as e:
                raise DataError(f"Malformed metrics report record: {e}") from e
            rows.append(row)
        return pd.DataFrame(rows, columns=["case_id", "configuration", "beta"] + SUMMARY_COLUMNS)

    def beta(self) -> Optional[float]:
        """Contrastive weight the reports were produced with, None when mixed or empty"""
        values = {float(r["beta"]) for r in self.records}
        return values.pop() if len(values) == 1 else None

    def matrix_summary(self) -> pd.DataFrame:
        """Mean Dice and HD95 per region for each configuration

        Rows follow the order full, drop t1, drop t1c, drop t2, drop flair;
        configurations absent from the report are left out.
        """
        frame = self.frame()
        if frame.empty:
            raise DataError("Metrics report holds no rows")
        summary = frame.groupby("configuration")[SUMMARY_COLUMNS].mean()
        order = [c for c in CONFIGURATION_ORDER if c in summary.index]
        order += sorted(c for c in summary.index if c not in CONFIGURATION_ORDER)
        return summary.loc[order]


class LedgerParser:

    """Parser for run ledgers

    Splits the step and evaluation rows of a training ledger into DataFrames.

    """

    def __init__(self, source: Union[str, Path, Sequence[Dict]]):
        if isinstance(source, (str, Path)):
            self.records = _read_json_lines(source)
        else:
            self.records = list(source)

    def steps_frame(self) -> pd.DataFrame:
        rows = [r for r in self.records if r.get("kind") == "step"]
        columns = ["step", "epoch", "L_Final", "L_Dice", "L_Focal", "L_C", "beta", "presence"]
        return pd.DataFrame(rows, columns=columns)

    def evals_frame(self) -> pd.DataFrame:
        rows = []
        for record in self.records:
            if record.get("kind") != "eval":
                continue
            report = record["report"]
            row = {"epoch": record["epoch"], "split": record["split"], "case_id": report["case_id"]}
            for region in REGION_KEYS:
                row[f"dice_{region}"] = report["dice"][region]
                row[f"hd95_{region}"] = report["hd95"][region]
            rows.append(row)
        return pd.DataFrame(rows, columns=["epoch", "split", "case_id"] + SUMMARY_COLUMNS)

    def last_step(self) -> Optional[Dict]:
        steps = [r for r in self.records if r.get("kind") == "step"]
        return steps[-1] if steps else None

    def eval_summary(self) -> pd.DataFrame:
        """Mean metrics per split at the latest evaluated epoch"""
        frame = self.evals_frame()
        if frame.empty:
            return frame
        latest = frame[frame["epoch"] == frame["epoch"].max()]
        return latest.groupby("split")[SUMMARY_COLUMNS].mean()
