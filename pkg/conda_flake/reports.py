"""
Experiment reports and matrix files.

CvReports and TimingReports serialize to flat records, one per CvReport and
one per timing run, written as CSV or JSON lines. Nested values (fold AUCs,
the grid, update rounds) are JSON-encoded inside CSV cells. Matrices are
written as CSV or as MatrixWire (``.flk``).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from logging import getLogger
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Union

import numpy as np

from conda_flake.exceptions import ConfigError, ExperimentError
from conda_flake.model_selection import CvReport
from conda_flake.protocol.wire import read_matrix_file, write_matrix_file
from conda_flake.utils import mean_std

logger = getLogger(f"conda.{__name__}")

ReportFormat = Literal["csv", "jsonl"]
FORMATS = ("csv", "jsonl")
STAGES = ("masking_s", "gram_s", "training_s", "comm_estimate_s")

CSV_FIELDS = (
    "kind",
    "label",
    "size",
    "run",
    *STAGES,
    "updates",
    "best_c",
    "best_param",
    "param_name",
    "fold_aucs",
    "mean_auc",
    "std_auc",
    "averaging",
    "grid",
)
_INT_FIELDS = ("size", "run")
_FLOAT_FIELDS = (*STAGES, "best_c", "best_param", "mean_auc", "std_auc")
_JSON_FIELDS = ("updates", "fold_aucs", "grid")


@dataclass
class UpdateTiming:
    """One incremental round; ``rows`` is negative when a party left."""

    masking_s: float
    gram_s: float
    rows: int = 0
    kind: str = "update"


@dataclass
class TimingRun:
    masking_s: float = 0.0
    gram_s: float = 0.0
    training_s: float = 0.0
    comm_estimate_s: float = 0.0
    updates: List[UpdateTiming] = field(default_factory=list)


@dataclass
class TimingReport:
    """Timings of one configuration over ``repeats`` runs."""

    label: str
    size: int
    runs: List[TimingRun] = field(default_factory=list)

    @property
    def repeats(self) -> int:
        return len(self.runs)

    def samples(self, stage: str) -> np.ndarray:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        return np.array([getattr(run, stage) for run in self.runs])

    def mean(self, stage: str) -> float:
        return mean_std(self.samples(stage))[0]

    def std(self, stage: str) -> float:
        return mean_std(self.samples(stage))[1]

    def update_stats(self) -> List[Dict[str, float]]:
        """Per round (updates, then any join and leave): masking and Gram timing stats."""
        rounds = min((len(run.updates) for run in self.runs), default=0)
        stats = []
        for index in range(rounds):
            masking = mean_std(run.updates[index].masking_s for run in self.runs)
            gram = mean_std(run.updates[index].gram_s for run in self.runs)
            stats.append(
                {
                    "round": index + 1,
                    "kind": self.runs[0].updates[index].kind,
                    "rows": self.runs[0].updates[index].rows,
                    "masking_mean": masking[0],
                    "masking_std": masking[1],
                    "gram_mean": gram[0],
                    "gram_std": gram[1],
                }
            )
        return stats

    def summary(self) -> Dict[str, float]:
        summary = {"label": self.label, "size": self.size, "repeats": self.repeats}
        for stage in STAGES:
            summary[f"{stage}_mean"], summary[f"{stage}_std"] = mean_std(self.samples(stage))
        return summary


Report = Union[CvReport, TimingReport]


def to_records(reports: Iterable[Report]) -> List[dict]:
    records = []
    for report in reports:
        if isinstance(report, CvReport):
            records.append({"kind": "cv", **report.to_dict()})
        elif isinstance(report, TimingReport):
            if not report.runs:
                records.append({"kind": "timing", "label": report.label, "size": report.size})
            for index, run in enumerate(report.runs):
                records.append(
                    {"kind": "timing", "label": report.label, "size": report.size, "run": index}
                    | asdict(run)
                )
        else:
            raise TypeError(f"cannot serialize {type(report).__name__}")
    return records


def from_records(records: Iterable[dict]) -> List[Report]:
    reports: List[Report] = []
    for record in records:
        if record["kind"] == "cv":
            names = CvReport.__dataclass_fields__
            reports.append(CvReport.from_dict({k: v for k, v in record.items() if k in names}))
            continue
        last = reports[-1] if reports else None
        if not (
            isinstance(last, TimingReport)
            and (last.label, last.size) == (record["label"], record["size"])
            and record.get("run") == last.repeats
        ):
            last = TimingReport(record["label"], int(record["size"]))
            reports.append(last)
        if record.get("run") is not None:
            updates = [UpdateTiming(**item) for item in record.get("updates") or []]
            stages = {stage: float(record[stage]) for stage in STAGES}
            last.runs.append(TimingRun(**stages, updates=updates))
    return reports


def _format(path: Path, fmt: Optional[str]) -> str:
    if fmt is None:
        fmt = "csv" if path.suffix == ".csv" else "jsonl"
    if fmt not in FORMATS:
        raise ConfigError(f"report format must be one of {FORMATS}, got {fmt!r}")
    return fmt


def _csv_cell(name: str, value) -> str:
    if value is None:
        return ""
    if name in _JSON_FIELDS:
        return json.dumps(value)
    return value


def _from_csv_cell(name: str, cell: str):
    if cell == "":
        return None
    if name in _JSON_FIELDS:
        return json.loads(cell)
    if name in _INT_FIELDS:
        return int(cell)
    if name in _FLOAT_FIELDS:
        return float(cell)
    return cell


def emit_report(reports: Iterable[Report], path: Path, fmt: Optional[ReportFormat] = None) -> Path:
    """Write ``reports`` to ``path``; no reports give a header-only CSV or an empty file."""
    path = Path(path)
    fmt = _format(path, fmt)
    records = to_records(reports)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            if fmt == "csv":
                writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
                writer.writeheader()
                for record in records:
                    row = {name: _csv_cell(name, record.get(name)) for name in CSV_FIELDS}
                    writer.writerow(row)
            else:
                for record in records:
                    fh.write(json.dumps(record) + "\n")
    except OSError as exc:
        raise ExperimentError(f"cannot write report {path}: {exc}")
    logger.info("wrote %d report records to %s", len(records), path)
    return path


def read_report(path: Path, fmt: Optional[ReportFormat] = None) -> List[Report]:
    path = Path(path)
    fmt = _format(path, fmt)
    with path.open(newline="") as fh:
        if fmt == "csv":
            records = [
                {name: _from_csv_cell(name, cell) for name, cell in row.items()}
                for row in csv.DictReader(fh)
            ]
        else:
            records = [json.loads(line) for line in fh if line.strip()]
    return from_records(records)


def write_matrix(path: Path, matrix: np.ndarray, fmt: Optional[str] = None) -> Path:
    """``fmt`` is ``csv`` or ``flk``, by default taken from the suffix."""
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix == ".csv" else "flk")
    if fmt == "csv":
        np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")
    elif fmt == "flk":
        write_matrix_file(path, matrix)
    else:
        raise ConfigError(f"matrix format must be csv or flk, got {fmt!r}")
    return path


def read_matrix(path: Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        return np.loadtxt(path, delimiter=",", ndmin=2)
    return read_matrix_file(path)
