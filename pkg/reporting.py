"""
Reporting Module

Generates the result tables of the experiments: the pooled AP report, the
parameter sweep, the local versus global benchmark and the per-pair
training accuracy. Every table is written as CSV and can be rendered as a
plain-text table for the terminal.
"""

import csv
import io
import os
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

from errors import DataError
from evaluation import MapReport
from logger import create_jpa_logger
from models import POOLED_COLUMNS

logger = create_jpa_logger('reporting')

RESULT_COLUMNS = ['setting'] + [name for name, _ in POOLED_COLUMNS] + ['total', 'median_solve_ms']
SWEEP_COLUMNS = ['parameter', 'value', 'map', 'median_ms']
BENCH_COLUMNS = ['size', 'solver', 'median_ms', 'trials']
ACCURACY_COLUMNS = ['pair', 'positives', 'negatives', 'heldout_accuracy', 'direction']


class ResultRow(NamedTuple):
    """One evaluated setting."""
    setting: str
    report: MapReport
    median_solve_ms: Optional[float]


class SweepRow(NamedTuple):
    parameter: str
    value: float
    map: Optional[float]
    median_ms: Optional[float]


def _fraction(value: Optional[float]) -> str:
    return '' if value is None else f"{value:.6f}"


def _ms(value: Optional[float]) -> str:
    return '' if value is None else f"{value:.3f}"


def _percent(value: Optional[float]) -> str:
    return '-' if value is None else f"{100.0 * value:.1f}"


def result_records(rows: Sequence[ResultRow]) -> List[List[str]]:
    records = []
    for row in rows:
        records.append([row.setting]
                       + [_fraction(row.report.columns[name]) for name, _ in POOLED_COLUMNS]
                       + [_fraction(row.report.total), _ms(row.median_solve_ms)])
    return records


def sweep_records(rows: Sequence[SweepRow]) -> List[List[str]]:
    return [[row.parameter, f"{row.value:g}", _fraction(row.map), _ms(row.median_ms)] for row in rows]


def bench_records(rows) -> List[List[str]]:
    return [[str(row.size), row.solver, _ms(row.median_ms), str(row.trials)] for row in rows]


def accuracy_records(rows: Sequence[Tuple[str, int, int, float, int]]) -> List[List[str]]:
    return [[pair, str(pos), str(neg), f"{accuracy:.4f}", str(direction)]
            for pair, pos, neg, accuracy, direction in rows]


def write_csv(path: str, header: Sequence[str], records: Sequence[Sequence[str]]) -> None:
    """
    Write a CSV table with ``\\n`` line endings.

    Raises:
        DataError: the file or its directory cannot be written
    """
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            writer.writerows(records)
    except OSError as e:
        raise DataError(f"Cannot write {path}: {e.strerror or e}", {'path': path}) from e
    logger.info(f"Wrote {len(records)} rows to {path}")


def csv_text(header: Sequence[str], records: Sequence[Sequence[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(records)
    return buffer.getvalue()


def format_table(header: Sequence[str], records: Sequence[Sequence[str]], title: str = '') -> str:
    """Plain-text table with right-aligned columns."""
    widths = [len(h) for h in header]
    for record in records:
        widths = [max(w, len(cell)) for w, cell in zip(widths, record)]
    lines = []
    if title:
        lines.append(title)
    lines.append('  '.join(h.rjust(w) for h, w in zip(header, widths)))
    lines.append('  '.join('-' * w for w in widths))
    for record in records:
        lines.append('  '.join(cell.rjust(w) for cell, w in zip(record, widths)))
    return '\n'.join(lines)


def format_results_table(rows: Sequence[ResultRow]) -> str:
    """Pooled AP table in percent, one line per setting."""
    header = ['Setting'] + [name.capitalize() for name, _ in POOLED_COLUMNS] + ['Total', 'ms']
    records = []
    for row in rows:
        records.append([row.setting]
                       + [_percent(row.report.columns[name]) for name, _ in POOLED_COLUMNS]
                       + [_percent(row.report.total), _ms(row.median_solve_ms) or '-'])
    return format_table(header, records, title='Average precision (%)')


class ReportGenerator:
    """Writes the report files of one command into an output directory."""

    def __init__(self, report_dir: str):
        """
        Initialize report generator.

        Args:
            report_dir: Directory receiving the CSV files
        """
        self.report_dir = report_dir
        self.logger = create_jpa_logger('reporting.generator')

    @classmethod
    def for_file(cls, path: str) -> Tuple['ReportGenerator', str]:
        """Generator for the directory of ``path``, plus the file name."""
        return cls(os.path.dirname(path) or os.curdir), os.path.basename(path)

    def _path(self, name: str) -> str:
        return os.path.join(self.report_dir, name)

    def write_results(self, rows: Sequence[ResultRow], name: str = 'results.csv') -> str:
        path = self._path(name)
        write_csv(path, RESULT_COLUMNS, result_records(rows))
        return path

    def write_sweep(self, rows: Sequence[SweepRow], name: str = 'sweep.csv') -> str:
        path = self._path(name)
        write_csv(path, SWEEP_COLUMNS, sweep_records(rows))
        return path

    def write_bench(self, rows, name: str = 'bench.csv') -> str:
        path = self._path(name)
        write_csv(path, BENCH_COLUMNS, bench_records(rows))
        return path

    def write_accuracy(self, rows: Sequence[Tuple[str, int, int, float, int]], name: str = 'accuracy.csv') -> str:
        path = self._path(name)
        write_csv(path, ACCURACY_COLUMNS, accuracy_records(rows))
        return path


def report_to_dict(report: MapReport) -> Dict[str, Any]:
    """Machine-readable report printed with --json."""
    return {
        'columns': dict(report.columns),
        'total': report.total,
        'per_joint': {joint.joint_name: ap for joint, ap in report.per_joint.items()},
    }
