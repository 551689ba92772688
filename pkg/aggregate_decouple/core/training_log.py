"""
Training log: per-iteration loss terms and the class-weight trajectory.
Following Single Responsibility Principle - records training history only.
"""

import csv
from pathlib import Path
from typing import List, Optional, Dict, Any, Sequence

from .models import LossReport

LOG_COLUMNS = ["iteration", "l_deno", "l_diff", "l_u", "ramp", "total", "lr"]
WEIGHT_COLUMNS = ["class", "iteration", "w"]


class TrainingLog:
    """Keeps rows in memory and optionally writes them as CSV files"""

    def __init__(self, out_dir: Optional[Path] = None):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.rows: List[Dict[str, Any]] = []
        self.weight_rows: List[Dict[str, Any]] = []

    def record(self, iteration: int, report: LossReport, lr: float) -> None:
        self.rows.append({
            "iteration": iteration,
            "l_deno": report.l_deno,
            "l_diff": report.l_diff,
            "l_u": report.l_u,
            "ramp": report.ramp_weight,
            "total": report.total,
            "lr": lr,
        })

    def record_weights(self, iteration: int, weights: Sequence[float]) -> None:
        for k, w in enumerate(weights):
            self.weight_rows.append({"class": k, "iteration": iteration, "w": float(w)})

    def series(self, column: str) -> List[float]:
        return [row[column] for row in self.rows]

    def all_finite(self) -> bool:
        return all(value == value and abs(value) != float("inf")
                   for row in self.rows for key, value in row.items() if key != "iteration")

    @staticmethod
    def _write(path: Path, columns: List[str], rows: List[Dict[str, Any]]) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)

    def flush(self) -> None:
        """Rewrite training_log.csv and drs_weights.csv from the rows so far"""
        if self.out_dir is None:
            return
        self._write(self.out_dir / "training_log.csv", LOG_COLUMNS, self.rows)
        self._write(self.out_dir / "drs_weights.csv", WEIGHT_COLUMNS, self.weight_rows)


def read_training_log(path: Path) -> List[Dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]
