"""
Metrics CSV and JSON run summary.
"""
import csv
import json
import logging
import math
from pathlib import Path

from apps.trainer.models import IterationRecord, RunMetrics, TrainConfig
from apps.trainer.serializers import RunSummarySerializer

logger = logging.getLogger(__name__)


def _cell(value):
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return value


def write_metrics_csv(metrics: RunMetrics, path) -> Path:
    """One row per iteration; floats are written with ``repr``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = IterationRecord.columns()
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for record in metrics:
            writer.writerow([_cell(getattr(record, column)) for column in columns])
    logger.info(f"Wrote {len(metrics)} metric rows to {path}")
    return path


def write_run_summary(method: str, cfg: TrainConfig, metrics: RunMetrics, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    summary = RunSummarySerializer.from_run(method, cfg, metrics)
    path.write_text(json.dumps(summary.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
