"""
Report serialization.

JSON documents carry schema_version first, then the report's own keys in their fixed
order; floats use Python's shortest round-trip repr and non-finite values are written as
the strings "inf", "-inf" or "nan". CSV files have one row per (setting, cell).
Files are written to a temporary sibling and renamed into place, so a failed write
never leaves a partial report behind.
"""

import csv
import io
import json
import logging
import math
import os
import tempfile
from typing import Any, Dict, Iterable, List, Mapping, Optional

import numpy as np

from config import SCHEMA_VERSION
from app.models.models import CELL_LABELS
from app.simulation.errors import ReportWriteError

logger = logging.getLogger(__name__)

CSV_HEADER = ("ax", "ay", "az", "bx", "by", "bz", "cell", "count", "p_emp", "p_qm", "z")


def to_jsonable(value: Any) -> Any:
    """Plain JSON types with non-finite floats replaced by strings."""
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def render_json(document: Dict[str, Any]) -> str:
    body = {"schema_version": SCHEMA_VERSION}
    body.update(document)
    return json.dumps(to_jsonable(body), indent=2, ensure_ascii=True, allow_nan=False) + "\n"


def _format_float(value: float) -> str:
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if math.isnan(value):
        return "nan"
    return repr(value)


def csv_rows(settings: Iterable[Dict[str, Any]]) -> List[List[str]]:
    """One row per (setting, cell) from serialized setting reports."""
    rows = []
    for setting in settings:
        a, b = setting["a"], setting["b"]
        for label in CELL_LABELS:
            rows.append([
                *(_format_float(x) for x in a),
                *(_format_float(x) for x in b),
                label,
                str(int(setting["counts"][label])),
                _format_float(setting["pmf_emp"][label]),
                _format_float(setting["pmf_qm"][label]),
                _format_float(setting["z_scores"][label]),
            ])
    return rows


def render_csv(settings: Iterable[Dict[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(csv_rows(settings))
    return buffer.getvalue()


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    tmp_path: Optional[str] = None
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(prefix=".report-", suffix=".tmp", dir=directory)
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
        tmp_path = None
    except OSError as e:
        logger.error(f"Failed to write report {path}: {e}")
        raise ReportWriteError(f"Cannot write report to {path}: {e}") from e
    finally:
        if tmp_path is not None and os.path.exists(tmp_path):
            os.remove(tmp_path)


def serialize_report(document: Dict[str, Any], output_format: str = "json") -> str:
    """
    Render a report document.

    document is a report's to_dict(); CSV needs a 'settings' list of setting reports
    (or a single 'setting').
    """
    if output_format == "json":
        return render_json(document)
    if output_format == "csv":
        if "settings" in document:
            settings = document["settings"]
        elif "setting" in document:
            settings = [document["setting"]]
        else:
            raise ValueError("CSV output needs per-setting results")
        return render_csv(settings)
    raise ValueError(f"Invalid output format: {output_format}")


def save_report(document: Dict[str, Any], path: str, output_format: str = "json") -> str:
    text = serialize_report(document, output_format)
    write_atomic(path, text)
    logger.info(f"Report written to {path} ({output_format})")
    return path
