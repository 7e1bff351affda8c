import csv
import io
import json
import math
import os

import numpy as np
import pytest

from app.models.models import ProtocolConfig
from app.persistence.report_store import (
    CSV_HEADER,
    render_json,
    save_report,
    serialize_report,
    to_jsonable,
    write_atomic,
)
from app.simulation.errors import ReportWriteError
from app.simulation.stats import run_sweep


@pytest.fixture
def sweep_document(random_pairs):
    cfg = ProtocolConfig(gamma=math.pi / 8, master_seed=3)
    return run_sweep(cfg, random_pairs[:3], 1000, chunk_size=500, calibrate=False).to_dict()


def test_to_jsonable_handles_numpy_and_non_finite():
    value = {"a": np.float64(0.5), "b": np.int8(-1), "c": [math.inf, -math.inf, math.nan], "d": np.bool_(True)}
    assert to_jsonable(value) == {"a": 0.5, "b": -1, "c": ["inf", "-inf", "nan"], "d": True}


def test_json_starts_with_schema_version(sweep_document):
    text = render_json(sweep_document)
    assert text.endswith("\n")
    parsed = json.loads(text)
    assert list(parsed)[0] == "schema_version"
    assert parsed["schema_version"] == 1
    assert list(parsed)[1:] == list(sweep_document)


def test_csv_has_one_row_per_setting_cell(sweep_document):
    rows = list(csv.reader(io.StringIO(serialize_report(sweep_document, "csv"))))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 4 * 3 + 1
    assert [row[6] for row in rows[1:5]] == ["pp", "pm", "mp", "mm"]
    assert sum(int(row[7]) for row in rows[1:5]) == 1000


def test_csv_needs_settings():
    with pytest.raises(ValueError):
        serialize_report({"summary": {}}, "csv")
    with pytest.raises(ValueError):
        serialize_report({}, "yaml")


def test_serialization_is_deterministic(sweep_document):
    assert render_json(sweep_document) == render_json(json.loads(json.dumps(to_jsonable(sweep_document))))


def test_save_report_writes_atomically(tmp_path, sweep_document):
    path = tmp_path / "out" / "report.json"
    save_report(sweep_document, str(path))
    assert json.loads(path.read_text())["schema_version"] == 1
    assert [p.name for p in path.parent.iterdir()] == ["report.json"]


def test_write_failure_raises_report_write_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReportWriteError):
        write_atomic(str(blocker / "report.json"), "{}")
    assert os.listdir(tmp_path) == ["file"]
