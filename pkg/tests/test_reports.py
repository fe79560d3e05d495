import json
import math

import numpy as np

from kerneltower.reports import Bundle, RunReport, fmt, jsonable


def test_fmt_shortest_round_trip():
    for x in (0.1, 1 / 3, 1.9375000000000004, 2.0**-45):
        assert float(fmt(x)) == x
    assert fmt(np.float64(0.25)) == "0.25"
    assert fmt(7) == "7"
    assert fmt("<>") == "<>"


def test_jsonable_handles_numpy_and_nonfinite():
    obj = {
        "a": np.float64(1.5),
        "b": np.arange(3),
        "c": [np.int64(2), np.bool_(True)],
        "d": math.inf,
    }
    out = jsonable(obj)
    assert out == {"a": 1.5, "b": [0, 1, 2], "c": [2, True], "d": "inf"}
    json.dumps(out)


def test_run_report_summary_stable():
    report = RunReport("demo", {"seed": 1}, {"x": np.float64(0.5)})
    a = report.summary_json()
    b = report.summary_json()
    assert a == b
    parsed = json.loads(a)
    assert parsed["command"] == "demo"
    assert parsed["results"]["x"] == 0.5
    assert "timings" not in parsed


def test_bundle_formats(tmp_path):
    bundle = Bundle(tmp_path / "csv-only", formats=("csv",))
    bundle.add_csv("t.csv", ["a"], [[1.0]])
    bundle.finish(RunReport("demo", {}, {}), "x: 1\n")
    assert (tmp_path / "csv-only" / "t.csv").exists()
    assert not (tmp_path / "csv-only" / "summary.json").exists()
    assert (tmp_path / "csv-only" / "config_resolved.yaml").exists()
