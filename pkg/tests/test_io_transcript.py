import json

import numpy as np
import pytest

from collabvar.errors import IngestionError
from collabvar.io import (atomic_write_json, read_coefficients, read_panel, write_coefficients,
                          write_panel, write_table)
from collabvar.transcript import BROADCAST, ProtocolTranscript
from collabvar.var_core import TimeSeriesPanel, generate_stationary_coefficients, simulate_var


def test_transcript_log_and_views(tmp_path):
    tr = ProtocolTranscript("demo")
    tr.log("a", "central", "ZB", np.ones((2, 2)), 1)
    tr.log("b", "central", "ZB", np.zeros((2, 2)), 1)
    tr.log("central", BROADCAST, "M", np.eye(2), 1)
    assert [e.seq for e in tr] == [0, 1, 2]
    assert len(tr.view_of("a")) == 2
    assert tr.values_received("central") == 8
    assert tr.values_received("a") == 4
    with pytest.raises(ValueError):
        tr.entries[0].values[0, 0] = 5.0

    path = tmp_path / "t.jsonl"
    tr.to_jsonl(path)
    back = ProtocolTranscript.from_jsonl(path)
    assert back.protocol == "demo"
    for x, y in zip(tr, back):
        assert (x.sender, x.receiver, x.label, x.iteration) == (y.sender, y.receiver, y.label,
                                                                 y.iteration)
        np.testing.assert_array_equal(x.values, y.values)
    rec = json.loads(path.read_text().splitlines()[0])
    assert set(rec) == {"protocol", "seq", "sender", "receiver", "label", "iteration", "shape",
                        "values"}


def test_panel_roundtrip_is_bitwise(tmp_path):
    panel = simulate_var(generate_stationary_coefficients(3, 2, seed=1), 50, seed=2)
    write_panel(panel, tmp_path / "p.csv")
    back = read_panel(tmp_path / "p.csv")
    assert np.array_equal(back.values, panel.values)
    assert back.owners == panel.owners


def test_panel_with_timestamps(tmp_path):
    panel = TimeSeriesPanel(np.ones((2, 1)), ("x",), ("t0", "t1"))
    write_panel(panel, tmp_path / "p.csv")
    assert read_panel(tmp_path / "p.csv").timestamps == ("t0", "t1")
    (tmp_path / "bad.csv").write_text("a,b\n1,x\n")
    with pytest.raises(IngestionError):
        read_panel(tmp_path / "bad.csv")


def test_coefficient_roundtrip(tmp_path):
    m = generate_stationary_coefficients(3, 2, seed=4)
    write_coefficients(m, tmp_path / "c.csv")
    back = read_coefficients(tmp_path / "c.csv")
    assert np.array_equal(back.coefficients, m.coefficients)
    assert back.lag_spec == m.lag_spec


def test_table_and_atomic_json(tmp_path):
    write_table([{"a": 1, "b": 0.1}], tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[1] == "1,0.10000000000000001"
    atomic_write_json({"x": np.float64(1.5), "y": (1, 2)}, tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text()) == {"x": 1.5, "y": [1, 2]}
    assert [p.name for p in tmp_path.iterdir() if p.name.endswith(".tmp")] == []
