"""CSV and JSON output files."""

import json

import numpy as np
import pandas as pd
import pytest

from wdn_dae.artifacts import (
    matrix_frame,
    read_json,
    read_trajectory_csv,
    spectrum_frame,
    write_json,
    write_table,
    write_trajectory,
)
from wdn_dae.dae_core import Trajectory
from wdn_dae.error_handler import FileLoadError


class TestJson:
    def test_sorted_and_plain(self, tmp_path) -> None:
        path = str(tmp_path / "nested" / "out.json")
        write_json({
            "b": 1,
            "a": float("inf"),
            "c": float("nan"),
            "d": np.float64(2.5),
            "e": np.array([1, 2]),
            "f": complex(1.0, -2.0),
        }, path)
        text = open(path, encoding="utf-8").read()
        assert text.index('"a"') < text.index('"b"') < text.index('"c"')
        data = json.loads(text)
        assert data == {"a": "inf", "b": 1, "c": None, "d": 2.5, "e": [1, 2],
                        "f": {"real": 1.0, "imag": -2.0}}
        assert read_json(path) == data

    def test_identical_inputs_identical_bytes(self, tmp_path) -> None:
        payload = {"x": [0.1, 0.2], "y": {"z": -np.inf}}
        a = write_json(payload, str(tmp_path / "a.json"))
        b = write_json(payload, str(tmp_path / "b.json"))
        assert open(a, "rb").read() == open(b, "rb").read()


class TestTrajectoryFiles:
    def test_round_trip(self, tmp_path) -> None:
        times = np.array([0.0, 60.0, 120.0])
        states = np.array([[0.005, 89.1], [0.0051, 89.0], [0.0052, 88.9]])
        events = [{"time": 60.0, "reset": True, "z_jump": 0.0, "y_jump": 3.5}]
        trajectory = Trajectory(times, states, ["q:1", "pJ:2"], events=events, metadata={"dt": 60.0})
        csv_path = str(tmp_path / "trajectory.csv")
        meta_path = str(tmp_path / "trajectory_meta.json")
        write_trajectory(trajectory, csv_path, meta_path)

        header = open(csv_path, encoding="utf-8").readline().strip()
        assert header == "time,q:1,pJ:2"
        loaded = read_trajectory_csv(csv_path, meta_path)
        np.testing.assert_allclose(loaded.states, states, rtol=1e-11)
        np.testing.assert_array_equal(loaded.times, times)
        assert loaded.events == events
        assert loaded.metadata["rows"] == 3

    def test_missing_file(self, tmp_path) -> None:
        with pytest.raises(FileLoadError, match="does not exist"):
            read_trajectory_csv(str(tmp_path / "absent.csv"))

    def test_missing_time_column(self, tmp_path) -> None:
        path = tmp_path / "bad.csv"
        path.write_text("t,q:1\n0,1\n", encoding="utf-8")
        with pytest.raises(FileLoadError, match="'time' column"):
            read_trajectory_csv(str(path))

    def test_decreasing_time(self, tmp_path) -> None:
        path = tmp_path / "bad.csv"
        path.write_text("time,q:1\n60,1\n0,1\n", encoding="utf-8")
        with pytest.raises(FileLoadError, match="increasing"):
            read_trajectory_csv(str(path))


class TestFrames:
    def test_matrix_frame(self, tmp_path) -> None:
        frame = matrix_frame(np.eye(2), ["q:1", "pJ:2"], ["q:1", "pJ:2"])
        assert list(frame.columns) == ["row", "q:1", "pJ:2"]
        path = write_table(frame, str(tmp_path / "E_h.csv"))
        again = pd.read_csv(path)
        np.testing.assert_array_equal(again[["q:1", "pJ:2"]].to_numpy(), np.eye(2))

    def test_spectrum_frame(self) -> None:
        frame = spectrum_frame(np.array([-1.0 + 2.0j, -3.0]))
        assert frame["re"].tolist() == [-1.0, -3.0]
        assert frame["im"].tolist() == [2.0, 0.0]
