import json

import numpy as np
import pytest

from robustpose import SceneFormatError
from robustpose import read_f32
from robustpose import write_f32
from robustpose import read_pgm
from robustpose import write_pgm
from robustpose import read_csv
from robustpose import write_csv
from robustpose import read_json
from robustpose import write_json
from robustpose import load_cad_model
from robustpose import load_keypoint_json

class TestBinaryPoints:
    def test_round_trip(self, tmp_path, rng):
        values = rng.normal(size=(7, 3))
        write_f32(tmp_path / "p.f32", values)
        back = read_f32(tmp_path / "p.f32", (7, 3))
        assert back.dtype == np.float64
        assert np.allclose(back, values, atol=1e-6)
        assert (tmp_path / "p.f32").stat().st_size == 7 * 3 * 4

    def test_little_endian(self, tmp_path):
        write_f32(tmp_path / "p.f32", [1.0])
        assert (tmp_path / "p.f32").read_bytes() == b"\x00\x00\x80\x3f"

    def test_wrong_shape(self, tmp_path):
        write_f32(tmp_path / "p.f32", np.zeros(5))
        with pytest.raises(SceneFormatError):
            read_f32(tmp_path / "p.f32", (2, 3))

class TestPgm:
    def test_round_trip(self, tmp_path, rng):
        mask = rng.random((5, 9)) > 0.5
        write_pgm(tmp_path / "m.pgm", mask)
        assert np.array_equal(read_pgm(tmp_path / "m.pgm"), mask)
        assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5")

    def test_values_are_0_and_255(self, tmp_path):
        write_pgm(tmp_path / "m.pgm", [[True, False]])
        assert (tmp_path / "m.pgm").read_bytes().endswith(bytes([255, 0]))

    def test_unreadable_file(self, tmp_path):
        (tmp_path / "m.pgm").write_bytes(b"not an image")
        with pytest.raises(SceneFormatError):
            read_pgm(tmp_path / "m.pgm")

class TestJsonAndCsv:
    def test_invalid_json(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(SceneFormatError) as info:
            read_json(tmp_path / "bad.json")
        assert "bad.json" in str(info.value)

    def test_json_is_sorted(self, tmp_path):
        write_json(tmp_path / "a.json", {"b": 1, "a": [0.1]})
        text = (tmp_path / "a.json").read_text()
        assert text.index('"a"') < text.index('"b"')
        assert read_json(tmp_path / "a.json") == {"a": [0.1], "b": 1}

    def test_json_writes_null_for_nan(self, tmp_path):
        write_json(tmp_path / "a.json", {"mean": float("nan"), "rows": [np.float64(np.inf), 1.5],
                                         "count": np.int64(3)})
        text = (tmp_path / "a.json").read_text()
        assert "NaN" not in text and "Infinity" not in text
        assert json.loads(text) == {"count": 3, "mean": None, "rows": [None, 1.5]}

    def test_csv(self, tmp_path):
        write_csv(tmp_path / "t.csv", ("name", "value"),
                  [("x", 0.1), ("y", np.float64(1) / 3)])
        rows = read_csv(tmp_path / "t.csv")
        assert rows[0] == {"name": "x", "value": "0.1"}
        assert float(rows[1]["value"]) == 1 / 3

class TestCadFiles:
    def test_keypoint_sidecar(self, tmp_path):
        (tmp_path / "k.json").write_text(json.dumps(
            {"keypoints": [[0, 0, 0], [1, 0, 0], [0, 1, 0]], "diameter": 2.5}))
        keypoints, diameter = load_keypoint_json(tmp_path / "k.json")
        assert keypoints.shape == (3, 3)
        assert np.array_equal(keypoints[:, 1], [1, 0, 0])
        assert diameter == 2.5

    def test_keypoint_sidecar_without_keypoints(self, tmp_path):
        (tmp_path / "k.json").write_text(json.dumps({"points": []}))
        with pytest.raises(SceneFormatError):
            load_keypoint_json(tmp_path / "k.json")

    def test_load_ply(self, tmp_path, rng):
        pytest.importorskip("open3d")
        vertices = rng.uniform(-0.1, 0.1, size=(300, 3))
        header = ("ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\n" +
                  "property float y\nproperty float z\nend_header\n").format(len(vertices))
        body = "\n".join("{} {} {}".format(*v) for v in vertices)
        (tmp_path / "part.ply").write_text(header + body + "\n")
        (tmp_path / "part.json").write_text(json.dumps(
            {"keypoints": vertices[:4].tolist()}))

        model = load_cad_model(tmp_path / "part.ply", tmp_path / "part.json", m=100)
        assert model.m == 100
        assert model.model_id == "part"
        assert model.keypoints.N == 4
        assert model.diameter > 0
