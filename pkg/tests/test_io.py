import json
import struct

import numpy as np
import pytest

from shapecomp import io
from shapecomp.grid import ConditionMask, GridSpec, OccupancyGrid, PointCloud
from shapecomp.render import CameraView, look_at


def test_ply_round_trip(tmp_path, rng):
    pts = rng.normal(size=(50, 3)).astype(np.float32).astype(np.float64)
    io.write_point_cloud(tmp_path / "a.ply", PointCloud(pts))
    text = (tmp_path / "a.ply").read_text()
    assert "property float x" in text and "element vertex 50" in text
    assert np.array_equal(io.read_point_cloud(tmp_path / "a.ply").points, pts)


def test_ply_faces_round_trip(tmp_path):
    v = np.eye(3)
    io.write_ply(tmp_path / "m.ply", v, [[0, 1, 2]])
    pts, faces = io.read_ply(tmp_path / "m.ply", with_faces=True)
    assert np.array_equal(pts, v) and faces.tolist() == [[0, 1, 2]]


def test_empty_ply(tmp_path):
    io.write_ply(tmp_path / "e.ply", np.zeros((0, 3)))
    assert io.read_point_cloud(tmp_path / "e.ply").points.shape == (0, 3)


def test_grid_pair_layout(tmp_path):
    spec = GridSpec((2, 3, 4), 0.5, (1.0, 2.0, 3.0))
    vals = np.arange(24, dtype=float) / 24
    io.save_grid(tmp_path / "g", OccupancyGrid(spec, vals))
    header = json.loads((tmp_path / "g.grid.json").read_text())
    assert header == {"dims": [2, 3, 4], "voxel_size": 0.5, "origin": [1.0, 2.0, 3.0],
                      "dtype": "f32", "order": "x-fastest", "noised": False}
    raw = (tmp_path / "g.grid.bin").read_bytes()
    assert len(raw) == 24 * 4
    # little-endian f32, x-fastest: value at (1, 0, 0) is the second float
    assert struct.unpack("<f", raw[4:8])[0] == pytest.approx(1 / 24)
    back = io.load_grid(tmp_path / "g.grid.json")
    assert back.spec == spec and np.allclose(back.flat(), vals.astype(np.float32))


def test_mask_pair_u8(tmp_path, rng):
    spec = GridSpec((3, 3, 3))
    bits = rng.random(27) < 0.5
    io.save_mask(tmp_path / "m", ConditionMask(spec, bits))
    assert json.loads((tmp_path / "m.grid.json").read_text())["dtype"] == "u8"
    assert (tmp_path / "m.grid.bin").stat().st_size == 27
    assert np.array_equal(io.load_mask(tmp_path / "m").bits.ravel(order="F"), bits)


def test_grid_size_mismatch_rejected(tmp_path):
    spec = GridSpec((2, 2, 2))
    io.save_grid(tmp_path / "g", OccupancyGrid.zeros(spec))
    (tmp_path / "g.grid.bin").write_bytes(b"\0" * 12)
    with pytest.raises(ValueError):
        io.load_grid(tmp_path / "g")


def test_noised_flag_round_trip(tmp_path):
    spec = GridSpec((2, 2, 2))
    io.save_grid(tmp_path / "n", OccupancyGrid(spec, np.full(8, -0.5), noised=True))
    assert io.load_grid(tmp_path / "n").noised


def test_pgm_round_trip(tmp_path):
    img = np.zeros((4, 6))
    img[1:3, 2:5] = 1
    io.write_pgm(tmp_path / "s.pgm", img)
    raw = (tmp_path / "s.pgm").read_bytes()
    assert raw.startswith(b"P5\n6 4\n255\n") and raw[-24:].count(b"\xff") == 6
    assert np.array_equal(io.read_pgm(tmp_path / "s.pgm"), img)


def test_pfm_round_trip_with_invalid(tmp_path):
    d = np.arange(12, dtype=float).reshape(3, 4) + 0.25
    invalid = np.zeros_like(d, dtype=bool)
    invalid[0, 0] = True
    io.write_pfm(tmp_path / "d.pfm", d, invalid)
    raw = (tmp_path / "d.pfm").read_bytes()
    assert raw.startswith(b"Pf\n4 3\n-1.0\n")
    body = np.frombuffer(raw[len(b"Pf\n4 3\n-1.0\n"):], dtype="<f4")
    assert body[:4].tolist() == [8.25, 9.25, 10.25, 11.25]  # bottom row first
    depth, valid = io.read_pfm(tmp_path / "d.pfm")
    assert np.array_equal(valid, ~invalid)
    assert np.array_equal(depth[valid], d[valid])


def test_camera_json_round_trip(tmp_path):
    cam = CameraView(50.0, 50.0, 32.0, 32.0, 64, 64, look_at([2.0, 1.0, 0.5]))
    io.write_camera_json(tmp_path / "c.json", cam)
    back = io.read_camera_json(tmp_path / "c.json")
    assert np.allclose(back.cam_to_world, cam.cam_to_world) and back.width == 64
