"""File formats: ASCII PLY, grid/mask sidecar pairs, PGM (P5), PFM, camera JSON."""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .grid import ConditionMask, GridSpec, OccupancyGrid, PointCloud


def _strip_suffix(path, suffix):
    p = str(path)
    for s in (suffix + ".json", suffix + ".bin", suffix):
        if p.endswith(s):
            return p[: -len(s)]
    return p


# -- PLY --------------------------------------------------------------------


def write_ply(path, points, faces=None):
    """ASCII PLY with float x/y/z vertices and optional triangle faces."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(points)}",
             "property float x", "property float y", "property float z"]
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        lines += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    body = [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in points]
    if faces is not None:
        body += [f"3 {a} {b} {c}" for a, b, c in faces]
    Path(path).write_text("\n".join(lines + body) + "\n")


def read_ply(path, with_faces=False):
    with open(path) as f:
        if f.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n_vert = n_face = 0
        current = None
        vprops = []
        for line in f:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format" and tok[1] != "ascii":
                raise ValueError(f"{path}: only ASCII PLY is supported")
            if tok[0] == "element":
                current = tok[1]
                if current == "vertex":
                    n_vert = int(tok[2])
                elif current == "face":
                    n_face = int(tok[2])
            elif tok[0] == "property" and current == "vertex":
                vprops.append(tok[-1])
            elif tok[0] == "end_header":
                break
        idx = [vprops.index(k) for k in ("x", "y", "z")]
        rows = [[float(v) for v in f.readline().split()] for _ in range(n_vert)]
        # properties are declared float: read back at that precision
        pts = np.array(rows)[:, idx].astype(np.float32).astype(np.float64) if n_vert else np.zeros((0, 3))
        faces = [[int(v) for v in f.readline().split()[1:4]] for _ in range(n_face)]
    if with_faces:
        return pts, np.array(faces, dtype=np.int64).reshape(-1, 3)
    return pts


def write_point_cloud(path, pc: PointCloud):
    write_ply(path, pc.points)


def read_point_cloud(path, frame="world") -> PointCloud:
    return PointCloud(read_ply(path), frame)


# -- grids ------------------------------------------------------------------


def _write_pair(prefix, spec: GridSpec, flat: np.ndarray, dtype: str, noised: bool, extra=None):
    header = {
        "dims": list(spec.dims),
        "voxel_size": spec.voxel_size,
        "origin": list(spec.origin),
        "dtype": dtype,
        "order": "x-fastest",
        "noised": bool(noised),
    }
    if extra:
        header.update(extra)
    Path(prefix + ".grid.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    np_dtype = "<f4" if dtype == "f32" else "u1"
    Path(prefix + ".grid.bin").write_bytes(flat.astype(np_dtype).tobytes())


def _read_pair(path):
    prefix = _strip_suffix(path, ".grid")
    header = json.loads(Path(prefix + ".grid.json").read_text())
    if header.get("order", "x-fastest") != "x-fastest":
        raise ValueError(f"unsupported voxel order {header['order']!r}")
    spec = GridSpec(tuple(header["dims"]), header["voxel_size"], tuple(header["origin"]))
    np_dtype = {"f32": "<f4", "u8": "u1"}[header["dtype"]]
    flat = np.frombuffer(Path(prefix + ".grid.bin").read_bytes(), dtype=np_dtype)
    if flat.size != spec.size:
        raise ValueError(f"{prefix}.grid.bin holds {flat.size} values, header says {spec.size}")
    return header, spec, flat


def save_grid(path, grid: OccupancyGrid, extra=None):
    """Write ``<prefix>.grid.json`` + ``<prefix>.grid.bin`` (little-endian f32)."""
    _write_pair(_strip_suffix(path, ".grid"), grid.spec, grid.flat(), "f32", grid.noised, extra)


def load_grid(path) -> OccupancyGrid:
    header, spec, flat = _read_pair(path)
    if header["dtype"] != "f32":
        raise ValueError("expected an f32 occupancy grid")
    return OccupancyGrid(spec, flat.astype(np.float64), noised=bool(header.get("noised", False)))


def save_mask(path, mask: ConditionMask):
    _write_pair(_strip_suffix(path, ".grid"), mask.spec, mask.bits.ravel(order="F"), "u8", False)


def load_mask(path) -> ConditionMask:
    header, spec, flat = _read_pair(path)
    if header["dtype"] != "u8":
        raise ValueError("expected a u8 condition mask")
    return ConditionMask(spec, flat.astype(bool))


def read_grid_header(path) -> dict:
    return json.loads(Path(_strip_suffix(path, ".grid") + ".grid.json").read_text())


# -- images -----------------------------------------------------------------


def write_pgm(path, silhouette):
    """Binary P5 PGM, 255 = object."""
    img = (np.asarray(silhouette) > 0.5).astype(np.uint8) * 255
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    dtype = np.uint8 if maxval < 256 else ">u2"
    img = np.frombuffer(data[m.end():], dtype=dtype, count=w * h).reshape(h, w)
    return (img.astype(np.float64) > maxval / 2).astype(np.float64)


def write_pfm(path, depth, invalid=None):
    """Little-endian greyscale PFM (scale -1.0).  Invalid pixels are stored as -1.

    Rows are written bottom-to-top as the format prescribes.
    """
    d = np.asarray(depth, dtype=np.float64).copy()
    if invalid is not None:
        d[np.asarray(invalid, dtype=bool)] = -1.0
    h, w = d.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.flipud(d).astype("<f4").tobytes())


def read_pfm(path):
    """Return ``(depth, valid)``; depth is 0 where invalid."""
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline().strip())
        endian = "<" if scale < 0 else ">"
        chans = 3 if kind == b"PF" else 1
        data = np.frombuffer(f.read(), dtype=endian + "f4", count=w * h * chans)
    img = np.flipud(data.reshape(h, w, chans)[..., 0]).astype(np.float64)
    valid = img >= 0
    return np.where(valid, img, 0.0), valid


def write_camera_json(path, cam):
    Path(path).write_text(json.dumps(cam.to_json(), indent=2) + "\n")


def read_camera_json(path):
    from .render import CameraView

    return CameraView.from_json(json.loads(Path(path).read_text()))
