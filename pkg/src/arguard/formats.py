"""Raster, point-cloud, mesh and transform serialization.

Formats:
* PGM (P5, maxval 255) for masks and 8-bit images.
* PPM (P6) for rendered RGB frames.
* PFM ("Pf" header) for float rasters; negative scale marks little-endian
  payload, rows stored bottom-up. Invalid cells round-trip as NaN.
* ASCII PLY with x y z and optional nx ny nz.
* OBJ with v/f records (triangles only).
* JSON for transforms and stereo rigs, with explicit frame labels and units
  spelled out in the field names (``translation_m``, ``baseline_m``).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from .geometry import (CameraIntrinsics, PointCloud, RectifiedRig,
                       RigidTransform, StereoRig, TriangleMesh)

PathLike = Union[str, Path]


class FormatError(ValueError):
    """Malformed file; message names the file and the offending location."""


# ---------------------------------------------------------------------------
# PGM / PPM


def write_pgm(path: PathLike, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise FormatError(f"{path}: PGM wants a 2-D raster, got shape {img.shape}")
    data = np.clip(img, 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def write_ppm(path: PathLike, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"{path}: PPM wants an (H, W, 3) raster, got {img.shape}")
    data = np.clip(img, 0, 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _read_pnm_header(f, path: PathLike, magic: bytes) -> tuple[int, int]:
    got = f.read(2)
    if got != magic:
        raise FormatError(f"{path}: expected {magic.decode()} magic, got {got!r}")
    fields = []
    while len(fields) < 3:
        line = f.readline()
        if not line:
            raise FormatError(f"{path}: truncated header")
        line = line.split(b"#", 1)[0]
        fields.extend(line.split())
    w, h, maxval = (int(x) for x in fields[:3])
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    return w, h


def read_pgm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        w, h = _read_pnm_header(f, path, b"P5")
        payload = f.read(w * h)
        if len(payload) != w * h:
            raise FormatError(f"{path}: payload truncated at byte {len(payload)} of {w * h}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


def read_ppm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        w, h = _read_pnm_header(f, path, b"P6")
        payload = f.read(w * h * 3)
        if len(payload) != w * h * 3:
            raise FormatError(f"{path}: payload truncated at byte {len(payload)} of {w * h * 3}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path: PathLike, raster: np.ndarray) -> None:
    raster = np.asarray(raster, dtype=np.float32)
    if raster.ndim != 2:
        raise FormatError(f"{path}: PFM wants a 2-D float raster, got {raster.shape}")
    h, w = raster.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale: little-endian
        f.write(raster[::-1].astype("<f4").tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"Pf":
            raise FormatError(f"{path}: expected 'Pf' magic, got {magic!r}")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FormatError(f"{path}: malformed dimensions line {dims!r}")
        w, h = int(dims[0]), int(dims[1])
        try:
            scale = float(f.readline())
        except ValueError as e:
            raise FormatError(f"{path}: malformed scale line") from e
        dtype = "<f4" if scale < 0 else ">f4"
        payload = f.read(w * h * 4)
        if len(payload) != w * h * 4:
            raise FormatError(f"{path}: payload truncated at byte {len(payload)} of {w * h * 4}")
    data = np.frombuffer(payload, dtype=dtype).reshape(h, w)
    return data[::-1].astype(np.float64)


# ---------------------------------------------------------------------------
# PLY / OBJ


def write_ply(path: PathLike, cloud: PointCloud) -> None:
    has_normals = cloud.normals is not None
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
             "property float x", "property float y", "property float z"]
    if has_normals:
        lines += ["property float nx", "property float ny", "property float nz"]
    lines += [f"comment frame {cloud.frame}", "end_header"]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
        for i in range(len(cloud)):
            row = list(cloud.points[i])
            if has_normals:
                row += list(cloud.normals[i])
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_ply(path: PathLike, frame: str = "ECM") -> PointCloud:
    with open(path) as f:
        line = f.readline().strip()
        if line != "ply":
            raise FormatError(f"{path}: not a PLY file (first line {line!r})")
        n_vertex = None
        props: list[str] = []
        stored_frame = None
        while True:
            line = f.readline()
            if not line:
                raise FormatError(f"{path}: header missing end_header")
            line = line.strip()
            if line.startswith("element vertex"):
                n_vertex = int(line.split()[-1])
            elif line.startswith("property"):
                props.append(line.split()[-1])
            elif line.startswith("comment frame"):
                stored_frame = line.split()[-1]
            elif line == "end_header":
                break
        if n_vertex is None:
            raise FormatError(f"{path}: no vertex element in header")
        rows = []
        for i in range(n_vertex):
            line = f.readline()
            if not line:
                raise FormatError(f"{path}: vertex data truncated at row {i}")
            rows.append([float(v) for v in line.split()])
    data = np.asarray(rows, dtype=np.float64)
    has_normals = props[:6] == ["x", "y", "z", "nx", "ny", "nz"]
    return PointCloud(points=data[:, :3],
                      normals=data[:, 3:6] if has_normals else None,
                      frame=stored_frame or frame)


def write_obj(path: PathLike, mesh: TriangleMesh) -> None:
    with open(path, "w") as f:
        f.write(f"# frame {mesh.frame}\n")
        for v in mesh.vertices:
            f.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for face in mesh.faces:
            f.write(f"f {face[0] + 1} {face[1] + 1} {face[2] + 1}\n")


def read_obj(path: PathLike, frame: str = "BL") -> TriangleMesh:
    vertices = []
    faces = []
    stored_frame = None
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#" and len(parts) >= 3 and parts[1] == "frame":
                stored_frame = parts[2]
            elif parts[0] == "v":
                if len(parts) < 4:
                    raise FormatError(f"{path}:{lineno}: short vertex record")
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise FormatError(f"{path}:{lineno}: only triangles supported")
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
                faces.append(idx)
    return TriangleMesh(vertices=np.asarray(vertices, dtype=np.float64),
                        faces=np.asarray(faces, dtype=np.int64).reshape(-1, 3),
                        frame=stored_frame or frame)


# ---------------------------------------------------------------------------
# JSON: transforms, intrinsics, rigs


def transform_to_dict(t: RigidTransform) -> dict:
    return {
        "from": t.frame_from,
        "to": t.frame_to,
        "rotation": t.rotation.tolist(),
        "translation_m": t.translation.tolist(),
    }


def transform_from_dict(d: dict) -> RigidTransform:
    return RigidTransform(np.asarray(d["rotation"]),
                          np.asarray(d["translation_m"]),
                          d["from"], d["to"])


def intrinsics_to_dict(k: CameraIntrinsics) -> dict:
    return {
        "fx_px": k.fx, "fy_px": k.fy, "cx_px": k.cx, "cy_px": k.cy,
        "width_px": k.width, "height_px": k.height,
        "distortion": k.distortion.tolist(),
    }


def intrinsics_from_dict(d: dict) -> CameraIntrinsics:
    return CameraIntrinsics(fx=d["fx_px"], fy=d["fy_px"], cx=d["cx_px"],
                            cy=d["cy_px"], width=d["width_px"],
                            height=d["height_px"],
                            distortion=np.asarray(d["distortion"]))


def rig_to_dict(rig: StereoRig) -> dict:
    d = {
        "left": intrinsics_to_dict(rig.left),
        "right": intrinsics_to_dict(rig.right),
        "t_right_from_left": transform_to_dict(rig.t_right_from_left),
        "baseline_m": rig.baseline_m,
    }
    if rig.rectified is not None:
        d["rectified"] = {
            "k_rect": intrinsics_to_dict(rig.rectified.k_rect),
            "r_left": transform_to_dict(rig.rectified.r_left),
            "r_right": transform_to_dict(rig.rectified.r_right),
            "focal_px": rig.rectified.focal_px,
            "baseline_m": rig.rectified.baseline_m,
        }
    return d


def rig_from_dict(d: dict) -> StereoRig:
    rectified = None
    if "rectified" in d:
        r = d["rectified"]
        rectified = RectifiedRig(k_rect=intrinsics_from_dict(r["k_rect"]),
                                 r_left=transform_from_dict(r["r_left"]),
                                 r_right=transform_from_dict(r["r_right"]),
                                 focal_px=r["focal_px"],
                                 baseline_m=r["baseline_m"])
    return StereoRig(left=intrinsics_from_dict(d["left"]),
                     right=intrinsics_from_dict(d["right"]),
                     t_right_from_left=transform_from_dict(d["t_right_from_left"]),
                     baseline_m=d["baseline_m"],
                     rectified=rectified)


def save_json(path: PathLike, obj: dict) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def load_json(path: PathLike) -> dict:
    with open(path) as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON at line {e.lineno}") from e
