"""Model projection into both image planes and the on-frame safety drawing.

The registered pre-operative model is projected through the frame chain
into each camera (left: hand-eye then intrinsics; right: additionally the
inter-camera transform) and rendered as z-buffered filled triangles or
point splats, alpha-blended at the configured opacity. Two arc gauges in
the upper corners show the clamped per-arm minimum distances with the
banded warning color; all drawing is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .geometry import (CameraIntrinsics, FrameGraph, PointCloud,
                       TriangleMesh, compose, project_points)
from .proximity import GaugeState, RISK_LIMIT_M, SAFE_LIMIT_M, color_for_distance
from .raster import front_face_mask, rasterize_triangles

Model = Union[PointCloud, TriangleMesh]


@dataclass
class OverlayStyle:
    opacity: float = 0.6
    splat_radius_px: int = 1
    gauge_radius_px: int = 40
    gauge_margin_px: int = 12
    gauge_range_m: float = SAFE_LIMIT_M

    def __post_init__(self):
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError("opacity must lie in [0, 1]")


@dataclass
class Primitives2D:
    """Projected model: pixel positions with camera-frame depth, plus faces
    when the model is a mesh. Culled vertices carry NaN pixels. cam_points
    (when set by the projector) enable back-face culling for closed meshes."""

    uv: np.ndarray
    depth: np.ndarray
    faces: Optional[np.ndarray] = None
    cam_points: Optional[np.ndarray] = None

    def visible_points(self) -> np.ndarray:
        keep = np.isfinite(self.uv).all(axis=1) & (self.depth > 0)
        return self.uv[keep]


def _project_model(model: Model, graph: FrameGraph, k: CameraIntrinsics,
                   camera_frame: str) -> Primitives2D:
    t = graph.get(model.frame, camera_frame)
    verts = model.vertices if isinstance(model, TriangleMesh) else model.points
    cam_pts = t.apply(verts)
    uv, _ = project_points(k, cam_pts)
    faces = model.faces if isinstance(model, TriangleMesh) else None
    return Primitives2D(uv=uv, depth=cam_pts[:, 2], faces=faces,
                        cam_points=cam_pts if faces is not None else None)


def project_model_left(model: Model, graph: FrameGraph,
                       k_l: CameraIntrinsics) -> Primitives2D:
    """Project the model into the left image: intrinsics after the
    registration and hand-eye transforms. Points behind the camera cull."""
    return _project_model(model, graph, k_l, "L_CAM")


def project_model_right(model: Model, graph: FrameGraph,
                        k_r: CameraIntrinsics) -> Primitives2D:
    """Right-image projection: the left chain extended by the inter-camera
    transform."""
    return _project_model(model, graph, k_r, "R_CAM")


def project_model_rectified(model: Model, graph: FrameGraph,
                            k_rect: CameraIntrinsics, side: str) -> Primitives2D:
    """Projection into a rectified image plane (the frames the pipeline
    displays); distortion-free intrinsics."""
    frame = "Rec_L_CAM" if side == "left" else "Rec_R_CAM"
    return _project_model(model, graph, k_rect, frame)


def rasterize_primitives(prims: Primitives2D, width: int, height: int,
                         splat_radius_px: int = 1,
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Coverage buffers for a primitive set: (inverse depth, winner id)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_z = np.where(prims.depth > 0, 1.0 / prims.depth, -1.0)
    if prims.faces is not None:
        faces = prims.faces
        ids = np.arange(len(faces))
        if prims.cam_points is not None:
            front = front_face_mask(prims.cam_points, faces)
            faces, ids = faces[front], ids[front]
        return rasterize_triangles(prims.uv, inv_z, faces, width, height, ids)
    zbuf = np.zeros((height, width))
    idbuf = np.full((height, width), -1, dtype=np.int64)
    keep = np.isfinite(prims.uv).all(axis=1) & (inv_z > 0)
    uv = prims.uv[keep]
    iz = inv_z[keep]
    ids = np.flatnonzero(keep)
    px = np.rint(uv[:, 0]).astype(np.int64)
    py = np.rint(uv[:, 1]).astype(np.int64)
    r = splat_radius_px
    offsets = [(dx, dy) for dx in range(-r, r + 1) for dy in range(-r, r + 1)
               if dx * dx + dy * dy <= r * r]
    flat_z = zbuf.ravel()
    flat_id = idbuf.ravel()
    for dx, dy in offsets:
        x = px + dx
        y = py + dy
        inside = (x >= 0) & (x < width) & (y >= 0) & (y < height)
        flat = y[inside] * width + x[inside]
        z = iz[inside]
        before = flat_z[flat].copy()
        np.maximum.at(flat_z, flat, z)
        after = flat_z[flat]
        win = (z == after) & (z > before)
        if win.any():
            sentinel = np.iinfo(np.int64).max
            tmp = np.full(flat_z.shape, sentinel, dtype=np.int64)
            np.minimum.at(tmp, flat[win], ids[inside][win])
            upd = tmp != sentinel
            flat_id[upd] = tmp[upd]
    return zbuf, idbuf


def render_overlay(frame: np.ndarray, prims: Primitives2D,
                   color: tuple[int, int, int],
                   style: Optional[OverlayStyle] = None) -> np.ndarray:
    """Alpha-blend the projected model onto an RGB frame.

    Covered pixels blend once at the style opacity regardless of how many
    primitives stack there (the z-buffer picks the front surface); pixels
    outside the coverage stay byte-identical.
    """
    style = style or OverlayStyle()
    out = np.asarray(frame).copy()
    if out.ndim != 3 or out.shape[2] != 3:
        raise ValueError("overlay frames must be (H, W, 3) RGB")
    h, w = out.shape[:2]
    _, idbuf = rasterize_primitives(prims, w, h, style.splat_radius_px)
    covered = idbuf >= 0
    if covered.any():
        blended = (out[covered].astype(np.float64) * (1.0 - style.opacity)
                   + np.asarray(color, dtype=np.float64) * style.opacity)
        out[covered] = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
    return out


# ---------------------------------------------------------------------------
# Gauges


_GLYPHS = {
    "0": ["111", "101", "101", "101", "111"],
    "1": ["010", "110", "010", "010", "111"],
    "2": ["111", "001", "111", "100", "111"],
    "3": ["111", "001", "111", "001", "111"],
    "4": ["101", "101", "111", "001", "001"],
    "5": ["111", "100", "111", "001", "111"],
    "6": ["111", "100", "111", "101", "111"],
    "7": ["111", "001", "010", "010", "010"],
    "8": ["111", "101", "111", "101", "111"],
    "9": ["111", "101", "111", "001", "111"],
    ".": ["000", "000", "000", "000", "010"],
    "c": ["000", "011", "100", "100", "011"],
    "m": ["000", "110", "111", "101", "101"],
    " ": ["000", "000", "000", "000", "000"],
    "-": ["000", "000", "111", "000", "000"],
}


def _draw_text(img: np.ndarray, text: str, top: int, left: int,
               color: tuple[int, int, int], scale: int = 2) -> None:
    x = left
    h, w = img.shape[:2]
    for ch in text:
        glyph = _GLYPHS.get(ch, _GLYPHS[" "])
        for gy, row in enumerate(glyph):
            for gx, bit in enumerate(row):
                if bit == "1":
                    y0 = top + gy * scale
                    x0 = x + gx * scale
                    if 0 <= y0 and y0 + scale <= h and 0 <= x0 and x0 + scale <= w:
                        img[y0:y0 + scale, x0:x0 + scale] = color
        x += (3 + 1) * scale


def _draw_gauge(img: np.ndarray, center_x: int, center_y: int, radius: int,
                value_m: float, zone: str, range_m: float) -> None:
    """180-degree arc over the top half, filled proportionally to the clamped
    distance, with ticks at 0, half range (risk boundary) and full range."""
    h, w = img.shape[:2]
    frac = np.clip(value_m / range_m, 0.0, 1.0)
    y0 = max(0, center_y - radius - 2)
    y1 = min(h, center_y + 3)
    x0 = max(0, center_x - radius - 2)
    x1 = min(w, center_x + radius + 3)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx = xs - center_x
    dy = ys - center_y
    rr = np.sqrt(dx * dx + dy * dy)
    ring = (rr <= radius) & (rr >= radius - 6) & (dy <= 0)
    # Sweep angle from the left end (pi) toward the right end (0).
    ang = np.arctan2(-dy, dx)          # in [0, pi] on the upper half
    sweep = (np.pi - ang) / np.pi      # 0 at left end, 1 at right end
    fill_color = color_for_distance(value_m)
    base = ring & (sweep > frac)
    fill = ring & (sweep <= frac)
    img[ys[base], xs[base]] = (70, 70, 70)
    img[ys[fill], xs[fill]] = fill_color
    for tick in (0.0, RISK_LIMIT_M / range_m, 1.0):
        ta = np.pi * (1.0 - tick)
        for rt in range(radius - 8, radius + 2):
            px = int(round(center_x + rt * np.cos(ta)))
            py = int(round(center_y - rt * np.sin(ta)))
            if 0 <= py < h and 0 <= px < w:
                img[py, px] = (235, 235, 235)
    label = f"{value_m * 100:.1f}cm"
    text_color = (235, 235, 235) if zone == "SAFE" else (255, 80, 80)
    _draw_text(img, label, center_y + 4, center_x - 2 * len(label) * 4 // 2,
               text_color)


def render_gauges(frame: np.ndarray, state: GaugeState,
                  style: Optional[OverlayStyle] = None) -> np.ndarray:
    """Draw the two corner gauges (left arm upper-left, right arm
    upper-right) onto a copy of the frame."""
    style = style or OverlayStyle()
    out = np.asarray(frame).copy()
    if out.ndim != 3 or out.shape[2] != 3:
        raise ValueError("gauge frames must be (H, W, 3) RGB")
    h, w = out.shape[:2]
    r = style.gauge_radius_px
    m = style.gauge_margin_px
    _draw_gauge(out, m + r, m + r, r, state.left_gauge_m, state.left_zone,
                style.gauge_range_m)
    _draw_gauge(out, w - m - r - 1, m + r, r, state.right_gauge_m,
                state.right_zone, style.gauge_range_m)
    return out


def to_rgb(gray: np.ndarray) -> np.ndarray:
    """Expand a grayscale raster to RGB for drawing."""
    g = np.asarray(gray)
    if g.ndim == 3:
        return g.copy()
    return np.repeat(g[:, :, None], 3, axis=2)
