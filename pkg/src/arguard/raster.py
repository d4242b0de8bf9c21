"""Z-buffer triangle rasterization over integer pixel centers.

Shared by the scene simulator (ground-truth rendering) and the overlay
renderer. Inverse depth is interpolated linearly in screen space, exact for
planar triangles; boundary ties follow a top-left fill rule so shared edges
are covered exactly once and masks have hard, deterministic semantics.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap


def front_face_mask(cam_pts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Faces of a closed outward-wound mesh that face the camera at the
    origin. Culling back faces halves rasterization work and cannot change
    the image for watertight meshes."""
    a = cam_pts[faces[:, 0]]
    n = np.cross(cam_pts[faces[:, 1]] - a, cam_pts[faces[:, 2]] - a)
    return np.einsum("ni,ni->n", n, a) < 0.0


def rasterize_triangles(uv: np.ndarray, inv_z: np.ndarray, faces: np.ndarray,
                        width: int, height: int, face_ids: np.ndarray,
                        zinv_buf: Optional[np.ndarray] = None,
                        id_buf: Optional[np.ndarray] = None,
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize triangles into (inverse-depth, face-id) buffers.

    Pixels sample at integer coordinates; boundary ties follow a top-left
    rule so shared edges are covered exactly once. Faces with any vertex at
    or behind the camera are culled. Existing buffer content survives where
    no strictly closer fragment lands.
    """
    if zinv_buf is None:
        zinv_buf = np.zeros((height, width))
    if id_buf is None:
        id_buf = np.full((height, width), -1, dtype=np.int64)
    if len(faces) == 0:
        return zinv_buf, id_buf
    tri_uv = uv[faces]                      # (F, 3, 2)
    tri_z = inv_z[faces].copy()             # (F, 3)
    gid = np.asarray(face_ids, dtype=np.int64)
    ok = np.all(np.isfinite(tri_uv), axis=(1, 2)) & np.all(tri_z > 0, axis=1)
    tri_uv, tri_z, gid = tri_uv[ok], tri_z[ok], gid[ok]
    if len(tri_uv) == 0:
        return zinv_buf, id_buf
    # Orient counter-clockwise (screen coords, y down).
    e01 = tri_uv[:, 1] - tri_uv[:, 0]
    e02 = tri_uv[:, 2] - tri_uv[:, 0]
    area = e01[:, 0] * e02[:, 1] - e01[:, 1] * e02[:, 0]
    flip = area < 0
    tri_uv[flip] = tri_uv[flip][:, [0, 2, 1]]
    tri_z[flip] = tri_z[flip][:, [0, 2, 1]]
    area = np.abs(area)
    keep = area > 1e-12
    keep &= (tri_uv[:, :, 0].min(axis=1) <= width - 1)
    keep &= (tri_uv[:, :, 0].max(axis=1) >= 0)
    keep &= (tri_uv[:, :, 1].min(axis=1) <= height - 1)
    keep &= (tri_uv[:, :, 1].max(axis=1) >= 0)
    tri_uv, tri_z, gid, area = tri_uv[keep], tri_z[keep], gid[keep], area[keep]
    if len(tri_uv) == 0:
        return zinv_buf, id_buf
    x0 = np.clip(np.ceil(tri_uv[:, :, 0].min(axis=1)), 0, width - 1).astype(np.int64)
    x1 = np.clip(np.floor(tri_uv[:, :, 0].max(axis=1)), 0, width - 1).astype(np.int64)
    y0 = np.clip(np.ceil(tri_uv[:, :, 1].min(axis=1)), 0, height - 1).astype(np.int64)
    y1 = np.clip(np.floor(tri_uv[:, :, 1].max(axis=1)), 0, height - 1).astype(np.int64)
    bw = x1 - x0 + 1
    bh = y1 - y0 + 1
    nonempty = (bw > 0) & (bh > 0)
    tri_uv, tri_z, gid, area = (tri_uv[nonempty], tri_z[nonempty],
                                gid[nonempty], area[nonempty])
    x0, y0, bw, bh = x0[nonempty], y0[nonempty], bw[nonempty], bh[nonempty]
    if len(tri_uv) == 0:
        return zinv_buf, id_buf

    # Per-triangle edge coefficients: E(p) = ex * px + ey * py + ec, one row
    # per edge (v1->v2, v2->v0, v0->v1), matching barycentric order.
    n_tri = len(tri_uv)
    exs = np.empty((n_tri, 3))
    eys = np.empty((n_tri, 3))
    ecs = np.empty((n_tri, 3))
    accept = np.empty((n_tri, 3), dtype=bool)
    for e, (ia, ib) in enumerate(((1, 2), (2, 0), (0, 1))):
        ax, ay = tri_uv[:, ia, 0], tri_uv[:, ia, 1]
        bx, by = tri_uv[:, ib, 0], tri_uv[:, ib, 1]
        dx = bx - ax
        dy = by - ay
        exs[:, e] = -dy
        eys[:, e] = dx
        ecs[:, e] = dy * ax - dx * ay
        accept[:, e] = (dy < 0) | ((dy == 0) & (dx > 0))  # top-left rule

    zflat = zinv_buf.ravel()
    idflat = id_buf.ravel()
    if HAVE_NUMBA:
        _scanline_kernel(tri_z, gid, area, exs, eys, ecs, accept,
                         x0, y0, bw, bh, zflat, idflat, width)
        return zinv_buf, id_buf

    counts = bw * bh
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    total = int(counts.sum())
    t = np.repeat(np.arange(n_tri), counts)
    local = np.arange(total) - np.repeat(starts, counts)
    px = (x0[t] + local % bw[t]).astype(np.float64)
    py = (y0[t] + local // bw[t]).astype(np.float64)

    inside = np.ones(total, dtype=bool)
    ws = np.empty((3, total))
    for e in range(3):
        w = exs[t, e] * px + eys[t, e] * py + ecs[t, e]
        ws[e] = w
        inside &= (w > 0) | ((w == 0) & accept[t, e])
    if not inside.any():
        return zinv_buf, id_buf
    t = t[inside]
    px_i = px[inside].astype(np.int64)
    py_i = py[inside].astype(np.int64)
    z = (ws[0, inside] * tri_z[t, 0] + ws[1, inside] * tri_z[t, 1]
         + ws[2, inside] * tri_z[t, 2]) / area[t]
    flat = py_i * width + px_i
    before = zflat[flat].copy()
    np.maximum.at(zflat, flat, z)
    after = zflat[flat]
    winner = (z == after) & (z > before)
    if winner.any():
        sentinel = np.iinfo(np.int64).max
        tmp = np.full(zflat.shape, sentinel, dtype=np.int64)
        np.minimum.at(tmp, flat[winner], gid[t[winner]])
        upd = tmp != sentinel
        idflat[upd] = tmp[upd]
    return zinv_buf, id_buf


@njit(cache=True)
def _scanline_kernel(tri_z, gid, area, exs, eys, ecs, accept,
                     x0, y0, bw, bh, zflat, idflat, width):
    """Sequential per-triangle scanline with semantics identical to the
    vectorized path: strict-greater depth wins; equal-depth fragments
    written in this call resolve to the smallest face id; equal depth never
    displaces pre-existing buffer content."""
    written = np.zeros(zflat.shape[0], dtype=np.uint8)
    for f in range(tri_z.shape[0]):
        ar = area[f]
        za, zb, zc = tri_z[f, 0], tri_z[f, 1], tri_z[f, 2]
        g = gid[f]
        for yy in range(y0[f], y0[f] + bh[f]):
            fy = float(yy)
            base = yy * width
            for xx in range(x0[f], x0[f] + bw[f]):
                fx = float(xx)
                w0 = exs[f, 0] * fx + eys[f, 0] * fy + ecs[f, 0]
                if w0 < 0 or (w0 == 0 and not accept[f, 0]):
                    continue
                w1 = exs[f, 1] * fx + eys[f, 1] * fy + ecs[f, 1]
                if w1 < 0 or (w1 == 0 and not accept[f, 1]):
                    continue
                w2 = exs[f, 2] * fx + eys[f, 2] * fy + ecs[f, 2]
                if w2 < 0 or (w2 == 0 and not accept[f, 2]):
                    continue
                z = (w0 * za + w1 * zb + w2 * zc) / ar
                i = base + xx
                if z > zflat[i]:
                    zflat[i] = z
                    idflat[i] = g
                    written[i] = 1
                elif z == zflat[i] and written[i] == 1 and g < idflat[i]:
                    idflat[i] = g
