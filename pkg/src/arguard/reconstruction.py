"""Intra-operative target reconstruction and its evaluation metrics.

A disparity raster plus the binary target mask turn into a metric point
cloud in the rectified left camera frame; the frame graph then carries the
cloud into the reference frame. Depth evaluation covers median/mean/RMS
absolute error, the relative errors, and the ratio-threshold fractions;
segmentation evaluation covers the confusion counts, the five overlap
ratios and the precision-recall area.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .formats import read_pfm, read_pgm
from .geometry import (CameraIntrinsics, FrameGraph, PointCloud, compose,
                       invert, transform_points)

DELTA_THRESHOLDS = (1.25, 1.25 ** 2, 1.25 ** 3)


class EvaluationError(ValueError):
    """Empty evaluation support or mismatched rasters."""


def disparity_to_depth(disp: np.ndarray, baseline_m: float, focal_px: float) -> np.ndarray:
    """depth = baseline * focal / disparity, per valid pixel.

    Non-positive or non-finite disparities yield NaN; this never raises.
    """
    if baseline_m <= 0 or focal_px <= 0:
        raise ValueError("baseline and focal length must be positive")
    disp = np.asarray(disp, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = (baseline_m * focal_px) / disp
    depth[~(np.isfinite(disp) & (disp > 0))] = np.nan
    return depth


def depth_to_disparity(depth: np.ndarray, baseline_m: float, focal_px: float) -> np.ndarray:
    if baseline_m <= 0 or focal_px <= 0:
        raise ValueError("baseline and focal length must be positive")
    depth = np.asarray(depth, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        disp = (baseline_m * focal_px) / depth
    disp[~(np.isfinite(depth) & (depth > 0))] = np.nan
    return disp


def reproject_to_cloud(depth: np.ndarray, k_rect: CameraIntrinsics,
                       select: Optional[np.ndarray] = None) -> PointCloud:
    """Back-project a rectified depth raster into the rectified camera frame.

    Invalid pixels are omitted; each point keeps its (u, v) provenance.
    ``select`` optionally restricts to a boolean pixel subset.
    """
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    keep = np.isfinite(depth)
    if select is not None:
        if select.shape != depth.shape:
            raise EvaluationError(
                f"selection {select.shape} does not match depth {depth.shape}")
        keep = keep & select
    vs, us = np.nonzero(keep)
    z = depth[vs, us]
    x = (us - k_rect.cx) * z / k_rect.fx
    y = (vs - k_rect.cy) * z / k_rect.fy
    return PointCloud(points=np.stack([x, y, z], axis=1),
                      frame="Rec_L_CAM",
                      pixels=np.stack([us, vs], axis=1))


def extract_masked_cloud(disp: np.ndarray, mask: np.ndarray, rig) -> PointCloud:
    """Reproject only the disparity pixels inside the target mask."""
    disp = np.asarray(disp, dtype=np.float64)
    if mask.shape != disp.shape:
        raise EvaluationError(f"mask {mask.shape} does not match disparity {disp.shape}")
    if rig.rectified is None:
        raise EvaluationError("rig has no rectified fields")
    depth = disparity_to_depth(disp, rig.rectified.baseline_m, rig.rectified.focal_px)
    return reproject_to_cloud(depth, rig.rectified.k_rect, select=mask > 0)


def erode_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological erosion with a (2r+1)^2 square structuring element.

    Pixels outside the raster count as background, so the mask also shrinks
    at the image border.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    out = ndimage.minimum_filter(mask, size=2 * radius + 1,
                                 mode="constant", cval=0)
    return out.astype(mask.dtype)


def remove_small_objects(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Clear 8-connected components with pixel area below min_area."""
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    if min_area == 0:
        return mask.copy()
    labels, n = ndimage.label(mask > 0, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return mask.copy()
    areas = np.bincount(labels.ravel())
    keep = areas >= min_area
    keep[0] = False
    out = np.where(keep[labels], mask, 0)
    return out.astype(mask.dtype)


def cloud_to_ecm(cloud: PointCloud, graph: FrameGraph) -> PointCloud:
    """Carry a rectified-left-frame cloud into the reference frame by the
    inverse hand-eye and inverse rectification transforms."""
    t_lcam_rec = graph.get("L_CAM", "Rec_L_CAM")
    t_ecm_lcam = graph.get("ECM", "L_CAM")
    t = compose(invert(t_lcam_rec), invert(t_ecm_lcam))  # Rec_L_CAM -> ECM
    return transform_points(t, cloud)


# ---------------------------------------------------------------------------
# Depth evaluation


@dataclass
class DepthEvalReport:
    meae_m: float
    mae_m: float
    rmse_m: float
    abs_rel: float
    sq_rel: float
    delta1: float
    delta2: float
    delta3: float
    valid_count: int

    def as_dict(self) -> dict:
        return {
            "MeAE_m": self.meae_m, "MAE_m": self.mae_m, "RMSE_m": self.rmse_m,
            "AbsRel": self.abs_rel, "SqRel": self.sq_rel,
            "delta_1.25": self.delta1, "delta_1.25^2": self.delta2,
            "delta_1.25^3": self.delta3, "valid_px": self.valid_count,
        }


def _lower_median(values: np.ndarray) -> float:
    # Deterministic lower median for even counts.
    k = (len(values) - 1) // 2
    return float(np.partition(values, k)[k])


def depth_metrics(pred: np.ndarray, gt: np.ndarray,
                  taus: Sequence[float] = DELTA_THRESHOLDS) -> DepthEvalReport:
    """Depth error suite over the pixels valid in both rasters.

    Ground-truth pixels <= 0 are excluded from the support; ratio thresholds
    use strict less-than and clamp predictions to be positive.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise EvaluationError(f"prediction {pred.shape} does not match gt {gt.shape}")
    support = np.isfinite(pred) & np.isfinite(gt) & (gt > 0)
    if not support.any():
        raise EvaluationError("no valid pixels shared by prediction and ground truth")
    p = pred[support]
    g = gt[support]
    err = np.abs(p - g)
    ratio = np.maximum(np.maximum(p, 1e-300) / g, g / np.maximum(p, 1e-300))
    deltas = [float(np.mean(ratio < tau)) for tau in taus]
    return DepthEvalReport(
        meae_m=_lower_median(err),
        mae_m=float(np.mean(err)),
        rmse_m=float(np.sqrt(np.mean(err * err))),
        abs_rel=float(np.mean(err / g)),
        sq_rel=float(np.mean(err * err / g)),
        delta1=deltas[0], delta2=deltas[1], delta3=deltas[2],
        valid_count=int(support.sum()),
    )


# ---------------------------------------------------------------------------
# Segmentation evaluation


@dataclass
class SegEvalReport:
    tp: int
    tn: int
    fp: int
    fn: int
    dice: Optional[float]
    accuracy: Optional[float]
    specificity: Optional[float]
    sensitivity: Optional[float]
    precision: Optional[float]
    pr_area: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "TP": self.tp, "TN": self.tn, "FP": self.fp, "FN": self.fn,
            "Dice": self.dice, "Accuracy": self.accuracy,
            "Specificity": self.specificity, "Sensitivity": self.sensitivity,
            "Precision": self.precision, "PR_area": self.pr_area,
        }


def _ratio(num: int, den: int) -> Optional[float]:
    # Undefined ratios stay None rather than silently becoming 0.
    return num / den if den > 0 else None


def seg_metrics(pred: np.ndarray, gt: np.ndarray) -> SegEvalReport:
    """Confusion counts and overlap ratios for 0/255 binary masks."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise EvaluationError(f"prediction {pred.shape} does not match gt {gt.shape}")
    p = pred > 0
    g = gt > 0
    tp = int(np.sum(p & g))
    tn = int(np.sum(~p & ~g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    return SegEvalReport(
        tp=tp, tn=tn, fp=fp, fn=fn,
        dice=_ratio(2 * tp, 2 * tp + fp + fn),
        accuracy=_ratio(tp + tn, tp + tn + fp + fn),
        specificity=_ratio(tn, tn + fp),
        sensitivity=_ratio(tp, tp + fn),
        precision=_ratio(tp, tp + fp),
    )


def pr_curve_area(prob: np.ndarray, gt: np.ndarray) -> float:
    """Area under the precision-recall curve by trapezoid over recall.

    The curve is swept over every distinct probability value (classification
    rule prob >= threshold) and anchored at recall 0 with the precision of
    the highest threshold.
    """
    prob = np.asarray(prob, dtype=np.float64)
    gt = np.asarray(gt)
    if prob.shape != gt.shape:
        raise EvaluationError(f"probabilities {prob.shape} do not match gt {gt.shape}")
    g = (gt > 0).ravel()
    n_pos = int(g.sum())
    if n_pos == 0:
        raise EvaluationError("ground truth has no positive pixels")
    p = prob.ravel()
    order = np.argsort(-p, kind="stable")
    ps = p[order]
    gs = g[order]
    tp_cum = np.cumsum(gs)
    fp_cum = np.cumsum(~gs)
    last_of_value = np.flatnonzero(np.append(np.diff(ps) != 0, True))
    tp = tp_cum[last_of_value].astype(np.float64)
    fp = fp_cum[last_of_value].astype(np.float64)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    recalls = np.concatenate([[0.0], recall])
    precisions = np.concatenate([[precision[0]], precision])
    return float(np.trapezoid(precisions, recalls))


# ---------------------------------------------------------------------------
# Providers: pluggable disparity / mask sources for the pipeline


class DepthProvider:
    """Source of one disparity raster per frame, matching the rectified size."""

    def disparity(self, frame_index: int) -> np.ndarray:
        raise NotImplementedError


class MaskProvider:
    """Source of one left-frame binary mask per frame."""

    def mask(self, frame_index: int) -> np.ndarray:
        raise NotImplementedError


def frame_dir(dataset_dir, frame_index: int) -> Path:
    return Path(dataset_dir) / f"{frame_index:06d}"


class FileDepthProvider(DepthProvider):
    def __init__(self, dataset_dir):
        self.dataset_dir = Path(dataset_dir)

    def disparity(self, frame_index: int) -> np.ndarray:
        return read_pfm(frame_dir(self.dataset_dir, frame_index) / "disp_gt.pfm")


class FileMaskProvider(MaskProvider):
    def __init__(self, dataset_dir):
        self.dataset_dir = Path(dataset_dir)

    def mask(self, frame_index: int) -> np.ndarray:
        return read_pgm(frame_dir(self.dataset_dir, frame_index) / "mask_gt.pgm")
