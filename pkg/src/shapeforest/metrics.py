"""Segmentation evaluation: mask overlap, contour distances, clinical areas
and summary statistics.

Contour distances (MAD, Hausdorff) are correspondence-free: both contours
are densely resampled by arc length and each sample is measured against the
nearest point of the other contour's closed polyline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import (
    BadKeyIndices,
    DegenerateShape,
    DimensionMismatch,
    LengthMismatch,
    ZeroVariance,
)
from .imaging import BinaryMask, _segment_distances
from .shape_model import LandmarkSet


@dataclass(frozen=True, eq=False)
class ContourPair:
    predicted: LandmarkSet
    reference: LandmarkSet
    step: float = 0.5  # dense resampling step, pixels

    def __post_init__(self):
        if self.step <= 0:
            raise DegenerateShape("resampling step must be positive")


@dataclass(frozen=True, eq=False)
class SummaryStats:
    """Agreement summary between predicted and reference index values."""

    corr: float
    bias: float
    std: float
    t_stat: float
    p_value: float
    bland_altman: np.ndarray  # (n, 2) columns: mean, difference


def jaccard(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; two empty masks count as perfect overlap."""
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(
            f"mask sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    inter = int(np.count_nonzero(a.data & b.data))
    union = int(np.count_nonzero(a.data | b.data))
    if union == 0:
        return 1.0
    return inter / union


def resample_contour(shape: LandmarkSet, step: float) -> np.ndarray:
    """Uniform arc-length samples along the closed polyline, spacing <= step."""
    pts = shape.points
    closed = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    perimeter = cum[-1]
    if perimeter == 0.0:
        return pts[:1].copy()
    n = max(int(np.ceil(perimeter / step)), pts.shape[0])
    at = np.arange(n) * (perimeter / n)
    xs = np.interp(at, cum, closed[:, 0])
    ys = np.interp(at, cum, closed[:, 1])
    return np.column_stack([xs, ys])


def _directed_distances(samples: np.ndarray, target: LandmarkSet) -> np.ndarray:
    return _segment_distances(samples, target)


def mad(pair: ContourPair) -> float:
    """Symmetric mean absolute contour distance in pixels."""
    pa = resample_contour(pair.predicted, pair.step)
    pb = resample_contour(pair.reference, pair.step)
    d_ab = _directed_distances(pa, pair.reference).mean()
    d_ba = _directed_distances(pb, pair.predicted).mean()
    return float((d_ab + d_ba) / 2.0)


def hausdorff(pair: ContourPair) -> float:
    """Symmetric Hausdorff distance over the same dense resampling."""
    pa = resample_contour(pair.predicted, pair.step)
    pb = resample_contour(pair.reference, pair.step)
    d_ab = _directed_distances(pa, pair.reference).max()
    d_ba = _directed_distances(pb, pair.predicted).max()
    return float(max(d_ab, d_ba))


def _shoelace(points: np.ndarray) -> float:
    x = points[:, 0]
    y = points[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def areas(shape: LandmarkSet, key_indices) -> dict:
    """Clinical areas from the canonical contour layout.

    ``key_indices`` are the four key-landmark positions in ascending order:
    (left basal endpoint, epicardial apex, right basal endpoint, endocardial
    apex).  The myocardial area is the shoelace area of the full closed
    contour; the endocardial (cavity) area is the shoelace area of the chain
    from the right basal endpoint through the endocardial apex back to the
    left basal endpoint, closed by the straight basal segment.
    """
    keys = tuple(int(k) for k in key_indices)
    if len(keys) != 4 or len(set(keys)) != 4:
        raise BadKeyIndices(f"need 4 distinct key indices, got {key_indices}")
    if any(not (0 <= k < shape.M) for k in keys):
        raise BadKeyIndices(f"key indices {keys} out of range for M={shape.M}")
    if list(keys) != sorted(keys):
        raise BadKeyIndices(f"key indices must be in canonical ascending order, got {keys}")
    _, _, basal_right, _ = keys
    basal_left = keys[0]
    idx = np.arange(basal_right, basal_right + (basal_left - basal_right) % shape.M + 1) % shape.M
    endo_chain = shape.points[idx]
    return {
        "myo_area": _shoelace(shape.points),
        "endo_area": _shoelace(endo_chain),
    }


def summarize(pred, ref) -> SummaryStats:
    """Pearson correlation, bias, std of differences and a two-sided paired
    t-test; Bland-Altman (mean, difference) columns come along for plotting."""
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape or pred.ndim != 1:
        raise LengthMismatch(f"pred and ref must be equal-length vectors, got"
                             f" {pred.shape} vs {ref.shape}")
    n = pred.size
    if n < 2:
        raise LengthMismatch("need at least 2 paired values")
    if np.ptp(pred) == 0.0 or np.ptp(ref) == 0.0:
        raise ZeroVariance("correlation undefined for constant inputs")
    corr = float(np.corrcoef(pred, ref)[0, 1])
    diff = pred - ref
    bias = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        t_stat = 0.0 if bias == 0.0 else float(np.sign(bias)) * np.inf
        p_value = 1.0 if bias == 0.0 else 0.0
    else:
        t_stat = bias / (sd / np.sqrt(n))
        p_value = float(2.0 * stats.t.sf(abs(t_stat), df=n - 1))
    ba = np.column_stack([(pred + ref) / 2.0, diff])
    return SummaryStats(corr=corr, bias=bias, std=sd, t_stat=float(t_stat),
                        p_value=p_value, bland_altman=ba)
