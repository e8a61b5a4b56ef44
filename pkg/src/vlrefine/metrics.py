"""Grounding and segmentation metrics: temporal IoU, Rank n@m, J, F and J&F."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyQuerySet, LengthMismatch, ShapeMismatch
from .heads import Segment, temporal_iou

__all__ = [
    "RankConfig",
    "Segment",
    "boundary_f",
    "boundary_pixels",
    "j_and_f",
    "rank_n_at_m",
    "region_similarity_j",
    "temporal_iou",
]


@dataclass(frozen=True)
class RankConfig:
    n_values: tuple = (1, 5)
    m_values: tuple = (0.1, 0.3, 0.5)

    def __post_init__(self):
        if any(n < 1 for n in self.n_values):
            raise ValueError("n must be >= 1")
        if any(not 0.0 < m <= 1.0 for m in self.m_values):
            raise ValueError("m must lie in (0, 1]")


def rank_n_at_m(queries, cfg: RankConfig = RankConfig()) -> dict:
    """``queries`` is a list of (candidates sorted by descending score, gt).

    Returns ``{(n, m): fraction of queries with a top-n candidate at IoU >= m}``.
    """
    if not queries:
        raise EmptyQuerySet("no queries to evaluate")
    # best IoU among the top-n, per query and n
    best = {n: [] for n in cfg.n_values}
    for ranked, gt in queries:
        ious = [temporal_iou(s, gt) for s in ranked]
        for n in cfg.n_values:
            best[n].append(max(ious[:n], default=0.0))
    table = {}
    for n in cfg.n_values:
        arr = np.array(best[n])
        for m in cfg.m_values:
            table[(n, m)] = float(np.mean(arr >= m))
    return table


def _check(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


def region_similarity_j(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def boundary_pixels(mask) -> np.ndarray:
    """Foreground pixels with a 4-neighbour in the background or on the image border."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, constant_values=False)
    inner = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~inner


def _dilate(mask, radius):
    """Chebyshev dilation: a square structuring element of side 2r+1."""
    h, w = mask.shape
    r = min(radius, max(h, w))
    out = mask.copy()
    # separable max filter: rows then columns
    for axis, n in ((0, h), (1, w)):
        acc = out.copy()
        for d in range(1, min(r, n - 1) + 1):
            if axis == 0:
                acc[d:, :] |= out[:-d, :]
                acc[:-d, :] |= out[d:, :]
            else:
                acc[:, d:] |= out[:, :-d]
                acc[:, :-d] |= out[:, d:]
        out = acc
    return out


def boundary_f(pred, gt, radius: int = 1) -> float:
    pred, gt = _check(pred, gt)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    bp, bg = boundary_pixels(pred), boundary_pixels(gt)
    np_, ng = np.count_nonzero(bp), np.count_nonzero(bg)
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    precision = np.count_nonzero(bp & _dilate(bg, radius)) / np_
    recall = np.count_nonzero(bg & _dilate(bp, radius)) / ng
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def j_and_f(pred_masks, gt_masks, radius: int = 1) -> tuple[float, float, float]:
    if len(pred_masks) != len(gt_masks):
        raise LengthMismatch(f"{len(pred_masks)} predicted vs {len(gt_masks)} ground-truth frames")
    if not pred_masks:
        raise LengthMismatch("no frames")
    j = float(np.mean([region_similarity_j(p, g) for p, g in zip(pred_masks, gt_masks)]))
    f = float(np.mean([boundary_f(p, g, radius) for p, g in zip(pred_masks, gt_masks)]))
    return j, f, (j + f) / 2
