"""Threshold-free pixel metrics for anomaly segmentation.

Implements exact threshold sweeps for:

- AP: area under the precision-recall curve (right-step sum).
- rwAP: AP with per-region weighting of true positives and false negatives,
  so that small regions and rare anomaly types carry the same weight as
  large regions and common types. False positives stay unweighted because
  they belong to no region.
- AUROC: area under the ROC curve, optionally normalized to a maximum FPR.
- PRO / AUPRO: per-region overlap (mean per-region TPR) against FPR.

Conventions:
- Higher score == more anomalous.
- Sweeps visit every unique score value in descending order; pixels with
  equal scores enter the confusion matrix together at one threshold.
- Precision := 1 when nothing is predicted positive.
- ROC/PRO areas are trapezoidal, PR areas use the right-step sum.
- Region connectivity is 8 (diagonal neighbors join).

All functions are pure; evaluating different EvalSets concurrently is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, NamedTuple, Sequence

import numpy as np
from scipy import ndimage

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class RegionMask:
    """Per-pixel region labels: 0 = normal, 1..R = anomalous regions.

    All regions of one image share a single anomaly type; normal images
    (R == 0) carry no type.
    """

    labels: np.ndarray
    anomaly_type: Hashable | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError(f"labels must be HxW, got shape {labels.shape}")
        object.__setattr__(self, "labels", labels)
        if self.num_regions > 0 and self.anomaly_type is None:
            raise ValueError("anomalous mask requires an anomaly_type")

    @property
    def num_regions(self) -> int:
        return int(self.labels.max(initial=0))

    def region_areas(self) -> dict[int, int]:
        counts = np.bincount(self.labels.ravel(), minlength=self.num_regions + 1)
        return {j: int(counts[j]) for j in range(1, self.num_regions + 1)}


class EvalItem(NamedTuple):
    scores: np.ndarray
    mask: RegionMask


@dataclass(frozen=True)
class EvalSet:
    """Score maps paired with region-labelled ground truth."""

    items: tuple[EvalItem, ...]

    def __post_init__(self):
        items = []
        for scores, mask in self.items:
            scores = np.asarray(scores, dtype=np.float64)
            if scores.shape != mask.labels.shape:
                raise ValueError(
                    f"score map {scores.shape} does not match mask {mask.labels.shape}"
                )
            if not np.all(np.isfinite(scores)):
                raise ValueError("scores must be finite")
            items.append(EvalItem(scores, mask))
        object.__setattr__(self, "items", tuple(items))

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class RegionWeights:
    """Eq-style region weights: w = (A_mean / area) * (N_mean / N_type)."""

    weights: dict[tuple[int, int], float]
    a_mean: float
    n_mean: float
    n_k: dict[Hashable, int] = field(default_factory=dict)


def label_regions(binary_mask: np.ndarray, anomaly_type: Hashable | None = None) -> RegionMask:
    """Enumerate 8-connected components of a binary mask as regions 1..R.

    An all-zero mask yields a normal RegionMask (R = 0, no type).
    """
    mask = np.asarray(binary_mask)
    if mask.ndim != 2 or mask.size == 0:
        raise ValueError(f"mask must be a nonempty HxW array, got shape {mask.shape}")
    labels, count = ndimage.label(mask > 0, structure=_EIGHT_CONNECTED)
    if count == 0:
        return RegionMask(labels=labels, anomaly_type=None)
    return RegionMask(labels=labels, anomaly_type=anomaly_type)


def region_weights(ev: EvalSet) -> RegionWeights:
    """Compute per-region weights over the regions of one evaluation set.

    A_mean and N_mean are taken over the set being scored, so validation
    and test evaluations stay self-contained.
    """
    areas: dict[tuple[int, int], int] = {}
    types: dict[tuple[int, int], Hashable] = {}
    for i, (_, mask) in enumerate(ev.items):
        for j, area in mask.region_areas().items():
            areas[(i, j)] = area
            types[(i, j)] = mask.anomaly_type
    if not areas:
        raise ValueError("empty region set")

    a_mean = float(np.mean(list(areas.values())))
    n_k: dict[Hashable, int] = {}
    for k in types.values():
        n_k[k] = n_k.get(k, 0) + 1
    n_mean = float(np.mean(list(n_k.values())))

    weights = {
        key: (a_mean / areas[key]) * (n_mean / n_k[types[key]]) for key in areas
    }
    return RegionWeights(weights=weights, a_mean=a_mean, n_mean=n_mean, n_k=n_k)


def uniform_weights(ev: EvalSet) -> RegionWeights:
    """All-ones weights; rwap with these equals plain average_precision."""
    weights = {
        (i, j): 1.0
        for i, (_, mask) in enumerate(ev.items)
        for j in range(1, mask.num_regions + 1)
    }
    return RegionWeights(weights=weights, a_mean=1.0, n_mean=1.0)


def _flatten(ev: EvalSet, pixel_weights: Sequence[np.ndarray] | None = None):
    scores = np.concatenate([it.scores.ravel() for it in ev.items])
    pos = np.concatenate([(it.mask.labels > 0).ravel() for it in ev.items])
    if pixel_weights is None:
        w = None
    else:
        w = np.concatenate([pw.ravel() for pw in pixel_weights])
    return scores, pos, w


def _quantize(scores: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        return np.zeros_like(scores)
    q = np.floor((scores - lo) / (hi - lo) * bins)
    return np.minimum(q, bins - 1)


def _sweep(scores, pos, pos_weight=None, bins: int | None = None):
    """Cumulative confusion counts at every unique score, descending.

    Returns (tp_count, fp_count, weighted_tp) arrays, one entry per unique
    threshold. With `bins` set, scores are first quantized to `bins`
    equal-width bins (fast mode).
    """
    if bins is not None:
        scores = _quantize(scores, bins)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = pos[order]
    ends = np.flatnonzero(np.diff(s))
    ends = np.append(ends, s.size - 1)
    tp = np.cumsum(p)[ends]
    fp = np.cumsum(~p)[ends]
    if pos_weight is None:
        wtp = tp.astype(np.float64)
    else:
        w = np.where(p, pos_weight[order], 0.0)
        wtp = np.cumsum(w)[ends]
    return tp, fp, wtp


def _step_area(recall: np.ndarray, precision: np.ndarray) -> float:
    """Right-step PR area: sum of (R_i - R_{i-1}) * P_i with R_0 = 0."""
    return float(np.sum(np.diff(recall, prepend=0.0) * precision))


def _capped_trapezoid(x: np.ndarray, y: np.ndarray, cap: float) -> float:
    """Trapezoidal area under a piecewise-linear curve over [0, cap].

    x must be nondecreasing and start at 0; vertical segments contribute
    nothing and the segment crossing the cap is cut by linear interpolation.
    """
    x0, x1 = x[:-1], x[1:]
    y0, y1 = y[:-1], y[1:]
    run = x1 - x0
    live = (run > 0) & (x0 < cap)
    width = np.where(live, np.minimum(x1, cap) - x0, 0.0)
    frac = width / np.where(live, run, 1.0)
    y_cut = y0 + (y1 - y0) * frac
    return float(np.sum(0.5 * (y0 + y_cut) * width))


def _class_counts(pos: np.ndarray) -> tuple[int, int]:
    n_pos = int(pos.sum())
    return n_pos, pos.size - n_pos


def average_precision(ev: EvalSet, bins: int | None = None) -> float:
    """AP from an exact descending threshold sweep."""
    scores, pos, _ = _flatten(ev)
    n_pos, _ = _class_counts(pos)
    if n_pos == 0:
        raise ValueError("no anomalous pixels")
    tp, fp, _ = _sweep(scores, pos, bins=bins)
    predicted = tp + fp
    precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 1.0)
    recall = tp / n_pos
    return _step_area(recall, precision)


def rwap(ev: EvalSet, weights: RegionWeights, bins: int | None = None) -> float:
    """Region-weighted AP.

    Positive pixels contribute their region weight to weighted TP/FN;
    false positives are counted per pixel, unweighted. `weights` must come
    from the same evaluation set.
    """
    needed = {
        (i, j)
        for i, (_, mask) in enumerate(ev.items)
        for j in range(1, mask.num_regions + 1)
    }
    if needed != set(weights.weights):
        raise ValueError("weights do not match this evaluation set")
    pixel_weights = []
    for i, (_, mask) in enumerate(ev.items):
        lut = np.zeros(mask.num_regions + 1)
        for j in range(1, mask.num_regions + 1):
            lut[j] = weights.weights[(i, j)]
        pixel_weights.append(lut[mask.labels])
    scores, pos, w = _flatten(ev, pixel_weights)
    n_pos, _ = _class_counts(pos)
    if n_pos == 0:
        raise ValueError("no anomalous pixels")
    _, fp, wtp = _sweep(scores, pos, pos_weight=w, bins=bins)
    total_w = wtp[-1]
    denom = wtp + fp
    precision = np.where(denom > 0, wtp / np.where(denom > 0, denom, 1.0), 1.0)
    recall = wtp / total_w
    return _step_area(recall, precision)


def auroc(ev: EvalSet, fpr_limit: float = 1.0, bins: int | None = None) -> float:
    """Pixel AUROC up to `fpr_limit`, normalized by the limit."""
    if not 0.0 < fpr_limit <= 1.0:
        raise ValueError(f"fpr_limit must be in (0, 1], got {fpr_limit}")
    scores, pos, _ = _flatten(ev)
    n_pos, n_neg = _class_counts(pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("eval contains a single class")
    tp, fp, _ = _sweep(scores, pos, bins=bins)
    fpr = np.concatenate([[0.0], fp / n_neg])
    tpr = np.concatenate([[0.0], tp / n_pos])
    return _capped_trapezoid(fpr, tpr, fpr_limit) / fpr_limit


def aupro(ev: EvalSet, fpr_limit: float = 0.3, bins: int | None = None) -> float:
    """Area under the FPR-vs-PRO curve up to `fpr_limit`, normalized.

    PRO(t) is the mean per-region TPR, so each positive pixel carries
    weight 1 / (num_regions * region_area).
    """
    if not 0.0 < fpr_limit <= 1.0:
        raise ValueError(f"fpr_limit must be in (0, 1], got {fpr_limit}")
    total_regions = sum(mask.num_regions for _, mask in ev.items)
    if total_regions == 0:
        raise ValueError("no regions")
    pixel_weights = []
    for _, mask in ev.items:
        lut = np.zeros(mask.num_regions + 1)
        for j, area in mask.region_areas().items():
            lut[j] = 1.0 / (total_regions * area)
        pixel_weights.append(lut[mask.labels])
    scores, pos, w = _flatten(ev, pixel_weights)
    _, n_neg = _class_counts(pos)
    if n_neg == 0:
        raise ValueError("eval contains a single class")
    _, fp, pro = _sweep(scores, pos, pos_weight=w, bins=bins)
    fpr = np.concatenate([[0.0], fp / n_neg])
    pro = np.concatenate([[0.0], pro])
    return _capped_trapezoid(fpr, pro, fpr_limit) / fpr_limit
