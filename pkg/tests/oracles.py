"""Independent brute-force references used by the test suite.

Everything here favors obviousness over speed: metrics materialize the full
confusion matrix at every unique score threshold, nearest neighbors run a
literal double loop, FLOP counts enumerate convolutions one by one.
These implementations deliberately share no code with the package.
"""

from __future__ import annotations

import math

import numpy as np

# --------------------------------------------------------------------------
# region labelling (BFS flood fill, 8-connectivity)


def flood_fill_regions(binary_mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(binary_mask) > 0
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=int)
    next_label = 0
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or labels[sy, sx]:
                continue
            next_label += 1
            stack = [(sy, sx)]
            labels[sy, sx] = next_label
            while stack:
                y, x = stack.pop()
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not labels[ny, nx]:
                            labels[ny, nx] = next_label
                            stack.append((ny, nx))
    return labels


# --------------------------------------------------------------------------
# metric oracles; items are (scores, labels, anomaly_type) triples


def brute_region_weights(items) -> dict[tuple[int, int], float]:
    regions = []
    for i, (_, labels, atype) in enumerate(items):
        for j in range(1, int(labels.max(initial=0)) + 1):
            regions.append((i, j, int(np.sum(labels == j)), atype))
    if not regions:
        raise ValueError("no regions")
    a_mean = sum(r[2] for r in regions) / len(regions)
    counts: dict = {}
    for _, _, _, atype in regions:
        counts[atype] = counts.get(atype, 0) + 1
    n_mean = sum(counts.values()) / len(counts)
    return {
        (i, j): (a_mean / area) * (n_mean / counts[atype])
        for i, j, area, atype in regions
    }


def _all_thresholds(items):
    scores = np.concatenate([s.ravel() for s, _, _ in items])
    return np.unique(scores)[::-1]


def brute_ap(items) -> float:
    scores = np.concatenate([s.ravel() for s, _, _ in items])
    gt = np.concatenate([(l > 0).ravel() for _, l, _ in items])
    n_pos = int(gt.sum())
    ap, prev_recall = 0.0, 0.0
    for t in _all_thresholds(items):
        pred = scores >= t
        tp = int(np.sum(pred & gt))
        fp = int(np.sum(pred & ~gt))
        precision = tp / (tp + fp) if tp + fp > 0 else 1.0
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def brute_rwap(items, weights=None) -> float:
    if weights is None:
        weights = brute_region_weights(items)
    region_masks = {
        (i, j): labels == j
        for i, (_, labels, _) in enumerate(items)
        for j in range(1, int(labels.max(initial=0)) + 1)
    }
    total_w = sum(weights[key] * int(np.sum(m)) for key, m in region_masks.items())
    ap, prev_recall = 0.0, 0.0
    for t in _all_thresholds(items):
        preds = [scores >= t for scores, _, _ in items]
        fp = sum(int(np.sum(pred & (labels == 0))) for pred, (_, labels, _) in zip(preds, items))
        rwtp = sum(
            weights[(i, j)] * int(np.sum(preds[i] & mask))
            for (i, j), mask in region_masks.items()
        )
        precision = rwtp / (rwtp + fp) if rwtp + fp > 0 else 1.0
        recall = rwtp / total_w
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def _trapezoid_capped(points, cap: float) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        if x1 <= x0 or x0 >= cap:
            continue
        hi = min(x1, cap)
        y_hi = y0 + (y1 - y0) * (hi - x0) / (x1 - x0)
        area += 0.5 * (y0 + y_hi) * (hi - x0)
    return area


def brute_auroc(items, fpr_limit: float = 1.0) -> float:
    scores = np.concatenate([s.ravel() for s, _, _ in items])
    gt = np.concatenate([(l > 0).ravel() for _, l, _ in items])
    n_pos = int(gt.sum())
    n_neg = int((~gt).sum())
    points = [(0.0, 0.0)]
    for t in _all_thresholds(items):
        pred = scores >= t
        tp = int(np.sum(pred & gt))
        fp = int(np.sum(pred & ~gt))
        points.append((fp / n_neg, tp / n_pos))
    return _trapezoid_capped(points, fpr_limit) / fpr_limit


def brute_aupro(items, fpr_limit: float = 0.3) -> float:
    regions = []
    for i, (_, labels, _) in enumerate(items):
        for j in range(1, int(labels.max(initial=0)) + 1):
            mask = labels == j
            regions.append((i, mask, int(np.sum(mask))))
    n_neg = sum(int(np.sum(l == 0)) for _, l, _ in items)
    points = [(0.0, 0.0)]
    for t in _all_thresholds(items):
        preds = [scores >= t for scores, _, _ in items]
        fp = sum(int(np.sum(pred & (labels == 0))) for pred, (_, labels, _) in zip(preds, items))
        overlaps = [np.sum(preds[i] & mask) / area for i, mask, area in regions]
        points.append((fp / n_neg, float(np.mean(overlaps))))
    return _trapezoid_capped(points, fpr_limit) / fpr_limit


# --------------------------------------------------------------------------
# nearest neighbors: literal double loop, sequential float accumulation


def brute_nn_distances(queries: np.ndarray, bank: np.ndarray) -> np.ndarray:
    out = np.empty(len(queries))
    bank_rows = [row.tolist() for row in np.asarray(bank, dtype=np.float64)]
    for qi, q in enumerate(np.asarray(queries, dtype=np.float64)):
        q_row = q.tolist()
        best = float("inf")
        for b_row in bank_rows:
            acc = 0.0
            for qd, bd in zip(q_row, b_row):
                diff = qd - bd
                acc += diff * diff
            if acc < best:
                best = acc
        out[qi] = math.sqrt(best)
    return out


# --------------------------------------------------------------------------
# FLOP counting: enumerate every convolution as
# out_elems * (k^2 * C_in_per_group) MACs, times 2


def enumerate_convs(config: dict, input_resolution: int):
    """Yield (name, out_elems, k, c_in_per_group, c_out) for every conv.

    Walks the truncated inverted-residual encoder: 3x3/2 stem with 16
    channels, then per computed stage the expand 1x1, depthwise kxk,
    squeeze-excite FCs (stages 1, 3, 4) and project 1x1.
    """
    widths = {
        "base": (24, 40, 80, 112, 160),
        "wide": (32, 48, 96, 136, 192),
    }[config["width"]]
    fractions = (4, 8, 16, 16, 32)
    se_stages = (False, True, False, True, True)

    stages = config["stages"]
    extracted = [s for s in range(5) if stages[s]["extract"] is not None]
    last = max(extracted)
    depths = []
    for s in range(5):
        if s > last:
            depths.append(0)
        elif stages[s]["extract"] is None:
            depths.append(2)
        else:
            depths.append(max(2, stages[s]["extract"] - 4 * s))

    stem_res = input_resolution // 2
    yield ("stem", stem_res * stem_res * 16, 3, 3, 16)

    for s in range(5):
        res_in = stem_res if s == 0 else input_resolution // fractions[s - 1]
        res_out = input_resolution // fractions[s]
        k = stages[s]["kernel"]
        for b in range(1, depths[s] + 1):
            c_in = 16 if (s == 0 and b == 1) else (widths[s - 1] if b == 1 else widths[s])
            c_mid = stages[s]["expansion"] * c_in
            h_in = res_in if b == 1 else res_out
            h_out = res_out
            yield (f"s{s}b{b}.expand", h_in * h_in * c_mid, 1, c_in, c_mid)
            yield (f"s{s}b{b}.dw", h_out * h_out * c_mid, k, 1, c_mid)
            if se_stages[s]:
                c_se = c_mid // 4
                yield (f"s{s}b{b}.se1", c_se, 1, c_mid, c_se)
                yield (f"s{s}b{b}.se2", c_mid, 1, c_se, c_mid)
            yield (f"s{s}b{b}.project", h_out * h_out * widths[s], 1, c_mid, widths[s])


def brute_flops(config: dict, input_resolution: int = 224) -> int:
    total = 0
    for _, out_elems, k, c_in_per_group, _ in enumerate_convs(config, input_resolution):
        total += out_elems * (k * k * c_in_per_group) * 2
    return total


# --------------------------------------------------------------------------
# Pareto / hypervolume


def brute_pareto(points) -> list[int]:
    """Indices of nondominated points; points are (performance, complexity)."""
    keep = []
    for i, (pi, ci) in enumerate(points):
        dominated = False
        for j, (pj, cj) in enumerate(points):
            if j == i:
                continue
            if pj >= pi and cj <= ci and (pj > pi or cj < ci):
                dominated = True
                break
        if not dominated:
            keep.append(i)
    return keep


def union_area(points, ref_perf: float, ref_cx: float) -> float:
    """Exact rectangle-union area on compressed coordinates."""
    xs = sorted({c for _, c in points} | {ref_cx})
    ys = sorted({ref_perf} | {p for p, _ in points})
    area = 0.0
    for x0, x1 in zip(xs, xs[1:]):
        for y0, y1 in zip(ys, ys[1:]):
            covered = any(c <= x0 and p >= y1 for p, c in points)
            if covered:
                area += (x1 - x0) * (y1 - y0)
    return area


def monte_carlo_hypervolume(points, ref_perf, ref_cx, n_samples, seed):
    rng = np.random.default_rng(seed)
    p_hi = max(p for p, _ in points)
    c_lo = min(c for _, c in points)
    box = (p_hi - ref_perf) * (ref_cx - c_lo)
    ps = rng.uniform(ref_perf, p_hi, size=n_samples)
    cs = rng.uniform(c_lo, ref_cx, size=n_samples)
    hits = np.zeros(n_samples, dtype=bool)
    for p, c in points:
        hits |= (ps <= p) & (cs >= c)
    frac = hits.mean()
    est = box * frac
    sigma = box * float(np.sqrt(frac * (1 - frac) / n_samples))
    return est, sigma
