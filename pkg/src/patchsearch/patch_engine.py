"""Patch extraction, memory bank and nearest-neighbor anomaly scoring.

Feature maps from one or more extraction layers are average-pooled at their
configured patch size (stride 1, same resolution, boundary-aware divisor),
upsampled to the first extracted layer's resolution and concatenated along
channels. Normal-image patches populate a flat memory bank; at inference a
patch scores as its exact Euclidean distance to the nearest bank entry, and
the distance grid is upsampled to image resolution.

Numeric conventions (pinned so results are reproducible bit for bit):
- bilinear interpolation uses half-pixel centers with edge clamping;
- average pooling anchors a p-wide window at floor((p-1)/2) above/left and
  divides by the number of in-bounds cells;
- nearest-neighbor distances accumulate squared differences sequentially in
  float64 per pair, queries processed in bounded-memory blocks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class PatchGrid:
    """Fused patch vectors on the first extracted layer's grid, (D, H, W)."""

    data: np.ndarray

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    def as_matrix(self) -> np.ndarray:
        """Row-major (H*W, D) view of the grid cells."""
        d, h, w = self.data.shape
        return np.ascontiguousarray(self.data.reshape(d, h * w).T)


@dataclass(frozen=True)
class MemoryBank:
    """Flat, immutable store of D-dimensional patch vectors."""

    entries: np.ndarray
    provenance: tuple[str, ...] | None = None

    def __post_init__(self):
        entries = np.ascontiguousarray(self.entries, dtype=np.float64)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class AnomalyMap:
    scores: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape


def avg_pool_same(feature: np.ndarray, patch_size: int) -> np.ndarray:
    """Stride-1 average pooling that keeps the input resolution.

    The window for output cell (y, x) starts floor((p-1)/2) cells above and
    left; the divisor is the number of in-bounds cells, so constant maps
    stay constant for every patch size.
    """
    if patch_size < 1:
        raise ValueError(f"patch_size must be >= 1, got {patch_size}")
    f = np.asarray(feature, dtype=np.float64)
    if f.ndim != 3:
        raise ValueError(f"expected (C, H, W) feature, got shape {f.shape}")
    if patch_size == 1:
        return f.copy()
    p = patch_size
    top = (p - 1) // 2
    bottom = p - 1 - top
    padded = np.pad(f, ((0, 0), (top, bottom), (top, bottom)))
    sums = sliding_window_view(padded, (p, p), axis=(1, 2)).sum(axis=(-2, -1))
    ones = np.pad(np.ones(f.shape[1:]), ((top, bottom), (top, bottom)))
    counts = sliding_window_view(ones, (p, p)).sum(axis=(-2, -1))
    return sums / counts


def bilinear_resize(feature: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Resize (C, H, W) to (C, target_h, target_w).

    Source coordinate = (dst + 0.5) * src/dst - 0.5, clamped to the valid
    range, then a bilinear blend of the four neighbors.
    """
    if target_h < 1 or target_w < 1:
        raise ValueError("target resolution must be >= 1")
    f = np.asarray(feature, dtype=np.float64)
    if f.ndim != 3:
        raise ValueError(f"expected (C, H, W) feature, got shape {f.shape}")
    _, h, w = f.shape

    def axis_coords(src, dst):
        c = (np.arange(dst) + 0.5) * (src / dst) - 0.5
        c = np.clip(c, 0.0, src - 1.0)
        lo = np.floor(c).astype(int)
        hi = np.minimum(lo + 1, src - 1)
        return lo, hi, c - lo

    y0, y1, fy = axis_coords(h, target_h)
    x0, x1, fx = axis_coords(w, target_w)
    wy = fy[None, :, None]
    wx = fx[None, None, :]
    return (
        f[:, y0][:, :, x0] * (1 - wy) * (1 - wx)
        + f[:, y1][:, :, x0] * wy * (1 - wx)
        + f[:, y0][:, :, x1] * (1 - wy) * wx
        + f[:, y1][:, :, x1] * wy * wx
    )


def extract_patches(features, patch_sizes) -> PatchGrid:
    """Pool each extracted stage, upsample to the first stage's grid, fuse.

    `features` are (C, H, W) tensors ordered shallow to deep; the fused
    grid keeps the first tensor's resolution and D = sum of channels.
    """
    features = list(features)
    patch_sizes = list(patch_sizes)
    if not features:
        raise ValueError("at least one extracted stage is required")
    if len(features) != len(patch_sizes):
        raise ValueError("one patch size per extracted stage")
    pooled = [avg_pool_same(f, p) for f, p in zip(features, patch_sizes)]
    h0, w0 = pooled[0].shape[1:]
    aligned = [pooled[0]] + [bilinear_resize(g, h0, w0) for g in pooled[1:]]
    return PatchGrid(data=np.concatenate(aligned, axis=0))


def build_bank(train_grids, image_ids=None) -> MemoryBank:
    """Flatten every grid's patch vectors into one memory bank."""
    grids = list(train_grids)
    if not grids:
        raise ValueError("cannot build a bank from zero grids")
    dim = grids[0].dim
    for g in grids:
        if g.dim != dim:
            raise ValueError(f"mismatched patch dimensions: {g.dim} != {dim}")
    entries = np.vstack([g.as_matrix() for g in grids])
    provenance = None
    if image_ids is not None:
        ids = list(image_ids)
        if len(ids) != len(grids):
            raise ValueError("one image id per grid")
        provenance = tuple(
            str(i) for i, g in zip(ids, grids) for _ in range(g.as_matrix().shape[0])
        )
    return MemoryBank(entries=entries, provenance=provenance)


@numba.njit(parallel=True, cache=True)
def _min_sq_dists(queries, bank):  # pragma: no cover - compiled
    m = queries.shape[0]
    n = bank.shape[0]
    dim = queries.shape[1]
    out = np.empty(m)
    for i in numba.prange(m):
        best = np.inf
        for j in range(n):
            acc = 0.0
            for d in range(dim):
                diff = queries[i, d] - bank[j, d]
                acc += diff * diff
                if acc > best:
                    break
            if acc < best:
                best = acc
        out[i] = best
    return out


def nn_distances(query: PatchGrid, bank: MemoryBank, block: int = 8192) -> np.ndarray:
    """Exact nearest-neighbor Euclidean distance per grid cell.

    Queries are processed in blocks of at most `block` rows to bound
    working memory; the search itself is exhaustive.
    """
    if len(bank) == 0:
        raise ValueError("empty memory bank")
    if query.dim != bank.dim:
        raise ValueError(f"dimension mismatch: query {query.dim}, bank {bank.dim}")
    q = np.ascontiguousarray(query.as_matrix(), dtype=np.float64)
    out = np.empty(q.shape[0])
    for start in range(0, q.shape[0], block):
        out[start : start + block] = _min_sq_dists(q[start : start + block], bank.entries)
    h, w = query.resolution
    return np.sqrt(out).reshape(h, w)


def segment(image_features, patch_sizes, bank: MemoryBank, image_h: int, image_w: int) -> AnomalyMap:
    """Full inference for one image: extract, score, upsample."""
    grid = extract_patches(image_features, patch_sizes)
    dists = nn_distances(grid, bank)
    scores = bilinear_resize(dists[None, :, :], image_h, image_w)[0]
    return AnomalyMap(scores=scores)


def coreset_subsample(bank: MemoryBank, ratio: float, rng_seed: int) -> MemoryBank:
    """Greedy k-center (farthest point) subsampling of the bank.

    Keeps ceil(ratio * len(bank)) entries; the first center is drawn from
    the seeded generator, every later pick is the entry farthest from the
    kept set. Selections for growing ratios are nested prefixes.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if len(bank) == 0:
        raise ValueError("empty memory bank")
    n = len(bank)
    keep = int(np.ceil(ratio * n))
    rng = np.random.default_rng(rng_seed)
    first = int(rng.integers(n))
    selected = [first]
    min_sq = np.sum((bank.entries - bank.entries[first]) ** 2, axis=1)
    while len(selected) < keep:
        nxt = int(np.argmax(min_sq))
        selected.append(nxt)
        min_sq = np.minimum(min_sq, np.sum((bank.entries - bank.entries[nxt]) ** 2, axis=1))
    idx = np.array(selected)
    provenance = None
    if bank.provenance is not None:
        provenance = tuple(bank.provenance[i] for i in selected)
    return MemoryBank(entries=bank.entries[idx], provenance=provenance)


def save_anomaly_map(amap: AnomalyMap, path, image_id: str) -> None:
    """Write a flat little-endian float32 raster plus a JSON sidecar."""
    path = Path(path)
    h, w = amap.shape
    raster = np.asarray(amap.scores, dtype="<f4").tobytes()
    path.write_bytes(raster)
    sidecar = {"height": h, "width": w, "image_id": image_id}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def load_anomaly_map(path) -> tuple[AnomalyMap, str]:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    h, w = sidecar["height"], sidecar["width"]
    raw = path.read_bytes()
    if len(raw) != h * w * 4:
        raise ValueError(f"raster size {len(raw)} does not match {h}x{w}")
    scores = np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(np.float64)
    return AnomalyMap(scores=scores), sidecar["image_id"]
