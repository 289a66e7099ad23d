"""Dataset manifests, k-shot split protocol and synthetic data generation.

A manifest describes one category: normal training images plus a test pool
of normal and anomalous images, the latter grouped by anomaly type with
pixel masks. The k-shot protocol reserves the first four anomalies of each
type (lexicographic file order): validation takes the first k of those plus
normal images moved over from the training set, and the test set keeps
everything after the reserved four, so it is identical for every k.

The synthetic generator produces procedural textures with three anomaly
families (blob, scratch, hole), exact region masks and full byte-level
reproducibility from the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .patch_engine import bilinear_resize

VALID_K = (1, 2, 4)
RESERVED_ANOMALIES = 4


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestItem:
    image: str
    mask: str | None
    anomaly_type: str | None
    split: str

    @property
    def image_id(self) -> str:
        return Path(self.image).stem

    @property
    def is_anomalous(self) -> bool:
        return self.anomaly_type is not None


@dataclass(frozen=True)
class DatasetManifest:
    category: str
    image_size: int
    items: tuple[ManifestItem, ...]
    root: Path

    def resolve(self, relative: str) -> Path:
        return self.root / relative

    def train_normals(self) -> list[ManifestItem]:
        return sorted(
            (i for i in self.items if i.split == "train"), key=lambda i: i.image
        )

    def test_normals(self) -> list[ManifestItem]:
        return sorted(
            (i for i in self.items if i.split == "test" and not i.is_anomalous),
            key=lambda i: i.image,
        )

    def anomalies_by_type(self) -> dict[str, list[ManifestItem]]:
        out: dict[str, list[ManifestItem]] = {}
        for item in self.items:
            if item.is_anomalous:
                out.setdefault(item.anomaly_type, []).append(item)
        return {k: sorted(v, key=lambda i: i.image) for k, v in sorted(out.items())}


@dataclass(frozen=True)
class SplitSpec:
    k: int
    train: tuple[ManifestItem, ...]
    validation: tuple[ManifestItem, ...]
    test: tuple[ManifestItem, ...]


def load_manifest(path) -> DatasetManifest:
    """Load and validate a manifest JSON file.

    Checks the schema, split/mask consistency, path uniqueness and that
    every mask has the same pixel size as its image.
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    for key in ("category", "image_size", "items"):
        if key not in obj:
            raise ManifestError(f"manifest missing key {key!r}")
    items = []
    for raw in obj["items"]:
        unknown = set(raw) - {"image", "mask", "type", "split"}
        if unknown or "image" not in raw or "split" not in raw:
            raise ManifestError(f"malformed manifest item: {raw}")
        item = ManifestItem(
            image=raw["image"],
            mask=raw.get("mask"),
            anomaly_type=raw.get("type"),
            split=raw["split"],
        )
        if item.split not in ("train", "test"):
            raise ManifestError(f"bad split {item.split!r} for {item.image}")
        if item.split == "train" and (item.mask or item.anomaly_type):
            raise ManifestError(f"train item {item.image} must be normal")
        if (item.mask is None) != (item.anomaly_type is None):
            raise ManifestError(
                f"anomalous item {item.image} needs both mask and type"
            )
        items.append(item)
    paths = [i.image for i in items]
    if len(set(paths)) != len(paths):
        raise ManifestError("duplicate image paths in manifest")
    ids = [i.image_id for i in items]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate image ids (file stems) in manifest")
    manifest = DatasetManifest(
        category=obj["category"],
        image_size=int(obj["image_size"]),
        items=tuple(items),
        root=path.parent,
    )
    for item in items:
        image_path = manifest.resolve(item.image)
        if not image_path.exists():
            raise ManifestError(f"missing image file {image_path}")
        if item.mask:
            mask_path = manifest.resolve(item.mask)
            if not mask_path.exists():
                raise ManifestError(f"missing mask file {mask_path}")
            with Image.open(image_path) as im, Image.open(mask_path) as mk:
                if im.size != mk.size:
                    raise ManifestError(
                        f"mask size {mk.size} != image size {im.size} for {item.image}"
                    )
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    obj = {
        "category": manifest.category,
        "image_size": manifest.image_size,
        "items": [
            {
                "image": i.image,
                **({"mask": i.mask} if i.mask else {}),
                **({"type": i.anomaly_type} if i.anomaly_type else {}),
                "split": i.split,
            }
            for i in manifest.items
        ],
    }
    Path(path).write_text(json.dumps(obj, indent=1))


def make_splits(manifest: DatasetManifest, k: int) -> SplitSpec:
    """Realize the k-shot split protocol.

    Train keeps the lexicographically first (n_train - n_test_normal)
    training normals; the remaining training normals plus the first k
    anomalies of each type form the validation set; the test set is the
    original test normals plus every anomaly after the first four of its
    type, identical for all k.
    """
    if k not in VALID_K:
        raise ManifestError(f"k must be one of {VALID_K}, got {k}")
    train_normals = manifest.train_normals()
    test_normals = manifest.test_normals()
    n_move = len(test_normals)
    if len(train_normals) <= n_move:
        raise ManifestError(
            f"need more than {n_move} training normals, have {len(train_normals)}"
        )
    train = train_normals[: len(train_normals) - n_move]
    val_normals = train_normals[len(train_normals) - n_move :]
    validation_anoms: list[ManifestItem] = []
    test_anoms: list[ManifestItem] = []
    for atype, anomalies in manifest.anomalies_by_type().items():
        if len(anomalies) < RESERVED_ANOMALIES + 1:
            raise ManifestError(
                f"insufficient anomalies for type {atype!r}: "
                f"{len(anomalies)} < {RESERVED_ANOMALIES + 1}"
            )
        validation_anoms.extend(anomalies[:k])
        test_anoms.extend(anomalies[RESERVED_ANOMALIES:])
    return SplitSpec(
        k=k,
        train=tuple(train),
        validation=tuple(val_normals + validation_anoms),
        test=tuple(test_normals + test_anoms),
    )


# --------------------------------------------------------------------------
# image loading


def load_image(path, size: int | None = None) -> np.ndarray:
    """Read an RGB image as (H, W, 3) float32 in [0, 1].

    When `size` differs from the stored resolution the image is only
    resized (bilinear, half-pixel centers), never cropped.
    """
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    if size is not None and arr.shape[:2] != (size, size):
        arr = bilinear_resize(arr.transpose(2, 0, 1), size, size).transpose(1, 2, 0)
    return arr.astype(np.float32)


def load_mask(path, size: int | None = None) -> np.ndarray:
    """Read a binary mask as (H, W) uint8 in {0, 1}; resizes by threshold."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    if size is not None and arr.shape != (size, size):
        arr = bilinear_resize(arr[None], size, size)[0]
    return (arr >= 0.5).astype(np.uint8)


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    categories: tuple[str, ...]
    n_train: int = 8
    n_test_normal: int = 3
    types_with_counts: tuple[tuple[str, int], ...] = (("blob", 5), ("scratch", 5), ("hole", 5))
    image_size: int = 64
    seed: int = 0


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.random((3, 6, 6))
    base = bilinear_resize(coarse, size, size)
    yy, xx = np.mgrid[0:size, 0:size]
    freq = rng.uniform(2.0, 5.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    wave = 0.12 * np.sin(2 * np.pi * freq * (xx + yy) / size + phase)
    img = 0.30 + 0.35 * base + wave[None] + 0.02 * rng.standard_normal((3, size, size))
    return np.clip(img, 0.0, 1.0)


def _paint_blob(rng, img, size):
    mask = np.zeros((size, size), dtype=np.uint8)
    for _ in range(int(rng.integers(1, 3))):
        cy, cx = rng.integers(size // 5, 4 * size // 5, size=2)
        ry = rng.integers(max(2, size // 16), size // 6)
        rx = rng.integers(max(2, size // 16), size // 6)
        yy, xx = np.mgrid[0:size, 0:size]
        blob = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        mask |= blob.astype(np.uint8)
        tint = rng.uniform(0.25, 0.45, size=3)
        img[:, blob] = np.clip(img[:, blob] + tint[:, None], 0.0, 1.0)
    return img, mask


def _paint_scratch(rng, img, size):
    mask = np.zeros((size, size), dtype=np.uint8)
    y0, x0 = rng.integers(2, size - 2, size=2)
    angle = rng.uniform(0.0, np.pi)
    length = int(rng.integers(size // 3, int(size * 0.8)))
    thick = int(rng.integers(1, 3))
    for step in range(length):
        y = int(round(y0 + step * np.sin(angle)))
        x = int(round(x0 + step * np.cos(angle)))
        if not (0 <= y < size and 0 <= x < size):
            break
        mask[max(0, y - thick + 1) : y + 1, max(0, x - thick + 1) : x + 1] = 1
    if not mask.any():
        mask[y0, x0] = 1
    img[:, mask > 0] = np.clip(img[:, mask > 0] - 0.4, 0.0, 1.0)
    return img, mask


def _paint_hole(rng, img, size):
    cy, cx = rng.integers(size // 4, 3 * size // 4, size=2)
    r = int(rng.integers(max(2, size // 14), size // 7))
    yy, xx = np.mgrid[0:size, 0:size]
    disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    img[:, disk] *= 0.25
    return img, disk.astype(np.uint8)


_PAINTERS = {"blob": _paint_blob, "scratch": _paint_scratch, "hole": _paint_hole}


def _write_png(path: Path, array: np.ndarray, mode: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array, mode=mode).save(path, format="PNG")


def generate_synthetic(spec: SyntheticSpec, out_dir) -> list[Path]:
    """Generate one directory per category and return the manifest paths."""
    if spec.image_size < 32:
        raise ManifestError("image_size must be >= 32")
    out_dir = Path(out_dir)
    manifest_paths = []
    for cat_index, category in enumerate(spec.categories):
        rng = np.random.default_rng([spec.seed, cat_index])
        cat_dir = out_dir / category
        items = []

        def emit_image(name, img):
            arr = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
            _write_png(cat_dir / "images" / name, arr.transpose(1, 2, 0), "RGB")

        for i in range(spec.n_train):
            name = f"train_{i:03d}.png"
            emit_image(name, _texture(rng, spec.image_size))
            items.append(ManifestItem(image=f"images/{name}", mask=None, anomaly_type=None, split="train"))
        for i in range(spec.n_test_normal):
            name = f"normal_{i:03d}.png"
            emit_image(name, _texture(rng, spec.image_size))
            items.append(ManifestItem(image=f"images/{name}", mask=None, anomaly_type=None, split="test"))
        for atype, count in spec.types_with_counts:
            painter = _PAINTERS.get(atype)
            if painter is None:
                raise ManifestError(f"unknown anomaly type {atype!r}")
            for i in range(count):
                img, mask = painter(rng, _texture(rng, spec.image_size), spec.image_size)
                name = f"{atype}_{i:03d}.png"
                emit_image(name, img)
                _write_png(cat_dir / "masks" / name, mask * np.uint8(255), "L")
                items.append(
                    ManifestItem(
                        image=f"images/{name}",
                        mask=f"masks/{name}",
                        anomaly_type=atype,
                        split="test",
                    )
                )
        manifest = DatasetManifest(
            category=category,
            image_size=spec.image_size,
            items=tuple(items),
            root=cat_dir,
        )
        manifest_path = cat_dir / "manifest.json"
        save_manifest(manifest, manifest_path)
        manifest_paths.append(manifest_path)
    return manifest_paths
