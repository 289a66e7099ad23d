"""Architecture configurations, complexity estimates and feature backends.

The search space follows a five-stage inverted-residual encoder: one global
width multiplier (base or wide), and per stage an expansion ratio, a kernel
size, an optional extraction block and a patch size for the pooling applied
to extracted outputs. A stage runs at least two blocks when computed, grows
only as deep as its extraction block, and stages past the last extraction
are skipped entirely.

Feature tensors come from one of three backends:
- synthetic: a deterministic random-weight convolutional stand-in, so the
  whole search loop runs with zero external assets;
- cache: precomputed FMAP files on disk;
- external: a request/response service speaking newline-delimited JSON
  requests and length-prefixed FMAP responses.
"""

from __future__ import annotations

import hashlib
import json
import socket
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import fmap

WIDTHS = {
    "base": (24, 40, 80, 112, 160),
    "wide": (32, 48, 96, 136, 192),
}
EXPANSIONS = (3, 4, 6)
KERNELS = (3, 5, 7)
PATCH_RANGE = (1, 16)
RESOLUTION_DIVISORS = (4, 8, 16, 16, 32)
SE_STAGES = (False, True, False, True, True)
STEM_CHANNELS = 16
N_STAGES = 5

# Documented reference magnitudes for report comparison (not recomputed):
# a truncated WideResNet-50 patch extractor and a MobileNetV3-Large one.
WRN50_PATCHCORE_GFLOPS = 18.41
MNV3L_PATCHCORE_GFLOPS = 0.31


class ConfigError(ValueError):
    pass


class BackendError(RuntimeError):
    pass


class BackendUnavailableError(BackendError):
    """Raised when a feature source cannot be reached or is missing."""


class BackendContractError(BackendError):
    """Raised when a backend returns tensors that contradict the config."""


@dataclass(frozen=True)
class StageConfig:
    expansion: int
    kernel: int
    extract: int | None
    patch: int


@dataclass(frozen=True)
class ArchitectureConfig:
    width: str
    stages: tuple[StageConfig, ...]

    def extracted_stages(self) -> list[int]:
        return [s for s in range(len(self.stages)) if self.stages[s].extract is not None]

    def patch_sizes(self) -> list[int]:
        return [self.stages[s].patch for s in self.extracted_stages()]

    def canonical(self) -> "ArchitectureConfig":
        """Set patch size to 1 on non-extracted stages (inert parameters)."""
        stages = tuple(
            st if st.extract is not None else replace(st, patch=1) for st in self.stages
        )
        return ArchitectureConfig(width=self.width, stages=stages)

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "stages": [
                {
                    "expansion": st.expansion,
                    "kernel": st.kernel,
                    "extract": st.extract,
                    "patch": st.patch,
                }
                for st in self.stages
            ],
        }


def config_from_json(obj) -> ArchitectureConfig:
    """Parse and strictly validate the JSON wire form of a config.

    Unknown keys, wrong types and out-of-domain values are all rejected, so
    every producer of config JSON sees the same accept set.
    """
    if not isinstance(obj, dict) or set(obj) != {"width", "stages"}:
        raise ConfigError("config must have exactly the keys 'width' and 'stages'")
    width = obj["width"]
    if width not in WIDTHS:
        raise ConfigError(f"invalid parameter: width {width!r}")
    stages_json = obj["stages"]
    if not isinstance(stages_json, list) or len(stages_json) != N_STAGES:
        raise ConfigError(f"config must have exactly {N_STAGES} stages")
    stages = []
    for s, st in enumerate(stages_json):
        if not isinstance(st, dict) or set(st) != {"expansion", "kernel", "extract", "patch"}:
            raise ConfigError(f"stage {s} must have exactly expansion/kernel/extract/patch")
        expansion, kernel, extract, patch = st["expansion"], st["kernel"], st["extract"], st["patch"]
        for name, value in (("expansion", expansion), ("kernel", kernel), ("patch", patch)):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"invalid parameter: stage {s} {name} {value!r}")
        if extract is not None and (not isinstance(extract, int) or isinstance(extract, bool)):
            raise ConfigError(f"invalid parameter: stage {s} extract {extract!r}")
        stages.append(StageConfig(expansion=expansion, kernel=kernel, extract=extract, patch=patch))
    config = ArchitectureConfig(width=width, stages=tuple(stages))
    validate(config)
    return config


def load_config(path) -> ArchitectureConfig:
    return config_from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class StagePlan:
    """Derived per-stage depths; zero depth means the stage never runs."""

    depths: tuple[int, ...]
    last_stage: int

    def resolution(self, stage: int, input_resolution: int) -> int:
        return input_resolution // RESOLUTION_DIVISORS[stage]


def validate(config: ArchitectureConfig) -> StagePlan:
    """Check every field against its domain and derive the stage plan.

    Each computed stage is at least two blocks deep and deepens only to
    reach its extraction block; stages after the last extraction get
    depth zero.
    """
    if config.width not in WIDTHS:
        raise ConfigError(f"invalid parameter: width {config.width!r}")
    if len(config.stages) != N_STAGES:
        raise ConfigError(f"expected {N_STAGES} stages, got {len(config.stages)}")
    for s, st in enumerate(config.stages):
        if st.expansion not in EXPANSIONS:
            raise ConfigError(f"invalid parameter: stage {s} expansion {st.expansion}")
        if st.kernel not in KERNELS:
            raise ConfigError(f"invalid parameter: stage {s} kernel {st.kernel}")
        if st.extract is not None and st.extract not in range(4 * s + 1, 4 * s + 5):
            raise ConfigError(f"invalid parameter: stage {s} extraction block {st.extract}")
        if not PATCH_RANGE[0] <= st.patch <= PATCH_RANGE[1]:
            raise ConfigError(f"invalid parameter: stage {s} patch size {st.patch}")
    extracted = config.extracted_stages()
    if not extracted:
        raise ConfigError("degenerate config: no extraction block selected")
    last = max(extracted)
    depths = []
    for s in range(N_STAGES):
        if s > last:
            depths.append(0)
        elif config.stages[s].extract is None:
            depths.append(2)
        else:
            depths.append(max(2, config.stages[s].extract - 4 * s))
    return StagePlan(depths=tuple(depths), last_stage=last)


# --------------------------------------------------------------------------
# complexity model


@dataclass(frozen=True)
class BlockFlops:
    stage: int
    block: int
    flops: int


@dataclass(frozen=True)
class FlopsReport:
    total: int
    stem: int
    blocks: tuple[BlockFlops, ...]

    @property
    def gflops(self) -> float:
        return self.total / 1e9


def _check_input_resolution(input_resolution: int) -> None:
    if input_resolution < 32 or input_resolution % 32:
        raise ConfigError(
            f"input resolution must be a positive multiple of 32, got {input_resolution}"
        )


def estimate_flops(plan: StagePlan, config: ArchitectureConfig, input_resolution: int = 224) -> FlopsReport:
    """Analytical FLOPS (2 x multiply-accumulates) of the computed encoder.

    Counts the 3x3/2 stem plus, per computed block, the expand 1x1,
    depthwise kxk, squeeze-excite FCs (on SE stages) and project 1x1.
    Pooling, interpolation and the NN search are excluded.
    """
    _check_input_resolution(input_resolution)
    widths = WIDTHS[config.width]
    stem_res = input_resolution // 2
    stem = 2 * stem_res * stem_res * STEM_CHANNELS * 9 * 3
    blocks = []
    total = stem
    for s in range(N_STAGES):
        res_in = stem_res if s == 0 else input_resolution // RESOLUTION_DIVISORS[s - 1]
        res_out = input_resolution // RESOLUTION_DIVISORS[s]
        st = config.stages[s]
        for b in range(1, plan.depths[s] + 1):
            c_in = STEM_CHANNELS if (s == 0 and b == 1) else (widths[s - 1] if b == 1 else widths[s])
            c_mid = st.expansion * c_in
            h_in = res_in if b == 1 else res_out
            macs = h_in * h_in * c_mid * c_in  # expand 1x1
            macs += res_out * res_out * c_mid * st.kernel * st.kernel  # depthwise
            if SE_STAGES[s]:
                macs += 2 * c_mid * (c_mid // 4)  # squeeze-excite FC pair
            macs += res_out * res_out * c_mid * widths[s]  # project 1x1
            flops = 2 * macs
            blocks.append(BlockFlops(stage=s, block=b, flops=flops))
            total += flops
    return FlopsReport(total=total, stem=stem, blocks=tuple(blocks))


def config_gflops(config: ArchitectureConfig, input_resolution: int = 224) -> float:
    return estimate_flops(validate(config), config, input_resolution).gflops


# --------------------------------------------------------------------------
# sampling and the categorical view of the space


def random_config(rng: np.random.Generator) -> ArchitectureConfig:
    """Uniform independent draw per field, resampled until one extraction."""
    while True:
        width = "base" if rng.integers(2) == 0 else "wide"
        stages = []
        for s in range(N_STAGES):
            extract_idx = int(rng.integers(5))
            stages.append(
                StageConfig(
                    expansion=EXPANSIONS[rng.integers(3)],
                    kernel=KERNELS[rng.integers(3)],
                    extract=None if extract_idx == 0 else 4 * s + extract_idx,
                    patch=int(rng.integers(PATCH_RANGE[0], PATCH_RANGE[1] + 1)),
                )
            )
        config = ArchitectureConfig(width=width, stages=tuple(stages))
        if config.extracted_stages():
            return config


@dataclass(frozen=True)
class ParamSpec:
    name: str
    choices: tuple


class ConfigSpace:
    """Categorical index view of the search space for black-box samplers.

    Parameter order: width, then per stage expansion, kernel, extraction
    block and patch size. Patch parameters of non-extracted stages are
    semantically inert; active_mask marks them.
    """

    def __init__(self):
        params = [ParamSpec("width", ("base", "wide"))]
        for s in range(N_STAGES):
            params.append(ParamSpec(f"s{s}.expansion", EXPANSIONS))
            params.append(ParamSpec(f"s{s}.kernel", KERNELS))
            params.append(ParamSpec(f"s{s}.extract", (None,) + tuple(range(4 * s + 1, 4 * s + 5))))
            params.append(ParamSpec(f"s{s}.patch", tuple(range(PATCH_RANGE[0], PATCH_RANGE[1] + 1))))
        self.params = params
        self.sizes = np.array([len(p.choices) for p in params])

    def __len__(self) -> int:
        return len(self.params)

    def to_indices(self, config: ArchitectureConfig) -> np.ndarray:
        values = [config.width]
        for st in config.stages:
            values.extend([st.expansion, st.kernel, st.extract, st.patch])
        return np.array(
            [spec.choices.index(v) for spec, v in zip(self.params, values)], dtype=np.int64
        )

    def from_indices(self, indices) -> ArchitectureConfig:
        values = [spec.choices[int(i)] for spec, i in zip(self.params, indices)]
        width = values[0]
        stages = tuple(
            StageConfig(
                expansion=values[1 + 4 * s],
                kernel=values[2 + 4 * s],
                extract=values[3 + 4 * s],
                patch=values[4 + 4 * s],
            )
            for s in range(N_STAGES)
        )
        return ArchitectureConfig(width=width, stages=stages)

    def active_mask(self, config: ArchitectureConfig) -> np.ndarray:
        mask = np.ones(len(self.params), dtype=bool)
        for s in range(N_STAGES):
            if config.stages[s].extract is None:
                mask[4 + 4 * s] = False
        return mask

    def is_valid(self, config: ArchitectureConfig) -> bool:
        return bool(config.extracted_stages())

    def random(self, rng: np.random.Generator) -> ArchitectureConfig:
        return random_config(rng)


# --------------------------------------------------------------------------
# synthetic encoder


def _weight_seed(*parts) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _conv_weights(seed: int, c_out: int, c_in: int, k: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(c_in * k * k)
    return rng.normal(0.0, scale, size=(c_out, c_in, k, k)).astype(np.float32)


def _conv2d(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    n, c, _, _ = x.shape
    c_out, _, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    h_out, w_out = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_out * w_out, c * k * k)
    out = cols @ w.reshape(c_out, -1).T
    return out.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)


def synthetic_encode_batch(images: np.ndarray, config: ArchitectureConfig) -> list[np.ndarray]:
    """Encode a (N, H, W, 3) batch; returns one (N, C, h, w) array per
    extracted stage, shallow to deep.

    The weights are pseudo-random but fully determined by a hash of
    (width, stage, block, expansion, kernel), so the same config always
    produces bit-identical features, like a frozen shared-weight network.
    """
    plan = validate(config)
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ValueError(f"expected (N, H, W, 3) batch, got shape {images.shape}")
    _check_input_resolution(images.shape[1])
    _check_input_resolution(images.shape[2])
    widths = WIDTHS[config.width]
    x = images.transpose(0, 3, 1, 2)
    stem_w = _conv_weights(_weight_seed(config.width, "stem"), STEM_CHANNELS, 3, 3)
    x = np.tanh(_conv2d(x, stem_w, 2))
    outputs = {}
    for s in range(plan.last_stage + 1):
        st = config.stages[s]
        for b in range(1, plan.depths[s] + 1):
            stride = (1 if s == 3 else 2) if b == 1 else 1
            w = _conv_weights(
                _weight_seed(config.width, s, b, st.expansion, st.kernel),
                widths[s],
                x.shape[1],
                st.kernel,
            )
            x = np.tanh(_conv2d(x, w, stride))
            if st.extract == 4 * s + b:
                outputs[s] = x
    return [outputs[s] for s in sorted(outputs)]


def synthetic_encode(image: np.ndarray, config: ArchitectureConfig) -> list[np.ndarray]:
    """Single-image variant of synthetic_encode_batch."""
    batched = synthetic_encode_batch(np.asarray(image)[None], config)
    return [t[0] for t in batched]


# --------------------------------------------------------------------------
# backends


def expected_shapes(config: ArchitectureConfig, input_resolution: int) -> list[tuple[int, tuple[int, int, int]]]:
    """(stage, (C, H, W)) for every extracted stage of a config."""
    plan = validate(config)
    widths = WIDTHS[config.width]
    out = []
    for s in config.extracted_stages():
        res = plan.resolution(s, input_resolution)
        out.append((s, (widths[s], res, res)))
    return out


def _validate_tensors(tensors, config, input_resolution):
    expected = expected_shapes(config, input_resolution)
    got = [(stage, tuple(arr.shape)) for stage, arr in tensors]
    if got != expected:
        raise BackendContractError(
            f"backend contract violation: expected {expected}, got {got}"
        )
    return [np.asarray(arr, dtype=np.float32) for _, arr in tensors]


class SyntheticBackend:
    """Resolves image ids through a loader and encodes them synthetically."""

    name = "synthetic"

    def __init__(self, image_loader: Callable[[str], np.ndarray], input_resolution: int):
        self.image_loader = image_loader
        self.input_resolution = input_resolution

    def fetch(self, image_id: str, config: ArchitectureConfig):
        image = self.image_loader(image_id)
        tensors = synthetic_encode(image, config)
        return list(zip(config.extracted_stages(), tensors))

    def fetch_batch(self, image_ids, config):
        images = np.stack([self.image_loader(i) for i in image_ids])
        per_stage = synthetic_encode_batch(images, config)
        stages = config.extracted_stages()
        return [list(zip(stages, [t[i] for t in per_stage])) for i in range(len(image_ids))]


class CacheBackend:
    """Reads FMAP files named <image_id>.fmap from a directory."""

    name = "cache"

    def __init__(self, root, input_resolution: int):
        self.root = Path(root)
        self.input_resolution = input_resolution

    def fetch(self, image_id: str, config: ArchitectureConfig):
        path = self.root / f"{image_id}.fmap"
        if not path.exists():
            raise BackendUnavailableError(f"feature source unavailable: {path}")
        try:
            return fmap.read(path)
        except fmap.FmapError as exc:
            raise BackendContractError(f"backend contract violation: {exc}") from exc


class ExternalBackend:
    """Client for the external feature service.

    One newline-terminated JSON request per feature map; the response is a
    u64 length prefix followed by either an FMAP blob or a JSON error
    object. Requests on one connection are serialized.
    """

    name = "external"

    def __init__(self, address: str, input_resolution: int, timeout: float = 60.0):
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"backend address must be host:port, got {address!r}")
        self.address = (host, int(port))
        self.input_resolution = input_resolution
        self.timeout = timeout
        self._sock = None
        self._lock = threading.Lock()

    def _connection(self):
        if self._sock is None:
            try:
                self._sock = socket.create_connection(self.address, timeout=self.timeout)
            except OSError as exc:
                raise BackendUnavailableError(f"feature source unavailable: {exc}") from exc
        return self._sock

    def probe(self) -> None:
        """Open the connection now so unreachable services fail fast."""
        with self._lock:
            self._connection()

    def close(self):
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def _read_exact(self, sock, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining:
            chunk = sock.recv(min(remaining, 1 << 20))
            if not chunk:
                raise BackendUnavailableError("feature source unavailable: connection closed")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def fetch(self, image_id: str, config: ArchitectureConfig):
        request = json.dumps({"image_id": image_id, "config": config.to_json()}) + "\n"
        with self._lock:
            try:
                sock = self._connection()
                sock.sendall(request.encode())
                length = int.from_bytes(self._read_exact(sock, 8), "little")
                blob = self._read_exact(sock, length)
            except OSError as exc:
                self.close()
                raise BackendUnavailableError(f"feature source unavailable: {exc}") from exc
        if blob[:4] == fmap.MAGIC:
            try:
                return fmap.loads(blob)
            except fmap.FmapError as exc:
                raise BackendContractError(f"backend contract violation: {exc}") from exc
        try:
            error = json.loads(blob.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise BackendContractError("backend contract violation: unparseable response") from exc
        code = error.get("error", "unknown")
        if code == "not_found":
            raise BackendUnavailableError(f"feature source unavailable: {error.get('message', image_id)}")
        raise BackendError(f"backend error {code}: {error.get('message', '')}")


def encode(image_id: str, config: ArchitectureConfig, backend) -> list[np.ndarray]:
    """Fetch the extraction-block tensors for one image via a backend.

    Returned tensors are shallow-to-deep float32 arrays whose shapes are
    checked against the config's width map and stage resolutions.
    """
    tensors = backend.fetch(image_id, config)
    return _validate_tensors(tensors, config, backend.input_resolution)


def encode_batch(image_ids, config: ArchitectureConfig, backend) -> list[list[np.ndarray]]:
    """encode() for many images; uses the backend's batch path if present."""
    if hasattr(backend, "fetch_batch"):
        batches = backend.fetch_batch(image_ids, config)
        return [_validate_tensors(t, config, backend.input_resolution) for t in batches]
    return [encode(i, config, backend) for i in image_ids]
