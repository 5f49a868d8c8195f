"""Datasets, corruption operators, and the portable tensor container.

Everything here is deterministic given a seed: sampling, corruption masks and
image synthesis all run on counter-based streams, so training pipelines can
re-derive any batch without shared mutable RNG state.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import SplitMix64, derive_seed

# -- corruption ----------------------------------------------------------------


@dataclass(frozen=True)
class CorruptionSpec:
    """Pixel corruption parameters.

    ``drop_rate``: probability that a single (channel, pixel) entry is zeroed
    independently per channel (the denoising task). ``black_rate``:
    probability that a pixel is zeroed across all channels (the sparse
    inpainting task). The pair encodes the combined noise grid written
    "x/y" = (100*drop_rate, 100*black_rate).
    """

    drop_rate: float = 0.0
    black_rate: float = 0.0

    def __post_init__(self):
        for name in ("drop_rate", "black_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    @property
    def label(self) -> str:
        return f"{round(100 * self.drop_rate)}/{round(100 * self.black_rate)}"

    @staticmethod
    def from_label(label: str) -> "CorruptionSpec":
        x, y = label.split("/")
        return CorruptionSpec(drop_rate=float(x) / 100.0, black_rate=float(y) / 100.0)


#: the combined-noise evaluation grid: same-type escalation then cross-type
NOISE_GRID_LABELS = ("25/0", "35/0", "50/0", "25/10", "25/20", "25/25")


def corrupt(img: np.ndarray, spec: CorruptionSpec, seed: int) -> np.ndarray:
    """Apply per-channel drop then all-channel blackout to a (C, H, W) image.

    Values are expected in [0, 1]; corrupted entries become 0. The mask is a
    pure function of (seed, spec), so the same call is idempotent.
    """
    if img.ndim != 3:
        raise ValueError(f"corrupt expects (C, H, W), got shape {img.shape}")
    out = np.array(img, dtype=np.float64)
    c, h, w = out.shape
    if spec.drop_rate > 0.0:
        u = SplitMix64(derive_seed(seed, "drop")).uniform((c, h, w))
        out[u < spec.drop_rate] = 0.0
    if spec.black_rate > 0.0:
        u = SplitMix64(derive_seed(seed, "black")).uniform((h, w))
        out[:, u < spec.black_rate] = 0.0
    return out


def corrupt_batch(imgs: np.ndarray, spec: CorruptionSpec, seed: int) -> np.ndarray:
    return np.stack([corrupt(imgs[i], spec, derive_seed(seed, "img", i))
                     for i in range(imgs.shape[0])])


# -- synthetic manifold -----------------------------------------------------------


class SyntheticManifold:
    """Deterministic low-dimensional regression task on (x, y) in [-1, 1]^2.

    Input coordinates [x, y, e^(2x)]; output coordinates
    [x + 2y + 4, e^x + 1, x + y + 3, x + 2].
    """

    input_dim = 3
    output_dim = 4

    @staticmethod
    def input_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.stack([x, y, np.exp(2.0 * x)], axis=-1)

    @staticmethod
    def output_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.stack([x + 2.0 * y + 4.0, np.exp(x) + 1.0, x + y + 3.0, x + 2.0], axis=-1)


def sample_manifold(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """n uniform domain points mapped through the manifold: (n x 3, n x 4)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = SplitMix64(seed)
    x = rng.uniform((n,), -1.0, 1.0)
    y = rng.uniform((n,), -1.0, 1.0)
    return SyntheticManifold.input_map(x, y), SyntheticManifold.output_map(x, y)


# -- procedural images --------------------------------------------------------------

LATENT_DIM = 6  # cx, cy, blob scale, gradient orientation, two color controls


def _render(latent: np.ndarray, side: int) -> np.ndarray:
    """Map one 6-dim latent to a smooth (3, side, side) image in [0, 1]."""
    cx, cy, scale, theta, c1, c2 = latent
    grid = (np.arange(side) + 0.5) / side
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    # oriented background gradient in [0, 1]
    direction = (xx - 0.5) * np.cos(theta) + (yy - 0.5) * np.sin(theta)
    background = 0.5 + 0.5 * np.tanh(2.0 * direction)
    # smooth blob; scale controls its footprint
    r2 = (xx - cx) ** 2 + (yy - cy) ** 2
    blob = np.exp(-r2 / (2.0 * scale ** 2))
    # fixed color maps keep the latent -> image map smooth and injective
    ch0 = 0.15 + 0.7 * (c1 * background + (1.0 - c1) * blob)
    ch1 = 0.15 + 0.7 * (c2 * blob + (1.0 - c2) * background)
    ch2 = 0.15 + 0.7 * (0.5 * (c1 + c2) * (1.0 - background) + (1.0 - 0.5 * (c1 + c2)) * blob)
    return np.clip(np.stack([ch0, ch1, ch2]), 0.0, 1.0)


def sample_latents(n: int, seed: int) -> np.ndarray:
    rng = SplitMix64(seed)
    lat = np.empty((n, LATENT_DIM))
    lat[:, 0] = rng.uniform((n,), 0.25, 0.75)   # cx
    lat[:, 1] = rng.uniform((n,), 0.25, 0.75)   # cy
    lat[:, 2] = rng.uniform((n,), 0.08, 0.25)   # scale
    lat[:, 3] = rng.uniform((n,), 0.0, np.pi)   # orientation
    lat[:, 4] = rng.uniform((n,), 0.0, 1.0)     # c1
    lat[:, 5] = rng.uniform((n,), 0.0, 1.0)     # c2
    return lat


def render_latents(latents: np.ndarray, side: int) -> np.ndarray:
    return np.stack([_render(lat, side) for lat in latents])


def gen_procedural_images(n: int, side: int, seed: int,
                          return_latents: bool = False):
    """n smooth blob-and-gradient images on a known 6-dim manifold.

    Returns (n, 3, side, side) in [0, 1]; with ``return_latents`` also the
    generating parameters so the target manifold is known exactly.
    """
    if side not in (16, 32, 64):
        raise ValueError(f"side must be one of 16/32/64, got {side}")
    latents = sample_latents(n, seed)
    imgs = render_latents(latents, side)
    if return_latents:
        return imgs, latents
    return imgs


def write_dataset_manifest(path: str | Path, n: int, side: int, seed: int,
                           latent_log_path: str) -> None:
    manifest = {"samples": n, "side": side, "seed": seed, "latent_log": latent_log_path}
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- tensor container (TNSR) ----------------------------------------------------------

_MAGIC = b"TNSR"
_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class TensorFormatError(ValueError):
    """Malformed TNSR container."""


def tensor_write(path: str | Path, array: np.ndarray) -> None:
    """Serialize an array: magic, version u8, dtype u8, ndim u8, reserved u8,
    little-endian u32 dims, then the row-major little-endian payload."""
    arr = np.asarray(array)
    if arr.dtype not in _DTYPE_CODES:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    header = _MAGIC + struct.pack("<BBBB", _VERSION, _DTYPE_CODES[arr.dtype], arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    Path(path).write_bytes(header + dims + payload)


def tensor_read(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != _MAGIC:
        raise TensorFormatError("bad magic")
    version, dtype_code, ndim, reserved = struct.unpack("<BBBB", raw[4:8])
    if version != _VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if dtype_code not in _DTYPES:
        raise TensorFormatError(f"unknown dtype code {dtype_code}")
    if reserved != 0:
        raise TensorFormatError("reserved header byte must be 0")
    dtype = _DTYPES[dtype_code]
    offset = 8 + 4 * ndim
    if len(raw) < offset:
        raise TensorFormatError("truncated dimension table")
    shape = struct.unpack(f"<{ndim}I", raw[8:offset]) if ndim else ()
    count = int(np.prod(shape)) if ndim else 1
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise TensorFormatError(f"payload size mismatch: expected {expected} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
