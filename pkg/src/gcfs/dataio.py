"""Images, synthetic degradations and dataset manifests.

In memory an image is a planar float64 array ``(C, H, W)`` with values in
[0, 1]. On disk it is 8-bit binary NetPBM: P5 for one channel, P6 for three.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import correlate1d

__all__ = [
    "NetpbmError",
    "read_image",
    "write_image",
    "gaussian_kernel",
    "box_kernel",
    "blur",
    "DegradedPair",
    "make_blur_pair",
    "make_sr_pair",
    "bicubic_downsample",
    "bicubic_upsample",
    "cubic_weights",
    "sample_patches",
    "synthetic_image",
    "Manifest",
    "ManifestEntry",
    "write_manifest",
    "load_manifest",
    "make_dataset",
    "synthetic_pairs",
]


class NetpbmError(ValueError):
    pass


# ---------------------------------------------------------------- NetPBM

def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise NetpbmError("malformed header: unexpected end of file")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise NetpbmError("malformed header: missing whitespace before raster")
    return tokens, pos + 1


def read_image(path) -> np.ndarray:
    """Read an 8-bit P5/P6 file as a planar float64 array in [0, 1]."""
    buf = Path(path).read_bytes()
    if buf[:2] not in (b"P5", b"P6"):
        raise NetpbmError(f"{path}: unsupported magic {buf[:2]!r}; need P5 or P6")
    channels = 1 if buf[:2] == b"P5" else 3
    try:
        tokens, offset = _header_tokens(buf, 4)
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise NetpbmError(f"{path}: malformed header ({exc})") from None
    if width <= 0 or height <= 0:
        raise NetpbmError(f"{path}: non-positive dimensions {width}x{height}")
    if maxval != 255:
        raise NetpbmError(f"{path}: maxval {maxval} unsupported; only 8-bit (255) files are accepted")
    need = width * height * channels
    raster = buf[offset : offset + need]
    if len(raster) < need:
        raise NetpbmError(f"{path}: truncated payload, {len(raster)} of {need} bytes")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Round half up to the nearest of 256 levels."""
    return np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected (C, H, W) with C in (1, 3), got {img.shape}")
    c, h, w = img.shape
    magic = b"P5" if c == 1 else b"P6"
    raster = quantize(img).transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode("ascii") + raster)


# ---------------------------------------------------------------- blur

def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    """Normalized 1-D Gaussian with ``radius = ceil(3 sigma)`` by default."""
    if sigma <= 0:
        raise ValueError(f"gaussian sigma must be positive, got {sigma}")
    r = int(math.ceil(3 * sigma)) if radius is None else radius
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def box_kernel(width: int) -> np.ndarray:
    if width < 1 or width % 2 == 0:
        raise ValueError(f"box width must be a positive odd integer, got {width}")
    return np.full(width, 1.0 / width)


def _kernel_1d(kernel: str, param) -> np.ndarray:
    if kernel == "gaussian":
        return gaussian_kernel(float(param))
    if kernel == "box":
        return box_kernel(int(param))
    if kernel == "delta":
        return np.ones(1)
    raise ValueError(f"unknown blur kernel {kernel!r}")


def blur(img: np.ndarray, kernel: str = "gaussian", param=1.5) -> np.ndarray:
    """Separable 2-D blur with half-sample symmetric boundary."""
    k = _kernel_1d(kernel, param)
    img = np.asarray(img, dtype=np.float64)
    out = correlate1d(img, k, axis=-1, mode="reflect")
    return correlate1d(out, k, axis=-2, mode="reflect")


@dataclass
class DegradedPair:
    input: np.ndarray
    target: np.ndarray
    meta: str = ""


def make_blur_pair(sharp: np.ndarray, kernel: str = "gaussian", param=1.5,
                   noise_sigma: float = 0.0, seed: int = 0) -> DegradedPair:
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    blurred = blur(sharp, kernel, param)
    if noise_sigma > 0:
        blurred = blurred + np.random.default_rng(seed).normal(0.0, noise_sigma, blurred.shape)
    blurred = np.clip(blurred, 0.0, 1.0)
    meta = f"blur={kernel}:{param};noise={noise_sigma}"
    return DegradedPair(blurred, np.asarray(sharp, dtype=np.float64), meta)


# ---------------------------------------------------------------- bicubic

def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel; ``a = -0.5`` is Catmull-Rom."""
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    return np.where(
        ax <= 1, (a + 2) * ax3 - (a + 3) * ax2 + 1,
        np.where(ax < 2, a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a, 0.0),
    )


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - 1 - idx, idx)


def cubic_weights(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` resampling matrix with pixel-center alignment.

    When shrinking, the kernel is widened by the scale factor (antialiasing).
    Each row sums to 1.
    """
    scale = n_out / n_in
    kscale = min(scale, 1.0)
    support = 2.0 / kscale
    w = np.zeros((n_out, n_in), dtype=np.float64)
    for o in range(n_out):
        center = (o + 0.5) / scale - 0.5
        lo = int(math.floor(center - support)) + 1
        taps = np.arange(lo, int(math.ceil(center + support)))
        wt = cubic((center - taps) * kscale)
        wt = wt / wt.sum()
        np.add.at(w[o], _reflect_index(taps, n_in), wt)
    return w


def _resample(img: np.ndarray, h_out: int, w_out: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    wy = cubic_weights(img.shape[-2], h_out)
    wx = cubic_weights(img.shape[-1], w_out)
    return np.einsum("oh,...hw,pw->...op", wy, img, wx)


def bicubic_downsample(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[-2:]
    if scale < 1 or h % scale or w % scale:
        raise ValueError(f"image {h}x{w} is not divisible by scale {scale}")
    return _resample(img, h // scale, w // scale)


def bicubic_upsample(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[-2:]
    return _resample(img, h * scale, w * scale)


def make_sr_pair(hr: np.ndarray, scale: int) -> DegradedPair:
    lr = np.clip(bicubic_downsample(hr, scale), 0.0, 1.0)
    return DegradedPair(lr, np.asarray(hr, dtype=np.float64), f"scale={scale}")


def pair_scale(pair: DegradedPair) -> int:
    s = pair.target.shape[-1] // pair.input.shape[-1]
    if pair.target.shape[-2:] != (pair.input.shape[-2] * s, pair.input.shape[-1] * s):
        raise ValueError(f"target {pair.target.shape} is not an integer magnification of input {pair.input.shape}")
    return s


# ---------------------------------------------------------------- patches

def crop_offsets(h: int, w: int, patch: int, count: int, seed: int) -> list[tuple[int, int]]:
    rng = np.random.default_rng(seed)
    ys = rng.integers(0, h - patch + 1, size=count)
    xs = rng.integers(0, w - patch + 1, size=count)
    return [(int(y), int(x)) for y, x in zip(ys, xs)]


def sample_patches(pair: DegradedPair, patch: int, count: int, seed: int) -> list[DegradedPair]:
    """Co-located random crops; ``patch`` is measured on the input image."""
    s = pair_scale(pair)
    h, w = pair.input.shape[-2:]
    if patch > h or patch > w:
        raise ValueError(f"patch {patch} larger than image {h}x{w}")
    out = []
    for y, x in crop_offsets(h, w, patch, count, seed):
        inp = pair.input[..., y : y + patch, x : x + patch]
        tgt = pair.target[..., s * y : s * (y + patch), s * x : s * (x + patch)]
        out.append(DegradedPair(inp.copy(), tgt.copy(), f"{pair.meta};crop={x},{y},{patch}"))
    return out


# ---------------------------------------------------------------- synthetic content

def synthetic_image(size: int, seed: int, channels: int = 3) -> np.ndarray:
    """Procedural test image: smooth background, flat shapes, thin lines, stripes."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    img = np.empty((channels, size, size))
    base = rng.uniform(0.2, 0.8, size=channels)
    gx, gy = rng.uniform(-0.3, 0.3, size=(2, channels))
    for c in range(channels):
        img[c] = base[c] + gx[c] * (xx - 0.5) + gy[c] * (yy - 0.5)

    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0.0, 1.0, size=channels)
        kind = rng.integers(0, 3)
        if kind == 0:
            x0, y0 = rng.uniform(-0.1, 0.8, size=2)
            wd, ht = rng.uniform(0.15, 0.5, size=2)
            mask = (xx >= x0) & (xx <= x0 + wd) & (yy >= y0) & (yy <= y0 + ht)
        elif kind == 1:
            cx, cy = rng.uniform(0.1, 0.9, size=2)
            r = rng.uniform(0.08, 0.3)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        else:
            ang = rng.uniform(0, np.pi)
            period = rng.uniform(0.12, 0.3)
            phase = np.cos(ang) * xx + np.sin(ang) * yy
            cx, cy = rng.uniform(0.2, 0.8, size=2)
            r = rng.uniform(0.2, 0.4)
            mask = (np.mod(phase / period, 1.0) < 0.5) & (np.abs(xx - cx) < r) & (np.abs(yy - cy) < r)
        img[:, mask] = color[:, None]

    for _ in range(rng.integers(1, 4)):
        color = rng.uniform(0.0, 1.0, size=channels)
        ang = rng.uniform(0, np.pi)
        off = rng.uniform(0.2, 0.8)
        dist = np.abs(np.cos(ang) * (xx - 0.5) + np.sin(ang) * (yy - 0.5) + 0.5 - off)
        mask = dist * (size - 1) < 0.6
        img[:, mask] = color[:, None]
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------- manifests

@dataclass
class ManifestEntry:
    input_path: str
    target_path: str
    meta: str = ""


@dataclass
class Manifest:
    entries: list = field(default_factory=list)
    seed: int = 0
    root: str = "."

    def __len__(self) -> int:
        return len(self.entries)

    def load_pairs(self) -> list[DegradedPair]:
        """Read every pair; raises before returning anything if a file is missing."""
        missing = [p for e in self.entries for p in (e.input_path, e.target_path)
                   if not (Path(self.root) / p).is_file()]
        if missing:
            raise FileNotFoundError(f"manifest references missing files: {missing[:5]}")
        return [DegradedPair(read_image(Path(self.root) / e.input_path),
                             read_image(Path(self.root) / e.target_path), e.meta)
                for e in self.entries]


def write_manifest(path, manifest: Manifest) -> None:
    lines = [f"#seed\t{manifest.seed}"]
    for e in manifest.entries:
        for part in (e.input_path, e.target_path, e.meta):
            if "\t" in part or "\n" in part:
                raise ValueError(f"manifest fields may not contain tabs or newlines: {part!r}")
        lines.append(f"{e.input_path}\t{e.target_path}\t{e.meta}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_manifest(path) -> Manifest:
    """Parse a manifest; relative paths resolve against the manifest's directory."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    seed = 0
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line[1:].split("\t")
            if parts[0] == "seed" and len(parts) == 2:
                seed = int(parts[1])
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise ValueError(f"{path}:{lineno}: expected input<TAB>target<TAB>meta")
        entries.append(ManifestEntry(parts[0], parts[1], parts[2] if len(parts) == 3 else ""))
    man = Manifest(entries=entries, seed=seed, root=str(path.parent))
    missing = [p for e in entries for p in (e.input_path, e.target_path)
               if not (path.parent / p).is_file()]
    if missing:
        raise FileNotFoundError(f"{path}: missing files {missing[:5]}")
    return man


def make_dataset(out_dir, task: str, count: int, size: int, seed: int, channels: int = 3,
                 kernel: str = "gaussian", param=1.5, noise_sigma: float = 0.0,
                 scale: int = 2, name: str = "manifest.txt") -> Path:
    """Write ``count`` synthetic pairs plus a manifest into ``out_dir``.

    ``size`` is the target (sharp / high-resolution) side length. Image ``i``
    uses seed ``seed * 100_003 + i`` for content and ``seed ^ i`` for noise.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = ".ppm" if channels == 3 else ".pgm"
    entries = []
    for i in range(count):
        sharp = synthetic_image(size, seed * 100_003 + i, channels)
        if task == "deblur":
            pair = make_blur_pair(sharp, kernel, param, noise_sigma, seed ^ i)
        elif task == "sr":
            pair = make_sr_pair(sharp, scale)
        else:
            raise ValueError(f"unknown task {task!r}")
        inp, tgt = f"{i:05d}_input{ext}", f"{i:05d}_target{ext}"
        write_image(out / inp, pair.input)
        write_image(out / tgt, pair.target)
        entries.append(ManifestEntry(inp, tgt, pair.meta))
    mpath = out / name
    write_manifest(mpath, Manifest(entries, seed))
    return mpath


def synthetic_pairs(task: str, count: int, size: int, seed: int, channels: int = 3,
                    kernel: str = "gaussian", param=1.5, noise_sigma: float = 0.0,
                    scale: int = 2, quantized: bool = True) -> list[DegradedPair]:
    """In-memory equivalent of :func:`make_dataset` (same seeds, same 8-bit rounding)."""
    pairs = []
    for i in range(count):
        sharp = synthetic_image(size, seed * 100_003 + i, channels)
        if task == "deblur":
            pair = make_blur_pair(sharp, kernel, param, noise_sigma, seed ^ i)
        else:
            pair = make_sr_pair(sharp, scale)
        if quantized:
            pair = DegradedPair(quantize(pair.input) / 255.0, quantize(pair.target) / 255.0, pair.meta)
        pairs.append(pair)
    return pairs


def env_threads(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("GCFS_THREADS", default)))
    except ValueError:
        return default


def stack(images: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack([np.asarray(i, dtype=np.float64) for i in images])
