"""
Image IO, synthetic distortion corpus, manifests and patch sampling.

Images are ``[H, W, 3]`` float arrays with values in ``[0, 1]``; on disk they
are binary PPM (P6, maxval 255).  The synthetic corpus stands in for a real
IQA database: every reference gets four distortion families at five
severities, and the MOS proxy is an affine function of severity so the true
quality ordering is known exactly.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, FormatError, InputError
from .model import patch_origins

SPLITS = ("train", "valid", "test")

DISTORTIONS = {
    # name: (per-level parameters for levels 1..5, MOS offset)
    "gaussian_blur": ((0.8, 1.6, 2.4, 3.2, 4.0), 0.0),
    "white_noise": ((0.02, 0.04, 0.08, 0.12, 0.16), -2.0),
    "contrast_decrement": ((0.9, 0.75, 0.6, 0.45, 0.3), 2.0),
    "block_quantization": ((0.2, 0.35, 0.5, 0.7, 0.9), -4.0),
}
IMAGE_SIZE = 288


# ---------------------------------------------------------------------------
# PPM IO
# ---------------------------------------------------------------------------

def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos:pos + 1].isspace():
            pos += 1
        elif buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError(f"unexpected end of header at byte {start}")
    return buf[start:pos], pos


def read_image(path) -> np.ndarray:
    """Load a binary P6 PPM (maxval 255) as a float64 ``[H, W, 3]`` array in [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != b"P6":
        raise FormatError(f"{path}: bad magic {buf[:2]!r} at byte 0, expected b'P6'")
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        at = pos
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"{path}: {name} {tok!r} is not a number (byte {at})")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported, expected 255 (byte {pos})")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after maxval at byte {pos}")
    pos += 1
    need = width * height * 3
    if len(buf) - pos < need:
        raise FormatError(f"{path}: truncated payload at byte {len(buf)}, need {need} bytes from byte {pos}")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return pixels.reshape(height, width, 3).astype(np.float64) / 255.0


def write_image(img: np.ndarray, path) -> None:
    """Write ``img`` as P6; quantisation rounds half to even."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"expected [H, W, 3] image, got {img.shape}")
    data = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


# ---------------------------------------------------------------------------
# distortions
# ---------------------------------------------------------------------------

def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(r * r) / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, radius ceil(3 sigma), edge-clamped borders."""
    k = gaussian_kernel(sigma)
    r = (k.size - 1) // 2
    out = np.pad(img, ((r, r), (0, 0), (0, 0)), mode="edge")
    out = np.tensordot(sliding_window_view(out, k.size, axis=0), k, axes=([-1], [0]))
    out = np.pad(out, ((0, 0), (r, r), (0, 0)), mode="edge")
    out = np.tensordot(sliding_window_view(out, k.size, axis=1), k, axes=([-1], [0]))
    return np.clip(out, 0.0, 1.0)


def white_noise(img: np.ndarray, sigma: float, noise: np.ndarray) -> np.ndarray:
    """Add ``sigma * noise``; ``noise`` is a fixed standard normal field."""
    return np.clip(img + sigma * noise, 0.0, 1.0)


def contrast_decrement(img: np.ndarray, factor: float) -> np.ndarray:
    mean = img.mean(axis=(0, 1), keepdims=True)
    return np.clip(mean + factor * (img - mean), 0.0, 1.0)


def block_average(img: np.ndarray, block: int = 8) -> np.ndarray:
    h, w, c = img.shape
    ph, pw = -h % block, -w % block
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
    hb, wb = padded.shape[0] // block, padded.shape[1] // block
    means = padded.reshape(hb, block, wb, block, c).mean(axis=(1, 3))
    return np.repeat(np.repeat(means, block, axis=0), block, axis=1)[:h, :w]


def block_quantization(img: np.ndarray, strength: float, block: int = 8) -> np.ndarray:
    """Blend toward 8x8 block means with weight ``strength``."""
    return np.clip((1.0 - strength) * img + strength * block_average(img, block), 0.0, 1.0)


def distort(img: np.ndarray, dist_type: str, level: int, noise: Optional[np.ndarray] = None) -> np.ndarray:
    """Apply ``dist_type`` at ``level`` (0 returns the reference unchanged)."""
    if dist_type not in DISTORTIONS:
        raise ContractError(f"unknown distortion {dist_type!r}")
    if level == 0:
        return img.copy()
    param = DISTORTIONS[dist_type][0][level - 1]
    if dist_type == "gaussian_blur":
        return gaussian_blur(img, param)
    if dist_type == "white_noise":
        if noise is None:
            raise ContractError("white_noise needs a noise field")
        return white_noise(img, param, noise)
    if dist_type == "contrast_decrement":
        return contrast_decrement(img, param)
    return block_quantization(img, param)


def mos_proxy(dist_type: str, level: int) -> float:
    return 100.0 - 18.0 * level + DISTORTIONS[dist_type][1]


def procedural_reference(rng: np.random.Generator, size: int = IMAGE_SIZE) -> np.ndarray:
    """Band-limited colour noise overlaid with random rectangles and discs."""
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.sqrt(fx * fx + fy * fy)
    cutoff = rng.uniform(0.05, 0.25)
    lowpass = np.exp(-(radius / cutoff) ** 2)
    img = np.empty((size, size, 3))
    for ch in range(3):
        spec = np.fft.fft2(rng.standard_normal((size, size))) * lowpass
        layer = np.real(np.fft.ifft2(spec))
        layer = (layer - layer.mean()) / (layer.std() + 1e-12)
        img[..., ch] = 0.5 + 0.12 * layer
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(rng.integers(6, 12)):
        colour = rng.uniform(0.05, 0.95, size=3)
        alpha = rng.uniform(0.5, 1.0)
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, size - 16, size=2)
            h, w = rng.integers(16, size // 2, size=2)
            mask = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        else:
            cy, cx = rng.uniform(0, size, size=2)
            r = rng.uniform(10, size / 4)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        img[mask] = (1 - alpha) * img[mask] + alpha * colour
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

MANIFEST_HEADER = ("ref_path", "dist_path", "mos", "split", "dist_type", "level")


@dataclass(frozen=True)
class Record:
    ref_path: str
    dist_path: str
    mos: float
    split: str
    dist_type: str
    level: int


@dataclass
class DatasetManifest:
    """Records plus the directory their relative paths resolve against."""

    records: list[Record]
    root: Path
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def path(self, rel: str) -> Path:
        return self.root / rel

    def image(self, rel: str) -> np.ndarray:
        """Cached float32 copy of an image in the manifest."""
        img = self._cache.get(rel)
        if img is None:
            img = read_image(self.path(rel)).astype(np.float32)
            self._cache[rel] = img
        return img

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_HEADER)
            for r in self.records:
                writer.writerow([r.ref_path, r.dist_path, repr(float(r.mos)), r.split, r.dist_type, r.level])

    def validate(self) -> None:
        """Every path resolves and no reference is shared between splits."""
        owner: dict[str, str] = {}
        for r in self.records:
            for p in (r.ref_path, r.dist_path):
                if not self.path(p).is_file():
                    raise InputError(f"manifest path does not resolve: {p}")
            if owner.setdefault(r.ref_path, r.split) != r.split:
                raise ContractError(f"reference {r.ref_path} appears in splits {owner[r.ref_path]} and {r.split}")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != MANIFEST_HEADER:
            raise FormatError(f"{path}: header {header} != {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(MANIFEST_HEADER):
                raise FormatError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            try:
                records.append(Record(row[0], row[1], float(row[2]), row[3], row[4], int(row[5])))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if row[3] not in SPLITS:
                raise FormatError(f"{path}:{lineno}: unknown split {row[3]!r}")
    return DatasetManifest(records, path.parent)


def assign_splits(n_refs: int, rng: np.random.Generator) -> list[str]:
    """70/15/15 by reference; valid and test always get at least one."""
    n_valid = max(1, round(0.15 * n_refs))
    n_test = max(1, round(0.15 * n_refs))
    labels = ["train"] * (n_refs - n_valid - n_test) + ["valid"] * n_valid + ["test"] * n_test
    order = rng.permutation(n_refs)
    out = [""] * n_refs
    for slot, ref in enumerate(order):
        out[ref] = labels[slot]
    return out


def synth_corpus(seed: int, n_refs: int, out_dir) -> DatasetManifest:
    """Generate references, their distortions and ``manifest.csv`` under ``out_dir``.

    Output is a pure function of ``(seed, n_refs)``.  Level 0 rows point at the
    untouched reference and carry MOS ``100 + offset`` for calibration.
    """
    if n_refs < 4:
        raise ContractError(f"need at least 4 references, got {n_refs}")
    out = Path(out_dir)
    (out / "refs").mkdir(parents=True, exist_ok=True)
    (out / "dist").mkdir(parents=True, exist_ok=True)

    root = np.random.default_rng(seed)
    splits = assign_splits(n_refs, root)
    ref_rngs = root.spawn(n_refs)
    records = []
    for i, rng in enumerate(ref_rngs):
        ref = procedural_reference(rng)
        noise = rng.standard_normal(ref.shape)
        ref_rel = f"refs/ref_{i:03d}.ppm"
        write_image(ref, out / ref_rel)
        ref_q = read_image(out / ref_rel)
        for dist_type in DISTORTIONS:
            records.append(Record(ref_rel, ref_rel, mos_proxy(dist_type, 0), splits[i], dist_type, 0))
            for level in range(1, 6):
                rel = f"dist/ref_{i:03d}_{dist_type}_{level}.ppm"
                write_image(distort(ref_q, dist_type, level, noise), out / rel)
                records.append(Record(ref_rel, rel, mos_proxy(dist_type, level), splits[i], dist_type, level))
    manifest = DatasetManifest(records, out)
    manifest.write(out / "manifest.csv")
    return manifest


# ---------------------------------------------------------------------------
# patch sampling
# ---------------------------------------------------------------------------

class PatchSampler:
    """Crops aligned patch pairs.

    ``train_random`` draws one crop offset and one flip decision per pair and
    applies both to reference and distorted image alike; ``eval_fixed``
    returns the five corner/centre patches.
    """

    def __init__(self, mode: str = "train_random", patch_size: int = 192, seed: int = 0,
                 flip_prob: float = 0.5):
        if mode not in ("train_random", "eval_fixed"):
            raise ContractError(f"unknown sampler mode {mode!r}")
        self.mode = mode
        self.patch_size = patch_size
        self.flip_prob = flip_prob
        self.rng = np.random.default_rng(seed)

    def _check(self, ref: np.ndarray, dist: np.ndarray) -> None:
        if ref.shape != dist.shape:
            raise InputError(f"reference {ref.shape} and distorted {dist.shape} differ in size")
        h, w = ref.shape[:2]
        if h < self.patch_size or w < self.patch_size:
            raise InputError(f"image {h}x{w} smaller than patch {self.patch_size}")


def sample_train_pair(sampler: PatchSampler, ref: np.ndarray, dist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shared flip and crop; returns channels-first ``[3, P, P]`` arrays."""
    sampler._check(ref, dist)
    p = sampler.patch_size
    h, w = ref.shape[:2]
    flip = sampler.rng.random() < sampler.flip_prob
    y = int(sampler.rng.integers(0, h - p + 1))
    x = int(sampler.rng.integers(0, w - p + 1))
    if flip:
        ref, dist = ref[:, ::-1], dist[:, ::-1]
    return (np.ascontiguousarray(ref[y:y + p, x:x + p].transpose(2, 0, 1)),
            np.ascontiguousarray(dist[y:y + p, x:x + p].transpose(2, 0, 1)))


def sample_eval_patches(sampler: PatchSampler, ref: np.ndarray, dist: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    sampler._check(ref, dist)
    p = sampler.patch_size
    h, w = ref.shape[:2]
    return [(np.ascontiguousarray(ref[y:y + p, x:x + p].transpose(2, 0, 1)),
             np.ascontiguousarray(dist[y:y + p, x:x + p].transpose(2, 0, 1)))
            for y, x in patch_origins(h, w, p)]


class Batch(NamedTuple):
    ref: np.ndarray
    dist: np.ndarray
    mos: np.ndarray
    indices: np.ndarray


def batch_iter(manifest: DatasetManifest, split: str, batch_size: int, sampler: PatchSampler,
               seed: int) -> Iterator[Batch]:
    """One epoch over ``split`` in a seeded order; the last batch may be short.

    ``indices`` are positions within ``manifest.split(split)``.
    """
    records = manifest.split(split)
    if not records:
        raise ContractError(f"split {split!r} is empty")
    order = np.random.default_rng(seed).permutation(len(records))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        refs, dists = [], []
        for i in idx:
            r = records[i]
            a, b = sample_train_pair(sampler, manifest.image(r.ref_path), manifest.image(r.dist_path))
            refs.append(a)
            dists.append(b)
        yield Batch(np.stack(refs), np.stack(dists),
                    np.array([records[i].mos for i in idx], dtype=np.float64), idx)
