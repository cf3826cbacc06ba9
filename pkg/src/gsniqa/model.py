"""Gradient Siamese Network: shared CDC branch, multi-level fusion, regression head."""

from __future__ import annotations

import dataclasses
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .errors import ConfigConflictError, ContractError, DimensionError, FormatError, InputError
from .layers import BatchNorm2d, CDCConv2d, Linear, Module, SpatialAttention, init_parameters
from .tensor import Tensor

# (input, output) channel chains per stage, straight from the layer table.
TABLE1 = {
    "conv1": (3, 64),
    "block1": (64, 128, 204, 128),
    "block2": (128, 153, 128, 179, 128),
    "block3": (128, 128, 153, 128),
}
ATTENTION_KERNELS = (7, 5, 3)


@dataclass
class GsnConfig:
    patch_size: int = 192
    theta: float = 0.7
    use_kl_loss: bool = True
    width_scale: float = 1.0
    fusion_channels: tuple = (128, 128, 1)
    dtype: str = "float32"

    def __post_init__(self):
        self.fusion_channels = tuple(int(c) for c in self.fusion_channels)
        if self.patch_size % 8 != 0 or self.patch_size < 8:
            raise ContractError(f"patch_size must be a positive multiple of 8, got {self.patch_size}")
        if not 0.0 <= self.theta <= 1.0:
            raise ContractError(f"theta must lie in [0, 1], got {self.theta}")
        if self.width_scale <= 0:
            raise ContractError("width_scale must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ContractError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def fused_spatial(self) -> int:
        return self.patch_size // 8

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def width(self, channels: int) -> int:
        """Channel count after width scaling (never below 8)."""
        if self.width_scale == 1.0:
            return channels
        return max(8, int(round(channels * self.width_scale)))

    def to_items(self) -> list[tuple[str, str]]:
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append((f.name, str(v)))
        return out

    @classmethod
    def from_items(cls, items: dict) -> "GsnConfig":
        kw = {}
        for f in dataclasses.fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name]
            if f.name in ("patch_size",):
                kw[f.name] = int(raw)
            elif f.name in ("theta", "width_scale"):
                kw[f.name] = float(raw)
            elif f.name == "use_kl_loss":
                kw[f.name] = raw in ("True", "true", "1")
            elif f.name == "fusion_channels":
                kw[f.name] = tuple(int(x) for x in raw.split(","))
            else:
                kw[f.name] = raw
        return cls(**kw)


class ConvBnRelu(Module):
    def __init__(self, in_ch: int, out_ch: int, theta: float, dtype):
        self.cdc = CDCConv2d(in_ch, out_ch, 3, theta=theta, dtype=dtype)
        self.bn = BatchNorm2d(out_ch, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(self.bn(self.cdc(x)))


class Block(Module):
    """CDC rows, a 3x3/2 max-pool with padding 1, then spatial attention."""

    def __init__(self, chain: Sequence[int], attn_k: int, theta: float, dtype):
        self.convs = [ConvBnRelu(a, b, theta, dtype) for a, b in zip(chain[:-1], chain[1:])]
        self.attention = SpatialAttention(attn_k, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = conv(x)
        return self.attention(T.max_pool2d(x, 3, 2, 1))


class GsnModel(Module):
    """Two-branch siamese IQA network.

    Both branches are the same ``Block`` objects, so weight sharing holds by
    construction.  ``forward(ref, dist)`` returns one score per sample.
    """

    def __init__(self, config: Optional[GsnConfig] = None, seed: Optional[int] = 0):
        self.config = config or GsnConfig()
        cfg = self.config
        dt = cfg.np_dtype
        w = cfg.width

        self.conv1 = ConvBnRelu(3, w(TABLE1["conv1"][1]), cfg.theta, dt)
        blocks = []
        prev = w(TABLE1["conv1"][1])
        for name, k in zip(("block1", "block2", "block3"), ATTENTION_KERNELS):
            chain = [prev] + [w(c) for c in TABLE1[name][1:]]
            blocks.append(Block(chain, k, cfg.theta, dt))
            prev = chain[-1]
        self.block1, self.block2, self.block3 = blocks
        level_ch = [b.convs[-1].cdc.weight.shape[0] for b in blocks]

        f1, f2, f3 = cfg.fusion_channels
        f1, f2 = w(f1), w(f2)
        self.fuse1 = ConvBnRelu(2 * level_ch[0], f1, cfg.theta, dt)
        self.fuse2 = ConvBnRelu(f1 + 2 * level_ch[1], f2, cfg.theta, dt)
        # final compression stays linear so the score-bearing map is not clipped
        self.fuse3 = CDCConv2d(f2 + 2 * level_ch[2], f3, 3, theta=cfg.theta, dtype=dt)
        self.head = Linear(f3 * cfg.fused_spatial ** 2, 1, dtype=dt)

        self.meta: dict[str, str] = {}
        if seed is not None:
            init_parameters(self, np.random.default_rng(seed))

    @property
    def head_input_length(self) -> int:
        return self.head.weight.shape[1]

    def _as_input(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.config.np_dtype))
        elif x.dtype != self.config.np_dtype:
            x = Tensor(x.data.astype(self.config.np_dtype))
        return x

    def branch_forward(self, x) -> tuple[Tensor, Tensor, Tensor]:
        x = self._as_input(x)
        p = self.config.patch_size
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"branch expects [N, 3, P, P], got {x.shape}")
        if x.shape[2:] != (p, p):
            raise DimensionError(f"branch expects {p}x{p} patches, got {x.shape[2]}x{x.shape[3]}")
        h = self.conv1(x)
        low = self.block1(h)
        mid = self.block2(low)
        high = self.block3(mid)
        return low, mid, high

    def fuse_and_score(self, ref_feats: Sequence[Tensor], dist_feats: Sequence[Tensor]) -> Tensor:
        s = self.config.fused_spatial
        cats = []
        for r, d in zip(ref_feats, dist_feats):
            if r.shape != d.shape:
                raise DimensionError(f"reference/distorted features differ: {r.shape} vs {d.shape}")
            cats.append(T.adaptive_avg_pool2d(T.concat([r, d], axis=1), s, s))
        g = self.fuse1(cats[0])
        g = self.fuse2(T.concat([g, cats[1]], axis=1))
        g = self.fuse3(T.concat([g, cats[2]], axis=1))
        scores = self.head(T.flatten(g, 1))
        return T.reshape(scores, (scores.shape[0],))

    def forward(self, ref, dist) -> Tensor:
        return self.fuse_and_score(self.branch_forward(ref), self.branch_forward(dist))

    def parameter_dump(self) -> np.ndarray:
        return np.concatenate([p.data.reshape(-1).astype(np.float64) for p in self.parameters()])


def patch_origins(height: int, width: int, patch: int) -> list[tuple[int, int]]:
    """Top-left corners of the four corner patches and the centre patch."""
    if height < patch or width < patch:
        raise InputError(f"image {height}x{width} is smaller than patch {patch}")
    dy, dx = height - patch, width - patch
    return [(0, 0), (0, dx), (dy, 0), (dy, dx), (dy // 2, dx // 2)]


def extract_patches(img: np.ndarray, patch: int) -> np.ndarray:
    """[H, W, 3] image -> [5, 3, P, P] corner/centre patches."""
    h, w = img.shape[:2]
    return np.stack([img[y:y + patch, x:x + patch].transpose(2, 0, 1)
                     for y, x in patch_origins(h, w, patch)])


def predict_image(model: GsnModel, ref_img: np.ndarray, dist_img: np.ndarray) -> float:
    """Mean score of the five corner/centre patches, batch norm in eval mode."""
    if ref_img.shape != dist_img.shape:
        raise InputError(f"reference {ref_img.shape} and distorted {dist_img.shape} differ in size")
    p = model.config.patch_size
    was_training = model.training
    model.eval()
    try:
        scores = model(extract_patches(ref_img, p), extract_patches(dist_img, p)).data
    finally:
        model.train(was_training)
    return float(np.mean(scores.astype(np.float64)))


# ---------------------------------------------------------------------------
# checkpoint IO
# ---------------------------------------------------------------------------

MAGIC = b"GSN1"


def _header_text(model: GsnModel, epoch: Optional[int], rng_state: Optional[dict]) -> tuple[str, list]:
    meta = dict(model.meta)
    if epoch is not None:
        meta["epoch"] = str(int(epoch))
    if rng_state is not None:
        meta["rng_state"] = json.dumps(rng_state, sort_keys=True)
    meta.setdefault("epoch", "0")
    meta.setdefault("rng_state", "null")

    lines = ["format_version=1"]
    lines += [f"config.{k}={v}" for k, v in model.config.to_items()]
    lines += [f"{k}={meta[k]}" for k in sorted(meta)]
    tensors = list(model.state().items())
    lines.append(f"param_count={len(tensors)}")
    offset = 0
    for i, (name, t) in enumerate(tensors):
        shape = ",".join(str(s) for s in t.shape)
        lines.append(f"param.{i}={name};{shape};{offset}")
        offset += t.size
    lines.append(f"blob_floats={offset}")
    return "\n".join(lines) + "\n", tensors


def save_checkpoint(model: GsnModel, path: Union[str, os.PathLike], epoch: Optional[int] = None,
                    rng_state: Optional[dict] = None) -> None:
    """Write ``model`` atomically; parameters and running stats go out as little-endian float32."""
    header, tensors = _header_text(model, epoch, rng_state)
    hbytes = header.encode("utf-8")
    blob = b"".join(np.ascontiguousarray(t.data, dtype="<f4").tobytes() for _, t in tensors)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(blob)
    os.replace(tmp, path)


def read_checkpoint_header(path) -> dict[str, str]:
    with open(path, "rb") as fh:
        raw = fh.read()
    return _parse(raw)[0]


def _parse(raw: bytes) -> tuple[dict[str, str], bytes]:
    if raw[:4] != MAGIC:
        raise FormatError(f"magic: expected {MAGIC!r}, found {raw[:4]!r}")
    if len(raw) < 8:
        raise FormatError("header_length: file ends before the header length field")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if 8 + hlen > len(raw):
        raise FormatError(f"header_length: declares {hlen} bytes, only {len(raw) - 8} present")
    try:
        text = raw[8:8 + hlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"header: not valid UTF-8 ({exc})") from None
    header = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"header: malformed line {line!r}")
        header[key] = value
    return header, raw[8 + hlen:]


def load_checkpoint(path, expected_config: Optional[GsnConfig] = None) -> GsnModel:
    """Rebuild a model from ``path``.

    If ``expected_config`` is given, every architecture field must match the
    stored config, otherwise ``ConfigConflictError`` names the offenders.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    header, blob = _parse(raw)
    items = {k[len("config."):]: v for k, v in header.items() if k.startswith("config.")}
    try:
        config = GsnConfig.from_items(items)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"config: {exc}") from None
    if expected_config is not None:
        conflicts = [f.name for f in dataclasses.fields(GsnConfig)
                     if getattr(config, f.name) != getattr(expected_config, f.name)]
        if conflicts:
            detail = ", ".join(f"{n}: stored {getattr(config, n)!r} != requested {getattr(expected_config, n)!r}"
                               for n in conflicts)
            raise ConfigConflictError(f"checkpoint config conflict ({detail})")

    model = GsnModel(config, seed=None)
    tensors = list(model.state().items())
    try:
        count = int(header["param_count"])
    except (KeyError, ValueError):
        raise FormatError("param_count: missing or not an integer") from None
    if count != len(tensors):
        raise FormatError(f"param_count: header lists {count}, model has {len(tensors)}")

    total = 0
    for i, (name, t) in enumerate(tensors):
        entry = header.get(f"param.{i}")
        if entry is None:
            raise FormatError(f"param.{i}: missing from shape table")
        try:
            stored_name, shape_txt, off_txt = entry.split(";")
            shape = tuple(int(s) for s in shape_txt.split(",") if s)
            offset = int(off_txt)
        except ValueError:
            raise FormatError(f"param.{i}: malformed entry {entry!r}") from None
        if stored_name != name or shape != t.shape or offset != total:
            raise FormatError(f"param.{i}: shape table has {stored_name} {shape} @ {offset}, "
                              f"model expects {name} {t.shape} @ {total}")
        total += t.size
    if header.get("blob_floats") != str(total):
        raise FormatError(f"blob_floats: header says {header.get('blob_floats')}, table sums to {total}")
    if len(blob) != 4 * total:
        raise FormatError(f"blob: expected {4 * total} bytes, found {len(blob)} (truncated or padded)")

    values = np.frombuffer(blob, dtype="<f4")
    offset = 0
    for _, t in tensors:
        t.data[...] = values[offset:offset + t.size].reshape(t.shape)
        offset += t.size
    model.meta = {k: v for k, v in header.items()
                  if not k.startswith(("config.", "param.")) and k not in ("format_version", "param_count",
                                                                           "blob_floats")}
    return model
