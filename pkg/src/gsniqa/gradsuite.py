"""Finite-difference checks over every layer type and a reduced full model.

Each check builds float64 inputs, projects the op output onto a fixed random
tensor (so no coordinate has a vanishing derivative by construction) and runs
``gradcheck``.  Points for ReLU and max-pool are drawn away from their kinks;
the full-model check rejects probes that cross one instead.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import tensor as T
from .layers import BatchNorm2d, CDCConv2d, Linear, SpatialAttention, init_parameters
from .losses import LossConfig, total_loss
from .model import GsnConfig, GsnModel
from .tensor import Tensor, gradcheck, gradcheck_report

TOLERANCE = 1e-5
EPS = 1e-5


def _projection(rng, shape) -> Callable[[Tensor], Tensor]:
    r = Tensor(rng.standard_normal(shape))
    return lambda y: (y * r).sum()


def _away_from_zero(rng, shape, margin=0.05) -> np.ndarray:
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def check_conv2d(rng) -> float:
    x = Tensor(rng.standard_normal((2, 3, 7, 6)))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)))
    b = Tensor(rng.standard_normal(4))
    proj = _projection(rng, (2, 4, 4, 3))
    return gradcheck(lambda x, w, b: proj(T.conv2d(x, w, b, stride=2, padding=1)), [x, w, b], EPS)


def check_cdc(rng) -> float:
    layer = CDCConv2d(3, 4, 3, theta=0.7)
    init_parameters(layer, rng)
    layer.bias.data[...] = rng.standard_normal(4)
    x = Tensor(rng.standard_normal((2, 3, 6, 6)))
    proj = _projection(rng, (2, 4, 6, 6))
    return gradcheck(lambda x, w, b: proj(layer(x)), [x, layer.weight, layer.bias], EPS)


def check_conv_relu(rng) -> float:
    w = Tensor(rng.standard_normal((4, 3, 3, 3)))
    # keep pre-activations clear of zero so +-eps never crosses the kink
    while True:
        x = Tensor(rng.standard_normal((1, 3, 5, 5)))
        pre = T.conv2d(x, w, padding=1).data
        if np.min(np.abs(pre)) > 1e-3:
            break
    proj = _projection(rng, (1, 4, 5, 5))
    return gradcheck(lambda x, w: proj(T.relu(T.conv2d(x, w, padding=1))), [x, w], EPS)


def check_batchnorm(rng) -> float:
    bn = BatchNorm2d(3)
    bn.gamma.data[...] = rng.standard_normal(3)
    bn.beta.data[...] = rng.standard_normal(3)
    x = Tensor(rng.standard_normal((2, 3, 4, 5)))
    proj = _projection(rng, (2, 3, 4, 5))
    return gradcheck(lambda x, g, b: proj(bn(x)), [x, bn.gamma, bn.beta], EPS)


def check_attention(rng) -> float:
    att = SpatialAttention(5)
    init_parameters(att, rng)
    att.gate.bias.data[...] = rng.standard_normal(1)
    # distinct channel values so the channel max has no near-ties
    x = Tensor(rng.permutation(2 * 4 * 6 * 6).reshape(2, 4, 6, 6) * 0.01 - 1.5)
    proj = _projection(rng, (2, 4, 6, 6))
    return gradcheck(lambda x, w, b: proj(att(x)), [x, att.gate.weight, att.gate.bias], EPS)


def check_max_pool(rng) -> float:
    x = Tensor(rng.permutation(2 * 3 * 7 * 7).reshape(2, 3, 7, 7) * 0.01)
    proj = _projection(rng, (2, 3, 4, 4))
    return gradcheck(lambda x: proj(T.max_pool2d(x, 3, 2, 1)), x, EPS)


def check_adaptive_pool(rng) -> float:
    x = Tensor(rng.standard_normal((2, 3, 7, 6)))
    proj = _projection(rng, (2, 3, 3, 4))
    return gradcheck(lambda x: proj(T.adaptive_avg_pool2d(x, 3, 4)), x, EPS)


def check_linear(rng) -> float:
    lin = Linear(5, 3)
    init_parameters(lin, rng)
    lin.bias.data[...] = rng.standard_normal(3)
    x = Tensor(rng.standard_normal((4, 5)))
    proj = _projection(rng, (4, 3))
    return gradcheck(lambda x, w, b: proj(lin(x)), [x, lin.weight, lin.bias], EPS)


def check_softmax(rng) -> float:
    x = Tensor(rng.standard_normal((3, 6)))
    proj = _projection(rng, (3, 6))
    return gradcheck(lambda x: proj(T.softmax(x, axis=1)), x, EPS)


def check_elementwise(rng) -> float:
    a = Tensor(_away_from_zero(rng, (3, 4)))
    b = Tensor(rng.uniform(0.5, 2.0, size=(1, 4)))
    proj = _projection(rng, (3, 4))

    def f(a, b):
        y = T.relu(a) * b + T.sigmoid(a) - a / b + T.tabs(a) ** 1.5 + T.exp(a * 0.3) + T.log(b)
        return proj(y)

    return gradcheck(f, [a, b], EPS)


def check_loss(rng) -> float:
    target = rng.standard_normal(6)
    pred = Tensor(rng.standard_normal(6))
    return gradcheck(lambda p: total_loss(target, p, LossConfig()), pred, EPS)


def reduced_model(seed: int = 0) -> GsnModel:
    cfg = GsnConfig(patch_size=24, width_scale=1 / 8, dtype="float64")
    return GsnModel(cfg, seed=seed)


# biases ahead of batch norm have identically zero gradient; their
# difference quotients are roundoff around 1e-12
ZERO_TOL = 1e-10


def check_full_model(rng, coords_per_tensor: int = 8) -> float:
    """Reduced GSN (P=24, width x1/8, batch 2) through the full training loss.

    Every parameter tensor and both input batches are probed at a seeded
    random subset of ``coords_per_tensor`` coordinates.  Probes that flip a
    ReLU mask or max selection are rejected; if more than a quarter of the
    probes are rejected the check fails outright.
    """
    model = reduced_model(int(rng.integers(1 << 31)))
    ref = Tensor(rng.uniform(0, 1, size=(2, 3, 24, 24)))
    dist = Tensor(rng.uniform(0, 1, size=(2, 3, 24, 24)))
    target = rng.standard_normal(2)
    points = [ref, dist] + model.parameters()
    coords = {id(p): rng.choice(p.size, size=min(coords_per_tensor, p.size), replace=False)
              for p in points}
    worst, checked, rejected = gradcheck_report(
        lambda r, d, *ps: total_loss(target, model(r, d)), points, EPS, coords=coords,
        skip_kinks=True, zero_tol=ZERO_TOL)
    if rejected > (checked + rejected) // 4:
        return float("inf")
    return worst


COMPONENTS: dict[str, Callable] = {
    "conv2d": check_conv2d,
    "conv2d+relu": check_conv_relu,
    "cdc": check_cdc,
    "batchnorm": check_batchnorm,
    "attention": check_attention,
    "max_pool2d": check_max_pool,
    "adaptive_avg_pool2d": check_adaptive_pool,
    "linear": check_linear,
    "softmax": check_softmax,
    "elementwise": check_elementwise,
    "loss": check_loss,
    "gsn_reduced": check_full_model,
}


def run_suite(seed: int = 0, scale: str = "small") -> dict[str, float]:
    """Max relative error per component; ``scale='full'`` probes more model coordinates."""
    results = {}
    for name, fn in COMPONENTS.items():
        rng = np.random.default_rng([seed, len(results)])
        if name == "gsn_reduced" and scale != "small":
            results[name] = fn(rng, coords_per_tensor=40)
        else:
            results[name] = fn(rng)
    return results
