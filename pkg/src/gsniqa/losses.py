"""Pair (normalised MSE) and list (softmax KL) losses on a batch of scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericError
from .tensor import Tensor


@dataclass(frozen=True)
class LossConfig:
    q: float = 2.0
    alpha: float = 0.1
    beta: float = 0.1
    eps: float = 1e-8
    use_kl: bool = True
    # KL(W_hat || W) as written; False gives the conventional KL(W || W_hat)
    predicted_outside_log: bool = True
    # numerator/denominator as printed (norm / deviation); diverges near the mean
    literal_normalization: bool = False

    def __post_init__(self):
        if self.q < 1:
            raise ContractError(f"q must be >= 1, got {self.q}")


def _vector(v, like: Tensor | None = None) -> Tensor:
    if not isinstance(v, Tensor):
        dtype = like.dtype if like is not None else np.float64
        v = Tensor(np.asarray(v, dtype=dtype))
    if v.ndim != 1:
        raise ContractError(f"score vectors must be 1-d, got shape {v.shape}")
    return v


def _check_batch(target: Tensor, predicted: Tensor) -> None:
    if target.shape != predicted.shape:
        raise ContractError(f"target {target.shape} and prediction {predicted.shape} differ in length")
    if not (np.all(np.isfinite(target.data)) and np.all(np.isfinite(predicted.data))):
        raise NumericError("score batch contains non-finite values")


def normalize_scores(v, q: float = 2.0, eps: float = 1e-8, literal: bool = False) -> Tensor:
    """Centre ``v`` and divide by the q-norm of the deviations (plus ``eps``).

    A constant batch maps to the zero vector.  ``literal=True`` returns the
    inverted fraction ``norm / deviation`` instead; it is only here for
    comparison experiments and is undefined for constant batches.
    """
    v = _vector(v)
    n = v.shape[0]
    if n < 2:
        raise ContractError(f"score normalisation needs N >= 2, got {n}")
    dev = v - v.mean()
    norm = T.lp_norm(dev, q)
    if literal:
        return norm / dev
    return dev / (norm + eps)


def pair_loss(target, predicted, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean squared difference of the normalised score vectors."""
    predicted = _vector(predicted)
    target = _vector(target, predicted)
    _check_batch(target, predicted)
    s_hat = normalize_scores(predicted, cfg.q, cfg.eps, cfg.literal_normalization)
    s = normalize_scores(target, cfg.q, cfg.eps, cfg.literal_normalization)
    return ((s_hat - s) ** 2).mean()


def softmax_weights(v) -> Tensor:
    return T.softmax(_vector(v), axis=0)


def list_loss(target, predicted, cfg: LossConfig = LossConfig()) -> Tensor:
    """KL divergence between softmax weights of predictions and targets.

    With the default orientation the predicted weights multiply the log
    ratio ``log(W_hat / W)``.  Log-softmax keeps the ratio finite for any
    score spread.
    """
    predicted = _vector(predicted)
    target = _vector(target, predicted)
    _check_batch(target, predicted)
    log_w_hat = T.log_softmax(predicted, axis=0)
    log_w = T.log_softmax(target, axis=0)
    if cfg.predicted_outside_log:
        return (T.exp(log_w_hat) * (log_w_hat - log_w)).sum()
    return (T.exp(log_w) * (log_w - log_w_hat)).sum()


def mse_loss(target, predicted) -> Tensor:
    predicted = _vector(predicted)
    target = _vector(target, predicted)
    _check_batch(target, predicted)
    return ((predicted - target) ** 2).mean()


def total_loss(target, predicted, cfg: LossConfig = LossConfig()) -> Tensor:
    """``alpha * pair + beta * list``.

    With ``use_kl=False`` the list term is dropped and the pair term becomes
    plain un-normalised MSE, still weighted by ``alpha``.
    """
    if not cfg.use_kl:
        return cfg.alpha * mse_loss(target, predicted)
    return cfg.alpha * pair_loss(target, predicted, cfg) + cfg.beta * list_loss(target, predicted, cfg)
