"""How the training losses and the evaluation statistics behave on small vectors."""

import math

import numpy as np

from gsniqa.losses import LossConfig, list_loss, normalize_scores, pair_loss, total_loss
from gsniqa.metrics import krcc, plcc, report, srcc

mos = np.array([82.0, 64.0, 46.0, 28.0, 10.0])

# Scores are centred and divided by their 2-norm, so the pair loss only sees
# the shape of the score vector, not its offset or scale.
print("normalised MOS:", np.round(normalize_scores(mos).data, 4))
print("pair loss vs 0.01 * mos + 3:", pair_loss(mos, 0.01 * mos + 3).item())

# Reversing the order is the worst case for two scores.
print("pair loss, reversed pair:", pair_loss([0.0, 1.0], [1.0, 0.0]).item())

# The list loss compares softmax weights with a KL divergence.  Adding a
# constant to every score leaves the softmax unchanged.
print("list loss, shifted by 7:", list_loss(mos / 100, mos / 100 + 7).item())
print("list loss, worked pair:", round(list_loss([0.0, 0.0], [0.0, math.log(3.0)]).item(), 5))

# The training objective weights both terms by 0.1.  Switching the list term
# off falls back to plain squared error on the raw scores.
pred = np.array([0.8, 0.7, 0.5, 0.2, 0.1])
print("total loss:", total_loss(mos / 100, pred).item())
print("total loss without KL:", total_loss(mos / 100, pred, LossConfig(use_kl=False)).item())

# Evaluation: linear, rank and pair-order agreement, plus their headline sum.
noisy = mos + np.array([5.0, -12.0, 3.0, 20.0, -1.0])
print(f"plcc {plcc(noisy, mos):.3f}  srcc {srcc(noisy, mos):.3f}  krcc {krcc(noisy, mos):.3f}")
print(report(noisy, mos))
