"""Training loop, Adam with decoupled weight decay, evaluation and the M1-M4 ablation grid."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Batch, DatasetManifest, PatchSampler, Record, batch_iter
from .errors import ContractError, NumericError
from .losses import LossConfig, total_loss
from .metrics import MetricReport, report, srcc
from .model import GsnConfig, GsnModel, load_checkpoint, predict_image, save_checkpoint
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 32
    epochs: int = 300
    seed: int = 0
    optimizer: str = "adam"
    eval_every: int = 1
    patch_size: int = 192
    theta: float = 0.7
    use_kl: bool = True
    width_scale: float = 1.0
    # MOS is divided by this before it reaches the loss (MOS proxy -> about [0, 1])
    mos_scale: float = 100.0
    dtype: str = "float32"
    lookahead_k: int = 6
    lookahead_alpha: float = 0.5

    def __post_init__(self):
        if self.lr < 0:
            raise ContractError("lr must be non-negative")
        if self.batch_size < 2:
            raise ContractError("batch_size must be >= 2 (score normalisation needs N >= 2)")
        if self.optimizer not in ("adam", "adam_lookahead"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")
        if self.eval_every < 1:
            raise ContractError("eval_every must be >= 1")

    def model_config(self) -> GsnConfig:
        return GsnConfig(patch_size=self.patch_size, theta=self.theta, use_kl_loss=self.use_kl,
                         width_scale=self.width_scale, dtype=self.dtype)

    def loss_config(self) -> LossConfig:
        return LossConfig(use_kl=self.use_kl)


class Adam:
    """Adam with bias correction and decoupled weight decay.

    Each step first shrinks every parameter by ``lr * weight_decay * p`` and
    then applies the usual moment-based update.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.dtype, copy=False)
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Lookahead:
    """Every ``k`` inner steps pull slow weights toward the fast ones by ``alpha`` and reset."""

    def __init__(self, inner: Adam, k: int = 6, alpha: float = 0.5):
        self.inner = inner
        self.k = k
        self.alpha = alpha
        self.slow = [p.data.copy() for p in inner.params]

    @property
    def params(self):
        return self.inner.params

    def step(self) -> None:
        self.inner.step()
        if self.inner.t % self.k == 0:
            for p, s in zip(self.inner.params, self.slow):
                s += self.alpha * (p.data - s)
                p.data[...] = s

    def zero_grad(self) -> None:
        self.inner.zero_grad()


def make_optimizer(model: GsnModel, cfg: TrainConfig):
    opt = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    if cfg.optimizer == "adam_lookahead":
        return Lookahead(opt, cfg.lookahead_k, cfg.lookahead_alpha)
    return opt


def step(model: GsnModel, batch: Batch, loss_cfg: LossConfig, optimizer, mos_scale: float = 1.0) -> float:
    """One forward/backward/update on ``batch``; gradients are cleared afterwards."""
    model.train()
    scores = model(batch.ref, batch.dist)
    target = Tensor(np.asarray(batch.mos, dtype=scores.dtype) / mos_scale)
    where = f"batch records {list(map(int, batch.indices))}"
    try:
        loss = total_loss(target, scores, loss_cfg)
    except NumericError as exc:
        raise NumericError(f"{exc} on {where}") from None
    value = loss.item()
    if not np.isfinite(value):
        optimizer.zero_grad()
        raise NumericError(f"non-finite loss {value} on {where}")
    loss.backward()
    optimizer.step()
    optimizer.zero_grad()
    return value


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

Scorer = Callable[[np.ndarray, np.ndarray], float]


def model_scorer(model: GsnModel) -> Scorer:
    return lambda ref, dist: predict_image(model, ref, dist)


def score_split(scorer: Scorer, manifest: DatasetManifest, split: str) -> tuple[list[Record], np.ndarray]:
    records = manifest.split(split)
    if not records:
        raise ContractError(f"split {split!r} is empty")
    preds = np.array([scorer(manifest.image(r.ref_path), manifest.image(r.dist_path)) for r in records])
    return records, preds


def evaluate(scorer: Scorer, manifest: DatasetManifest, split: str) -> tuple[MetricReport, np.ndarray]:
    records, preds = score_split(scorer, manifest, split)
    return report(preds, [r.mos for r in records]), preds


def within_type_srcc(records: Sequence[Record], predictions) -> float:
    """Mean SRCC between prediction and MOS inside each (reference, distortion type) group."""
    groups: dict[tuple[str, str], list[int]] = {}
    for i, r in enumerate(records):
        groups.setdefault((r.ref_path, r.dist_type), []).append(i)
    predictions = np.asarray(predictions)
    vals = [srcc(predictions[idx], [records[i].mos for i in idx]) for idx in groups.values() if len(idx) > 1]
    return float(np.mean(vals))


def write_predictions(path, records: Sequence[Record], predictions) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mos", "predicted"])
        for r, p in zip(records, predictions):
            w.writerow([repr(float(r.mos)), repr(float(p))])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    step: int = 0
    best_main: float = -np.inf
    best_epoch: int = -1
    history: list = field(default_factory=list)


LOG_HEADER = ("epoch", "train_loss", "val_plcc", "val_srcc", "val_main")


def train(config: TrainConfig, manifest: DatasetManifest, out_dir) -> Path:
    """Train on the ``train`` split, keep the checkpoint with the best validation main score.

    Writes ``train_log.csv``, ``best.ckpt`` and ``best_val_predictions.csv`` to
    ``out_dir`` and returns the checkpoint path.
    """
    if not manifest.split("train") or not manifest.split("valid"):
        raise ContractError("manifest needs non-empty train and valid splits")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "best.ckpt"

    model = GsnModel(config.model_config(), seed=config.seed)
    optimizer = make_optimizer(model, config)
    loss_cfg = config.loss_config()
    sampler = PatchSampler("train_random", config.patch_size, seed=config.seed)
    state = TrainState()
    seeds = np.random.SeedSequence(config.seed).spawn(config.epochs)

    log_path = out / "train_log.csv"
    with open(log_path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(LOG_HEADER)

    for epoch in range(1, config.epochs + 1):
        epoch_seed = int(seeds[epoch - 1].generate_state(1)[0])
        losses = [step(model, b, loss_cfg, optimizer, config.mos_scale)
                  for b in batch_iter(manifest, "train", config.batch_size, sampler, epoch_seed)]
        state.step += len(losses)
        if epoch % config.eval_every and epoch != config.epochs:
            continue
        rep, preds = evaluate(model_scorer(model), manifest, "valid")
        row = (epoch, float(np.mean(losses)), rep.plcc, rep.srcc, rep.main_score)
        state.history.append(row)
        with open(log_path, "a", encoding="utf-8", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow([row[0]] + [repr(v) for v in row[1:]])
        logger.info("epoch %d loss %.5f val plcc %.4f srcc %.4f main %.4f", *row)
        if rep.main_score > state.best_main or state.best_epoch < 0:
            state.best_main = rep.main_score
            state.best_epoch = epoch
            save_checkpoint(model, ckpt, epoch=epoch, rng_state=sampler.rng.bit_generator.state)
            write_predictions(out / "best_val_predictions.csv", manifest.split("valid"), preds)
    return ckpt


ABLATION_GRID = (
    ("M1", 0.0, False),
    ("M2", 0.0, True),
    ("M3", 0.7, False),
    ("M4", 0.7, True),
)
ABLATION_HEADER = ("model", "conv_type", "loss", "plcc", "srcc", "ms")


def run_ablation(config: TrainConfig, manifest: DatasetManifest, out_dir) -> dict[str, MetricReport]:
    """Train the CNN/CDC x MSE/MSE+KL grid at one seed and score each on the test split."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results: dict[str, MetricReport] = {}
    rows = []
    for name, theta, use_kl in ABLATION_GRID:
        cfg = replace(config, theta=theta, use_kl=use_kl)
        ckpt = train(cfg, manifest, out / name)
        model = load_checkpoint(ckpt, expected_config=cfg.model_config())
        rep, preds = evaluate(model_scorer(model), manifest, "test")
        write_predictions(out / name / "test_predictions.csv", manifest.split("test"), preds)
        results[name] = rep
        rows.append((name, "CDC" if theta > 0 else "CNN", "MSE+KL" if use_kl else "MSE",
                     rep.plcc, rep.srcc, rep.main_score))
    with open(out / "ablation.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_HEADER)
        for r in rows:
            w.writerow(list(r[:3]) + [repr(v) for v in r[3:]])
    return results
