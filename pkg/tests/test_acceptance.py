"""Acceptance criteria, one PASS/FAIL line each.

The lines are printed as the tests run and repeated in the
"acceptance criteria" section of the pytest summary.  The desk-scale
training fixture trains the four ablation models once (about 12-16 minutes
on one core); the learning and ablation criteria both read from it.
"""

import filecmp
import itertools
import math
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import scipy.stats

from cdc_oracle import cdc_eq1_loop
from gsniqa import cli
from gsniqa import tensor as T
from gsniqa.data import load_manifest, synth_corpus
from gsniqa.gradsuite import TOLERANCE, run_suite
from gsniqa.layers import CDCConv2d
from gsniqa.losses import list_loss, pair_loss
from gsniqa.metrics import krcc, main_score, plcc, psnr, srcc, ssim
from gsniqa.model import GsnConfig, GsnModel, load_checkpoint, save_checkpoint
from gsniqa.tensor import Tensor
from gsniqa.train import ABLATION_GRID, evaluate, model_scorer, train, within_type_srcc

DESK_CFG = Path(__file__).resolve().parents[1] / "configs" / "desk.cfg"


def cdc_layer(w, b, theta):
    o, c, k, _ = w.shape
    layer = CDCConv2d(c, o, k, theta=theta)
    layer.weight.data[...] = w
    layer.bias.data[...] = b
    return layer


def test_cdc_oracle_equivalence(verdict):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst, theta0_bitwise = 0.0, True
    for case in range(1000):
        c, o = (int(v) for v in rng.integers(1, 4, size=2))
        k = int(rng.choice([1, 3, 5]))
        h, w_ = (int(v) for v in rng.integers(k, 8, size=2))
        theta = float(rng.uniform(0, 1)) if case % 10 else 0.0
        x = rng.standard_normal((int(rng.integers(1, 3)), c, h, w_))
        w = rng.standard_normal((o, c, k, k))
        b = rng.standard_normal(o)
        got = cdc_layer(w, b, theta)(Tensor(x)).data
        worst = max(worst, float(np.max(np.abs(got - cdc_eq1_loop(x, w, b, theta, k // 2)))))
        if theta == 0.0:
            plain = T.conv2d(Tensor(x), Tensor(w), Tensor(b), 1, k // 2).data
            theta0_bitwise &= bool(np.array_equal(got, plain))
    elapsed = time.perf_counter() - start
    verdict("CDC oracle equivalence", worst <= 1e-10 and theta0_bitwise and elapsed < 60,
            f"max abs err {worst:.2e} (<= 1e-10) over 1000 cases, theta=0 bitwise={theta0_bitwise}, {elapsed:.1f}s")


def test_gradient_suite(verdict):
    start = time.perf_counter()
    results = run_suite(seed=0)
    elapsed = time.perf_counter() - start
    worst_name = max(results, key=results.get)
    ok = all(v <= TOLERANCE for v in results.values()) and elapsed < 300
    verdict("Gradient suite", ok, f"{len(results)} components, worst {worst_name} {results[worst_name]:.2e} "
                                  f"(<= 1e-5), {elapsed:.0f}s")


def test_loss_identities(verdict):
    rng = np.random.default_rng(0)
    shift = max(list_loss(q, q + c).item() for q, c in
                ((rng.standard_normal(int(rng.integers(2, 33))), rng.uniform(-10, 10)) for _ in range(100)))
    nonneg = min(list_loss(rng.standard_normal(8), rng.standard_normal(8)).item() for _ in range(100))
    affine = 0.0
    for _ in range(100):
        q = rng.standard_normal(int(rng.integers(2, 33)))
        affine = max(affine, pair_loss(q, rng.uniform(0.1, 10) * q + rng.uniform(-10, 10)).item())
    pair_val = pair_loss([0.0, 1.0], [1.0, 0.0]).item()
    list_val = list_loss([0.0, 0.0], [0.0, math.log(3.0)]).item()
    ok = (abs(shift) <= 1e-12 and nonneg >= 0.0 and affine <= 1e-10 and abs(pair_val - 2.0) <= 1e-7
          and abs(list_val - 0.13081) <= 1e-5)
    verdict("Loss identities", ok, f"shift {shift:.1e}, min list {nonneg:.2e}, affine {affine:.1e}, "
                                   f"pair {pair_val:.6f}, list {list_val:.5f}")


def brute_tau_b(x, y):
    s = n0 = tx = ty = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        a, b = np.sign(x[i] - x[j]), np.sign(y[i] - y[j])
        s += a * b
        n0 += 1
        tx += a == 0
        ty += b == 0
    return s / math.sqrt((n0 - tx) * (n0 - ty))


def test_metric_oracles(verdict):
    rng = np.random.default_rng(0)
    sr = max(abs(srcc(x, y) - np.corrcoef(scipy.stats.rankdata(x), scipy.stats.rankdata(y))[0, 1])
             for x, y in (rng.integers(0, 20, size=(2, int(rng.integers(3, 60)))) for _ in range(1000)))
    kr_exact = True
    for n in range(3, 51):
        x, y = rng.integers(0, 8, size=(2, n))
        if np.ptp(x) and np.ptp(y):
            kr_exact &= krcc(x, y) == brute_tau_b(x, y)
    x = rng.standard_normal(50)
    lin = plcc(x, 2 * x + 1)
    ms = main_score(0.827, 0.815)
    ok = sr <= 1e-12 and kr_exact and lin == 1.0 and abs(ms - 1.642) <= 1e-12
    verdict("Metric oracles", ok, f"srcc dev {sr:.1e}, krcc exact={kr_exact}, plcc(2x+1)={lin!r}, main {ms:.3f}")


@pytest.fixture(scope="module")
def corpus8(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus8")
    synth_corpus(0, 8, out)
    return load_manifest(out / "manifest.csv")


def test_baseline_sanity(verdict, corpus8):
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(48, 48, 3))
    s = ssim(x, x)
    p = psnr(np.full((16, 16, 3), 0.25), np.full((16, 16, 3), 0.25 + 1 / 255))
    monotone = True
    for ref in sorted({r.ref_path for r in corpus8.records}):
        rows = sorted((r for r in corpus8.records if r.ref_path == ref and r.dist_type == "white_noise"),
                      key=lambda r: r.level)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vals = [psnr(corpus8.image(ref), corpus8.image(r.dist_path)) for r in rows]
        monotone &= all(a > b for a, b in zip(vals, vals[1:]))
    ok = abs(s - 1) <= 1e-12 and abs(p - 48.1308) <= 1e-3 and monotone
    verdict("Baseline sanity", ok, f"ssim(x,x)={s:.15f}, psnr 1/255 = {p:.4f} dB, noise PSNR strictly decreasing={monotone}")


def test_shape_contract(verdict):
    seen = {}
    for p, width in ((192, 1.0), (288, 0.125)):
        model = GsnModel(GsnConfig(patch_size=p, width_scale=width), seed=0)
        model.eval()
        head_forward = model.head.forward
        model.head.forward = lambda x, p=p, f=head_forward: (seen.__setitem__(p, x.shape[1]), f(x))[1]
        model(np.zeros((1, 3, p, p), dtype=np.float32), np.zeros((1, 3, p, p), dtype=np.float32))
    verdict("Shape contract", seen == {192: 576, 288: 1296},
            f"head input P=192 -> {seen.get(192)}, P=288 -> {seen.get(288)} (expected 576, 1296)")


@pytest.fixture(scope="module")
def desk_runs(corpus8, tmp_path_factory):
    """Train the four ablation models at desk scale; returns per-model (report, within-type SRCC, seconds)."""
    args = cli.build_parser().parse_args(["--config", str(DESK_CFG), "train", "--manifest", "unused", "--out", "unused"])
    base = cli.build_train_config(args)
    out = tmp_path_factory.mktemp("desk")
    runs = {}
    for name, theta, use_kl in ABLATION_GRID:
        cfg = replace(base, theta=theta, use_kl=use_kl)
        start = time.perf_counter()
        ckpt = train(cfg, corpus8, out / name)
        seconds = time.perf_counter() - start
        rep, preds = evaluate(model_scorer(load_checkpoint(ckpt, cfg.model_config())), corpus8, "test")
        runs[name] = (rep, within_type_srcc(corpus8.split("test"), preds), seconds)
    return runs


def test_desk_scale_learning(verdict, desk_runs):
    rep, within, seconds = desk_runs["M4"]
    ok = within >= 0.85 and rep.main_score >= 1.2 and seconds <= 20 * 60
    verdict("Desk-scale learning", ok, f"GSN test within-type SRCC {within:.3f} (>= 0.85), main {rep.main_score:.3f} "
                                       f"(>= 1.2), trained in {seconds / 60:.1f} min (<= 20)")


def test_ablation_direction(verdict, desk_runs):
    ms = {name: run[0].main_score for name, run in desk_runs.items()}
    table = ", ".join(f"{k} {v:.3f}" for k, v in ms.items())
    verdict("Ablation direction", ms["M4"] >= ms["M1"], f"MS(M4) >= MS(M1); {table}")


def test_determinism(verdict, tmp_path):
    for tag in ("a", "b"):
        assert cli.main(["synth", "--seed", "3", "--refs", "4", "--out", str(tmp_path / tag / "data")]) == 0
        manifest = str(tmp_path / tag / "data" / "manifest.csv")
        assert cli.main(["train", "--manifest", manifest, "--out", str(tmp_path / tag / "run"), "--patch", "24",
                         "--width-scale", "0.125", "--epochs", "2", "--batch-size", "16"]) == 0
        assert cli.main(["eval", "--manifest", manifest, "--ckpt", str(tmp_path / tag / "run" / "best.ckpt"),
                         "--out", str(tmp_path / tag / "report.csv"),
                         "--scatter", str(tmp_path / tag / "scatter.csv")]) == 0
    files = ["data/manifest.csv", "data/refs/ref_002.ppm", "data/dist/ref_001_block_quantization_4.ppm",
             "run/train_log.csv", "run/best.ckpt", "run/best_val_predictions.csv", "report.csv", "scatter.csv"]
    differing = [f for f in files if not filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False)]
    same = not differing

    model = load_checkpoint(tmp_path / "a" / "run" / "best.ckpt")
    save_checkpoint(model, tmp_path / "resaved.ckpt")
    reloaded = load_checkpoint(tmp_path / "resaved.ckpt")
    bitwise = all(np.array_equal(t1.data, t2.data) for t1, t2 in zip(model.state().values(), reloaded.state().values()))
    verdict("Determinism", same and bitwise,
            f"{len(files) - len(differing)}/{len(files)} rerun outputs byte-identical"
            f"{' (differ: ' + ', '.join(differing) + ')' if differing else ''}, checkpoint round trip bitwise={bitwise}")
