"""Command line entry point: ``gsniqa {synth,train,eval,score,gradcheck,ablate}``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or input error.
Flags override values from ``--config`` (flat ``key=value`` file), which
override built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from .data import load_manifest, read_image, synth_corpus
from .errors import ConfigConflictError, ContractError, FormatError, InputError, NumericError
from .gradsuite import TOLERANCE, run_suite
from .metrics import report
from .model import load_checkpoint, predict_image
from .train import Scorer, TrainConfig, model_scorer, run_ablation, score_split, train

logger = logging.getLogger("gsniqa")

USAGE_ERRORS = (ContractError, InputError, FormatError, ConfigConflictError, FileNotFoundError,
                IsADirectoryError, PermissionError, OSError)

# flag dest -> TrainConfig field
TRAIN_FLAGS = {
    "theta": "theta", "patch": "patch_size", "width_scale": "width_scale", "epochs": "epochs",
    "seed": "seed", "batch_size": "batch_size", "lr": "lr", "weight_decay": "weight_decay",
    "optimizer": "optimizer", "eval_every": "eval_every", "mos_scale": "mos_scale", "dtype": "dtype",
}


def read_config_file(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(field: dataclasses.Field, raw):
    if isinstance(raw, str):
        if field.type in ("bool", bool):
            return raw.lower() in ("1", "true", "yes")
        if field.type in ("int", int):
            return int(raw)
        if field.type in ("float", float):
            return float(raw)
    return raw


def build_train_config(args: argparse.Namespace) -> TrainConfig:
    overlay = read_config_file(args.config) if getattr(args, "config", None) else {}
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values = {}
    for name, raw in overlay.items():
        target = TRAIN_FLAGS.get(name, name)
        if target == "no_kl":
            values["use_kl"] = not _coerce(fields["use_kl"], raw)
        elif target in fields:
            values[target] = _coerce(fields[target], raw)
        else:
            raise ContractError(f"unknown config key {name!r}")
    for dest, target in TRAIN_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[target] = v
    if getattr(args, "no_kl", False):
        values["use_kl"] = False
    return TrainConfig(**values)


def load_scorer(ckpt) -> Scorer:
    return model_scorer(load_checkpoint(ckpt))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    overlay = read_config_file(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else int(overlay.get("seed", 0))
    refs = args.refs if args.refs is not None else int(overlay.get("refs", 8))
    manifest = synth_corpus(seed, refs, args.out)
    print(len(manifest.records))
    return 0


def cmd_train(args) -> int:
    cfg = build_train_config(args)
    manifest = load_manifest(args.manifest)
    manifest.validate()
    ckpt = train(cfg, manifest, args.out)
    with open(Path(args.out) / "train_log.csv", encoding="utf-8") as fh:
        last = list(csv.DictReader(fh))[-1]
    print(ckpt)
    print(f"val_plcc={float(last['val_plcc']):.6f} val_srcc={float(last['val_srcc']):.6f} "
          f"val_main={float(last['val_main']):.6f}")
    return 0


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    scorer = load_scorer(args.ckpt)
    records, preds = score_split(scorer, manifest, args.split)
    rep = report(preds, [r.mos for r in records])
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plcc", "srcc", "krcc", "main_score", "n"])
        w.writerow([repr(rep.plcc), repr(rep.srcc), repr(rep.krcc), repr(rep.main_score), rep.n])
    if args.scatter:
        with open(args.scatter, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mos", "predicted"])
            for r, p in zip(records, preds):
                w.writerow([repr(float(r.mos)), repr(float(p))])
    print(f"plcc={rep.plcc:.6f} srcc={rep.srcc:.6f} krcc={rep.krcc:.6f} main_score={rep.main_score:.6f} n={rep.n}")
    return 0


def cmd_score(args) -> int:
    model = load_checkpoint(args.ckpt)
    value = predict_image(model, read_image(args.ref), read_image(args.dist))
    sys.stdout.write(f"{value!r}\n")
    return 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    start = time.perf_counter()
    results = run_suite(seed=seed, scale=args.scale)
    failed = [name for name, err in results.items() if not err <= TOLERANCE]
    for name, err in results.items():
        status = "ok" if name not in failed else "FAIL"
        print(f"{name:<22s} max_rel_err={err:.3e} {status}")
    print(f"elapsed {time.perf_counter() - start:.1f}s", file=sys.stderr)
    if failed:
        print("gradient check failed: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def cmd_ablate(args) -> int:
    cfg = build_train_config(args)
    manifest = load_manifest(args.manifest)
    manifest.validate()
    results = run_ablation(cfg, manifest, args.out)
    print("model,conv_type,loss,plcc,srcc,ms")
    for name, rep in results.items():
        conv = "CNN" if name in ("M1", "M2") else "CDC"
        loss = "MSE" if name in ("M1", "M3") else "MSE+KL"
        print(f"{name},{conv},{loss},{rep.plcc:.6f},{rep.srcc:.6f},{rep.main_score:.6f}")
    return 0


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--theta", type=float)
    p.add_argument("--no-kl", action="store_true", dest="no_kl")
    p.add_argument("--patch", type=int)
    p.add_argument("--width-scale", type=float, dest="width_scale")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--optimizer", choices=("adam", "adam_lookahead"))
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--mos-scale", type=float, dest="mos_scale")
    p.add_argument("--dtype", choices=("float32", "float64"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsniqa", description="Gradient siamese network for full-reference IQA")
    parser.add_argument("--config", help="flat key=value file; explicit flags take precedence")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic distortion corpus")
    p.add_argument("--seed", type=int)
    p.add_argument("--refs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scatter")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score one reference/distorted pair")
    p.add_argument("--ref", required=True)
    p.add_argument("--dist", required=True)
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--scale", default="small", choices=("small", "full"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and score the M1-M4 grid")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
