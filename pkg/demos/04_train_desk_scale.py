"""Train the network on the synthetic corpus at desk scale and score a few pairs.

A reduced run (width x1/4, 32x32 patches) takes a few minutes on one core.
Pass a small epoch count as argv[1] for a quicker look; the acceptance run
uses 30.
"""

import logging
import sys
import tempfile
from pathlib import Path

from gsniqa.data import load_manifest, synth_corpus
from gsniqa.model import load_checkpoint, predict_image
from gsniqa.train import TrainConfig, evaluate, model_scorer, train, within_type_srcc

logging.basicConfig(level=logging.INFO, format="%(message)s")
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10

work = Path(tempfile.mkdtemp(prefix="gsn_demo_"))
synth_corpus(seed=0, n_refs=8, out_dir=work / "data")
manifest = load_manifest(work / "data" / "manifest.csv")

# Training crops aligned random patches from each pair, flips both halves
# together, and keeps the checkpoint with the best validation PLCC + SRCC.
cfg = TrainConfig(patch_size=32, width_scale=0.25, epochs=epochs, eval_every=5)
ckpt = train(cfg, manifest, work / "run")
print("log:", (work / "run" / "train_log.csv").read_text())

# Inference averages the four corner patches and the centre patch.
model = load_checkpoint(ckpt)
rep, preds = evaluate(model_scorer(model), manifest, "test")
print(rep)
print("mean within-family srcc:", within_type_srcc(manifest.split("test"), preds))

# One reference against its mildest and harshest noise.
test = manifest.split("test")
ref = test[0].ref_path
for level in (1, 5):
    row = next(r for r in test if r.dist_type == "white_noise" and r.level == level)
    score = predict_image(model, manifest.image(ref), manifest.image(row.dist_path))
    print(f"white noise level {level}: mos {row.mos:.0f}, predicted {score:.3f}")
print("artifacts in", work)
