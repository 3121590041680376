"""The run harness: flat configs, deterministic artifacts, ablation grids.

A run is described by a flat key-value text config. From it the harness
builds the benchmark and the model, trains, and writes two artifacts
into the output directory: a binary checkpoint that embeds the config
(so evaluation can rebuild the model from the file alone) and a metrics
log with one JSON record per epoch. Identical config and seed produce
byte-identical artifacts. The same machinery sweeps one axis at a time
for ablation tables. Everything here is also reachable from the shell:

    modfuse train  <cfg>            modfuse ablate <cfg> --axis fusion
    modfuse eval   <ckpt>           modfuse gradcheck
    modfuse report <metrics...>

with $MODFUSE_OUT_ROOT as the default artifact root.
"""

import json
import os
import tempfile

from modfuse.config import parse_config
from modfuse.runner import run_ablate, run_train

CONFIG = """
modalities = video, audio, depth
major = video
modality.video.feat_dim = 16
modality.video.seq_len = 8
modality.audio.feat_dim = 24
modality.audio.seq_len = 6
modality.depth.feat_dim = 48
modality.depth.seq_len = 4
bench.alphabet = 5
bench.train_size = 512
bench.test_size = 256
model.strategy = SelfGated
model.rank = 8
model.train_classifier = true
train.lr = 0.003
train.epochs = 3
train.batch_size = 32
train.seed = 1
run.name = demo
"""

config = parse_config(CONFIG)
print("=== canonical form and digest ===")
print("the parser normalizes to sorted canonical text; its sha256 is")
print("embedded in every checkpoint so stale configs cannot be replayed")
print(f"digest: {config.digest()[:16]}...")

with tempfile.TemporaryDirectory() as top:
    print()
    print("=== one training run ===")
    out = run_train(config, outdir=os.path.join(top, "demo"), log=print)

    print()
    print("=== the metrics log, one record per epoch ===")
    with open(out["metrics"]) as f:
        first = f.readline().strip()
    record = json.loads(first)
    print("fields:", ", ".join(sorted(record)))
    print("first epoch:", first[:120] + "...")

    print()
    print("=== ablating the fusion strategy on a smaller grid ===")
    small = parse_config(CONFIG.replace("bench.train_size = 512",
                                        "bench.train_size = 256")
                         .replace("train.epochs = 3", "train.epochs = 2"))
    rows = run_ablate(small, "fusion", os.path.join(top, "ablate"))
    print()
    print(f"{'variant':>16} {'overall':>8} {'trainable':>10} {'tokens':>7} "
          f"{'head MACs':>12}")
    for row in rows:
        print(f"{row['label']:>16} {row['accuracy']['overall']:>8.3f} "
              f"{row['trainable']:>10,} {row['token_budget']:>7} "
              f"{row['flops']:>12,}")
    print()
    print("Two epochs on a few hundred examples will not rank strategies")
    print("honestly -- the point is the shape of the table: token budgets,")
    print("parameter counts, and head costs diverge per strategy, and every")
    print("row is reproducible from its config and seed alone.")
