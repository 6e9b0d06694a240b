"""
From WAV files to cross-validated fine-tuning
=============================================

Write a tiny corpus of pure tones, extract log-mel features, and run the
two-phase fine-tuning protocol over its folds: first the new output layer
alone, then the whole network with a decaying learning rate.
"""

import tempfile
from pathlib import Path

import numpy as np

from astpe import features
from astpe import synthdata as sd
from astpe.patching import PatchLayout
from astpe.training import FinetuneConfig, finetune, finetune_lr
from astpe.transformer import AudioSpectrogramTransformer, ModelConfig

L = PatchLayout(4, 2, 4, 32)  # 16 frames of 64 mels
tmp = Path(tempfile.mkdtemp())
manifest = sd.write_tone_corpus(tmp, L, n_per_class=20, n_folds=5)
corpus = sd.load_corpus(manifest)
print("classes:", corpus.class_names, "folds:", {k: len(v) for k, v in corpus.groups().items()})

# %%
# Features: power STFT, HTK mel filterbank, log, then min-max scaling with
# statistics fitted on the clips.
mels = corpus.log_mels(L.n_mels)
stats = features.fit_stats(mels)
ds = corpus.to_dataset(L, stats)
print("scaled grid range:", ds.x.min(), ds.x.max())
for name in corpus.class_names:
    i = corpus.class_names.index(name)
    row = ds.x[ds.y == i].mean(axis=(0, 2)).argmax()
    print(f"{name:>5}: brightest mel band {row}")

# %%
# Fine-tuning schedule and a 5-fold run (10 head-only epochs, 20 full).
cfg = FinetuneConfig(phase1_epochs=10, phase2_epochs=20, batch_size=4)
print("phase 2 lr by epoch:", [f"{finetune_lr(2, e, cfg):.2e}" for e in (1, 2, 3)])
base = AudioSpectrogramTransformer(ModelConfig(layout=L, blocks=1, d=32, heads=2, n_classes=10,
                                               pe="absolute"), seed=0)
results = finetune(base, ds.patches(L), ds.y, ds.ids, ds.folds, len(corpus.class_names), cfg)
for r in results:
    print(f"fold {r.fold}: accuracy {r.accuracy:.2f} ({r.n_train} train / {r.n_eval} eval)")
print("mean:", np.mean([r.accuracy for r in results]))
