"""
A short training run and a look at the learned position table
=============================================================

Train the small model with absolute embeddings on the temporal-order task,
average the last checkpoints, and compare time positions by the cosine
similarity of their embeddings. Takes about a minute.
"""

from dataclasses import replace

import numpy as np

from astpe import synthdata as sd
from astpe.evaluation import accuracy, pe_similarity
from astpe.patching import DESK_LAYOUT
from astpe.training import DESK_TRAIN, fit, lr_at
from astpe.transformer import AudioSpectrogramTransformer, desk_config

np.set_printoptions(precision=2, suppress=True)
L = DESK_LAYOUT
train = sd.generate(sd.SynthTask(sd.TEMPORAL_ORDER, L, n_samples=2048, seed=2))
test = sd.generate(sd.SynthTask(sd.TEMPORAL_ORDER, L, n_samples=512, seed=3))

# %%
# Warmup then exponential decay.
cfg = replace(DESK_TRAIN, total_steps=1000)
print("lr at 0, 100, 500, 1000:", [f"{lr_at(s, cfg):.2e}" for s in (0, 100, 500, 1000)])

model = AudioSpectrogramTransformer(desk_config("absolute", n_classes=2), seed=0, dtype=np.float32)
res = fit(model, train.patches(L), train.y, cfg,
          evaluate=lambda m: accuracy(m.predict(test.patches(L)), test.y))
for row in res.history:
    if row["metric"] is not None:
        print(f"step {row['step']:>5}  loss {row['loss']:.4f}  test accuracy {row['metric']:.3f}")

# %%
# Stochastic weight averaging over the last checkpoints.
swa = AudioSpectrogramTransformer(model.cfg, res.swa.to_params())
print("SWA test accuracy:", accuracy(swa.predict(test.patches(L)), test.y))

# %%
# Neighbouring chunks end up with similar embeddings.
sim = pe_similarity(res.swa.tensors, L, "time")
print(sim)
