"""
From a log-mel grid to a patch sequence
=======================================

A spectrogram is cut into a time x frequency grid of patches. Each patch is
flattened and becomes one token; a CLS token is prepended. The order is
time-major, frequency varying fastest.
"""

import numpy as np

from astpe.patching import DESK_LAYOUT, PAPER_LAYOUT, patchify, unpatchify
from astpe.transformer import count_params, paper_config

# %%
# The full-size layout: 64 mels x 992 frames, 8-mel x 32-frame patches.
L = PAPER_LAYOUT
print(f"grid {L.f_patches} bands x {L.t_patches} chunks -> {L.n_patches} patches, "
      f"{L.seq_len} tokens with CLS, {L.patch_dim} values per patch")

# %%
# Fill each frame with its time-chunk index; every patch is then constant
# and equal to its own chunk.
spec = np.tile(np.arange(L.n_frames) // L.patch_frames, (L.n_mels, 1)).astype(float)
p = patchify(spec, L)
print("chunk of the first 10 tokens:", [int(p[i, 0]) for i in range(10)])
print("frequency band of the same tokens:", [int(L.freq_of(i)) for i in range(10)])
assert np.array_equal(unpatchify(p, L), spec)

# %%
# The desk layout used for quick experiments is much smaller.
print(f"desk grid: {DESK_LAYOUT.n_mels} mels x {DESK_LAYOUT.n_frames} frames, "
      f"{DESK_LAYOUT.n_patches} patches of {DESK_LAYOUT.patch_dim}")

# %%
# Positional parameters at full size, per variant.
for pe in ("none", "absolute", "alibi-2d", "time-alibi", "learned-relative",
           "conditional", "conditional-absolute"):
    c = count_params(paper_config(pe))
    print(f"{pe:>22}: {c['pe_total']:>8,} positional of {c['total']:>11,} total")
