"""
Attention biases: ALiBi and learned relative offsets
====================================================

Both variants add a matrix R to the attention logits before the softmax.
ALiBi's R is fixed, -m|offset| with a per-head slope. The learned-relative R
is computed from the queries and two offset tables, one for time and one for
frequency.
"""

import numpy as np

from astpe import numerics as nx
from astpe import posenc
from astpe.patching import PatchLayout

np.set_printoptions(precision=3, suppress=True, linewidth=110)
L = PatchLayout(4, 2, 1, 1)  # 4 chunks x 2 bands, 8 patches + CLS

# %%
# Slopes: in 2-D mode half of the heads measure time distance and half
# frequency distance, each half with its own geometric slope ladder.
slopes, axes = posenc.alibi_slopes(4, "2d")
for s, a in zip(slopes, axes):
    print(f"{a:>4} head, slope {s:.4f}")

# %%
# Head 0 (time). Row/column 0 is the CLS token and carries no bias; patches
# in the same chunk (pairs of rows) see each other without penalty.
bias = posenc.alibi_bias(L, 4, "2d")
print(bias[0])

# %%
# The time-only mode gives every head a time slope.
print(posenc.alibi_slopes(4, "time")[0])

# %%
# Learned relative bias: R_ij = <q_i, E^t[dt]> + <q_i, E^f[df]>.
rng = np.random.default_rng(0)
dk = 3
t_shape, f_shape = posenc.relative_tables_shape(L, dk)
print("tables:", t_shape, f_shape)
q = rng.normal(size=(L.seq_len, dk))
et, ef = rng.normal(size=t_shape), rng.normal(size=f_shape)
r = posenc.relative_bias(nx.Tensor(q), nx.Tensor(et), nx.Tensor(ef), L).data
print(r[:4, :4])

# %%
# With a one-hot query every row of R repeats the same offset pattern.
q1 = np.zeros_like(q)
q1[:, 0] = 1.0
r1 = posenc.relative_bias(nx.Tensor(q1), nx.Tensor(et), nx.Tensor(ef), L).data
print("row for patch 0:", r1[1, 1:])
print("row for patch 2:", r1[3, 1:])
