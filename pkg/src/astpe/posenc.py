"""Positional-encoding variants.

Additive generators (absolute table, PEG convolution) act on the patch
sequence; bias generators (ALiBi, learned relative) produce the per-head
``R`` added to ``Q K^T`` before the ``1/sqrt(d_k)`` scaling. CLS never gets a
position: no absolute row, bypasses PEG, zero bias row/column.
"""

from __future__ import annotations

import enum

import numpy as np

from . import numerics as nx
from .patching import PatchLayout, grid_to_seq, seq_to_grid


class PEVariant(str, enum.Enum):
    NONE = "none"
    ABSOLUTE = "absolute"
    ALIBI_2D = "alibi-2d"
    TIME_ALIBI = "time-alibi"
    LEARNED_RELATIVE = "learned-relative"
    CONDITIONAL = "conditional"
    CONDITIONAL_ABSOLUTE = "conditional-absolute"

    @classmethod
    def parse(cls, name) -> "PEVariant":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            valid = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown PE variant {name!r}; valid variants: {valid}") from None

    @property
    def uses_absolute(self) -> bool:
        # Time-ALiBi keeps absolute embeddings to tell frequency positions apart.
        return self in (PEVariant.ABSOLUTE, PEVariant.TIME_ALIBI, PEVariant.CONDITIONAL_ABSOLUTE)

    @property
    def uses_peg(self) -> bool:
        return self in (PEVariant.CONDITIONAL, PEVariant.CONDITIONAL_ABSOLUTE)

    @property
    def uses_relative(self) -> bool:
        return self is PEVariant.LEARNED_RELATIVE

    @property
    def alibi_mode(self) -> str | None:
        return {PEVariant.ALIBI_2D: "2d", PEVariant.TIME_ALIBI: "time"}.get(self)


# ---------------------------------------------------------------- additive


def absolute_add(seq, table, layout: PatchLayout):
    """Add the (N, d) table to every non-CLS row."""
    if table.shape != (layout.n_patches, seq.shape[-1]):
        raise nx.ShapeError(f"absolute table {table.shape} does not fit sequence {seq.shape}")
    if not layout.cls_present:
        return seq + table
    zero = nx.Tensor(np.zeros((1, seq.shape[-1]), dtype=seq.dtype))
    return seq + nx.concat([zero, table], axis=0)


def peg_generate(seq, kernel, bias, layout: PatchLayout):
    """Positional grid from a depthwise 3x3 conv over the (F, T, d) patch grid."""
    grid, _ = seq_to_grid(seq, layout)
    return nx.depthwise_conv3x3(grid, kernel, bias)


def peg_forward(seq, kernel, bias, layout: PatchLayout):
    """seq + PEG(seq) on patch rows; the CLS row passes through."""
    seq = nx.as_tensor(seq)
    grid, cls = seq_to_grid(seq, layout)
    pos = nx.depthwise_conv3x3(grid, kernel, bias)
    return grid_to_seq(grid + pos, cls, layout)


# ---------------------------------------------------------------- ALiBi


def alibi_slopes(n_heads: int, mode: str = "2d") -> tuple[np.ndarray, list[str]]:
    """Per-head slope ``0.5 ** (16 h / n_heads)`` and axis assignment.

    In 2-D mode the first half of the heads look at time and the second half
    at frequency, each half counting ``h`` from 1. In time mode every head is
    a time head with ``h = 1..n_heads``.
    """
    if mode == "2d":
        if n_heads % 2:
            raise ValueError(f"2-D ALiBi needs an even head count, got {n_heads}")
        half = n_heads // 2
        h = np.concatenate([np.arange(1, half + 1)] * 2)
        axes = ["time"] * half + ["freq"] * half
    elif mode == "time":
        h = np.arange(1, n_heads + 1)
        axes = ["time"] * n_heads
    else:
        raise ValueError(f"unknown ALiBi mode {mode!r}")
    return 0.5 ** (16.0 * h / n_heads), axes


def alibi_bias(layout: PatchLayout, n_heads: int, mode: str = "2d") -> np.ndarray:
    """Fixed (n_heads, L, L) bias, L = sequence length incl. CLS."""
    slopes, axes = alibi_slopes(n_heads, mode)
    dist = {"time": np.abs(layout.delta_t), "freq": np.abs(layout.delta_f)}
    bias = np.stack([-m * dist[a] for m, a in zip(slopes, axes)]).astype(np.float64)
    if layout.cls_present:
        bias = np.pad(bias, ((0, 0), (1, 0), (1, 0)))
    return bias


# ---------------------------------------------------------------- learned relative


def relative_tables_shape(layout: PatchLayout, d_k: int) -> tuple[tuple[int, int], tuple[int, int]]:
    return (2 * layout.t_patches - 1, d_k), (2 * layout.f_patches - 1, d_k)


def relative_index(layout: PatchLayout) -> tuple[np.ndarray, np.ndarray]:
    """Dense-table rows for each (i, j) offset: ``delta + (extent - 1)``."""
    return layout.delta_t + layout.t_patches - 1, layout.delta_f + layout.f_patches - 1


def relative_bias(q, emb_t, emb_f, layout: PatchLayout):
    """R_ij = <q_i, E^t[dt(i,j)]> + <q_i, E^f[df(i,j)]> for patch pairs.

    ``q`` is (..., L, d_k); returns (..., L, L) with zero CLS row/column.
    """
    q = nx.as_tensor(q)
    idx_t, idx_f = relative_index(layout)
    qp = q[..., 1:, :] if layout.cls_present else q
    r = nx.take_along_last(qp @ emb_t.T, idx_t) + nx.take_along_last(qp @ emb_f.T, idx_f)
    return nx.pad_leading(r, 1) if layout.cls_present else r

