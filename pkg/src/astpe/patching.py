"""Patch layout: spectrogram grid <-> patch sequence <-> channel grid.

Sequence order is time-major with the frequency band varying fastest, so
sequence index ``i`` sits at time chunk ``i // f_patches`` and band
``i % f_patches``. Within a patch, values are flattened mel-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import numerics as nx


@dataclass(frozen=True)
class PatchLayout:
    t_patches: int = 31
    f_patches: int = 8
    patch_frames: int = 32
    patch_mels: int = 8
    cls_present: bool = True

    def __post_init__(self):
        for name in ("t_patches", "f_patches", "patch_frames", "patch_mels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def n_patches(self) -> int:
        return self.t_patches * self.f_patches

    @property
    def seq_len(self) -> int:
        return self.n_patches + int(self.cls_present)

    @property
    def patch_dim(self) -> int:
        return self.patch_frames * self.patch_mels

    @property
    def n_frames(self) -> int:
        return self.t_patches * self.patch_frames

    @property
    def n_mels(self) -> int:
        return self.f_patches * self.patch_mels

    def time_of(self, i):
        return np.asarray(i) // self.f_patches

    def freq_of(self, i):
        return np.asarray(i) % self.f_patches

    @cached_property
    def delta_t(self) -> np.ndarray:
        """Signed time-chunk offsets ``time_of(i) - time_of(j)`` over patches (no CLS)."""
        t = self.time_of(np.arange(self.n_patches))
        return t[:, None] - t[None, :]

    @cached_property
    def delta_f(self) -> np.ndarray:
        f = self.freq_of(np.arange(self.n_patches))
        return f[:, None] - f[None, :]


PAPER_LAYOUT = PatchLayout()
DESK_LAYOUT = PatchLayout(t_patches=8, f_patches=4, patch_frames=4, patch_mels=16)


def patchify(spec: np.ndarray, layout: PatchLayout) -> np.ndarray:
    """(..., mels, frames) grid -> (..., N, patch_mels*patch_frames) patches."""
    *lead, mels, frames = spec.shape
    if mels != layout.n_mels or frames != layout.n_frames:
        raise ValueError(
            f"grid is {mels}x{frames}, layout needs {layout.n_mels}x{layout.n_frames}"
        )
    F, pm, T, pf = layout.f_patches, layout.patch_mels, layout.t_patches, layout.patch_frames
    x = spec.reshape(*lead, F, pm, T, pf)
    k = len(lead)
    x = np.moveaxis(x, k + 2, k)  # (..., T, F, pm, pf)
    return x.reshape(*lead, T * F, pm * pf)


def unpatchify(patches: np.ndarray, layout: PatchLayout) -> np.ndarray:
    *lead, n, dim = patches.shape
    if n != layout.n_patches or dim != layout.patch_dim:
        raise ValueError(f"patches {n}x{dim} do not match layout")
    F, pm, T, pf = layout.f_patches, layout.patch_mels, layout.t_patches, layout.patch_frames
    k = len(lead)
    x = patches.reshape(*lead, T, F, pm, pf)
    x = np.moveaxis(x, k, k + 2)  # (..., F, pm, T, pf)
    return x.reshape(*lead, F * pm, T * pf)


def project_and_cls(patches, weight, bias, cls):
    """Linear patch embedding with the CLS vector prepended as row 0.

    Works batched: ``patches`` (B, N, patch_dim) gives (B, N+1, d).
    """
    patches = nx.as_tensor(patches)
    emb = patches @ weight + bias
    lead = emb.shape[:-2]
    zeros = nx.Tensor(np.zeros(lead + (1, emb.shape[-1]), dtype=emb.dtype))
    return nx.concat([zeros + cls, emb], axis=-2)


def seq_to_grid(seq, layout: PatchLayout):
    """(..., N(+1), d) sequence -> ((..., F, T, d) grid, CLS rows or None).

    Accepts numpy arrays or tensors; CLS is split off and returned alongside.
    """
    cls = None
    body = seq
    if layout.cls_present:
        cls, body = seq[..., :1, :], seq[..., 1:, :]
    lead = body.shape[:-2]
    d = body.shape[-1]
    if body.shape[-2] != layout.n_patches:
        raise ValueError(f"sequence has {body.shape[-2]} patches, layout {layout.n_patches}")
    k = len(lead)
    grid = body.reshape(*lead, layout.t_patches, layout.f_patches, d)
    axes = tuple(range(k)) + (k + 1, k, k + 2)
    return grid.transpose(axes), cls


def grid_to_seq(grid, cls, layout: PatchLayout):
    k = grid.ndim - 3
    lead = grid.shape[:k]
    axes = tuple(range(k)) + (k + 1, k, k + 2)
    body = grid.transpose(axes).reshape(*lead, layout.n_patches, grid.shape[-1])
    if cls is None:
        return body
    if isinstance(body, nx.Tensor) or isinstance(cls, nx.Tensor):
        return nx.concat([cls, body], axis=-2)
    return np.concatenate([cls, body], axis=-2)
