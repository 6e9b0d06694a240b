"""Pre-norm transformer encoder over spectrogram patches with pluggable PE."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nx
from . import posenc
from .patching import DESK_LAYOUT, PAPER_LAYOUT, PatchLayout, project_and_cls
from .posenc import PEVariant

SIGMOID = "sigmoid-multilabel"
SOFTMAX = "softmax"


@dataclass(frozen=True)
class ModelConfig:
    layout: PatchLayout = PAPER_LAYOUT
    blocks: int = 12
    d: int = 768
    heads: int = 12
    mlp_ratio: int = 4
    n_classes: int = 527
    head_activation: str = SIGMOID
    pe: PEVariant = PEVariant.ABSOLUTE
    peg_blocks: tuple[int, ...] | None = None
    dropout: float = 0.1
    ln_eps: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "pe", PEVariant.parse(self.pe))
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.peg_blocks is None:
            object.__setattr__(self, "peg_blocks", tuple(range(min(5, self.blocks))))
        if any(not 0 <= b < self.blocks for b in self.peg_blocks):
            raise ValueError(f"PEG placements {self.peg_blocks} outside [0, {self.blocks})")
        if self.head_activation not in (SIGMOID, SOFTMAX):
            raise ValueError(f"unknown head activation {self.head_activation!r}")

    @property
    def d_k(self) -> int:
        return self.d // self.heads

    @property
    def mlp_hidden(self) -> int:
        return self.mlp_ratio * self.d


def paper_config(pe="absolute", n_classes: int = 527, **kw) -> ModelConfig:
    return ModelConfig(pe=PEVariant.parse(pe), n_classes=n_classes, **kw)


def desk_config(pe="absolute", n_classes: int = 2, **kw) -> ModelConfig:
    kw.setdefault("layout", DESK_LAYOUT)
    kw.setdefault("head_activation", SOFTMAX)
    return ModelConfig(blocks=2, d=64, heads=4, pe=PEVariant.parse(pe), n_classes=n_classes, **kw)


# ---------------------------------------------------------------- parameters


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every trainable tensor's name and shape, in checkpoint order."""
    L, d, h = cfg.layout, cfg.d, cfg.mlp_hidden
    shapes = {
        "patch_embed.weight": (L.patch_dim, d),
        "patch_embed.bias": (d,),
        "cls": (d,),
    }
    if cfg.pe.uses_absolute:
        shapes["pe.absolute"] = (L.n_patches, d)
    t_shape, f_shape = posenc.relative_tables_shape(L, cfg.d_k)
    for b in range(cfg.blocks):
        p = f"blocks.{b}."
        shapes.update({
            p + "norm1.gain": (d,), p + "norm1.bias": (d,),
            p + "attn.qkv.weight": (d, 3 * d), p + "attn.qkv.bias": (3 * d,),
            p + "attn.out.weight": (d, d), p + "attn.out.bias": (d,),
            p + "norm2.gain": (d,), p + "norm2.bias": (d,),
            p + "mlp.fc1.weight": (d, h), p + "mlp.fc1.bias": (h,),
            p + "mlp.fc2.weight": (h, d), p + "mlp.fc2.bias": (d,),
        })
        if cfg.pe.uses_relative:
            shapes[p + "rel.time"] = t_shape
            shapes[p + "rel.freq"] = f_shape
        if cfg.pe.uses_peg and b in cfg.peg_blocks:
            shapes[p + "peg.kernel"] = (d, 3, 3)
            shapes[p + "peg.bias"] = (d,)
    shapes.update({
        "norm.gain": (d,), "norm.bias": (d,),
        "head.weight": (d, cfg.n_classes), "head.bias": (cfg.n_classes,),
    })
    return shapes


def component_of(name: str) -> str:
    if name.startswith("pe.absolute"):
        return "pe_absolute"
    if ".rel." in name:
        return "pe_relative"
    if ".peg." in name:
        return "pe_peg"
    if name.startswith("patch_embed"):
        return "patch_embed"
    if name == "cls":
        return "cls"
    if name.startswith("head."):
        return "head"
    if ".attn." in name:
        return "attention"
    if ".mlp." in name:
        return "mlp"
    return "norms"


PE_COMPONENTS = ("pe_absolute", "pe_relative", "pe_peg")


def count_params(cfg: ModelConfig) -> dict[str, int]:
    """Exact per-component parameter counts plus ``pe_total`` and ``total``."""
    counts = dict.fromkeys(
        ("patch_embed", "cls", *PE_COMPONENTS, "attention", "mlp", "norms", "head"), 0)
    for name, shape in param_shapes(cfg).items():
        counts[component_of(name)] += math.prod(shape)
    counts["pe_total"] = sum(counts[c] for c in PE_COMPONENTS)
    counts["total"] = sum(v for k, v in counts.items() if k != "pe_total")
    return counts


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> dict[str, nx.Tensor]:
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gain":
            arr = np.ones(shape)
        elif leaf == "bias":
            arr = np.zeros(shape)
        elif leaf == "kernel":
            arr = rng.uniform(-1 / 3, 1 / 3, size=shape)
        elif leaf == "weight":
            arr = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
        else:  # cls, absolute table, relative tables
            arr = rng.normal(0.0, 0.02, size=shape)
        params[name] = nx.Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


# ---------------------------------------------------------------- forward


def attention(q, k, v, r=None, dropout: float = 0.0, rng=None):
    """softmax((q k^T + r) / sqrt(d_k)) v over the last two axes."""
    q, k, v = nx.as_tensor(q), nx.as_tensor(k), nx.as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise nx.ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape} disagree")
    scores = q @ k.T
    if r is not None:
        if r.shape[-2:] != scores.shape[-2:]:
            raise nx.ShapeError(f"bias {r.shape} does not fit scores {scores.shape}")
        scores = scores + r
    weights = nx.softmax_lastdim(scores * (1.0 / math.sqrt(q.shape[-1])))
    weights = _dropout(weights, dropout, rng)
    return weights @ v


def _dropout(x, rate: float, rng):
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * nx.Tensor(keep)


class AudioSpectrogramTransformer:
    """Parameters plus forward pass; params are a flat name -> Tensor dict."""

    def __init__(self, cfg: ModelConfig, params: dict[str, nx.Tensor] | None = None,
                 seed: int = 0, dtype=np.float64):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, np.random.default_rng(seed), dtype)
        missing = set(param_shapes(cfg)) - set(self.params)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        self.dtype = self.params["cls"].dtype
        mode = cfg.pe.alibi_mode
        self._alibi = None
        if mode:
            self._alibi = nx.Tensor(posenc.alibi_bias(cfg.layout, cfg.heads, mode).astype(self.dtype))

    def __getitem__(self, name) -> nx.Tensor:
        return self.params[name]

    def embed(self, patches) -> nx.Tensor:
        p = self.params
        x = project_and_cls(nx.Tensor(np.asarray(patches, dtype=self.dtype)),
                            p["patch_embed.weight"], p["patch_embed.bias"], p["cls"])
        if self.cfg.pe.uses_absolute:
            x = posenc.absolute_add(x, p["pe.absolute"], self.cfg.layout)
        return x

    def block(self, x: nx.Tensor, b: int, rng=None) -> nx.Tensor:
        cfg, p = self.cfg, self.params
        pre = f"blocks.{b}."
        B, L, d = x.shape
        H, dk = cfg.heads, cfg.d_k
        drop = cfg.dropout if rng is not None else 0.0

        h = nx.layer_norm(x, p[pre + "norm1.gain"], p[pre + "norm1.bias"], cfg.ln_eps)
        qkv = (h @ p[pre + "attn.qkv.weight"] + p[pre + "attn.qkv.bias"])
        qkv = qkv.reshape(B, L, 3, H, dk).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        r = self._alibi
        if cfg.pe.uses_relative:
            r = posenc.relative_bias(q, p[pre + "rel.time"], p[pre + "rel.freq"], cfg.layout)
        a = attention(q, k, v, r, drop, rng)
        a = a.transpose(0, 2, 1, 3).reshape(B, L, d)
        x = x + _dropout(a @ p[pre + "attn.out.weight"] + p[pre + "attn.out.bias"], drop, rng)

        h = nx.layer_norm(x, p[pre + "norm2.gain"], p[pre + "norm2.bias"], cfg.ln_eps)
        h = _dropout(nx.gelu(h @ p[pre + "mlp.fc1.weight"] + p[pre + "mlp.fc1.bias"]), drop, rng)
        x = x + _dropout(h @ p[pre + "mlp.fc2.weight"] + p[pre + "mlp.fc2.bias"], drop, rng)

        if cfg.pe.uses_peg and b in cfg.peg_blocks:
            x = posenc.peg_forward(x, p[pre + "peg.kernel"], p[pre + "peg.bias"], cfg.layout)
        return x

    def encode(self, patches, rng=None) -> nx.Tensor:
        """(B, N, patch_dim) patches -> (B, L, d) final-normed token states."""
        x = self.embed(patches)
        for b in range(self.cfg.blocks):
            x = self.block(x, b, rng)
            if not np.all(np.isfinite(x.data)):
                raise nx.NumericalError(f"non-finite activations after block {b}")
        p = self.params
        return nx.layer_norm(x, p["norm.gain"], p["norm.bias"], self.cfg.ln_eps)

    def forward(self, patches, rng=None) -> nx.Tensor:
        """Class logits (B, n_classes) from the CLS row. Dropout only if ``rng`` is given."""
        patches = np.asarray(patches)
        single = patches.ndim == 2
        if single:
            patches = patches[None]
        z = self.encode(patches, rng)
        logits = z[:, 0, :] @ self.params["head.weight"] + self.params["head.bias"]
        return logits[0] if single else logits

    __call__ = forward

    def predict(self, patches, batch_size: int = 256) -> np.ndarray:
        """Class probabilities as a numpy array (sigmoid or softmax per config)."""
        patches = np.asarray(patches)
        out = []
        for i in range(0, len(patches), batch_size):
            logits = self.forward(patches[i:i + batch_size]).data
            if self.cfg.head_activation == SIGMOID:
                out.append(nx.sigmoid(logits))
            else:
                out.append(nx.softmax(logits))
        return np.concatenate(out, axis=0)

    def with_new_head(self, n_classes: int, head_activation: str = SOFTMAX,
                      rng: np.random.Generator | None = None) -> "AudioSpectrogramTransformer":
        """Copy with a freshly initialised output layer (backbone arrays copied)."""
        cfg = replace(self.cfg, n_classes=n_classes, head_activation=head_activation)
        rng = rng or np.random.default_rng(0)
        params = {k: nx.Tensor(v.data.copy(), requires_grad=True, name=k)
                  for k, v in self.params.items() if not k.startswith("head.")}
        d = cfg.d
        params["head.weight"] = nx.Tensor(
            rng.normal(0, 1 / math.sqrt(d), (d, n_classes)).astype(self.dtype), True, "head.weight")
        params["head.bias"] = nx.Tensor(np.zeros(n_classes, self.dtype), True, "head.bias")
        return AudioSpectrogramTransformer(cfg, params)
