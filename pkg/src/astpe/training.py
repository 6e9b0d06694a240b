"""Optimisation: warmup/exponential schedule, Adam, checkpoints, SWA, fine-tuning."""

from __future__ import annotations

import hashlib
import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import numerics as nx
from .transformer import AudioSpectrogramTransformer, SOFTMAX

log = logging.getLogger(__name__)

BCE = "bce-multilabel"
CE = "ce-softmax"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    total_steps: int = 290_000
    warmup_steps: int = 30_000
    peak_lr: float = 5e-4
    decay_rate: float | None = None
    checkpoint_interval: int = 10_000
    swa_count: int = 10
    loss: str = BCE
    seed: int = 0
    log_interval: int = 100

    def __post_init__(self):
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError("warmup_steps must be in [0, total_steps)")
        if self.loss not in (BCE, CE):
            raise ValueError(f"unknown loss {self.loss!r}")

    @property
    def resolved_decay(self) -> float:
        """Per-step decay; by default lr falls to peak/10 by the last step."""
        if self.decay_rate is not None:
            return self.decay_rate
        return 0.1 ** (1.0 / (self.total_steps - self.warmup_steps))


PAPER_TRAIN = TrainConfig()
PAPER_TRAIN_RELATIVE = TrainConfig(batch_size=32, total_steps=470_000)
DESK_TRAIN = TrainConfig(batch_size=32, total_steps=1500, warmup_steps=100, peak_lr=1e-3,
                         checkpoint_interval=100, swa_count=5, loss=CE, log_interval=25)


def lr_at(step: int, cfg: TrainConfig) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    if step <= cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps if cfg.warmup_steps else cfg.peak_lr
    return cfg.peak_lr * cfg.resolved_decay ** (step - cfg.warmup_steps)


class Adam:
    """Adam without weight decay; state is keyed by parameter name."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, nx.Tensor], grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for name, g in grads.items():
            p = params[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if lr:
                p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def loss_fn(logits: nx.Tensor, targets: np.ndarray, kind: str) -> nx.Tensor:
    if kind == CE:
        return nx.cross_entropy(logits, np.asarray(targets, dtype=np.int64))
    return nx.bce_with_logits(logits, targets)


def train_step(model: AudioSpectrogramTransformer, x: np.ndarray, y: np.ndarray, opt: Adam,
               lr: float, loss_kind: str, rng: np.random.Generator | None = None,
               trainable: Sequence[str] | None = None) -> float:
    """One Adam update on ``trainable`` (default: every parameter); returns the loss."""
    names = list(trainable) if trainable is not None else list(model.params)
    with nx.GradTape() as tape:
        loss = loss_fn(model.forward(x, rng=rng), y, loss_kind)
    value = float(loss.data)
    if not np.isfinite(value):
        raise nx.NumericalError(f"non-finite loss {value} at optimizer step {opt.t + 1} (lr={lr:g})")
    grads = tape.gradient(loss, [model.params[n] for n in names])
    opt.step(model.params, dict(zip(names, grads)), lr)
    return value


# ---------------------------------------------------------------- checkpoints

MAGIC = b"SPPE"
VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    step: int = 0
    config_hash: str = ""

    @classmethod
    def from_model(cls, model: AudioSpectrogramTransformer, step: int, config_hash: str = ""):
        return cls({k: v.data.astype(np.float32) for k, v in model.params.items()}, step, config_hash)

    def to_params(self, dtype=np.float32) -> dict[str, nx.Tensor]:
        return {k: nx.Tensor(v.astype(dtype), requires_grad=True, name=k) for k, v in self.tensors.items()}


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    buf.write(struct.pack("<Q", ckpt.step))
    return buf.getvalue()


def decode_checkpoint(data: bytes) -> Checkpoint:
    view = memoryview(data)
    pos = 0

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, view, pos)
        pos += struct.calcsize(fmt)
        return vals

    if bytes(view[:4]) != MAGIC:
        raise ValueError("not a checkpoint: bad magic")
    pos = 4
    version, count = take("<II")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (n,) = take("<H")
        name = bytes(view[pos:pos + n]).decode("utf-8")
        pos += n
        (rank,) = take("<B")
        dims = take(f"<{rank}Q") if rank else ()
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(view, dtype="<f4", count=size, offset=pos).reshape(dims)
        pos += 4 * size
        if name in tensors:
            raise ValueError(f"duplicate tensor name {name!r}")
        tensors[name] = arr.astype(np.float32)
    (step,) = take("<Q")
    if pos != len(view):
        raise ValueError(f"{len(view) - pos} trailing bytes after checkpoint")
    return Checkpoint(tensors, step)


def write_checkpoint(path, ckpt: Checkpoint):
    Path(path).write_bytes(encode_checkpoint(ckpt))


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def swa_average(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    """Elementwise float64 mean of each named tensor; step is the latest step.

    The result stays in float64 until it is written, where it becomes f32.
    """
    if not checkpoints:
        raise ValueError("SWA needs at least one checkpoint")
    first = checkpoints[0]
    for c in checkpoints[1:]:
        if c.tensors.keys() != first.tensors.keys():
            raise ValueError("checkpoints have different tensor names")
        for k, v in c.tensors.items():
            if v.shape != first.tensors[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {first.tensors[k].shape}")
    out = {}
    for k, v in first.tensors.items():
        acc = np.zeros(v.shape, dtype=np.float64)
        for c in checkpoints:
            acc += c.tensors[k]
        out[k] = acc / len(checkpoints)
    return Checkpoint(out, max(c.step for c in checkpoints), first.config_hash)


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------- training loop


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)
    swa: Checkpoint | None = None


def batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterable[np.ndarray]:
    """Endless shuffled minibatch indices; reshuffles every epoch."""
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield order[i:i + batch_size]


def fit(model: AudioSpectrogramTransformer, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
        evaluate: Callable[[AudioSpectrogramTransformer], float] | None = None,
        on_checkpoint: Callable[[Checkpoint], None] | None = None,
        config_digest: str = "") -> TrainResult:
    """Train for ``cfg.total_steps`` updates, snapshotting every checkpoint interval.

    ``x`` holds patch sequences (n, N, patch_dim). The returned SWA checkpoint
    averages the last ``swa_count`` snapshots (fewer if fewer were taken).
    """
    rng = np.random.default_rng(cfg.seed)
    batch_rng, drop_rng = rng.spawn(2)
    order = batches(len(x), cfg.batch_size, batch_rng)
    opt = Adam()
    result = TrainResult()
    running = []
    for step in range(1, cfg.total_steps + 1):
        idx = next(order)
        lr = lr_at(step, cfg)
        running.append(train_step(model, x[idx], y[idx], opt, lr, cfg.loss, drop_rng))
        row = None
        if step % cfg.log_interval == 0 or step == cfg.total_steps:
            row = {"step": step, "loss": float(np.mean(running)), "lr": lr, "metric": None}
            running = []
        if step % cfg.checkpoint_interval == 0 or step == cfg.total_steps:
            ckpt = Checkpoint.from_model(model, step, config_digest)
            result.checkpoints.append(ckpt)
            if on_checkpoint:
                on_checkpoint(ckpt)
            if evaluate and row is not None:
                row["metric"] = evaluate(model)
        if row is not None:
            result.history.append(row)
            log.info("step %d loss %.4f lr %.2e metric %s", step, row["loss"], lr, row["metric"])
    k = min(cfg.swa_count, len(result.checkpoints))
    result.swa = swa_average(result.checkpoints[-k:])
    return result


# ---------------------------------------------------------------- fine-tuning


@dataclass(frozen=True)
class FinetuneConfig:
    phase1_epochs: int = 10
    phase1_lr: float = 1e-3
    phase2_epochs: int = 40
    phase2_lr: float = 1e-4
    phase2_decay: float = 0.85
    batch_size: int = 32
    seed: int = 0


def finetune_lr(phase: int, epoch: int, cfg: FinetuneConfig) -> float:
    """Learning rate for 1-based ``epoch`` of phase 1 (head only) or 2 (everything)."""
    if epoch < 1:
        raise ValueError("epochs are counted from 1")
    if phase == 1:
        return cfg.phase1_lr
    if phase == 2:
        return cfg.phase2_lr * cfg.phase2_decay ** (epoch - 1)
    raise ValueError(f"no phase {phase}")


class FoldLeakageError(ValueError):
    pass


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    n_train: int
    n_eval: int
    model: AudioSpectrogramTransformer | None = None


def _epochs(model, x, y, epochs, lr_of_epoch, batch_size, rng, trainable=None):
    opt = Adam()
    for epoch in range(1, epochs + 1):
        lr = lr_of_epoch(epoch)
        order = rng.permutation(len(x))
        for i in range(0, len(x), batch_size):
            idx = order[i:i + batch_size]
            train_step(model, x[idx], y[idx], opt, lr, CE, rng, trainable)


def finetune_fold(base: AudioSpectrogramTransformer, x_train, y_train, n_classes: int,
                  cfg: FinetuneConfig, rng: np.random.Generator,
                  after_phase1: Callable[[AudioSpectrogramTransformer], None] | None = None):
    """Replace the head, train it alone, then train everything."""
    model = base.with_new_head(n_classes, SOFTMAX, rng)
    head = [n for n in model.params if n.startswith("head.")]
    _epochs(model, x_train, y_train, cfg.phase1_epochs, lambda e: finetune_lr(1, e, cfg),
            cfg.batch_size, rng, head)
    if after_phase1:
        after_phase1(model)
    _epochs(model, x_train, y_train, cfg.phase2_epochs, lambda e: finetune_lr(2, e, cfg),
            cfg.batch_size, rng)
    return model


def finetune(base: AudioSpectrogramTransformer, x: np.ndarray, y: np.ndarray, ids: Sequence[str],
             folds: np.ndarray, n_classes: int, cfg: FinetuneConfig,
             keep_models: bool = False) -> list[FoldResult]:
    """Cross-validated fine-tuning: each fold is held out once, the rest train."""
    from .evaluation import accuracy

    folds = np.asarray(folds)
    ids = np.asarray(ids)
    results = []
    for k, fold in enumerate(np.unique(folds)):
        ev = folds == fold
        leaked = set(ids[ev]) & set(ids[~ev])
        if leaked:
            raise FoldLeakageError(f"clips in both train and eval for fold {fold}: {sorted(leaked)}")
        rng = np.random.default_rng([cfg.seed, k])
        model = finetune_fold(base, x[~ev], y[~ev], n_classes, cfg, rng)
        probs = model.predict(x[ev])
        results.append(FoldResult(int(fold), accuracy(probs, y[ev]), int((~ev).sum()), int(ev.sum()),
                                  model if keep_models else None))
    return results
