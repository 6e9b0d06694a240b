"""Flat ``key = value`` run configuration with defaults < preset < file < CLI precedence."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .patching import PatchLayout
from .posenc import PEVariant
from .synthdata import MULTI_BAND, TASKS
from .training import BCE, CE, TrainConfig
from .transformer import SIGMOID, SOFTMAX, ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str = "desk"
    pe: str = "conditional"
    task: str = "temporal-order"
    corpus: str = ""
    eval_fold: int = 0
    n_train: int = 2048
    n_test: int = 256
    noise: float = 0.2
    data_seed: int = 1
    n_classes: int = 0
    blocks: int = 2
    d: int = 64
    heads: int = 4
    t_patches: int = 8
    f_patches: int = 4
    patch_frames: int = 4
    patch_mels: int = 16
    dropout: float = 0.1
    steps: int = 1500
    warmup: int = 100
    peak_lr: float = 1e-3
    decay_rate: float = 0.0
    batch_size: int = 32
    checkpoint_interval: int = 100
    swa_count: int = 5
    log_interval: int = 25
    seed: int = 0
    out: str = "runs/default"

    def __post_init__(self):
        self.pe = PEVariant.parse(self.pe).value
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        if not self.corpus and self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")

    # -- derived objects

    @property
    def layout(self) -> PatchLayout:
        return PatchLayout(self.t_patches, self.f_patches, self.patch_frames, self.patch_mels)

    @property
    def multilabel(self) -> bool:
        return self.task == MULTI_BAND and not self.corpus

    def model_config(self, n_classes: int | None = None, multilabel: bool | None = None) -> ModelConfig:
        multilabel = self.multilabel if multilabel is None else multilabel
        return ModelConfig(
            layout=self.layout, blocks=self.blocks, d=self.d, heads=self.heads,
            n_classes=n_classes or self.n_classes or 2,
            head_activation=SIGMOID if multilabel else SOFTMAX,
            pe=PEVariant.parse(self.pe), dropout=self.dropout,
        )

    def train_config(self, multilabel: bool | None = None) -> TrainConfig:
        multilabel = self.multilabel if multilabel is None else multilabel
        return TrainConfig(
            batch_size=self.batch_size, total_steps=self.steps, warmup_steps=self.warmup,
            peak_lr=self.peak_lr, decay_rate=self.decay_rate or None,
            checkpoint_interval=self.checkpoint_interval, swa_count=self.swa_count,
            loss=BCE if multilabel else CE, seed=self.seed, log_interval=self.log_interval,
        )

    # -- serialisation

    def dumps(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def write(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def resolve(cls, file: str | Path | None = None, overrides: dict | None = None) -> "RunConfig":
        """Merge preset defaults, a config file and CLI overrides (highest wins)."""
        raw: dict[str, str] = {}
        if file:
            raw.update(parse_file(file))
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        preset = str(raw.get("preset", "desk"))
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        values = dict(PRESETS[preset])
        bad = []
        for key, val in raw.items():
            try:
                values[key] = _coerce(known[key].type, val)
            except ValueError:
                bad.append(f"{key}={val!r}")
        if bad:
            raise ConfigError(f"invalid config values: {', '.join(bad)}")
        try:
            return cls(**values)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def read(cls, path) -> "RunConfig":
        return cls.resolve(file=path)


def _coerce(type_name, value):
    if not isinstance(value, str):
        return value
    t = {"int": int, "float": float, "str": str}[type_name if isinstance(type_name, str) else type_name.__name__]
    return t(value.strip())


def parse_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


_DESK = {f.name: f.default for f in fields(RunConfig)}
PRESETS = {
    "desk": _DESK,
    "paper": {
        **_DESK,
        "preset": "paper", "n_classes": 527, "blocks": 12, "d": 768, "heads": 12,
        "t_patches": 31, "f_patches": 8, "patch_frames": 32, "patch_mels": 8,
        "steps": 290_000, "warmup": 30_000, "peak_lr": 5e-4, "batch_size": 64,
        "checkpoint_interval": 10_000, "swa_count": 10, "log_interval": 100,
    },
}
PRESETS["paper-relative"] = {**PRESETS["paper"], "preset": "paper-relative",
                             "pe": "learned-relative", "batch_size": 32, "steps": 470_000}
