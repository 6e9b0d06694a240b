"""Audio spectrogram transformer positional encodings on a small numpy autodiff engine."""

from .patching import DESK_LAYOUT, PAPER_LAYOUT, PatchLayout
from .posenc import PEVariant
from .transformer import AudioSpectrogramTransformer, ModelConfig, count_params, desk_config, paper_config

__all__ = [
    "AudioSpectrogramTransformer",
    "DESK_LAYOUT",
    "ModelConfig",
    "PAPER_LAYOUT",
    "PEVariant",
    "PatchLayout",
    "count_params",
    "desk_config",
    "paper_config",
]
