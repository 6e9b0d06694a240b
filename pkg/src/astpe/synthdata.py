"""Synthetic spectrogram tasks and small WAV-corpus ingestion.

Synthetic grids are produced directly in the scaled log-mel domain (values in
[0, 1]): uniform background noise plus "tones", i.e. short horizontal stripes
that fill exactly one patch column in time.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features
from .patching import PatchLayout, patchify

TEMPORAL_ORDER = "temporal-order"
FREQUENCY_BAND = "frequency-band"
EVENT_COUNT = "event-count"
MULTI_BAND = "multi-band"
TASKS = (TEMPORAL_ORDER, FREQUENCY_BAND, EVENT_COUNT, MULTI_BAND)


@dataclass(frozen=True)
class SynthTask:
    kind: str
    layout: PatchLayout
    n_samples: int = 512
    noise: float = 0.2
    tone_level: float = 1.0
    n_classes: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASKS:
            raise ValueError(f"unknown task {self.kind!r}; choose from {', '.join(TASKS)}")

    @property
    def classes(self) -> int:
        if self.kind == TEMPORAL_ORDER:
            return 2
        if self.kind in (FREQUENCY_BAND, MULTI_BAND):
            return self.layout.f_patches
        return self.n_classes or 3

    @property
    def multilabel(self) -> bool:
        return self.kind == MULTI_BAND


@dataclass
class Dataset:
    x: np.ndarray  # (n, mels, frames) scaled log-mel grids
    y: np.ndarray  # int labels, or (n, classes) multi-hot when multilabel
    n_classes: int
    multilabel: bool = False
    ids: list[str] = field(default_factory=list)
    folds: np.ndarray | None = None

    def __len__(self):
        return len(self.x)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.y[idx], self.n_classes, self.multilabel,
                       [self.ids[i] for i in idx] if self.ids else [],
                       None if self.folds is None else self.folds[idx])

    def patches(self, layout: PatchLayout) -> np.ndarray:
        return patchify(self.x, layout)


def tone_rows(layout: PatchLayout, band: int) -> slice:
    """Mel rows of the tone used in ``band``; the in-patch offset differs per band."""
    pm, F = layout.patch_mels, layout.f_patches
    thick = max(1, pm // 8)
    offset = min((band * pm) // F, pm - thick)
    start = band * pm + offset
    return slice(start, start + thick)


def _background(task: SynthTask, rng) -> np.ndarray:
    L = task.layout
    return task.noise * rng.random((L.n_mels, L.n_frames))


def _put_tone(grid: np.ndarray, layout: PatchLayout, band: int, chunk: int, level: float):
    cols = slice(chunk * layout.patch_frames, (chunk + 1) * layout.patch_frames)
    grid[tone_rows(layout, band), cols] = np.minimum(1.0, grid[tone_rows(layout, band), cols] + level)


def _swap_chunks(grid: np.ndarray, layout: PatchLayout, a: int, b: int) -> np.ndarray:
    out = grid.copy()
    pf = layout.patch_frames
    ca, cb = slice(a * pf, (a + 1) * pf), slice(b * pf, (b + 1) * pf)
    out[:, ca], out[:, cb] = grid[:, cb], grid[:, ca]
    return out


def gen_temporal_order(task: SynthTask) -> Dataset:
    """Low-band tone then high-band tone (label 0) or the reverse (label 1).

    Samples come in twin pairs: the second is the first with the two event
    columns swapped, so both share one multiset of patches but not a label.
    """
    L = task.layout
    if L.t_patches < 2 or L.f_patches < 2:
        raise ValueError("temporal-order needs at least 2 time chunks and 2 bands")
    if task.n_samples % 2:
        raise ValueError("temporal-order datasets are built from twin pairs; n_samples must be even")
    rng = np.random.default_rng(task.seed)
    low, high = 0, L.f_patches - 1
    xs, ys = [], []
    for _ in range(task.n_samples // 2):
        t_low, t_high = rng.choice(L.t_patches, size=2, replace=False)
        grid = _background(task, rng)
        _put_tone(grid, L, low, t_low, task.tone_level)
        _put_tone(grid, L, high, t_high, task.tone_level)
        xs += [grid, _swap_chunks(grid, L, t_low, t_high)]
        first = int(t_low > t_high)
        ys += [first, 1 - first]
    return Dataset(np.stack(xs), np.array(ys), 2, ids=[f"to-{task.seed}-{i}" for i in range(len(xs))])


def gen_frequency_band(task: SynthTask) -> Dataset:
    """One tone at a random time; the label is its band."""
    L = task.layout
    rng = np.random.default_rng(task.seed)
    labels = rng.permutation(np.arange(task.n_samples) % L.f_patches)
    xs = []
    for band in labels:
        grid = _background(task, rng)
        _put_tone(grid, L, int(band), int(rng.integers(L.t_patches)), task.tone_level)
        xs.append(grid)
    return Dataset(np.stack(xs), labels, L.f_patches, ids=[f"fb-{task.seed}-{i}" for i in range(len(xs))])


def gen_event_count(task: SynthTask) -> Dataset:
    """1..K tones at distinct patches; the label is the count minus one."""
    L = task.layout
    k = task.classes
    if k > L.n_patches:
        raise ValueError(f"cannot place {k} events on {L.n_patches} patches")
    rng = np.random.default_rng(task.seed)
    labels = rng.permutation(np.arange(task.n_samples) % k)
    xs = []
    for lab in labels:
        grid = _background(task, rng)
        for cell in rng.choice(L.n_patches, size=lab + 1, replace=False):
            _put_tone(grid, L, int(L.freq_of(cell)), int(L.time_of(cell)), task.tone_level)
        xs.append(grid)
    return Dataset(np.stack(xs), labels, k, ids=[f"ec-{task.seed}-{i}" for i in range(len(xs))])


def gen_multi_band(task: SynthTask) -> Dataset:
    """Tones in a random non-empty subset of bands; multi-hot band labels."""
    L = task.layout
    rng = np.random.default_rng(task.seed)
    xs, ys = [], []
    for _ in range(task.n_samples):
        present = rng.random(L.f_patches) < 0.5
        if not present.any():
            present[rng.integers(L.f_patches)] = True
        grid = _background(task, rng)
        for band in np.flatnonzero(present):
            _put_tone(grid, L, int(band), int(rng.integers(L.t_patches)), task.tone_level)
        xs.append(grid)
        ys.append(present.astype(np.int64))
    return Dataset(np.stack(xs), np.stack(ys), L.f_patches, multilabel=True,
                   ids=[f"mb-{task.seed}-{i}" for i in range(len(xs))])


GENERATORS = {
    TEMPORAL_ORDER: gen_temporal_order,
    FREQUENCY_BAND: gen_frequency_band,
    EVENT_COUNT: gen_event_count,
    MULTI_BAND: gen_multi_band,
}


def generate(task: SynthTask) -> Dataset:
    return GENERATORS[task.kind](task)


def find_twins(ds: Dataset, layout: PatchLayout) -> np.ndarray:
    """For each sample, the index of another with the same patch multiset and a different label (-1 if none)."""
    groups = defaultdict(list)
    for i, p in enumerate(patchify(ds.x, layout)):
        key = b"".join(sorted(row.tobytes() for row in p))
        groups[key].append(i)
    twins = np.full(len(ds), -1)
    for members in groups.values():
        for i in members:
            for j in members:
                if j != i and ds.y[j] != ds.y[i]:
                    twins[i] = j
                    break
    return twins


# ---------------------------------------------------------------- corpora


class CorpusError(ValueError):
    pass


@dataclass
class CorpusEntry:
    path: Path
    labels: list[str]
    fold: int


@dataclass
class Corpus:
    entries: list[CorpusEntry]
    clips: list[features.AudioClip]
    class_names: list[str]

    @property
    def multilabel(self) -> bool:
        return any(len(e.labels) > 1 for e in self.entries)

    @property
    def folds(self) -> np.ndarray:
        return np.array([e.fold for e in self.entries])

    def groups(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = defaultdict(list)
        for i, e in enumerate(self.entries):
            out[e.fold].append(i)
        return dict(sorted(out.items()))

    def targets(self) -> np.ndarray:
        index = {c: k for k, c in enumerate(self.class_names)}
        if self.multilabel:
            y = np.zeros((len(self.entries), len(self.class_names)), dtype=np.int64)
            for i, e in enumerate(self.entries):
                y[i, [index[c] for c in e.labels]] = 1
            return y
        return np.array([index[e.labels[0]] for e in self.entries])

    def log_mels(self, n_mels: int = features.N_MELS) -> list[features.Spectrogram]:
        return [features.mel_log(features.stft_power(c), n_mels) for c in self.clips]

    def to_dataset(self, layout: PatchLayout, stats: features.ScaleStats) -> Dataset:
        grids = []
        for spec in self.log_mels(layout.n_mels):
            scaled = features.scale_minmax(spec, stats).values
            grids.append(features.crop_or_pad(scaled, layout.n_frames))
        return Dataset(np.stack(grids), self.targets(), len(self.class_names), self.multilabel,
                       [str(e.path) for e in self.entries], self.folds)


def read_manifest(path) -> list[CorpusEntry]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"path", "labels", "fold"} - set(reader.fieldnames or [])
        if missing:
            raise CorpusError(f"{path}: manifest lacks columns {sorted(missing)}")
        for row in reader:
            clip = Path(row["path"])
            if not clip.is_absolute():
                clip = path.parent / clip
            labels = [s for s in row["labels"].split(";") if s]
            if not labels:
                raise CorpusError(f"{path}: clip {row['path']} has no labels")
            entries.append(CorpusEntry(clip, labels, int(row["fold"])))
    return entries


def load_corpus(manifest) -> Corpus:
    """Read a manifest and its WAVs; folds must be contiguous and leak-free."""
    entries = read_manifest(manifest)
    if not entries:
        raise CorpusError(f"{manifest}: empty manifest")
    seen: dict[Path, int] = {}
    for e in entries:
        key = e.path.resolve()
        if key in seen:
            kind = "leakage across folds" if seen[key] != e.fold else "duplicate entry"
            raise CorpusError(f"{e.path}: {kind} (folds {seen[key]} and {e.fold})")
        seen[key] = e.fold
    folds = sorted({e.fold for e in entries})
    if folds != list(range(folds[0], folds[-1] + 1)):
        raise CorpusError(f"fold ids {folds} have gaps")
    clips = []
    for e in entries:
        if not e.path.exists():
            raise FileNotFoundError(f"clip not found: {e.path}")
        clips.append(features.read_wav(e.path))
    names = sorted({c for e in entries for c in e.labels})
    order = sorted(range(len(entries)), key=lambda i: (entries[i].fold, str(entries[i].path)))
    return Corpus([entries[i] for i in order], [clips[i] for i in order], names)


def write_tone_corpus(out_dir, layout: PatchLayout, n_per_class: int = 4, n_folds: int = 5,
                      seed: int = 0, noise: float = 0.01) -> Path:
    """Write a tiny labelled WAV corpus (one pure tone frequency per class) plus manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_samples = features.WIN_LENGTH + (layout.n_frames - 1) * features.HOP_LENGTH
    t = np.arange(n_samples) / features.SAMPLE_RATE
    tones = {"low": 300.0, "mid": 1200.0, "high": 4000.0}
    rows = []
    k = 0
    for name, hz in tones.items():
        for j in range(n_per_class):
            x = 0.5 * np.sin(2 * np.pi * hz * t + rng.uniform(0, 2 * np.pi))
            x += noise * rng.standard_normal(n_samples)
            fname = f"{name}_{j}.wav"
            features.write_wav(out_dir / fname, x)
            rows.append((fname, name, k % n_folds + 1))
            k += 1
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "labels", "fold"])
        w.writerows(rows)
    return manifest
