import csv
from collections import Counter

import numpy as np
import pytest

from astpe import features
from astpe import synthdata as sd
from astpe.patching import DESK_LAYOUT, PatchLayout


def task(kind, n=64, seed=0, **kw):
    return sd.SynthTask(kind, DESK_LAYOUT, n_samples=n, seed=seed, **kw)


def event_columns(grid, layout, band):
    rows = sd.tone_rows(layout, band)
    pf = layout.patch_frames
    return [c for c in range(layout.t_patches) if (grid[rows, c * pf:(c + 1) * pf] == 1.0).all()]


# ---- temporal order

def test_temporal_order_twin_property_by_enumeration():
    ds = sd.generate(task(sd.TEMPORAL_ORDER, 128))
    twins = sd.find_twins(ds, DESK_LAYOUT)
    assert (twins >= 0).all()
    assert (ds.y[twins] != ds.y).all()


def test_temporal_order_labels_follow_event_order():
    L = DESK_LAYOUT
    ds = sd.generate(task(sd.TEMPORAL_ORDER, 64, seed=3))
    for grid, label in zip(ds.x, ds.y):
        (t_low,), (t_high,) = event_columns(grid, L, 0), event_columns(grid, L, L.f_patches - 1)
        assert t_low != t_high
        assert label == int(t_low > t_high)


def test_temporal_order_events_fill_whole_patch_columns():
    L = DESK_LAYOUT
    ds = sd.generate(task(sd.TEMPORAL_ORDER, 8, noise=0.0))
    for grid in ds.x:
        p = sd.patchify(grid, L)
        lit = [i for i in range(L.n_patches) if p[i].any()]
        assert len(lit) == 2
        assert sorted(L.freq_of(i) for i in lit) == [0, L.f_patches - 1]


def test_temporal_order_errors():
    with pytest.raises(ValueError, match="at least 2"):
        sd.generate(sd.SynthTask(sd.TEMPORAL_ORDER, PatchLayout(1, 4, 4, 16), 4))
    with pytest.raises(ValueError, match="even"):
        sd.generate(task(sd.TEMPORAL_ORDER, 5))


@pytest.mark.parametrize("kind", sd.TASKS)
def test_deterministic_and_balanced(kind):
    a, b = sd.generate(task(kind, 60, seed=7)), sd.generate(task(kind, 60, seed=7))
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.x, sd.generate(task(kind, 60, seed=8)).x)
    assert a.x.shape == (60, DESK_LAYOUT.n_mels, DESK_LAYOUT.n_frames)
    assert a.x.min() >= 0 and a.x.max() <= 1
    if not a.multilabel:
        counts = Counter(a.y.tolist())
        assert len(counts) == a.n_classes
        assert max(counts.values()) - min(counts.values()) <= 1


def test_frequency_band_labels():
    L = DESK_LAYOUT
    ds = sd.generate(task(sd.FREQUENCY_BAND, 40))
    assert ds.n_classes == L.f_patches
    for grid, band in zip(ds.x, ds.y):
        assert len(event_columns(grid, L, int(band))) == 1


def test_tone_rows_inside_band_and_distinct_offsets():
    L = DESK_LAYOUT
    offsets = set()
    for band in range(L.f_patches):
        rows = sd.tone_rows(L, band)
        assert band * L.patch_mels <= rows.start and rows.stop <= (band + 1) * L.patch_mels
        offsets.add(rows.start - band * L.patch_mels)
    assert len(offsets) == L.f_patches


def test_event_count_and_multi_band():
    L = DESK_LAYOUT
    ds = sd.generate(task(sd.EVENT_COUNT, 30, noise=0.0, n_classes=4))
    for grid, lab in zip(ds.x, ds.y):
        assert sum(sd.patchify(grid, L).any(axis=1)) == lab + 1
    with pytest.raises(ValueError):
        sd.generate(sd.SynthTask(sd.EVENT_COUNT, PatchLayout(1, 1, 4, 16), 4, n_classes=3))
    mb = sd.generate(task(sd.MULTI_BAND, 30))
    assert mb.multilabel and mb.y.shape == (30, L.f_patches) and (mb.y.sum(axis=1) >= 1).all()


def test_unknown_task():
    with pytest.raises(ValueError, match="temporal-order"):
        sd.SynthTask("rhythm", DESK_LAYOUT)


def test_subset_keeps_ids_and_labels():
    ds = sd.generate(task(sd.FREQUENCY_BAND, 10))
    sub = ds.subset([3, 1])
    assert sub.ids == [ds.ids[3], ds.ids[1]]
    np.testing.assert_array_equal(sub.y, ds.y[[3, 1]])


# ---- corpora

L_SMALL = PatchLayout(4, 2, 4, 32)


def test_corpus_ten_clips_five_folds(tmp_path):
    manifest = sd.write_tone_corpus(tmp_path, L_SMALL, n_per_class=4, n_folds=5)
    rows = list(csv.DictReader(open(manifest)))[:10]
    with open(tmp_path / "ten.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["path", "labels", "fold"])
        w.writeheader()
        w.writerows(rows)
    corpus = sd.load_corpus(tmp_path / "ten.csv")
    groups = corpus.groups()
    assert sorted(groups) == [1, 2, 3, 4, 5]
    assert all(len(g) == 2 for g in groups.values())
    again = sd.load_corpus(tmp_path / "ten.csv")
    assert [e.path for e in again.entries] == [e.path for e in corpus.entries]


def test_corpus_to_dataset(tmp_path):
    corpus = sd.load_corpus(sd.write_tone_corpus(tmp_path, L_SMALL, n_per_class=2))
    mels = corpus.log_mels(L_SMALL.n_mels)
    stats = features.fit_stats(mels)
    ds = corpus.to_dataset(L_SMALL, stats)
    assert ds.x.shape == (6, L_SMALL.n_mels, L_SMALL.n_frames)
    assert corpus.class_names == ["high", "low", "mid"]
    assert ds.x.min() >= 0 and ds.x.max() <= 1
    # the tone's mel band is the brightest row
    peak = {name: set() for name in corpus.class_names}
    for grid, lab in zip(ds.x, ds.y):
        peak[corpus.class_names[lab]].add(int(grid.mean(axis=1).argmax()))
    assert max(peak["low"]) < min(peak["mid"]) and max(peak["mid"]) < min(peak["high"])


def _manifest(tmp_path, rows):
    path = tmp_path / "m.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "labels", "fold"])
        w.writerows(rows)
    return path


def test_corpus_missing_file_names_path(tmp_path):
    sd.write_tone_corpus(tmp_path, L_SMALL, n_per_class=1)
    m = _manifest(tmp_path, [("low_0.wav", "low", 1), ("ghost.wav", "mid", 2)])
    with pytest.raises(FileNotFoundError, match="ghost.wav"):
        sd.load_corpus(m)


def test_corpus_duplicate_across_folds_is_leakage(tmp_path):
    sd.write_tone_corpus(tmp_path, L_SMALL, n_per_class=1)
    m = _manifest(tmp_path, [("low_0.wav", "low", 1), ("low_0.wav", "low", 2)])
    with pytest.raises(sd.CorpusError, match="leakage"):
        sd.load_corpus(m)


def test_corpus_fold_gap_and_bad_columns(tmp_path):
    sd.write_tone_corpus(tmp_path, L_SMALL, n_per_class=1)
    with pytest.raises(sd.CorpusError, match="gaps"):
        sd.load_corpus(_manifest(tmp_path, [("low_0.wav", "low", 1), ("mid_0.wav", "mid", 3)]))
    (tmp_path / "bad.csv").write_text("file,label\nx.wav,a\n")
    with pytest.raises(sd.CorpusError, match="columns"):
        sd.load_corpus(tmp_path / "bad.csv")


def test_corpus_malformed_wav(tmp_path):
    (tmp_path / "junk.wav").write_bytes(b"RIFF0000WAVEjunk")
    with pytest.raises(features.AudioFormatError, match="junk.wav"):
        sd.load_corpus(_manifest(tmp_path, [("junk.wav", "a", 1)]))


def test_multilabel_manifest(tmp_path):
    sd.write_tone_corpus(tmp_path, L_SMALL, n_per_class=1)
    corpus = sd.load_corpus(_manifest(tmp_path, [("low_0.wav", "low;hum", 1), ("mid_0.wav", "mid", 2)]))
    assert corpus.multilabel
    np.testing.assert_array_equal(corpus.targets(), [[1, 1, 0], [0, 0, 1]])
