"""Metrics and positional-embedding similarity diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .patching import PatchLayout


@dataclass
class MAPResult:
    value: float
    per_class: dict[int, float] = field(default_factory=dict)
    skipped: list[int] = field(default_factory=list)

    def __float__(self):
        return self.value


def average_precision(scores: np.ndarray, targets: np.ndarray) -> float:
    """Precision at each positive's rank, averaged over positives.

    Ranking is by descending score with ties broken by lower clip index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    order = np.lexsort((np.arange(len(scores)), -scores))
    hits = targets[order] > 0
    n_pos = int(hits.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined without positives")
    ranks = np.flatnonzero(hits) + 1
    precision_at_hits = np.arange(1, n_pos + 1) / ranks
    return float(precision_at_hits.mean())


def mean_average_precision(scores: np.ndarray, targets: np.ndarray) -> MAPResult:
    """Class-averaged AP; classes without positives are skipped and reported."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.size == 0:
        raise ValueError("empty prediction set")
    if scores.shape != targets.shape:
        raise ValueError(f"scores {scores.shape} and targets {targets.shape} differ")
    if not np.isin(targets, (0, 1)).all():
        raise ValueError("targets must be binary")
    if scores.ndim == 1:
        scores, targets = scores[:, None], targets[:, None]
    res = MAPResult(float("nan"))
    for c in range(scores.shape[1]):
        if targets[:, c].any():
            res.per_class[c] = average_precision(scores[:, c], targets[:, c])
        else:
            res.skipped.append(c)
    if not res.per_class:
        raise ValueError("no class has a positive target")
    res.value = float(np.mean(list(res.per_class.values())))
    return res


def accuracy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Argmax accuracy; ``targets`` are integer labels or one-hot rows.

    ``np.argmax`` returns the first maximum, so ties go to the lowest class.
    """
    probs = np.asarray(probs)
    targets = np.asarray(targets)
    labels = targets.argmax(axis=1) if targets.ndim == 2 else targets
    if len(labels) == 0:
        raise ValueError("empty prediction set")
    return float(np.mean(probs.argmax(axis=1) == labels))


# ---------------------------------------------------------------- similarity


def cosine_similarity_matrix(vectors: np.ndarray) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    unit = v / np.where(norms > 0, norms, 1.0)[:, None]
    sim = unit @ unit.T
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, np.where(norms > 0, 1.0, 0.0))
    return np.clip(sim, -1.0, 1.0)


def absolute_similarity(table: np.ndarray, layout: PatchLayout, axis: str) -> np.ndarray:
    """Cosine similarity between per-time (or per-band) concatenated embedding rows."""
    table = np.asarray(table)
    grid = table.reshape(layout.t_patches, layout.f_patches, -1)  # time-major
    if axis == "time":
        vecs = grid.reshape(layout.t_patches, -1)
    elif axis == "freq":
        vecs = grid.transpose(1, 0, 2).reshape(layout.f_patches, -1)
    else:
        raise ValueError(f"axis must be 'time' or 'freq', got {axis!r}")
    return cosine_similarity_matrix(vecs)


class NoPositionTableError(ValueError):
    pass


def pe_similarity(params: dict, layout: PatchLayout, axis: str, block: int = 0) -> np.ndarray:
    """Similarity matrix from an absolute table or from one block's relative tables.

    ``params`` maps names to arrays (or anything with a ``.data`` array).
    """
    arrays = {k: getattr(v, "data", v) for k, v in params.items()}
    if "pe.absolute" in arrays:
        return absolute_similarity(arrays["pe.absolute"], layout, axis)
    key = f"blocks.{block}.rel.{'time' if axis == 'time' else 'freq'}"
    if axis not in ("time", "freq"):
        raise ValueError(f"axis must be 'time' or 'freq', got {axis!r}")
    if key in arrays:
        return cosine_similarity_matrix(arrays[key])
    if any(".peg." in k for k in arrays):
        raise NoPositionTableError(
            "conditional PE has no static table: its embeddings are generated from the input")
    raise NoPositionTableError("this model has no positional table to inspect (none/ALiBi variants)")


def write_matrix_csv(path, matrix: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(matrix):
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])
