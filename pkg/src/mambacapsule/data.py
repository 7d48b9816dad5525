"""Beat datasets: CSV ingestion, stratified splitting, synthetic ECG beats.

The CSV layout is one beat per row, ``L`` sample columns followed by the
integer class label, no header (a non-numeric first row is treated as a
header and skipped).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParseError

BEAT_LENGTH = 187
MITBIH_CLASSES = ("N", "S", "V", "F", "Q")
PTB_CLASSES = ("Normal", "Myocardial Infarction")
SYNTH_CLASSES = ("N", "S")

# synthetic wave centres as fractions of the beat length
P_PHASE = 0.36
R_PHASE = 0.50
T_PHASE = 0.85


@dataclass(frozen=True)
class BeatRecord:
    samples: np.ndarray
    label: int


@dataclass(frozen=True)
class LabelVocabulary:
    names: tuple

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate class names in {self.names}")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown class {name!r}; vocabulary is {list(self.names)}") from None


VOCABULARIES = {
    "mitbih": LabelVocabulary(MITBIH_CLASSES),
    "ptb": LabelVocabulary(PTB_CLASSES),
    "synthetic": LabelVocabulary(SYNTH_CLASSES),
}


@dataclass
class DatasetSplit:
    train: list
    test: list
    seed: int


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def load_csv(path, L: int = BEAT_LENGTH, K: int = 5) -> list[BeatRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for r, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if r == 1 and not all(_is_number(f) for f in fields):
                continue
            if len(fields) != L + 1:
                raise ParseError(f"expected {L + 1} fields at row {r}, got {len(fields)}")
            try:
                values = np.array(fields, dtype=np.float64)
            except ValueError:
                col = next(i for i, f in enumerate(fields, start=1) if not _is_number(f))
                raise ParseError(f"non-numeric field {fields[col - 1]!r} at row {r}, column {col}") from None
            label = values[-1]
            if not np.isfinite(label) or label != int(label) or not 0 <= label < K:
                raise ParseError(f"label {fields[-1]!r} at row {r}, column {L + 1} is not an integer in [0, {K})")
            records.append(BeatRecord(values[:L], int(label)))
    return records


def write_csv(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(",".join(repr(float(v)) for v in rec.samples) + f",{rec.label}\n")


def to_arrays(records) -> tuple[np.ndarray, np.ndarray]:
    if not records:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    x = np.stack([r.samples for r in records]).astype(np.float64)
    y = np.array([r.label for r in records], dtype=np.int64)
    return x, y


def class_counts(records, K: int) -> np.ndarray:
    return np.bincount([r.label for r in records], minlength=K)


def stratified_split(records, ratio: float = 0.8, seed: int = 0) -> DatasetSplit:
    """Per-class shuffle, first round(ratio * n_c) of each class to train; order within split is by source position."""
    rng = np.random.default_rng(seed)
    labels = np.array([r.label for r in records], dtype=np.int64)
    train_idx, test_idx = [], []
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        idx = idx[rng.permutation(idx.size)]
        n_train = int(round(ratio * idx.size))
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    tr = np.sort(np.concatenate(train_idx)) if train_idx else np.zeros(0, dtype=np.int64)
    te = np.sort(np.concatenate(test_idx)) if test_idx else np.zeros(0, dtype=np.int64)
    return DatasetSplit([records[i] for i in tr], [records[i] for i in te], seed)


def _bump(t, centre, width):
    return np.exp(-0.5 * ((t - centre) / width) ** 2)


def synth_beats(n_per_class: int, L: int = BEAT_LENGTH, seed: int = 0,
                noise: float = 0.03) -> list[BeatRecord]:
    """Two-class synthetic beats: class 0 has a P bump before the R spike, class 1 lacks it.

    Each beat carries a T wave near the end, amplitude jitter and white noise,
    and is min-max scaled to [0, 1].
    """
    rng = np.random.default_rng(seed)
    t = np.arange(L, dtype=np.float64)
    p = _bump(t, P_PHASE * L, 0.025 * L)
    r = _bump(t, R_PHASE * L, 0.008 * L)
    q = _bump(t, R_PHASE * L - 0.02 * L, 0.006 * L)
    tw = _bump(t, T_PHASE * L, 0.04 * L)
    records = []
    for label in (0, 1):
        for _ in range(n_per_class):
            amp = 1.0 + 0.1 * rng.standard_normal(4)
            p_amp = 0.3 * amp[0] if label == 0 else 0.0
            x = p_amp * p + amp[1] * r - 0.1 * amp[2] * q + 0.3 * amp[3] * tw
            x = x + noise * rng.standard_normal(L)
            lo, hi = x.min(), x.max()
            records.append(BeatRecord((x - lo) / (hi - lo), label))
    return records
