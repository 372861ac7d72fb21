"""Vertically partitioned datasets: synthetic generation and CSV ingestion.

A vertical dataset splits the columns of one feature matrix across parties;
every party holds the same rows in the same order, and the labels live with
the server. The synthetic generator draws Gaussian class clusters with a
controlled minimum separation between class means (in units of the noise
standard deviation), which makes task difficulty a single knob.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VerticalDataset",
    "partition_columns",
    "make_synthetic",
    "write_dataset_csv",
    "load_dataset_csv",
]

DATASET_FORMAT_VERSION = 1


@dataclass
class VerticalDataset:
    """Per-party feature blocks with aligned rows; labels held by the server."""

    train_features: list[np.ndarray]
    train_labels: np.ndarray
    test_features: list[np.ndarray]
    test_labels: np.ndarray
    feature_names: list[list[str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.train_features:
            raise ValueError("dataset needs at least one party block")
        if len(self.test_features) != len(self.train_features):
            raise ValueError("train and test must have the same party count")
        n_train = self.train_features[0].shape[0]
        n_test = self.test_features[0].shape[0]
        for m, (tr, te) in enumerate(zip(self.train_features, self.test_features)):
            if tr.ndim != 2 or te.ndim != 2:
                raise ValueError(f"party {m} blocks must be 2-D")
            if tr.shape[0] != n_train or te.shape[0] != n_test:
                raise ValueError(f"party {m} row count disagrees with party 0")
            if tr.shape[1] != te.shape[1]:
                raise ValueError(f"party {m} train/test column counts differ")
        if self.train_labels.shape != (n_train,) or self.test_labels.shape != (n_test,):
            raise ValueError("labels must be 1-D and row-aligned with the feature blocks")
        if not self.feature_names:
            widths = [blk.shape[1] for blk in self.train_features]
            names, start = [], 0
            for w in widths:
                names.append([f"f{start + j}" for j in range(w)])
                start += w
            self.feature_names = names
        if [len(n) for n in self.feature_names] != [b.shape[1] for b in self.train_features]:
            raise ValueError("feature_names widths do not match party blocks")
        flat = [n for block in self.feature_names for n in block]
        if len(set(flat)) != len(flat):
            raise ValueError("feature names must be disjoint across parties")

    @property
    def parties(self) -> int:
        return len(self.train_features)

    @property
    def n_train(self) -> int:
        return self.train_features[0].shape[0]

    @property
    def n_test(self) -> int:
        return self.test_features[0].shape[0]

    @property
    def n_features(self) -> int:
        return sum(b.shape[1] for b in self.train_features)

    @property
    def n_classes(self) -> int:
        peak = -1
        if self.train_labels.size:
            peak = max(peak, int(self.train_labels.max()))
        if self.test_labels.size:
            peak = max(peak, int(self.test_labels.max()))
        return peak + 1


def partition_columns(n_features: int, parties: int) -> list[list[int]]:
    """Assign column indices to parties in contiguous, near-even blocks."""
    if parties < 1 or n_features < parties:
        raise ValueError(
            f"need at least one column per party, got {n_features} columns / {parties} parties"
        )
    return [chunk.tolist() for chunk in np.array_split(np.arange(n_features), parties)]


def _balanced_labels(n: int, classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % classes)


def make_synthetic(
    n_train: int,
    n_test: int,
    n_features: int,
    classes: int,
    parties: int,
    seed: int,
    class_sep: float = 3.0,
) -> VerticalDataset:
    """Gaussian class clusters, unit noise, contiguous feature blocks per party.

    Class means are drawn at random and rescaled so the *minimum* pairwise
    distance between means equals class_sep noise standard deviations.
    """
    if classes < 1:
        raise ValueError(f"classes must be positive, got {classes}")
    if n_train < 0 or n_test < 0:
        raise ValueError("row counts must be non-negative")
    if class_sep < 0:
        raise ValueError(f"class_sep must be non-negative, got {class_sep}")
    blocks = partition_columns(n_features, parties)
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(classes, n_features))
    if classes > 1:
        dists = [
            float(np.linalg.norm(means[i] - means[j]))
            for i in range(classes)
            for j in range(i + 1, classes)
        ]
        means *= class_sep / min(dists)

    def draw(n: int) -> tuple[list[np.ndarray], np.ndarray]:
        labels = _balanced_labels(n, classes, rng)
        x = means[labels] + rng.normal(size=(n, n_features))
        return [x[:, cols] for cols in blocks], labels

    train_blocks, train_labels = draw(n_train)
    test_blocks, test_labels = draw(n_test)
    names = [[f"f{c}" for c in cols] for cols in blocks]
    return VerticalDataset(
        train_features=train_blocks,
        train_labels=train_labels,
        test_features=test_blocks,
        test_labels=test_labels,
        feature_names=names,
    )


def _write_split_csv(path: str, blocks: list[np.ndarray], labels: np.ndarray, header: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        if labels.size == 0:
            return
        joined = np.hstack(blocks)
        for row, label in zip(joined, labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def write_dataset_csv(data: VerticalDataset, out_dir: str, label_col: str = "label") -> dict[str, str]:
    """Write train.csv, test.csv, and the party-assignment sidecar parties.json.

    The CSVs carry one header row (feature names in party order, then the
    label column); floats are written as repr() so reloading is lossless and
    identical seeds produce byte-identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    header = [n for block in data.feature_names for n in block] + [label_col]
    paths = {
        "train": os.path.join(out_dir, "train.csv"),
        "test": os.path.join(out_dir, "test.csv"),
        "parties": os.path.join(out_dir, "parties.json"),
    }
    _write_split_csv(paths["train"], data.train_features, data.train_labels, header)
    _write_split_csv(paths["test"], data.test_features, data.test_labels, header)
    sidecar = {
        "version": DATASET_FORMAT_VERSION,
        "label": label_col,
        "parties": data.feature_names,
    }
    with open(paths["parties"], "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    return paths


def _read_split_csv(
    path: str, party_names: list[list[str]], label_col: str
) -> tuple[list[np.ndarray], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        col_of = {name: i for i, name in enumerate(header)}
        if label_col not in col_of:
            raise ValueError(f"{path}: missing label column {label_col!r}")
        for block in party_names:
            for name in block:
                if name not in col_of:
                    raise ValueError(f"{path}: missing feature column {name!r}")
        rows = list(reader)
    n = len(rows)
    labels = np.zeros(n, dtype=np.int64)
    matrix = np.zeros((n, len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}")
        matrix[i] = [float(v) for v in row]
        labels[i] = int(row[col_of[label_col]])
    if labels.size and labels.min() < 0:
        raise ValueError(f"{path}: labels must be non-negative integers")
    blocks = [matrix[:, [col_of[name] for name in block]] for block in party_names]
    return blocks, labels


def load_dataset_csv(
    train_path: str, test_path: str, parties_path: str, label_col: str | None = None
) -> VerticalDataset:
    """Load a dataset written by write_dataset_csv (or hand-built to its schema)."""
    with open(parties_path) as fh:
        sidecar = json.load(fh)
    if sidecar.get("version") != DATASET_FORMAT_VERSION:
        raise ValueError(
            f"{parties_path}: unsupported dataset format version {sidecar.get('version')!r}"
        )
    party_names = [list(block) for block in sidecar["parties"]]
    label = label_col or sidecar.get("label", "label")
    train_blocks, train_labels = _read_split_csv(train_path, party_names, label)
    test_blocks, test_labels = _read_split_csv(test_path, party_names, label)
    return VerticalDataset(
        train_features=train_blocks,
        train_labels=train_labels,
        test_features=test_blocks,
        test_labels=test_labels,
        feature_names=party_names,
    )
