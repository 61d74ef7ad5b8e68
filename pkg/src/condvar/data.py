"""Observed samples, the (label, id) grouping partition, and CSV ingest.

Grouping follows one rule: observations that share the exact pair
(label, id) form one group; observations with no id are never grouped.
The grouped-observation count c = n - m drives how much signal the
conditional variance penalty sees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Sample",
    "Dataset",
    "GroupIndex",
    "DataFormatError",
    "build_group_index",
    "augment_with_groups",
    "load_csv",
    "save_csv",
]


class DataFormatError(ValueError):
    """Raised for malformed data files."""


@dataclass(frozen=True)
class Sample:
    """One observation: feature vector, class label, optional id token."""

    features: np.ndarray
    label: int
    id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        if self.features.ndim != 1:
            raise ValueError("features must be one-dimensional")
        if self.label < 0:
            raise ValueError("labels are class indices >= 0")


@dataclass
class Dataset:
    samples: list
    p: int
    n_classes: int

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("a dataset needs at least one sample")
        for s in self.samples:
            if s.features.shape != (self.p,):
                raise ValueError("sample feature dimension differs from dataset p")
            if s.label >= self.n_classes:
                raise ValueError(f"label {s.label} >= class count {self.n_classes}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def features(self) -> np.ndarray:
        return np.stack([s.features for s in self.samples])

    @property
    def labels(self) -> np.ndarray:
        return np.asarray([s.label for s in self.samples], dtype=int)

    @property
    def ids(self) -> list:
        return [s.id for s in self.samples]

    @staticmethod
    def from_arrays(features, labels, ids=None, n_classes=None) -> "Dataset":
        features = np.asarray(features, dtype=float)
        labels = np.asarray(labels, dtype=int)
        if ids is None:
            ids = [None] * len(labels)
        if n_classes is None:
            n_classes = int(labels.max()) + 1
        samples = [
            Sample(features[i], int(labels[i]), ids[i]) for i in range(len(labels))
        ]
        return Dataset(samples, features.shape[1], n_classes)


@dataclass(frozen=True)
class GroupIndex:
    """Partition of {0..n-1} into index groups.

    groups  tuple of int arrays, disjoint and covering
    n       total sample count
    m       group count
    c       grouped-observation count, n - m = sum(|S_j| - 1)
    """

    groups: tuple
    n: int

    def __post_init__(self):
        groups = tuple(np.asarray(g, dtype=int) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        flat = np.concatenate(groups) if groups else np.empty(0, dtype=int)
        if len(flat) != self.n or len(np.unique(flat)) != self.n:
            raise ValueError("groups must partition the index range exactly")
        if self.n and (flat.min() < 0 or flat.max() >= self.n):
            raise ValueError("group indices out of range")

    @property
    def m(self) -> int:
        return len(self.groups)

    @property
    def c(self) -> int:
        return self.n - self.m

    @property
    def sizes(self) -> np.ndarray:
        return np.asarray([len(g) for g in self.groups], dtype=int)

    def max_size(self) -> int:
        return int(self.sizes.max())

    def nontrivial(self) -> list:
        """Groups with at least two members."""
        return [g for g in self.groups if len(g) >= 2]


def build_group_index(dataset: Dataset) -> GroupIndex:
    """Group observations sharing the exact (label, id) pair.

    Samples without an id become singleton groups. Group order is
    first-occurrence order, which keeps batching deterministic.
    """
    order: list = []
    members: dict = {}
    for i, s in enumerate(dataset.samples):
        if s.id is None:
            order.append([i])
            continue
        key = (s.label, s.id)
        if key in members:
            members[key].append(i)
        else:
            lst = [i]
            members[key] = lst
            order.append(lst)
    return GroupIndex(tuple(np.asarray(g, dtype=int) for g in order), len(dataset))


def augment_with_groups(dataset: Dataset, transform, count_per_sample: int, selection) -> Dataset:
    """Append transformed copies of the selected samples, tying each copy to
    its source through a shared id (the source's index).

    The source sample also receives that id, so source + copies form one
    group of size 1 + count_per_sample after ``build_group_index``.
    """
    if count_per_sample < 1:
        raise ValueError("count_per_sample must be >= 1")
    selection = sorted(int(i) for i in selection)
    for i in selection:
        if not 0 <= i < len(dataset):
            raise IndexError(f"selection index {i} out of range")
    chosen = set(selection)
    new_samples = []
    for i, s in enumerate(dataset.samples):
        if i in chosen:
            new_samples.append(Sample(s.features, s.label, f"aug{i}"))
        else:
            new_samples.append(s)
    for i in selection:
        src = dataset.samples[i]
        for _ in range(count_per_sample):
            feats = np.asarray(transform(src.features.copy()), dtype=float)
            if feats.shape != (dataset.p,):
                raise ValueError("transform must preserve the feature dimension")
            new_samples.append(Sample(feats, src.label, f"aug{i}"))
    return Dataset(new_samples, dataset.p, dataset.n_classes)


def save_csv(dataset: Dataset, path) -> None:
    """Header ``id,y,x0,...,x{p-1}``; empty id field means absent; floats are
    written with shortest round-trip precision so load(save(d)) == d bitwise."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cols = ",".join(f"x{j}" for j in range(dataset.p))
        fh.write(f"id,y,{cols}\n")
        for s in dataset.samples:
            ident = "" if s.id is None else str(s.id)
            if "," in ident or "\n" in ident:
                raise DataFormatError("id tokens may not contain commas or newlines")
            feats = ",".join(repr(float(v)) for v in s.features)
            fh.write(f"{ident},{s.label},{feats}\n")


def load_csv(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() != ""]
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) < 3 or header[0] != "id" or header[1] != "y":
        raise DataFormatError(f"{path}: expected header 'id,y,x0,...'")
    expected = ["id", "y"] + [f"x{j}" for j in range(len(header) - 2)]
    if header != expected:
        raise DataFormatError(f"{path}: malformed header {header!r}")
    p = len(header) - 2
    samples = []
    for ln_no, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != p + 2:
            raise DataFormatError(f"{path}:{ln_no}: expected {p + 2} fields, got {len(parts)}")
        ident = parts[0] if parts[0] != "" else None
        try:
            label = int(parts[1])
            feats = np.asarray([float(v) for v in parts[2:]], dtype=float)
        except ValueError as exc:
            raise DataFormatError(f"{path}:{ln_no}: non-numeric value ({exc})") from None
        samples.append(Sample(feats, label, ident))
    if not samples:
        raise DataFormatError(f"{path}: no data rows")
    n_classes = max(s.label for s in samples) + 1
    return Dataset(samples, p, n_classes)
