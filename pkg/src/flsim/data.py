"""Datasets, CSV ingestion, text feature hashing and a synthetic generator.

Label 1 is always the positive (malicious: spam / malware) class.
"""
import csv
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import DataFormatError, FLSimError
from .seeding import rng_for

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

LABEL_MAP = {
    "1": 1,
    "0": 0,
    "spam": 1,
    "ham": 0,
    "malware": 1,
    "benign": 0,
}

_TOKEN_RE = re.compile(r"[^\W_]+")


class Sample(NamedTuple):
    features: np.ndarray
    label: int
    attribute: Optional[int]


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    attributes: Optional[np.ndarray] = None
    attribute_domain: Optional[int] = None
    # Positions of these rows in whatever dataset they were cut from.
    source_index: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(0, 1)
        y = np.array(self.y, dtype=np.int64).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise FLSimError("features and labels have different lengths")
        if X.shape[1] < 1:
            raise FLSimError("input_dim must be positive")
        if y.size and not np.all((y == 0) | (y == 1)):
            raise FLSimError("labels must be 0 or 1")
        attrs = self.attributes
        domain = self.attribute_domain
        if attrs is not None:
            attrs = np.array(attrs, dtype=np.int64).reshape(-1)
            if attrs.shape[0] != y.shape[0]:
                raise FLSimError("attributes and labels have different lengths")
            if domain is None:
                domain = int(attrs.max()) + 1 if attrs.size else 0
            if attrs.size and (attrs.min() < 0 or attrs.max() >= domain):
                raise FLSimError(f"attribute tags must lie in [0, {domain})")
            attrs.setflags(write=False)
        src = self.source_index
        if src is not None:
            src = np.array(src, dtype=np.int64)
            src.setflags(write=False)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "attributes", attrs)
        object.__setattr__(self, "attribute_domain", domain)
        object.__setattr__(self, "source_index", src)

    def __len__(self):
        return self.y.shape[0]

    def __getitem__(self, i):
        attr = None if self.attributes is None else int(self.attributes[i])
        return Sample(self.X[i], int(self.y[i]), attr)

    @property
    def input_dim(self):
        return self.X.shape[1]

    @property
    def n_pos(self):
        return int(self.y.sum())

    @property
    def n_neg(self):
        return len(self) - self.n_pos

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        src = idx if self.source_index is None else self.source_index[idx]
        return Dataset(
            self.X[idx],
            self.y[idx],
            None if self.attributes is None else self.attributes[idx],
            self.attribute_domain,
            src,
        )

    def with_labels(self, y):
        return Dataset(self.X, y, self.attributes, self.attribute_domain, self.source_index)

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        attrs = None
        if all(p.attributes is not None for p in parts):
            attrs = np.concatenate([p.attributes for p in parts])
        domain = max((p.attribute_domain or 0) for p in parts) if attrs is not None else None
        return cls(
            np.vstack([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            attrs,
            domain,
        )


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def tokenize(text):
    return _TOKEN_RE.findall(text.lower())


def hash_features(text, dim):
    """Hashed bag-of-words vector (FNV-1a over UTF-8 tokens), L2-normalised."""
    if dim < 2:
        raise FLSimError("hash dimension must be >= 2")
    vec = np.zeros(dim)
    for token in tokenize(text):
        vec[fnv1a_64(token.encode("utf-8")) % dim] += 1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


@dataclass(frozen=True)
class SynthSpec:
    n_pos: int
    n_neg: int
    input_dim: int = 16
    class_separation: float = 1.0
    noise_std: float = 1.0
    attribute_domain: Optional[int] = None
    # Added to every coordinate of both classes; used to fake a shifted
    # distribution for server-side pre-training data.
    center_shift: float = 0.0

    def __post_init__(self):
        if self.n_pos < 0 or self.n_neg < 0 or self.n_pos + self.n_neg < 1:
            raise FLSimError("need n_pos, n_neg >= 0 and at least one sample")
        if self.input_dim < 1 or self.class_separation <= 0 or self.noise_std <= 0:
            raise FLSimError("input_dim, class_separation and noise_std must be positive")
        if self.attribute_domain is not None and self.attribute_domain < 1:
            raise FLSimError("attribute_domain must be positive")


def synth_generate(spec, seed=0):
    """Two isotropic Gaussian blobs at +/- class_separation/2 per coordinate.

    Positives come first, then negatives. Attribute tags (when requested) are
    dealt round-robin within each class so every tag holds both labels.
    """
    rng = rng_for(seed, "synth")
    half = spec.class_separation / 2.0
    d = spec.input_dim
    pos = rng.normal(half + spec.center_shift, spec.noise_std, size=(spec.n_pos, d))
    neg = rng.normal(-half + spec.center_shift, spec.noise_std, size=(spec.n_neg, d))
    X = np.vstack([pos, neg])
    y = np.concatenate([np.ones(spec.n_pos, dtype=np.int64), np.zeros(spec.n_neg, dtype=np.int64)])
    attrs = None
    if spec.attribute_domain is not None:
        k = spec.attribute_domain
        attrs = np.concatenate([np.arange(spec.n_pos) % k, np.arange(spec.n_neg) % k])
    return Dataset(X, y, attrs, spec.attribute_domain)


def holdout_split(data, n_test_pos, n_test_neg, seed=0):
    """Hold out exactly ``n_test_pos`` positives and ``n_test_neg`` negatives."""
    rng = rng_for(seed, "holdout")
    pos = np.flatnonzero(data.y == 1)
    neg = np.flatnonzero(data.y == 0)
    if n_test_pos > pos.size or n_test_neg > neg.size:
        raise FLSimError("not enough samples for the requested test split")
    pos = rng.permutation(pos)
    neg = rng.permutation(neg)
    test = np.sort(np.concatenate([pos[:n_test_pos], neg[:n_test_neg]]))
    train = np.sort(np.concatenate([pos[n_test_pos:], neg[n_test_neg:]]))
    return data.subset(train), data.subset(test)


def train_test_split(data, test_fraction=0.1, seed=0):
    """Label-stratified split; each class contributes round(fraction * count)."""
    if not 0 < test_fraction < 1:
        raise FLSimError("test_fraction must be in (0, 1)")
    n_test_pos = int(np.floor(data.n_pos * test_fraction + 0.5))
    n_test_neg = int(np.floor(data.n_neg * test_fraction + 0.5))
    return holdout_split(data, n_test_pos, n_test_neg, seed)


def parse_label(raw, row=None):
    key = str(raw).strip().lower()
    if key not in LABEL_MAP:
        raise DataFormatError(f"unparseable label {raw!r}", row=row)
    return LABEL_MAP[key]


def load_csv(
    path,
    label_column,
    text_column=None,
    feature_columns=None,
    attribute_column=None,
    hash_dim=256,
    attribute_domain=None,
):
    """Read a headed, RFC 4180 CSV file into a Dataset.

    Exactly one of ``text_column`` (hashed with :func:`hash_features`) or
    ``feature_columns`` (numeric) must be given. Attribute values may be
    integers or arbitrary strings; strings are numbered in order of first
    appearance.
    """
    if (text_column is None) == (feature_columns is None):
        raise FLSimError("give exactly one of text_column or feature_columns")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        wanted = [label_column]
        wanted += [text_column] if text_column is not None else list(feature_columns)
        if attribute_column is not None:
            wanted.append(attribute_column)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataFormatError(f"missing column(s) {missing} in {path}")

        rows_X, rows_y, rows_attr = [], [], []
        attr_ids = {}
        for i, row in enumerate(reader):
            if None in row or any(v is None for v in row.values()):
                raise DataFormatError("inconsistent number of fields", row=i)
            rows_y.append(parse_label(row[label_column], row=i))
            if text_column is not None:
                rows_X.append(hash_features(row[text_column], hash_dim))
            else:
                try:
                    rows_X.append([float(row[c]) for c in feature_columns])
                except ValueError as exc:
                    raise DataFormatError(f"non-numeric feature ({exc})", row=i) from None
            if attribute_column is not None:
                raw = row[attribute_column].strip()
                try:
                    rows_attr.append(int(raw))
                except ValueError:
                    rows_attr.append(attr_ids.setdefault(raw, len(attr_ids)))

    width = hash_dim if text_column is not None else len(feature_columns)
    X = np.array(rows_X, dtype=np.float64).reshape(len(rows_y), width)
    attrs = np.array(rows_attr, dtype=np.int64) if attribute_column is not None else None
    return Dataset(X, np.array(rows_y, dtype=np.int64), attrs, attribute_domain)


def write_csv(data, path, label_column="label", attribute_column="attribute"):
    """Write numeric features as f0..f{d-1}; floats use repr for lossless reload."""
    cols = [f"f{j}" for j in range(data.input_dim)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = cols + [label_column]
        if data.attributes is not None:
            header.append(attribute_column)
        writer.writerow(header)
        for i in range(len(data)):
            row = [repr(float(v)) for v in data.X[i]] + [int(data.y[i])]
            if data.attributes is not None:
                row.append(int(data.attributes[i]))
            writer.writerow(row)
    return cols
