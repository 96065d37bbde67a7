"""Encoding, CSV ingestion and dataset splitting.

Encoded layout follows the schema feature order: reals are standardized,
positive reals are ``log1p``-transformed then standardized, categoricals
are one-hot. Statistics come from the training split only and are reused
unchanged for every other split.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError
from .schema import CATEGORICAL, POSITIVE

STD_FLOOR = 1e-6
MAD_FLOOR = 1e-6


def lower_median(v):
    """Median with even-length ties resolved to the lower middle element."""
    v = np.sort(np.asarray(v, dtype=np.float64))
    if len(v) == 0:
        raise DataError("median of empty column")
    return float(v[(len(v) - 1) // 2])


def mad(v):
    """median(|v - median(v)|), both medians taken as lower medians."""
    med = lower_median(v)
    return lower_median(np.abs(np.asarray(v, dtype=np.float64) - med))


@dataclass
class Encoder:
    """Fitted per-column statistics for one schema.

    ``mean``/``std`` are in the transformed space (log1p for positive
    reals); ``mad`` is measured on the encoded column, floored at 1e-6.
    Categorical entries hold 0/1/1.
    """

    schema: object
    mean: np.ndarray
    std: np.ndarray
    mad: np.ndarray
    raw_mad: np.ndarray = field(default=None)

    @classmethod
    def fit(cls, schema, features):
        features = np.asarray(features, dtype=np.float64)
        if len(features) == 0:
            raise DataError("cannot fit encoder on empty data")
        nf = schema.n_features
        mean, std, mad_, raw_mad = np.zeros(nf), np.ones(nf), np.ones(nf), np.ones(nf)
        for j, a in enumerate(schema.features):
            if not a.numeric:
                continue
            col = features[:, j]
            raw_mad[j] = max(mad(col), MAD_FLOOR)
            t = np.log1p(col) if a.kind == POSITIVE else col
            mean[j] = t.mean()
            std[j] = t.std()
            z = (t - mean[j]) / max(std[j], STD_FLOOR)
            mad_[j] = max(mad(z), MAD_FLOOR)
        return cls(schema, mean, std, mad_, raw_mad)

    def encode(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            return self.encode(features[None, :])[0]
        sch = self.schema
        if features.shape[1] != sch.n_features:
            raise DataError(f"expected {sch.n_features} feature columns, got {features.shape[1]}")
        out = np.zeros((len(features), sch.encoded_width))
        for j, a in enumerate(sch.features):
            col = features[:, j]
            cs = sch.columns(j)
            if a.kind == CATEGORICAL:
                codes = col.astype(np.intp)
                if np.any(codes != col) or np.any(codes < 0) or np.any(codes >= a.cardinality):
                    bad = int(np.flatnonzero((codes != col) | (codes < 0) | (codes >= a.cardinality))[0])
                    raise DataError(f"{a.name}: category {col[bad]!r} outside 0..{a.cardinality - 1}",
                                    bad + 1)
                out[np.arange(len(col)), cs.start + codes] = 1.0
            else:
                t = np.log1p(col) if a.kind == POSITIVE else col
                out[:, cs.start] = (t - self.mean[j]) / max(self.std[j], STD_FLOOR)
        return out

    def decode(self, encoded):
        """Encoded (possibly soft) rows back to raw feature values."""
        encoded = np.asarray(encoded, dtype=np.float64)
        if encoded.ndim == 1:
            return self.decode(encoded[None, :])[0]
        sch = self.schema
        out = np.zeros((len(encoded), sch.n_features))
        for j, a in enumerate(sch.features):
            cs = sch.columns(j)
            if a.kind == CATEGORICAL:
                out[:, j] = np.argmax(encoded[:, cs], axis=1)
            else:
                t = encoded[:, cs.start] * max(self.std[j], STD_FLOOR) + self.mean[j]
                out[:, j] = np.maximum(np.expm1(t), 0.0) if a.kind == POSITIVE else t
        return out

    def harden(self, encoded):
        """Replace categorical blocks by their argmax one-hot; numerics unchanged."""
        encoded = np.array(encoded, dtype=np.float64, copy=True)
        squeeze = encoded.ndim == 1
        if squeeze:
            encoded = encoded[None, :]
        for j, a in enumerate(self.schema.features):
            if a.kind == CATEGORICAL:
                cs = self.schema.columns(j)
                k = np.argmax(encoded[:, cs], axis=1)
                encoded[:, cs] = 0.0
                encoded[np.arange(len(encoded)), cs.start + k] = 1.0
        return encoded[0] if squeeze else encoded

    def numeric_mad(self):
        """Encoded-space MAD per encoded column (1.0 for categorical columns)."""
        out = np.ones(self.schema.encoded_width)
        for j, a in enumerate(self.schema.features):
            if a.numeric:
                out[self.schema.offsets[j]] = self.mad[j]
        return out


class Dataset:
    """Raw feature matrix plus targets, encoded with a (shared) encoder."""

    def __init__(self, schema, features, targets=None, encoder=None, truth=None):
        self.schema = schema
        self.features = np.asarray(features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] != schema.n_features:
            raise DataError("feature matrix does not match schema")
        self.targets = {k: np.asarray(v) for k, v in (targets or {}).items()}
        self.encoder = encoder if encoder is not None else Encoder.fit(schema, self.features)
        self.X = self.encoder.encode(self.features)
        self.truth = truth

    def __len__(self):
        return len(self.features)

    def target(self, name=None):
        if name is None:
            if not self.schema.label_names:
                raise ContractError("schema has no label column")
            name = self.schema.label_names[0]
        if name not in self.targets:
            raise ContractError(f"no target column {name!r}")
        return self.targets[name]

    @property
    def labels(self):
        return self.target()

    @property
    def t(self):
        return self.targets[self.schema.treatment]

    @property
    def y(self):
        return self.targets[self.schema.outcome]

    def subset(self, rows, encoder=None):
        rows = np.asarray(rows, dtype=np.intp)
        truth = self.truth.subset(rows) if self.truth is not None else None
        return Dataset(self.schema, self.features[rows],
                       {k: v[rows] for k, v in self.targets.items()},
                       encoder if encoder is not None else self.encoder, truth)

    def split(self, ratios=(0.6, 0.2, 0.2), seed=0):
        """Shuffled disjoint splits; the encoder is refit on the first split."""
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ContractError("split ratios must sum to 1")
        n = len(self)
        order = np.random.default_rng(seed).permutation(n)
        sizes = [int(round(r * n)) for r in ratios[:-1]]
        cuts = np.cumsum(sizes)
        parts = np.split(order, cuts)
        train_rows = np.sort(parts[0])
        enc = Encoder.fit(self.schema, self.features[train_rows])
        return tuple(self.subset(np.sort(p), enc) for p in parts)

    def refit(self):
        return Dataset(self.schema, self.features, self.targets, None, self.truth)


# ---------------------------------------------------------------- CSV

def _fmt(v):
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_csv(dataset, path):
    sch = dataset.schema
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([a.name for a in sch.attributes])
        fidx = {a.name: i for i, a in enumerate(sch.features)}
        for r in range(len(dataset)):
            row = []
            for a in sch.attributes:
                if a.is_feature:
                    row.append(_fmt(dataset.features[r, fidx[a.name]]))
                else:
                    row.append(_fmt(dataset.targets[a.name][r]))
            w.writerow(row)


def read_table(path, schema):
    """Parse a CSV into (features, targets) validated against ``schema``.

    Row numbers in errors count the header as line 1.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty CSV file") from None
        names = [a.name for a in schema.attributes]
        missing = [n for n in names if n not in header]
        if missing:
            raise DataError(f"CSV header lacks schema columns {missing}", 1)
        pos = [header.index(n) for n in names]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", lineno)
            vals = []
            for p, a in zip(pos, schema.attributes):
                cell = row[p].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{a.name}: cannot parse {cell!r} as a number", lineno) from None
                if a.kind == CATEGORICAL and (not v.is_integer() or not 0 <= v < a.cardinality):
                    raise DataError(f"{a.name}: category {cell} outside 0..{a.cardinality - 1}", lineno)
                if a.kind == POSITIVE and v < 0:
                    raise DataError(f"{a.name}: negative value {cell} for positive-real", lineno)
                vals.append(v)
            rows.append(vals)
    table = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(schema.attributes))
    features, targets = [], {}
    for j, a in enumerate(schema.attributes):
        if a.is_feature:
            features.append(table[:, j])
        else:
            col = table[:, j]
            allowed = (-1, 1) if a.role == "label" else (0, 1)
            if not np.all(np.isin(col, allowed)):
                raise DataError(f"{a.name}: {a.role} values must be in {set(allowed)}")
            targets[a.name] = col.astype(np.int64)
    return np.column_stack(features) if features else np.zeros((len(table), 0)), targets


def ingest_csv(path, schema, encoder=None):
    features, targets = read_table(path, schema)
    if len(features) == 0:
        raise DataError("CSV has no data rows")
    return Dataset(schema, features, targets, encoder)


def encode_row(encoder, row):
    return encoder.encode(np.asarray(row, dtype=np.float64))


def decode_row(encoder, encoded):
    return encoder.decode(np.asarray(encoded, dtype=np.float64))

