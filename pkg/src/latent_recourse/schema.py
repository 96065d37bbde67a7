"""Attribute schemas.

A schema file has one attribute per line::

    # name            kind             role
    MaritalStatus     categorical:3    mutable
    Age               categorical:4    immutable
    MaxBillAmount     positive-real    mutable
    label             binary           label

The name may contain spaces; kind and role are the last two tokens.
Kinds: ``real``, ``positive-real``, ``categorical:N`` (N >= 2) and
``binary`` (only for the non-feature roles ``label``, ``treatment`` and
``outcome``).
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ContractError, DataError

REAL = "real"
POSITIVE = "positive-real"
CATEGORICAL = "categorical"
BINARY = "binary"

FEATURE_ROLES = ("mutable", "immutable")
TARGET_ROLES = ("label", "treatment", "outcome")


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str
    cardinality: int = 0
    role: str = "mutable"

    @property
    def is_feature(self):
        return self.role in FEATURE_ROLES

    @property
    def immutable(self):
        return self.role == "immutable"

    @property
    def numeric(self):
        return self.kind in (REAL, POSITIVE)

    @property
    def width(self):
        """Number of encoded columns."""
        return self.cardinality if self.kind == CATEGORICAL else 1

    def kind_token(self):
        return f"categorical:{self.cardinality}" if self.kind == CATEGORICAL else self.kind


def _parse_kind(token, line):
    token = token.lower()
    if token in ("real", "gaussian"):
        return REAL, 0
    if token in ("positive-real", "positive", "pos"):
        return POSITIVE, 0
    if token == "binary":
        return BINARY, 0
    if token.startswith("categorical:") or token.startswith("cat:"):
        try:
            card = int(token.split(":", 1)[1])
        except ValueError:
            raise DataError(f"bad cardinality in {token!r}", line) from None
        if card < 2:
            raise DataError(f"categorical cardinality must be >= 2, got {card}", line)
        return CATEGORICAL, card
    raise DataError(f"unknown kind {token!r}", line)


class AttributeSchema:
    def __init__(self, attributes):
        self.attributes = tuple(attributes)
        seen = set()
        for a in self.attributes:
            if a.name in seen:
                raise DataError(f"duplicate attribute name {a.name!r}")
            seen.add(a.name)
            if a.is_feature and a.kind == BINARY:
                raise DataError(f"{a.name}: binary kind is reserved for label/treatment/outcome")
            if not a.is_feature and a.kind != BINARY:
                raise DataError(f"{a.name}: role {a.role} requires kind binary")
        if not self.features:
            raise DataError("no attributes")
        for role in ("treatment", "outcome"):
            if sum(a.role == role for a in self.attributes) > 1:
                raise DataError(f"at most one {role} column allowed")

    def __eq__(self, other):
        return isinstance(other, AttributeSchema) and self.attributes == other.attributes

    def __hash__(self):
        return hash(self.attributes)

    def __repr__(self):
        return f"AttributeSchema({len(self.features)} features)"

    # ------------------------------------------------------------ views

    @cached_property
    def features(self):
        return tuple(a for a in self.attributes if a.is_feature)

    @property
    def n_features(self):
        return len(self.features)

    @cached_property
    def names(self):
        return tuple(a.name for a in self.features)

    def index(self, name):
        return self.names.index(name)

    @cached_property
    def immutable_idx(self):
        return tuple(i for i, a in enumerate(self.features) if a.immutable)

    @cached_property
    def mutable_idx(self):
        return tuple(i for i, a in enumerate(self.features) if not a.immutable)

    @cached_property
    def offsets(self):
        """Start column of each feature in the encoded matrix, plus the total width."""
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum([a.width for a in self.features])]))

    @property
    def encoded_width(self):
        return self.offsets[-1]

    def columns(self, i):
        return slice(self.offsets[i], self.offsets[i + 1])

    def encoded_columns(self, feature_idx):
        cols = []
        for i in feature_idx:
            cols.extend(range(self.offsets[i], self.offsets[i + 1]))
        return np.asarray(cols, dtype=np.intp)

    @cached_property
    def label_names(self):
        return tuple(a.name for a in self.attributes if a.role == "label")

    @cached_property
    def treatment(self):
        return next((a.name for a in self.attributes if a.role == "treatment"), None)

    @cached_property
    def outcome(self):
        return next((a.name for a in self.attributes if a.role == "outcome"), None)

    def signature(self):
        """(name, kind) list used to check model/schema compatibility."""
        return [(a.name, a.kind_token()) for a in self.features]

    def check_compatible(self, other, what="model"):
        if self.signature() != other.signature():
            raise DataError(f"schema mismatch between {what} and supplied schema")

    # ------------------------------------------------------------ text form

    def to_text(self):
        width = max(len(a.name) for a in self.attributes)
        return "".join(f"{a.name:<{width}}  {a.kind_token():<16} {a.role}\n" for a in self.attributes)

    @classmethod
    def from_text(cls, text):
        attrs = []
        names = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.rsplit(None, 2)
            if len(parts) != 3:
                raise DataError("expected '<name> <kind> <role>'", lineno)
            name, kind_tok, role = parts
            role = role.lower()
            if role not in FEATURE_ROLES + TARGET_ROLES:
                raise DataError(f"unknown role {role!r}", lineno)
            kind, card = _parse_kind(kind_tok, lineno)
            if name in names:
                raise DataError(f"duplicate attribute name {name!r}", lineno)
            names.add(name)
            if role in FEATURE_ROLES and kind == BINARY:
                raise DataError("binary kind is reserved for label/treatment/outcome", lineno)
            if role in TARGET_ROLES and kind != BINARY:
                raise DataError(f"role {role} requires kind binary", lineno)
            attrs.append(Attribute(name, kind, card, role))
        if not any(a.is_feature for a in attrs):
            raise DataError("no attributes")
        return cls(attrs)


def load_schema(path):
    with open(path, encoding="utf-8") as fh:
        return AttributeSchema.from_text(fh.read())


def save_schema(schema, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(schema.to_text())


def with_roles(schema, immutable=()):
    """Copy of ``schema`` with the named features switched to immutable."""
    unknown = set(immutable) - set(schema.names)
    if unknown:
        raise ContractError(f"unknown immutable attributes: {sorted(unknown)}")
    attrs = [Attribute(a.name, a.kind, a.cardinality, "immutable") if a.name in immutable else a
             for a in schema.attributes]
    return AttributeSchema(attrs)
