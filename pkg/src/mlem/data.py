"""Stimuli, features, representations, and the elementary distances between them.

A :class:`FeatureTable` holds per-stimulus values for a set of named
features, each either nominal (categorical, compared by equality) or
ordinal (numeric, compared by absolute difference).  A
:class:`RepresentationSet` holds one real vector per stimulus; distances
there are Euclidean.  Everything downstream (pair batches, training,
importance) computes distances on the fly through these two classes, so
no full pairwise matrix is ever required.

Missing feature values are supported for both kinds: a pair with a
missing value on either side has distance 0 for that feature.  In the
CSV format the tokens ``NaN`` and the empty string denote missing.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .io import atomic_write_bytes, atomic_write_text

NOMINAL = "nominal"
ORDINAL = "ordinal"

MISSING_TOKENS = ("NaN", "")

_REPR_MAGIC = b"MLEMREPR"
_REPR_VERSION = 1


@dataclass(frozen=True)
class Feature:
    """One feature column.

    Nominal columns are stored as integer codes into ``labels`` with -1
    for missing; ordinal columns as floats with NaN for missing.  Both
    arrays are read-only after construction.
    """

    name: str
    kind: str
    codes: np.ndarray | None = None
    labels: tuple[str, ...] = ()
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in (NOMINAL, ORDINAL):
            raise InvalidInputError(f"unknown feature kind {self.kind!r}")
        arr = self.codes if self.kind == NOMINAL else self.values
        if arr is None:
            raise InvalidInputError(f"feature {self.name!r} has no data")
        arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.codes if self.kind == NOMINAL else self.values)

    @staticmethod
    def nominal(name: str, raw: list[str | None]) -> "Feature":
        labels: list[str] = []
        index: dict[str, int] = {}
        codes = np.empty(len(raw), dtype=np.int64)
        for row, value in enumerate(raw):
            if value is None:
                codes[row] = -1
                continue
            if value not in index:
                index[value] = len(labels)
                labels.append(value)
            codes[row] = index[value]
        return Feature(name=name, kind=NOMINAL, codes=codes, labels=tuple(labels))

    @staticmethod
    def ordinal(name: str, raw: list[str | float | None]) -> "Feature":
        values = np.empty(len(raw), dtype=np.float64)
        for row, value in enumerate(raw):
            if value is None:
                values[row] = np.nan
                continue
            try:
                parsed = float(value)
            except (TypeError, ValueError):
                raise InvalidInputError(
                    f"feature {name!r} is ordinal but row {row} holds {value!r}"
                ) from None
            if not np.isfinite(parsed):
                raise InvalidInputError(
                    f"feature {name!r} has non-finite value at row {row}"
                )
            values[row] = parsed
        return Feature(name=name, kind=ORDINAL, values=values)


@dataclass(frozen=True)
class FeatureTable:
    """n stimuli by m features, immutable after construction."""

    stimulus_ids: tuple[str, ...]
    features: tuple[Feature, ...] = field(default_factory=tuple)

    def __post_init__(self):
        n = len(self.stimulus_ids)
        if n < 2:
            raise InvalidInputError("need at least 2 stimuli")
        if not self.features:
            raise InvalidInputError("need at least 1 feature")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise InvalidInputError("duplicate feature names")
        for f in self.features:
            if len(f) != n:
                raise InvalidInputError(
                    f"feature {f.name!r} has {len(f)} rows, expected {n}"
                )

    @property
    def n(self) -> int:
        return len(self.stimulus_ids)

    @property
    def m(self) -> int:
        return len(self.features)

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    def pair_distances(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        """Feature-distance rows for index arrays ``left`` and ``right``.

        Returns a (len(left), m) matrix; entry k of each row follows
        :func:`feature_distance` for that pair.
        """
        left = np.asarray(left, dtype=np.int64)
        right = np.asarray(right, dtype=np.int64)
        out = np.empty((len(left), self.m), dtype=np.float64)
        for k, feat in enumerate(self.features):
            if feat.kind == NOMINAL:
                a, b = feat.codes[left], feat.codes[right]
                col = ((a != b) & (a >= 0) & (b >= 0)).astype(np.float64)
            else:
                a, b = feat.values[left], feat.values[right]
                col = np.abs(a - b)
                col[~np.isfinite(col)] = 0.0
            out[:, k] = col
        return out


@dataclass(frozen=True)
class RepresentationSet:
    """n stimulus representations as the rows of a real matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
            raise InvalidInputError("representation matrix must be 2-D and nonempty")
        if not np.isfinite(mat).all():
            raise InvalidInputError("representation matrix has non-finite entries")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def pair_distances(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        diff = self.matrix[np.asarray(left)] - self.matrix[np.asarray(right)]
        return np.linalg.norm(diff, axis=1)


def feature_distance(table: FeatureTable, k: int, i: int, j: int) -> float:
    """Distance between stimuli i and j on feature k.

    Ordinal features use |value_i - value_j|, nominal features the 0/1
    indicator of inequality.  Missing on either side gives 0.
    """
    feat = table.features[k]
    if feat.kind == NOMINAL:
        a, b = feat.codes[i], feat.codes[j]
        if a < 0 or b < 0:
            return 0.0
        return float(a != b)
    a, b = feat.values[i], feat.values[j]
    if np.isnan(a) or np.isnan(b):
        return 0.0
    return float(abs(a - b))


def neural_distance(reps: RepresentationSet, i: int, j: int) -> float:
    """Euclidean distance between representation rows i and j."""
    return float(np.linalg.norm(reps.matrix[i] - reps.matrix[j]))


def univariate_slice(reps: RepresentationSet, u: int) -> RepresentationSet:
    """The n x 1 representation set holding only unit (column) u."""
    if not 0 <= u < reps.d:
        raise InvalidInputError(f"unit index {u} out of range for d={reps.d}")
    return RepresentationSet(reps.matrix[:, u : u + 1].copy())


def _resolve_kind(name: str, raw: list[str | None], declared: str | None) -> str:
    if declared is not None:
        if declared not in (NOMINAL, ORDINAL):
            raise InvalidInputError(
                f"feature {name!r}: kind must be 'nominal' or 'ordinal', got {declared!r}"
            )
        return declared
    present = [v for v in raw if v is not None]
    if not present:
        return NOMINAL
    try:
        for v in present:
            float(v)
    except ValueError:
        return NOMINAL
    return ORDINAL


def _schema_sidecar_path(path: Path) -> Path:
    return path.with_suffix(".schema.json") if path.suffix else path.with_name(path.name + ".schema.json")


def load_feature_table(
    path: str | Path, schema: dict[str, str] | None = None
) -> FeatureTable:
    """Load a feature table from CSV.

    The header must be ``stimulus_id,<feature>,...``.  Kinds resolve by
    priority: explicit ``schema`` argument, then a ``<name>.schema.json``
    sidecar, then inference (all-numeric column means ordinal, anything
    else nominal).  ``NaN`` and empty cells parse as missing.
    """
    path = Path(path)
    declared: dict[str, str] = {}
    sidecar = _schema_sidecar_path(path)
    if sidecar.exists():
        with open(sidecar, "r", encoding="utf-8") as handle:
            loaded = json.load(handle)
        if not isinstance(loaded, dict):
            raise InvalidInputError(f"schema sidecar {sidecar} must be a JSON object")
        declared.update({str(k): str(v).lower() for k, v in loaded.items()})
    if schema:
        declared.update({str(k): str(v).lower() for k, v in schema.items()})

    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: empty file") from None
        if not header or header[0] != "stimulus_id":
            raise InvalidInputError(f"{path}: first column must be 'stimulus_id'")
        names = header[1:]
        if not names:
            raise InvalidInputError(f"{path}: no feature columns")
        if len(set(names)) != len(names):
            raise InvalidInputError(f"{path}: duplicate feature names")
        ids: list[str] = []
        columns: list[list[str | None]] = [[] for _ in names]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidInputError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            ids.append(row[0])
            for k, cell in enumerate(row[1:]):
                columns[k].append(None if cell in MISSING_TOKENS else cell)

    features = []
    for name, raw in zip(names, columns):
        kind = _resolve_kind(name, raw, declared.get(name))
        make = Feature.ordinal if kind == ORDINAL else Feature.nominal
        features.append(make(name, raw))
    return FeatureTable(stimulus_ids=tuple(ids), features=tuple(features))


def write_feature_csv(table: FeatureTable, path: str | Path) -> None:
    lines = ["stimulus_id," + ",".join(table.feature_names)]
    for i in range(table.n):
        cells = [table.stimulus_ids[i]]
        for feat in table.features:
            if feat.kind == NOMINAL:
                code = feat.codes[i]
                cells.append("NaN" if code < 0 else feat.labels[code])
            else:
                value = feat.values[i]
                cells.append("NaN" if np.isnan(value) else repr(float(value)))
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_representations(path: str | Path) -> RepresentationSet:
    """Load a representation matrix from headerless CSV or the binary format.

    The binary format is detected by its magic bytes: ``MLEMREPR``, then
    u32 version, u64 n, u64 d, and n*d little-endian float64 row-major.
    """
    path = Path(path)
    with open(path, "rb") as handle:
        head = handle.read(len(_REPR_MAGIC))
        if head == _REPR_MAGIC:
            meta = handle.read(4 + 8 + 8)
            if len(meta) < 20:
                raise InvalidInputError(f"{path}: truncated header")
            version, n, d = struct.unpack("<IQQ", meta)
            if version != _REPR_VERSION:
                raise InvalidInputError(f"{path}: unsupported version {version}")
            payload = handle.read()
            expected = n * d * 8
            if len(payload) != expected:
                raise InvalidInputError(
                    f"{path}: expected {expected} payload bytes, got {len(payload)}"
                )
            matrix = np.frombuffer(payload, dtype="<f8").reshape(n, d).copy()
            return RepresentationSet(matrix)
    try:
        matrix = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: not a numeric CSV matrix ({exc})") from None
    return RepresentationSet(matrix)


def write_representations_binary(reps: RepresentationSet, path: str | Path) -> None:
    header = _REPR_MAGIC + struct.pack("<IQQ", _REPR_VERSION, reps.n, reps.d)
    payload = np.ascontiguousarray(reps.matrix, dtype="<f8").tobytes()
    atomic_write_bytes(path, header + payload)


def check_aligned(table: FeatureTable, reps: RepresentationSet) -> None:
    if table.n != reps.n:
        raise InvalidInputError(
            f"feature table has {table.n} stimuli but representations have {reps.n} rows"
        )
