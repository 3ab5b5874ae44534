"""Feature-set and weights persistence.

A feature set lives in two files:

* a binary matrix container (conventionally ``<prefix>.urfb``) holding the
  embedding rows.  Layout, all little-endian: magic bytes ``URFB``, u32
  format version, u64 row count, u32 dimension, u8 scalar code (1 =
  float32), then the row-major float32 body.
* a metadata CSV (``<prefix>.meta.csv``) with header
  ``item_id,person_id,camera_id`` and one row per matrix row, in matrix
  order.  A negative person_id marks a distractor.

Learned combination weights are stored as a small JSON document whose
round trip is exact on every field.

A plain-text matrix loader (CSV of floats) exists for hand-written
fixtures; production exports should use the binary container.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"URFB"
FORMAT_VERSION = 1
SCALAR_FLOAT32 = 1
WEIGHTS_FORMAT_VERSION = 1
ROLE_TAGS = ("query", "gallery", "train")
METADATA_HEADER = ["item_id", "person_id", "camera_id"]

_HEADER = struct.Struct("<4sIQIB")


class DataFormatError(ValueError):
    """An input file or record set violates the format contract."""


@dataclass(frozen=True)
class FeatureRecord:
    """One image's embedding plus its identity and camera labels."""

    item_id: str
    person_id: int
    camera_id: int
    feature: np.ndarray


class FeatureSet:
    """Immutable, ordered collection of feature records.

    Embeddings are stored as a read-only float32 matrix of shape
    ``(len(self), dim)``; labels are read-only parallel arrays.  Record
    ``i`` corresponds to matrix row ``i``.
    """

    def __init__(self, item_ids, person_ids, camera_ids, features, role_tag):
        if role_tag not in ROLE_TAGS:
            raise DataFormatError(
                f"invalid role_tag {role_tag!r}; expected one of {ROLE_TAGS}"
            )
        feats = np.array(features, dtype=np.float32, copy=True)
        if feats.ndim != 2:
            raise DataFormatError(
                f"feature matrix must be 2-D, got {feats.ndim}-D"
            )
        n, dim = feats.shape
        if dim < 1:
            raise DataFormatError("feature dimension must be at least 1")
        ids = tuple(str(x) for x in item_ids)
        pids = np.array(person_ids, dtype=np.int64, copy=True)
        cams = np.array(camera_ids, dtype=np.int64, copy=True)
        for name, count in (("item_id", len(ids)),
                            ("person_id", pids.size),
                            ("camera_id", cams.size)):
            if count != n:
                raise DataFormatError(
                    f"row count mismatch: matrix has {n} rows, "
                    f"{name} column has {count}"
                )

        bad = np.flatnonzero(~np.isfinite(feats).all(axis=1))
        if bad.size:
            raise DataFormatError(f"non-finite value at row {bad[0]}")
        bad = np.flatnonzero(cams < 0)
        if bad.size:
            raise DataFormatError(f"negative camera_id at row {bad[0]}")
        seen: dict[str, int] = {}
        for i, item in enumerate(ids):
            if not item:
                raise DataFormatError(f"empty item_id at row {i}")
            if item in seen:
                raise DataFormatError(
                    f"duplicate item_id {item!r} at row {i} "
                    f"(first seen at row {seen[item]})"
                )
            seen[item] = i

        feats.setflags(write=False)
        pids.setflags(write=False)
        cams.setflags(write=False)
        self._item_ids = ids
        self._person_ids = pids
        self._camera_ids = cams
        self._features = feats
        self._role_tag = role_tag

    @property
    def features(self) -> np.ndarray:
        return self._features

    @property
    def person_ids(self) -> np.ndarray:
        return self._person_ids

    @property
    def camera_ids(self) -> np.ndarray:
        return self._camera_ids

    @property
    def item_ids(self) -> tuple[str, ...]:
        return self._item_ids

    @property
    def dim(self) -> int:
        return int(self._features.shape[1])

    @property
    def role_tag(self) -> str:
        return self._role_tag

    def __len__(self) -> int:
        return int(self._features.shape[0])

    def record(self, index: int) -> FeatureRecord:
        if not 0 <= index < len(self):
            raise IndexError(f"record index {index} out of range [0, {len(self)})")
        return FeatureRecord(
            item_id=self._item_ids[index],
            person_id=int(self._person_ids[index]),
            camera_id=int(self._camera_ids[index]),
            feature=self._features[index],
        )

    def __getitem__(self, index: int) -> FeatureRecord:
        return self.record(index)

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self._role_tag == other._role_tag
            and self._item_ids == other._item_ids
            and np.array_equal(self._person_ids, other._person_ids)
            and np.array_equal(self._camera_ids, other._camera_ids)
            and np.array_equal(self._features, other._features)
        )


def _read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, rows, dim, scalar = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported container version {version}, "
            f"expected {FORMAT_VERSION}"
        )
    if scalar != SCALAR_FLOAT32:
        raise DataFormatError(f"{path}: unsupported scalar code {scalar}")
    if dim < 1:
        raise DataFormatError(f"{path}: invalid dimension {dim}")
    body = raw[_HEADER.size:]
    expected = rows * dim * 4
    if len(body) != expected:
        raise DataFormatError(
            f"{path}: body size mismatch, expected {expected} bytes "
            f"for {rows}x{dim} float32, got {len(body)}"
        )
    return np.frombuffer(body, dtype="<f4").reshape(rows, dim)


def _read_metadata(path) -> tuple[list[str], list[int], list[int]]:
    ids: list[str] = []
    pids: list[int] = []
    cams: list[int] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METADATA_HEADER:
            raise DataFormatError(
                f"{path}: malformed header {header!r}, "
                f"expected {METADATA_HEADER!r}"
            )
        for i, row in enumerate(reader):
            if len(row) != 3:
                raise DataFormatError(
                    f"{path}: expected 3 columns at row {i}, got {len(row)}"
                )
            try:
                pid = int(row[1])
                cam = int(row[2])
            except ValueError as exc:
                raise DataFormatError(f"{path}: bad integer at row {i}: {exc}") from exc
            ids.append(row[0])
            pids.append(pid)
            cams.append(cam)
    return ids, pids, cams


def load_feature_set(matrix_path, metadata_path, role_tag) -> FeatureSet:
    """Load a feature set from the binary container plus its metadata CSV.

    Record order equals file order.  Raises DataFormatError naming the
    offending row for any shape, finiteness, or label violation.
    """
    feats = _read_matrix(matrix_path)
    ids, pids, cams = _read_metadata(metadata_path)
    if len(ids) != feats.shape[0]:
        raise DataFormatError(
            f"row count mismatch: matrix has {feats.shape[0]} rows, "
            f"metadata has {len(ids)}"
        )
    return FeatureSet(ids, pids, cams, feats, role_tag)


def save_feature_set(feature_set: FeatureSet, matrix_path, metadata_path) -> None:
    """Write a feature set to the binary container and metadata CSV."""
    feats = feature_set.features
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, feats.shape[0], feats.shape[1], SCALAR_FLOAT32
    )
    with open(matrix_path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(feats, dtype="<f4").tobytes())
    with open(metadata_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METADATA_HEADER)
        for rec in feature_set:
            writer.writerow([rec.item_id, rec.person_id, rec.camera_id])


def load_feature_set_csv(matrix_path, metadata_path, role_tag) -> FeatureSet:
    """Text-matrix variant of load_feature_set for hand-written fixtures.

    The matrix file is plain CSV of floats, no header, one row per record.
    """
    rows: list[list[float]] = []
    with open(matrix_path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                values = [float(x) for x in row]
            except ValueError as exc:
                raise DataFormatError(
                    f"{matrix_path}: bad float at row {i}: {exc}"
                ) from exc
            if rows and len(values) != len(rows[0]):
                raise DataFormatError(
                    f"{matrix_path}: inconsistent dimension at row {i}: "
                    f"expected {len(rows[0])}, got {len(values)}"
                )
            rows.append(values)
    if not rows:
        raise DataFormatError(f"{matrix_path}: empty matrix")
    ids, pids, cams = _read_metadata(metadata_path)
    if len(ids) != len(rows):
        raise DataFormatError(
            f"row count mismatch: matrix has {len(rows)} rows, "
            f"metadata has {len(ids)}"
        )
    return FeatureSet(ids, pids, cams, np.array(rows, dtype=np.float32), role_tag)


@dataclass
class CombinationWeights:
    """Learned scoring weights plus provenance.

    The intercept is recorded for audit but never applied when scoring.
    ``ridge`` flags that the fit fell back to a regularized solve because
    the design matrix was rank deficient.
    """

    alpha: float
    beta: float
    gamma: float
    intercept: float
    k_used: int
    n_used: int
    seed: int
    run_index: int
    ridge: bool = False


_WEIGHT_FLOAT_FIELDS = ("alpha", "beta", "gamma", "intercept")
_WEIGHT_INT_FIELDS = ("k_used", "n_used", "seed", "run_index")


def save_weights(weights: CombinationWeights, path) -> None:
    """Persist weights as JSON.  Refuses non-finite values."""
    payload: dict = {"format_version": WEIGHTS_FORMAT_VERSION}
    for name in _WEIGHT_FLOAT_FIELDS:
        value = float(getattr(weights, name))
        if not math.isfinite(value):
            raise DataFormatError(
                f"refusing to save non-finite weights ({name}={value})"
            )
        payload[name] = value
    for name in _WEIGHT_INT_FIELDS:
        payload[name] = int(getattr(weights, name))
    payload["ridge"] = bool(weights.ridge)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_weights(path) -> CombinationWeights:
    """Load weights saved by save_weights; round trip is exact."""
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise DataFormatError(f"{path}: expected a JSON object")
    version = payload.get("format_version")
    if version != WEIGHTS_FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported weights format_version {version!r}, "
            f"expected {WEIGHTS_FORMAT_VERSION}"
        )
    kwargs = {}
    for name in _WEIGHT_FLOAT_FIELDS + _WEIGHT_INT_FIELDS:
        if name not in payload:
            raise DataFormatError(f"{path}: missing field {name!r}")
        kwargs[name] = payload[name]
    for name in _WEIGHT_FLOAT_FIELDS:
        value = kwargs[name]
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise DataFormatError(f"{path}: field {name!r} must be a number")
        kwargs[name] = float(value)
        if not math.isfinite(kwargs[name]):
            raise DataFormatError(f"{path}: non-finite value for {name!r}")
    for name in _WEIGHT_INT_FIELDS:
        value = kwargs[name]
        if not isinstance(value, int) or isinstance(value, bool):
            raise DataFormatError(f"{path}: field {name!r} must be an integer")
    kwargs["ridge"] = bool(payload.get("ridge", False))
    return CombinationWeights(**kwargs)
