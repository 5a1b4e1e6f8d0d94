"""Switchgear telemetry feature vectors, condition labels, datasets and file I/O.

The expanded feature vector concatenates eight segments into 24 columns::

    r1..r3   three-phase outgoing-line temperatures (degC)
    q1..q6   closing speed, opening speed, closing stroke, opening stroke,
             closing time, opening time
    p1..p2   breaker / ground-knife position state (0 abnormal, 1 normal)
    t1..t2   ambient temperature (degC), humidity (%)
    c1..c3   ultrasonic partial discharge at breaker, busbar, line (dB)
    l1..l6   energy-storage motor run time / peak current, drive motor run
             time / peak current, ground-cutter motor run time / peak current
    f        insulation resistance (MOhm)
    m        equipment load rate
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

SEGMENTS: dict[str, int] = {"r": 3, "q": 6, "p": 2, "t": 2, "c": 3, "l": 6, "f": 1, "m": 1}
FEATURE_NAMES: tuple[str, ...] = tuple(
    name if size == 1 else f"{name}{i}"
    for name, size in SEGMENTS.items()
    for i in range(1, size + 1)
)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 24

_OFFSETS: dict[str, slice] = {}
_pos = 0
for _name, _size in SEGMENTS.items():
    _OFFSETS[_name] = slice(_pos, _pos + _size)
    _pos += _size
del _pos, _name, _size


class DatasetError(ValueError):
    """Raised for malformed dataset files or invalid splits."""


class ConditionLabel(IntEnum):
    NORMAL = 1
    MECHANISM_JAMMING = 2
    INSULATION_FAILURE = 3
    EMPTY_CLOSING = 4
    MECHANICAL_FAILURE = 5
    ACCIDENTAL_TRIPPING = 6
    SECONDARY_EQUIPMENT = 7


N_CLASSES = len(ConditionLabel)


@dataclass(frozen=True)
class FeatureVector:
    """Immutable 24-dimensional expanded feature vector."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64).reshape(-1)
        if arr.shape != (N_FEATURES,):
            raise DatasetError(f"feature vector must have {N_FEATURES} components, got {arr.size}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_segments(cls, **segments) -> "FeatureVector":
        arr = np.empty(N_FEATURES)
        for name, sl in _OFFSETS.items():
            if name not in segments:
                raise DatasetError(f"missing segment {name!r}")
            arr[sl] = np.atleast_1d(np.asarray(segments[name], dtype=np.float64))
        return cls(arr)

    def segment(self, name: str) -> np.ndarray:
        return self.values[_OFFSETS[name]]

    r = property(lambda self: self.segment("r"))
    q = property(lambda self: self.segment("q"))
    p = property(lambda self: self.segment("p"))
    t = property(lambda self: self.segment("t"))
    c = property(lambda self: self.segment("c"))
    l = property(lambda self: self.segment("l"))  # noqa: E741
    f = property(lambda self: float(self.values[_OFFSETS["f"]][0]))
    m = property(lambda self: float(self.values[_OFFSETS["m"]][0]))

    def violations(self) -> list[str]:
        """Physical-range checks on a raw (un-normalized) vector."""
        out = []
        if not np.all(np.isfinite(self.values)):
            out.append("non-finite component")
        if not np.all(np.isin(self.p, (0.0, 1.0))):
            out.append("p must be 0 or 1")
        if not 0.0 <= self.m <= 2.0:
            out.append("m outside [0, 2]")
        if not self.f > 0.0:
            out.append("f must be positive")
        if not 0.0 <= self.t[1] <= 100.0:
            out.append("humidity outside [0, 100]")
        return out

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash(self.values.tobytes())


@dataclass(frozen=True)
class LabeledSample:
    x: FeatureVector
    y: ConditionLabel
    id: str


@dataclass(frozen=True)
class UnlabeledSample:
    x: FeatureVector
    id: str


Record = Union[LabeledSample, UnlabeledSample]


@dataclass(frozen=True)
class EpisodeSplit:
    support: tuple[LabeledSample, ...]
    query: tuple[LabeledSample, ...]
    unlabeled: tuple[UnlabeledSample, ...]
    test: tuple[LabeledSample, ...] = ()
    support_counts: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("support", "query", "unlabeled", "test"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        seen: dict[str, str] = {}
        for name in ("support", "query", "unlabeled", "test"):
            for s in getattr(self, name):
                if s.id in seen:
                    raise DatasetError(f"id {s.id!r} appears in both {seen[s.id]} and {name}")
                seen[s.id] = name
        missing = {int(s.y) for s in self.query} - {int(s.y) for s in self.support}
        if missing:
            raise DatasetError(f"query classes {sorted(missing)} absent from support")
        if not self.support_counts:
            object.__setattr__(self, "support_counts", class_counts(self.support))

    def with_unlabeled(self, unlabeled: Iterable[UnlabeledSample]) -> "EpisodeSplit":
        return EpisodeSplit(self.support, self.query, tuple(unlabeled), self.test)

    def fingerprint(self) -> str:
        """Stable hash of the partition ids, used to assert arms share data."""
        import hashlib

        h = hashlib.sha256()
        for name in ("support", "query", "unlabeled", "test"):
            h.update(name.encode())
            for s in getattr(self, name):
                h.update(s.id.encode())
                h.update(s.x.values.tobytes())
        return h.hexdigest()


def class_counts(samples: Iterable[LabeledSample]) -> dict[int, int]:
    return dict(sorted(Counter(int(s.y) for s in samples).items()))


def stack(samples: Sequence[Record]) -> np.ndarray:
    if not samples:
        return np.zeros((0, N_FEATURES))
    return np.stack([s.x.values for s in samples])


def labels_of(samples: Sequence[LabeledSample]) -> np.ndarray:
    return np.array([int(s.y) for s in samples], dtype=np.int64)


# ---------------------------------------------------------------------------
# file I/O


def _parse_label(raw, where: str):
    if raw is None or (isinstance(raw, str) and raw.strip() == ""):
        return None
    try:
        value = int(float(raw)) if isinstance(raw, str) else int(raw)
        if isinstance(raw, str) and float(raw) != value:
            raise ValueError
        return ConditionLabel(value)
    except (ValueError, TypeError):
        raise DatasetError(f"{where}, column 'label': invalid condition label {raw!r}") from None


def _parse_float(raw, where: str, column: str) -> float:
    if raw is None or (isinstance(raw, str) and raw.strip() == ""):
        raise DatasetError(f"{where}, column {column!r}: missing value")
    try:
        value = float(raw)
    except (ValueError, TypeError):
        raise DatasetError(f"{where}, column {column!r}: cannot parse {raw!r}") from None
    if not math.isfinite(value):
        raise DatasetError(f"{where}, column {column!r}: non-finite value")
    return value


def _make_record(row: Mapping, rownum: int) -> Record:
    where = f"row {rownum}"
    values = [_parse_float(row.get(name), where, name) for name in FEATURE_NAMES]
    rid = row.get("id")
    rid = f"row{rownum}" if rid is None or str(rid) == "" else str(rid)
    label = _parse_label(row.get("label"), where)
    x = FeatureVector(np.array(values))
    return UnlabeledSample(x, rid) if label is None else LabeledSample(x, label, rid)


def load_dataset(path: Union[str, Path], format: str | None = None) -> list[Record]:
    """Read a CSV or JSON dataset; rows without a label become unlabeled records."""
    path = Path(path)
    fmt = format or path.suffix.lstrip(".").lower()
    if fmt not in ("csv", "json"):
        raise DatasetError(f"unsupported format {fmt!r}")
    if not path.exists():
        raise DatasetError(f"no such file: {path}")
    records: list[Record] = []
    if fmt == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DatasetError("empty dataset")
            header = [h.strip() for h in header]
            missing = [n for n in FEATURE_NAMES if n not in header]
            extra = [h for h in header if h not in FEATURE_NAMES and h not in ("label", "id")]
            if missing or extra:
                raise DatasetError(
                    f"header mismatch: expected the {N_FEATURES} feature columns "
                    f"(missing {missing}, unexpected {extra})"
                )
            for rownum, row in enumerate(reader, start=1):
                if not row:
                    continue
                if len(row) != len(header):
                    raise DatasetError(
                        f"row {rownum}: dimension mismatch, expected {len(header)} fields, got {len(row)}"
                    )
                records.append(_make_record(dict(zip(header, row)), rownum))
    else:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, list):
            raise DatasetError("JSON dataset must be an array of objects")
        for rownum, obj in enumerate(data, start=1):
            if not isinstance(obj, dict):
                raise DatasetError(f"row {rownum}: expected an object")
            extra = [k for k in obj if k not in FEATURE_NAMES and k not in ("label", "id")]
            if extra:
                raise DatasetError(f"row {rownum}: dimension mismatch, unexpected fields {extra}")
            records.append(_make_record(obj, rownum))
    if not records:
        raise DatasetError("empty dataset")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        dup = next(i for i, c in Counter(ids).items() if c > 1)
        raise DatasetError(f"duplicate record id {dup!r}")
    return records


def save_dataset(records: Sequence[Record], path: Union[str, Path], format: str | None = None) -> None:
    """Write records; floats use shortest round-trip repr so reloads are bit-exact."""
    path = Path(path)
    fmt = format or path.suffix.lstrip(".").lower()
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", *FEATURE_NAMES, "label"])
            for r in records:
                label = int(r.y) if isinstance(r, LabeledSample) else ""
                w.writerow([r.id, *(repr(float(v)) for v in r.x.values), label])
    elif fmt == "json":
        rows = []
        for r in records:
            obj = {"id": r.id, **{n: float(v) for n, v in zip(FEATURE_NAMES, r.x.values)}}
            if isinstance(r, LabeledSample):
                obj["label"] = int(r.y)
            rows.append(obj)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=1)
            fh.write("\n")
    else:
        raise DatasetError(f"unsupported format {fmt!r}")


# ---------------------------------------------------------------------------
# splitting

PARTITIONS = ("support", "query", "test")


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of n items; ties go to the earlier partition."""
    raw = [n * f for f in fractions]
    base = [int(math.floor(v + 1e-9)) for v in raw]
    rest = n - sum(base)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return base


def split_dataset(
    labeled: Sequence[LabeledSample],
    unlabeled: Sequence[UnlabeledSample],
    proportions: Mapping[str, Union[float, Mapping[int, int]]],
    seed: int,
) -> EpisodeSplit:
    """Stratified split of labeled samples into support / query / test.

    ``proportions`` maps partition names to either a fraction (fractions must
    sum to 1) or an explicit ``{class: count}`` table. Classes are shuffled
    independently with a generator derived from ``seed``.
    """
    unknown = set(proportions) - set(PARTITIONS)
    if unknown:
        raise DatasetError(f"unknown partitions {sorted(unknown)}")
    by_class: dict[int, list[LabeledSample]] = defaultdict(list)
    for s in labeled:
        by_class[int(s.y)].append(s)
    for k, members in by_class.items():
        if len(members) < 2:
            raise DatasetError(f"class {k} has {len(members)} labeled sample(s); cannot stratify")

    explicit = {p: v for p, v in proportions.items() if isinstance(v, Mapping)}
    fractional = {p: float(v) for p, v in proportions.items() if not isinstance(v, Mapping)}
    if explicit and fractional:
        raise DatasetError("mix of fractional and count-based proportions")
    if fractional:
        if any(v < 0 for v in fractional.values()) or abs(sum(fractional.values()) - 1.0) > 1e-9:
            raise DatasetError("proportions must be non-negative and sum to 1")

    rng = np.random.default_rng(seed)
    parts: dict[str, list[LabeledSample]] = {p: [] for p in PARTITIONS}
    for k in sorted(by_class):
        members = by_class[k]
        order = rng.permutation(len(members))
        members = [members[i] for i in order]
        if explicit:
            counts = [int(explicit.get(p, {}).get(k, 0)) for p in PARTITIONS]
            if sum(counts) > len(members):
                raise DatasetError(f"class {k}: requested {sum(counts)} samples, only {len(members)} available")
        else:
            names = [p for p in PARTITIONS if fractional.get(p, 0.0) > 0]
            alloc = _allocate(len(members), [fractional[p] for p in names])
            # support and query each need a member of every class they serve
            if "support" in names and "query" in names:
                i_s, i_q = names.index("support"), names.index("query")
                for need in (i_s, i_q):
                    if alloc[need] == 0:
                        donor = max(range(len(alloc)), key=lambda i: alloc[i])
                        alloc[donor] -= 1
                        alloc[need] += 1
            counts = [alloc[names.index(p)] if p in names else 0 for p in PARTITIONS]
        pos = 0
        for p, c in zip(PARTITIONS, counts):
            parts[p].extend(members[pos:pos + c])
            pos += c
    return EpisodeSplit(
        support=tuple(parts["support"]),
        query=tuple(parts["query"]),
        unlabeled=tuple(unlabeled),
        test=tuple(parts["test"]),
    )
