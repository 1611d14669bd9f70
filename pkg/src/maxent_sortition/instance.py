"""Sortition instance model: features, quotas, pool members, file formats.

An :class:`Instance` is immutable once built and validated, so it can be
shared freely between threads and worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence, Union

from .errors import InstanceError

Source = Union[str, os.PathLike, bytes, IO]


@dataclass(frozen=True)
class FeatureDef:
    name: str
    values: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise InstanceError(f"feature {self.name!r} has no values")
        dupes = [v for v, c in Counter(self.values).items() if c > 1]
        if dupes:
            raise InstanceError(f"feature {self.name!r} repeats values {dupes}")

    @property
    def degenerate(self) -> bool:
        """A single-valued feature carries no information but is allowed."""
        return len(self.values) == 1


@dataclass(frozen=True)
class Quota:
    feature: str
    value: str
    min: int
    max: int

    def non_binding(self, k: int) -> bool:
        return self.min <= 0 and self.max >= k


@dataclass(frozen=True, eq=True)
class PoolMember:
    id: str
    attributes: Mapping[str, str] = field(hash=False)


@dataclass(frozen=True)
class FeatureValueVector:
    """One-hot feature-value vector, stored as one value index per feature."""

    features: tuple[str, ...]
    codes: tuple[int, ...]
    sizes: tuple[int, ...]

    @property
    def bits(self) -> tuple[int, ...]:
        out = []
        for code, size in zip(self.codes, self.sizes):
            block = [0] * size
            block[code] = 1
            out.extend(block)
        return tuple(out)


@dataclass(frozen=True)
class VectorGroup:
    vector: FeatureValueVector
    members: tuple[str, ...]
    indices: tuple[int, ...]

    @property
    def multiplicity(self) -> int:
        return len(self.members)


@dataclass
class Profile:
    """Feature-value counts of a member set, keyed by ``(feature, value)``."""

    counts: dict

    def __getitem__(self, key):
        return self.counts.get(key, 0)


@dataclass(frozen=True)
class Instance:
    panel_size: int
    features: tuple[FeatureDef, ...]
    quotas: tuple[Quota, ...]
    pool: tuple[PoolMember, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "quotas", tuple(self.quotas))
        object.__setattr__(self, "pool", tuple(self.pool))
        self._validate()

    # -- validation and derived indexes -------------------------------

    def _validate(self):
        k = self.panel_size
        if not isinstance(k, int) or k < 1:
            raise InstanceError(f"panel_size must be a positive integer, got {k!r}")
        if not self.features:
            raise InstanceError("instance has no features")
        names = [f.name for f in self.features]
        dupes = [n for n, c in Counter(names).items() if c > 1]
        if dupes:
            raise InstanceError(f"duplicate feature names {dupes}")
        fidx = {f.name: i for i, f in enumerate(self.features)}
        vidx = {f.name: {v: j for j, v in enumerate(f.values)} for f in self.features}

        qmap = {}
        for q in self.quotas:
            if q.feature not in vidx or q.value not in vidx[q.feature]:
                raise InstanceError(
                    f"quota for unknown feature-value ({q.feature}, {q.value})")
            if (q.feature, q.value) in qmap:
                raise InstanceError(f"duplicate quota for ({q.feature}, {q.value})")
            if not (0 <= q.min <= q.max <= k):
                raise InstanceError(
                    f"quota bounds for ({q.feature}, {q.value}) violate "
                    f"0 <= min <= max <= k: [{q.min}, {q.max}], k={k}")
            qmap[(q.feature, q.value)] = q
        for f in self.features:
            for v in f.values:
                if (f.name, v) not in qmap:
                    raise InstanceError(f"missing quota for ({f.name}, {v})")
            lo = sum(qmap[(f.name, v)].min for v in f.values)
            hi = sum(qmap[(f.name, v)].max for v in f.values)
            if lo > k:
                raise InstanceError(
                    f"quotas infeasible by counting: feature {f.name!r} "
                    f"has sum of minimums {lo} > k={k}")
            if hi < k:
                raise InstanceError(
                    f"quotas infeasible by counting: feature {f.name!r} "
                    f"has sum of maximums {hi} < k={k}")

        if len(self.pool) < k:
            raise InstanceError(f"pool of {len(self.pool)} is smaller than k={k}")
        seen = set()
        codes = []
        for m in self.pool:
            if m.id in seen:
                raise InstanceError(f"duplicate member id {m.id!r}")
            seen.add(m.id)
            row = []
            for f in self.features:
                if f.name not in m.attributes or m.attributes[f.name] in (None, ""):
                    raise InstanceError(
                        f"member {m.id!r} has no value for feature {f.name!r}")
                value = m.attributes[f.name]
                if value not in vidx[f.name]:
                    raise InstanceError(
                        f"member {m.id!r} has unknown value {value!r} "
                        f"for feature {f.name!r}")
                row.append(vidx[f.name][value])
            extra = set(m.attributes) - set(fidx)
            if extra:
                raise InstanceError(
                    f"member {m.id!r} has attributes for unknown features {sorted(extra)}")
            codes.append(tuple(row))

        object.__setattr__(self, "_fidx", fidx)
        object.__setattr__(self, "_vidx", vidx)
        object.__setattr__(self, "_qmap", qmap)
        object.__setattr__(self, "_codes", tuple(codes))
        object.__setattr__(self, "_midx", {m.id: i for i, m in enumerate(self.pool)})

    # -- accessors ------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.pool)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def member_ids(self) -> tuple[str, ...]:
        return tuple(m.id for m in self.pool)

    def feature(self, name: str) -> FeatureDef:
        try:
            return self.features[self._fidx[name]]
        except KeyError:
            raise InstanceError(f"unknown feature {name!r}") from None

    def feature_index(self, name: str) -> int:
        self.feature(name)
        return self._fidx[name]

    def value_index(self, feature: str, value: str) -> int:
        return self._vidx[feature][value]

    def quota(self, feature: str, value: str) -> Quota:
        return self._qmap[(feature, value)]

    def bounds(self, feature: str) -> list[tuple[int, int]]:
        """``(min, max)`` per value of ``feature``, in value order."""
        return [(q.min, q.max) for q in
                (self._qmap[(feature, v)] for v in self.feature(feature).values)]

    def non_binding(self, feature: str, value: str) -> bool:
        return self._qmap[(feature, value)].non_binding(self.panel_size)

    def is_binding(self, feature: str) -> bool:
        return not all(self.non_binding(feature, v) for v in self.feature(feature).values)

    def binding_features(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features if self.is_binding(f.name))

    def member_index(self, member_id: str) -> int:
        try:
            return self._midx[member_id]
        except KeyError:
            raise InstanceError(f"unknown member id {member_id!r}") from None

    def codes(self, i: int) -> tuple[int, ...]:
        """Value indices of member ``i`` for every feature, in feature order."""
        return self._codes[i]

    def code(self, i: int, feature: str) -> int:
        return self._codes[i][self._fidx[feature]]

    def vector(self, i: int, feature_subset: Sequence[str] | None = None) -> FeatureValueVector:
        subset = tuple(feature_subset) if feature_subset is not None else self.feature_names
        return FeatureValueVector(
            subset,
            tuple(self.code(i, f) for f in subset),
            tuple(len(self.feature(f).values) for f in subset),
        )

    def profile(self, members: Iterable[int], feature_subset: Sequence[str] | None = None) -> Profile:
        """Profile of a set of member *indices*."""
        subset = tuple(feature_subset) if feature_subset is not None else self.feature_names
        counts = {(f, v): 0 for f in subset for v in self.feature(f).values}
        for i in members:
            for f in subset:
                counts[(f, self.feature(f).values[self.code(i, f)])] += 1
        return Profile(counts)

    def feature_satisfied(self, members: Sequence[int], feature: str) -> bool:
        fi = self._fidx[feature]
        counts = [0] * len(self.features[fi].values)
        for i in members:
            counts[self._codes[i][fi]] += 1
        return all(lo <= c <= hi for c, (lo, hi) in zip(counts, self.bounds(feature)))

    def is_panel(self, members: Sequence[int]) -> bool:
        if len(set(members)) != self.panel_size or len(members) != self.panel_size:
            return False
        return all(self.feature_satisfied(members, f) for f in self.feature_names)

    # -- derived instances ------------------------------------------------

    def without_quotas(self, feature: str) -> "Instance":
        """Copy in which every quota of ``feature`` is relaxed to ``[0, k]``."""
        self.feature(feature)
        quotas = [Quota(q.feature, q.value, 0, self.panel_size) if q.feature == feature else q
                  for q in self.quotas]
        return Instance(self.panel_size, self.features, quotas, self.pool)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "panel_size": self.panel_size,
            "features": [{"name": f.name, "values": list(f.values)} for f in self.features],
            "quotas": [{"feature": q.feature, "value": q.value, "min": q.min, "max": q.max}
                       for q in self.quotas],
            "pool": [{"id": m.id, "attributes": {f: m.attributes[f] for f in self.feature_names}}
                     for m in self.pool],
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def instance_from_dict(data: Mapping) -> Instance:
    def need(obj, key, where):
        if not isinstance(obj, Mapping) or key not in obj:
            raise InstanceError(f"missing key {key!r}", where)
        return obj[key]

    k = need(data, "panel_size", "$")
    if not isinstance(k, int) or isinstance(k, bool):
        raise InstanceError("panel_size must be an integer", "$.panel_size")
    features = []
    for i, f in enumerate(need(data, "features", "$")):
        where = f"$.features[{i}]"
        features.append(FeatureDef(str(need(f, "name", where)),
                                   tuple(str(v) for v in need(f, "values", where))))
    quotas = []
    for i, q in enumerate(need(data, "quotas", "$")):
        where = f"$.quotas[{i}]"
        lo, hi = need(q, "min", where), need(q, "max", where)
        if not all(isinstance(x, int) and not isinstance(x, bool) for x in (lo, hi)):
            raise InstanceError("quota min/max must be integers", where)
        quotas.append(Quota(str(need(q, "feature", where)), str(need(q, "value", where)), lo, hi))
    pool = []
    for i, m in enumerate(need(data, "pool", "$")):
        where = f"$.pool[{i}]"
        attrs = need(m, "attributes", where)
        if not isinstance(attrs, Mapping):
            raise InstanceError("attributes must be an object", where)
        pool.append(PoolMember(str(need(m, "id", where)),
                               {str(a): (None if v is None else str(v)) for a, v in attrs.items()}))
    return Instance(k, features, quotas, pool)


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8", newline="") as fh:
            return fh.read()
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _parse_json(source: Source) -> Instance:
    text = _read_text(source)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(exc.msg, f"line {exc.lineno} column {exc.colno}") from exc
    return instance_from_dict(data)


def _csv_rows(text: str, required: Sequence[str], name: str):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise InstanceError("empty file", name) from None
    header = [h.strip() for h in header]
    missing = [h for h in required if h not in header]
    if missing:
        raise InstanceError(f"header lacks columns {missing}", f"{name} line 1")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InstanceError(f"expected {len(header)} fields, got {len(row)}",
                                f"{name} line {lineno}")
        rows.append((lineno, dict(zip(header, (c.strip() for c in row)))))
    return header, rows


def _parse_csv_pair(pool_source: Source, quota_source: Source, panel_size: int) -> Instance:
    _, qrows = _csv_rows(_read_text(quota_source), ["feature", "value", "min", "max"], "quotas")
    values: dict[str, list[str]] = {}
    quotas = []
    for lineno, row in qrows:
        try:
            lo, hi = int(row["min"]), int(row["max"])
        except ValueError:
            raise InstanceError("min/max must be integers", f"quotas line {lineno}") from None
        values.setdefault(row["feature"], []).append(row["value"])
        quotas.append(Quota(row["feature"], row["value"], lo, hi))

    header, prows = _csv_rows(_read_text(pool_source), ["id"], "pool")
    feature_cols = [h for h in header if h != "id"]
    unknown = [f for f in feature_cols if f not in values]
    if unknown:
        raise InstanceError(f"pool columns {unknown} have no quotas", "pool line 1")
    features = [FeatureDef(f, tuple(values[f])) for f in feature_cols]
    # quota-only features would have no member values
    extra = [f for f in values if f not in feature_cols]
    if extra:
        raise InstanceError(f"quotas reference features {extra} absent from pool", "quotas")
    pool = []
    for lineno, row in prows:
        for f in feature_cols:
            if row[f] and row[f] not in values[f]:
                raise InstanceError(
                    f"member {row['id']!r} has unknown value {row[f]!r} for feature {f!r}",
                    f"pool line {lineno}")
        pool.append(PoolMember(row["id"], {f: row[f] for f in feature_cols}))
    return Instance(panel_size, features, quotas, pool)


def parse_instance(source, format: str = "json", *, quotas: Source | None = None,
                   panel_size: int | None = None) -> Instance:
    """Read and validate an instance.

    ``format="json"`` reads a single document. ``format="csv-pair"`` reads
    the pool CSV from ``source`` and the quota CSV from ``quotas``; the CSV
    pair carries no panel size, so ``panel_size`` is required.
    """
    if format == "json":
        return _parse_json(source)
    if format == "csv-pair":
        if quotas is None or panel_size is None:
            raise InstanceError("csv-pair format needs a quotas file and a panel size")
        return _parse_csv_pair(source, quotas, panel_size)
    raise InstanceError(f"unknown instance format {format!r}")


def load_instance(path, quotas=None, panel_size=None) -> Instance:
    """Pick the format from the file extension."""
    if str(path).lower().endswith(".csv"):
        return parse_instance(path, "csv-pair", quotas=quotas, panel_size=panel_size)
    return parse_instance(path, "json")


def write_csv_pair(instance: Instance, pool_out: IO, quotas_out: IO) -> None:
    w = csv.writer(pool_out, lineterminator="\n")
    w.writerow(["id", *instance.feature_names])
    for m in instance.pool:
        w.writerow([m.id, *(m.attributes[f] for f in instance.feature_names)])
    w = csv.writer(quotas_out, lineterminator="\n")
    w.writerow(["feature", "value", "min", "max"])
    for f in instance.features:
        for v in f.values:
            q = instance.quota(f.name, v)
            w.writerow([q.feature, q.value, q.min, q.max])


def group_by_vector(instance: Instance, feature_subset: Sequence[str],
                    anchor: str | None = None) -> list[VectorGroup]:
    """Partition the pool by feature-value vector restricted to ``feature_subset``.

    Groups are ordered by the anchor feature's value first (when given), then by
    the value indices of the subset's features in the order they are listed.
    Listing features in the order they were added to a counting table makes
    the groups of a larger subset refine those of a smaller one contiguously.
    """
    subset = tuple(feature_subset)
    for f in subset:
        instance.feature(f)
    if anchor is not None and anchor not in subset:
        raise InstanceError(f"anchor {anchor!r} is not in the feature subset")
    buckets: dict[tuple[int, ...], list[int]] = {}
    for i in range(instance.n):
        key = tuple(instance.code(i, f) for f in subset)
        buckets.setdefault(key, []).append(i)
    a = subset.index(anchor) if anchor is not None else None

    def order(key):
        return (key[a],) + key if a is not None else key

    sizes = tuple(len(instance.feature(f).values) for f in subset)
    groups = []
    for key in sorted(buckets, key=order):
        idx = tuple(buckets[key])
        groups.append(VectorGroup(FeatureValueVector(subset, key, sizes),
                                  tuple(instance.pool[i].id for i in idx), idx))
    return groups


def quota_compliant(profile: Profile, instance: Instance, feature_subset: Sequence[str]) -> bool:
    """Bounds hold for every value of the subset's features and the first
    feature's counts add up to the panel size."""
    subset = tuple(feature_subset)
    for f in subset:
        for v in instance.feature(f).values:
            q = instance.quota(f, v)
            if not q.min <= profile[(f, v)] <= q.max:
                return False
    if not subset:
        return True
    f0 = subset[0]
    return sum(profile[(f0, v)] for v in instance.feature(f0).values) == instance.panel_size
