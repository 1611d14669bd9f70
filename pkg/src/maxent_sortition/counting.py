"""Exact weighted counting of quota-feasible panels.

The table is a layered dynamic program over vector groups (members sharing
a feature-value vector over the enforced features).  Layer ``j`` holds every
partial profile that can still be completed with groups ``j, j+1, ...``
together with the exact weighted number of completions.  Counts are Python
integers; nothing is rounded.

A partial profile is a row of small counters, one per *field*:

* ``size``: members chosen so far,
* ``anchor``: members chosen with the *current* value of the anchor feature.
  Groups are processed value-contiguously by the anchor, so after the last
  group of a value its count is checked and reset to zero, which drops every
  finished anchor value from the state,
* one field per binding feature-value pair of every other enforced feature.

Rows are packed into one mixed-radix integer key (radix = field cap + 1).
Each layer is a sorted key array, and whole layers are advanced with numpy.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InstanceError, MemoryBudgetExceeded
from .instance import Instance, VectorGroup, group_by_vector

MAX_WEIGHT = 10**12
DEFAULT_MEMORY_BUDGET = 8 * 2**30
# key, count pointer, int object and transition indices, roughly
BYTES_PER_STATE = 96
_INT64_LIMIT = 2**62


@dataclass(frozen=True)
class WeightVector:
    """Strictly positive integer weight per member id."""

    weights: Mapping[str, int]

    def __post_init__(self):
        for mid, w in self.weights.items():
            if not isinstance(w, int) or isinstance(w, bool):
                raise InstanceError(f"weight of {mid!r} must be an integer, got {w!r}")
            if not 1 <= w <= MAX_WEIGHT:
                raise InstanceError(f"weight of {mid!r} outside [1, 10^12]: {w}")

    @classmethod
    def uniform(cls, instance: Instance, value: int = 1) -> "WeightVector":
        return cls({mid: value for mid in instance.member_ids})

    @classmethod
    def from_list(cls, instance: Instance, values: Sequence[int]) -> "WeightVector":
        if len(values) != instance.n:
            raise InstanceError(f"expected {instance.n} weights, got {len(values)}")
        out = {}
        for mid, v in zip(instance.member_ids, values):
            if isinstance(v, (float, np.floating)) and not float(v).is_integer():
                raise InstanceError(f"weight of {mid!r} must be an integer, got {v!r}")
            out[mid] = int(v)
        return cls(out)

    def as_list(self, instance: Instance) -> list[int]:
        try:
            return [self.weights[mid] for mid in instance.member_ids]
        except KeyError as exc:
            raise InstanceError(f"no weight for member {exc.args[0]!r}") from None

    def is_uniform(self) -> bool:
        return len(set(self.weights.values())) <= 1


def convolution_coeffs(weights: Sequence[int], limit: int | None = None) -> list[int]:
    """Coefficients of ``prod(1 + w x)``: entry ``d`` sums the products of
    all ``d``-subsets of ``weights``.  Truncated at degree ``limit``."""
    n = len(weights)
    top = n if limit is None else min(n, limit)
    if n and all(w == weights[0] for w in weights):
        w = weights[0]
        return [math.comb(n, d) * w**d for d in range(top + 1)]
    poly = [1] + [0] * top
    for i, w in enumerate(weights):
        for d in range(min(i + 1, top), 0, -1):
            poly[d] += w * poly[d - 1]
    return poly


def choose_anchor(instance: Instance, feature_subset: Sequence[str]) -> str | None:
    """Binding feature with the most values; ties go to the earlier one."""
    best = None
    for f in feature_subset:
        if not instance.is_binding(f):
            continue
        if best is None or len(instance.feature(f).values) > len(instance.feature(best).values):
            best = f
    return best


def _lookup(haystack: np.ndarray, needles: np.ndarray):
    """Positions of ``needles`` in sorted ``haystack`` and a found mask."""
    if len(haystack) == 0 or len(needles) == 0:
        return np.zeros(len(needles), dtype=np.int64), np.zeros(len(needles), dtype=bool)
    idx = np.searchsorted(haystack, needles)
    idx[idx == len(haystack)] = 0
    return idx, haystack[idx] == needles


class DPTable:
    """Counting table; treat as immutable once built.

    ``keys[j]`` is the sorted array of packed states of layer ``j`` (only
    states with a nonzero count survive), ``counts[j]`` the matching object
    array of exact counts, and ``nexts[j][d, i]`` the index in layer ``j+1``
    reached from state ``i`` by choosing ``d`` members of group ``j``, or -1.
    """

    def __init__(self, instance: Instance, features: tuple[str, ...], anchor: str | None,
                 groups: list[VectorGroup], weights: list[int]):
        self.instance = instance
        self.features = features
        self.anchor = anchor
        self.groups = groups
        self.weights = weights
        self.keys: list[np.ndarray] = []
        self.counts: list[np.ndarray] = []
        self.nexts: list = []
        self.pruned_by: tuple[str, ...] | None = None
        self._options: list[dict] = []
        self._subset_tables: dict = {}
        self._thresholds: dict = {}
        self._setup()

    def _setup(self):
        inst = self.instance
        k = inst.panel_size
        groups = self.groups
        J = len(groups)
        fields: list = ["size"]
        if self.anchor is not None:
            fields.append("anchor")
        for f in self.features:
            if f == self.anchor or not inst.is_binding(f):
                continue
            fields.extend((f, v) for v in inst.feature(f).values if not inst.non_binding(f, v))
        self.fields = fields
        nf = len(fields)

        eff = list(groups[0].vector.features)
        a_pos = eff.index(self.anchor) if self.anchor else None
        a_codes = [g.vector.codes[a_pos] for g in groups] if a_pos is not None else []
        a_bounds = inst.bounds(self.anchor) if self.anchor else []
        mult = np.array([g.multiplicity for g in groups], dtype=np.int64)

        omega = np.zeros((J, nf), dtype=np.int64)
        upper = np.zeros((J, nf), dtype=np.int64)
        lower = np.zeros(nf, dtype=np.int64)
        omega[:, 0], upper[:, 0], lower[0] = 1, k, k
        if a_pos is not None:
            omega[:, 1] = 1
            upper[:, 1] = [a_bounds[a][1] for a in a_codes]
        for c, fld in enumerate(fields):
            if isinstance(fld, tuple):
                p, vi = eff.index(fld[0]), inst.value_index(*fld)
                omega[:, c] = [g.vector.codes[p] == vi for g in groups]
                q = inst.quota(*fld)
                upper[:, c], lower[c] = q.max, q.min

        # supply strictly after each group, per field
        after = np.zeros((J, nf), dtype=np.int64)
        running = np.zeros(nf, dtype=np.int64)
        a_left: dict[int, int] = {}
        for j in range(J - 1, -1, -1):
            after[j] = running
            if a_pos is not None:
                after[j, 1] = a_left.get(a_codes[j], 0)
                a_left[a_codes[j]] = a_left.get(a_codes[j], 0) + int(mult[j])
            running = running + omega[j] * mult[j]
        thresh = lower - after
        if a_pos is not None:
            thresh[:, 1] = [a_bounds[a][0] for a in a_codes] - after[:, 1]
        self.feasible_start = bool(np.all(lower <= running)) and all(
            lo <= a_left.get(v, 0) for v, (lo, _) in enumerate(a_bounds))

        cap = running.copy()
        if a_pos is not None:
            cap[1] = max(a_left.values())
        top = np.minimum(upper.max(axis=0), cap)
        radix, r = [], 1
        for t in top:
            radix.append(r)
            r *= int(t) + 1
        self.radix_total = r
        self.wide = r >= _INT64_LIMIT
        dtype = object if self.wide else np.int64
        self.key_dtype = dtype
        self.radix = np.array(radix, dtype=dtype)
        self.base = np.array([int(t) + 1 for t in top], dtype=dtype)

        self.omega, self.upper, self.thresh = omega, upper, thresh
        self.maxd = [int(min(mult[j], upper[j][omega[j] > 0].min())) for j in range(J)]
        self.fin = [a_pos is not None and (j == J - 1 or a_codes[j + 1] != a_codes[j])
                    for j in range(J)]
        self.anchor_col = 1 if a_pos is not None else None
        self.order = [i for g in groups for i in g.indices]
        self.starts = [0]
        for g in groups:
            self.starts.append(self.starts[-1] + g.multiplicity)
        self.conv_coeffs = [convolution_coeffs([self.weights[i] for i in g.indices], self.maxd[j])
                            for j, g in enumerate(groups)]

    # -- key packing ------------------------------------------------------

    def encode(self, rows: np.ndarray) -> np.ndarray:
        if not self.wide:
            return rows @ self.radix
        if len(rows) == 0:
            return np.zeros(0, dtype=object)
        return (rows.astype(object) * self.radix).sum(axis=1)

    def decode(self, keys: np.ndarray) -> np.ndarray:
        if len(keys) == 0:
            return np.zeros((0, len(self.fields)), dtype=np.int64)
        return ((keys[:, None] // self.radix) % self.base).astype(np.int64)

    def successors(self, j: int, rows: np.ndarray, d: int):
        """Rows after choosing ``d`` members of group ``j``, and a validity mask."""
        nxt = rows + d * self.omega[j]
        ok = (nxt <= self.upper[j]).all(axis=1) & (nxt >= self.thresh[j]).all(axis=1)
        if self.fin[j]:
            nxt[:, self.anchor_col] = 0
        return nxt, ok

    def advance(self, j: int, key: int, d: int) -> int | None:
        """Key after choosing ``d`` members of group ``j`` from ``key``, or None."""
        if d > self.maxd[j]:
            return None
        nxt, ok = self.successors(j, self.decode(np.array([key], dtype=self.key_dtype)), d)
        return int(self.encode(nxt)[0]) if ok[0] else None

    # -- queries --------------------------------------------------------

    def __len__(self):
        return len(self.groups)

    @property
    def total_count(self) -> int:
        if not self.keys or len(self.keys[0]) == 0:
            return 0
        return int(self.counts[0][0])

    @property
    def num_states(self) -> int:
        return sum(len(k) for k in self.keys)

    def layer(self, j: int) -> dict[int, int]:
        return {int(k): int(c) for k, c in zip(self.keys[j], self.counts[j])}

    def count_at(self, j: int, key: int) -> int:
        idx, found = _lookup(self.keys[j], np.array([key], dtype=self.key_dtype))
        return int(self.counts[j][idx[0]]) if found[0] else 0

    def options(self, j: int, i: int):
        """Cached ``(cumulative weights, d values, next indices)`` out of state ``i`` of layer ``j``."""
        cache = self._options[j]
        hit = cache.get(i)
        if hit is None:
            coeffs, nxt, phi = self.conv_coeffs[j], self.nexts[j], self.counts[j + 1]
            cums, ds, idx = [], [], []
            acc = 0
            for d in range(nxt.shape[0]):
                t = int(nxt[d, i])
                if t >= 0:
                    acc += coeffs[d] * phi[t]
                    cums.append(acc)
                    ds.append(d)
                    idx.append(t)
            hit = (cums, ds, idx)
            cache[i] = hit
        return hit

    def thresholds(self, j: int) -> np.ndarray:
        """Cumulative probabilities of choosing ``0..d`` members of group ``j``
        from every state of layer ``j``, shape ``(maxd + 1, states)``.

        Each entry is the correctly rounded float of an exact ratio, which is
        what lets the sampler decide most draws without big integers.
        """
        tab = self._thresholds.get(j)
        if tab is None:
            nxt, phi = self.nexts[j], self.counts[j]
            tab = np.empty(nxt.shape)
            acc = np.zeros(nxt.shape[1], dtype=object)
            for d in range(nxt.shape[0]):
                src = np.flatnonzero(nxt[d] >= 0)
                if len(src):
                    acc[src] += self.conv_coeffs[j][d] * self.counts[j + 1][nxt[d][src]]
                tab[d] = (acc / phi).astype(float) if len(acc) else 0.0
            tab[-1] = 1.0
            self._thresholds[j] = tab
        return tab

    def subset_table(self, j: int) -> list[list[int]]:
        """Suffix table ``E[t][d]``: weighted ``d``-subsets of members ``t..`` of group ``j``."""
        tab = self._subset_tables.get(j)
        if tab is None:
            top = self.maxd[j]
            rows = [[1] + [0] * top]
            for i in reversed(self.groups[j].indices):
                w, prev = self.weights[i], rows[-1]
                rows.append([1] + [prev[d] + w * prev[d - 1] for d in range(1, top + 1)])
            rows.reverse()
            tab = self._subset_tables[j] = rows
        return tab

    def layer_stats(self) -> list[dict]:
        out = []
        for j, counts in enumerate(self.counts):
            top = max((int(c) for c in counts), default=0)
            out.append({"layer": j, "states": len(counts), "bytes": len(counts) * BYTES_PER_STATE,
                        "max_count_bits": top.bit_length()})
        return out

    def is_uniform(self) -> bool:
        return len(set(self.weights)) <= 1


def _locate(table: DPTable, coarse: DPTable) -> list[tuple[int, int]]:
    """Per layer boundary of ``table``: the coarse group it falls in and how
    many of that group's members precede it."""
    out, g, cs = [], 0, coarse.starts
    for p in table.starts:
        while g < len(coarse.groups) and cs[g + 1] <= p:
            g += 1
        out.append((g, p - cs[g]))
    return out


def _prune_mask(coarse: DPTable, where: tuple[int, int], keys: np.ndarray) -> np.ndarray:
    """True where a state's restriction to the coarse fields can still be
    completed in the coarse table.

    Coarse fields are a prefix of the fine ones, so restriction is a modulo.
    Inside a coarse group the coarse count is a sum over how many of the
    group's remaining members get chosen, nonzero iff some term is.
    """
    g, inside = where
    sub = keys % coarse.radix_total
    if not coarse.wide:
        sub = sub.astype(np.int64)
    if inside == 0:
        return _lookup(coarse.keys[g], sub)[1]
    rows = coarse.decode(sub)
    remaining = coarse.groups[g].multiplicity - inside
    hit = np.zeros(len(keys), dtype=bool)
    for d in range(min(remaining, coarse.maxd[g]) + 1):
        nxt, ok = coarse.successors(g, rows, d)
        hit |= ok & _lookup(coarse.keys[g + 1], coarse.encode(nxt))[1]
    return hit


def _backward(table: DPTable, keys: list, retain: bool = True) -> None:
    """Exact counts over the forward key sets; zero-count states are dropped."""
    J = len(table.groups)
    counts: list = [None] * (J + 1)
    nexts: list = [None] * (J + 1)
    counts[J] = np.ones(len(keys[J]), dtype=np.int64).astype(object)
    for j in range(J - 1, -1, -1):
        K = keys[j]
        rows = table.decode(K)
        acc = np.zeros(len(K), dtype=object)
        nxt_idx = np.full((table.maxd[j] + 1, len(K)), -1, dtype=np.int64)
        coeffs = table.conv_coeffs[j]
        for d in range(table.maxd[j] + 1):
            nxt, ok = table.successors(j, rows, d)
            src = np.flatnonzero(ok)
            if len(src) == 0:
                continue
            idx, found = _lookup(keys[j + 1], table.encode(nxt[src]))
            src, idx = src[found], idx[found]
            nxt_idx[d, src] = idx
            acc[src] += coeffs[d] * counts[j + 1][idx]
        keep = acc != 0
        if not keep.all():
            K, acc, nxt_idx = K[keep], acc[keep], nxt_idx[:, keep]
        keys[j], counts[j], nexts[j] = K, acc, nxt_idx
        if not retain and j + 1 < J:
            keys[j + 1], counts[j + 1], nexts[j + 1] = keys[j + 1][:0], counts[j + 1][:0], None
    table.keys, table.counts, table.nexts = keys, counts, nexts
    table._options = [{} for _ in keys]


def _empty(table: DPTable) -> DPTable:
    J = len(table.groups)
    table.keys = [np.zeros(0, dtype=table.key_dtype) for _ in range(J + 1)]
    table.counts = [np.zeros(0, dtype=object) for _ in range(J + 1)]
    table.nexts = [np.zeros((table.maxd[j] + 1, 0), dtype=np.int64) for j in range(J)] + [None]
    table._options = [{} for _ in range(J + 1)]
    return table


def build_dp(instance: Instance, feature_subset: Sequence[str], weights: WeightVector | None = None,
             prune_with: DPTable | None = None, *, use_anchor: bool = True,
             memory_budget: int = DEFAULT_MEMORY_BUDGET, retain: bool = True,
             progress: Callable[[dict], None] | None = None) -> DPTable:
    """Build the weighted counting table for the quotas of ``feature_subset``.

    An empty subset enforces only the panel size.  With ``prune_with`` (a
    table over a subset of these features with the same anchor) no state is
    materialized whose restriction has a zero count there; the feature order
    becomes the pruning table's order followed by the new features.
    Infeasibility is a result, not an error: the total count is then 0.
    """
    subset = list(dict.fromkeys(feature_subset))
    for f in subset:
        instance.feature(f)
    if prune_with is not None:
        missing = [f for f in prune_with.features if f not in subset]
        if missing:
            raise InstanceError(f"pruning table enforces features {missing} outside the subset")
        subset = list(prune_with.features) + [f for f in subset if f not in prune_with.features]
    anchor = choose_anchor(instance, subset) if use_anchor else None
    if prune_with is not None and prune_with.anchor != anchor:
        raise InstanceError(
            f"pruning table anchored on {prune_with.anchor!r}, this table on {anchor!r}")
    effective = [f for f in subset if instance.is_binding(f)]
    groups = group_by_vector(instance, effective, anchor=anchor)
    wlist = weights.as_list(instance) if weights is not None else [1] * instance.n
    table = DPTable(instance, tuple(subset), anchor, groups, wlist)
    if prune_with is not None:
        table.pruned_by = prune_with.features
        if prune_with.total_count == 0:
            return _empty(table)
    if not table.feasible_start:
        return _empty(table)

    where = _locate(table, prune_with) if prune_with is not None else None
    J = len(groups)
    cur = np.zeros(1, dtype=table.key_dtype)
    if where is not None:
        cur = cur[_prune_mask(prune_with, where[0], cur)]
    keys: list = [cur]
    total = len(cur)
    for j in range(J):
        rows = table.decode(cur)
        parts = []
        for d in range(table.maxd[j] + 1):
            nxt, ok = table.successors(j, rows, d)
            if ok.any():
                parts.append(table.encode(nxt[ok]))
        cur = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=table.key_dtype)
        if where is not None and len(cur):
            cur = cur[_prune_mask(prune_with, where[j + 1], cur)]
        keys.append(cur)
        total += len(cur)
        est = total * BYTES_PER_STATE
        if est > memory_budget:
            raise MemoryBudgetExceeded(j + 1, total, est, memory_budget)
        if progress is not None and (j % 25 == 0 or j == J - 1):
            progress({"event": "forward", "layer": j + 1, "layers": J, "states": len(cur),
                      "total_states": total})
    _backward(table, keys, retain)
    if progress is not None:
        progress({"event": "built", "features": list(table.features), "anchor": anchor,
                  "groups": J, "states": table.num_states, "count": str(table.total_count)})
    return table


def total_count(table: DPTable) -> int:
    return table.total_count


def reweight(table: DPTable, weights: WeightVector) -> DPTable:
    """Counts under new weights over the same state skeleton.

    Which states have a nonzero count does not depend on the (positive)
    weights, so the stored transitions are reused and only the arithmetic
    is redone.
    """
    new = DPTable(table.instance, table.features, table.anchor, table.groups,
                  weights.as_list(table.instance))
    new.pruned_by = table.pruned_by
    J = len(table.groups)
    counts: list = [None] * (J + 1)
    counts[J] = table.counts[J]
    for j in range(J - 1, -1, -1):
        nxt = table.nexts[j]
        acc = np.zeros(len(table.keys[j]), dtype=object)
        for d in range(nxt.shape[0]):
            src = np.flatnonzero(nxt[d] >= 0)
            if len(src):
                acc[src] += new.conv_coeffs[j][d] * counts[j + 1][nxt[d][src]]
        counts[j] = acc
    new.keys, new.counts, new.nexts = table.keys, counts, table.nexts
    new._options = [{} for _ in counts]
    return new


def count_incrementally(instance: Instance, features: Sequence[str] | None = None,
                        weights: WeightVector | None = None, *, use_anchor: bool = True,
                        memory_budget: int = DEFAULT_MEMORY_BUDGET,
                        progress: Callable[[dict], None] | None = None) -> list[DPTable]:
    """Tables for growing feature prefixes, each pruned by the previous one.

    The anchor comes first so every table in the chain shares it.  Stops
    early once a prefix is infeasible.
    """
    feats = list(features) if features is not None else list(instance.feature_names)
    anchor = choose_anchor(instance, feats) if use_anchor else None
    order = ([anchor] if anchor else []) + [f for f in feats if f != anchor]
    tables: list[DPTable] = []
    prev = None
    for i in (range(1, len(order) + 1) if order else [0]):
        t = build_dp(instance, order[:i], weights, prune_with=prev, use_anchor=use_anchor,
                     memory_budget=memory_budget, progress=progress)
        tables.append(t)
        prev = t
        if t.total_count == 0:
            break
    return tables


def pruning_audit(table: DPTable, coarse: DPTable) -> list[tuple[int, int, int, int]]:
    """Compare every stored state with the coarse completion count of its restriction.

    Returns ``(layer, key, count, coarse_count)`` for each state whose count
    exceeds the coarse count or whose coarse count is zero; empty means the
    audit passed.  Pure Python and slow, meant for tests.
    """
    bad = []
    where = _locate(table, coarse)
    G = len(coarse.groups)
    for j in range(len(table.keys)):
        g, inside = where[j]
        partial = []
        if g < G and inside:
            rest = table.order[table.starts[j]:coarse.starts[g + 1]]
            partial = convolution_coeffs([coarse.weights[i] for i in rest])
        for key, count in zip(table.keys[j], table.counts[j]):
            sub = int(key) % coarse.radix_total
            if not partial:
                ref = coarse.count_at(g, sub)
            else:
                ref = 0
                for d, c in enumerate(partial):
                    nk = coarse.advance(g, sub, d)
                    if nk is not None:
                        ref += c * coarse.count_at(g + 1, nk)
            if ref == 0 or int(count) > ref:
                bad.append((j, int(key), int(count), ref))
    return bad


def dump_layer_stats(table: DPTable, stream=sys.stderr) -> None:
    for row in table.layer_stats():
        stream.write(json.dumps(row) + "\n")
