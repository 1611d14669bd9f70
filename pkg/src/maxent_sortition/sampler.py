"""Exact panel sampling from a counting table, rejection for deferred
features, and the plan that decides which features the table enforces.

Draws are exact.  Every choice compares one uniform variate ``U`` with
exact rational thresholds.  The first 53 bits of ``U`` settle the choice
whenever they are farther than a few ulps from every (correctly rounded)
float threshold; otherwise more bits of the same ``U`` are drawn and
compared with big integers until the choice is settled.  Batches of panels
walk the layers together, so the common path is plain numpy.
"""

from __future__ import annotations

import json
import math
import multiprocessing
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .counting import (DEFAULT_MEMORY_BUDGET, DPTable, WeightVector, build_dp,
                       choose_anchor, reweight)
from .errors import InfeasibleError, MemoryBudgetExceeded, SamplingTimeout, SortitionError
from .instance import Instance
from .rng import RandomStream

_SCALE = 2.0**-53
# float thresholds are within 2^-53 of the truth, the 53-bit prefix within 2^-53
_MARGIN = 2.0**-50


@dataclass(frozen=True)
class PanelSample:
    members: tuple[str, ...]
    seed: int
    enforced_features: tuple[str, ...]
    rejection_attempts: int

    def to_json(self) -> str:
        return json.dumps({"members": list(self.members), "seed": self.seed,
                           "attempts": self.rejection_attempts})


@dataclass
class SamplerPlan:
    dp_features: list[str]
    deferred_features: list[str]
    satisfaction_estimates: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"dp_features": self.dp_features, "deferred_features": self.deferred_features,
                "satisfaction_estimates": self.satisfaction_estimates}


@dataclass(frozen=True)
class SamplerConfig:
    acceptance_floor: float = 1e-3
    estimate_samples: int = 100_000
    max_attempts: int = 1_000_000
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    batch_size: int = 4096
    use_anchor: bool = True


# -- exact choices --------------------------------------------------------


def _settle(prefix: int, num: Callable[[int], int], den: int, count: int,
            rng: RandomStream) -> int:
    """Index of the first threshold ``num(t) / den`` above ``U``.

    ``U`` starts with the 53 bits ``prefix``; further bits are drawn from
    ``rng`` until the interval of possible ``U`` lies between thresholds.
    """
    lo, bits = prefix, 53
    while True:
        # U lies in [lo, lo + 1) / 2^bits
        for t in range(count):
            scaled = num(t) << bits
            if (lo + 1) * den <= scaled:
                return t
            if lo * den < scaled:
                break
        else:
            return count - 1
        lo = (lo << 64) | rng.getrandbits(64)
        bits += 64


def _uniform53(rng: RandomStream, size: int) -> np.ndarray:
    return rng.generator.integers(0, 2**53, size=size, dtype=np.int64)


def _choose_counts(table: DPTable, j: int, states: np.ndarray, rng: RandomStream) -> np.ndarray:
    """How many members of group ``j`` each walk takes."""
    thr = table.thresholds(j)[:, states]
    u = _uniform53(rng, len(states))
    x = u * _SCALE
    d = (thr <= x).sum(axis=0)
    shaky = np.flatnonzero((np.abs(thr - x) < _MARGIN).any(axis=0))
    for b in shaky:
        cums, ds, _ = table.options(j, int(states[b]))
        t = _settle(int(u[b]), cums.__getitem__, cums[-1], len(cums), rng)
        d[b] = ds[t]
    return d


def _subset_probs(table: DPTable, j: int):
    """Suffix table of group ``j`` and the float inclusion probability for
    each member position and number of members still needed."""
    cache = table.__dict__.setdefault("_subset_probs", {})
    hit = cache.get(j)
    if hit is None:
        tab = table.subset_table(j)
        idx = table.groups[j].indices
        top = table.maxd[j]
        flt = np.zeros((len(idx), top + 1))
        for t, i in enumerate(idx):
            w = table.weights[i]
            for r in range(1, top + 1):
                if tab[t][r]:
                    flt[t, r] = w * tab[t + 1][r - 1] / tab[t][r]
        hit = cache[j] = (tab, flt)
    return hit


def _choose_members(table: DPTable, j: int, need: np.ndarray, out: np.ndarray,
                    fill: np.ndarray, rng: RandomStream) -> None:
    """Draw the chosen members of group ``j`` for every walk with ``need > 0``.

    Sequential inclusion: member ``t`` is taken with probability
    ``w_t * E[t+1][r-1] / E[t][r]`` where ``r`` members are still needed.
    """
    active = np.flatnonzero(need)
    if len(active) == 0:
        return
    idx = table.groups[j].indices
    m = len(idx)
    if np.all(need[active] == m):
        for i in idx:
            out[active, fill[active]] = i
            fill[active] += 1
        return
    if len({table.weights[i] for i in idx}) == 1:
        _floyd(idx, need, active, out, fill, rng)
        return
    tab, flt = _subset_probs(table, j)
    r = need[active].copy()
    for t, i in enumerate(idx):
        live = np.flatnonzero(r)
        if len(live) == 0:
            break
        rows = active[live]
        p = flt[t, r[live]]
        u = _uniform53(rng, len(live))
        x = u * _SCALE
        take = x < p
        for s in np.flatnonzero(np.abs(p - x) < _MARGIN):
            rr = int(r[live[s]])
            w = table.weights[i]
            num = w * tab[t + 1][rr - 1]
            den = tab[t][rr]
            take[s] = _settle(int(u[s]), lambda q: num if q == 0 else den, den, 2, rng) == 0
        hit = rows[take]
        out[hit, fill[hit]] = i
        fill[hit] += 1
        r[live[take]] -= 1


def _floyd(idx, need, active, out, fill, rng: RandomStream) -> None:
    """Uniform ``need``-subsets of equally weighted members (Floyd's algorithm)."""
    m = len(idx)
    members = np.asarray(idx, dtype=np.int64)
    d = need[active]
    top = int(d.max())
    picked = np.full((len(active), top), -1, dtype=np.int64)
    for s in range(top):
        live = np.flatnonzero(d > s)
        t = m - d[live] + s
        r = rng.generator.integers(0, t + 1)
        clash = (picked[live, :s] == r[:, None]).any(axis=1)
        picked[live, s] = np.where(clash, t, r)
    for s in range(top):
        live = np.flatnonzero(d > s)
        rows = active[live]
        out[rows, fill[rows]] = members[picked[live, s]]
        fill[rows] += 1


def draw_batch(table: DPTable, count: int, rng: RandomStream) -> np.ndarray:
    """``count`` independent exact draws as a ``(count, k)`` array of member indices."""
    if table.total_count == 0:
        raise InfeasibleError("cannot sample: the enforced quotas admit no panel",
                              table.features)
    k = table.instance.panel_size
    out = np.zeros((count, k), dtype=np.int64)
    fill = np.zeros(count, dtype=np.int64)
    states = np.zeros(count, dtype=np.int64)
    for j in range(len(table.groups)):
        if table.maxd[j] == 0:
            states = table.nexts[j][0, states]
            continue
        d = _choose_counts(table, j, states, rng)
        _choose_members(table, j, d, out, fill, rng)
        states = table.nexts[j][d, states]
    out.sort(axis=1)
    return out


def sample_exact(table: DPTable, weights: WeightVector | None, rng: RandomStream) -> list[int]:
    """One panel (member indices) drawn with probability proportional to its weight
    among the panels satisfying the table's quotas."""
    if weights is not None and weights.as_list(table.instance) != table.weights:
        table = reweight(table, weights)
    return draw_batch(table, 1, rng)[0].tolist()


# -- quota checks ---------------------------------------------------------


class _Checker:
    """Vectorized quota checks of panel batches against whole features."""

    def __init__(self, instance: Instance, features: Sequence[str]):
        self.instance = instance
        self.features = list(features)
        self.codes = np.array([instance.codes(i) for i in range(instance.n)], dtype=np.int64)
        self.bounds = {f: np.array(instance.bounds(f), dtype=np.int64) for f in self.features}

    def per_feature(self, panels: np.ndarray) -> dict[str, np.ndarray]:
        out = {}
        for f in self.features:
            col = self.codes[panels, self.instance.feature_index(f)]
            b = self.bounds[f]
            ok = np.ones(len(panels), dtype=bool)
            for v in range(len(b)):
                c = (col == v).sum(axis=1)
                ok &= (c >= b[v, 0]) & (c <= b[v, 1])
            out[f] = ok
        return out

    def all(self, panels: np.ndarray) -> np.ndarray:
        ok = np.ones(len(panels), dtype=bool)
        for v in self.per_feature(panels).values():
            ok &= v
        return ok


def _deferred(instance: Instance, table: DPTable) -> list[str]:
    return [f for f in instance.binding_features() if f not in table.features]


def rejection_stream(instance: Instance, table: DPTable, rng: RandomStream,
                     max_attempts: int = 1_000_000, batch_size: int = 4096):
    """Yield ``(panel, attempts)`` forever, each panel satisfying every quota.

    ``attempts`` counts the exact draws since the previous accepted panel.
    """
    checker = _Checker(instance, _deferred(instance, table))
    since = accepted = total = 0
    batch = 1
    while True:
        panels = draw_batch(table, min(batch, max_attempts - since), rng)
        ok = checker.all(panels) if checker.features else np.ones(len(panels), dtype=bool)
        start = 0
        for b in np.flatnonzero(ok):
            tries = since + int(b) - start + 1
            if tries > max_attempts:
                break
            yield panels[b].tolist(), tries
            since, start = 0, int(b) + 1
            accepted += 1
            total += tries
        since += len(panels) - start
        if since >= max_attempts:
            total += since
            raise SamplingTimeout(
                f"no panel satisfying every quota within {max_attempts} attempts "
                f"({accepted} accepted of {total} drawn)", attempts=total, accepted=accepted)
        batch = min(batch * 2, batch_size)


def sample_rejection(instance: Instance, table: DPTable, weights: WeightVector | None,
                     rng: RandomStream, max_attempts: int = 1_000_000) -> PanelSample:
    """One panel from the weighted distribution over *all* feasible panels."""
    if weights is not None and weights.as_list(instance) != table.weights:
        table = reweight(table, weights)
    panel, tries = next(rejection_stream(instance, table, rng, max_attempts))
    return PanelSample(tuple(instance.member_ids[i] for i in panel), rng.seed,
                       table.features, tries)


def estimate_satisfaction(table: DPTable, weights: WeightVector | None,
                          deferred_features: Sequence[str], num_samples: int,
                          rng: RandomStream, batch_size: int = 4096) -> dict[str, float]:
    """Fraction of exact draws whose counts satisfy each deferred feature."""
    if num_samples < 1:
        raise ValueError("num_samples must be at least 1")
    if weights is not None and weights.as_list(table.instance) != table.weights:
        table = reweight(table, weights)
    checker = _Checker(table.instance, deferred_features)
    hits = {f: 0 for f in deferred_features}
    left = num_samples
    while left:
        size = min(left, batch_size)
        for f, ok in checker.per_feature(draw_batch(table, size, rng)).items():
            hits[f] += int(ok.sum())
        left -= size
    return {f: h / num_samples for f, h in hits.items()}


def plan_and_build(instance: Instance, weights: WeightVector | None = None,
                   config: SamplerConfig = SamplerConfig(), rng: RandomStream | None = None,
                   progress: Callable[[dict], None] | None = None) -> tuple[DPTable, SamplerPlan]:
    """Grow the enforced feature set until rejection of the rest is cheap enough.

    Starts from the anchor feature.  After each build the deferred features'
    satisfaction probabilities are estimated; if their product reaches the
    acceptance floor the rest stay deferred, otherwise the least satisfied
    feature joins the table.  A feature whose table would exceed the memory
    budget stays deferred and the next one is tried.
    """
    rng = rng if rng is not None else RandomStream(0)
    binding = list(instance.binding_features())
    anchor = choose_anchor(instance, binding) if config.use_anchor else (binding[0] if binding else None)
    dp = [anchor] if anchor is not None else []
    table = build_dp(instance, dp, weights, use_anchor=config.use_anchor,
                     memory_budget=config.memory_budget, progress=progress)
    if table.total_count == 0:
        raise InfeasibleError(f"no panel satisfies the quotas of {dp or ['panel size']}", dp)
    deferred = [f for f in binding if f not in dp]
    oversized: set[str] = set()
    estimates: dict[str, float] = {}
    step = 0
    while deferred:
        estimates = estimate_satisfaction(table, None, deferred, config.estimate_samples,
                                          rng.spawn(1, step), config.batch_size)
        step += 1
        if progress is not None:
            progress({"event": "plan", "dp_features": dp, "estimates": estimates})
        if math.prod(estimates.values()) >= config.acceptance_floor:
            break
        grown = None
        for f in sorted((f for f in deferred if f not in oversized), key=estimates.__getitem__):
            try:
                grown = build_dp(instance, dp + [f], weights, prune_with=table,
                                 use_anchor=config.use_anchor,
                                 memory_budget=config.memory_budget, progress=progress)
            except MemoryBudgetExceeded as exc:
                oversized.add(f)
                if progress is not None:
                    progress({"event": "deferred", "feature": f, "reason": str(exc)})
                continue
            if grown.total_count == 0:
                raise InfeasibleError(f"no panel satisfies the quotas of {dp + [f]}", dp + [f])
            dp.append(f)
            deferred.remove(f)
            break
        if grown is None:
            break
        table = grown
        estimates = {}
    estimates = {f: estimates[f] for f in deferred if f in estimates}
    return table, SamplerPlan(list(table.features), deferred, estimates)


# -- many panels ------------------------------------------------------------

_WORKER_STATE: dict = {}


def _chunk(args) -> list[tuple[list[int], int]]:
    seed, index, count, max_attempts, batch_size = args
    instance, table = _WORKER_STATE["instance"], _WORKER_STATE["table"]
    gen = rejection_stream(instance, table, RandomStream(seed, (2, index)),
                           max_attempts, batch_size)
    return [next(gen) for _ in range(count)]


def sample_many(instance: Instance, table: DPTable, count: int, seed: int, *,
                workers: int = 1, chunk_size: int = 1000, max_attempts: int = 1_000_000,
                batch_size: int = 4096,
                progress: Callable[[dict], None] | None = None) -> list[PanelSample]:
    """``count`` independent panels over all quotas.

    Chunk ``c`` always uses the stream ``(seed, 2, c)``, so the output is the
    same for any number of workers.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    jobs = [(seed, c, min(chunk_size, count - c * chunk_size), max_attempts, batch_size)
            for c in range(math.ceil(count / chunk_size))]
    _WORKER_STATE.update(instance=instance, table=table)
    started = time.monotonic()
    results: list = []
    try:
        if workers > 1 and len(jobs) > 1:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(min(workers, len(jobs))) as pool:
                for res in pool.imap(_chunk, jobs):
                    results.append(res)
                    if progress is not None:
                        progress({"event": "sampled", "chunks": len(results), "of": len(jobs),
                                  "seconds": round(time.monotonic() - started, 3)})
        else:
            for job in jobs:
                results.append(_chunk(job))
                if progress is not None:
                    progress({"event": "sampled", "chunks": len(results), "of": len(jobs),
                              "seconds": round(time.monotonic() - started, 3)})
    finally:
        _WORKER_STATE.clear()
    ids = instance.member_ids
    return [PanelSample(tuple(ids[i] for i in panel), seed, table.features, tries)
            for chunk in results for panel, tries in chunk]


def write_jsonl(samples: Iterable[PanelSample], stream) -> None:
    for s in samples:
        stream.write(s.to_json() + "\n")


def read_jsonl(stream) -> list[PanelSample]:
    out = []
    for n, line in enumerate(stream, 1):
        line = line.strip()
        if not line:
            continue
        try:
            row = json.loads(line)
            out.append(PanelSample(tuple(row["members"]), int(row.get("seed", 0)), (),
                                   int(row.get("attempts", 1))))
        except (ValueError, KeyError, TypeError) as exc:
            raise SortitionError(f"line {n}: not a panel record ({exc})") from None
    return out
