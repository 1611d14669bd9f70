"""Measures over sampled panels: selection probabilities with confidence
intervals, fairness aggregates, intersectional diversity, and hold-out
generalization."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import beta

from .counting import WeightVector, build_dp
from .errors import InstanceError
from .instance import Instance
from .rng import RandomStream
from .sampler import PanelSample, SamplerConfig, plan_and_build, sample_many


def jeffreys_interval(x: int, m: int, level: float = 0.95) -> tuple[float, float]:
    """Jeffreys interval for ``x`` successes out of ``m``; closed at 0 and 1 at the extremes."""
    a = (1.0 - level) / 2
    lo = 0.0 if x == 0 else float(beta.ppf(a, x + 0.5, m - x + 0.5))
    hi = 1.0 if x == m else float(beta.ppf(1 - a, x + 0.5, m - x + 0.5))
    return lo, hi


@dataclass(frozen=True)
class MarginalEstimate:
    member_ids: tuple[str, ...]
    hits: np.ndarray
    m: int
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def as_rows(self) -> list[dict]:
        return [{"member": mid, "hits": int(h), "point": float(p), "lower": float(lo),
                 "upper": float(hi)}
                for mid, h, p, lo, hi in zip(self.member_ids, self.hits, self.point,
                                             self.lower, self.upper)]


def _index_panels(panels, instance: Instance) -> np.ndarray:
    """Panels (samples, id lists or index lists) as a ``(m, k)`` index array."""
    rows = []
    for p in panels:
        members = p.members if isinstance(p, PanelSample) else p
        rows.append([m if isinstance(m, (int, np.integer)) else instance.member_index(m)
                     for m in members])
    if not rows:
        return np.zeros((0, instance.panel_size), dtype=np.int64)
    arr = np.array(rows, dtype=np.int64)
    if arr.ndim != 2:
        raise InstanceError("panels have different sizes")
    return arr


def estimate_marginals(panels, instance: Instance, level: float = 0.95) -> MarginalEstimate:
    arr = _index_panels(panels, instance)
    m = len(arr)
    if m == 0:
        raise ValueError("need at least one panel")
    hits = np.bincount(arr.ravel(), minlength=instance.n)
    point = hits / m
    a = (1.0 - level) / 2
    lower = np.where(hits == 0, 0.0, beta.ppf(a, hits + 0.5, m - hits + 0.5))
    upper = np.where(hits == m, 1.0, beta.ppf(1 - a, hits + 0.5, m - hits + 0.5))
    return MarginalEstimate(instance.member_ids, hits, m, point, lower, upper)


def gini(values: Sequence[float]) -> float:
    """Mean absolute difference over all ordered pairs divided by twice the mean."""
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    mean = x.mean()
    if mean == 0:
        return 0.0
    # sum_{i,j} |x_i - x_j| = 2 sum_i (2i - n + 1) x_(i) for sorted x; the rank
    # weights sum to zero, so shifting by the minimum keeps equal inputs exactly 0
    total = 2.0 * np.dot(2 * np.arange(n) - n + 1, x - x[0])
    return float(total / (2 * n * n * mean))


def fairness_summary(marginals: Sequence[float]) -> dict:
    x = np.asarray(marginals, dtype=float)
    if len(x) == 0:
        raise ValueError("empty marginal vector")
    geo = 0.0 if np.any(x <= 0) else float(np.exp(np.log(x).mean()))
    return {"gini": gini(x), "geometric_mean": geo, "min": float(x.min()), "max": float(x.max())}


@dataclass(frozen=True)
class DiversityReport:
    expected_vector_count: float
    vector_count_ratio: float
    total_correlation: float
    pairwise_nmi: dict[tuple[str, str], float]

    def to_dict(self) -> dict:
        return {"expected_vector_count": self.expected_vector_count,
                "vector_count_ratio": self.vector_count_ratio,
                "total_correlation": self.total_correlation,
                "pairwise_nmi": {f"{a}|{b}": v for (a, b), v in self.pairwise_nmi.items()}}


def _row_entropy(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Entropy (nats) and number of distinct labels of each row."""
    rows, k = labels.shape
    s = np.sort(labels, axis=1)
    new = np.ones_like(s, dtype=bool)
    new[:, 1:] = s[:, 1:] != s[:, :-1]
    starts = np.flatnonzero(new.ravel())
    lengths = np.diff(np.append(starts, s.size))
    p = lengths / k
    h = np.bincount(starts // k, weights=-p * np.log(p), minlength=rows)
    return h, new.sum(axis=1)


def diversity_report(panels, instance: Instance) -> DiversityReport:
    """Per-panel empirical value distributions, averaged over panels."""
    arr = _index_panels(panels, instance)
    if len(arr) == 0:
        raise ValueError("need at least one panel")
    codes = np.array([instance.codes(i) for i in range(instance.n)], dtype=np.int64)
    _, vec_id = np.unique(codes, axis=0, return_inverse=True)
    h_joint, distinct = _row_entropy(vec_id.reshape(-1)[arr])
    names = instance.feature_names
    h = [_row_entropy(codes[arr, f])[0] for f in range(len(names))]
    tc = np.maximum(sum(h) - h_joint, 0.0) if len(names) > 1 else np.zeros(len(arr))
    nmi = {}
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            size_b = len(instance.features[b].values)
            h_ab = _row_entropy(codes[arr, a] * size_b + codes[arr, b])[0]
            denom = h[a] + h[b]
            mi = h[a] + h[b] - h_ab
            ratio = np.divide(mi, denom, out=np.zeros_like(mi), where=denom > 0)
            nmi[(names[a], names[b])] = float(np.clip(ratio, 0.0, 0.5).mean())
    count = float(distinct.mean())
    return DiversityReport(count, count / instance.panel_size, float(tc.mean()), nmi)


@dataclass(frozen=True)
class HoldoutResult:
    feature: str
    probability: float
    lower: float
    upper: float
    m: int

    def as_row(self) -> dict:
        return {"feature": self.feature, "probability": self.probability,
                "lower": self.lower, "upper": self.upper, "m": self.m}


def holdout_experiment(instance: Instance, feature_to_drop: str, m: int, rng: RandomStream,
                       weights: WeightVector | None = None,
                       config: SamplerConfig = SamplerConfig(), workers: int = 1) -> HoldoutResult:
    """Sample with one feature's quotas removed and report how often the
    panels still satisfy them."""
    if len(instance.features) < 2:
        raise InstanceError("hold-out needs an instance with at least two features")
    reduced = instance.without_quotas(feature_to_drop)
    table, _ = plan_and_build(reduced, weights, config, rng.spawn(0))
    panels = sample_many(reduced, table, m, rng.seed, workers=workers,
                         max_attempts=config.max_attempts)
    hit = sum(instance.feature_satisfied([instance.member_index(x) for x in p.members],
                                         feature_to_drop) for p in panels)
    lo, hi = jeffreys_interval(hit, m)
    return HoldoutResult(feature_to_drop, hit / m, lo, hi, m)


def exact_holdout_probability(instance: Instance, feature_to_drop: str) -> float:
    """Uniform-case hold-out probability as a ratio of two exact counts."""
    full = build_dp(instance, instance.feature_names).total_count
    reduced = instance.without_quotas(feature_to_drop)
    rest = build_dp(reduced, reduced.feature_names).total_count
    if rest == 0:
        raise InstanceError("the instance without this feature's quotas admits no panel")
    return full / rest


def report(panels, instance: Instance) -> dict:
    """Everything ``evaluate`` prints: marginals, fairness and diversity."""
    est = estimate_marginals(panels, instance)
    return {"m": est.m, "marginals": est.as_rows(), "fairness": fairness_summary(est.point),
            "diversity": diversity_report(panels, instance).to_dict()}


def rows_to_csv(rows: Iterable[dict]) -> str:
    rows = list(rows)
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def report_csv(rep: dict) -> str:
    """One row per metric."""
    rows = [{"metric": f"fairness.{k}", "value": v} for k, v in rep["fairness"].items()]
    div = rep["diversity"]
    for k in ("expected_vector_count", "vector_count_ratio", "total_correlation"):
        rows.append({"metric": f"diversity.{k}", "value": div[k]})
    rows += [{"metric": f"nmi.{k}", "value": v} for k, v in div["pairwise_nmi"].items()]
    return rows_to_csv(rows)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o))
