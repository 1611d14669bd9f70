"""Brute-force reference implementations for tiny instances.

Deliberately slow and independent of the counting engine and sampler: only
the instance model is shared, so agreement between the two is evidence.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import OracleGuardError
from .instance import FeatureDef, Instance, PoolMember, Quota

ENUMERATION_GUARD = 10**7


def _member_ok(instance: Instance, panel: Sequence[int]) -> bool:
    for f in instance.features:
        counts = {v: 0 for v in f.values}
        for i in panel:
            counts[instance.pool[i].attributes[f.name]] += 1
        for v in f.values:
            q = instance.quota(f.name, v)
            if counts[v] < q.min or counts[v] > q.max:
                return False
    return True


def enumerate_panels(instance: Instance, guard: int = ENUMERATION_GUARD) -> list[tuple[int, ...]]:
    """Every quota-feasible k-subset of member indices, in lexicographic order."""
    total = math.comb(instance.n, instance.panel_size)
    if total > guard:
        raise OracleGuardError(f"C({instance.n},{instance.panel_size}) = {total} exceeds guard {guard}")
    return [p for p in itertools.combinations(range(instance.n), instance.panel_size)
            if _member_ok(instance, p)]


def weighted_count(panels, weights: Sequence[int]) -> int:
    return sum(math.prod(weights[i] for i in p) for p in panels)


def exact_distribution(panels, weights: Sequence[int] | None = None) -> dict:
    """Product-form distribution over ``panels`` as exact fractions."""
    if weights is None:
        if not panels:
            return {}
        p = Fraction(1, len(panels))
        return {panel: p for panel in panels}
    masses = {panel: math.prod(weights[i] for i in panel) for panel in panels}
    z = sum(masses.values())
    return {panel: Fraction(m, z) for panel, m in masses.items()}


def marginals(distribution: Mapping, n: int) -> list:
    out = [0] * n
    for panel, p in distribution.items():
        for i in panel:
            out[i] += p
    return out


def entropy(distribution: Mapping) -> float:
    return -sum(float(p) * math.log(float(p)) for p in distribution.values() if p > 0)


def incidence(panels, n: int) -> np.ndarray:
    a = np.zeros((n, len(panels)))
    for col, p in enumerate(panels):
        a[list(p), col] = 1.0
    return a


def softmax_distribution(panels, theta: Sequence[float]) -> np.ndarray:
    scores = incidence(panels, len(theta)).T @ np.asarray(theta, dtype=float)
    scores -= scores.max()
    w = np.exp(scores)
    return w / w.sum()


def float_marginals(panels, theta: Sequence[float]) -> np.ndarray:
    """Selection probabilities of the distribution proportional to ``exp(sum theta)``."""
    return incidence(panels, len(theta)) @ softmax_distribution(panels, theta)


def dual_objective(panels, theta: Sequence[float], targets: Sequence[float]) -> float:
    a = incidence(panels, len(theta))
    scores = a.T @ np.asarray(theta, dtype=float)
    top = scores.max()
    return float(top + np.log(np.exp(scores - top).sum()) - np.dot(theta, targets))


@dataclass
class MaxEntropyResult:
    distribution: dict
    theta: np.ndarray
    grad_norm: float
    iterations: int
    converged: bool
    boundary: bool

    @property
    def entropy(self) -> float:
        return entropy(self.distribution)


def exact_max_entropy(panels, targets: Sequence[float], tol: float = 1e-10,
                      max_iters: int = 500) -> MaxEntropyResult:
    """Maximum-entropy distribution over ``panels`` with the given marginals.

    Damped Newton descent on the log-sum-exp dual with a pseudo-inverse
    Hessian (the dual is flat along directions every panel sees equally).
    ``boundary`` is set when some panel's mass vanishes, which only happens
    when the targets sit on the boundary of the achievable marginals.
    """
    n = len(targets)
    a = incidence(panels, n)
    pi = np.asarray(targets, dtype=float)
    theta = np.zeros(n)

    def objective(th):
        s = a.T @ th
        top = s.max()
        return top + np.log(np.exp(s - top).sum()) - th @ pi

    it = 0
    lam = softmax_distribution(panels, theta)
    grad = a @ lam - pi
    gnorm = float(np.linalg.norm(grad))
    while gnorm > tol and it < max_iters:
        cov = (a * lam) @ a.T - np.outer(a @ lam, a @ lam)
        step = -np.linalg.lstsq(cov, grad, rcond=1e-12)[0]
        if step @ grad >= 0:
            step = -grad
        f0 = objective(theta)
        t = 1.0
        while t > 1e-12 and objective(theta + t * step) > f0 + 1e-4 * t * (step @ grad):
            t *= 0.5
        theta = theta + t * step
        lam = softmax_distribution(panels, theta)
        grad = a @ lam - pi
        gnorm = float(np.linalg.norm(grad))
        it += 1
    dist = {p: float(m) for p, m in zip(panels, lam)}
    boundary = bool(lam.min() < 1e-9)
    return MaxEntropyResult(dist, theta, gnorm, it, gnorm <= tol, boundary)


def generate_instance(n: int, k: int, value_counts: Sequence[int], tightness: float = 1.0,
                      seed: int = 0, skew: float = 2.0) -> Instance:
    """Reproducible synthetic instance.

    Member values are drawn per feature from Dirichlet(``skew``) shares.
    Quotas sit around each value's proportional share of the panel with a
    slack of ``(1 - tightness) * k`` seats on both sides: tightness 0 gives
    ``[0, k]`` everywhere, tightness 1 gives ``[floor, ceil]`` of the share.
    """
    if not 0.0 <= tightness <= 1.0:
        raise ValueError("tightness must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    features = [FeatureDef(f"f{i}", tuple(f"v{j}" for j in range(c)))
                for i, c in enumerate(value_counts)]
    codes = []
    for c in value_counts:
        shares = rng.dirichlet([skew] * c)
        col = rng.choice(c, size=n, p=shares)
        # every value present at least once keeps quotas meaningful
        col[: min(c, n)] = rng.permutation(c)[: min(c, n)]
        codes.append(rng.permutation(col))
    pool = [PoolMember(f"m{i:04d}", {f.name: f.values[codes[fi][i]] for fi, f in enumerate(features)})
            for i in range(n)]
    slack = (1.0 - tightness) * k
    quotas = []
    for fi, f in enumerate(features):
        counts = np.bincount(codes[fi], minlength=len(f.values))
        for j, v in enumerate(f.values):
            target = k * counts[j] / n
            lo = max(0, math.floor(target - slack + 1e-9))
            hi = min(k, math.ceil(target + slack - 1e-9))
            quotas.append(Quota(f.name, v, lo, hi))
    return Instance(k, features, quotas, pool)


def random_weights(n: int, seed: int, high: int = 50) -> list[int]:
    rng = np.random.default_rng(seed)
    return [int(x) for x in rng.integers(1, high + 1, size=n)]
