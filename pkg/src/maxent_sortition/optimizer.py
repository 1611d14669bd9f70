"""Member weights whose panel distribution hits prescribed selection probabilities.

The distribution over panels proportional to ``prod(exp(theta_i))`` has
selection probabilities ``pi_theta``.  Minimizing the convex dual
``D(theta) = logsumexp_P(sum_{i in P} theta_i) - <theta, pi>`` drives
``pi_theta`` to the targets ``pi``; its gradient is ``pi_theta - pi``, which
sampled panels estimate without bias.  ADAM does the descent.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .counting import MAX_WEIGHT, DPTable, WeightVector, reweight
from .errors import InstanceError, SamplingTimeout
from .instance import Instance
from .rng import RandomStream
from .sampler import SamplerConfig, SamplerPlan, plan_and_build, rejection_stream

LOG_MAX_WEIGHT = math.log(MAX_WEIGHT)


@dataclass(frozen=True)
class TargetMarginals:
    targets: Mapping[str, float]

    def validate(self, instance: Instance, tol: float = 1e-6) -> None:
        ids = set(instance.member_ids)
        missing = ids - set(self.targets)
        extra = set(self.targets) - ids
        if missing or extra:
            raise InstanceError(f"targets do not match the pool: missing {sorted(missing)[:5]}, "
                                f"unknown {sorted(extra)[:5]}")
        for mid, p in self.targets.items():
            if not (isinstance(p, (int, float)) and 0.0 <= p <= 1.0):
                raise InstanceError(f"target of {mid!r} must lie in [0, 1], got {p!r}")
        total = math.fsum(self.targets.values())
        if abs(total - instance.panel_size) > tol:
            raise InstanceError(f"targets sum to {total}, not the panel size {instance.panel_size}")

    def as_array(self, instance: Instance) -> np.ndarray:
        return np.array([self.targets[mid] for mid in instance.member_ids], dtype=float)

    @classmethod
    def from_array(cls, instance: Instance, values: Sequence[float]) -> "TargetMarginals":
        return cls(dict(zip(instance.member_ids, (float(v) for v in values))))

    @classmethod
    def from_json(cls, text: str) -> "TargetMarginals":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise InstanceError("targets file must hold a JSON object of member id to probability")
        return cls({str(k): v for k, v in data.items()})


@dataclass
class DualIterate:
    member_ids: tuple[str, ...]
    theta: np.ndarray
    iteration: int = 0
    grad_norm_history: list[float] = field(default_factory=list)
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    @classmethod
    def zero(cls, instance: Instance) -> "DualIterate":
        n = instance.n
        return cls(instance.member_ids, np.zeros(n), 0, [], np.zeros(n), np.zeros(n))

    def theta_map(self) -> dict[str, float]:
        return dict(zip(self.member_ids, self.theta.tolist()))


@dataclass(frozen=True)
class OptimizerConfig:
    batch_size: int = 10_000
    grad_tol: float = 1e-3
    max_iters: int = 1000
    alpha: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eps_blend: float = 0.01
    # "adam", or "decay" for plain steps alpha / sqrt(t) as in the convergence analysis
    schedule: str = "adam"
    budget_seconds: float | None = None
    divergence_window: int = 10
    # "sampled" estimates gradients from panels; "exact" enumerates every panel
    mode: str = "sampled"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.schedule not in ("adam", "decay"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.mode not in ("sampled", "exact"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class Diagnostics:
    status: str = "running"
    rows: list[dict] = field(default_factory=list)
    warning: str | None = None
    plan: SamplerPlan | None = None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.rows)


def weights_from_theta(theta: Sequence[float], instance: Instance | None = None,
                       member_ids: Sequence[str] | None = None) -> WeightVector:
    """Integer weights ``round(exp(theta - max theta) * 10^12)`` clamped to ``[1, 10^12]``."""
    th = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(th)):
        raise ValueError("theta has non-finite entries")
    raw = np.rint(np.exp(th - th.max()) * MAX_WEIGHT)
    ws = [min(MAX_WEIGHT, max(1, int(w))) for w in raw]
    ids = member_ids if member_ids is not None else instance.member_ids
    return WeightVector(dict(zip(ids, ws)))


def adam_step(iterate: DualIterate, grad: np.ndarray, config: OptimizerConfig) -> DualIterate:
    """One descent step on the dual; returns a new iterate."""
    t = iterate.iteration + 1
    g = np.asarray(grad, dtype=float)
    if config.schedule == "decay":
        theta = iterate.theta - config.alpha / math.sqrt(t) * g
        return DualIterate(iterate.member_ids, theta, t, list(iterate.grad_norm_history),
                           iterate.m, iterate.v)
    m = config.beta1 * iterate.m + (1 - config.beta1) * g
    v = config.beta2 * iterate.v + (1 - config.beta2) * g * g
    m_hat = m / (1 - config.beta1**t)
    v_hat = v / (1 - config.beta2**t)
    theta = iterate.theta - config.alpha * m_hat / (np.sqrt(v_hat) + config.eps)
    return DualIterate(iterate.member_ids, theta, t, list(iterate.grad_norm_history), m, v)


def sample_marginals(instance: Instance, table: DPTable, count: int, rng: RandomStream,
                     max_attempts: int = 1_000_000) -> np.ndarray:
    """Fraction of ``count`` sampled panels containing each member."""
    hits = np.zeros(instance.n, dtype=np.int64)
    gen = rejection_stream(instance, table, rng, max_attempts)
    for _ in range(count):
        panel, _ = next(gen)
        hits[panel] += 1
    return hits / count


def estimate_gradient(instance: Instance, table: DPTable, theta: Sequence[float], batch_size: int,
                      targets: TargetMarginals, rng: RandomStream,
                      max_attempts: int = 1_000_000) -> np.ndarray:
    """Unbiased estimate of ``pi_theta - pi`` from ``batch_size`` sampled panels."""
    weights = weights_from_theta(theta, instance)
    if weights.as_list(instance) != table.weights:
        table = reweight(table, weights)
    return sample_marginals(instance, table, batch_size, rng, max_attempts) - targets.as_array(instance)


def exact_marginals(panels, weights: WeightVector, instance: Instance) -> np.ndarray:
    """Selection probabilities under ``weights`` over an enumerated panel list."""
    logw = np.log(np.array(weights.as_list(instance), dtype=float))
    scores = np.array([logw[list(p)].sum() for p in panels])
    scores -= scores.max()
    prob = np.exp(scores)
    prob /= prob.sum()
    out = np.zeros(instance.n)
    for p, q in zip(panels, prob):
        out[list(p)] += q
    return out


def interiorize(targets: TargetMarginals, uniform_estimate: TargetMarginals | Mapping[str, float],
                eps_blend: float) -> TargetMarginals:
    """Blend targets towards the uniform lottery's marginals: ``(1-eps) pi + eps pi_U``."""
    if not 0.0 <= eps_blend <= 1.0:
        raise ValueError("eps_blend must lie in [0, 1]")
    u = uniform_estimate.targets if isinstance(uniform_estimate, TargetMarginals) else uniform_estimate
    return TargetMarginals({mid: (1 - eps_blend) * p + eps_blend * u[mid]
                            for mid, p in targets.targets.items()})


def _stagnant(history: list[float], window: int) -> bool:
    if len(history) <= window:
        return False
    return min(history[-window:]) > 0.9 * min(history[:-window])


def _drifting(rows: list[dict]) -> bool:
    """Theta keeps spreading across the last two quarters while the gradient
    decays sublinearly: the dual optimum sits at infinity."""
    n = len(rows)
    if n < 40:
        return False
    spread = [r["theta_minmax"][1] - r["theta_minmax"][0] for r in rows]
    half, late = n // 2, 3 * n // 4
    grads = [r["grad_norm"] for r in rows]
    return (spread[-1] > spread[late] > spread[half]
            and min(grads[late:]) > 0.5 * min(grads[half:late]))


def optimize(instance: Instance, targets: TargetMarginals, config: OptimizerConfig = OptimizerConfig(),
             rng: RandomStream | None = None, *, table: DPTable | None = None,
             sampler_config: SamplerConfig = SamplerConfig(), panels=None,
             progress: Callable[[dict], None] | None = None
             ) -> tuple[WeightVector, DualIterate, Diagnostics]:
    """Descend the dual from ``theta = 0`` until the gradient norm drops below
    ``grad_tol``, ``max_iters`` is hit, the targets look unreachable, or the
    wall-clock budget runs out.

    In ``exact`` mode ``panels`` (all feasible panels) may be passed in;
    otherwise they are enumerated.
    """
    targets.validate(instance)
    rng = rng if rng is not None else RandomStream(0)
    pi = targets.as_array(instance)
    diag = Diagnostics()
    if config.mode == "exact":
        if panels is None:
            from .oracle import enumerate_panels
            panels = enumerate_panels(instance)
    elif table is None:
        table, diag.plan = plan_and_build(instance, None, sampler_config, rng.spawn(0),
                                          progress=progress)
    it = DualIterate.zero(instance)
    started = time.monotonic()
    diag.status = "max_iters"
    for step in range(config.max_iters):
        weights = weights_from_theta(it.theta, instance)
        if config.mode == "exact":
            grad = exact_marginals(panels, weights, instance) - pi
        else:
            current = reweight(table, weights)
            grad = sample_marginals(instance, current, config.batch_size, rng.spawn(3, step),
                                    sampler_config.max_attempts) - pi
        gnorm = float(np.linalg.norm(grad))
        it.grad_norm_history.append(gnorm)
        row = {"iter": step, "grad_norm": gnorm,
               "wallclock_ms": round((time.monotonic() - started) * 1000, 3),
               "theta_minmax": [float(it.theta.min()), float(it.theta.max())]}
        diag.rows.append(row)
        if progress is not None:
            progress({"event": "iteration", **row})
        if gnorm < config.grad_tol:
            diag.status = "converged"
            break
        spread = float(it.theta.max() - it.theta.min())
        if spread > LOG_MAX_WEIGHT and _stagnant(it.grad_norm_history, config.divergence_window):
            diag.status = "diverged"
            diag.warning = ("gradient norm stagnates while weights leave the representable range; "
                            "the targets are probably on the boundary, try interiorizing them")
            break
        if config.budget_seconds is not None and time.monotonic() - started > config.budget_seconds:
            if len(it.grad_norm_history) < 2:
                raise SamplingTimeout(
                    f"budget of {config.budget_seconds} s spent before two iterations completed",
                    attempts=len(it.grad_norm_history))
            diag.status = "budget"
            diag.warning = f"stopped after {len(it.grad_norm_history)} iterations on the time budget"
            break
        it = adam_step(it, grad, config)
    if diag.status == "max_iters" and _drifting(diag.rows):
        diag.status = "diverged"
        diag.warning = ("theta keeps drifting outward while the gradient decays slowly; "
                        "the targets are probably on the boundary, try interiorizing them")
    return weights_from_theta(it.theta, instance), it, diag
