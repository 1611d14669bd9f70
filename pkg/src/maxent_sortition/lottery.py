"""Transparent lotteries: a published list of independently drawn panels,
one of which is later picked by public randomness.

Picking uniformly from ``m`` i.i.d. panels is the same as drawing one panel
fresh, and with probability ``1 - delta`` every member's frequency in the
list is within :func:`deviation_bound` of its true selection probability.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO

from .counting import DPTable
from .errors import SortitionError
from .instance import Instance
from .sampler import sample_many

DEFAULT_DELTA = 0.05


def deviation_bound(n: int, m: int, delta: float) -> float:
    """Hoeffding plus a union bound over ``n`` members and both tails."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be at least 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie strictly between 0 and 1")
    return math.sqrt((math.log(2 * n) + math.log(1.0 / delta)) / (2 * m))


@dataclass(frozen=True)
class Lottery:
    m: int
    seed: int
    n: int
    k: int
    delta: float
    bound: float
    panels: tuple[tuple[str, ...], ...]

    def header(self) -> dict:
        return {"m": self.m, "seed": self.seed, "n": self.n, "k": self.k,
                "delta": self.delta, "bound": self.bound}

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True, separators=(",", ":"))]
        lines += [json.dumps({"members": list(p)}, separators=(",", ":")) for p in self.panels]
        return "\n".join(lines) + "\n"

    def write(self, out: IO[str]) -> None:
        out.write(self.dumps())


def build_lottery(instance: Instance, table: DPTable, m: int, seed: int,
                  delta: float = DEFAULT_DELTA, workers: int = 1,
                  max_attempts: int = 1_000_000) -> Lottery:
    if m < 1:
        raise ValueError("a lottery needs at least one panel")
    samples = sample_many(instance, table, m, seed, workers=workers, max_attempts=max_attempts)
    return Lottery(m, seed, instance.n, instance.panel_size, delta,
                   deviation_bound(instance.n, m, delta), tuple(s.members for s in samples))


def read_lottery(source: IO[str] | str) -> Lottery:
    text = source if isinstance(source, str) else source.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SortitionError("lottery file is empty")
    try:
        head = json.loads(lines[0])
        panels = tuple(tuple(json.loads(ln)["members"]) for ln in lines[1:])
        lot = Lottery(int(head["m"]), int(head["seed"]), int(head["n"]), int(head["k"]),
                      float(head["delta"]), float(head["bound"]), panels)
    except (ValueError, KeyError, TypeError) as exc:
        raise SortitionError(f"malformed lottery file: {exc}") from None
    if len(panels) != lot.m:
        raise SortitionError(f"lottery header promises {lot.m} panels, file holds {len(panels)}")
    return lot


def draw(lottery: Lottery, index: int | None = None, seed: int | None = None) -> tuple[str, ...]:
    """The panel at ``index``, or at ``seed mod m`` for a public seed."""
    if (index is None) == (seed is None):
        raise ValueError("give exactly one of index and seed")
    if index is None:
        index = seed % lottery.m
    if not 0 <= index < lottery.m:
        raise IndexError(f"index {index} outside [0, {lottery.m})")
    return lottery.panels[index]
