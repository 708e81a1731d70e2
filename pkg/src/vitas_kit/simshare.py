"""Group-level simulation of weight-sharing training under uniform width sampling."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .mapping import ChannelMapping

__all__ = ["SimState", "TinyFc", "simulate", "empirical_influence", "grad_check", "simulation_csv"]


@dataclass(frozen=True, eq=False)
class SimState:
    mapping: ChannelMapping
    counts: np.ndarray
    influence_acc: np.ndarray
    steps: int
    seed: int
    # sub-path forward/backward passes spent; 2 per step for bilateral when both sides run
    cost: int = 0
    # how often each width j was drawn, index j-1
    draws: np.ndarray | None = None


def _draw_widths(l: int, steps: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(1, l + 1, size=steps)


def simulate(mapping: ChannelMapping, steps: int, seed: int = 0, alternating: bool = False) -> SimState:
    """Draw a width uniformly per step and credit the groups it uses.

    For bilateral mappings both sub-paths train on every step; with
    ``alternating=True`` the left sub-path runs on even steps and the right
    one on odd steps instead.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    l = mapping.l
    widths = _draw_widths(l, steps, seed)
    psi = 1.0 / np.arange(1, l + 1)
    blocks = mapping.blocks
    if len(blocks) == 1 or not alternating:
        hist = np.bincount(widths - 1, minlength=l)
        use = mapping.usage
        counts = use @ hist
        infl = (use * psi) @ hist
        cost = steps * len(blocks)
    else:
        counts = np.zeros(l, dtype=np.int64)
        infl = np.zeros(l)
        for side, block in enumerate(blocks):
            hist = np.bincount(widths[side::2] - 1, minlength=l)
            b = block.astype(np.int64)
            counts = counts + b @ hist
            infl = infl + (b * psi) @ hist
        cost = steps
        hist = np.bincount(widths - 1, minlength=l)
    return SimState(mapping, counts.astype(np.int64), infl.astype(float), steps, seed, cost, hist)


def simulation_csv(mapping: ChannelMapping, steps: int, seed: int = 0, buckets: int = 10) -> str:
    """Cumulative counts and influence per group at ``buckets`` evenly spaced steps."""
    l = mapping.l
    widths = _draw_widths(l, steps, seed)
    psi = 1.0 / np.arange(1, l + 1)
    use = mapping.usage
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["step", "group", "count", "influence"])
    marks = sorted({round(steps * (b + 1) / buckets) for b in range(buckets)} - {0}) if steps else []
    for mark in marks:
        hist = np.bincount(widths[:mark] - 1, minlength=l)
        counts = use @ hist
        infl = (use * psi) @ hist
        for i in range(l):
            writer.writerow([mark, i + 1, int(counts[i]), f"{infl[i]:.6f}"])
    return out.getvalue()


@dataclass(frozen=True, eq=False)
class TinyFc:
    """One output of a linear layer: ``y = sum_i w_i x_i``."""

    w: np.ndarray
    x: np.ndarray

    @property
    def width(self) -> int:
        return len(self.w)

    def forward(self, w: np.ndarray | None = None) -> float:
        return float(np.dot(self.w if w is None else w, self.x))

    def grad(self) -> np.ndarray:
        return np.array(self.x, dtype=float)

    @classmethod
    def random(cls, width: int, seed: int = 0) -> "TinyFc":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-1, 1, width), rng.uniform(-1, 1, width))


def grad_check(fc: TinyFc, epsilon: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central differences."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    analytic = fc.grad()
    numeric = np.empty_like(analytic)
    w = np.array(fc.w, dtype=float)
    for i in range(fc.width):
        wp, wm = w.copy(), w.copy()
        wp[i] += epsilon
        wm[i] -= epsilon
        numeric[i] = (fc.forward(wp) - fc.forward(wm)) / (2 * epsilon)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / scale)) if fc.width else 0.0


def empirical_influence(j: int, trials: int, seed: int = 0, chunk: int = 250_000) -> float:
    """Monte Carlo mean of ``y_1 / sum_k y_k`` with ``y_k = w_k x_k``.

    ``w`` and ``x`` are i.i.d. Uniform(0.5, 1.5), so every term is positive
    and by exchangeability the expectation is exactly ``1/j``.
    """
    if j < 1 or trials < 1:
        raise ValueError("need j >= 1 and trials >= 1")
    if j == 1:
        return 1.0
    rng = np.random.default_rng(seed)
    total = 0.0
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        y = rng.uniform(0.5, 1.5, (n, j)) * rng.uniform(0.5, 1.5, (n, j))
        total += float((y[:, 0] / y.sum(axis=1)).sum())
        done += n
    return total / trials
