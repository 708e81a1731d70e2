"""Pearson, Spearman and Kendall coefficients, and grouped-budget ranking."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "UndefinedCoefficient",
    "RankStats",
    "pearson",
    "spearman",
    "spearman_closed_form",
    "kendall_tau_a",
    "coefficients",
    "grouped_budget_eval",
]

log = logging.getLogger(__name__)


def rankdata(x: np.ndarray) -> np.ndarray:
    # scipy.stats costs half a second to import; defer it to first use
    from scipy.stats import rankdata as _rankdata

    return _rankdata(x)


class UndefinedCoefficient(ValueError):
    """Coefficient has no value for this input (e.g. zero variance)."""


@dataclass(frozen=True)
class RankStats:
    pearson: float
    spearman: float
    kendall: float
    n: int

    def to_dict(self) -> dict:
        return {"pearson": self.pearson, "spearman": self.spearman, "kendall": self.kendall, "n": self.n}


def _pair(r: Sequence[float], s: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    if r.shape != s.shape or r.ndim != 1:
        raise ValueError(f"need two 1-d vectors of equal length, got {r.shape} and {s.shape}")
    if len(r) < 2:
        raise ValueError("need at least two samples")
    return r, s


def pearson(r: Sequence[float], s: Sequence[float]) -> float:
    r, s = _pair(r, s)
    dr = r - r.mean()
    ds = s - s.mean()
    denom = np.sqrt((dr * dr).sum() * (ds * ds).sum())
    if denom == 0:
        raise UndefinedCoefficient("zero variance")
    return float(np.clip((dr * ds).sum() / denom, -1.0, 1.0))


def spearman(r: Sequence[float], s: Sequence[float]) -> float:
    """Pearson correlation of average ranks."""
    r, s = _pair(r, s)
    return pearson(rankdata(r), rankdata(s))


def spearman_closed_form(r: Sequence[float], s: Sequence[float]) -> float:
    """``1 - 6 sum d^2 / (n (n^2 - 1))``; valid only when ranks are distinct."""
    r, s = _pair(r, s)
    rr, rs = rankdata(r), rankdata(s)
    if len(np.unique(rr)) != len(rr) or len(np.unique(rs)) != len(rs):
        raise UndefinedCoefficient("closed-form Spearman needs distinct ranks")
    n = len(r)
    d = rr - rs
    return float(1 - 6 * (d * d).sum() / (n * (n * n - 1)))


def kendall_tau_a(r: Sequence[float], s: Sequence[float]) -> float:
    """``(concordant - discordant) / (n choose 2)``; tied pairs count as neither."""
    r, s = _pair(r, s)
    n = len(r)
    iu = np.triu_indices(n, k=1)
    prod = (np.sign(r[:, None] - r[None, :]) * np.sign(s[:, None] - s[None, :]))[iu]
    con = int((prod > 0).sum())
    dis = int((prod < 0).sum())
    return (con - dis) / (n * (n - 1) // 2)


def coefficients(r: Sequence[float], s: Sequence[float]) -> RankStats:
    r, s = _pair(r, s)
    return RankStats(pearson(r, s), spearman(r, s), kendall_tau_a(r, s), len(r))


def grouped_budget_eval(
    paths: Sequence[tuple[float, float]], budgets: Sequence[tuple[float, float]]
) -> list[RankStats | None]:
    """Coefficients between FLOPs and score inside each budget group.

    ``budgets`` are half-open ``[low, high)`` FLOPs intervals; the last one is
    closed on the right. Groups with fewer than two paths, or where either
    variable is constant, yield ``None`` and a warning.
    """
    flops = np.array([p[0] for p in paths], dtype=float)
    score = np.array([p[1] for p in paths], dtype=float)
    member = np.full(len(paths), -1)
    for g, (lo, hi) in enumerate(budgets):
        last = g == len(budgets) - 1
        inside = (flops >= lo) & ((flops <= hi) if last else (flops < hi))
        if (inside & (member >= 0)).any():
            raise ValueError(f"budget group {g} overlaps an earlier group")
        member[inside] = g
    if (member < 0).any():
        raise ValueError(f"{int((member < 0).sum())} paths fall outside every budget group")

    out: list[RankStats | None] = []
    for g in range(len(budgets)):
        sel = member == g
        if sel.sum() < 2:
            log.warning("budget group %d has %d path(s); skipped", g, int(sel.sum()))
            out.append(None)
            continue
        try:
            out.append(coefficients(flops[sel], score[sel]))
        except UndefinedCoefficient as exc:
            log.warning("budget group %d skipped: %s", g, exc)
            out.append(None)
    return out
