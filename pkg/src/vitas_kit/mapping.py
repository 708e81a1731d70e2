"""Channel-group weight-sharing mappings.

A mapping is a binary matrix ``beta`` of shape ``(l, l)``: ``beta[i, j-1] == 1``
when channel group ``i`` takes part in the width-``j`` sub-network. Every
column ``j`` holds exactly ``j`` ones. Rows are indexed from 0 in code,
dimensions from 1.

Influence of group ``i`` in dimension ``j`` is ``1/j``; a group's total
influence is the sum over the dimensions it takes part in, and the
*influence gap* is the sum over unordered group pairs of squared
differences of those totals.
"""
from __future__ import annotations

import functools
import itertools
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

__all__ = [
    "MappingError",
    "UnsupportedSize",
    "MappingKind",
    "ChannelMapping",
    "InfluenceMatrix",
    "MappingMetrics",
    "build_ordinal",
    "build_bilateral",
    "build_cyclic",
    "influence_matrix",
    "metrics",
    "influence_gap",
    "refine_local_search",
    "enumerate_optimal",
    "ENUMERATE_MAX_L",
    "dumps",
    "loads",
]

ENUMERATE_MAX_L = 6


class MappingError(ValueError):
    """Invalid mapping arguments or matrix."""


class UnsupportedSize(MappingError):
    """Requested size is beyond what the exhaustive oracle handles."""


class MappingKind(str, Enum):
    ORDINAL = "ordinal"
    BILATERAL = "bilateral"
    CYCLIC = "cyclic"
    CUSTOM = "custom"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.int8, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ChannelMapping:
    """Immutable group-to-dimension assignment.

    Bilateral mappings carry a second matrix in ``beta_right``; everything
    else has ``beta_right is None``.
    """

    l: int
    beta: np.ndarray
    kind: MappingKind = MappingKind.CUSTOM
    contiguous: bool = False
    beta_right: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.l < 1:
            raise MappingError(f"group count must be >= 1, got {self.l}")
        object.__setattr__(self, "beta", _frozen(self.beta))
        if self.beta_right is not None:
            object.__setattr__(self, "beta_right", _frozen(self.beta_right))
        for m in self.blocks:
            if m.shape != (self.l, self.l):
                raise MappingError(f"expected {self.l}x{self.l} matrix, got {m.shape}")
            if not np.isin(m, (0, 1)).all():
                raise MappingError("mapping entries must be 0 or 1")
        if not self.column_sums_ok():
            raise MappingError("column j must use exactly j groups")

    @property
    def blocks(self) -> tuple[np.ndarray, ...]:
        if self.beta_right is None:
            return (self.beta,)
        return (self.beta, self.beta_right)

    @property
    def usage(self) -> np.ndarray:
        """Per-cell usage count; 0/1 for single-sided, 0..2 for bilateral."""
        if self.beta_right is None:
            return self.beta.astype(np.int64)
        return self.beta.astype(np.int64) + self.beta_right.astype(np.int64)

    @property
    def sides(self) -> int:
        return len(self.blocks)

    def column_sums_ok(self) -> bool:
        want = np.arange(1, self.l + 1)
        return all(np.array_equal(m.sum(axis=0), want) for m in self.blocks)

    def row_spread(self) -> int:
        c = self.usage.sum(axis=1)
        return int(c.max() - c.min())

    def is_contiguous(self) -> bool:
        return all(_column_is_cyclic_run(m[:, j]) for m in self.blocks for j in range(self.l))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChannelMapping):
            return NotImplemented
        if self.l != other.l or self.kind != other.kind or self.sides != other.sides:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.blocks, other.blocks))

    def __hash__(self) -> int:
        return hash((self.l, self.kind, tuple(m.tobytes() for m in self.blocks)))


def _column_is_cyclic_run(col: np.ndarray) -> bool:
    n = len(col)
    ones = int(col.sum())
    if ones in (0, n):
        return True
    # a cyclic run has exactly one 0->1 transition going around the ring
    starts = sum(1 for i in range(n) if col[i] == 1 and col[i - 1] == 0)
    return starts == 1


@dataclass(frozen=True, eq=False)
class InfluenceMatrix:
    psi: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.psi, dtype=float, copy=True)
        a.setflags(write=False)
        object.__setattr__(self, "psi", a)


@dataclass(frozen=True, eq=False)
class MappingMetrics:
    training_counts: np.ndarray
    influence_vector: np.ndarray
    influence_gap: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "training_counts": [int(c) for c in self.training_counts],
            "influence_vector": [float(v) for v in self.influence_vector],
            "influence_gap": float(self.influence_gap),
        }


def _check_l(l: int) -> None:
    if not isinstance(l, (int, np.integer)) or isinstance(l, bool) or l < 1:
        raise MappingError(f"group count must be a positive integer, got {l!r}")


def _weights(l: int) -> np.ndarray:
    return 1.0 / np.arange(1, l + 1)


def _ordinal_matrix(l: int) -> np.ndarray:
    i = np.arange(l)[:, None]
    j = np.arange(l)[None, :]
    return (i <= j).astype(np.int8)


def build_ordinal(l: int) -> ChannelMapping:
    """Width ``j`` takes the leftmost ``j`` groups."""
    _check_l(l)
    return ChannelMapping(l, _ordinal_matrix(l), MappingKind.ORDINAL, contiguous=True)


def build_bilateral(l: int) -> ChannelMapping:
    """Ordinal on the left plus its mirror image on the right."""
    _check_l(l)
    left = _ordinal_matrix(l)
    right = left[::-1, :]
    return ChannelMapping(l, left, MappingKind.BILATERAL, contiguous=True, beta_right=right)


def influence_matrix(mapping: ChannelMapping) -> InfluenceMatrix:
    used = mapping.usage > 0
    return InfluenceMatrix(used * _weights(mapping.l)[None, :])


def gap_of(influence: np.ndarray) -> float:
    d = influence[:, None] - influence[None, :]
    return float((d * d).sum() / 2.0)


def metrics(mapping: ChannelMapping) -> MappingMetrics:
    usage = mapping.usage
    counts = usage.sum(axis=1)
    infl = (usage * influence_matrix(mapping).psi).sum(axis=1)
    return MappingMetrics(counts, infl, gap_of(infl))


def influence_gap(mapping: ChannelMapping) -> float:
    return metrics(mapping).influence_gap


# ---------------------------------------------------------------------------
# cyclic construction


def _window(l: int, j: int, offset: int) -> list[int]:
    return [(offset + k) % l for k in range(j)]


def _contiguous_matrix(l: int, offsets: list[int]) -> np.ndarray:
    beta = np.zeros((l, l), dtype=np.int8)
    for j in range(1, l + 1):
        beta[_window(l, j, offsets[j - 1]), j - 1] = 1
    return beta


def _circulant(l: int, j: int) -> np.ndarray:
    """Row ``o`` is the 0/1 indicator of the width-``j`` window at offset ``o``."""
    out = np.zeros((l, l), dtype=np.int64)
    for o in range(l):
        out[o, _window(l, j, o)] = 1
    return out


def _pair_gaps(infl: np.ndarray) -> np.ndarray:
    """Influence gap of each row of a (candidates, l) array."""
    l = infl.shape[1]
    s = infl.sum(axis=1)
    return (l * (infl * infl).sum(axis=1) - s * s) / 2.0


def _greedy_offsets(l: int) -> list[int]:
    w = _weights(l)
    counts = np.zeros(l, dtype=np.int64)
    infl = np.zeros(l)
    offsets = [0] * l
    for j in range(l, 0, -1):
        win = _circulant(l, j)
        c = counts[None, :] + win
        f = infl[None, :] + win * w[j - 1]
        spread = c.max(axis=1) - c.min(axis=1)
        g = np.round(_pair_gaps(f), 12)
        o = int(np.lexsort((np.arange(l), g, spread))[0])
        offsets[j - 1] = o
        counts, infl = c[o], f[o]
    return offsets


def _descend_offsets(l: int, offsets: list[int]) -> tuple[list[int], int, float]:
    """Coordinate descent over window offsets; every column stays one cyclic run.

    Returns the offsets with their (spread violation, gap) score.
    """
    w = _weights(l)
    wins = [_circulant(l, j) for j in range(1, l + 1)]
    offsets = list(offsets)
    counts = sum(wins[j][offsets[j]] for j in range(l))
    infl = sum(wins[j][offsets[j]] * w[j] for j in range(l))

    def score(c: np.ndarray, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        viol = np.maximum(c.max(axis=1) - c.min(axis=1) - 1, 0)
        return viol, _pair_gaps(f)

    viol, gap = (v[0] for v in score(counts[None, :], infl[None, :]))
    improved = True
    while improved:
        improved = False
        for j in range(l - 1):  # the full-width column has a single shape
            cur = wins[j][offsets[j]]
            c = (counts - cur)[None, :] + wins[j]
            f = (infl - cur * w[j])[None, :] + wins[j] * w[j]
            v, g = score(c, f)
            o = int(np.lexsort((np.arange(l), g, v))[0])
            if v[o] < viol or (v[o] == viol and g[o] < gap - 1e-12):
                offsets[j] = o
                counts, infl = c[o], f[o]
                viol, gap = v[o], g[o]
                improved = True
    return offsets, int(viol), float(gap)


def build_cyclic(
    l: int,
    contiguous: bool = True,
    restarts: int = 16,
    refine_iters: int = 20000,
    seed: int = 0,
) -> ChannelMapping:
    """Fair, influence-balanced mapping.

    Windows are first placed greedily from the widest dimension down, each at
    the offset that keeps training counts level and then the partial
    influence gap lowest. Coordinate descent over offsets is then run from
    that start and from ``restarts`` seeded random starts; the best result
    wins. With ``contiguous=False`` the winner is further refined by
    :func:`refine_local_search`, which may split windows.
    """
    _check_l(l)
    return _build_cyclic(int(l), bool(contiguous), int(restarts), int(refine_iters), int(seed))


@functools.lru_cache(maxsize=256)
def _build_cyclic(l: int, contiguous: bool, restarts: int, refine_iters: int, seed: int) -> ChannelMapping:
    rng = random.Random(seed)
    starts = [_greedy_offsets(l)]
    starts += [[rng.randrange(l) for _ in range(l)] for _ in range(restarts)]
    best = None
    for s in starts:
        offsets, viol, gap = _descend_offsets(l, s)
        key = (viol, round(gap, 12), offsets)
        if best is None or key < best:
            best = key
    viol, _, offsets = best
    if viol > 0:
        raise MappingError(f"could not level training counts for l={l}")
    mapping = ChannelMapping(l, _contiguous_matrix(l, offsets), MappingKind.CYCLIC, contiguous=True)
    if contiguous or refine_iters <= 0:
        return mapping
    refined = refine_local_search(mapping, refine_iters, seed)
    return ChannelMapping(l, refined.beta, MappingKind.CYCLIC, contiguous=refined.is_contiguous())


# ---------------------------------------------------------------------------
# local search


def refine_local_search(mapping: ChannelMapping, max_iters: int, seed: int = 0) -> ChannelMapping:
    """Hill-climb on the influence gap by exchanging groups inside columns.

    The basic move swaps one used group of column ``j`` for an unused one.
    When every row count is already level (always the case for odd ``l``)
    no single swap keeps the counts fair, so half of the proposals pair two
    such swaps in columns ``j1`` and ``j2`` with the roles of the two groups
    reversed, which leaves every row count unchanged.

    A move is rejected if it widens the row-count spread beyond what the
    current matrix has (spread above 1) or raises the gap; sideways moves
    are kept. After ``max_iters // 10`` steps without a new best the walk
    restarts from the best matrix after ``l`` random admissible moves. The
    result never has a larger gap or a larger spread violation than the
    input, and is a pure function of ``(mapping, max_iters, seed)``.
    """
    if mapping.beta_right is not None:
        raise MappingError("local search works on single-sided mappings")
    if not mapping.column_sums_ok():
        raise MappingError("input mapping violates the column-sum constraint")
    l = mapping.l
    if max_iters <= 0 or l == 1:
        return mapping

    rng = random.Random(seed)
    w = [1.0 / j for j in range(1, l + 1)]
    movable = list(range(l - 1))  # the full-width column cannot change

    def violation(c: list[int]) -> int:
        return max(max(c) - min(c) - 1, 0)

    def load(src: list[list[int]]) -> tuple[list[list[int]], list[int], list[float]]:
        b = [row[:] for row in src]
        return b, [sum(row) for row in b], [sum(b[i][j] * w[j] for j in range(l)) for i in range(l)]

    beta, counts, infl = load([[int(v) for v in row] for row in mapping.beta])
    start_gap = gap_of(np.array(infl))
    gap = start_gap
    viol = violation(counts)
    best = ([row[:] for row in beta], viol, gap)

    def single(force: bool) -> None:
        nonlocal gap, viol
        j = rng.choice(movable)
        a = rng.choice([i for i in range(l) if beta[i][j]])
        b = rng.choice([i for i in range(l) if not beta[i][j]])
        counts[a] -= 1
        counts[b] += 1
        new_viol = violation(counts)
        # column sums pin the total influence, so the gap moves with the sum of squares only
        new_gap = gap + l * 2.0 * w[j] * (infl[b] - infl[a] + w[j])
        if new_viol > viol or (not force and new_gap > gap + 1e-12):
            counts[a] += 1
            counts[b] -= 1
            return
        beta[a][j], beta[b][j] = 0, 1
        infl[a] -= w[j]
        infl[b] += w[j]
        gap, viol = new_gap, new_viol

    def paired(force: bool) -> None:
        nonlocal gap
        j1, j2 = rng.sample(movable, 2) if len(movable) > 1 else (movable[0], l - 1)
        pa = [i for i in range(l) if beta[i][j1] and not beta[i][j2]]
        pb = [i for i in range(l) if not beta[i][j1] and beta[i][j2]]
        if not pa or not pb:
            return
        a, b = rng.choice(pa), rng.choice(pb)
        d = w[j2] - w[j1]  # a trades j1 for j2, b the reverse
        new_gap = gap + l * 2.0 * d * (infl[a] - infl[b] + d)
        if not force and new_gap > gap + 1e-12:
            return
        beta[a][j1], beta[a][j2] = 0, 1
        beta[b][j1], beta[b][j2] = 1, 0
        infl[a] += d
        infl[b] -= d
        gap = new_gap

    def step(force: bool) -> None:
        if len(movable) > 1 and rng.random() < 0.5:
            paired(force)
        else:
            single(force)

    patience = max(1, max_iters // 10)
    stale = 0
    for _ in range(max_iters):
        step(force=False)
        if (viol, gap) < (best[1], best[2] - 1e-12) and gap <= start_gap + 1e-12:
            best = ([row[:] for row in beta], viol, gap)
            stale = 0
            continue
        stale += 1
        if stale >= patience:
            stale = 0
            beta, counts, infl = load(best[0])
            gap = gap_of(np.array(infl))
            viol = violation(counts)
            for _ in range(l):
                step(force=True)

    out = ChannelMapping(l, np.array(best[0]), mapping.kind)
    if influence_gap(out) > influence_gap(mapping):
        # incremental bookkeeping drifted past the exact value; keep the input
        return mapping
    return ChannelMapping(l, out.beta, mapping.kind, contiguous=out.is_contiguous())


# ---------------------------------------------------------------------------
# exhaustive oracle


def enumerate_optimal(l: int) -> ChannelMapping:
    """Minimum-gap mapping over every fair 0/1 matrix with column sums ``j``.

    Influences are scaled by ``lcm(1..l)`` so the search compares integers;
    ties go to the lexicographically smallest matrix (row-major).
    """
    _check_l(l)
    if l > ENUMERATE_MAX_L:
        raise UnsupportedSize(f"exhaustive enumeration supports l <= {ENUMERATE_MAX_L}, got {l}")
    scale = math.lcm(*range(1, l + 1))
    total = l * (l + 1) // 2
    lo = total // l
    hi = lo if total % l == 0 else lo + 1
    combos = [list(itertools.combinations(range(l), j)) for j in range(1, l + 1)]

    counts = [0] * l
    infl = [0] * l
    chosen: list[tuple[int, ...]] = [()] * l
    best_gap: int | None = None
    best_key: tuple[int, ...] | None = None

    def key_of(cols: Iterable[tuple[int, ...]]) -> tuple[int, ...]:
        m = [[0] * l for _ in range(l)]
        for j, rows in enumerate(cols):
            for i in rows:
                m[i][j] = 1
        return tuple(v for row in m for v in row)

    def rec(j: int) -> None:
        nonlocal best_gap, best_key
        if j == l:
            s = sum(infl)
            g = l * sum(v * v for v in infl) - s * s  # = 2 * scale^2 * gap
            if best_gap is None or g < best_gap:
                best_gap, best_key = g, key_of(chosen)
            elif g == best_gap:
                k = key_of(chosen)
                if k < best_key:
                    best_key = k
            return
        remaining = l - j - 1
        step = scale // (j + 1)
        for rows in combos[j]:
            for i in rows:
                counts[i] += 1
                infl[i] += step
            if all(c <= hi and c + remaining >= lo for c in counts):
                chosen[j] = rows
                rec(j + 1)
            for i in rows:
                counts[i] -= 1
                infl[i] -= step

    rec(0)
    beta = np.array(best_key, dtype=np.int8).reshape(l, l)
    return ChannelMapping(l, beta, MappingKind.CUSTOM, contiguous=False)


# ---------------------------------------------------------------------------
# text format


def dumps(mapping: ChannelMapping) -> str:
    lines = [f"l={mapping.l} kind={mapping.kind.value}"]
    for block in mapping.blocks:
        lines.extend(" ".join(str(int(v)) for v in row) for row in block)
    return "\n".join(lines) + "\n"


def loads(text: str) -> ChannelMapping:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise MappingError("empty mapping document")
    head = dict(part.split("=", 1) for part in lines[0].split())
    try:
        l = int(head["l"])
        kind = MappingKind(head.get("kind", "custom"))
    except (KeyError, ValueError) as exc:
        raise MappingError(f"bad header line: {lines[0]!r}") from exc
    rows = [[int(tok) for tok in ln.split()] for ln in lines[1:]]
    n_blocks = 2 if kind is MappingKind.BILATERAL else 1
    if len(rows) != n_blocks * l:
        raise MappingError(f"expected {n_blocks * l} matrix rows, got {len(rows)}")
    blocks = [np.array(rows[b * l:(b + 1) * l]) for b in range(n_blocks)]
    m = ChannelMapping(l, blocks[0], kind, beta_right=blocks[1] if n_blocks == 2 else None)
    return ChannelMapping(l, m.beta, kind, contiguous=m.is_contiguous(), beta_right=m.beta_right)
