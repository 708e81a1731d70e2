"""NSGA-II search over encoded architectures under a FLOPs budget."""
from __future__ import annotations

import math
import random
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .cost import CostConfig, estimate, layer_cost, min_max_cost, stage_contexts
from .mapping import build_cyclic
from .space import (
    ArchEncoding,
    IncompatibleArch,
    SpaceSpec,
    canonicalize,
    encode,
    is_canonical,
    sample_uniform,
)

__all__ = [
    "InfeasibleBudget",
    "SearchConfig",
    "Individual",
    "GenerationRecord",
    "ParetoFront",
    "nondominated_sort",
    "crowding_distance",
    "hypervolume_2d",
    "pareto_filter",
    "mutate",
    "crossover",
    "repair",
    "nsga2_search",
    "proxy_evaluator",
    "influence_evaluator",
    "command_evaluator",
    "make_evaluator",
]

Evaluator = Callable[[ArchEncoding], float]


class InfeasibleBudget(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    population: int = 50
    generations: int = 40
    parents: int = 20
    budget: float = math.inf  # giga-MACs
    mutation_rate: float = 0.1
    seed: int = 0
    input_hw: tuple[int, int] = (224, 224)
    constraint_only: bool = False
    init_attempts: int = 100_000
    repair_steps: int = 50
    workers: int = 1
    cost: CostConfig = field(default_factory=CostConfig)

    def __post_init__(self) -> None:
        if self.population < 2 or self.generations < 1:
            raise ValueError("need population >= 2 and generations >= 1")
        if not 2 <= self.parents <= self.population:
            raise ValueError("parents must lie in [2, population]")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in [0, 1]")


@dataclass
class Individual:
    arch: ArchEncoding
    score: float
    flops: float
    feasible: bool
    index: int
    rank: int = 0
    crowding: float = 0.0

    def to_dict(self) -> dict:
        return {
            "encoding": encode(self.arch),
            "score": self.score,
            "flops_g": self.flops,
            "feasible": self.feasible,
            "rank": self.rank,
        }


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_score: float
    hypervolume: float
    evaluated: int


@dataclass
class ParetoFront:
    front: list[Individual]
    best: Individual | None
    history: list[GenerationRecord]
    evaluated: int
    hv_reference: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "generations": [
                {"generation": r.generation, "best_score": r.best_score, "hypervolume": r.hypervolume,
                 "evaluated": r.evaluated}
                for r in self.history
            ],
            "front": [ind.to_dict() for ind in self.front],
            "best": self.best.to_dict() if self.best else None,
            "evaluated": self.evaluated,
            "hv_reference": list(self.hv_reference),
        }


# ---------------------------------------------------------------------------
# NSGA-II machinery


def _signed(points: Sequence[Sequence[float]], maximize: Sequence[bool] | None) -> list[tuple[float, ...]]:
    if maximize is None:
        return [tuple(p) for p in points]
    return [tuple(-v if mx else v for v, mx in zip(p, maximize)) for p in points]


def _dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def nondominated_sort(
    points: Sequence[Sequence[float]], maximize: Sequence[bool] | None = None
) -> list[list[int]]:
    """Fast non-dominated sort; objectives are minimised unless flagged in ``maximize``."""
    pts = _signed(points, maximize)
    n = len(pts)
    dominated: list[list[int]] = [[] for _ in range(n)]
    count = [0] * n
    fronts: list[list[int]] = [[]]
    for p in range(n):
        for q in range(p + 1, n):
            if _dominates(pts[p], pts[q]):
                dominated[p].append(q)
                count[q] += 1
            elif _dominates(pts[q], pts[p]):
                dominated[q].append(p)
                count[p] += 1
    fronts[0] = [p for p in range(n) if count[p] == 0]
    while fronts[-1]:
        nxt = []
        for p in fronts[-1]:
            for q in dominated[p]:
                count[q] -= 1
                if count[q] == 0:
                    nxt.append(q)
        fronts.append(sorted(nxt))
    fronts.pop()
    return fronts


def crowding_distance(points: Sequence[Sequence[float]]) -> list[float]:
    """Crowding distance within one front; boundary points get ``inf``."""
    n = len(points)
    if n == 0:
        return []
    if n <= 2:
        return [math.inf] * n
    dist = [0.0] * n
    for m in range(len(points[0])):
        order = sorted(range(n), key=lambda i: (points[i][m], i))
        lo, hi = points[order[0]][m], points[order[-1]][m]
        dist[order[0]] = dist[order[-1]] = math.inf
        if hi == lo:
            continue
        for k in range(1, n - 1):
            dist[order[k]] += (points[order[k + 1]][m] - points[order[k - 1]][m]) / (hi - lo)
    return dist


def pareto_filter(points: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Non-dominated ``(score, flops)`` pairs (score up, flops down), sorted by flops."""
    best: list[tuple[float, float]] = []
    for score, flops in sorted(set(points), key=lambda p: (p[1], -p[0])):
        if not best or score > best[-1][0]:
            best.append((score, flops))
    return best


def hypervolume_2d(points: Sequence[tuple[float, float]], ref: tuple[float, float]) -> float:
    """Area dominated by ``(score, flops)`` points relative to ``ref = (score_min, flops_max)``."""
    ref_score, ref_flops = ref
    front = [(s, f) for s, f in pareto_filter(points) if s > ref_score and f < ref_flops]
    area = 0.0
    # sweep by increasing flops; each point owns the strip up to the next point's flops
    for k, (s, f) in enumerate(front):
        nxt = front[k + 1][1] if k + 1 < len(front) else ref_flops
        area += (nxt - f) * (s - ref_score)
    return area


# ---------------------------------------------------------------------------
# variation


def _rng(seed: int | random.Random | None) -> random.Random:
    return seed if isinstance(seed, random.Random) else random.Random(seed)


def mutate(arch: ArchEncoding, rate: float, seed: int | random.Random | None = 0) -> ArchEncoding:
    """Resample each gene with probability ``rate``; the result is canonical."""
    rng = _rng(seed)
    sizes = arch.space.gene_sizes()
    genes = [rng.randrange(n) if rng.random() < rate else g for g, n in zip(arch.genes(), sizes)]
    return canonicalize(ArchEncoding.from_genes(arch.space, genes))


def crossover(a: ArchEncoding, b: ArchEncoding, seed: int | random.Random | None = 0) -> ArchEncoding:
    """Uniform per-gene crossover; the result is canonical."""
    if a.space != b.space:
        raise IncompatibleArch("crossover parents come from different spaces")
    rng = _rng(seed)
    genes = [x if rng.random() < 0.5 else y for x, y in zip(a.genes(), b.genes())]
    return canonicalize(ArchEncoding.from_genes(a.space, genes))


def _repair_moves(arch: ArchEncoding, input_hw: tuple[int, int], cost: CostConfig):
    """Yield ``(saving, candidate)`` for every one-notch budget-lowering move.

    Moves lower one in-use width ratio, or turn a stage's deepest parametric
    slot into Identity (keeping the stage canonical). Layer moves are priced
    from the per-slot cost; embedding moves change a whole stage and are
    priced by a full estimate.
    """
    space = arch.space
    ctxs = stage_contexts(arch, input_hw, cost)
    base = None
    genes = list(arch.genes())
    pos = 0
    for s, (st, sc, ctx) in enumerate(zip(space.stages, arch.stages, ctxs)):
        if sc.embed_ratio > 0:
            if base is None:
                base = estimate(arch, input_hw, cost).flops
            genes[pos + 1] -= 1
            cand = ArchEncoding.from_genes(space, genes)
            genes[pos + 1] += 1
            yield base - estimate(cand, input_hw, cost).flops, cand
        pos += 2
        deepest = max((k for k, lc in enumerate(sc.layers) if not lc.is_identity), default=None)
        for k, lc in enumerate(sc.layers):
            if lc.is_identity:
                pos += 4
                continue
            here = layer_cost(st, lc, ctx, s, cost)[0]
            for field_offset, attr in ((2, "attn"), (3, "mlp")):
                if getattr(lc, attr) > 0:
                    lower = replace(lc, **{attr: getattr(lc, attr) - 1})
                    saving = here - layer_cost(st, lower, ctx, s, cost)[0]
                    genes[pos + field_offset] -= 1
                    cand = ArchEncoding.from_genes(space, genes)
                    genes[pos + field_offset] += 1
                    yield saving / 1e9, cand
            if k == deepest:
                saved = genes[pos:pos + 4]
                genes[pos:pos + 4] = [0, 0, 0, 0]
                cand = ArchEncoding.from_genes(space, genes)
                genes[pos:pos + 4] = saved
                yield here / 1e9, cand
            pos += 4


def repair(
    arch: ArchEncoding, budget: float, steps: int = 50,
    input_hw: tuple[int, int] = (224, 224), cost: CostConfig = CostConfig(),
) -> ArchEncoding | None:
    """Greedily apply the single move that saves the most FLOPs until within budget.

    Moves are one-notch width-ratio reductions and dropping a stage's
    deepest parametric slot. Returns ``None`` if the budget is still
    exceeded after ``steps`` moves.
    """
    flops = estimate(arch, input_hw, cost).flops
    for _ in range(steps + 1):
        if flops <= budget:
            return arch
        best = None
        for saving, cand in _repair_moves(arch, input_hw, cost):
            if best is None or saving > best[0]:
                best = (saving, cand)
        if best is None or best[0] <= 0:
            return None
        arch = best[1]
        flops = estimate(arch, input_hw, cost).flops
    return None


# ---------------------------------------------------------------------------
# evaluators


def proxy_evaluator(arch: ArchEncoding) -> float:
    """Smooth synthetic score: log of cost with a penalty for unbalanced widths."""
    flops = estimate(arch).flops
    penalty = 0.0
    for sc in arch.stages:
        for lc in sc.layers:
            if not lc.is_identity:
                penalty += abs(lc.attn - lc.mlp)
    return math.log1p(100.0 * flops) - 0.01 * penalty


def influence_evaluator(arch: ArchEncoding, groups: int = 10) -> float:
    """Uniformity of influence the architecture's width picks put on a cyclic mapping.

    Every width ratio in use is read as a dimension ``j = ceil(ratio * groups)``;
    the score is ``1 - std/mean`` of the accumulated per-group influence.
    """
    mapping = build_cyclic(groups)
    beta = mapping.beta.astype(float)
    acc = np.zeros(groups)

    def add(ratio) -> None:
        j = min(groups, max(1, math.ceil(ratio * groups)))
        acc[:] += beta[:, j - 1] / j

    for st, sc in zip(arch.space.stages, arch.stages):
        add(st.embed.ratio_choices[sc.embed_ratio])
        for lc in sc.layers:
            if not lc.is_identity:
                add(st.attn_ratios[lc.attn])
                add(st.mlp_ratios[lc.mlp])
    return float(1.0 - acc.std() / acc.mean())


def command_evaluator(path: str, timeout: float = 600.0) -> Evaluator:
    """Run ``path`` with the encoding on stdin; the last output line is the score."""

    def run(arch: ArchEncoding) -> float:
        proc = subprocess.run(
            [path], input=encode(arch) + "\n", capture_output=True, text=True, timeout=timeout, check=False
        )
        if proc.returncode != 0:
            raise RuntimeError(f"evaluator {path!r} exited {proc.returncode}: {proc.stderr.strip()}")
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if not lines:
            raise RuntimeError(f"evaluator {path!r} printed no score")
        return float(lines[-1])

    return run


def make_evaluator(name: str) -> Evaluator:
    if name == "proxy":
        return proxy_evaluator
    if name == "influence":
        return influence_evaluator
    if name.startswith("cmd:"):
        return command_evaluator(name[4:])
    raise ValueError(f"unknown evaluator {name!r}; expected proxy, influence or cmd:<path>")


# ---------------------------------------------------------------------------
# search loop


class _Evaluations:
    """Memoised scoring; evaluators are deterministic given the architecture."""

    def __init__(self, evaluator: Evaluator, config: SearchConfig):
        self.evaluator = evaluator
        self.config = config
        self.scores: dict[ArchEncoding, float] = {}
        self.flops: dict[ArchEncoding, float] = {}
        self.count = 0
        self.next_index = 0

    def cost(self, arch: ArchEncoding) -> float:
        if arch not in self.flops:
            self.flops[arch] = estimate(arch, self.config.input_hw, self.config.cost).flops
        return self.flops[arch]

    def __call__(self, archs: list[ArchEncoding]) -> list[Individual]:
        todo = [a for a in dict.fromkeys(archs) if a not in self.scores]
        if self.config.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.config.workers) as pool:
                results = list(pool.map(self.evaluator, todo))
        else:
            results = [self.evaluator(a) for a in todo]
        self.scores.update(zip(todo, (float(r) for r in results)))
        out = []
        for a in archs:
            assert is_canonical(a), "only canonical architectures are evaluated"
            f = self.cost(a)
            out.append(Individual(a, self.scores[a], f, f <= self.config.budget, self.next_index))
            self.next_index += 1
        self.count += len(archs)
        return out


def _objectives(ind: Individual, constraint_only: bool) -> tuple[float, ...]:
    return (-ind.score,) if constraint_only else (-ind.score, ind.flops)


def _rank(pop: list[Individual], constraint_only: bool) -> None:
    feas = [i for i in pop if i.feasible]
    infeas = [i for i in pop if not i.feasible]
    fronts = nondominated_sort([_objectives(i, constraint_only) for i in feas])
    for r, front in enumerate(fronts):
        members = [feas[k] for k in front]
        dist = crowding_distance([_objectives(i, constraint_only) for i in members])
        for ind, d in zip(members, dist):
            ind.rank, ind.crowding = r, d
    # infeasible ones rank after every feasible front, ordered by overshoot
    base = len(fronts)
    for ind in infeas:
        ind.rank, ind.crowding = base, -ind.flops


def _order(pop: list[Individual]) -> list[Individual]:
    return sorted(pop, key=lambda i: (not i.feasible, i.rank, -i.crowding, i.index))


def _sample_feasible(
    spec: SpaceSpec, config: SearchConfig, rng: random.Random, evals: _Evaluations, attempts: int
) -> ArchEncoding | None:
    """Uniform canonical draws, each repaired to the budget if it overshoots."""
    for _ in range(attempts):
        arch = sample_uniform(spec, canonical=True, seed=rng)
        if evals.cost(arch) > config.budget:
            arch = repair(arch, config.budget, config.repair_steps, config.input_hw, config.cost)
        if arch is not None:
            return arch
    return None


def nsga2_search(spec: SpaceSpec, config: SearchConfig, evaluator: Evaluator) -> ParetoFront:
    """Bi-objective NSGA-II (score up, FLOPs down) with a hard FLOPs budget.

    The population is seeded with budget-respecting uniform samples. Each
    later generation breeds ``population`` children from the top ``parents``
    individuals by (front, crowding); children are canonicalised and
    repaired to the budget, then parents and children compete for the next
    population. Exactly ``population * generations`` individuals are scored.

    The returned front is the non-dominated set of every feasible individual
    scored during the run, so its hypervolume never decreases between
    generations. With ``constraint_only`` the score is the only objective.
    """
    rng = random.Random(config.seed)
    evals = _Evaluations(evaluator, config)
    cheapest = min_max_cost(spec, config.input_hw, config.cost)[0].flops
    if cheapest > config.budget:
        raise InfeasibleBudget(
            f"no architecture within {config.budget} GFLOPs: the cheapest one costs {cheapest:.6g}"
        )

    init: list[ArchEncoding] = []
    attempts = 0
    while len(init) < config.population:
        if attempts >= config.init_attempts:
            raise InfeasibleBudget(
                f"no architecture within {config.budget} GFLOPs found in {config.init_attempts} attempts"
            )
        attempts += 1
        arch = _sample_feasible(spec, config, rng, evals, 1)
        if arch is not None:
            init.append(arch)
    pop = evals(init)

    archive: dict[ArchEncoding, Individual] = {}
    history: list[GenerationRecord] = []
    hv_ref: tuple[float, float] | None = None

    def record(gen: int, batch: list[Individual]) -> None:
        nonlocal hv_ref
        for ind in batch:
            if ind.feasible and ind.arch not in archive:
                archive[ind.arch] = ind
        pts = [(i.score, i.flops) for i in archive.values()]
        if hv_ref is None:
            cap = config.budget if math.isfinite(config.budget) else max(p[1] for p in pts) * 1.1
            hv_ref = (min(p[0] for p in pts) - 1e-9, cap)
        best = max((p[0] for p in pts), default=-math.inf)
        history.append(GenerationRecord(gen, best, hypervolume_2d(pts, hv_ref), evals.count))

    record(0, pop)
    for gen in range(1, config.generations):
        _rank(pop, config.constraint_only)
        parents = _order(pop)[: config.parents]
        children: list[ArchEncoding] = []
        while len(children) < config.population:
            a, b = rng.sample(parents, 2)
            child = mutate(crossover(a.arch, b.arch, rng), config.mutation_rate, rng)
            fixed = repair(child, config.budget, config.repair_steps, config.input_hw, config.cost)
            if fixed is None:
                fixed = _sample_feasible(spec, config, rng, evals, config.init_attempts)
                if fixed is None:
                    raise InfeasibleBudget("could not resample a feasible child")
            children.append(fixed)
        offspring = evals(children)
        pool = pop + offspring
        _rank(pool, config.constraint_only)
        pop = _order(pool)[: config.population]
        record(gen, offspring)

    members = list(archive.values())
    objs = [_objectives(i, config.constraint_only) for i in members]
    fronts = nondominated_sort(objs) if members else []
    front = sorted((members[k] for k in fronts[0]), key=lambda i: (i.flops, -i.score, i.index)) if fronts else []
    for ind in front:
        ind.rank = 0
    best = max(members, key=lambda i: (i.score, -i.flops, -i.index), default=None)
    return ParetoFront(front, best, history, evals.count, hv_ref or (0.0, 0.0))
