"""Numbered acceptance criteria, each with its own tolerance and wall-clock limit.

Every test records a single PASS/FAIL line that pytest prints in the
"acceptance criteria" summary section. Run ``pytest -m acceptance`` for this
file alone.
"""

import contextlib
import itertools
import math
import os
import random
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, harmonic, toy_space
from test_cost import _bump
from test_rank import average_ranks, brute_kendall, brute_pearson
from test_search import HW, brute_fronts, synthetic, toy
from test_space import _flat_space
from vitas_kit.cost import estimate, reference_deit
from vitas_kit.mapping import (
    build_bilateral,
    build_cyclic,
    build_ordinal,
    enumerate_optimal,
    influence_gap,
    metrics,
    refine_local_search,
)
from vitas_kit.rank import kendall_tau_a, pearson, spearman
from vitas_kit.search import SearchConfig, hypervolume_2d, nondominated_sort, nsga2_search
from vitas_kit.simshare import TinyFc, empirical_influence, grad_check, simulate
from vitas_kit.space import canonicalize, count_space, iter_archs, load_space, sample_uniform

pytestmark = pytest.mark.acceptance


@contextlib.contextmanager
def criterion(n: int, limit: float, what: str):
    t0 = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - t0
        assert elapsed < limit, f"took {elapsed:.2f} s, limit {limit} s"
    except BaseException as exc:
        elapsed = time.perf_counter() - t0
        first = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        line = f"AC{n} FAIL {what} ({elapsed:.2f} s / {limit} s): {first[:160]}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    line = f"AC{n} PASS {what} ({elapsed:.2f} s / {limit} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_ac01_cyclic_fairness():
    with criterion(1, 1.0, "cyclic column sums and row spread, l=2..16"):
        for l in range(2, 17):
            beta = build_cyclic(l).beta
            assert beta.sum(axis=0).tolist() == list(range(1, l + 1)), l
            rows = beta.sum(axis=1)
            assert rows.max() - rows.min() <= 1, l


def test_ac02_gap_ordering():
    with criterion(2, 1.0, "gap ratios cyclic/ordinal <= 0.02, bilateral/ordinal in [0.3, 0.7], l=5..10"):
        bad = []
        for l in range(5, 11):
            ordinal = build_ordinal(l)
            infl = metrics(ordinal).influence_vector
            h = harmonic(l)
            for i in range(1, l + 1):
                assert abs(infl[i - 1] - float(h - harmonic(i - 1))) <= 1e-12
            g_o = influence_gap(ordinal)
            c = influence_gap(build_cyclic(l)) / g_o
            b = influence_gap(build_bilateral(l)) / g_o
            if not c <= 0.02:
                bad.append(f"l={l} cyclic/ordinal={c:.4f}")
            if not 0.3 <= b <= 0.7:
                bad.append(f"l={l} bilateral/ordinal={b:.4f}")
        assert not bad, "; ".join(bad)


def test_ac03_oracle_optimality():
    with criterion(3, 60.0, "cyclic + local search within 5% of exhaustive optimum, l=2..6"):
        for l in range(2, 7):
            best = influence_gap(enumerate_optimal(l))
            got = influence_gap(refine_local_search(build_cyclic(l), 20000, seed=0))
            assert got <= 1.05 * best + 1e-12, (l, got, best)


def _toy_grid():
    """Flat single-stage spaces with L <= 4 and P = ops*heads*attn*mlp <= 3."""
    shapes = {(o, h, a, m) for o, h, a, m in itertools.product((1, 2, 3), repeat=4) if o * h * a * m <= 3}
    return [(L, *shape) for L in range(1, 5) for shape in sorted(shapes)]


def test_ac04_identity_shift_count():
    with criterion(4, 5.0, "8191 forms for 12 layers x 2 ops; toy counts match brute force"):
        assert count_space(_flat_space(12, 2)).total == 2**13 - 1 == 8191
        for L, o, h, a, m in _toy_grid():
            sp = _flat_space(L, o, h, a, m)
            images = {canonicalize(x) for x in iter_archs(sp, canonical=False)}
            assert count_space(sp).total == len(images), (L, o, h, a, m)


def test_ac05_ordinal_counts():
    with criterion(5, 5.0, "ordinal l=10 counts within 2% of (l-i+1)/l"):
        l, steps = 10, 100_000
        s = simulate(build_ordinal(l), steps, seed=0)
        for i in range(1, l + 1):
            want = (l - i + 1) / l
            assert abs(s.counts[i - 1] / steps - want) <= 0.02 * want, i


def test_ac06_influence_monte_carlo():
    with criterion(6, 10.0, "empirical influence within 0.005 of 1/j; grad check < 1e-6"):
        for j in (1, 2, 4, 10):
            assert abs(empirical_influence(j, 1_000_000, seed=j) - 1 / j) <= 0.005, j
        for seed in range(5):
            assert grad_check(TinyFc.random(32, seed=seed), 1e-5) < 1e-6


def test_ac07_rank_coefficients():
    with criterion(7, 5.0, "rank coefficients vs oracles on 200 pairs; 100 monotone cases"):
        rng = np.random.default_rng(2024)
        for k in range(200):
            n = int(rng.integers(2, 51))
            if k % 2:  # small integer range forces ties
                r, s = rng.integers(0, 6, n).astype(float), rng.integers(0, 6, n).astype(float)
            else:
                r, s = rng.normal(size=n), rng.normal(size=n)
            if np.ptp(r) == 0 or np.ptp(s) == 0:
                continue
            assert kendall_tau_a(r, s) == brute_kendall(r, s)
            assert abs(pearson(r, s) - brute_pearson(list(r), list(s))) <= 1e-12
            ref = brute_pearson(average_ranks(list(r)), average_ranks(list(s)))
            assert abs(spearman(r, s) - ref) <= 1e-12
        maps = [lambda x: np.exp(x / 10), lambda x: x**3, lambda x: 7 * x + 3]
        for k in range(100):
            n = int(rng.integers(3, 51))
            r = rng.permutation(n).astype(float) - n / 2  # distinct values
            s = rng.normal(size=n)
            fr = maps[k % 3](r)
            assert kendall_tau_a(fr, s) == kendall_tau_a(r, s)
            assert spearman(fr, s) == spearman(r, s)


def test_ac08_nsga2():
    with criterion(8, 120.0, "sorting oracle; toy front hypervolume within 5%; monotone best; budget held"):
        rng = np.random.default_rng(8)
        for _ in range(100):
            pts = [tuple(p) for p in rng.integers(0, 10, size=(int(rng.integers(1, 60)), 2))]
            assert nondominated_sort(pts) == brute_fronts(pts)
        sp = toy()
        every = [(synthetic(a), estimate(a, HW).flops) for a in iter_archs(sp)]
        assert len(every) <= 10**4
        costs = sorted(f for _, f in every)
        budget = costs[int(0.7 * len(costs))]
        feasible = [p for p in every if p[1] <= budget]
        ref = (min(s for s, _ in feasible) - 1e-9, budget)
        true_hv = hypervolume_2d(feasible, ref)
        r = nsga2_search(sp, SearchConfig(budget=budget, seed=0, input_hw=HW), synthetic)
        got = hypervolume_2d([(i.score, i.flops) for i in r.front], ref)
        assert got >= 0.95 * true_hv, got / true_hv
        best = [g.best_score for g in r.history]
        assert all(b >= a for a, b in zip(best, best[1:]))
        assert all(i.flops <= budget for i in r.front) and r.best.flops <= budget


def test_ac09_cost_model():
    with criterion(9, 10.0, "DeiT-T/S within 10% of 1.3/4.6 G; 1000 monotone perturbations"):
        assert abs(estimate(reference_deit(192, 3, 12)).flops - 1.3) <= 0.13
        assert abs(estimate(reference_deit(384, 6, 12)).flops - 4.6) <= 0.46
        rng = random.Random(9)
        spaces = [load_space(n) for n in ("twins-small", "deit-small", "twins-base")]
        pairs = 0
        while pairs < 1000:
            sp = spaces[pairs % 3]
            a = sample_uniform(sp, canonical=False, seed=rng)
            b = _bump(a, rng)
            if b is None:
                continue
            ra, rb = estimate(a), estimate(b)
            assert rb.flops >= ra.flops and rb.params >= ra.params
            pairs += 1


CLI_RUNS = [
    ["mapping", "build", "--kind", "cyclic", "--l", "10", "--json"],
    ["mapping", "build", "--kind", "cyclic", "--l", "8", "--non-contiguous", "--iters", "2000", "--seed", "4"],
    ["mapping", "refine", "--l", "7", "--iters", "3000", "--seed", "3", "--json"],
    ["mapping", "enumerate", "--l", "5", "--json"],
    ["space", "count", "--space", "twins-small"],
    ["space", "sample", "--space", "twins-small", "--n", "5", "--seed", "11", "--json"],
    ["space", "sample", "--space", "deit-small", "--n", "3", "--raw", "--seed", "2"],
    ["cost", "--deit-ref", "small", "--json"],
    ["simulate", "--kind", "cyclic", "--l", "10", "--steps", "20000", "--seed", "6"],
    ["simulate", "--kind", "bilateral", "--l", "6", "--steps", "5000", "--alternating", "--json", "--seed", "1"],
    ["rank", "--input", "{paths}", "--groups", "3", "--json"],
    ["search", "--space", "twins-small", "--budget-gflops", "1.4", "--population", "8", "--generations", "3",
     "--parents", "4", "--seed", "5", "--json"],
]


def test_ac10_cli_determinism(tmp_path):
    with criterion(10, 30.0, "seeded CLI runs are byte-identical"):
        paths = tmp_path / "paths.csv"
        rng = random.Random(10)
        paths.write_text("".join(f"{rng.uniform(1, 4):.6f},{rng.random():.6f}\n" for _ in range(60)))
        env = {**os.environ, "PYTHONHASHSEED": "random"}
        for argv in CLI_RUNS:
            argv = [a.replace("{paths}", str(paths)) for a in argv]
            outs = [
                subprocess.run([sys.executable, "-m", "vitas_kit", *argv], capture_output=True, env=env, timeout=60)
                for _ in range(2)
            ]
            assert all(o.returncode == 0 for o in outs), (argv, outs[0].stderr.decode()[-300:])
            assert outs[0].stdout == outs[1].stdout, argv
            assert outs[0].stdout, argv
