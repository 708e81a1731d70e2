import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import harmonic
from vitas_kit.mapping import (
    ChannelMapping,
    MappingError,
    MappingKind,
    UnsupportedSize,
    build_bilateral,
    build_cyclic,
    build_ordinal,
    dumps,
    enumerate_optimal,
    influence_gap,
    influence_matrix,
    loads,
    metrics,
    refine_local_search,
)


def brute_gap(infl):
    return sum((a - b) ** 2 for a, b in itertools.combinations(infl, 2))


def fraction_influence(beta):
    """Exact row influence straight from the definition."""
    l = len(beta)
    return [sum(Fraction(int(beta[i][j]), j + 1) for j in range(l)) for i in range(l)]


# --- ordinal -----------------------------------------------------------------


def test_ordinal_counts_l10():
    m = metrics(build_ordinal(10))
    assert m.training_counts[0] == 10
    assert m.training_counts[9] == 1


def test_ordinal_l1():
    m = build_ordinal(1)
    assert m.beta.tolist() == [[1]]
    assert metrics(m).training_counts.tolist() == [1]


def test_ordinal_l3_counts_and_columns():
    m = build_ordinal(3)
    assert metrics(m).training_counts.tolist() == [3, 2, 1]
    assert m.beta.sum(axis=0).tolist() == [1, 2, 3]


def test_ordinal_l3_influence_and_gap():
    met = metrics(build_ordinal(3))
    assert np.allclose(met.influence_vector, [11 / 6, 5 / 6, 1 / 3], atol=1e-15)
    assert met.influence_gap == pytest.approx(3.5, abs=1e-12)


@pytest.mark.parametrize("l", range(1, 17))
def test_ordinal_harmonic_closed_form(l):
    infl = metrics(build_ordinal(l)).influence_vector
    expect = [float(harmonic(l) - harmonic(i - 1)) for i in range(1, l + 1)]
    assert np.max(np.abs(infl - expect)) <= 1e-12


@pytest.mark.parametrize("bad", [0, -3])
def test_invalid_l(bad):
    for build in (build_ordinal, build_bilateral, build_cyclic):
        with pytest.raises(MappingError):
            build(bad)


# --- bilateral ---------------------------------------------------------------


@pytest.mark.parametrize("l", [1, 2, 5, 8])
def test_bilateral_summed_counts(l):
    m = build_bilateral(l)
    assert metrics(m).training_counts.tolist() == [l + 1] * l
    for block in m.blocks:
        assert block.sum(axis=0).tolist() == list(range(1, l + 1))


def test_bilateral_right_block_definition():
    l = 6
    right = build_bilateral(l).beta_right
    for i in range(1, l + 1):
        for j in range(1, l + 1):
            assert right[i - 1, j - 1] == (1 if i >= l - j + 1 else 0)


def test_bilateral_l3_harmonic_oracle():
    infl = metrics(build_bilateral(3)).influence_vector
    h = harmonic
    expect = [float((h(3) - h(i - 1)) + (h(3) - h(3 - i))) for i in (1, 2, 3)]
    assert np.allclose(infl, expect, atol=1e-12)


# --- metrics -----------------------------------------------------------------


def test_gap_matches_pairwise_definition():
    for m in (build_ordinal(6), build_bilateral(6), build_cyclic(6)):
        infl = [sum(fraction_influence(block)[i] for block in m.blocks) for i in range(6)]
        assert metrics(m).influence_gap == pytest.approx(float(brute_gap(infl)), abs=1e-12)


def test_single_group_has_zero_gap():
    assert metrics(build_cyclic(1)).influence_gap == 0


def test_gap_zero_iff_uniform():
    from vitas_kit.mapping import gap_of

    assert gap_of(np.array([0.7, 0.7, 0.7])) == 0.0
    assert gap_of(np.array([0.7, 0.7, 0.71])) > 0


def test_influence_matrix_psi():
    m = build_cyclic(6)
    psi = influence_matrix(m).psi
    for i in range(6):
        for j in range(6):
            assert psi[i, j] == (1 / (j + 1) if m.beta[i, j] else 0.0)


def test_cyclic_beats_bilateral_l5():
    assert influence_gap(build_cyclic(5)) <= influence_gap(build_bilateral(5))


# --- cyclic ------------------------------------------------------------------


def test_cyclic_l5_all_counts_three():
    assert metrics(build_cyclic(5)).training_counts.tolist() == [3] * 5


def test_cyclic_l4_relaxed_counts():
    counts = metrics(build_cyclic(4)).training_counts
    assert set(counts.tolist()) <= {2, 3}
    assert counts.max() - counts.min() <= 1


@pytest.mark.parametrize("l", range(1, 17))
def test_cyclic_constraints(l):
    m = build_cyclic(l)
    assert m.kind is MappingKind.CYCLIC
    assert m.beta.sum(axis=0).tolist() == list(range(1, l + 1))
    assert m.row_spread() <= 1
    assert m.contiguous and m.is_contiguous()


@pytest.mark.parametrize("l", range(1, 17))
def test_cyclic_no_worse_than_patterns(l):
    c = influence_gap(build_cyclic(l))
    assert c <= influence_gap(build_ordinal(l)) + 1e-12
    bil = influence_gap(build_bilateral(l))
    if l == 2:
        # the two mirrored blocks cancel exactly; no single matrix can
        assert bil == 0 and influence_gap(enumerate_optimal(2)) == pytest.approx(1.0)
        assert c == pytest.approx(influence_gap(enumerate_optimal(2)))
    else:
        assert c <= bil + 1e-12


@pytest.mark.parametrize("l", range(5, 11))
def test_gap_ordering(l):
    assert influence_gap(build_cyclic(l)) < influence_gap(build_bilateral(l)) < influence_gap(build_ordinal(l))


@pytest.mark.parametrize("l", [5, 6, 7])
def test_cyclic_non_contiguous_keeps_constraints(l):
    m = build_cyclic(l, contiguous=False, refine_iters=2000)
    assert m.column_sums_ok() and m.row_spread() <= 1
    assert influence_gap(m) <= influence_gap(build_cyclic(l)) + 1e-12


# --- local search ------------------------------------------------------------


def test_refine_improves_ordinal_l5():
    start = build_ordinal(5)
    out = refine_local_search(start, 5000, seed=1)
    assert influence_gap(out) < influence_gap(start)
    assert influence_gap(out) >= influence_gap(enumerate_optimal(5)) - 1e-12


def test_refine_fixed_point_on_optimum():
    opt = enumerate_optimal(2)
    assert influence_gap(refine_local_search(opt, 1000, seed=0)) == pytest.approx(influence_gap(opt))


def test_refine_deterministic():
    start = build_ordinal(7)
    a = refine_local_search(start, 3000, seed=42)
    b = refine_local_search(start, 3000, seed=42)
    assert np.array_equal(a.beta, b.beta)


def test_refine_zero_iters_identity():
    start = build_ordinal(6)
    assert refine_local_search(start, 0, seed=3) == start


@settings(max_examples=25, deadline=None)
@given(l=st.integers(2, 9), iters=st.integers(0, 800), seed=st.integers(0, 2**16))
def test_refine_never_worse_and_feasible(l, iters, seed):
    start = build_cyclic(l) if seed % 2 else build_ordinal(l)
    out = refine_local_search(start, iters, seed)
    assert out.column_sums_ok()
    assert influence_gap(out) <= influence_gap(start) + 1e-12
    if start.row_spread() <= 1:
        assert out.row_spread() <= 1


# --- enumeration -------------------------------------------------------------


def _all_feasible(l):
    cols = [list(itertools.combinations(range(l), j)) for j in range(1, l + 1)]
    for pick in itertools.product(*cols):
        beta = np.zeros((l, l), dtype=int)
        for j, rows in enumerate(pick):
            beta[list(rows), j] = 1
        rs = beta.sum(axis=1)
        if rs.max() - rs.min() <= 1:
            yield beta


def test_enumerate_l1():
    m = enumerate_optimal(1)
    assert m.beta.tolist() == [[1]]
    assert influence_gap(m) == 0


def test_enumerate_l2_is_best_of_two():
    gaps = [brute_gap(fraction_influence(b)) for b in _all_feasible(2)]
    assert influence_gap(enumerate_optimal(2)) == pytest.approx(float(min(gaps)), abs=1e-12)


@pytest.mark.parametrize("l", [3, 4])
def test_enumerate_matches_independent_brute_force(l):
    best = min(brute_gap(fraction_influence(b)) for b in _all_feasible(l))
    assert influence_gap(enumerate_optimal(l)) == pytest.approx(float(best), abs=1e-12)


def test_enumerate_below_cyclic_l5():
    assert influence_gap(enumerate_optimal(5)) <= influence_gap(build_cyclic(5)) + 1e-12


def test_enumerate_rejects_large():
    with pytest.raises(UnsupportedSize):
        enumerate_optimal(7)


def test_enumerate_tie_break_lexicographic():
    l = 4
    best = min(brute_gap(fraction_influence(b)) for b in _all_feasible(l))
    ties = [b for b in _all_feasible(l) if math.isclose(float(brute_gap(fraction_influence(b))), float(best), abs_tol=1e-12)]
    smallest = min(ties, key=lambda b: tuple(b.flatten()))
    assert enumerate_optimal(l).beta.tolist() == smallest.tolist()


# --- text format -------------------------------------------------------------


@pytest.mark.parametrize("build", [build_ordinal, build_bilateral, build_cyclic])
def test_text_round_trip(build):
    m = build(6)
    text = dumps(m)
    assert text.splitlines()[0] == f"l=6 kind={m.kind.value}"
    back = loads(text)
    assert back == m and back.kind == m.kind


def test_loads_rejects_short():
    with pytest.raises(MappingError):
        loads("l=3 kind=ordinal\n1 1 1\n")


def test_mapping_rejects_bad_columns():
    with pytest.raises(MappingError):
        ChannelMapping(2, np.array([[1, 0], [1, 0]]))


def test_arrays_read_only():
    m = build_cyclic(4)
    with pytest.raises(ValueError):
        m.beta[0, 0] = 1


@settings(max_examples=40, deadline=None)
@given(l=st.integers(1, 12))
def test_psi_monotone_in_rows(l):
    for m in (build_ordinal(l), build_cyclic(l)):
        psi = influence_matrix(m).psi
        for row in psi:
            used = row[row > 0]
            assert np.all(np.diff(used) <= 0)
