import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mismc.multi_index import (
    apply_dod,
    dod_expand,
    is_downward_closed,
    read_index_set,
    tensor_index_set,
    total_degree_index_set,
    write_index_set,
)

levels = st.lists(st.integers(0, 3), min_size=1, max_size=3).map(tuple)


def nested_difference(alpha, f):
    """Reference mixed difference by recursive single-axis differencing."""

    def rec(a, axis):
        if axis == len(a):
            return f(a)
        here = rec(a, axis + 1)
        if a[axis] == 0:
            return here
        lower = a[:axis] + (a[axis] - 1,) + a[axis + 1 :]
        return here - rec(lower, axis + 1)

    return rec(tuple(alpha), 0)


def test_tensor_set_small():
    assert tensor_index_set((1, 1)) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert tensor_index_set((0, 0)) == [(0, 0)]


def test_tensor_set_matches_double_loop():
    expected = [(i, j) for i in range(3) for j in range(2)]
    assert tensor_index_set((2, 1)) == expected


def test_tensor_set_needs_a_dimension():
    with pytest.raises(ValueError, match="dimension"):
        tensor_index_set(())


@given(levels)
def test_tensor_set_size_and_closure(m):
    s = tensor_index_set(m)
    size = 1
    for b in m:
        size *= b + 1
    assert len(s) == size == len(set(s))
    assert s == sorted(s)
    assert is_downward_closed(s)


def test_total_degree_examples():
    assert total_degree_index_set((1, 1), 1) == [(0, 0), (0, 1), (1, 0)]
    assert total_degree_index_set((1, 1), 0) == [(0, 0)]
    assert sorted(total_degree_index_set((1, 2), 2)) == sorted([(0, 0), (1, 0), (2, 0), (0, 1)])


@pytest.mark.parametrize("zeta", [(0, 1), (-1, 2)])
def test_total_degree_rejects_bad_weights(zeta):
    with pytest.raises(ValueError):
        total_degree_index_set(zeta, 3)


@given(
    st.lists(st.floats(0.25, 3.0), min_size=1, max_size=3),
    st.floats(0.0, 6.0),
)
def test_total_degree_is_downward_closed_and_complete(zeta, M):
    s = total_degree_index_set(zeta, M)
    assert is_downward_closed(s)
    bounds = [int(M // z) + 1 for z in zeta]
    brute = [a for a in itertools.product(*(range(b + 1) for b in bounds)) if sum(x * z for x, z in zip(a, zeta)) <= M]
    assert set(s) == set(brute)


def test_dod_expand_examples():
    e = dod_expand((0, 0))
    assert e.k == 1 and e.terms == ((0, 0),) and e.pair_signs == ()

    e = dod_expand((1, 0))
    assert e.terms == ((0, 0), (1, 0)) and e.pair_signs == (1,)

    e = dod_expand((1, 1))
    assert e.terms == ((0, 0), (1, 0), (0, 1), (1, 1))
    assert e.pair_signs == (-1, 1)


@given(levels)
def test_dod_expansion_invariants(alpha):
    e = dod_expand(alpha)
    n_pos = sum(a > 0 for a in alpha)
    assert e.k == 2**n_pos
    assert e.terms[-1] == alpha
    assert len(set(e.terms)) == e.k
    for i, t in enumerate(e.terms):
        dec = e.decrements(i)
        assert all(d in (0, 1) for d in dec)
        assert all(d == 0 for d, a in zip(dec, alpha) if a == 0)
    for sign, hi, lo in e.pairs:
        diff = [a - b for a, b in zip(e.terms[hi], e.terms[lo])]
        assert sorted(diff) == [0] * (len(alpha) - 1) + [1]
        assert sign == (-1) ** (sum(alpha) - sum(e.terms[hi]))


@given(st.lists(st.integers(0, 3), min_size=1, max_size=2).map(tuple))
def test_labelling_sums_non_decreasing(alpha):
    e = dod_expand(alpha)
    sums = [sum(t) for t in e.terms]
    assert all(b >= a for a, b in zip(sums, sums[1:]))


@given(levels, st.data())
@settings(max_examples=60)
def test_apply_dod_equals_nested_differencing(alpha, data):
    table = {
        a: data.draw(st.floats(-100, 100, allow_nan=False))
        for a in tensor_index_set(alpha)
    }
    got = apply_dod(dod_expand(alpha), table)
    assert got == pytest.approx(nested_difference(alpha, table.__getitem__), abs=1e-9)


@given(levels)
def test_coefficients_cancel_on_constants(alpha):
    e = dod_expand(alpha)
    if e.k > 1:
        assert sum(e.coefficients().values()) == 0
        assert apply_dod(e, {t: 3.5 for t in e.terms}) == 0.0


def test_apply_dod_examples():
    assert apply_dod(dod_expand((1, 0)), {(0, 0): 1, (1, 0): 3}) == 2
    table = {(0, 0): 1, (1, 0): 2, (0, 1): 4, (1, 1): 9}
    assert apply_dod(dod_expand((1, 1)), table) == 4


def test_apply_dod_missing_key():
    with pytest.raises(KeyError):
        apply_dod(dod_expand((1, 1)), {(1, 1): 1.0})


@given(st.tuples(st.integers(0, 3), st.integers(0, 3)), st.data())
@settings(max_examples=50)
def test_telescoping_over_tensor_set(m, data):
    table = {a: data.draw(st.floats(-10, 10, allow_nan=False)) for a in tensor_index_set(m)}
    total = sum(apply_dod(dod_expand(a), table) for a in tensor_index_set(m))
    assert total == pytest.approx(table[m], abs=1e-9)


def test_index_set_roundtrip(tmp_path):
    s = total_degree_index_set((1, 2), 4)
    write_index_set(s, tmp_path / "set.csv")
    assert read_index_set(tmp_path / "set.csv") == s
