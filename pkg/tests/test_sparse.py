import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughsparse.errors import DomainError, InvalidInputError, ParameterError
from roughsparse.field import Cube, GridFunction
from roughsparse.kernel import preset_kernel
from roughsparse.sio import OperatorHandle
from roughsparse.sparse import (
    Exponents,
    SparseFamily,
    Thresholds,
    domination_sides,
    duality_gap,
    local_stopping,
    partition_support,
    rle_decode,
    rle_encode,
    sparse_dominate,
    sparse_form,
    verify_sparseness,
)

HILBERT1 = OperatorHandle.rough(preset_kernel("hilbert", 1))
HILBERT2 = OperatorHandle.rough(preset_kernel("hilbert", 2))


def unit_indicator(lower, upper, k):
    f = GridFunction.zeros([lower], [upper], k)
    c = f.axis_centers(0)
    return f.with_values(((c > 0) & (c < 1)).astype(float))


def random_pair(rng, side=16, k=4):
    base = GridFunction([0.0, 0.0], k, np.zeros((side, side)))
    f = base.with_values(rng.standard_normal(base.shape) * (rng.random(base.shape) < 0.3))
    g = base.with_values(rng.standard_normal(base.shape))
    return f, g


def test_partition_rings_one_dimension():
    f = unit_indicator(-4, 5, 2)
    roots = partition_support(f)
    assert [(R.lower[0], R.side) for R in roots] == [(0, 1), (-1, 1), (1, 1), (-4, 3), (2, 3)]
    single = partition_support(f, domain=([0.0], [1.0]))
    assert len(single) == 1 and single[0].side == 1.0
    with pytest.raises(DomainError):
        partition_support(f, domain=([-math.inf], [1.0]))


def test_partition_rings_plane():
    f = GridFunction.zeros([-1.0, -1.0], [2.0, 2.0], 2)
    vals = np.zeros(f.shape)
    vals[4:8, 4:8] = 1.0
    f = f.with_values(vals)
    roots = partition_support(f)
    assert len(roots) == 9
    assert all(R.side == 1.0 for R in roots)
    assert all(R.dilate(3).contains_cube(roots[0]) for R in roots)


def test_zero_inputs():
    f = unit_indicator(-2, 3, 3)
    res = sparse_dominate(f.with_values(0.0), f, HILBERT1)
    assert res.K == 0.0
    res = sparse_dominate(f, f.with_values(0.0), HILBERT1)
    lhs, rhs = domination_sides(HILBERT1, f, f.with_values(0.0), res, Exponents())
    assert lhs == 0.0 and rhs == 0.0


def test_unit_indicator_dominated():
    f = unit_indicator(-2, 3, 5)
    res = sparse_dominate(f, f, HILBERT1)
    lhs, rhs = domination_sides(HILBERT1, f, f, res, Exponents())
    assert lhs <= rhs
    assert verify_sparseness(res.family, res.family.eta)["pass"]


def test_trace_bounds_and_sparseness(rng):
    f, g = random_pair(rng)
    res = sparse_dominate(f, g, HILBERT2)
    assert res.family.eta == pytest.approx(1 / 18)
    assert all(e.satisfies_bounds() for e in res.trace)
    report = verify_sparseness(res.family, res.family.eta)
    assert report["pass"], report
    lhs, rhs = domination_sides(HILBERT2, f, g, res, Exponents())
    assert lhs <= rhs
    assert res.K == pytest.approx(max(e.A + e.B for e in res.trace))


def test_local_stopping_errors(rng):
    f, g = random_pair(rng)
    Q = Cube.from_corner([0.0, 0.0], 0.5)
    with pytest.raises(ParameterError):
        local_stopping(Q, f, g, HILBERT2, mode="nope")
    with pytest.raises(ParameterError):
        local_stopping(Q, f, g, HILBERT2, mode="paper-constants")
    with pytest.raises(ParameterError):
        Exponents(q=2.0, r=1.0)
    with pytest.raises(InvalidInputError):
        sparse_dominate(f, GridFunction([0.0, 0.0], 3, np.zeros((4, 4))), HILBERT2)


def test_fixed_constant_thresholds(rng):
    f, g = random_pair(rng, side=8, k=3)
    th = Thresholds(weak_norm=1.0, bilinear_norm=1.0)
    e = Exponents(1.0, 2.0, 2.0)
    res = sparse_dominate(f, g, HILBERT2, e, mode="paper-constants", thresholds=th)
    A, B = th.constants(2, e)
    assert A == pytest.approx(8 * 36)
    assert B == pytest.approx(32 * 3)
    assert all(entry.leaf or (entry.A, entry.B) == (A, B) for entry in res.trace)
    assert verify_sparseness(res.family, res.family.eta)["pass"]


def test_sparse_form_examples():
    grid = GridFunction.zeros([-1.0], [2.0], 2)
    c = grid.axis_centers(0)
    f = grid.with_values(2.0 * ((c > 0) & (c < 1)))
    g = grid.with_values(1.0 * ((c > 0) & (c < 0.5)))
    S = SparseFamily(grid, [Cube.from_corner([0.0], 1.0)], [np.ones(4, bool)], 1.0)
    assert sparse_form(S, f, g) == pytest.approx(1.0)
    assert sparse_form(S, f, g, 1, 2) == pytest.approx(math.sqrt(2))
    with pytest.raises(ParameterError):
        sparse_form(S, f, g, 0.5, 1)


@given(st.floats(1, 4), st.floats(1, 4), st.floats(0, 2), st.floats(0, 2))
def test_sparse_form_monotone_in_exponents(r, s, dr, ds):
    rng = np.random.default_rng(int(1000 * (r + s)))
    grid = GridFunction([0.0, 0.0], 2, np.zeros((8, 8)))
    f = grid.with_values(rng.standard_normal((8, 8)))
    g = grid.with_values(rng.standard_normal((8, 8)))
    cubes = [Cube.from_corner([0.0, 0.0], 2.0), Cube.from_corner([0.5, 0.5], 1.0)]
    S = SparseFamily(grid, cubes, [np.ones((8, 8), bool), np.ones((4, 4), bool)], 0.5)
    assert sparse_form(S, f, g, r, s) <= sparse_form(S, f, g, r + dr, s + ds) * (1 + 1e-12)


def test_verify_sparseness_examples():
    grid = GridFunction.zeros([0.0], [4.0], 2)
    disjoint = SparseFamily(
        grid,
        [Cube.from_corner([0.0], 1.0), Cube.from_corner([2.0], 1.0)],
        [np.ones(4, bool), np.ones(4, bool)],
        1.0,
    )
    assert verify_sparseness(disjoint, 1.0)["pass"]
    tower = SparseFamily(
        grid,
        [Cube.from_corner([0.0], 2.0), Cube.from_corner([0.0], 1.0), Cube.from_corner([0.0], 0.5)],
        [np.array([0, 0, 0, 0, 1, 1, 1, 1], bool), np.array([0, 0, 1, 1], bool), np.array([1, 1], bool)],
        0.5,
    )
    report = verify_sparseness(tower, 0.5)
    assert report["pass"] and report["worst_ratio"] == 0.5
    assert not verify_sparseness(tower, 0.6)["pass"]
    dup = SparseFamily(grid, [Cube.from_corner([0.0], 1.0)] * 2, [np.ones(4, bool)] * 2, 1.0)
    report = verify_sparseness(dup, 0.5)
    assert not report["pass"] and report["overlaps"] == 4


@given(st.lists(st.booleans(), max_size=64))
def test_rle_roundtrip(bits):
    bits = np.array(bits, dtype=bool)
    assert np.array_equal(rle_decode(rle_encode(bits)), bits)


def test_family_json(rng):
    f, g = random_pair(rng, side=8, k=3)
    res = sparse_dominate(f, g, HILBERT2)
    doc = json.loads(res.family.to_json())
    assert len(doc["cubes"]) == len(res.family)
    first = doc["cubes"][0]
    decoded = rle_decode(first["witness_rle"])
    assert np.array_equal(decoded, res.family.witness[0].ravel())


def test_duality_gap(rng):
    f, g = random_pair(rng)
    T = OperatorHandle.rough(preset_kernel("random-rademacher", 2, 64, seed=9))
    assert duality_gap(T, f, g) <= 1e-10
