
import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughsparse.dyadic import (
    DyadicCube,
    DyadicLattice,
    cz_decompose,
    family_from_json,
    family_to_json,
    level_sum,
    reduction_cube,
    three_lattice,
    triple_residues,
    verify_three_lattice,
)
from roughsparse.errors import DomainError, ParameterError
from roughsparse.field import Cube, GridFunction


@pytest.mark.parametrize("n,count", [(1, 3), (2, 9)])
def test_lattice_count(n, count):
    system = three_lattice(DyadicLattice.standard(n, -2, 2))
    assert len(system.derived) == count
    assert len({L.anchor for L in system.derived}) == count


def test_unit_interval_triple_in_one_lattice():
    D = DyadicLattice.standard(1, -3, 3)
    system = three_lattice(D)
    hits = system.classify_triple(D.cube(0, [0]))
    assert len(hits) == 1
    assert system.lattice(hits[0].lattice_id).to_cube(hits[0]).lower[0] == -1.0
    assert system.lattice(hits[0].lattice_id).to_cube(hits[0]).side == 3.0


def test_random_cubes_in_plane(rng):
    D = DyadicLattice.standard(2, -3, 3)
    system = three_lattice(D)
    for _ in range(100):
        level = int(rng.integers(-3, 4))
        coords = rng.integers(-40, 40, size=2)
        q = D.cube(level, coords)
        hits = system.classify_triple(q)
        assert len(hits) == 1
        L = system.lattice(hits[0].lattice_id)
        assert hits[0].level == q.level
        assert np.allclose(L.to_cube(hits[0]).center, D.to_cube(q).center)


def test_exhaustive_small_window():
    system = three_lattice(DyadicLattice.standard(1, -4, 4))
    report = verify_three_lattice(system, 2**9)
    assert report["membership_violations"] == 0
    assert report["uniqueness_violations"] == 0
    assert report["cubes_checked"] > 0


@given(st.integers(-5, 0), st.integers(0, 5), st.integers(0, 2))
def test_residue_recursion_matches_anchors(kmin, kmax, top):
    res = triple_residues(kmin, kmax, top)
    for k in range(kmin, kmax):
        assert res[k] == (2 * res[k + 1]) % 3
    # the derived anchor realizes the same residues level by level
    D = DyadicLattice.standard(1, kmin, kmax)
    L = three_lattice(D).derived[top]
    for k in range(kmin, kmax + 1):
        side = D.side_ticks(k)
        assert L.anchor[0] % side == 0
        assert (L.anchor[0] // side) % 3 == res[k]


def test_children_and_parent_nest():
    D = DyadicLattice.standard(2, -2, 2)
    q = D.cube(1, [3, -2])
    kids = D.children(q)
    assert len(kids) == 4
    big = D.to_cube(q)
    assert all(big.contains_cube(D.to_cube(c)) and D.parent(c) == q for c in kids)
    assert sum(D.to_cube(c).measure for c in kids) == pytest.approx(big.measure)
    assert D.children(D.cube(-2, [0, 0])) == []
    assert D.parent(D.cube(2, [0, 0])) is None


def test_containing_and_lattice_errors():
    D = DyadicLattice.standard(1, -2, 2)
    assert D.containing([0.3], -1) == D.cube(-1, [0])
    assert D.containing([-0.3], 0) == D.cube(0, [-1])
    with pytest.raises(ParameterError):
        DyadicLattice.standard(1, 2, 1)
    with pytest.raises(ParameterError):
        DyadicLattice(2, 0, 1, anchor=(0,))


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.3, 3.5))
def test_reduction_geometry(x, y, side):
    D = DyadicLattice.standard(2, -3, 3)
    Q = Cube([x, y], side)
    R = reduction_cube(Q, D)
    assert Q.side / 2 < R.side <= Q.side
    assert R.dilate(3).contains_cube(Q)
    assert R.dilate(9).contains_cube(Q.dilate(3))


def test_reduction_out_of_window():
    with pytest.raises(DomainError):
        reduction_cube(Cube([0.0], 100.0), DyadicLattice.standard(1, -2, 2))


def test_cz_example():
    f = GridFunction([0.0], 2, np.array([2.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
    D = DyadicLattice.standard(1, -2, 1)
    d = cz_decompose(f, D, 0.5)
    assert [(D.to_cube(q).lower[0], D.to_cube(q).side) for q in d.cubes] == [(0.0, 1.0)]
    assert np.array_equal(d.good.values, [1.0] * 4 + [0.0] * 4)
    assert np.array_equal(d.bad_total().values, [1.0, 1.0, -1.0, -1.0] + [0.0] * 4)


def dyadic_rational(rng, shape, density=0.3):
    vals = rng.integers(-256, 257, size=shape) / 256.0
    return np.where(rng.random(shape) < density, vals, 0.0)


@pytest.mark.parametrize("n,k,kmax", [(1, 5, 2), (2, 3, 1)])
def test_cz_invariants(n, k, kmax, rng):
    side = 2 ** (kmax + k)
    for trial in range(10):
        f = GridFunction(np.zeros(n), k, dyadic_rational(rng, (side,) * n))
        D = DyadicLattice.standard(n, -k, kmax)
        mass = float(np.abs(f.values).sum()) * f.cell_measure
        # at least the largest root average, so every root is subdivided first
        height = max(mass / 2.0**(kmax * n), 1 / 256) * (1 + trial / 4)
        d = cz_decompose(f, D, height)
        covered = np.zeros(f.shape, dtype=int)
        for q in d.cubes:
            start, m = f.cell_range(D.to_cube(q))
            sl = tuple(slice(s, s + m) for s in start)
            covered[sl] += 1
            avg = np.abs(f.values[sl]).mean()
            assert height < avg <= 2**n * height
            assert d.bad[q].values.sum() == 0.0
        assert covered.max(initial=0) <= 1
        assert np.all(np.abs(d.good.values) <= 2**n * height)
        assert np.all(np.abs(d.good.values[covered == 0]) <= height)
        assert np.array_equal(d.good.values + d.bad_total().values, f.values)
        assert d.stopping_measure() <= mass / height
        l1 = sum(np.abs(b.values).sum() for b in d.bad.values()) * f.cell_measure
        assert l1 <= 2 * mass
        assert np.array_equal(sum(level_sum(d, l).values for l in d.levels) if d.levels else np.zeros(f.shape),
                              d.bad_total().values)


def test_cz_errors_and_serialization():
    f = GridFunction([0.0], 2, np.array([2.0, 2.0, 0.0, 0.0]))
    D = DyadicLattice.standard(1, -2, 0)
    with pytest.raises(ParameterError):
        cz_decompose(f, D, 0.0)
    with pytest.raises(DomainError):
        cz_decompose(f, DyadicLattice.standard(1, -2, 2), 0.5)
    cubes = [D.cube(0, [0]), D.cube(-1, [3]), DyadicCube("D3[1]", 2, (-4,))]
    assert family_from_json(family_to_json(cubes)) == cubes
    assert '"height": 0.5' in cz_decompose(f, D, 0.5).to_json()
