"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances."""

import json
import math
import time

import numpy as np

from roughsparse.cli import main
from roughsparse.dyadic import DyadicLattice, cz_decompose, three_lattice, verify_three_lattice
from roughsparse.field import GridFunction
from roughsparse.kernel import dini_constant_numeric, dini_of_mollified, preset_kernel
from roughsparse.lab import ExperimentConfig, run_eps_split, run_lambda_sweep, run_sparse_check, run_weak_norm
from roughsparse.maximal import CubeFamily, MaximalConfig, m_lambda_sweep, m_p
from roughsparse.rearrange import quantile_values, rearrange_values
from roughsparse.sio import OperatorHandle, apply_truncated, opnorm_l2


def test_three_lattice_exhaustive(criterion):
    t0 = time.perf_counter()
    system = three_lattice(DyadicLattice.standard(1, -6, 6))
    report = verify_three_lattice(system, 2**13)
    elapsed = time.perf_counter() - t0
    bad = report["membership_violations"] + report["uniqueness_violations"]
    ok = bad == 0 and report["cubes_checked"] > 0 and elapsed < 10
    criterion(1, ok, f"{report['cubes_checked']} cubes, {bad} violations, {elapsed:.1f} s")


def _cz_case(rng, n):
    k, kmax = (5, 2) if n == 1 else (3, 1)
    side = 2 ** (kmax + k)
    vals = rng.integers(-256, 257, size=(side,) * n) / 256.0
    vals = np.where(rng.random(vals.shape) < rng.uniform(0.05, 0.6), vals, 0.0)
    f = GridFunction(np.zeros(n), k, vals)
    D = DyadicLattice.standard(n, -k, kmax)
    mass = float(np.abs(vals).sum()) * f.cell_measure
    # the height sits above every root average, as the decomposition requires
    root_avg = mass / 2.0 ** (kmax * n)
    height = max(root_avg, 1 / 256) * float(rng.choice([1.0, 1.5, 2.0, 4.0]))
    return f, D, height, mass


def test_cz_invariants_exact(criterion, rng):
    failures = []
    for case in range(100):
        n = 1 + case % 2
        f, D, height, mass = _cz_case(rng, n)
        d = cz_decompose(f, D, height)
        bad = d.bad_total().values
        covered = np.zeros(f.shape, dtype=int)
        means_zero = True
        for q in d.cubes:
            start, m = f.cell_range(D.to_cube(q))
            covered[tuple(slice(s, s + m) for s in start)] += 1
            means_zero &= d.bad[q].values.sum() == 0.0
        checks = [
            np.array_equal(d.good.values + bad, f.values),
            means_zero,
            np.abs(d.good.values).max() <= 2**n * height,
            d.stopping_measure() <= mass / height,
            covered.max(initial=0) <= 1,
        ]
        if not all(checks):
            failures.append((case, checks))
    criterion(2, not failures, f"100 cases, {len(failures)} failing")


def test_rearrangement_suite(criterion, rng):
    errors = {"equimeasurable": 0, "subadditive": 0, "layer_cake": 0}
    worst = 0.0
    for _ in range(100):
        size = int(rng.integers(4, 200))
        c = float(2.0 ** -rng.integers(0, 6))
        f = rng.standard_normal(size) * (rng.random(size) < 0.7)
        g = rng.standard_normal(size)
        F, G, FG = rearrange_values(f, c), rearrange_values(g, c), rearrange_values(f + g, c)
        for alpha in np.abs(f):
            lhs = np.count_nonzero(np.abs(f) > alpha) * c
            rhs = np.count_nonzero(F.sorted_values > alpha) * c
            worst = max(worst, abs(lhs - rhs))
        if worst > 1e-12:
            errors["equimeasurable"] += 1
        t = FG.breakpoints()
        if np.any(FG(t) > F(t / 2) + G(t / 2)):
            errors["subadditive"] += 1
        p = float(rng.choice([1.0, 2.0, 3.5]))
        # the quantile is constant on [j/M, (j+1)/M); integrate it piece by piece
        mids = (np.arange(size) + 0.5) / size
        quad = sum(quantile_values(g, lam) ** p for lam in mids) / size
        direct = np.mean(np.abs(g) ** p)
        if abs(quad - direct) > 1e-12 * max(1.0, direct):
            errors["layer_cake"] += 1
    ok = not any(errors.values())
    criterion(3, ok, f"100 cases each, failures {errors}, equimeasurability error {worst:.1e}")


def test_chebyshev_bridge(criterion, rng):
    T = OperatorHandle.rough(preset_kernel("random-rademacher", 2, 64, seed=11))
    lams = [2.0**-i for i in range(1, 7)]
    violations = 0
    for _ in range(20):
        base = GridFunction.zeros([0.0, 0.0], [1.0, 1.0], 4)
        f = base.with_values(rng.standard_normal(base.shape) * (rng.random(base.shape) < 0.3))
        fam = CubeFamily.dyadic(f, min_cells=2, shifted=True)
        sweep = m_lambda_sweep(T, f, lams, fam)
        for p in (1.0, 2.0, 4.0):
            mp = m_p(T, f, MaximalConfig(p=p, family=fam)).values
            for lam in lams:
                # one rounding of the p-th root is the only slack
                violations += int(np.count_nonzero(sweep[lam].values > lam ** (-1 / p) * mp * (1 + 1e-13)))
    criterion(4, violations == 0, f"20 cases x 6 lambdas x 3 p, {violations} violating cells")


def test_hilbert_closed_forms(criterion):
    f = GridFunction.zeros([-4.0], [4.0], 10)
    x = f.axis_centers(0)
    f = f.with_values(((x > -1) & (x < 1)).astype(float))
    T = OperatorHandle.rough(preset_kernel("hilbert", 1))
    out = apply_truncated(T, f, f.h).values
    window = (np.abs(x) >= 1.5) & (np.abs(x) <= 4)
    exact = np.log(np.abs(x + 1)) - np.log(np.abs(x - 1))
    err = float(np.max(np.abs(out - exact)[window]))
    norm = opnorm_l2(T, (1024,))
    rel = abs(norm / math.pi - 1)
    criterion(5, err <= 1e-3 and rel <= 0.02, f"sup error {err:.2e}, opnorm/pi - 1 = {rel:+.4f}")


def test_eps_split_decay(criterion):
    cfg = ExperimentConfig.build("eps-split")
    t0 = time.perf_counter()
    res = run_eps_split(cfg)
    elapsed = time.perf_counter() - t0
    slopes = res.metadata["slopes"]
    ok = all(res.checks[f"slope_in_range[{name}]"] for name in slopes) and elapsed < 300
    detail = ", ".join(f"{name} slope {s:.3f}" for name, s in slopes.items())
    criterion(6, ok, f"{detail} (target [0.45, 1.1]), {elapsed:.1f} s")


def test_eps_split_plane_remainder_is_nondegenerate():
    # in the plane the mollifier changes the kernel, so the remainder norms shrink with eps
    omega = preset_kernel("hilbert", 2, 256)
    norms = [opnorm_l2(OperatorHandle("rough-difference", omega, eps=e), (32, 32), 5) for e in (0.25, 0.125, 0.0625)]
    assert all(v > 1e-3 for v in norms)
    assert norms[0] > norms[1] > norms[2]


def test_dini_constants(criterion):
    eps_grid = [2.0**-i for i in range(0, 9)]
    worst_closed, ok = 0.0, True
    for eps in eps_grid:
        mod = dini_of_mollified(eps)
        numeric = dini_constant_numeric(mod, breakpoints=[eps] if eps < 1 else ())
        worst_closed = max(worst_closed, abs(numeric - (1 + math.log(1 / eps))))
        ok &= mod.dini_constant == 1 + math.log(1 / eps)
        ok &= mod.dini_constant <= 2 * math.log(2 / eps)
    ok &= worst_closed <= 1e-10
    criterion(7, ok, f"closed form vs quadrature {worst_closed:.1e}, growth bound holds on {len(eps_grid)} eps")


def test_sparse_domination(criterion):
    cfg = ExperimentConfig.build("sparse-check")
    t0 = time.perf_counter()
    res = run_sparse_check(cfg)
    elapsed = time.perf_counter() - t0
    dominated = sum(res.column("dominated"))
    ok = res.passed and dominated == 50 and elapsed < 600
    criterion(
        8,
        ok,
        f"{dominated}/50 dominated, worst lhs/rhs {res.metadata['worst_ratio']:.3f}, "
        f"min witness {res.metadata['worst_witness']:.3f} (eta {1 / 18:.4f}), {elapsed:.1f} s",
    )


def test_lambda_sweep(criterion):
    res = run_lambda_sweep(ExperimentConfig.build("lambda-sweep"))
    ok = res.passed
    criterion(
        9,
        ok,
        f"W nonincreasing {res.checks['W_nonincreasing_in_lambda']}, ratio spread "
        f"{res.metadata['ratio_spread']:.2f} (<= 4), log-squared guard {res.checks['not_faster_than_log_squared']}",
    )


def test_weak_norm_linear_in_p(criterion):
    res = run_weak_norm(ExperimentConfig.build("weak-norm"))
    q = res.column("quotient")
    criterion(
        10,
        res.passed,
        f"quotients {', '.join(f'{v:.2f}' for v in q)} for p = 1, 2, 4, 8; "
        f"quotient/p spread {res.metadata['spread']:.2f} (<= 4)",
    )


SMALL = {
    "lambda-sweep": {"grid": {"k": 4}, "family": {"min_cells": 2}, "tests": {"count": 3}},
    "eps-split": {"grid": {"k": 6}, "epsilons": [0.25, 0.125]},
    "sparse-check": {"grid": {"k": 3}, "pairs": 2},
    "weak-norm": {"grid": {"k": 4}, "family": {"min_cells": 2}, "tests": {"count": 3}},
}


def test_cli_determinism(criterion, tmp_path, capsys):
    mismatched = []
    for name, cfg in SMALL.items():
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(cfg))
        outs = []
        for run, threads in enumerate((1, 4)):
            out = tmp_path / f"{name}-{run}"
            code = main([name, "--config", str(path), "--out", str(out), "--seed", "5", "--threads", str(threads)])
            assert code in (0, 1)
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if outs[0] != outs[1] or not outs[0]:
            mismatched.append(name)
    capsys.readouterr()
    criterion(11, not mismatched, f"{len(SMALL)} subcommands, byte-identical outputs, mismatches {mismatched}")
