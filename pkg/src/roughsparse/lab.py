"""Experiment runners behind the command-line interface.

All estimates here are lower bounds: the test family is finite and every
supremum over cubes runs over a finite cube family.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError
from .field import EXPL, GridFunction
from .kernel import SphereKernel, dini_of_mollified, load_kernel_spec, preset_kernel
from .maximal import CubeFamily, MaximalConfig, m_lambda_sweep, m_orlicz, m_p, m_T
from .rearrange import weak_quasinorm
from .sio import OperatorHandle, apply_fft, opnorm_l2
from .sparse import Exponents, domination_sides, duality_gap, sparse_dominate, verify_sparseness

CAVEAT = "lower bound: finite test family and finite cube family"

TEST_TYPES = ("spike", "atom", "comb")


# ---------------------------------------------------------------------------
# configuration


DEFAULTS: Dict[str, Dict[str, Any]] = {
    "lambda-sweep": {
        "kernel": {"preset": "random-rademacher", "dimension": 2, "n_samples": 64, "seed": 0},
        "grid": {"k": 6, "lower": [0.0, 0.0], "upper": [1.0, 1.0]},
        "family": {"min_cells": 4, "max_side": 0.5, "shifted": True},
        "lambdas": [2.0**-i for i in range(1, 11)],
        "tests": {"count": 12, "seed": 0, "types": list(TEST_TYPES)},
    },
    "eps-split": {
        "kernels": [
            {"preset": "hilbert", "dimension": 1},
            {"preset": "cos", "dimension": 1},
        ],
        "grid": {"k": 10},
        "epsilons": [2.0**-i for i in range(2, 9)],
        "slope_range": [0.45, 1.1],
    },
    "sparse-check": {
        "kernel": {"preset": "hilbert", "dimension": 2, "n_samples": 64},
        "grid": {"k": 6, "lower": [0.0, 0.0], "upper": [1.0, 1.0]},
        "pairs": 50,
        "exponents": {"q": 1.0, "r": 1.0, "s": 1.0},
        "mode": "calibrated",
        "tests": {"seed": 0},
    },
    "weak-norm": {
        "kernel": {"preset": "random-rademacher", "dimension": 2, "n_samples": 64, "seed": 0},
        "grid": {"k": 6, "lower": [0.0, 0.0], "upper": [1.0, 1.0]},
        "family": {"min_cells": 4, "max_side": 0.5, "shifted": True},
        "which": "M_pT",
        "p_grid": [1.0, 2.0, 4.0, 8.0],
        "tests": {"count": 12, "seed": 0, "types": list(TEST_TYPES)},
        "max_factor": 4.0,
    },
}


@dataclass
class ExperimentConfig:
    experiment: str
    params: Dict[str, Any]

    @classmethod
    def build(cls, experiment: str, overrides: Optional[dict] = None, seed: Optional[int] = None) -> "ExperimentConfig":
        if experiment not in DEFAULTS:
            raise InvalidInputError(f"unknown experiment {experiment!r}")
        params = copy.deepcopy(DEFAULTS[experiment])
        for key, val in (overrides or {}).items():
            if key == "experiment":
                continue
            if isinstance(val, dict) and isinstance(params.get(key), dict):
                params[key].update(val)
            else:
                params[key] = val
        if seed is not None:
            params.setdefault("tests", {})["seed"] = int(seed)
        cfg = cls(experiment, params)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, experiment: str, path, seed: Optional[int] = None) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise InvalidInputError("config must be a JSON object")
        if data.get("experiment", experiment) != experiment:
            raise InvalidInputError(f"config is for {data['experiment']!r}, not {experiment!r}")
        return cls.build(experiment, data, seed)

    def validate(self) -> None:
        p = self.params
        for key in ("lambdas", "epsilons"):
            for v in p.get(key, []):
                if not (0 < v <= 1):
                    raise InvalidInputError(f"{key} entries must lie in (0, 1]")
                if abs(math.log2(v) - round(math.log2(v))) > 1e-12:
                    raise InvalidInputError(f"{key} entries must be powers of two")
        types = p.get("tests", {}).get("types", [])
        bad = [t for t in types if t not in TEST_TYPES]
        if bad:
            raise InvalidInputError(f"unknown test types {bad}")

    def kernel(self, spec: Optional[dict] = None) -> SphereKernel:
        spec = dict(spec or self.params["kernel"])
        if "preset" in spec:
            return preset_kernel(spec["preset"], int(spec["dimension"]), int(spec.get("n_samples", 64)), int(spec.get("seed", 0)))
        return load_kernel_spec(spec)

    def grid(self, n: int) -> GridFunction:
        g = self.params["grid"]
        lower = g.get("lower", [0.0] * n)
        upper = g.get("upper", [1.0] * n)
        if len(lower) != n or len(upper) != n:
            raise InvalidInputError("grid box does not match the kernel dimension")
        return GridFunction.zeros(lower, upper, int(g["k"]))

    def family(self, base: GridFunction) -> CubeFamily:
        fam = self.params.get("family", {})
        return CubeFamily.dyadic(
            base, int(fam.get("min_cells", 4)), fam.get("max_side"), bool(fam.get("shifted", False))
        )

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, **self.params}


@dataclass
class SweepResult:
    columns: List[str]
    rows: List[List[Any]]
    metadata: Dict[str, Any]
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def column(self, name: str) -> List[Any]:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def report(self) -> dict:
        return {"metadata": self.metadata, "checks": self.checks, "pass": self.passed}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class ProbeFunction:
    ident: str
    kind: str
    f: GridFunction


def probe_family(base: GridFunction, count: int, seed: int, types: Sequence[str] = TEST_TYPES) -> List[ProbeFunction]:
    """Spikes, mean-zero atoms on dyadic cubes, and random-sign combs, in rotation.

    Supports stay in the middle half of the box so that excluded regions of
    nearby cubes are not empty.
    """
    rng = np.random.default_rng(seed)
    n, shape = base.n, base.shape
    lo = [s // 4 for s in shape]
    hi = [3 * s // 4 for s in shape]
    out = []
    for i in range(count):
        kind = types[i % len(types)]
        v = np.zeros(shape)
        if kind == "spike":
            cell = tuple(int(rng.integers(a, b)) for a, b in zip(lo, hi))
            v[cell] = 1.0
        elif kind == "atom":
            m = 2 ** int(rng.integers(1, 4))
            corner = [m * int(rng.integers(a // m, max(a // m + 1, (b - m) // m + 1))) for a, b in zip(lo, hi)]
            block = rng.standard_normal((m,) * n)
            block -= block.mean()
            v[tuple(slice(c, c + m) for c in corner)] = block
        else:
            stride = int(rng.integers(2, 5))
            axes = [np.arange(a, b, stride) for a, b in zip(lo, hi)]
            idx = np.ix_(*axes)
            v[idx] = rng.choice([-1.0, 1.0], size=tuple(len(a) for a in axes))
        out.append(ProbeFunction(f"{kind}-{i}", kind, base.with_values(v)))
    return out


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _metadata(cfg: ExperimentConfig, base: Optional[GridFunction], family: Optional[CubeFamily] = None) -> dict:
    meta = {"experiment": cfg.experiment, "config": cfg.to_dict(), "caveat": CAVEAT}
    if base is not None:
        meta.update({"h": base.h, "box": [list(map(float, base.lower)), list(map(float, base.upper))]})
    if family is not None:
        sides = [m * base.h for m in family.sizes]
        meta["family_bounds"] = [min(sides), max(sides)] if sides else []
        meta["family_size"] = len(family)
    return meta


# ---------------------------------------------------------------------------
# experiments


def run_lambda_sweep(cfg: ExperimentConfig, threads: int = 1) -> SweepResult:
    """W(lam) = max_i ||M_{lam,T} f_i||_{L^{1,inf}} / ||f_i||_1 over the lambda grid."""
    omega = cfg.kernel()
    T = OperatorHandle.rough(omega)
    base = cfg.grid(omega.dimension)
    fam = cfg.family(base)
    lams = sorted(cfg.params["lambdas"], reverse=True)
    t = cfg.params["tests"]
    tests = probe_family(base, int(t["count"]), int(t["seed"]), t["types"])

    def one(tf: ProbeFunction):
        sweep = m_lambda_sweep(T, tf.f, lams, fam)
        norm1 = tf.f.norm(1)
        return [weak_quasinorm(sweep[lam], 1.0) / norm1 for lam in lams]

    vals = np.array(_map(one, tests, threads))
    rows = []
    for j, lam in enumerate(lams):
        i = int(np.argmax(vals[:, j]))
        W = float(vals[i, j])
        rows.append([lam, W, tests[i].ident, W / (1.0 + math.log(1.0 / lam))])
    res = SweepResult(["lambda", "W", "witness", "ratio"], rows, _metadata(cfg, base, fam))
    W = res.column("W")
    ratio = res.column("ratio")
    res.checks["W_nonincreasing_in_lambda"] = all(W[j] <= W[j + 1] for j in range(len(W) - 1))
    spread = max(ratio) / min(ratio) if min(ratio) > 0 else math.inf
    res.metadata["ratio_spread"] = spread
    res.checks["ratio_spread_le_4"] = spread <= 4.0
    # growth beyond (1 + log)^2 shows up as a ratio column rising more than 4x
    res.checks["not_faster_than_log_squared"] = ratio[-1] / ratio[0] <= 4.0 if ratio[0] > 0 else False
    return res


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log x; nan if any y is not positive."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 2 or np.any(y <= 0) or not np.all(np.isfinite(y)):
        return math.nan
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def run_eps_split(cfg: ExperimentConfig, threads: int = 1) -> SweepResult:
    """||T_{Omega - Omega_eps}||_{L2} and the Dini constant of Omega_eps across eps."""
    specs = cfg.params.get("kernels") or [cfg.params["kernel"]]
    eps_grid = sorted(cfg.params["epsilons"], reverse=True)
    k = int(cfg.params["grid"]["k"])
    lo_s, hi_s = cfg.params.get("slope_range", [0.45, 1.1])
    rows = []
    checks: Dict[str, bool] = {}
    slopes = {}
    for spec in specs:
        omega = cfg.kernel(spec)
        n = omega.dimension
        shape = (2**k,) * n
        name = f"{spec.get('preset', 'custom')}-n{n}"

        def one(eps):
            dini = dini_of_mollified(eps).dini_constant
            if eps >= 1.0:
                return [name, eps, math.nan, dini, dini / math.log(2.0 / eps)]
            T = OperatorHandle("rough-difference", omega, eps=eps)
            norm = opnorm_l2(T, shape, k)
            return [name, eps, norm, dini, dini / math.log(2.0 / eps)]

        part = _map(one, eps_grid, threads)
        rows.extend(part)
        fit = [(r[1], r[2]) for r in part if r[1] < 1.0]
        slope = fit_loglog_slope([a for a, _ in fit], [b for _, b in fit])
        slopes[name] = slope
        checks[f"slope_in_range[{name}]"] = bool(lo_s <= slope <= hi_s)
        checks[f"dini_ratio_le_2[{name}]"] = all(r[4] <= 2.0 for r in part)
    meta = _metadata(cfg, None)
    meta["slopes"] = slopes
    meta["grid_cells"] = {f"{s.get('preset')}-n{s['dimension']}": 2 ** k for s in specs}
    return SweepResult(["kernel", "eps", "opnorm", "dini", "dini_over_log2eps"], rows, meta, checks)


def _random_pair(base: GridFunction, rng: np.random.Generator) -> Tuple[GridFunction, GridFunction]:
    f = base.with_values(rng.standard_normal(base.shape))
    g = base.with_values(rng.standard_normal(base.shape))
    return f, g


def run_sparse_check(cfg: ExperimentConfig, threads: int = 1) -> SweepResult:
    """Sparse domination, sparseness and duality on random (f, g) pairs."""
    omega = cfg.kernel()
    T = OperatorHandle.rough(omega)
    base = cfg.grid(omega.dimension)
    n = base.n
    e = Exponents(**cfg.params["exponents"])
    eta = 1.0 / (2 * 3**n)
    count = int(cfg.params["pairs"])
    rng = np.random.default_rng(int(cfg.params["tests"]["seed"]))
    pairs = [_random_pair(base, rng) for _ in range(count)]

    def one(i):
        f, g = pairs[i]
        res = sparse_dominate(f, g, T, e, cfg.params.get("mode", "calibrated"))
        rep = verify_sparseness(res.family, eta)
        lhs, rhs = domination_sides(T, f, g, res, e)
        traces_ok = all(t.satisfies_bounds() for t in res.trace)
        # the swapped run bounds <f, T^adj g> with the roles of the exponents exchanged
        swapped_e = Exponents(1.0, e.s, e.r)
        swapped = sparse_dominate(g, f, T.adjoint_op(), swapped_e)
        lhs2, rhs2 = domination_sides(T.adjoint_op(), g, f, swapped, swapped_e)
        gap = duality_gap(T, f, g)
        return [i, len(res.family), res.K, lhs, rhs, lhs / rhs if rhs > 0 else 0.0,
                rep["worst_ratio"], rep["overlaps"], traces_ok, lhs <= rhs, lhs2 <= rhs2, gap]

    rows = _map(one, list(range(count)), threads)
    cols = ["pair", "cubes", "K", "lhs", "rhs", "ratio", "worst_witness", "overlaps",
            "traces_ok", "dominated", "adjoint_dominated", "duality_gap"]
    res = SweepResult(cols, rows, _metadata(cfg, base))
    res.metadata["eta"] = eta
    res.metadata["worst_ratio"] = max(res.column("ratio"), default=0.0)
    res.metadata["worst_witness"] = min(res.column("worst_witness"), default=1.0)
    res.checks["sparseness"] = all(r[6] >= eta * (1 - 1e-12) and r[7] == 0 for r in rows)
    res.checks["trace_bounds"] = all(r[8] for r in rows)
    res.checks["domination"] = all(r[9] for r in rows)
    res.checks["adjoint_domination"] = all(r[10] for r in rows)
    res.checks["duality"] = all(r[11] <= 1e-10 * max(1.0, abs(r[3])) for r in rows)
    return res


WHICH = ("T", "M_T", "M_expL_T", "M_pT")


def run_weak_norm(cfg: ExperimentConfig, threads: int = 1) -> SweepResult:
    """Empirical L1 -> L^{1,inf} quotients over the test family."""
    which = cfg.params.get("which", "M_pT")
    if which not in WHICH:
        raise InvalidInputError(f"unknown operator {which!r}")
    omega = cfg.kernel()
    T = OperatorHandle.rough(omega)
    base = cfg.grid(omega.dimension)
    fam = cfg.family(base)
    t = cfg.params["tests"]
    tests = probe_family(base, int(t["count"]), int(t["seed"]), t["types"])
    params = cfg.params["p_grid"] if which == "M_pT" else [math.nan]

    def apply_op(f, p):
        if which == "T":
            return apply_fft(T, f)
        if which == "M_T":
            return m_T(T, f, fam)
        if which == "M_expL_T":
            return m_orlicz(T, f, MaximalConfig(family=fam, gauge=EXPL))
        return m_p(T, f, MaximalConfig(p=p, family=fam))

    def one(tf):
        return [weak_quasinorm(apply_op(tf.f, p), 1.0) / tf.f.norm(1) for p in params]

    vals = np.array(_map(one, tests, threads))
    rows = []
    for j, p in enumerate(params):
        i = int(np.argmax(vals[:, j]))
        q = float(vals[i, j])
        rows.append([which, p, q, tests[i].ident, q / p if which == "M_pT" else math.nan])
    res = SweepResult(["operator", "p", "quotient", "witness", "quotient_over_p"], rows, _metadata(cfg, base, fam))
    if which == "M_pT":
        qp = res.column("quotient_over_p")
        spread = max(qp) / min(qp) if min(qp) > 0 else math.inf
        res.metadata["spread"] = spread
        res.checks["quotient_over_p_spread_le_max_factor"] = spread <= float(cfg.params.get("max_factor", 4.0))
    elif which == "T":
        res.checks["nondegenerate"] = all(r[2] > 0 for r in rows)
    else:
        res.metadata["exploratory"] = which == "M_expL_T"
        res.checks["nondegenerate"] = all(r[2] > 0 for r in rows)
    return res


RUNNERS = {
    "lambda-sweep": run_lambda_sweep,
    "eps-split": run_eps_split,
    "sparse-check": run_sparse_check,
    "weak-norm": run_weak_norm,
}

PLOT_AXES = {
    "lambda-sweep": ("lambda", ["W", "ratio"]),
    "eps-split": ("eps", ["opnorm", "dini"]),
    "sparse-check": ("pair", ["ratio"]),
    "weak-norm": ("p", ["quotient", "quotient_over_p"]),
}


# ---------------------------------------------------------------------------
# output


def svg_plot(xs: Sequence[float], series: Dict[str, Sequence[float]], title: str, logx: bool = True, logy: bool = True) -> str:
    """A small line chart with optional log axes; points that cannot be drawn are skipped."""
    W, H, pad = 480, 320, 48
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]

    def tx(v, log):
        return math.log10(v) if log else v

    pts_all = []
    clean = {}
    for name, ys in series.items():
        pts = [(tx(x, logx), tx(y, logy)) for x, y in zip(xs, ys)
               if isinstance(y, (int, float)) and math.isfinite(y) and (y > 0 or not logy) and (x > 0 or not logx)]
        clean[name] = pts
        pts_all.extend(pts)
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{W // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>']
    if pts_all:
        x0, x1 = min(p[0] for p in pts_all), max(p[0] for p in pts_all)
        y0, y1 = min(p[1] for p in pts_all), max(p[1] for p in pts_all)
        x1 = x1 if x1 > x0 else x0 + 1
        y1 = y1 if y1 > y0 else y0 + 1

        def sx(v):
            return pad + (v - x0) / (x1 - x0) * (W - 2 * pad)

        def sy(v):
            return H - pad - (v - y0) / (y1 - y0) * (H - 2 * pad)

        for i, (name, pts) in enumerate(clean.items()):
            c = colors[i % len(colors)]
            if pts:
                path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in pts)
                lines.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{path}"/>')
            lines.append(f'<text x="{W - pad}" y="{pad + 16 * i}" text-anchor="end" font-size="12" fill="{c}">{name}</text>')
        lines.append(f'<text x="{pad}" y="{H - pad + 16}" font-size="11">{_tick(x0, logx)}</text>')
        lines.append(f'<text x="{W - pad}" y="{H - pad + 16}" text-anchor="end" font-size="11">{_tick(x1, logx)}</text>')
        lines.append(f'<text x="{pad - 4}" y="{H - pad}" text-anchor="end" font-size="11">{_tick(y0, logy)}</text>')
        lines.append(f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-size="11">{_tick(y1, logy)}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _tick(v: float, log: bool) -> str:
    return f"{10 ** v:.3g}" if log else f"{v:.3g}"


def write_outputs(experiment: str, res: SweepResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.csv").write_text(res.to_csv())
    (out / "report.json").write_text(json.dumps(_jsonable(res.report()), sort_keys=True, indent=2) + "\n")
    xname, ynames = PLOT_AXES[experiment]
    xs = res.column(xname)
    series = {y: res.column(y) for y in ynames}
    logx = experiment != "sparse-check"
    (out / "plot.svg").write_text(svg_plot(xs, series, experiment, logx=logx))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
