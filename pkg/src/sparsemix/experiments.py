"""Endpoint experiments for sparse operators on discretised weights.

A scenario fixes a grid, two weights u and v, an input f, a sparse family
and a model operator.  Running it measures the weak-type endpoint
quantity, evaluates the matching theoretical bound, rebuilds the good-set
reduction at the worst threshold and records the stratified sums s_{k,j}
next to their two envelopes.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import bounds as bnd
from .grid import (
    BASE,
    CellSet,
    DyadicCube,
    GridError,
    GridFunction,
    GridSpec,
    base_cube,
    cube_position,
    expand,
    level_sums,
    level_volumes,
)
from .orlicz import LLogL, level_norms, osc_norm
from .sparse import (
    SparseFamily,
    commutator_sparse,
    cz_stopping_family,
    dyadic_bin,
    sparse_operator,
)
from .weights import (
    ConstantReport,
    a1_constant,
    a1_relative,
    ainf_fujii,
    ap_relative,
    dyadic_maximal,
    reverse_holder_probe,
)

SLACK = 1e-9


class ConfigError(ValueError):
    """A scenario or configuration cannot be resolved."""


# ---------------------------------------------------------------------------
# weight and function generators

def power_weight(spec: GridSpec, a: float, eps: Optional[float] = None) -> GridFunction:
    """|x|^a sampled at cell midpoints, with |x| floored at eps (default 2^-2L)."""
    if not -spec.n + 1e-3 < a <= 0:
        raise ConfigError(f"power exponent a={a} outside (-{spec.n}+1e-3, 0]")
    eps = 2.0 ** (-2 * spec.L) if eps is None else float(eps)
    if eps <= 0:
        raise ConfigError("eps must be positive")
    r = np.sqrt(sum(x**2 for x in spec.midpoints()))
    return GridFunction(spec, np.maximum(r, eps) ** a, nonneg=True)


def step_weight(spec: GridSpec, values: Sequence[float], level: Optional[int] = None) -> GridFunction:
    """Piecewise constant on the base cubes of one level, values in row-major order."""
    vals = np.asarray(values, dtype=float)
    if level is None:
        level = round(math.log2(vals.size) / spec.n) if vals.size else -1
    if vals.size != 2 ** (spec.n * level) or not 0 <= level <= spec.L:
        raise ConfigError(f"{vals.size} step values do not match a dyadic level of the grid")
    if np.any(vals <= 0):
        raise ConfigError("step weight values must be positive")
    arr = vals.reshape((2**level,) * spec.n)
    cells = expand(arr, spec, BASE, level)
    return GridFunction(spec, cells, nonneg=True)


def random_martingale(spec: GridSpec, seed: int, levels: int, jump: float) -> GridFunction:
    """Dyadic martingale weight: at every level half of each cube's children are
    multiplied by 1 + jump and the other half by 1 - jump, chosen at random."""
    if not 0 <= jump < 1:
        raise ConfigError(f"jump must lie in [0, 1), got {jump}")
    levels = min(int(levels), spec.L)
    rng = np.random.default_rng(seed)
    w = np.ones((1,) * spec.n)
    k = 2**spec.n
    signs = np.array([1.0] * (k // 2) + [-1.0] * (k // 2))
    for _ in range(levels):
        m = w.shape[0]
        mult = np.empty((m,) * spec.n + (k,))
        flat = mult.reshape(-1, k)
        for i in range(flat.shape[0]):
            flat[i] = 1.0 + jump * rng.permutation(signs)
        # children of cube p sit at 2p + offset, offsets in row-major order
        child = mult.reshape((m,) * spec.n + (2,) * spec.n)
        order = [x for a in range(spec.n) for x in (a, spec.n + a)]
        child = child.transpose(order).reshape((2 * m,) * spec.n)
        w = np.repeat(w, 2, axis=0) if spec.n == 1 else _upsample(w)
        w = w * child
    cells = expand(w, spec, BASE, levels)
    return GridFunction(spec, cells, nonneg=True)


def _upsample(a: np.ndarray) -> np.ndarray:
    for ax in range(a.ndim):
        a = np.repeat(a, 2, axis=ax)
    return a


def make_weight(spec: GridSpec, recipe: dict) -> GridFunction:
    kind = recipe.get("kind")
    if kind == "power":
        return power_weight(spec, float(recipe["a"]), recipe.get("eps"))
    if kind == "step":
        return step_weight(spec, recipe["values"], recipe.get("level"))
    if kind == "martingale":
        return random_martingale(spec, int(recipe["seed"]), int(recipe["levels"]), float(recipe["jump"]))
    if kind == "const":
        c = float(recipe.get("c", 1.0))
        if c <= 0:
            raise ConfigError("constant weight must be positive")
        return GridFunction.constant(spec, c)
    raise ConfigError(f"unknown weight kind {kind!r}")


def _box(spec: GridSpec, lo, hi) -> np.ndarray:
    lo = np.broadcast_to(np.asarray(lo, float), (spec.n,))
    hi = np.broadcast_to(np.asarray(hi, float), (spec.n,))
    mids = spec.midpoints()
    m = np.ones(spec.shape, bool)
    for a in range(spec.n):
        m &= (mids[a] >= lo[a]) & (mids[a] < hi[a])
    return m


def make_function(spec: GridSpec, recipe: dict) -> GridFunction:
    """Inputs f and symbols b.

    ``random``: a sum of ``bumps`` indicators of random dyadic cubes with
    log-normal heights, seeded.  ``indicator``: scale times the indicator of
    the box [lo, hi).  ``log``: scale * log|x| (sampled at midpoints).
    """
    kind = recipe.get("kind")
    if kind == "const":
        return GridFunction.constant(spec, float(recipe.get("c", 1.0)))
    if kind == "indicator":
        m = _box(spec, recipe.get("lo", 0.0), recipe.get("hi", 1.0))
        return GridFunction(spec, float(recipe.get("scale", 1.0)) * m, nonneg=recipe.get("scale", 1.0) >= 0)
    if kind == "power":
        r = np.sqrt(sum(x**2 for x in spec.midpoints()))
        return GridFunction(spec, r ** float(recipe["a"]), nonneg=True)
    if kind == "log":
        r = np.sqrt(sum(x**2 for x in spec.midpoints()))
        return GridFunction(spec, float(recipe.get("scale", 1.0)) * np.log(r))
    if kind == "values":
        return GridFunction(spec, np.asarray(recipe["values"], float))
    if kind == "random":
        rng = np.random.default_rng(int(recipe["seed"]))
        out = np.zeros(spec.shape)
        lo = min(int(recipe.get("min_level", 1)), spec.L)
        hi = min(int(recipe.get("max_level", spec.L)), spec.L)
        for _ in range(int(recipe.get("bumps", 4))):
            level = int(rng.integers(lo, hi + 1))
            idx = tuple(int(i) for i in rng.integers(0, 2**level, size=spec.n))
            h = float(rng.lognormal(0.0, float(recipe.get("sigma", 1.5))))
            out[DyadicCube(level, idx).slices(spec)] += h
        return GridFunction(spec, out, nonneg=True)
    raise ConfigError(f"unknown function kind {kind!r}")


def make_family(spec: GridSpec, recipe: dict, f: GridFunction, v: GridFunction) -> SparseFamily:
    kind = recipe.get("kind", "stopping")
    if kind == "stopping":
        src = recipe.get("source", "fv")
        g = {"fv": abs(f) * v, "f": abs(f)}.get(src)
        if g is None:
            raise ConfigError(f"unknown stopping source {src!r}")
        return cz_stopping_family(g, float(recipe.get("a", 2.0)), strict=bool(recipe.get("strict", True)))
    if kind == "single":
        return SparseFamily(spec, [base_cube(spec.n)])
    if kind == "explicit":
        cubes = [DyadicCube.from_json(c) for c in recipe["cubes"]]
        return SparseFamily(spec, cubes)
    if kind == "chain":
        depth = min(int(recipe.get("depth", spec.L)), spec.L)
        return SparseFamily(spec, [DyadicCube(l, (0,) * spec.n) for l in range(depth + 1)])
    raise ConfigError(f"unknown family kind {kind!r}")


# ---------------------------------------------------------------------------
# per-cube evaluation on a family

def per_cube(S: SparseFamily, fn: Callable[[int], np.ndarray]) -> np.ndarray:
    """Gather a level-shaped quantity at the cubes of S (in S.cubes order)."""
    out = np.empty(len(S.cubes))
    levels: dict[int, list[int]] = {}
    for i, Q in enumerate(S.cubes):
        levels.setdefault(Q.level, []).append(i)
    for level, idx in levels.items():
        arr = fn(level)
        pos = tuple(np.array([cube_position(S.cubes[i]) for i in idx]).T)
        out[idx] = arr[pos]
    return out


def family_integrals(S: SparseFamily, cells: np.ndarray) -> np.ndarray:
    spec = S.spec
    return per_cube(S, lambda l: level_sums(cells, spec, S.lattice, l)) * spec.cell_volume


def family_volumes(S: SparseFamily) -> np.ndarray:
    return per_cube(S, lambda l: level_volumes(S.spec, S.lattice, l))


def good_set(Tout: GridFunction, v: GridFunction, Mtilde: GridFunction, t: float) -> CellSet:
    """{Tout / v > t} minus {Mtilde > t/2}."""
    if not v.is_weight:
        raise GridError("v must be strictly positive")
    if t <= 0:
        raise ValueError("t must be positive")
    return CellSet(Tout.spec, (Tout.values / v.values > t) & (Mtilde.values <= t / 2))


# ---------------------------------------------------------------------------
# weak-type suprema

@dataclass(frozen=True)
class WeakSup:
    value: float
    t_star: float
    t_eval: float


def _levels_desc(H: np.ndarray, mass: np.ndarray):
    """Distinct positive values of H (descending) and mass of {H >= y} for each."""
    h = H.ravel()
    m = mass.ravel()
    order = np.argsort(-h, kind="stable")
    hs, ms = h[order], np.cumsum(m[order])
    pos = hs > 0
    hs, ms = hs[pos], ms[pos]
    if hs.size == 0:
        return hs, ms
    last = np.r_[hs[1:] != hs[:-1], True]
    return hs[last], ms[last]


def _t_eval(ys: np.ndarray, i: int) -> float:
    # a threshold t with {H > t} = {H >= ys[i]}
    return 0.5 * (ys[i] + ys[i + 1]) if i + 1 < ys.size else 0.5 * ys[i]


def exact_weak_sup(H: np.ndarray, mass: np.ndarray) -> WeakSup:
    """sup over t > 0 of t * mass({H > t}), attained as t increases to a value of H."""
    ys, ms = _levels_desc(H, mass)
    if ys.size == 0:
        return WeakSup(0.0, math.nan, math.nan)
    prod = ys * ms
    i = int(np.argmax(prod))
    return WeakSup(float(prod[i]), float(ys[i]), _t_eval(ys, i))


def exact_modular_sup(H: np.ndarray, mass: np.ndarray, denom: Callable[[float], float]) -> WeakSup:
    """sup over t of mass({H > t}) / denom(t) for a continuous decreasing denom."""
    ys, ms = _levels_desc(H, mass)
    if ys.size == 0:
        return WeakSup(0.0, math.nan, math.nan)
    ratios = np.array([m / denom(float(y)) for y, m in zip(ys, ms)])
    i = int(np.argmax(ratios))
    return WeakSup(float(ratios[i]), float(ys[i]), _t_eval(ys, i))


def grid_sup(ts: np.ndarray, value: Callable[[float], float]) -> WeakSup:
    vals = np.array([value(float(t)) for t in ts])
    i = int(np.argmax(vals))
    return WeakSup(float(vals[i]), float(ts[i]), float(ts[i]))


# ---------------------------------------------------------------------------
# scenarios and reports

OPERATORS = ("cz", "commutator", "rough")


@dataclass
class Scenario:
    id: str
    grid: GridSpec
    theorem: int = 1
    p: float = 2.0
    u: dict = field(default_factory=lambda: {"kind": "const"})
    v: dict = field(default_factory=lambda: {"kind": "const"})
    operator: dict = field(default_factory=lambda: {"kind": "cz"})
    f: dict = field(default_factory=lambda: {"kind": "const"})
    family: dict = field(default_factory=lambda: {"kind": "stopping", "a": 2.0})
    tgrid: dict = field(default_factory=dict)
    cpolicy: dict = field(default_factory=lambda: {"kind": "fixed", "c": 1.0})
    sensitivity: bool = False

    @classmethod
    def from_dict(cls, d: dict, grid: GridSpec) -> "Scenario":
        if not isinstance(d, dict):
            raise ConfigError("scenario must be an object")
        if "id" not in d:
            raise ConfigError("scenario without id")
        known = {"id", "theorem", "p", "u", "v", "operator", "f", "family", "tgrid", "cpolicy", "grid", "sensitivity"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"scenario {d['id']!r}: unknown keys {sorted(extra)}")
        g = grid
        if "grid" in d:
            g = GridSpec(int(d["grid"]["n"]), int(d["grid"]["L"]))
        sc = cls(id=str(d["id"]), grid=g)
        for key in ("u", "v", "operator", "f", "family", "tgrid", "cpolicy"):
            if key in d:
                if not isinstance(d[key], dict):
                    raise ConfigError(f"scenario {sc.id!r}: {key} must be an object")
                setattr(sc, key, dict(d[key]))
        sc.sensitivity = bool(d.get("sensitivity", False))
        sc.theorem = int(d.get("theorem", 1))
        sc.p = float(d.get("p", 2.0))
        if sc.theorem not in (1, 2):
            raise ConfigError(f"scenario {sc.id!r}: theorem must be 1 or 2")
        if sc.p <= 1:
            raise ConfigError(f"scenario {sc.id!r}: p must exceed 1")
        if sc.operator.get("kind") not in OPERATORS:
            raise ConfigError(f"scenario {sc.id!r}: operator kind must be one of {OPERATORS}")
        if sc.cpolicy.get("kind", "fixed") not in ("fixed", "fit"):
            raise ConfigError(f"scenario {sc.id!r}: cpolicy kind must be fixed or fit")
        if sc.cpolicy.get("kind") == "fit" and sc.cpolicy.get("role", "holdout") not in ("calibrate", "holdout"):
            raise ConfigError(f"scenario {sc.id!r}: cpolicy role must be calibrate or holdout")
        tk = sc.tgrid.get("kind", "exact" if sc.operator["kind"] != "rough" else "log")
        if tk not in ("exact", "log"):
            raise ConfigError(f"scenario {sc.id!r}: tgrid kind must be exact or log")
        if tk == "log":
            lo, hi, n = float(sc.tgrid.get("min", 1e-4)), float(sc.tgrid.get("max", 1e4)), int(sc.tgrid.get("count", 40))
            if not (0 < lo < hi) or n < 2:
                raise ConfigError(f"scenario {sc.id!r}: t-grid must be positive and increasing")
        return sc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = {"n": self.grid.n, "L": self.grid.L}
        return d


@dataclass
class BoundReport:
    scenario_id: str
    theorem: int
    operator: str
    measured: float
    theoretical: float
    c_used: float
    t_star: float
    constants: dict[str, ConstantReport]
    strata: list[dict]
    checks: dict[str, bool]
    details: dict[str, float] = field(default_factory=dict)

    @property
    def bound_ok(self) -> bool:
        return self.measured <= self.c_used * self.theoretical * (1 + SLACK)

    @property
    def passed(self) -> bool:
        return self.bound_ok and all(self.checks.values())

    def to_json(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "theorem": self.theorem,
            "operator": self.operator,
            "measured": self.measured,
            "theoretical": self.theoretical,
            "c_used": self.c_used,
            "t_star": self.t_star,
            "pass": self.passed,
            "constants": {k: c.to_json() for k, c in self.constants.items()},
            "strata": self.strata,
            "checks": self.checks,
            "details": self.details,
        }

    @classmethod
    def from_json(cls, d: dict) -> "BoundReport":
        return cls(
            d["scenario_id"], d["theorem"], d["operator"], d["measured"], d["theoretical"], d["c_used"],
            d["t_star"], {k: ConstantReport.from_json(c) for k, c in d["constants"].items()},
            d["strata"], d["checks"], d.get("details", {}),
        )


CSV_COLUMNS = ["scenario_id", "t_star", "measured", "theoretical", "c_used", "a1_u", "ainf_uv", "ainf_u",
               "ainf_v", "a1_v", "ap_v_u", "a1_u_v", "pass"]


def _num(x: float) -> str:
    return repr(float(x))


def reports_to_csv(reports: Sequence[BoundReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        row = [r.scenario_id, _num(r.t_star), _num(r.measured), _num(r.theoretical), _num(r.c_used)]
        row += [_num(r.constants[k].value) for k in CSV_COLUMNS[5:12]]
        row.append("true" if r.passed else "false")
        w.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# scenario evaluation

@dataclass
class Resolved:
    sc: Scenario
    spec: GridSpec
    u: GridFunction
    v: GridFunction
    uv: GridFunction
    f: GridFunction
    S: SparseFamily
    constants: dict[str, ConstantReport]

    @property
    def inputs(self) -> bnd.BoundInputs:
        c = {k: r.value for k, r in self.constants.items()}
        op = self.sc.operator
        return bnd.BoundInputs(p=self.sc.p, m=int(op.get("m", 0)), r=float(op.get("r", 2.0)), **c)


def weight_constants(u: GridFunction, v: GridFunction, p: float) -> dict[str, ConstantReport]:
    """All constants entering the bounds, scanned over the base lattice."""
    uv = u * v
    return {
        "a1_u": a1_constant(u),
        "ainf_uv": ainf_fujii(uv),
        "ainf_u": ainf_fujii(u),
        "ainf_v": ainf_fujii(v),
        "a1_v": a1_constant(v),
        "ap_v_u": ap_relative(v, u, p),
        "a1_u_v": a1_relative(u, v),
    }


def resolve(sc: Scenario) -> Resolved:
    spec = sc.grid
    try:
        u = make_weight(spec, sc.u)
        v = make_weight(spec, sc.v)
        f = abs(make_function(spec, sc.f))
        if not np.any(f.values > 0):
            raise ConfigError(f"scenario {sc.id!r}: f vanishes identically")
        S = make_family(spec, sc.family, f, v)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"scenario {sc.id!r}: incomplete recipe ({exc})") from None
    except GridError as exc:
        raise ConfigError(f"scenario {sc.id!r}: {exc}") from None
    return Resolved(sc, spec, u, v, u * v, f, S, weight_constants(u, v, sc.p))


def stratum_estimates(cubes, F1, F2, summand, top, bottom, h: Optional[int] = None) -> tuple[list[dict], float]:
    """Bin the cubes with positive functionals and compare s_{k,j} with the envelopes."""
    bins: dict[tuple[int, int], float] = {}
    for a, b, s in zip(F1, F2, summand):
        if a <= 0 or b <= 0:
            continue
        key = (dyadic_bin(float(b)), dyadic_bin(float(a)))
        bins[key] = bins.get(key, 0.0) + float(s)
    rows = []
    for (k, j) in sorted(bins):
        t, b = top(k, j), bottom(k, j)
        row = {"k": k, "j": j, "s": bins[(k, j)], "top": t, "bottom": b,
               "active": "top" if t <= b else "bottom", "envelope": min(t, b)}
        if h is not None:
            row["h"] = h
        rows.append(row)
    return rows, math.fsum(bins.values())


def _close(a: float, b: float, rel: float = 1e-9) -> bool:
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


def _t_values(R: Resolved, scale: float) -> np.ndarray:
    tg = R.sc.tgrid
    return np.geomspace(float(tg.get("min", 1e-4)), float(tg.get("max", 1e4)), int(tg.get("count", 40))) * scale


def endpoint_ratio_cz(sc: Scenario, R: Optional[Resolved] = None) -> BoundReport:
    """Weak-type ratio of f -> A_S(fv)/v from L1(uv) to L^{1,oo}(uv)."""
    R = R or resolve(sc)
    spec, u, v, uv, f, S = R.spec, R.u, R.v, R.uv, R.f, R.S
    B = R.inputs
    cell = spec.cell_volume
    norm_f = (f * uv).integral()
    H = sparse_operator(S, f * v).values / v.values
    mass = uv.values * cell
    if sc.tgrid.get("kind", "exact") == "exact":
        sup = exact_weak_sup(H, mass)
    else:
        scale = norm_f / uv.integral()
        sup = grid_sup(_t_values(R, scale), lambda t: t * float(np.sum(mass[H > t])))
    measured = sup.value / norm_f
    theory = bnd.theorem_bound(sc.theorem, "cz", B.with_(c=1.0))
    t = sup.t_eval
    checks: dict[str, bool] = {}
    details: dict[str, float] = {"norm_f": norm_f}
    strata: list[dict] = []
    if math.isfinite(t):
        ft = f / t
        if sc.theorem == 1:
            Mt = dyadic_maximal(ft, "base", uv)
        else:
            Mt = dyadic_maximal(ft, "base", v)
        G = good_set(GridFunction(spec, H / t * v.values), v, Mt, 1.0)
        g = G.mask.astype(float)
        uvG = float(np.sum(uv.values[G.mask])) * cell
        vol = family_volumes(S)
        int_fv = family_integrals(S, ft.values * v.values)
        int_gu = family_integrals(S, g * u.values)
        int_u = family_integrals(S, u.values)
        int_v = family_integrals(S, v.values)
        int_uv = family_integrals(S, uv.values)
        int_fuv = family_integrals(S, ft.values * uv.values)
        int_guv = family_integrals(S, g * uv.values)
        link1 = float(np.sum(int_fv / vol * int_gu))
        mod = (ft * uv).integral()
        if sc.theorem == 1:
            F1, F2 = int_fuv / int_uv, int_gu / int_u
            link2 = B.a1_u * float(np.sum(F1 * F2 * int_uv))
            top = lambda k, j: 2.0**-k * B.ainf_uv * mod
            bottom = lambda k, j: B.ainf_uv * B.ap_v_u * 2.0**-j * 2.0 ** (k * (B.p - 1)) * uvG
            weak = float(np.sum(uv.values[Mt.values > 0.5])) * cell <= 2 * mod * (1 + SLACK)
            checks["maximal_weak"] = weak
        else:
            F1, F2 = int_fv / int_v, int_guv / int_uv
            link2 = B.a1_v * float(np.sum(F1 * F2 * int_uv))
            top = lambda k, j: 2.0**-k * B.a1_u_v * B.ainf_v * mod
            bottom = lambda k, j: B.ainf_uv * 2.0**-j * 2.0**-k * uvG
        direct = float(np.sum(F1 * F2 * int_uv))
        strata, total = stratum_estimates(S.cubes, F1, F2, F1 * F2 * int_uv, top, bottom)
        checks["chain_operator"] = uvG <= link1 * (1 + SLACK)
        checks["chain_weight"] = link1 <= link2 * (1 + SLACK)
        checks["strata_sum"] = _close(total, direct) if direct > 0 else total == 0
        budget = bnd.reduction_budget_check(theory, mod, uvG)
        checks["budget"] = budget.ok
        details.update({"uv_G": uvG, "link_operator": link1, "link_weight": link2, "stratified_total": total,
                        "t_eval": t, "modular": mod})
    return BoundReport(sc.id, sc.theorem, "cz", measured, theory, float(sc.cpolicy.get("c", 1.0)),
                       sup.t_star, R.constants, strata, checks, details)


def commutator_operator(S: SparseFamily, b: GridFunction, f: GridFunction, m: int) -> GridFunction:
    """Sum over h = 0..m of the commutator sparse operators."""
    out = commutator_sparse(S, b, f, m, 0)
    for h in range(1, m + 1):
        out = out + commutator_sparse(S, b, f, m, h)
    return out


def endpoint_modular_commutator(sc: Scenario, R: Optional[Resolved] = None) -> BoundReport:
    """sup over t of uv({sum_h A_S^{m,h}(b, fv)/v > t}) / integral of Phi_{m/r}(|f| ||b||^m / t) uv."""
    R = R or resolve(sc)
    spec, u, v, uv, f, S = R.spec, R.u, R.v, R.uv, R.f, R.S
    op = sc.operator
    m, r = int(op.get("m", 1)), float(op.get("r", 2.0))
    if m < 0:
        raise ConfigError("m must be >= 0")
    if r <= 1:
        raise ConfigError("r must exceed 1")
    B = R.inputs
    cell = spec.cell_volume
    b = make_function(spec, op.get("b", {"kind": "indicator", "lo": 0.0, "hi": 0.5}))
    bnorm = osc_norm(b, r) if m > 0 else 1.0
    theory = bnd.theorem_bound(sc.theorem, "commutator", B.with_(c=1.0))
    checks: dict[str, bool] = {}
    details: dict[str, float] = {"osc_norm_b": bnorm}
    if m > 0 and bnorm == 0:
        return BoundReport(sc.id, sc.theorem, "commutator", 0.0, theory, float(sc.cpolicy.get("c", 1.0)),
                           math.nan, R.constants, [], {"constant_symbol": True}, details)
    bt = b / bnorm
    H = commutator_operator(S, bt, f * v, m).values / v.values * bnorm**m
    Phi = LLogL(m / r)
    fa = f.values * bnorm**m
    mass = uv.values * cell

    def denom(t):
        return float(np.sum(np.asarray(Phi(fa / t)) * mass))

    if sc.tgrid.get("kind", "exact") == "exact":
        sup = exact_modular_sup(H, mass, denom)
    else:
        scale = (f * uv).integral() / uv.integral()
        sup = grid_sup(_t_values(R, scale), lambda t: float(np.sum(mass[H > t])) / denom(t))
    strata: list[dict] = []
    t = sup.t_eval
    if math.isfinite(t):
        ft = GridFunction(spec, fa / t, nonneg=True)
        totals_ok = True
        for h in range(m + 1):
            Ah = commutator_sparse(S, bt, ft * v, m, h)
            wM = uv if sc.theorem == 1 else v
            Mt = _orlicz_max_base(ft, LLogL(h / r), wM)
            G = good_set(Ah, v, Mt, 1.0)
            g = G.mask.astype(float)
            uvG = float(np.sum(uv.values[G.mask])) * cell
            int_uv = family_integrals(S, uv.values)
            if sc.theorem == 1:
                F1 = per_cube(S, lambda l: level_norms(ft.values, uv.values, LLogL(h / r), spec, S.lattice, l))
                F2 = per_cube(S, lambda l: level_norms(g, u.values, LLogL((m - h) / r), spec, S.lattice, l))
                modh = float(np.sum(np.asarray(LLogL(h / r)(ft.values)) * uv.values)) * cell
                top = lambda k, j, h=h, modh=modh: B.ainf_uv * 2.0**-k * max(j, 1) ** (h / r) * modh
                bottom = lambda k, j, h=h, uvG=uvG: (B.ainf_uv * B.ap_v_u * 2.0**-j * 2.0 ** (k * (B.p - 1))
                                                      * max(k, 1) ** ((m - h) * B.p / r) * uvG)
            else:
                F1 = per_cube(S, lambda l: level_norms(ft.values, v.values, LLogL(h / r), spec, S.lattice, l))
                F2 = per_cube(S, lambda l: level_norms(g, uv.values, LLogL((m - h) / r), spec, S.lattice, l))
                modh = float(np.sum(np.asarray(LLogL(h / r)(ft.values)) * uv.values)) * cell
                top = lambda k, j, h=h, modh=modh: (B.a1_u_v * B.ainf_v * 2.0**-k * max(j, 1) ** (h / r) * modh)
                bottom = lambda k, j, h=h, uvG=uvG: (B.ainf_uv * 2.0**-j * 2.0 ** (k * (B.p - 1))
                                                      * max(k, 1) ** ((m - h) * B.p / r) * uvG)
            rows, total = stratum_estimates(S.cubes, F1, F2, F1 * F2 * int_uv, top, bottom, h=h)
            strata += rows
            direct = float(np.sum(F1 * F2 * int_uv))
            totals_ok &= _close(total, direct) if direct > 0 else total == 0
            # first link: uv(G_h) <= sum_Q <|b-b_Q|^h f v>_Q integral over Q of |b-b_Q|^(m-h) g u
            link = _commutator_link(S, bt, ft.values * v.values, g * u.values, m, h)
            checks[f"chain_operator_h{h}"] = uvG <= link * (1 + SLACK)
            details[f"uv_G_h{h}"] = uvG
        checks["strata_sum"] = totals_ok
        details["t_eval"] = t
    return BoundReport(sc.id, sc.theorem, "commutator", sup.value, theory, float(sc.cpolicy.get("c", 1.0)),
                       sup.t_star, R.constants, strata, checks, details)


def _commutator_link(S: SparseFamily, b: GridFunction, fv: np.ndarray, gu: np.ndarray, m: int, h: int) -> float:
    spec = S.spec
    total = 0.0
    for level, mask in S.cube_family().masks.items():
        vol = level_volumes(spec, S.lattice, level)
        with np.errstate(invalid="ignore", divide="ignore"):
            bq = level_sums(b.values, spec, S.lattice, level) * spec.cell_volume / vol
        dev = np.abs(b.values - expand(np.where(mask, bq, 0.0), spec, S.lattice, level))
        a = level_sums(dev**h * fv, spec, S.lattice, level) * spec.cell_volume
        c = level_sums(dev ** (m - h) * gu, spec, S.lattice, level) * spec.cell_volume
        with np.errstate(invalid="ignore", divide="ignore"):
            total += float(np.sum(np.where(mask, a / vol * c, 0.0)))
    return total


def _orlicz_max_base(f: GridFunction, A, w: GridFunction) -> GridFunction:
    from .orlicz import orlicz_maximal

    return orlicz_maximal(f, A, w, "base")


def _p_avg_family(S: SparseFamily, cells: np.ndarray, weight: np.ndarray, s: float) -> np.ndarray:
    """(integral over Q of |cells|^s weight / integral over Q of weight)^(1/s) for each cube."""
    num = family_integrals(S, np.abs(cells) ** s * weight)
    den = family_integrals(S, weight)
    return (num / den) ** (1.0 / s)


def endpoint_ratio_rough(sc: Scenario, R: Optional[Resolved] = None) -> BoundReport:
    """Bilinear-form model of the rough case.

    For each t the set G_t = {A_S(fv)/v > t} minus {M^F f > t/2} (F all
    lattices; weight uv for the first theorem, v for the second) stands in
    for the level set of the operator, and
    t (s' Lambda^s_S(f v / t, chi_G u) + uv({M^F f > t/2})) / ||f||_L1(uv)
    is the measured quantity, s = 1 + 1/(2 tau [w]_Ainf) capped at 2.
    """
    R = R or resolve(sc)
    spec, u, v, uv, f, S = R.spec, R.u, R.v, R.uv, R.f, R.S
    op = sc.operator
    B = R.inputs
    cell = spec.cell_volume
    rh_weight = u if sc.theorem == 1 else uv
    tau = op.get("tau")
    probe = reverse_holder_probe(rh_weight, 1.0 if tau is None else float(tau))
    tau = probe.tau_min if tau is None else float(tau)
    ainf_w = probe.ainf
    s = min(2.0, 1.0 + 1.0 / (2.0 * tau * ainf_w)) if math.isfinite(tau) else 1.0 + 1e-6
    s_dual = s / (s - 1.0)
    theory = bnd.theorem_bound(sc.theorem, "rough", B.with_(c=1.0))
    norm_f = (f * uv).integral()
    H = sparse_operator(S, f * v).values / v.values
    wM = uv if sc.theorem == 1 else v
    Mf = dyadic_maximal(f, "all", wM)
    vol = family_volumes(S)

    def pieces(t):
        G = (H > t) & (Mf.values <= t / 2)
        lam = _lambda(S, f.values * v.values / t, G * u.values, s, vol)
        bad = float(np.sum(uv.values[Mf.values > t / 2])) * cell
        return G, lam, bad

    def value(t):
        _, lam, bad = pieces(t)
        return t * (s_dual * lam + bad) / norm_f

    scale = norm_f / uv.integral()
    sup = grid_sup(_t_values(R, scale), value)
    t = sup.t_eval
    G, lam, bad = pieces(t)
    g = G.astype(float)
    uvG = float(np.sum(uv.values[G])) * cell
    ft = f.values / t
    checks: dict[str, bool] = {}
    # factorisation <chi_G u>_{Q,s} = <chi_G>^{u^s}_{Q,s} <u>_{Q,s}
    lhs = _p_avg_family(S, g * u.values, np.ones(spec.shape), s)
    fac = _p_avg_family(S, g, u.values**s, s) * _p_avg_family(S, u.values, np.ones(spec.shape), s)
    checks["factorisation"] = bool(np.allclose(lhs, fac, rtol=1e-12, atol=1e-300))
    int_uv = family_integrals(S, uv.values)
    int_fv = family_integrals(S, ft * v.values)
    if sc.theorem == 1:
        # reverse Holder then A1: <u>_{Q,s} <= 2 <u>_Q <= 2 [u]_A1 inf u
        F1 = family_integrals(S, ft * uv.values) / int_uv
        gs = _p_avg_family(S, g, u.values**s, s)
        absorbed = 2.0 * B.a1_u * float(np.sum(F1 * gs * int_uv))
        F2 = _p_avg_family(S, g, u.values, 2 * s)
        top = lambda k, j: 2.0**-k * B.ainf_uv * (f * uv).integral() / t
        bottom = lambda k, j: B.ainf_uv * B.ap_v_u * 2.0**-j * 2.0 ** ((2 * B.p * s - 1) * k) * uvG
        summand = F1 * F2 * int_uv
    else:
        # A1 for v, then reverse Holder for uv: <chi_G uv>_{Q,s} <= 2 <chi_G>^{(uv)^s}_{Q,s} uv(Q)/|Q|
        F1 = int_fv / family_integrals(S, v.values)
        gs = _p_avg_family(S, g, uv.values**s, s)
        absorbed = 2.0 * B.a1_v * float(np.sum(F1 * gs * int_uv))
        F2 = family_integrals(S, g * uv.values) / int_uv
        top = lambda k, j: 2.0**-k * B.a1_u_v * B.ainf_v * (f * uv).integral() / t
        bottom = lambda k, j: B.ainf_uv * 2.0**-j * 2.0**k * uvG
        summand = F1 * np.sqrt(F2) * int_uv
    checks["absorption"] = lam <= absorbed * (1 + SLACK)
    strata, total = stratum_estimates(S.cubes, F1, F2, summand, top, bottom)
    direct = float(np.sum(np.where((F1 > 0) & (F2 > 0), summand, 0.0)))
    checks["strata_sum"] = _close(total, direct) if direct > 0 else total == 0
    details = {"s": s, "tau": tau, "tau_at_bound": float(probe.at_bound), "uv_G": uvG, "lambda": lam,
               "removed": bad, "t_eval": t, "absorbed": absorbed}
    return BoundReport(sc.id, sc.theorem, "rough", sup.value, theory, float(sc.cpolicy.get("c", 1.0)),
                       sup.t_star, R.constants, strata, checks, details)


def _lambda(S: SparseFamily, f_cells: np.ndarray, g_cells: np.ndarray, s: float, vol: np.ndarray) -> float:
    af = family_integrals(S, np.abs(f_cells)) / vol
    ag = (family_integrals(S, np.abs(g_cells) ** s) / vol) ** (1.0 / s)
    return float(np.sum(af * ag * vol))


RUNNERS = {"cz": endpoint_ratio_cz, "commutator": endpoint_modular_commutator, "rough": endpoint_ratio_rough}


def run_scenario(sc: Scenario) -> BoundReport:
    rep = RUNNERS[sc.operator["kind"]](sc)
    if sc.sensitivity:
        rep.details.update(eps_sensitivity(sc))
    return rep


def eps_sensitivity(sc: Scenario) -> dict[str, float]:
    """Measured value with the power-weight floor moved to 2^-L and 2^-3L."""
    L = sc.grid.L
    out = {}
    for name, eps in (("measured_eps_L", 2.0**-L), ("measured_eps_3L", 2.0 ** (-3 * L))):
        alt = Scenario(**{**sc.__dict__, "sensitivity": False})
        for key in ("u", "v"):
            recipe = getattr(sc, key)
            if recipe.get("kind") == "power":
                setattr(alt, key, {**recipe, "eps": eps})
        out[name] = RUNNERS[sc.operator["kind"]](alt).measured
    return out


# ---------------------------------------------------------------------------
# configuration files

@dataclass
class Config:
    grid: GridSpec
    scenarios: list[Scenario]


GRID_KEY = '"grid"'
SCENARIOS_KEY = '"scenarios"'


def _line_of(text: str, needle: str) -> int:
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return 0


def parse_config(text: str) -> Config:
    """Parse and validate a JSON configuration, reporting line numbers on errors."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ConfigError("line 1: configuration must be a JSON object")
    try:
        g = d.get("grid", {"n": 1, "L": 6})
        grid = GridSpec(int(g["n"]), int(g["L"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"line {_line_of(text, GRID_KEY)}: invalid grid ({exc})") from None
    scs = d.get("scenarios", [])
    if not isinstance(scs, list):
        raise ConfigError(f"line {_line_of(text, SCENARIOS_KEY)}: scenarios must be a list")
    out, seen = [], set()
    for i, s in enumerate(scs):
        sid = s.get("id", f"#{i}") if isinstance(s, dict) else f"#{i}"
        try:
            sc = Scenario.from_dict(s, grid)
        except (ConfigError, GridError, TypeError, ValueError, KeyError) as exc:
            line = _line_of(text, f'"{sid}"') if isinstance(sid, str) else 0
            msg = str(exc) if isinstance(exc, ConfigError) else f"scenario {sid!r}: {exc}"
            raise ConfigError(f"line {line}: {msg}") from None
        if sc.id in seen:
            raise ConfigError(f"line {_line_of(text, sc.id)}: duplicate scenario id {sc.id!r}")
        seen.add(sc.id)
        out.append(sc)
    return Config(grid, out)


def load_config(path: str) -> Config:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("THREADS", "1")))
    except ValueError:
        return 1


def run(config: Config | str) -> list[BoundReport]:
    """Run every scenario and apply the free-constant policy.

    ``fit`` groups take c as the largest measured/theoretical ratio over
    their ``calibrate`` members; the value is then frozen for the
    ``holdout`` members.
    """
    if isinstance(config, str):
        config = load_config(config)
    scs = config.scenarios
    n = _threads()
    if n > 1 and len(scs) > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            reports = list(ex.map(run_scenario, scs))
    else:
        reports = [run_scenario(sc) for sc in scs]
    fitted = fit_constants(scs, reports)
    for sc, rep in zip(scs, reports):
        if sc.cpolicy.get("kind") == "fit":
            rep.c_used = fitted[sc.cpolicy.get("group", "default")]
    return reports


def fit_constants(scs: Sequence[Scenario], reports: Sequence[BoundReport]) -> dict[str, float]:
    groups: dict[str, list[float]] = {}
    for sc, rep in zip(scs, reports):
        pol = sc.cpolicy
        if pol.get("kind") != "fit":
            continue
        grp = pol.get("group", "default")
        groups.setdefault(grp, [])
        if pol.get("role", "holdout") == "calibrate":
            groups[grp].append(rep.measured / rep.theoretical)
    out = {}
    for grp, ratios in groups.items():
        if not ratios:
            raise ConfigError(f"fit group {grp!r} has no calibration scenarios")
        out[grp] = max(ratios)
    return out


def write_run(reports: Sequence[BoundReport], out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "reports.json"), "w", encoding="utf-8") as fh:
        json.dump([r.to_json() for r in reports], fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "bounds.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(reports_to_csv(reports))


def read_run(run_dir: str) -> list[BoundReport]:
    with open(os.path.join(run_dir, "reports.json"), encoding="utf-8") as fh:
        return [BoundReport.from_json(d) for d in json.load(fh)]


def smoke_config_path() -> str:
    return os.path.join(os.path.dirname(__file__), "data", "smoke.json")
