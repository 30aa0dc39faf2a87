"""Seeded lemma suites with exact constants.

Each suite draws random instances from a seeded generator, runs one of
the lemma checks on every instance and counts failures.  Instance counts
are parameters so the same suites serve quick smoke runs and the full
acceptance sizes.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bounds import DivergenceError, DoubleSumParams, double_sum
from .grid import DyadicCube, GridFunction, GridSpec
from .orlicz import ExpLr, LLogL, Power, cont_avg_check, holder_check, kr_norm, luxemburg_norm
from .sparse import (
    SparseError,
    SparseFamily,
    cz_stopping_family,
    disjointify,
    dyadic_bin,
    orlicz_maximal_weaktype_check,
    union_mass_check,
)
from .weights import reverse_holder_probe

SLACK = 1e-9


@dataclass
class SuiteResult:
    name: str
    trials: int
    failures: int
    seconds: float
    worst: float = 0.0
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.failures == 0 and self.trials > 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: {self.trials} checks, {self.failures} failures, "
                f"worst ratio {self.worst:.6g}, {self.seconds:.2f}s")


def _timed(name: str, body: Callable[[], tuple[int, int, float, dict]]) -> SuiteResult:
    t0 = time.perf_counter()
    trials, failures, worst, notes = body()
    return SuiteResult(name, trials, failures, time.perf_counter() - t0, worst, notes)


# ---------------------------------------------------------------------------
# random instances

def random_weight(spec: GridSpec, rng: np.random.Generator) -> GridFunction:
    """One of: singular power, log-normal cells, dyadic martingale, constant."""
    kind = int(rng.integers(4))
    if kind == 0:
        a = float(rng.uniform(-0.9 * spec.n, 0.0))
        r = np.sqrt(sum(x**2 for x in spec.midpoints()))
        return GridFunction(spec, np.maximum(r, 2.0 ** (-2 * spec.L)) ** a, nonneg=True)
    if kind == 1:
        return GridFunction(spec, rng.lognormal(0.0, 1.0, spec.shape), nonneg=True)
    if kind == 2:
        from .experiments import random_martingale

        return random_martingale(spec, int(rng.integers(1 << 30)), spec.L, float(rng.uniform(0.1, 0.9)))
    return GridFunction.constant(spec, float(rng.uniform(0.5, 2.0)))


def random_function(spec: GridSpec, rng: np.random.Generator, sparsity: Optional[float] = None) -> GridFunction:
    """Nonnegative cell values, exponential heights on a random support."""
    p = float(rng.uniform(0.05, 1.0)) if sparsity is None else sparsity
    vals = rng.exponential(1.0, spec.shape) * (rng.random(spec.shape) < p)
    if not vals.any():
        vals.flat[int(rng.integers(vals.size))] = 1.0
    return GridFunction(spec, vals * float(np.exp(rng.normal(0, 2))), nonneg=True)


def random_family(spec: GridSpec, rng: np.random.Generator, w: Optional[GridFunction] = None) -> SparseFamily:
    """A stopping family of a random function, or of f w when a weight is given."""
    f = random_function(spec, rng)
    if w is not None:
        f = f * w
    return cz_stopping_family(f, float(rng.uniform(1.5, 6.0)), strict=bool(rng.integers(2)))


def random_cube(spec: GridSpec, rng: np.random.Generator) -> DyadicCube:
    level = int(rng.integers(spec.L + 1))
    return DyadicCube(level, tuple(int(i) for i in rng.integers(0, 2**level, size=spec.n)))


# ---------------------------------------------------------------------------
# suites

def union_mass_suite(seed: int = 0, counts: tuple[tuple[int, int, int], ...] = ((1, 6, 200), (2, 4, 50))) -> SuiteResult:
    """sum of w(Q) <= (1/eta) [w]_Ainf w(union) on random (family, weight) pairs."""

    def body():
        rng = np.random.default_rng(seed)
        trials = failures = 0
        worst = 0.0
        for n, L, count in counts:
            spec = GridSpec(n, L)
            for _ in range(count):
                w = random_weight(spec, rng)
                S = random_family(spec, rng)
                chk = union_mass_check(S, w)
                trials += 1
                failures += not chk.holds
                worst = max(worst, chk.lhs / chk.rhs)
        return trials, failures, worst, {}

    return _timed("union mass (UnQ)", body)


WEAK_TYPE_FUNCTIONS = (Power(1.0), LLogL(0.5), LLogL(1.0))


def maximal_weaktype_suite(seed: int = 0, instances: int = 100, thresholds: int = 20, L: int = 6) -> SuiteResult:
    """w({M_A(w) f > t}) <= integral of A(|f|/t) w on one full lattice, exactly."""

    def body():
        rng = np.random.default_rng(seed)
        spec = GridSpec(1, L)
        trials = failures = 0
        worst = 0.0
        for _ in range(instances):
            w = random_weight(spec, rng)
            f = random_function(spec, rng)
            scale = float(f.values.max())
            for t in np.geomspace(1e-3, 2.0, thresholds) * scale:
                for A in WEAK_TYPE_FUNCTIONS:
                    chk = orlicz_maximal_weaktype_check(f, A, w, [0], float(t))
                    trials += 1
                    failures += not chk.holds
                    if chk.rhs > 0:
                        worst = max(worst, chk.lhs / chk.rhs)
        return trials, failures, worst, {}

    return _timed("Orlicz maximal weak type (MUnDyad)", body)


def _random_pair(rng: np.random.Generator):
    if rng.integers(2):
        p = float(rng.uniform(1.1, 6.0))
        return Power(p), Power(p / (p - 1))
    r = float(rng.uniform(0.5, 3.0))
    return LLogL(1.0 / r), ExpLr(r)


def holder_suite(seed: int = 0, instances: int = 500, L: int = 5) -> SuiteResult:
    """(1/w(Q)) * integral of |fg| w <= 2 ||f||_A ||g||_Abar for complementary pairs."""

    def body():
        rng = np.random.default_rng(seed)
        spec = GridSpec(1, L)
        failures = 0
        worst = 0.0
        for _ in range(instances):
            A, B = _random_pair(rng)
            w = random_weight(spec, rng)
            f = random_function(spec, rng)
            g = random_function(spec, rng)
            chk = holder_check(f, g, A, B, w, random_cube(spec, rng))
            failures += not chk.holds
            if chk.rhs > 0:
                worst = max(worst, chk.lhs / chk.rhs)
        return instances, failures, worst, {}

    return _timed("generalised Holder", body)


KR_FUNCTIONS = (Power(1.0), Power(2.0), LLogL(0.5), LLogL(1.0), ExpLr(1.0), ExpLr(2.0))


def kr_suite(seed: int = 0, instances: int = 500, L: int = 5) -> SuiteResult:
    """luxemburg <= kr <= 2 luxemburg."""

    def body():
        rng = np.random.default_rng(seed)
        spec = GridSpec(1, L)
        failures = 0
        worst = 0.0
        for _ in range(instances):
            A = KR_FUNCTIONS[int(rng.integers(len(KR_FUNCTIONS)))]
            w = random_weight(spec, rng)
            f = random_function(spec, rng)
            Q = random_cube(spec, rng)
            lux = luxemburg_norm(f, A, w, Q).value
            kr = kr_norm(f, A, w, Q)
            ok = lux * (1 - SLACK) <= kr <= 2 * lux * (1 + SLACK)
            failures += not ok
            if lux > 0:
                worst = max(worst, kr / lux)
        return instances, failures, worst, {}

    return _timed("Krasnoselskii-Rutickii equivalence", body)


CONT_AVG_CASES = ((Power(1.0), 2.0), (LLogL(0.5), 2.0), (Power(1.0), 3.0))


def cont_avg_weights(spec: GridSpec) -> list[tuple[str, GridFunction, GridFunction]]:
    from .experiments import power_weight, random_martingale

    return [
        ("power", power_weight(spec, -0.25), power_weight(spec, -0.25)),
        ("flat-u", GridFunction.constant(spec, 1.0), power_weight(spec, -0.5)),
        ("martingale", random_martingale(spec, 3, spec.L, 0.5), random_martingale(spec, 4, spec.L, 0.6)),
    ]


def cont_avg_suite(seed: int = 0, functions: int = 4, L: int = 6) -> SuiteResult:
    """||f||_{Phi(u),Q} <= ||f||_{[v]_Ap(u) Phi^p (uv),Q} on every cube of every lattice."""

    def body():
        rng = np.random.default_rng(seed)
        spec = GridSpec(1, L)
        trials = failures = 0
        worst = 0.0
        for _, u, v in cont_avg_weights(spec):
            for Phi, p in CONT_AVG_CASES:
                for _ in range(functions):
                    f = random_function(spec, rng)
                    chk = cont_avg_check(f, Phi, p, u, v, family="all")
                    trials += chk.checked
                    failures += not chk.holds
                    if chk.rhs > 0:
                        worst = max(worst, chk.lhs / chk.rhs)
        return trials, failures, worst, {}

    return _timed("continuity of averages (ContAvg)", body)


def reverse_holder_suite(seed: int = 0, instances: int = 20, L: int = 6) -> SuiteResult:
    """At the reported minimal tau the reverse Holder bound holds; just below it, it fails."""

    def body():
        rng = np.random.default_rng(seed)
        spec = GridSpec(1, L)
        failures = 0
        for _ in range(instances):
            w = random_weight(spec, rng)
            probe = reverse_holder_probe(w, 1.0)
            if not math.isfinite(probe.tau_min):
                failures += 1
                continue
            ok = reverse_holder_probe(w, probe.tau_min).holds
            if not probe.at_bound:
                ok &= not reverse_holder_probe(w, probe.tau_min / 1.01).holds
            failures += not ok
        return instances, failures, 0.0, {}

    return _timed("reverse Holder at minimal tau", body)


def double_sum_suite(seed: int = 0, instances: int = 200) -> SuiteResult:
    """Tail <= beta/(2 gamma) on random parameters; bounded normalised head across gamma2."""

    def body():
        rng = np.random.default_rng(seed)
        failures = 0
        worst = 0.0
        trials = 0
        for _ in range(instances):
            P = DoubleSumParams(
                gamma1=float(np.exp(rng.uniform(0.1, 8))), gamma2=float(np.exp(rng.uniform(0.1, 12))),
                beta=float(rng.uniform(0, 4)), delta=float(rng.uniform(0, 2)),
                rho1=float(rng.uniform(0, 2)), rho2=float(rng.uniform(0, 2)),
                gamma=float(np.exp(rng.uniform(0, 4))))
            try:
                res = double_sum(P)
            except DivergenceError:
                failures += 1
                continue
            trials += 1
            failures += not res.tail_ok
            if res.tail_bound > 0:
                worst = max(worst, res.tail / res.tail_bound)
        spreads = head_spreads()
        bad = [k for k, s in spreads.items() if not s < 10]
        failures += len(bad)
        trials += len(spreads)
        return trials, failures, worst, {"max_head_spread": max(spreads.values())}

    return _timed("double sum", body)


HEAD_GAMMA2 = (2.0, 2.0**4, 2.0**8, 2.0**16)


def head_spreads(gamma1: float = 2.0, beta: float = 1.0) -> dict[tuple, float]:
    """max/min of the normalised head over gamma2 for a few fixed (rho1, rho2, delta, gamma)."""
    out = {}
    for rho1 in (0.0, 0.5, 1.0):
        for rho2 in (0.0, 1.0):
            for delta in (0.0, 1.0):
                for gamma in (1.0, 4.0):
                    heads = [double_sum(DoubleSumParams(gamma1, g2, beta, delta, rho1, rho2, gamma)).head_constant
                             for g2 in HEAD_GAMMA2]
                    out[(rho1, rho2, delta, gamma)] = max(heads) / min(heads)
    return out


DISEQ_FUNCTIONS = (Power(1.0), LLogL(0.5), LLogL(1.0))
DISEQ_NU = (1, 2, 4)


def disjointify_suite(seed: int = 0, instances: int = 40, L: int = 7) -> SuiteResult:
    """Overlap of the disjointified sets <= nu, and the norm inequality on decaying cubes.

    Each generated family is split into strata by the dyadic bin of its
    Luxemburg averages; every nonempty stratum is disjointified for each nu.
    """

    def body():
        rng = np.random.default_rng(seed)
        spec = GridSpec(1, L)
        trials = failures = decaying = 0
        worst = 0.0
        for _ in range(instances):
            w = random_weight(spec, rng)
            S = random_family(spec, rng)
            f = random_function(spec, rng)
            A = DISEQ_FUNCTIONS[int(rng.integers(len(DISEQ_FUNCTIONS)))]
            strata: dict[int, list[DyadicCube]] = {}
            scale = max(luxemburg_norm(f, A, w, Q).value for Q in S.cubes)
            if scale == 0:
                continue
            g = f / (2 * scale)
            for Q in S.cubes:
                x = luxemburg_norm(g, A, w, Q).value
                if x > 0:
                    strata.setdefault(dyadic_bin(x), []).append(Q)
            for j, cubes in strata.items():
                for nu in DISEQ_NU:
                    try:
                        rep = disjointify(cubes, g, A, w, j, nu)
                    except SparseError:
                        # stratum membership decided by bisection at the edge
                        continue
                    trials += 1
                    ok = rep.max_overlap <= nu and rep.inequality_ok
                    failures += not ok
                    for row in rep.rows:
                        if row.holds is not None:
                            decaying += 1
                            if row.rhs > 0:
                                worst = max(worst, row.lhs / row.rhs)
        return trials, failures, worst, {"decaying_cubes": decaying}

    return _timed("disjointification (DisEQ)", body)


SUITES = {
    "unq": union_mass_suite,
    "mundyad": maximal_weaktype_suite,
    "holder": holder_suite,
    "kr": kr_suite,
    "contavg": cont_avg_suite,
    "reverse-holder": reverse_holder_suite,
    "double-sum": double_sum_suite,
    "diseq": disjointify_suite,
}


def lemma_battery(seed: int = 0, level: Optional[int] = None, full: bool = False) -> list[SuiteResult]:
    """Run every suite.  ``full`` uses the acceptance instance counts;
    otherwise a reduced run for quick checks.  ``level`` overrides the grid
    level of the one-dimensional suites."""
    if full:
        kw: dict[str, dict] = {k: {} for k in SUITES}
    else:
        kw = {
            "unq": {"counts": ((1, 6, 40), (2, 4, 10))},
            "mundyad": {"instances": 10, "thresholds": 8},
            "holder": {"instances": 60},
            "kr": {"instances": 60},
            "contavg": {"functions": 1},
            "reverse-holder": {"instances": 6},
            "double-sum": {"instances": 40},
            "diseq": {"instances": 10},
        }
    if level is not None:
        if level < 1:
            raise ValueError("level must be >= 1")
        for name in ("mundyad", "holder", "kr", "contavg", "reverse-holder", "diseq"):
            kw[name]["L"] = level
        kw["unq"]["counts"] = ((1, level, kw["unq"].get("counts", ((1, 6, 200),))[0][2]),)
    return [SUITES[name](seed=seed, **kw[name]) for name in SUITES]
