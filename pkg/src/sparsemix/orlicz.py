"""Young functions, Luxemburg norms and the Orlicz maximal operator.

Norms over many cubes are computed row-wise: each cube is one row of a
gathered (cubes x cells) array and all rows are bisected together.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .grid import (
    CubeFamily,
    DyadicCube,
    FamilyLike,
    GridError,
    GridFunction,
    as_families,
    expand,
    level_blocks,
    level_cube,
    level_shape,
)
from .weights import ainf_fujii, ap_relative

EXP_GUARD = 700.0
REL_TOL = 1e-12
MAX_ITER = 200
SLACK = 1e-9


class ConvergenceError(RuntimeError):
    """Bisection for a Luxemburg norm failed to converge."""


def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


class YoungFunction:
    """Base class: a convex nondecreasing gauge with A(0) = 0."""

    superlinear = True

    def __call__(self, t):
        raise NotImplementedError

    def inverse(self, y: float) -> float:
        """The t >= 0 with A(t) = y."""
        if y <= 0:
            return 0.0
        hi = 1.0
        while self(hi) < y:
            hi *= 2.0
        return brentq(lambda t: float(self(t)) - y, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)

    @property
    def kappa(self) -> Optional[float]:
        """Constant in A(st) <= kappa A(s) A(t), or None when there is none."""
        return None

    def text(self) -> str:
        raise NotImplementedError

    def __str__(self):
        return self.text()


@dataclass(frozen=True, eq=True)
class Power(YoungFunction):
    p: float

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"power exponent must be >= 1, got {self.p}")

    @property
    def superlinear(self):
        return self.p > 1

    def __call__(self, t):
        return np.power(t, self.p)

    def inverse(self, y):
        return float(y) ** (1.0 / self.p)

    @property
    def kappa(self):
        return 1.0

    def text(self):
        return f"pow:{_fmt(self.p)}"


@dataclass(frozen=True, eq=True)
class LLogL(YoungFunction):
    """t (1 + log+ t)^rho."""

    rho: float

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")

    @property
    def superlinear(self):
        return self.rho > 0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return t * (1.0 + np.log(np.maximum(t, 1.0))) ** self.rho

    @property
    def kappa(self):
        # (1 + log s + log t) <= (1 + log s)(1 + log t) for s, t >= 1,
        # and the remaining cases only drop logarithms
        return 1.0

    def text(self):
        return f"llogl:{_fmt(self.rho)}"


@dataclass(frozen=True, eq=True)
class ExpLr(YoungFunction):
    """exp(t^r) - 1, with exp overflow replaced by +inf."""

    r: float

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError(f"r must be positive, got {self.r}")

    def __call__(self, t):
        tr = np.power(np.asarray(t, dtype=float), self.r)
        with np.errstate(over="ignore"):
            return np.where(tr > EXP_GUARD, np.inf, np.expm1(np.minimum(tr, EXP_GUARD)))

    def inverse(self, y):
        return math.log1p(y) ** (1.0 / self.r)

    def text(self):
        return f"explr:{_fmt(self.r)}"


@dataclass(frozen=True, eq=True)
class Scaled(YoungFunction):
    """c A(t)."""

    c: float
    inner: YoungFunction

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"scale must be positive, got {self.c}")

    @property
    def superlinear(self):
        return self.inner.superlinear

    def __call__(self, t):
        return self.c * self.inner(t)

    def inverse(self, y):
        return self.inner.inverse(y / self.c)

    @property
    def kappa(self):
        k = self.inner.kappa
        return None if k is None else k / self.c

    def text(self):
        return f"scaled:{_fmt(self.c)}:{self.inner.text()}"


@dataclass(frozen=True, eq=True)
class Powered(YoungFunction):
    """A(t)^p."""

    p: float
    inner: YoungFunction

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"power must be >= 1, got {self.p}")

    @property
    def superlinear(self):
        return self.p > 1 or self.inner.superlinear

    def __call__(self, t):
        return np.power(self.inner(t), self.p)

    def inverse(self, y):
        return self.inner.inverse(float(y) ** (1.0 / self.p))

    @property
    def kappa(self):
        k = self.inner.kappa
        return None if k is None else k**self.p

    def text(self):
        return f"pow:{_fmt(self.p)}:{self.inner.text()}"


def phi_rho(rho: float) -> LLogL:
    return LLogL(rho)


def parse_young(text: str) -> YoungFunction:
    """Inverse of ``YoungFunction.text``."""
    parts = text.strip().split(":")

    def take(i):
        if i >= len(parts):
            raise ValueError(f"truncated Young function spec {text!r}")
        kind = parts[i]
        try:
            if kind == "pow":
                p = float(parts[i + 1])
                if i + 2 < len(parts):
                    inner, j = take(i + 2)
                    return Powered(p, inner), j
                return Power(p), i + 2
            if kind == "llogl":
                return LLogL(float(parts[i + 1])), i + 2
            if kind == "explr":
                return ExpLr(float(parts[i + 1])), i + 2
            if kind == "scaled":
                c = float(parts[i + 1])
                inner, j = take(i + 2)
                return Scaled(c, inner), j
        except IndexError:
            raise ValueError(f"truncated Young function spec {text!r}") from None
        raise ValueError(f"unknown Young function kind {kind!r} in {text!r}")

    A, end = take(0)
    if end != len(parts):
        raise ValueError(f"trailing tokens in Young function spec {text!r}")
    return A


def convexity_check(A: YoungFunction, lo: float = 1e-3, hi: float = 1e3, npts: int = 64) -> bool:
    """Discrete check that A(0) = 0 and A is nondecreasing and convex on a log grid."""
    t = np.geomspace(lo, hi, npts)
    a = np.asarray(A(t), dtype=float)
    a = a[np.isfinite(a)]
    t = t[: a.size]
    if float(A(0.0)) != 0.0 or np.any(np.diff(a) < 0):
        return False
    slopes = np.diff(a) / np.diff(t)
    return bool(np.all(np.diff(slopes) >= -1e-9 * np.abs(slopes[1:]).clip(1)))


def measured_kappa(A: YoungFunction, lo: float = 1e-3, hi: float = 1e6, npts: int = 64) -> float:
    """sup of A(st) / (A(s) A(t)) over a log-spaced grid of (s, t)."""
    s = np.geomspace(lo, hi, npts)
    S, T = np.meshgrid(s, s, indexing="ij")
    return float(np.max(A(S * T) / (A(S) * A(T))))


# ---------------------------------------------------------------------------
# Luxemburg norms

def _modular(F: np.ndarray, W: np.ndarray, A: YoungFunction, lam: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        vals = np.asarray(A(F / lam[:, None]), dtype=float)
        vals = np.where(W > 0, vals, 0.0)
        return np.sum(vals * W, axis=1)


def luxemburg_rows(F: np.ndarray, W: np.ndarray, A: YoungFunction) -> np.ndarray:
    """Luxemburg norm of each row of |F| against the row probability weights W.

    Rows of W must sum to 1 over their support (zero weight marks padding).
    The returned lambda always satisfies modular(lambda) <= 1.
    """
    F = np.abs(np.asarray(F, dtype=float))
    W = np.asarray(W, dtype=float)
    a1 = A.inverse(1.0)
    fmax = np.max(np.where(W > 0, F, 0.0), axis=1)
    favg = np.sum(F * W, axis=1)
    out = np.zeros(F.shape[0])
    live = fmax > 0
    if not live.any():
        return out
    F, W = F[live], W[live]
    # A(max/lam) <= 1 makes hi feasible; Jensen makes lo infeasible or exact
    hi = fmax[live] / a1
    lo = favg[live] / a1
    for _ in range(MAX_ITER):
        bad = _modular(F, W, A, hi) > 1.0
        if not bad.any():
            break
        hi = np.where(bad, 2.0 * hi, hi)
    for _ in range(MAX_ITER):
        # only needed without convexity (exp L^r with r < 1) or at exact roots
        ok = _modular(F, W, A, lo) <= 1.0
        if not ok.any():
            break
        lo = np.where(ok, 0.5 * lo, lo)
    for it in range(MAX_ITER):
        if np.all(hi - lo <= REL_TOL * hi):
            break
        mid = 0.5 * (lo + hi)
        feas = _modular(F, W, A, mid) <= 1.0
        hi = np.where(feas, mid, hi)
        lo = np.where(feas, lo, mid)
    else:
        raise ConvergenceError(f"Luxemburg bisection did not converge for {A.text()}")
    out[live] = hi
    return out


@dataclass(frozen=True)
class OrliczAvg:
    """Luxemburg average of a function over a cube."""

    value: float
    cube: DyadicCube
    young: str
    weight: str


def _cube_rows(f: GridFunction, w: Optional[GridFunction], Q: DyadicCube):
    Q.validate(f.spec)
    sl = Q.slices(f.spec)
    F = f.values[sl].ravel()[None, :]
    W = np.ones_like(F) if w is None else w.values[sl].ravel()[None, :]
    return F, W / W.sum()


def luxemburg_norm(f: GridFunction, A: YoungFunction, w: Optional[GridFunction] = None,
                   Q: Optional[DyadicCube] = None) -> OrliczAvg:
    """inf{lam > 0 : (1/w(Q)) * integral over Q of A(|f|/lam) w <= 1}."""
    Q = Q if Q is not None else DyadicCube(0, (0,) * f.spec.n)
    if w is not None and not w.is_weight:
        raise GridError("weight must be strictly positive")
    F, W = _cube_rows(f, w, Q)
    val = float(luxemburg_rows(F, W, A)[0])
    return OrliczAvg(val, Q, A.text(), "lebesgue" if w is None else "w")


def modular(f: GridFunction, A: YoungFunction, lam: float, w: Optional[GridFunction] = None,
            Q: Optional[DyadicCube] = None) -> float:
    """(1/w(Q)) * integral over Q of A(|f|/lam) w."""
    Q = Q if Q is not None else DyadicCube(0, (0,) * f.spec.n)
    F, W = _cube_rows(f, w, Q)
    return float(_modular(np.abs(F), W, A, np.array([lam]))[0])


def kr_norm(f: GridFunction, A: YoungFunction, w: Optional[GridFunction] = None,
            Q: Optional[DyadicCube] = None, npts: int = 256) -> float:
    """inf over mu > 0 of mu + mu * (1/w(Q)) * integral over Q of A(|f|/mu) w.

    The objective is convex in mu (a perspective function), so a log-grid
    scan around the Luxemburg norm followed by ternary search is enough.
    """
    lux = luxemburg_norm(f, A, w, Q).value
    if lux == 0:
        return 0.0
    Q = Q if Q is not None else DyadicCube(0, (0,) * f.spec.n)
    F, W = _cube_rows(f, w, Q)
    F = np.abs(F)

    def obj(mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        m = _modular(np.repeat(F, mu.size, 0), np.repeat(W, mu.size, 0), A, mu)
        return mu + mu * m

    mus = np.union1d(np.geomspace(1e-6, 1e6, npts) * lux, [lux])
    vals = obj(mus)
    i = int(np.argmin(vals))
    a, b = mus[max(i - 1, 0)], mus[min(i + 1, mus.size - 1)]
    best = float(vals[i])
    for _ in range(100):
        m1, m2 = a + (b - a) / 3, b - (b - a) / 3
        o1, o2 = obj([m1, m2])
        if o1 <= o2:
            b = m2
        else:
            a = m1
        if b - a <= 1e-13 * b:
            break
    return min(best, float(obj([0.5 * (a + b)])[0]))


# ---------------------------------------------------------------------------
# generalised Holder inequality

def _is_pair(A: YoungFunction, B: YoungFunction) -> bool:
    if isinstance(A, Power) and isinstance(B, Power) and A.p > 1 and B.p > 1:
        return abs(1 / A.p + 1 / B.p - 1) < 1e-12
    if isinstance(A, LLogL) and isinstance(B, ExpLr):
        return abs(A.rho * B.r - 1) < 1e-12
    return False


@dataclass(frozen=True)
class InequalityCheck:
    lhs: float
    rhs: float
    holds: bool


def holder_check(f: GridFunction, g: GridFunction, A: YoungFunction, Abar: YoungFunction,
                 w: Optional[GridFunction] = None, Q: Optional[DyadicCube] = None) -> InequalityCheck:
    """(1/w(Q)) * integral of |fg| w <= 2 ||f||_A ||g||_Abar for a registered pair."""
    if not _is_pair(A, Abar) and not _is_pair(Abar, A):
        raise ValueError(f"({A.text()}, {Abar.text()}) is not a registered complementary pair")
    Q = Q if Q is not None else DyadicCube(0, (0,) * f.spec.n)
    F, W = _cube_rows(f * g, w, Q)
    lhs = float(np.sum(np.abs(F) * W))
    rhs = 2.0 * luxemburg_norm(f, A, w, Q).value * luxemburg_norm(g, Abar, w, Q).value
    return InequalityCheck(lhs, rhs, lhs <= rhs * (1 + SLACK))


# ---------------------------------------------------------------------------
# per-level norms over whole families

def level_norms(f_cells: np.ndarray, w_cells: Optional[np.ndarray], A: YoungFunction,
                spec, lattice: int, level: int, center: bool = False) -> np.ndarray:
    """Luxemburg norm on every cube of one level, as a level-shaped array.

    With ``center`` the unweighted cube average is subtracted first.
    Positions that are not cubes hold NaN.
    """
    blk = level_blocks(spec, lattice, level)
    F = np.asarray(f_cells, float).ravel()[blk.index]
    W = np.ones_like(F) if w_cells is None else np.asarray(w_cells, float).ravel()[blk.index]
    W = np.where(blk.mask, W, 0.0)
    W = W / W.sum(axis=1, keepdims=True)
    if center:
        mean = np.sum(np.where(blk.mask, F, 0.0), axis=1) / blk.mask.sum(axis=1)
        F = F - mean[:, None]
    vals = luxemburg_rows(F, W, A)
    out = np.full(level_shape(spec, lattice, level), np.nan)
    out[tuple(blk.positions.T)] = vals
    return out


def orlicz_maximal(f: GridFunction, A: YoungFunction, w: Optional[GridFunction] = None,
                   family: FamilyLike = None) -> GridFunction:
    """Cellwise max of ||f||_{A(w),Q} over family cubes containing the cell."""
    spec = f.spec
    fams = as_families(spec, family)
    wv = None if w is None else w.values
    out = np.zeros(spec.shape)
    for F in fams:
        for level, mask in F.masks.items():
            norms = level_norms(f.values, wv, A, spec, F.lattice, level)
            out = np.maximum(out, expand(np.where(mask, norms, 0.0), spec, F.lattice, level))
    return GridFunction(spec, out, nonneg=True)


def _family_max(fams: list[CubeFamily], fn) -> tuple[float, Optional[DyadicCube]]:
    best, cube = -np.inf, None
    for F in fams:
        for level, mask in F.masks.items():
            vals = np.where(mask, fn(F.lattice, level), -np.inf)
            pos = np.unravel_index(int(np.argmax(vals)), vals.shape)
            if vals[pos] > best:
                best, cube = float(vals[pos]), level_cube(F.spec, F.lattice, level, pos)
    return best, cube


def osc_norm(b: GridFunction, r: float, w: Optional[GridFunction] = None, family: FamilyLike = None) -> float:
    """sup over Q of ||b - b_Q||_{exp L^r(w),Q}, with b_Q the Lebesgue average."""
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    spec = b.spec
    A = ExpLr(r)
    wv = None if w is None else w.values
    val, _ = _family_max(as_families(spec, family),
                         lambda j, l: level_norms(b.values, wv, A, spec, j, l, center=True))
    return val


@dataclass(frozen=True)
class OscLemmaCheck:
    lhs: float
    rhs_shape: float
    ratio: float


def osc_lemma_check(b: GridFunction, r: float, j: float, w: GridFunction,
                    Q: Optional[DyadicCube] = None, family: FamilyLike = None) -> OscLemmaCheck:
    """Compare || |b - b_Q|^j ||_{exp L^(r/j)(w),Q} with [w]_Ainf^(j/r) ||b||_Osc^j.

    The lemma only promises a bounded ratio; the ratio is returned.
    """
    if j <= 0:
        raise ValueError(f"j must be positive, got {j}")
    spec = b.spec
    Q = Q if Q is not None else DyadicCube(0, (0,) * spec.n)
    Q.validate(spec)
    bq = float(np.mean(b.values[Q.slices(spec)]))
    g = GridFunction(spec, np.abs(b.values - bq) ** j, nonneg=True)
    lhs = luxemburg_norm(g, ExpLr(r / j), w, Q).value
    rhs = ainf_fujii(w, family).value ** (j / r) * osc_norm(b, r, None, family) ** j
    ratio = 0.0 if lhs == 0 else lhs / rhs
    return OscLemmaCheck(lhs, rhs, ratio)


@dataclass(frozen=True)
class ContAvgCheck:
    lhs: float
    rhs: float
    holds: bool
    cube: DyadicCube
    constant: float
    checked: int


def cont_avg_check(f: GridFunction, Phi: YoungFunction, p: float, u: GridFunction, v: GridFunction,
                   Q: Optional[DyadicCube] = None, family: FamilyLike = None) -> ContAvgCheck:
    """||f||_{Phi(u),Q} <= ||f||_{c Phi^p (uv),Q} with c = [v]_Ap(u).

    With Q None every cube of the family is checked and the cube with the
    largest lhs/rhs ratio is reported.
    """
    spec = f.spec
    fams = as_families(spec, family)
    c = ap_relative(v, u, p, fams).value
    B = Scaled(c, Powered(p, Phi))
    uv = (u * v).values
    if Q is not None:
        lhs = luxemburg_norm(f, Phi, u, Q).value
        rhs = luxemburg_norm(f, B, u * v, Q).value
        return ContAvgCheck(lhs, rhs, lhs <= rhs * (1 + SLACK), Q, c, 1)
    worst = None
    count = 0
    for F in fams:
        for level, mask in F.masks.items():
            lhs = level_norms(f.values, u.values, Phi, spec, F.lattice, level)
            rhs = level_norms(f.values, uv, B, spec, F.lattice, level)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(mask & (lhs > 0), lhs / rhs, -np.inf)
            count += int(mask.sum())
            pos = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
            if worst is None or ratio[pos] > worst[0]:
                worst = (float(ratio[pos]), float(lhs[pos]), float(rhs[pos]),
                         level_cube(spec, F.lattice, level, pos))
    _, lhs, rhs, cube = worst
    if not np.isfinite(worst[0]):
        lhs = rhs = 0.0
    return ContAvgCheck(lhs, rhs, lhs <= rhs * (1 + SLACK), cube, c, count)
