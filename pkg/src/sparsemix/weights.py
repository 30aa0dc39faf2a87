"""Dyadic maximal operators and weight constants.

Every supremum over cubes is an exact maximum over a finite family of
cubes, computed one level at a time.  Ties are broken by the smallest
(level, index, lattice).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import (
    CubeFamily,
    DyadicCube,
    FamilyLike,
    GridError,
    GridFunction,
    as_families,
    block_reduce,
    describe_families,
    expand,
    level_cube,
    level_sums,
    level_volumes,
)

TOL = 1e-12


@dataclass(frozen=True)
class ConstantReport:
    """Value of a weight constant and the cube where it is attained."""

    kind: str
    value: float
    cube: DyadicCube
    family: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "value": self.value, "cube": self.cube.to_json(), "family": self.family}

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, d: dict) -> "ConstantReport":
        return cls(d["kind"], float(d["value"]), DyadicCube.from_json(d["cube"]), d["family"])

    def __float__(self):
        return self.value


def _require_weight(w: GridFunction, name: str = "weight") -> None:
    if not w.is_weight:
        raise GridError(f"{name} must be strictly positive")


def _per_level(fams: list[CubeFamily], fn: Callable[[int, int], np.ndarray]):
    """Yield (lattice, level, mask, per-cube values) over a family list."""
    for F in fams:
        for level, mask in F.masks.items():
            yield F.lattice, level, mask, fn(F.lattice, level)


def family_argmax(fams: list[CubeFamily], fn: Callable[[int, int], np.ndarray]) -> tuple[float, DyadicCube]:
    """Largest per-cube value over all family cubes, with deterministic ties."""
    best = None
    for lattice, level, mask, vals in _per_level(fams, fn):
        v = np.where(mask, vals, -np.inf)
        pos = np.unravel_index(int(np.argmax(v)), v.shape)  # first max in index order
        val = float(v[pos])
        cube = level_cube(fams[0].spec, lattice, level, pos)
        key = (-val, cube.level, cube.index, cube.lattice)
        if best is None or key < best[0]:
            best = (key, val, cube)
    if best is None:
        raise GridError("empty family")
    return best[1], best[2]


def _avg(f: GridFunction, lattice: int, level: int) -> np.ndarray:
    spec = f.spec
    with np.errstate(invalid="ignore", divide="ignore"):
        return level_sums(f.values, spec, lattice, level) * spec.cell_volume / level_volumes(spec, lattice, level)


def _wavg(fw: np.ndarray, w: np.ndarray, spec, lattice: int, level: int) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        return level_sums(fw, spec, lattice, level) / level_sums(w, spec, lattice, level)


def dyadic_maximal(f: GridFunction, family: FamilyLike = None, w: GridFunction | None = None) -> GridFunction:
    """Cellwise max of (1/w(Q)) * integral of f w over family cubes containing the cell.

    Cells covered by no cube of the family get 0.
    """
    spec = f.spec
    if np.any(f.values < 0):
        raise GridError("the maximal operator takes a nonnegative function")
    fams = as_families(spec, family)
    wv = np.ones(spec.shape) if w is None else w.values
    if w is not None:
        _require_weight(w)
    fw = f.values * wv
    out = np.zeros(spec.shape)
    for lattice, level, mask, vals in _per_level(fams, lambda j, l: _wavg(fw, wv, spec, j, l)):
        out = np.maximum(out, expand(np.where(mask, vals, 0.0), spec, lattice, level))
    return GridFunction(spec, out, nonneg=True)


def a1_constant(w: GridFunction, family: FamilyLike = None) -> ConstantReport:
    """[w]_A1: largest ratio of a cube average to the cube minimum."""
    _require_weight(w)
    spec = w.spec
    fams = as_families(spec, family)

    def ratio(j, l):
        return _avg(w, j, l) / block_reduce(w.values, spec, j, l, "min")

    val, Q = family_argmax(fams, ratio)
    return ConstantReport("A1", val, Q, describe_families(fams))


def a1_relative(v: GridFunction, u: GridFunction, family: FamilyLike = None) -> ConstantReport:
    """[v]_A1(u): largest ratio of the u-weighted average of v to its minimum."""
    _require_weight(v, "v")
    _require_weight(u, "u")
    spec = v.spec
    fams = as_families(spec, family)
    vu = v.values * u.values

    def ratio(j, l):
        return _wavg(vu, u.values, spec, j, l) / block_reduce(v.values, spec, j, l, "min")

    val, Q = family_argmax(fams, ratio)
    return ConstantReport("A1(v)", val, Q, describe_families(fams))


def ap_relative(v: GridFunction, u: GridFunction | None, p: float, family: FamilyLike = None) -> ConstantReport:
    """[v]_Ap(u): sup of <v>^u_Q * (<v^(-1/(p-1))>^u_Q)^(p-1).

    With u = None this is the classical Muckenhoupt constant.  For p <= 1
    the A1(u) constant is returned instead.
    """
    spec = v.spec
    uv = np.ones(spec.shape) if u is None else u.values
    if p <= 1:
        return a1_relative(v, GridFunction(spec, uv, nonneg=True), family)
    _require_weight(v, "v")
    if u is not None:
        _require_weight(u, "u")
    fams = as_families(spec, family)
    vu = v.values * uv
    dual = v.values ** (-1.0 / (p - 1)) * uv

    def functional(j, l):
        return _wavg(vu, uv, spec, j, l) * _wavg(dual, uv, spec, j, l) ** (p - 1)

    val, Q = family_argmax(fams, functional)
    return ConstantReport("Ap" if u is None else "Ap(u)", val, Q, describe_families(fams))


def ap_constant(v: GridFunction, p: float, family: FamilyLike = None) -> ConstantReport:
    return ap_relative(v, None, p, family)


def _fw_integrals(w: GridFunction, F: CubeFamily) -> dict[int, np.ndarray]:
    """Integral over each family cube Q of the family maximal of w restricted to Q.

    Inside Q only family cubes R contained in Q matter (ancestors give a
    smaller average of chi_Q w), so going from the finest level up,
    G_l(x) = max(avg of w on the level-l family cube at x, G_(l+1)(x)) and
    the integral is the level-l block sum of G_l.
    """
    spec = w.spec
    G = np.zeros(spec.shape)
    out = {}
    for level in sorted(F.masks, reverse=True):
        mask = F.masks[level]
        avg = np.where(mask, _avg(w, F.lattice, level), 0.0)
        G = np.maximum(G, expand(avg, spec, F.lattice, level))
        out[level] = level_sums(G, spec, F.lattice, level) * spec.cell_volume
    return out


def ainf_fujii(w: GridFunction, family: FamilyLike = None) -> ConstantReport:
    """Dyadic Fujii-Wilson constant: sup over Q of (1/w(Q)) * integral over Q of M(chi_Q w).

    The maximal operator runs over the same family as the supremum.  With
    several lattices the largest per-lattice value is reported.
    """
    _require_weight(w)
    spec = w.spec
    fams = as_families(spec, family)
    best = None
    for F in fams:
        ints = _fw_integrals(w, F)

        def ratio(j, l, ints=ints):
            return ints[l] / (level_sums(w.values, spec, j, l) * spec.cell_volume)

        val, Q = family_argmax([F], ratio)
        key = (-val, Q.level, Q.index, Q.lattice)
        if best is None or key < best[0]:
            best = (key, val, Q)
    return ConstantReport("AinfFW", best[1], best[2], describe_families(fams))


@dataclass(frozen=True)
class ReverseHolderProbe:
    """Outcome of checking (avg w^r)^(1/r) <= 2 avg w with r = 1 + 1/(tau [w]_Ainf)."""

    holds: bool
    worst_cube: DyadicCube
    worst_ratio: float
    tau_min: float
    at_bound: bool
    ainf: float


TAU_RANGE = (1e-2, 1e6)


def _rh_worst(w: GridFunction, fams: list[CubeFamily], r: float) -> tuple[float, DyadicCube]:
    spec = w.spec
    wr = w.values**r

    def ratio(j, l):
        return _avg(GridFunction(spec, wr), j, l) ** (1.0 / r) / _avg(w, j, l)

    return family_argmax(fams, ratio)


def reverse_holder_probe(w: GridFunction, tau: float, family: FamilyLike = None, rtol: float = 1e-3) -> ReverseHolderProbe:
    """Check the reverse Holder bound at ``tau`` and search the smallest feasible tau.

    Larger tau gives a smaller exponent, so feasibility is monotone in tau and
    bisection on log(tau) over [1e-2, 1e6] applies.  ``at_bound`` flags a
    result pinned to either end of the range (tau_min = inf if even 1e6 fails).
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    _require_weight(w)
    fams = as_families(w.spec, family)
    ainf = ainf_fujii(w, fams).value

    def ok(t):
        ratio, Q = _rh_worst(w, fams, 1.0 + 1.0 / (t * ainf))
        return ratio <= 2.0 * (1 + TOL), ratio, Q

    holds, ratio, Q = ok(tau)
    lo, hi = TAU_RANGE
    if ok(lo)[0]:
        tau_min, at_bound = lo, True
    elif not ok(hi)[0]:
        tau_min, at_bound = math.inf, True
    else:
        while hi / lo > 1 + rtol:
            mid = math.sqrt(lo * hi)
            if ok(mid)[0]:
                hi = mid
            else:
                lo = mid
        tau_min, at_bound = hi, False
    return ReverseHolderProbe(holds, Q, ratio, tau_min, at_bound, ainf)
