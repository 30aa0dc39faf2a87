"""Sparse families, sparse forms and the combinatorial lemmas around them.

A sparse family keeps its selected sets E_Q as an owner array: each cell
stores the position of the cube that owns it (or -1), so the E_Q are
disjoint by construction.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .grid import (
    BASE,
    CellSet,
    CubeFamily,
    DyadicCube,
    GridFunction,
    GridSpec,
    base_cube,
    cube_position,
    expand,
    level_blocks,
    level_shape,
    level_sums,
    level_volumes,
    parent,
)
from .orlicz import YoungFunction, _modular
from .weights import ainf_fujii

SLACK = 1e-9


class SparseError(ValueError):
    """A family, selection or stratum violates a stated precondition."""


def _sorted_unique(cubes: Iterable[DyadicCube]) -> list[DyadicCube]:
    return sorted(set(cubes))


def canonical_owner(spec: GridSpec, cubes: Sequence[DyadicCube]) -> np.ndarray:
    """Owner array of E_Q = Q minus the strictly smaller family cubes.

    Cubes are painted coarse to fine, so each cell ends up owned by the
    deepest family cube containing it.
    """
    owner = np.full(spec.shape, -1, dtype=np.int64)
    for i, Q in enumerate(cubes):
        owner[Q.slices(spec)] = i
    return owner


class SparseFamily:
    """Cubes of a single lattice with disjoint selected sets E_Q.

    ``eta`` is the sparseness the family claims; ``achieved_eta`` is what
    the selection actually gives.
    """

    def __init__(self, spec: GridSpec, cubes: Iterable[DyadicCube], eta: Optional[float] = None,
                 selection: Union[None, np.ndarray, Mapping[DyadicCube, CellSet]] = None):
        self.spec = spec
        self.cubes = _sorted_unique(cubes)
        lattices = {Q.lattice for Q in self.cubes}
        if len(lattices) > 1:
            raise SparseError("a sparse family lives in a single lattice")
        self.lattice = lattices.pop() if lattices else BASE
        for Q in self.cubes:
            Q.validate(spec)
        self.index = {Q: i for i, Q in enumerate(self.cubes)}
        if selection is None:
            owner = canonical_owner(spec, self.cubes)
        elif isinstance(selection, np.ndarray):
            owner = np.asarray(selection, dtype=np.int64).reshape(spec.shape)
        else:
            owner = np.full(spec.shape, -1, dtype=np.int64)
            for Q, E in selection.items():
                if np.any(owner[E.mask] >= 0):
                    raise SparseError("selected sets overlap")
                owner[E.mask] = self.index[Q]
        owner.setflags(write=False)
        self.owner = owner
        self.eta = self.achieved_eta if eta is None else float(eta)
        if not 0 <= self.eta <= 1:
            raise SparseError(f"eta must lie in [0, 1], got {self.eta}")

    def __len__(self):
        return len(self.cubes)

    def __iter__(self):
        return iter(self.cubes)

    def selected(self, Q: DyadicCube) -> CellSet:
        return CellSet(self.spec, self.owner == self.index[Q])

    def _selected_counts(self) -> np.ndarray:
        own = self.owner.ravel()
        return np.bincount(own[own >= 0], minlength=len(self.cubes))

    @property
    def achieved_eta(self) -> float:
        if not self.cubes:
            return 1.0
        counts = self._selected_counts()
        sizes = np.array([Q.ncells(self.spec) for Q in self.cubes])
        return float(np.min(counts / sizes))

    def cube_family(self) -> CubeFamily:
        return CubeFamily.from_cubes(self.spec, self.cubes) if self.cubes else CubeFamily(self.spec, self.lattice, {})

    def union(self) -> CellSet:
        m = np.zeros(self.spec.shape, bool)
        for Q in self.cubes:
            m[Q.slices(self.spec)] = True
        return CellSet(self.spec, m)

    def to_json(self, with_selection: bool = True) -> dict:
        d = {
            "lattice": self.lattice,
            "eta": self.eta,
            "cubes": [{"level": Q.level, "index": list(Q.index)} for Q in self.cubes],
        }
        if with_selection:
            d["selection"] = [self.selected(Q).runs() for Q in self.cubes]
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, spec: GridSpec, d: dict) -> "SparseFamily":
        lattice = int(d.get("lattice", BASE))
        cubes = [DyadicCube(int(c["level"]), tuple(c["index"]), lattice) for c in d["cubes"]]
        sel = None
        if "selection" in d:
            sel = {Q: CellSet.from_runs(spec, runs) for Q, runs in zip(cubes, d["selection"])}
        return cls(spec, cubes, d.get("eta"), sel)


@dataclass(frozen=True)
class SparsenessReport:
    ok: bool
    worst_cube: Optional[DyadicCube]
    achieved_eta: float
    disjoint: bool
    contained: bool


def verify_sparseness(spec: GridSpec, cubes: Sequence[DyadicCube], selection: Mapping[DyadicCube, CellSet],
                      eta: float) -> SparsenessReport:
    """Check E_Q within Q, pairwise disjointness and |E_Q| >= eta |Q| on cell sets."""
    cover = np.zeros(spec.shape, np.int64)
    contained = True
    worst, worst_ratio = None, math.inf
    for Q in sorted(set(cubes)):
        Q.validate(spec)
        E = selection.get(Q, CellSet.empty(spec))
        if not E.issubset(CellSet.from_cube(spec, Q)):
            contained = False
        cover += E.mask
        ratio = E.count / Q.ncells(spec)
        if ratio < worst_ratio:
            worst, worst_ratio = Q, ratio
    disjoint = bool(np.all(cover <= 1))
    achieved = 1.0 if worst is None else worst_ratio
    ok = disjoint and contained and achieved >= eta * (1 - 1e-12)
    return SparsenessReport(ok, worst, achieved, disjoint, contained)


def verify_family(S: SparseFamily) -> SparsenessReport:
    return verify_sparseness(S.spec, S.cubes, {Q: S.selected(Q) for Q in S.cubes}, S.eta)


def default_selection(spec: GridSpec, cubes: Iterable[DyadicCube]) -> tuple[dict[DyadicCube, CellSet], float]:
    """Canonical E_Q = Q minus the strictly smaller family cubes, and its sparseness."""
    S = SparseFamily(spec, cubes)
    return {Q: S.selected(Q) for Q in S.cubes}, S.achieved_eta


def cz_stopping_family(f: GridFunction, a: float, Q0: Optional[DyadicCube] = None,
                       strict: bool = True) -> SparseFamily:
    """Calderon-Zygmund stopping cubes of f on the base lattice.

    Starting from Q0, each stopping cube P selects the maximal dyadic
    subcubes R with <f>_R > a <f>_P (``strict=False`` uses >=), and the
    recursion continues inside them.  The family is (1 - 1/a)-sparse with the
    canonical selection.
    """
    if a <= 1:
        raise SparseError(f"stopping ratio must exceed 1, got {a}")
    spec = f.spec
    if np.any(f.values < 0):
        raise SparseError("stopping families need f >= 0")
    Q0 = Q0 if Q0 is not None else base_cube(spec.n)
    Q0.validate(spec)
    if Q0.lattice != BASE:
        raise SparseError("stopping families are built on the base lattice")
    pyr = f.pyramid
    if pyr[Q0.level][Q0.index] <= 0:
        raise SparseError("f vanishes on the top cube")
    n = spec.n
    found = [Q0]
    stack = [Q0]
    while stack:
        P = stack.pop()
        lp = P.level
        avgP = pyr[lp][P.index] / 2.0 ** (n * (spec.L - lp))
        covered = np.zeros((1,) * n, bool)
        for level in range(lp + 1, spec.L + 1):
            d = level - lp
            sl = tuple(slice(k << d, (k + 1) << d) for k in P.index)
            avg = pyr[level][sl] / 2.0 ** (n * (spec.L - level))
            for ax in range(n):
                covered = np.repeat(covered, 2, axis=ax)
            cand = avg > a * avgP if strict else avg >= a * avgP
            new = cand & ~covered
            covered = covered | cand
            for off in zip(*np.nonzero(new)):
                R = DyadicCube(level, tuple((k << d) + o for k, o in zip(P.index, off)))
                found.append(R)
                stack.append(R)
    return SparseFamily(spec, found, eta=1 - 1 / a)


# ---------------------------------------------------------------------------
# sparse forms

def _level_groups(S: SparseFamily) -> dict[int, np.ndarray]:
    return S.cube_family().masks


def sparse_operator(S: SparseFamily, f: GridFunction) -> GridFunction:
    """Sum over Q in S of <f>_Q chi_Q."""
    spec = S.spec
    out = np.zeros(spec.shape)
    for level, mask in _level_groups(S).items():
        with np.errstate(invalid="ignore", divide="ignore"):
            avg = level_sums(f.values, spec, S.lattice, level) * spec.cell_volume / level_volumes(spec, S.lattice, level)
        out = out + expand(np.where(mask, avg, 0.0), spec, S.lattice, level)
    return GridFunction(spec, out, nonneg=f.nonneg)


def commutator_sparse(S: SparseFamily, b: GridFunction, f: GridFunction, m: int, h: int) -> GridFunction:
    """Sum over Q of |b - b_Q|^(m-h) <|b - b_Q|^h f>_Q chi_Q (with 0^0 = 1)."""
    if not 0 <= h <= m:
        raise SparseError(f"need 0 <= h <= m, got h={h}, m={m}")
    spec = S.spec
    out = np.zeros(spec.shape)
    for level, mask in _level_groups(S).items():
        vol = level_volumes(spec, S.lattice, level)
        with np.errstate(invalid="ignore", divide="ignore"):
            bq = level_sums(b.values, spec, S.lattice, level) * spec.cell_volume / vol
        dev = np.abs(b.values - expand(np.where(mask, bq, 0.0), spec, S.lattice, level))
        with np.errstate(invalid="ignore", divide="ignore"):
            inner = level_sums(dev**h * f.values, spec, S.lattice, level) * spec.cell_volume / vol
        out = out + dev ** (m - h) * expand(np.where(mask, inner, 0.0), spec, S.lattice, level)
    return GridFunction(spec, out, nonneg=f.nonneg)


def commutator_sum(S: SparseFamily, b: GridFunction, f: GridFunction, m: int) -> GridFunction:
    """Sum over h = 0..m of the commutator sparse operators."""
    out = commutator_sparse(S, b, f, m, 0)
    for h in range(1, m + 1):
        out = out + commutator_sparse(S, b, f, m, h)
    return out


def rough_bilinear(S: Union[SparseFamily, Sequence[SparseFamily]], f: GridFunction, g: GridFunction,
                   r: float) -> float:
    """Sum over Q of <|f|>_Q <|g|^r>_Q^(1/r) |Q|, summed over a list of families."""
    if r <= 1:
        raise SparseError(f"r must exceed 1, got {r}")
    fams = [S] if isinstance(S, SparseFamily) else list(S)
    total = 0.0
    for F in fams:
        spec = F.spec
        fa = np.abs(f.values)
        gr = np.abs(g.values) ** r
        for level, mask in _level_groups(F).items():
            vol = level_volumes(spec, F.lattice, level)
            with np.errstate(invalid="ignore", divide="ignore"):
                af = level_sums(fa, spec, F.lattice, level) * spec.cell_volume / vol
                ag = (level_sums(gr, spec, F.lattice, level) * spec.cell_volume / vol) ** (1.0 / r)
            total += float(np.sum(np.where(mask, af * ag * vol, 0.0)))
    return total


# ---------------------------------------------------------------------------
# stratification and layers

def dyadic_bin(x: float) -> int:
    """The j with 2^(-j-1) < x <= 2^(-j), for 0 < x <= 1, computed exactly."""
    if not 0 < x <= 1 or not math.isfinite(x):
        raise SparseError(f"binning functional must lie in (0, 1], got {x!r}")
    m, e = math.frexp(x)
    return 1 - e if m == 0.5 else -e


Functional = Union[Mapping[DyadicCube, float], Callable[[DyadicCube], float], Sequence[float]]


def _evaluate(F: Functional, cubes: Sequence[DyadicCube]) -> list[float]:
    if callable(F):
        return [float(F(Q)) for Q in cubes]
    if isinstance(F, Mapping):
        return [float(F[Q]) for Q in cubes]
    vals = [float(x) for x in F]
    if len(vals) != len(cubes):
        raise SparseError("functional values do not match the family size")
    return vals


@dataclass
class Stratification:
    """Bins (k, j) of a family: j from the first functional, k from the second."""

    bins: dict[tuple[int, int], list[DyadicCube]]
    first: str = "F1"
    second: str = "F2"
    values: dict[DyadicCube, tuple[float, float]] = field(default_factory=dict)

    def __len__(self):
        return sum(len(v) for v in self.bins.values())

    def keys(self):
        return sorted(self.bins)


def stratify(S: Union[SparseFamily, Sequence[DyadicCube]], F1: Functional, F2: Functional,
             first: str = "F1", second: str = "F2") -> Stratification:
    """Split the family into S_{k,j}: 2^(-j-1) < F1(Q) <= 2^(-j), 2^(-k-1) < F2(Q) <= 2^(-k)."""
    cubes = list(S.cubes if isinstance(S, SparseFamily) else S)
    v1, v2 = _evaluate(F1, cubes), _evaluate(F2, cubes)
    bins: dict[tuple[int, int], list[DyadicCube]] = defaultdict(list)
    values = {}
    for Q, a, b in zip(cubes, v1, v2):
        bins[(dyadic_bin(b), dyadic_bin(a))].append(Q)
        values[Q] = (a, b)
    return Stratification(dict(bins), first, second, values)


@dataclass(frozen=True)
class LayerDecomposition:
    layers: list[list[DyadicCube]]

    def layer_of(self) -> dict[DyadicCube, int]:
        return {Q: i for i, L in enumerate(self.layers) for Q in L}

    def __len__(self):
        return len(self.layers)


def _ancestor_counts(cubes: Sequence[DyadicCube]) -> dict[DyadicCube, int]:
    members = set(cubes)
    out = {}
    for Q in cubes:
        k, P = 0, Q
        while P.level > 0:
            P = parent(P)
            k += P in members
        out[Q] = k
    return out


def layer_decompose(S: Union[SparseFamily, Sequence[DyadicCube]]) -> LayerDecomposition:
    """Layer i holds the maximal cubes left after removing layers 0..i-1.

    In a single lattice that is exactly the set of cubes with i ancestors
    in the family.
    """
    cubes = _sorted_unique(S.cubes if isinstance(S, SparseFamily) else S)
    if len({Q.lattice for Q in cubes}) > 1:
        raise SparseError("layers are defined within a single lattice")
    depth = _ancestor_counts(cubes)
    layers: list[list[DyadicCube]] = [[] for _ in range(max(depth.values(), default=-1) + 1)]
    for Q in cubes:
        layers[depth[Q]].append(Q)
    return LayerDecomposition(layers)


@dataclass(frozen=True)
class DisjointCube:
    cube: DyadicCube
    layer: int
    mass_ratio: float
    mass_decay: bool
    lhs: float
    rhs: float
    holds: Optional[bool]


@dataclass(frozen=True)
class DisjointifyReport:
    selection: dict[DyadicCube, CellSet]
    max_overlap: int
    nu: int
    rows: list[DisjointCube]

    @property
    def inequality_ok(self) -> bool:
        return all(r.holds is not False for r in self.rows)

    @property
    def all_decay(self) -> bool:
        return all(r.mass_decay for r in self.rows)


def _cube_norm_modular(f: GridFunction, w: GridFunction, A: YoungFunction, Q: DyadicCube, lam: float) -> float:
    sl = Q.slices(f.spec)
    F = np.abs(f.values[sl]).ravel()[None, :]
    W = w.values[sl].ravel()[None, :]
    return float(_modular(F, W / W.sum(), A, np.array([lam]))[0])


def disjointify(S: Union[SparseFamily, Sequence[DyadicCube]], f: GridFunction, A: YoungFunction,
                w: GridFunction, j: int, nu: int) -> DisjointifyReport:
    """Remove from each Q the family cubes nu layers below it.

    E~_Q = Q minus the union J of stratum cubes P inside Q with
    layer(P) = layer(Q) + nu.  A point of depth d in the stratum lies in at
    most min(nu, d + 1) of the E~_Q, whatever the weight.  Where
    w(J) <= w(Q)/A(8) the estimate
    w(Q) ||f||_{A(w),Q} <= 4 A(2^(j+2)) / 2^(j+2) * integral over E~_Q of A(|f|) w
    is evaluated.

    The stratum condition 2^(-j-1) < ||f||_{A(w),Q} <= 2^(-j) is checked
    exactly through the modular: ||f|| <= s iff modular(s) <= 1.
    """
    if nu < 1:
        raise SparseError(f"nu must be >= 1, got {nu}")
    from .orlicz import luxemburg_norm

    cubes = _sorted_unique(S.cubes if isinstance(S, SparseFamily) else S)
    spec = f.spec
    for Q in cubes:
        upper = _cube_norm_modular(f, w, A, Q, 2.0**-j) <= 1 + SLACK
        lower = _cube_norm_modular(f, w, A, Q, 2.0 ** (-j - 1)) >= 1 - SLACK
        if not (upper and lower):
            raise SparseError(f"{Q} is not in stratum j={j}")
    layer_of = layer_decompose(cubes).layer_of()
    by_layer: dict[int, list[DyadicCube]] = defaultdict(list)
    for Q in cubes:
        by_layer[layer_of[Q]].append(Q)
    a8 = float(A(8.0))
    scale = 4.0 * float(A(2.0 ** (j + 2))) / 2.0 ** (j + 2)
    Af_w = np.asarray(A(np.abs(f.values)), float) * w.values
    count = np.zeros(spec.shape, np.int64)
    selection, rows = {}, []
    for Q in cubes:
        qmask = CellSet.from_cube(spec, Q).mask
        J = np.zeros(spec.shape, bool)
        for P in by_layer.get(layer_of[Q] + nu, []):
            if Q.contains(P, spec):
                J[P.slices(spec)] = True
        E = qmask & ~J
        count += E
        selection[Q] = CellSet(spec, E)
        wq = float(np.sum(w.values[qmask]))
        ratio = float(np.sum(w.values[J])) / wq
        decay = ratio <= 1.0 / a8
        lhs = rhs = math.nan
        holds = None
        if decay:
            lhs = wq * spec.cell_volume * luxemburg_norm(f, A, w, Q).value
            rhs = scale * float(np.sum(Af_w[E])) * spec.cell_volume
            holds = lhs <= rhs * (1 + SLACK)
        rows.append(DisjointCube(Q, layer_of[Q], ratio, decay, lhs, rhs, holds))
    return DisjointifyReport(selection, int(count.max(initial=0)), nu, rows)


def minimal_decay_depth(S: Union[SparseFamily, Sequence[DyadicCube]], f: GridFunction, A: YoungFunction,
                        w: GridFunction, j: int, max_nu: int = 64) -> Optional[int]:
    """Smallest nu for which every cube meets the mass-decay condition."""
    for nu in range(1, max_nu + 1):
        if disjointify(S, f, A, w, j, nu).all_decay:
            return nu
    return None


# ---------------------------------------------------------------------------
# union mass and the weak type of Orlicz maximal operators

@dataclass(frozen=True)
class MassCheck:
    lhs: float
    rhs: float
    holds: bool


def union_mass_check(S: SparseFamily, w: GridFunction) -> MassCheck:
    """Sum of w(Q) <= (1/eta) [w]_Ainf w(union of Q).

    eta is the sparseness achieved by the selection; the Fujii-Wilson
    constant runs over the full lattice of the family.
    """
    eta = S.achieved_eta
    if eta <= 0:
        raise SparseError("family has eta = 0")
    spec = S.spec
    pyr = w.pyramid
    lhs = 0.0
    for Q in S.cubes:
        lhs += _cube_integral(pyr, spec, Q)
    ainf = ainf_fujii(w, CubeFamily.full(spec, S.lattice)).value
    union = float(np.sum(w.values[S.union().mask])) * spec.cell_volume
    rhs = ainf * union / eta
    return MassCheck(lhs, rhs, lhs <= rhs * (1 + SLACK))


def _cube_integral(pyr, spec: GridSpec, Q: DyadicCube) -> float:
    if Q.lattice == BASE:
        return float(pyr[Q.level][Q.index]) * spec.cell_volume
    from .grid import lattice_sums

    return float(lattice_sums(pyr, Q.lattice, Q.level)[cube_position(Q)]) * spec.cell_volume


def maximal_level_set(f: GridFunction, A: YoungFunction, w: GridFunction, lattice: int, t: float) -> np.ndarray:
    """Cells where the Orlicz maximal function over one full lattice exceeds t.

    ||f||_{A(w),Q} > t exactly when the modular at t exceeds 1, so the set
    is found without any bisection.
    """
    spec = f.spec
    out = np.zeros(spec.shape, bool)
    fa = np.abs(f.values).ravel()
    wv = w.values.ravel()
    for level in range(spec.L + 1):
        blk = level_blocks(spec, lattice, level)
        F = fa[blk.index]
        W = np.where(blk.mask, wv[blk.index], 0.0)
        W = W / W.sum(axis=1, keepdims=True)
        big = _modular(F, W, A, np.full(F.shape[0], float(t))) > 1.0
        arr = np.zeros(level_shape(spec, lattice, level), bool)
        arr[tuple(blk.positions.T)] = big
        out |= expand(arr, spec, lattice, level)
    return out


def orlicz_maximal_weaktype_check(f: GridFunction, A: YoungFunction, w: GridFunction,
                                  lattices: Sequence[int], t: float) -> MassCheck:
    """w({M_A(w) f > t}) against integral of A(|f|/t) w.

    One lattice: the bound has constant 1.  N lattices: the set is inside
    the union of the per-lattice sets at level t/N, which gives the factor
    N kappa A(N).
    """
    if t <= 0:
        raise ValueError(f"threshold must be positive, got {t}")
    kappa = A.kappa
    if kappa is None:
        raise SparseError(f"{A.text()} has no submultiplicativity constant")
    spec = f.spec
    lattices = list(lattices)
    mask = np.zeros(spec.shape, bool)
    for lat in lattices:
        mask |= maximal_level_set(f, A, w, lat, t)
    lhs = float(np.sum(w.values[mask])) * spec.cell_volume
    base = float(np.sum(np.asarray(A(np.abs(f.values) / t), float) * w.values)) * spec.cell_volume
    N = len(lattices)
    factor = 1.0 if N == 1 else N * kappa * float(A(float(N)))
    rhs = factor * base
    return MassCheck(lhs, rhs, lhs <= rhs * (1 + SLACK) if N > 1 else lhs <= rhs)
