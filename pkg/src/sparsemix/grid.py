"""Dyadic grids on the unit cube [0, 1)^n.

Functions live on the finest cells (side 2^-L) as piecewise constants, so
every integral over a cube is a finite sum.  Cube sums are taken from a
summation pyramid built bottom-up, which makes integration additive over
children with a fixed summation order.

Lattice 0 is the standard dyadic lattice.  Lattices 1..3^n are the
"tripled" lattices: their level-l cubes have side 3*2^-l and corners on the
level-l dyadic points, offset by a third of their side.  Together they
reproduce {3Q : Q dyadic}.  Tripled cubes are clipped to the unit cube.
"""
from __future__ import annotations

import io
import itertools
import math
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

BASE = 0


class GridError(ValueError):
    """A cube, level or function does not fit the grid it is used on."""


@dataclass(frozen=True)
class GridSpec:
    """Dimension ``n`` and resolution level ``L`` of the base cube."""

    n: int
    L: int

    def __post_init__(self):
        if self.n < 1:
            raise GridError(f"dimension must be >= 1, got {self.n}")
        if not 0 <= self.L <= 24 // self.n:
            raise GridError(f"level L={self.L} outside [0, {24 // self.n}] for n={self.n}")

    @property
    def side(self) -> int:
        return 1 << self.L

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.n

    @property
    def ncells(self) -> int:
        return self.side**self.n

    @property
    def cell_volume(self) -> float:
        return 2.0 ** (-self.n * self.L)

    def midpoints(self) -> tuple[np.ndarray, ...]:
        """Cell-midpoint coordinates, one broadcastable array per axis."""
        x = (np.arange(self.side) + 0.5) / self.side
        return tuple(np.meshgrid(*([x] * self.n), indexing="ij"))

    def lattices(self) -> list[int]:
        return [BASE] + shifted_lattices(self)


def shifted_lattices(spec: GridSpec) -> list[int]:
    """Ids of the 3^n tripled lattices (the base lattice is id 0)."""
    return list(range(1, 3**spec.n + 1))


def _lattice_digits(n: int, lattice: int) -> tuple[int, ...]:
    c = lattice - 1
    return tuple((c // 3**a) % 3 for a in range(n))


@lru_cache(maxsize=None)
def _residues(n: int, lattice: int, level: int) -> tuple[int, ...]:
    # level-l cubes of a tripled lattice have per-axis index m = c_l (mod 3);
    # children of m are 2m-1 and 2m+2, so c_{l+1} = 2 c_l - 1 (mod 3)
    c = list(_lattice_digits(n, lattice))
    for _ in range(level):
        c = [(2 * ci - 1) % 3 for ci in c]
    return tuple(c)


def _check_lattice(spec: GridSpec, lattice: int) -> None:
    if not 0 <= lattice <= 3**spec.n:
        raise GridError(f"lattice id {lattice} outside [0, {3**spec.n}]")


@dataclass(frozen=True, order=True)
class DyadicCube:
    """A cube addressed by (level, multi-index) inside a lattice.

    For the base lattice the index ranges over [0, 2^level)^n.  For a tripled
    lattice the index m per axis covers [(m-1) 2^-l, (m+2) 2^-l) and ranges
    over [-1, 2^level].  Ordering is by (level, index), the tie-break used by
    every max-reduction in the package.
    """

    level: int
    index: tuple[int, ...]
    lattice: int = BASE

    def __post_init__(self):
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))

    @property
    def n(self) -> int:
        return len(self.index)

    def validate(self, spec: GridSpec) -> None:
        if self.n != spec.n:
            raise GridError(f"cube dimension {self.n} != grid dimension {spec.n}")
        if not 0 <= self.level <= spec.L:
            raise GridError(f"level {self.level} outside [0, {spec.L}]")
        _check_lattice(spec, self.lattice)
        top = 1 << self.level
        if self.lattice == BASE:
            if any(not 0 <= k < top for k in self.index):
                raise GridError(f"index {self.index} outside the base cube at level {self.level}")
        else:
            res = _residues(spec.n, self.lattice, self.level)
            for m, c in zip(self.index, res):
                if not -1 <= m <= top or (m - c) % 3:
                    raise GridError(f"{self} is not a cube of lattice {self.lattice}")

    def cell_ranges(self, spec: GridSpec) -> tuple[tuple[int, int], ...]:
        """Clipped half-open cell ranges per axis."""
        b = 1 << (spec.L - self.level)
        if self.lattice == BASE:
            return tuple((k * b, (k + 1) * b) for k in self.index)
        return tuple((max((m - 1) * b, 0), min((m + 2) * b, spec.side)) for m in self.index)

    def slices(self, spec: GridSpec) -> tuple[slice, ...]:
        return tuple(slice(lo, hi) for lo, hi in self.cell_ranges(spec))

    def ncells(self, spec: GridSpec) -> int:
        return math.prod(hi - lo for lo, hi in self.cell_ranges(spec))

    def volume(self, spec: GridSpec) -> float:
        return self.ncells(spec) * spec.cell_volume

    def sidelength(self) -> float:
        """Unclipped side length."""
        return (1.0 if self.lattice == BASE else 3.0) * 2.0 ** (-self.level)

    def bounds(self, clip: bool = True) -> tuple[tuple[float, float], ...]:
        h = 2.0 ** (-self.level)
        if self.lattice == BASE:
            out = [(k * h, (k + 1) * h) for k in self.index]
        else:
            out = [((m - 1) * h, (m + 2) * h) for m in self.index]
        if clip:
            out = [(max(lo, 0.0), min(hi, 1.0)) for lo, hi in out]
        return tuple(out)

    def fits(self) -> bool:
        """True when the unclipped cube lies inside [0, 1)^n."""
        return all(lo >= 0.0 and hi <= 1.0 for lo, hi in self.bounds(clip=False))

    def contains(self, other: "DyadicCube", spec: GridSpec) -> bool:
        """Set containment of the clipped cubes."""
        return all(
            lo <= olo and ohi <= hi
            for (lo, hi), (olo, ohi) in zip(self.cell_ranges(spec), other.cell_ranges(spec))
        )

    def to_json(self) -> dict:
        return {"lattice": self.lattice, "level": self.level, "index": list(self.index)}

    @classmethod
    def from_json(cls, d: dict) -> "DyadicCube":
        return cls(int(d["level"]), tuple(d["index"]), int(d.get("lattice", BASE)))

    def __str__(self):
        return f"Q[{self.lattice}:{self.level}:{','.join(map(str, self.index))}]"


def base_cube(n: int) -> DyadicCube:
    return DyadicCube(0, (0,) * n)


def children(Q: DyadicCube, spec: GridSpec) -> list[DyadicCube]:
    """The 2^n children of Q (tripled lattices: those meeting the unit cube)."""
    Q.validate(spec)
    if Q.level >= spec.L:
        raise GridError(f"{Q} is at the finest level {spec.L}")
    if Q.lattice == BASE:
        per_axis = [(2 * k, 2 * k + 1) for k in Q.index]
    else:
        top = 1 << (Q.level + 1)
        per_axis = [tuple(c for c in (2 * m - 1, 2 * m + 2) if -1 <= c <= top) for m in Q.index]
    return [DyadicCube(Q.level + 1, idx, Q.lattice) for idx in itertools.product(*per_axis)]


def parent(Q: DyadicCube, spec: GridSpec | None = None) -> DyadicCube:
    if spec is not None:
        Q.validate(spec)
    if Q.level == 0:
        raise GridError("level-0 cubes have no parent")
    if Q.lattice == BASE:
        idx = tuple(k >> 1 for k in Q.index)
    else:
        idx = tuple((m + 1) // 2 if m % 2 else (m - 2) // 2 for m in Q.index)
    return DyadicCube(Q.level - 1, idx, Q.lattice)


def cube_at(x: Sequence[float], level: int, spec: GridSpec, lattice: int = BASE) -> DyadicCube:
    """The level-``level`` cube of ``lattice`` containing the point x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.n,) or np.any(x < 0) or np.any(x >= 1):
        raise GridError(f"point {x} is not in [0,1)^{spec.n}")
    if not 0 <= level <= spec.L:
        raise GridError(f"level {level} outside [0, {spec.L}]")
    _check_lattice(spec, lattice)
    b = np.floor(x * 2**level).astype(int)
    if lattice == BASE:
        return DyadicCube(level, tuple(b))
    res = _residues(spec.n, lattice, level)
    return DyadicCube(level, tuple(int(bi - 1 + (c - (bi - 1)) % 3) for bi, c in zip(b, res)), lattice)


def subcubes(Q: DyadicCube, level: int, spec: GridSpec) -> Iterator[DyadicCube]:
    """All descendants of Q at ``level`` in the same lattice."""
    Q.validate(spec)
    if not Q.level <= level <= spec.L:
        raise GridError(f"level {level} outside [{Q.level}, {spec.L}]")
    frontier = [Q]
    for _ in range(level - Q.level):
        frontier = [c for P in frontier for c in children(P, spec)]
    yield from frontier


# ---------------------------------------------------------------------------
# level-vectorised machinery

def level_shape(spec: GridSpec, lattice: int, level: int) -> tuple[int, ...]:
    """Shape of the per-level cube array; tripled arrays are offset by one."""
    m = 1 << level
    return (m,) * spec.n if lattice == BASE else (m + 2,) * spec.n


@lru_cache(maxsize=None)
def _axis_valid(spec: GridSpec, lattice: int, level: int) -> tuple[np.ndarray, ...]:
    m = 1 << level
    if lattice == BASE:
        return tuple(np.ones(m, bool) for _ in range(spec.n))
    t = np.arange(m + 2)
    return tuple(((t - 1 - c) % 3) == 0 for c in _residues(spec.n, lattice, level))


def level_valid(spec: GridSpec, lattice: int, level: int) -> np.ndarray:
    """Boolean array marking positions of the level array that are cubes."""
    axes = _axis_valid(spec, lattice, level)
    out = axes[0]
    for a in axes[1:]:
        out = np.logical_and.outer(out, a)
    return out


def level_cube(spec: GridSpec, lattice: int, level: int, pos: Sequence[int]) -> DyadicCube:
    """Cube at position ``pos`` of the level array."""
    if lattice == BASE:
        return DyadicCube(level, tuple(pos))
    return DyadicCube(level, tuple(int(p) - 1 for p in pos), lattice)


def cube_position(Q: DyadicCube) -> tuple[int, ...]:
    return Q.index if Q.lattice == BASE else tuple(m + 1 for m in Q.index)


@lru_cache(maxsize=None)
def cell_map(spec: GridSpec, lattice: int, level: int) -> tuple[np.ndarray, ...]:
    """Per-axis map from cell index to level-array position of its cube."""
    b = np.arange(spec.side) >> (spec.L - level)
    if lattice == BASE:
        return (b,) * spec.n
    return tuple(b + (c - (b - 1)) % 3 for c in _residues(spec.n, lattice, level))


def expand(arr: np.ndarray, spec: GridSpec, lattice: int, level: int) -> np.ndarray:
    """Broadcast a per-cube level array back onto the cells."""
    return arr[np.ix_(*cell_map(spec, lattice, level))]


def _sum_pairs(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    out = a[0::2] + a[1::2]
    return np.moveaxis(out, 0, axis)


def build_pyramid(cells: np.ndarray) -> list[np.ndarray]:
    """Sums over every base-lattice cube, coarse level first.

    Each parent is the sum of its children, axis by axis in a fixed order, so
    integration over a cube equals the sum over its children bit for bit in
    one dimension and up to the final rounding in higher dimensions.
    """
    levels = [np.asarray(cells, dtype=float)]
    while levels[-1].shape[0] > 1:
        a = levels[-1]
        for axis in range(a.ndim):
            a = _sum_pairs(a, axis)
        levels.append(a)
    return levels[::-1]


def _three_tap(a: np.ndarray, op, pad_value: float) -> np.ndarray:
    for axis in range(a.ndim):
        width = [(0, 0)] * a.ndim
        width[axis] = (2, 2)
        p = np.pad(a, width, constant_values=pad_value)
        n = p.shape[axis]
        s0 = np.take(p, np.arange(0, n - 2), axis=axis)
        s1 = np.take(p, np.arange(1, n - 1), axis=axis)
        s2 = np.take(p, np.arange(2, n), axis=axis)
        a = op(op(s0, s1), s2)
    return a


def lattice_sums(pyramid: Sequence[np.ndarray], lattice: int, level: int) -> np.ndarray:
    """Cube sums at ``level`` of ``lattice`` from a base pyramid."""
    base = pyramid[level]
    if lattice == BASE:
        return base
    return _three_tap(base, np.add, 0.0)


def block_reduce(cells: np.ndarray, spec: GridSpec, lattice: int, level: int, op: str) -> np.ndarray:
    """Per-cube min or max of a cell array."""
    ufunc, pad = {"min": (np.minimum, np.inf), "max": (np.maximum, -np.inf)}[op]
    b = 1 << (spec.L - level)
    m = 1 << level
    shape = []
    for _ in range(spec.n):
        shape += [m, b]
    red = ufunc.reduce(cells.reshape(shape), axis=tuple(range(1, 2 * spec.n, 2)))
    if lattice == BASE:
        return red
    return _three_tap(red, ufunc, pad)


def level_sums(cells: np.ndarray, spec: GridSpec, lattice: int, level: int) -> np.ndarray:
    """Per-cube sums of a cell array at one level, without a full pyramid."""
    b = 1 << (spec.L - level)
    m = 1 << level
    shape = []
    for _ in range(spec.n):
        shape += [m, b]
    red = np.asarray(cells, float).reshape(shape).sum(axis=tuple(range(1, 2 * spec.n, 2)))
    if lattice == BASE:
        return red
    return _three_tap(red, np.add, 0.0)


@lru_cache(maxsize=None)
def _ones_pyramid(spec: GridSpec) -> tuple[np.ndarray, ...]:
    return tuple(build_pyramid(np.ones(spec.shape)))


def level_volumes(spec: GridSpec, lattice: int, level: int) -> np.ndarray:
    """Clipped volumes of all level-array positions (0 where no cube)."""
    counts = lattice_sums(_ones_pyramid(spec), lattice, level)
    return counts * spec.cell_volume


@dataclass(frozen=True)
class LevelBlocks:
    """Cell indices of every cube at one level of one lattice.

    ``index[i]`` lists flat cell indices of cube ``cubes[i]``; ``mask`` marks
    real entries (clipped tripled cubes are padded).
    """

    index: np.ndarray
    mask: np.ndarray
    positions: np.ndarray
    row_of: np.ndarray


@lru_cache(maxsize=256)
def level_blocks(spec: GridSpec, lattice: int, level: int) -> LevelBlocks:
    n, side = spec.n, spec.side
    b = 1 << (spec.L - level)
    idx_parts, mask_parts, pos_axes = [], [], []
    for a, valid in enumerate(_axis_valid(spec, lattice, level)):
        pos = np.flatnonzero(valid)
        if lattice == BASE:
            lo = pos * b
            width = b
        else:
            lo = (pos - 2) * b  # m - 1 = pos - 2
            width = 3 * b
        cols = lo[:, None] + np.arange(width)[None, :]
        m = (cols >= 0) & (cols < side)
        cols = np.where(m, cols, 0)
        T, K = cols.shape
        shape = [1] * (2 * n)
        shape[a], shape[n + a] = T, K
        stride = side ** (n - 1 - a)
        idx_parts.append((cols * stride).reshape(shape))
        mask_parts.append(m.reshape(shape))
        pos_axes.append(pos)
    index = sum(idx_parts[1:], idx_parts[0])
    mask = mask_parts[0]
    for m in mask_parts[1:]:
        mask = mask & m
    full = np.broadcast_shapes(index.shape, mask.shape)
    N = math.prod(full[:n])
    K = math.prod(full[n:])
    index = np.broadcast_to(index, full).reshape(N, K)
    mask = np.broadcast_to(mask, full).reshape(N, K)
    grids = np.meshgrid(*pos_axes, indexing="ij")
    positions = np.stack([g.ravel() for g in grids], axis=1)
    row_of = np.full(level_shape(spec, lattice, level), -1, dtype=np.int64)
    row_of[tuple(positions.T)] = np.arange(N)
    return LevelBlocks(index, mask, positions, row_of)


# ---------------------------------------------------------------------------
# functions and cell sets

class GridFunction:
    """Piecewise-constant function on the finest cells of a grid.

    ``values`` has shape ``spec.shape`` and is read-only.  A weight is a
    GridFunction with strictly positive values.
    """

    def __init__(self, spec: GridSpec, values, nonneg: bool = False):
        arr = np.array(values, dtype=float)
        if arr.size == 1 and arr.shape != spec.shape:
            arr = np.full(spec.shape, float(arr.reshape(())))
        if arr.shape != spec.shape:
            try:
                arr = arr.reshape(spec.shape)
            except ValueError:
                raise GridError(f"values of shape {np.shape(values)} do not fit grid {spec.shape}") from None
        if not np.all(np.isfinite(arr)):
            raise GridError("grid function values must be finite")
        if nonneg and np.any(arr < 0):
            raise GridError("nonnegative grid function has negative values")
        arr.setflags(write=False)
        self.spec = spec
        self.values = arr
        self.nonneg = bool(nonneg)

    @classmethod
    def constant(cls, spec: GridSpec, c: float) -> "GridFunction":
        return cls(spec, np.full(spec.shape, float(c)), nonneg=c >= 0)

    @classmethod
    def from_callable(cls, spec: GridSpec, func, nonneg: bool = False) -> "GridFunction":
        """Sample ``func(*coords)`` at cell midpoints."""
        vals = np.broadcast_to(func(*spec.midpoints()), spec.shape)
        return cls(spec, vals, nonneg=nonneg)

    @cached_property
    def pyramid(self) -> list[np.ndarray]:
        return build_pyramid(self.values)

    @property
    def is_weight(self) -> bool:
        return bool(np.all(self.values > 0))

    def integral(self) -> float:
        return float(self.pyramid[0].reshape(())) * self.spec.cell_volume

    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.spec != self.spec:
                raise GridError("grid mismatch")
            return other.values, other.nonneg
        return float(other), float(other) >= 0

    def __mul__(self, other):
        v, nn = self._other(other)
        return GridFunction(self.spec, self.values * v, nonneg=self.nonneg and nn)

    __rmul__ = __mul__

    def __truediv__(self, other):
        v, nn = self._other(other)
        return GridFunction(self.spec, self.values / v, nonneg=self.nonneg and nn)

    def __add__(self, other):
        v, nn = self._other(other)
        return GridFunction(self.spec, self.values + v, nonneg=self.nonneg and nn)

    __radd__ = __add__

    def __sub__(self, other):
        v, _ = self._other(other)
        return GridFunction(self.spec, self.values - v)

    def __abs__(self):
        return GridFunction(self.spec, np.abs(self.values), nonneg=True)

    def __pow__(self, p: float):
        return GridFunction(self.spec, np.abs(self.values) ** p, nonneg=True)

    def __repr__(self):
        return f"GridFunction(n={self.spec.n}, L={self.spec.L}, nonneg={self.nonneg})"

    # serialisation: header (n, L, lattice id) then row-major cell values

    _MAGIC = b"GRDF"

    def to_bytes(self, lattice: int = BASE) -> bytes:
        head = self._MAGIC + struct.pack("<iii", self.spec.n, self.spec.L, lattice)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridFunction":
        if data[:4] != cls._MAGIC:
            raise GridError("not a grid function blob")
        n, L, _lattice = struct.unpack("<iii", data[4:16])
        spec = GridSpec(n, L)
        vals = np.frombuffer(data[16:], dtype="<f8")
        if vals.size != spec.ncells:
            raise GridError(f"expected {spec.ncells} values, found {vals.size}")
        return cls(spec, vals.reshape(spec.shape))

    def to_csv(self, lattice: int = BASE) -> str:
        buf = io.StringIO()
        buf.write(f"# n={self.spec.n},L={self.spec.L},lattice={lattice}\n")
        for v in self.values.ravel():
            buf.write(repr(float(v)) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridFunction":
        lines = text.strip().splitlines()
        if not lines or not lines[0].startswith("#"):
            raise GridError("missing CSV header")
        head = dict(kv.split("=") for kv in lines[0][1:].strip().split(","))
        spec = GridSpec(int(head["n"]), int(head["L"]))
        vals = np.array([float(s) for s in lines[1:]])
        if vals.size != spec.ncells:
            raise GridError(f"expected {spec.ncells} values, found {vals.size}")
        return cls(spec, vals.reshape(spec.shape))


class CellSet:
    """A set of finest cells, stored as a boolean mask."""

    def __init__(self, spec: GridSpec, mask):
        m = np.array(mask, dtype=bool)
        if m.shape != spec.shape:
            m = m.reshape(spec.shape)
        m.setflags(write=False)
        self.spec = spec
        self.mask = m

    @classmethod
    def empty(cls, spec: GridSpec) -> "CellSet":
        return cls(spec, np.zeros(spec.shape, bool))

    @classmethod
    def from_cube(cls, spec: GridSpec, Q: DyadicCube) -> "CellSet":
        Q.validate(spec)
        m = np.zeros(spec.shape, bool)
        m[Q.slices(spec)] = True
        return cls(spec, m)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def measure(self) -> float:
        return self.count * self.spec.cell_volume

    def issubset(self, other: "CellSet") -> bool:
        return bool(np.all(~self.mask | other.mask))

    def isdisjoint(self, other: "CellSet") -> bool:
        return not bool(np.any(self.mask & other.mask))

    def __or__(self, other):
        return CellSet(self.spec, self.mask | other.mask)

    def __and__(self, other):
        return CellSet(self.spec, self.mask & other.mask)

    def __sub__(self, other):
        return CellSet(self.spec, self.mask & ~other.mask)

    def __eq__(self, other):
        return isinstance(other, CellSet) and self.spec == other.spec and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash((self.spec, self.mask.tobytes()))

    def runs(self) -> list[list[int]]:
        """Run-length encoding [[start, length], ...] over flat cell order."""
        flat = np.concatenate([[False], self.mask.ravel(), [False]])
        d = np.diff(flat.astype(np.int8))
        starts = np.flatnonzero(d == 1)
        ends = np.flatnonzero(d == -1)
        return [[int(s), int(e - s)] for s, e in zip(starts, ends)]

    @classmethod
    def from_runs(cls, spec: GridSpec, runs: Iterable[Sequence[int]]) -> "CellSet":
        flat = np.zeros(spec.ncells, bool)
        for s, length in runs:
            flat[s : s + length] = True
        return cls(spec, flat.reshape(spec.shape))


Region = Union[DyadicCube, CellSet]


def _check_same_grid(f: GridFunction, spec: GridSpec) -> None:
    if f.spec != spec:
        raise GridError(f"grid mismatch: function on {f.spec}, region on {spec}")


def integrate(f: GridFunction, Q: Region, compensated: bool = False) -> float:
    """Exact integral of f over a cube or a cell set."""
    if isinstance(Q, CellSet):
        _check_same_grid(f, Q.spec)
        vals = f.values[Q.mask]
        s = math.fsum(vals) if compensated else float(np.sum(vals))
        return s * f.spec.cell_volume
    Q.validate(f.spec)
    if compensated:
        return math.fsum(f.values[Q.slices(f.spec)].ravel()) * f.spec.cell_volume
    if Q.lattice == BASE:
        return float(f.pyramid[Q.level][Q.index]) * f.spec.cell_volume
    sums = lattice_sums(f.pyramid, Q.lattice, Q.level)
    return float(sums[cube_position(Q)]) * f.spec.cell_volume


def measure(Q: Region, spec: GridSpec) -> float:
    return Q.measure() if isinstance(Q, CellSet) else Q.volume(spec)


def average(f: GridFunction, Q: Region) -> float:
    vol = measure(Q, f.spec)
    if vol == 0:
        raise GridError("average over an empty region")
    return integrate(f, Q) / vol


def weighted_average(f: GridFunction, w: GridFunction, Q: Region) -> float:
    """(1/w(Q)) * integral of f w over Q."""
    wq = integrate(w, Q)
    if wq <= 0:
        raise GridError("w(Q) = 0")
    return integrate(f * w, Q) / wq


def p_average(f: GridFunction, Q: Region, p: float = 1.0, w: GridFunction | None = None) -> float:
    """((1/w(Q)) * integral of |f|^p w over Q)^(1/p); Lebesgue when w is None."""
    if p < 1:
        raise GridError(f"p must be >= 1, got {p}")
    g = abs(f) ** p
    m = average(g, Q) if w is None else weighted_average(g, w, Q)
    return m ** (1.0 / p)


# ---------------------------------------------------------------------------
# cube families

class CubeFamily:
    """A finite set of cubes of one lattice, kept as per-level masks."""

    def __init__(self, spec: GridSpec, lattice: int, masks: dict[int, np.ndarray]):
        _check_lattice(spec, lattice)
        self.spec = spec
        self.lattice = lattice
        self.masks = {}
        for level, m in sorted(masks.items()):
            m = np.asarray(m, bool) & level_valid(spec, lattice, level)
            if m.any():
                self.masks[level] = m

    @classmethod
    def full(cls, spec: GridSpec, lattice: int = BASE, levels: Iterable[int] | None = None) -> "CubeFamily":
        levels = range(spec.L + 1) if levels is None else levels
        return cls(spec, lattice, {l: level_valid(spec, lattice, l) for l in levels})

    @classmethod
    def from_cubes(cls, spec: GridSpec, cubes: Iterable[DyadicCube]) -> "CubeFamily":
        cubes = list(cubes)
        lattices = {Q.lattice for Q in cubes}
        if len(lattices) > 1:
            raise GridError("a CubeFamily holds cubes of a single lattice")
        lattice = lattices.pop() if lattices else BASE
        masks: dict[int, np.ndarray] = {}
        for Q in cubes:
            Q.validate(spec)
            m = masks.setdefault(Q.level, np.zeros(level_shape(spec, lattice, Q.level), bool))
            m[cube_position(Q)] = True
        return cls(spec, lattice, masks)

    def cubes(self) -> list[DyadicCube]:
        out = []
        for level, m in self.masks.items():
            out += [level_cube(self.spec, self.lattice, level, p) for p in zip(*np.nonzero(m))]
        return out

    def __len__(self):
        return int(sum(m.sum() for m in self.masks.values()))

    def __iter__(self):
        return iter(self.cubes())

    def describe(self) -> str:
        full = all(
            l in self.masks and self.masks[l].sum() == level_valid(self.spec, self.lattice, l).sum()
            for l in range(self.spec.L + 1)
        )
        name = "base" if self.lattice == BASE else f"lattice{self.lattice}"
        return name if full else f"{name}[{len(self)} cubes]"


FamilyLike = Union[None, str, CubeFamily, Sequence[CubeFamily]]


def as_families(spec: GridSpec, family: FamilyLike) -> list[CubeFamily]:
    """Normalise a family argument.

    ``None`` or ``"base"`` is the full base lattice, ``"all-shifted"`` the
    3^n tripled lattices, ``"all"`` both.
    """
    if family is None or family == "base":
        return [CubeFamily.full(spec, BASE)]
    if family == "all-shifted":
        return [CubeFamily.full(spec, j) for j in shifted_lattices(spec)]
    if family == "all":
        return [CubeFamily.full(spec, j) for j in spec.lattices()]
    if isinstance(family, str):
        raise GridError(f"unknown family {family!r}")
    fams = [family] if isinstance(family, CubeFamily) else list(family)
    if not fams:
        raise GridError("empty family")
    for F in fams:
        if F.spec != spec:
            raise GridError("family lives on a different grid")
    return fams


def describe_families(fams: Sequence[CubeFamily]) -> str:
    return "+".join(F.describe() for F in fams)
