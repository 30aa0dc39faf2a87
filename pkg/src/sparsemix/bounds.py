"""Closed-form endpoint bounds and the double-sum estimate.

All logarithms in the endpoint bounds are natural.  The double-sum split
index uses log2, as in its definition.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

E = math.e
CONST_TOL = 1e-12


class BoundError(ValueError):
    """Invalid inputs for a bound expression."""


def phi_rho(t, rho: float):
    """t (1 + log+ t)^rho."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise BoundError("phi_rho takes t >= 0")
    out = t * (1.0 + np.log(np.maximum(t, 1.0))) ** rho
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BoundInputs:
    """Weight constants and parameters entering the endpoint bounds.

    Constants below 1 by more than 1e-12 are rejected; values within that
    rounding margin are lifted to 1.
    """

    a1_u: float = 1.0
    a1_v: float = 1.0
    ainf_uv: float = 1.0
    ainf_u: float = 1.0
    ainf_v: float = 1.0
    ap_v_u: float = 1.0
    a1_u_v: float = 1.0
    p: float = 2.0
    m: int = 0
    r: float = 2.0
    c: float = 1.0

    CONSTANTS = ("a1_u", "a1_v", "ainf_uv", "ainf_u", "ainf_v", "ap_v_u", "a1_u_v")

    def __post_init__(self):
        for name in self.CONSTANTS:
            x = float(getattr(self, name))
            if not math.isfinite(x) or x < 1 - CONST_TOL:
                raise BoundError(f"{name} = {x} must be a finite constant >= 1")
            object.__setattr__(self, name, max(x, 1.0))
        if self.p <= 1:
            raise BoundError(f"p must exceed 1, got {self.p}")
        if int(self.m) != self.m or self.m < 0:
            raise BoundError(f"m must be a nonnegative integer, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        if self.r <= 1:
            raise BoundError(f"r must exceed 1, got {self.r}")
        if self.c <= 0:
            raise BoundError(f"c must be positive, got {self.c}")

    def with_(self, **kw) -> "BoundInputs":
        return replace(self, **kw)

    def to_json(self) -> dict:
        return asdict(self)


def thm1_cz_bound(B: BoundInputs) -> float:
    """c [uv]_Ainf [u]_A1 log(e + [uv]_Ainf [u]_A1 [v]_Ap(u))."""
    x = B.ainf_uv * B.a1_u
    return B.c * x * math.log(E + x * B.ap_v_u)


def thm1_comm_gamma(B: BoundInputs) -> float:
    """c times the sum over h = 0..m of the commutator terms for u in A1, v in Ap(u)."""
    total = 0.0
    for h in range(B.m + 1):
        x = B.a1_u * B.ainf_uv ** (1 + h / B.r) * B.ainf_u ** ((B.m - h) / B.r)
        total += x * math.log(E + x * B.ap_v_u) ** (1 + h / B.r)
    return B.c * total


def thm1_rough_bound(B: BoundInputs) -> float:
    """c [uv]_Ainf [u]_A1 [u]_Ainf log(e + [uv]_Ainf [u]_A1 [u]_Ainf [v]_Ap(u))."""
    x = B.ainf_uv * B.a1_u * B.ainf_u
    return B.c * x * math.log(E + x * B.ap_v_u)


def thm2_cz_bound(B: BoundInputs) -> float:
    """c [v]_A1 [v]_Ainf [u]_A1(v) log(e + [uv]_Ainf [v]_A1)."""
    return B.c * B.a1_v * B.ainf_v * B.a1_u_v * math.log(E + B.ainf_uv * B.a1_v)


def thm2_comm_gamma(B: BoundInputs) -> float:
    """c times the sum over h = 0..m of the commutator terms for v in A1, u in A1(v)."""
    total = 0.0
    for h in range(B.m + 1):
        x = B.a1_v * B.ainf_v ** (h / B.r) * B.ainf_uv ** ((B.m - h) / B.r)
        total += x * B.a1_u_v * B.ainf_v * math.log(E + x) ** (1 + h / B.r)
    return B.c * total


def thm2_rough_bound(B: BoundInputs) -> float:
    """c [uv]_Ainf [v]_A1 [u]_A1(v) [v]_Ainf log(e + [uv]_Ainf [v]_A1)."""
    return B.c * B.ainf_uv * B.a1_v * B.a1_u_v * B.ainf_v * math.log(E + B.ainf_uv * B.a1_v)


BOUNDS = {
    (1, "cz"): thm1_cz_bound,
    (1, "commutator"): thm1_comm_gamma,
    (1, "rough"): thm1_rough_bound,
    (2, "cz"): thm2_cz_bound,
    (2, "commutator"): thm2_comm_gamma,
    (2, "rough"): thm2_rough_bound,
}


def theorem_bound(theorem: int, operator: str, B: BoundInputs) -> float:
    try:
        return BOUNDS[(theorem, operator)](B)
    except KeyError:
        raise BoundError(f"no bound for theorem {theorem}, operator {operator!r}") from None


# ---------------------------------------------------------------------------
# double sum

class DivergenceError(RuntimeError):
    """The truncated double sum did not stabilise under doubling."""


@dataclass(frozen=True)
class DoubleSumParams:
    gamma1: float
    gamma2: float
    beta: float
    delta: float = 0.0
    rho1: float = 0.0
    rho2: float = 0.0
    gamma: float = 1.0
    K: int = 128
    J: int = 128

    def __post_init__(self):
        if self.gamma1 <= 1 or self.gamma2 <= 1:
            raise BoundError("gamma1 and gamma2 must exceed 1")
        if self.beta < 0 or min(self.delta, self.rho1, self.rho2) < 0:
            raise BoundError("beta, delta, rho1, rho2 must be >= 0")
        if self.gamma < 1:
            raise BoundError("gamma must be >= 1")
        if self.K < 1 or self.J < 1:
            raise BoundError("truncation must be positive")


@dataclass(frozen=True)
class DoubleSumResult:
    total: float
    tail: float
    head: float
    tail_bound: float
    head_constant: float
    split0: int
    split_slope: int

    @property
    def tail_ok(self) -> bool:
        return self.tail <= self.tail_bound

    def split(self, k: int) -> int:
        return self.split0 + self.split_slope * k


def _log2_pow(x: np.ndarray, rho: float) -> np.ndarray:
    # log2(x^rho) with 0^0 = 1 and 0^rho = 0 for rho > 0
    if rho == 0:
        return np.zeros_like(x, dtype=float)
    with np.errstate(divide="ignore"):
        return rho * np.log2(x.astype(float))


def alpha_matrix(P: DoubleSumParams, K: int, J: int) -> np.ndarray:
    """alpha[k, j] = min(g1 2^-k j^rho1, beta g2 2^-j 2^-k 2^(delta k) k^rho2), evaluated in log2."""
    k = np.arange(K)[:, None]
    j = np.arange(J)[None, :]
    first = math.log2(P.gamma1) - k + _log2_pow(j, P.rho1)
    if P.beta == 0:
        second = np.full((K, J), -np.inf)
    else:
        second = math.log2(P.beta * P.gamma2) - j - k + P.delta * k + _log2_pow(k, P.rho2)
    return np.exp2(np.minimum(first, second))


def split_index(P: DoubleSumParams) -> tuple[int, int]:
    """(j0, s) with the split j*(k) = j0 + s k, j0 = ceil(log2((e + g2) 8 gamma))."""
    X = (E + P.gamma2) * 8 * P.gamma
    j0 = math.ceil(math.log2(X))
    while 2.0**j0 < X:
        j0 += 1
    while 2.0 ** (j0 - 1) >= X:
        j0 -= 1
    return j0, math.ceil(P.delta + P.rho2) + 1


def double_sum(P: DoubleSumParams, stability: float = 1e-12) -> DoubleSumResult:
    """Truncated double sum, split into the tail j >= j*(k) and the head.

    The tail is compared with beta/(2 gamma); the head is normalised by
    gamma1 log(e + gamma2)^(1 + rho1).  Doubling K and J must change the
    total by less than ``stability`` relative, otherwise DivergenceError.
    """
    a = alpha_matrix(P, P.K, P.J)
    total = float(a.sum())
    big = float(alpha_matrix(P, 2 * P.K, 2 * P.J).sum())
    if not math.isfinite(big) or abs(big - total) > stability * max(total, 1e-300):
        raise DivergenceError(f"double sum not stable under doubling: {total} vs {big}")
    j0, s = split_index(P)
    k = np.arange(P.K)[:, None]
    j = np.arange(P.J)[None, :]
    tail = float(a[j >= j0 + s * k].sum())
    head = total - tail
    norm = P.gamma1 * math.log(E + P.gamma2) ** (1 + P.rho1)
    return DoubleSumResult(total, tail, head, P.beta / (2 * P.gamma), head / norm, j0, s)


# ---------------------------------------------------------------------------
# good-set bootstrap

@dataclass(frozen=True)
class BudgetCheck:
    ok: bool
    X: float
    a: float
    premise: bool


def reduction_budget_check(kappa: float, modular: float, uv_G: float) -> BudgetCheck:
    """If X <= a + X/2 with a = kappa * modular and X = uv(G), then X <= 2a.

    Returns the premise and the conclusion; ``ok`` means the implication
    holds for the measured numbers.
    """
    a = kappa * modular
    X = uv_G
    premise = X <= a + X / 2
    conclusion = X <= 2 * a
    return BudgetCheck(ok=(not premise) or conclusion, X=X, a=a, premise=premise)
