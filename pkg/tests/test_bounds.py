import math

import numpy as np
import pytest

from sparsemix.bounds import (
    BOUNDS,
    BoundError,
    BoundInputs,
    DivergenceError,
    DoubleSumParams,
    double_sum,
    phi_rho,
    reduction_budget_check,
    theorem_bound,
)

LOG_E1 = math.log(math.e + 1)


def test_all_ones_bounds():
    B = BoundInputs()
    assert LOG_E1 == pytest.approx(1.31326, abs=1e-5)
    for key, fn in BOUNDS.items():
        assert fn(B) == pytest.approx(LOG_E1, rel=1e-14), key
    for r in (1.5, 2.0, 5.0):
        assert theorem_bound(1, "commutator", B.with_(m=0, r=r)) == pytest.approx(LOG_E1, rel=1e-14)


@pytest.mark.parametrize("key", sorted(BOUNDS))
def test_bounds_increase_with_ainf_uv(key):
    base = BoundInputs(a1_u=1.3, a1_v=1.2, ainf_u=1.1, ainf_v=1.4, ap_v_u=1.5, a1_u_v=1.6, m=2)
    vals = [BOUNDS[key](base.with_(ainf_uv=x)) for x in np.linspace(1, 2, 11)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_bound_inputs_validation():
    assert BoundInputs(a1_u=1 - 1e-13).a1_u == 1.0
    with pytest.raises(BoundError):
        BoundInputs(a1_u=0.9)
    with pytest.raises(BoundError):
        BoundInputs(p=1.0)
    with pytest.raises(BoundError):
        BoundInputs(m=-1)
    with pytest.raises(BoundError):
        theorem_bound(3, "cz", BoundInputs())


def test_phi_rho():
    assert phi_rho(1.0, 0.7) == 1.0
    assert phi_rho(math.e, 0.5) == pytest.approx(math.e * 2**0.5)
    assert phi_rho(0.5, 3.0) == 0.5


def brute_double_sum(P, K, J):
    total = 0.0
    for k in range(K):
        for j in range(J):
            a = P.gamma1 * 2.0**-k * (j**P.rho1 if P.rho1 else 1.0)
            b = P.beta * P.gamma2 * 2.0**-j * 2.0**-k * 2.0 ** (P.delta * k) * (k**P.rho2 if P.rho2 else 1.0)
            total += min(a, b)
    return total


def test_double_sum_brute_force():
    P = DoubleSumParams(2.0, 2.0, 1.0, K=64, J=64)
    res = double_sum(P)
    assert res.total == pytest.approx(brute_double_sum(P, 64, 64), rel=1e-12)
    assert res.tail <= 0.5
    assert res.tail_ok


def test_double_sum_beta_zero_and_scaling():
    res = double_sum(DoubleSumParams(3.0, 5.0, 0.0))
    assert res.tail == 0.0 and res.total == res.head
    P1 = DoubleSumParams(3.0, 5.0, 1.0, delta=1.0, rho2=0.5)
    P2 = DoubleSumParams(3.0, 5.0, 2.0, delta=1.0, rho2=0.5)
    assert double_sum(P2).tail <= 2 * double_sum(P1).tail_bound


def test_double_sum_divergence_detected():
    with pytest.raises(DivergenceError):
        double_sum(DoubleSumParams(3.0, 5.0, 1.0, delta=3.0, rho1=1.0, K=16, J=16))


def test_budget_check():
    chk = reduction_budget_check(1.0, 0.5, 1.0)
    assert chk.premise and chk.ok
    assert reduction_budget_check(1.0, 0.5, 0.0).ok
    assert reduction_budget_check(1.0, 0.1, 5.0).ok  # premise fails, nothing to conclude
