import math

import numpy as np
import pytest
from scipy.optimize import brentq

from sparsemix.experiments import power_weight
from sparsemix.grid import CubeFamily, GridFunction, GridSpec, base_cube
from sparsemix.orlicz import (
    ExpLr,
    LLogL,
    Power,
    Powered,
    Scaled,
    cont_avg_check,
    convexity_check,
    holder_check,
    kr_norm,
    luxemburg_norm,
    measured_kappa,
    orlicz_maximal,
    osc_lemma_check,
    osc_norm,
    parse_young,
)
from sparsemix.weights import dyadic_maximal


def left_half(spec):
    return GridFunction(spec, (spec.midpoints()[0] < 0.5).astype(float), nonneg=True)


def test_young_values():
    for rho in (0.0, 0.5, 1.0, 2.0):
        assert LLogL(rho)(1.0) == pytest.approx(1.0)
    assert ExpLr(2.0)(1.0) == pytest.approx(math.e - 1, rel=1e-15)
    assert LLogL(0.5)(math.e) == pytest.approx(math.e * 2**0.5, rel=1e-15)
    assert LLogL(1.0)(math.e**2) == pytest.approx(3 * math.e**2, rel=1e-15)


def test_young_text_round_trip():
    for A in (Power(2.0), LLogL(0.5), ExpLr(2.0), Scaled(3.2, Powered(2.0, LLogL(0.5)))):
        assert parse_young(A.text()) == A
    assert Scaled(3.2, Powered(2.0, LLogL(0.5))).text() == "scaled:3.2:pow:2:llogl:0.5"
    with pytest.raises(ValueError):
        parse_young("llogl")
    with pytest.raises(ValueError):
        parse_young("bogus:1")


def test_convexity_and_kappa():
    assert convexity_check(LLogL(0.5))
    assert convexity_check(ExpLr(2.0))
    assert not convexity_check(ExpLr(0.5))
    assert measured_kappa(LLogL(0.5)) <= 1.0 + 1e-12


def test_luxemburg_analytic_cases():
    spec = GridSpec(1, 4)
    c = GridFunction.constant(spec, 3.0)
    assert luxemburg_norm(c, Power(1.0)).value == pytest.approx(3.0, rel=1e-11)
    A = ExpLr(2.0)
    assert luxemburg_norm(c, A).value == pytest.approx(3.0 / A.inverse(1.0), rel=1e-11)
    chi = left_half(spec)
    assert luxemburg_norm(chi, Power(2.0)).value == pytest.approx(2**-0.5, rel=1e-11)
    oracle = 1 / brentq(lambda s: 0.5 * (math.exp(s) - 1) - 1, 0.1, 10)
    assert oracle == pytest.approx(1 / math.log(3), rel=1e-12)
    assert luxemburg_norm(chi, ExpLr(1.0)).value == pytest.approx(oracle, rel=1e-10)


def test_kr_norm_cases():
    spec = GridSpec(1, 4)
    assert kr_norm(GridFunction.constant(spec, 0.0), Power(2.0)) == 0.0
    assert kr_norm(GridFunction.constant(spec, 1.0), Power(1.0)) == pytest.approx(1.0, rel=1e-5)
    chi = left_half(spec)
    k = kr_norm(chi, Power(2.0))
    assert 2**-0.5 * (1 - 1e-9) <= k <= 2 * 2**-0.5 * (1 + 1e-9)


def test_holder_cases():
    spec = GridSpec(1, 5)
    one = GridFunction.constant(spec, 1.0)
    chk = holder_check(one, one, Power(2.0), Power(2.0))
    assert chk.lhs == pytest.approx(1.0) and chk.rhs == pytest.approx(2.0) and chk.holds
    chi = left_half(spec)
    rest = GridFunction(spec, 1.0 - chi.values, nonneg=True)
    assert holder_check(chi, rest, Power(3.0), Power(1.5)).lhs == 0.0
    rng = np.random.default_rng(0)
    for _ in range(1000):
        f = GridFunction(spec, rng.choice([-1.0, 1.0], spec.shape))
        g = GridFunction(spec, rng.choice([-1.0, 1.0], spec.shape))
        assert holder_check(f, g, LLogL(1.0), ExpLr(1.0)).holds
    with pytest.raises(ValueError):
        holder_check(one, one, Power(2.0), Power(3.0))


def brute_orlicz_maximal(f, A, spec):
    out = np.zeros(spec.shape)
    for Q in CubeFamily.full(spec).cubes():
        sl = Q.slices(spec)
        vals = f.values[sl]
        if not vals.any():
            continue
        lam = brentq(lambda s: np.mean(A(vals / s)) - 1, 1e-9, 1e6, xtol=1e-15, rtol=1e-14)
        out[sl] = np.maximum(out[sl], lam)
    return out


def test_orlicz_maximal_cases():
    spec = GridSpec(1, 4)
    c = GridFunction.constant(spec, 2.0)
    A = LLogL(1.0)
    assert np.allclose(orlicz_maximal(c, A).values, 2.0 / A.inverse(1.0))
    rng = np.random.default_rng(1)
    f = GridFunction(spec, rng.random(spec.shape), nonneg=True)
    assert np.allclose(orlicz_maximal(f, Power(1.0)).values, dyadic_maximal(f).values, rtol=1e-11)
    g = GridFunction(spec, (spec.midpoints()[0] < 0.25).astype(float), nonneg=True)
    assert np.allclose(orlicz_maximal(g, A).values, brute_orlicz_maximal(g, A, spec), rtol=1e-10)


def test_osc_norm_cases():
    spec = GridSpec(1, 4)
    assert osc_norm(GridFunction.constant(spec, 5.0), 2.0) == 0.0
    b = left_half(spec)
    # only Q0 sees oscillation: |chi - 1/2| = 1/2 everywhere, so the norm solves e^(1/(2s)) - 1 = 1
    assert osc_norm(b, 1.0) == pytest.approx(1 / (2 * math.log(2)), rel=1e-10)
    assert osc_norm(b * 3.0, 1.0) == pytest.approx(3 * osc_norm(b, 1.0), rel=1e-10)


def test_osc_lemma_cases():
    spec = GridSpec(1, 6)
    one = GridFunction.constant(spec, 1.0)
    assert osc_lemma_check(GridFunction.constant(spec, 2.0), 2.0, 1.0, one).lhs == 0.0
    b = GridFunction.from_callable(spec, lambda x: np.log(x))
    chk = osc_lemma_check(b, 2.0, 1.0, one)
    assert chk.lhs <= osc_norm(b, 2.0) * (1 + 1e-9)
    ratios = [osc_lemma_check(b, 2.0, 1.0, power_weight(spec, -a)).ratio for a in (0.0, 0.25, 0.5)]
    assert all(np.isfinite(ratios)) and max(ratios) < 10


def test_cont_avg_cases():
    spec = GridSpec(1, 6)
    one = GridFunction.constant(spec, 1.0)
    rng = np.random.default_rng(2)
    f = GridFunction(spec, rng.random(spec.shape), nonneg=True)
    assert cont_avg_check(f, Power(1.0), 3.0, one, one, base_cube(1)).holds
    chk = cont_avg_check(f, LLogL(0.5), 2.0, one, power_weight(spec, -0.5))
    assert chk.holds
    assert chk.checked == 2**7 - 1
    c = GridFunction.constant(spec, 4.0)
    a = cont_avg_check(c, Power(1.0), 2.0, one, one, base_cube(1))
    b = cont_avg_check(c * 2.0, Power(1.0), 2.0, one, one, base_cube(1))
    assert b.lhs == pytest.approx(2 * a.lhs, rel=1e-10) and b.rhs == pytest.approx(2 * a.rhs, rel=1e-10)
