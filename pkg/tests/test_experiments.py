import json
import math

import numpy as np
import pytest

from sparsemix.experiments import (
    CSV_COLUMNS,
    BoundReport,
    Config,
    ConfigError,
    Scenario,
    endpoint_modular_commutator,
    endpoint_ratio_cz,
    endpoint_ratio_rough,
    exact_weak_sup,
    good_set,
    parse_config,
    power_weight,
    random_martingale,
    resolve,
    reports_to_csv,
    run,
    run_scenario,
    smoke_config_path,
    step_weight,
    stratum_estimates,
)
from sparsemix.grid import GridError, GridFunction, GridSpec, base_cube
from sparsemix.sparse import SparseFamily, sparse_operator
from sparsemix.weights import dyadic_maximal

G6 = GridSpec(1, 6)


def scenario(**kw):
    return Scenario.from_dict({"id": "s", **kw}, G6)


def test_good_set_trivial_cases():
    spec = GridSpec(1, 3)
    one = GridFunction.constant(spec, 1.0)
    zero = GridFunction.constant(spec, 0.0)
    assert good_set(zero, one, zero, 1.0).count == 0
    assert good_set(one * 5.0, one, one * 3.0, 1.0).count == 0
    with pytest.raises(GridError):
        good_set(one, zero, one, 1.0)


def test_good_set_single_cube_by_hand():
    # S = {Q0}, f = indicator of [0, 1/4): A_S f = 1/4 everywhere, M f = 1, 1/2, 1/4, 1/4 on the quarters
    spec = GridSpec(1, 3)
    one = GridFunction.constant(spec, 1.0)
    f = GridFunction(spec, [1, 1, 0, 0, 0, 0, 0, 0], nonneg=True)
    S = SparseFamily(spec, [base_cube(1)])
    A = sparse_operator(S, f)
    M = dyadic_maximal(f)
    assert np.allclose(A.values, 0.25)
    assert np.allclose(M.values, [1, 1, 0.5, 0.5, 0.25, 0.25, 0.25, 0.25])
    # the maximal function dominates a single average, so nothing survives
    for t in (0.1, 0.2, 0.3):
        assert good_set(A, one, M, t).count == 0
    # with no maximal function removed the set is {A > t}
    assert good_set(A, one, GridFunction.constant(spec, 0.0), 0.2).count == 8
    assert good_set(A, one, GridFunction.constant(spec, 0.0), 0.25).count == 0


def test_exact_weak_sup():
    H = np.array([3.0, 1.0, 2.0, 2.0])
    mass = np.full(4, 0.25)
    sup = exact_weak_sup(H, mass)
    # t -> 2 from below: 2 * 0.75 = 1.5 beats 3 * 0.25 and 1 * 1
    assert sup.value == pytest.approx(1.5)
    assert sup.t_star == 2.0
    assert 1.0 < sup.t_eval < 2.0


def test_cz_single_cube_measured_one():
    for f in ({"kind": "random", "seed": 4}, {"kind": "indicator", "lo": 0.25, "hi": 0.5}):
        rep = endpoint_ratio_cz(scenario(f=f, family={"kind": "single"}))
        assert rep.measured == pytest.approx(1.0, rel=1e-12)
        assert rep.theoretical == pytest.approx(math.log(math.e + 1), rel=1e-12)


def test_cz_homogeneity():
    base = dict(u={"kind": "power", "a": -0.25}, v={"kind": "power", "a": -0.25},
                f={"kind": "random", "seed": 5})
    sc = scenario(**base)
    a = endpoint_ratio_cz(sc).measured
    R = resolve(sc)
    R.f = R.f * 1000.0
    b = endpoint_ratio_cz(sc, R).measured
    assert b == pytest.approx(a, rel=1e-9)


def test_cz_unweighted_sweep_fit_and_holdout():
    # u = v = 1, random stopping families: fit c on half, check the other half
    scs = []
    for s in range(50):
        role = "calibrate" if s < 25 else "holdout"
        scs.append(scenario(id=f"s{s}", f={"kind": "random", "seed": s, "bumps": 6},
                            family={"kind": "stopping", "a": 2.0 + (s % 3)},
                            cpolicy={"kind": "fit", "group": "flat", "role": role}))
    reps = run(Config(G6, scs))
    c = reps[0].c_used
    assert all(r.constants["a1_u"].value == 1.0 for r in reps)
    assert math.isfinite(c) and c > 0
    assert sum(not r.bound_ok for r in reps[25:]) == 0


def test_commutator_trivial_cases():
    sc = scenario(operator={"kind": "commutator", "m": 1, "b": {"kind": "const", "c": 2.0}},
                  f={"kind": "random", "seed": 1})
    assert endpoint_modular_commutator(sc).measured == 0.0
    for seed in (1, 2, 3):
        common = dict(u={"kind": "power", "a": -0.25}, f={"kind": "random", "seed": seed})
        m0 = endpoint_modular_commutator(scenario(operator={"kind": "commutator", "m": 0}, **common)).measured
        cz = endpoint_ratio_cz(scenario(**common)).measured
        assert m0 == pytest.approx(cz, rel=1e-12)
    with pytest.raises(ConfigError):
        endpoint_modular_commutator(scenario(operator={"kind": "commutator", "m": 1, "r": 1.0}))


def test_commutator_checks_pass():
    sc = scenario(u={"kind": "power", "a": -0.25},
                  operator={"kind": "commutator", "m": 2, "b": {"kind": "log", "scale": 0.5}},
                  f={"kind": "random", "seed": 8}, family={"kind": "chain"})
    rep = endpoint_modular_commutator(sc)
    assert all(rep.checks.values()), rep.checks
    assert math.isfinite(rep.measured) and rep.measured > 0


def test_rough_checks_and_flat_weights():
    for th in (1, 2):
        sc = scenario(theorem=th, operator={"kind": "rough"}, f={"kind": "indicator", "lo": 0, "hi": 0.5},
                      family={"kind": "chain"}, u={"kind": "power", "a": -0.25})
        rep = endpoint_ratio_rough(sc)
        assert rep.checks["factorisation"] and rep.checks["absorption"] and rep.checks["strata_sum"]
        assert 1 < rep.details["s"] <= 2
    flat = endpoint_ratio_rough(scenario(operator={"kind": "rough"}, f={"kind": "random", "seed": 2}))
    assert flat.details["s"] == 2.0
    assert math.isfinite(flat.measured)


def test_stratum_estimates_cases():
    top = lambda k, j: 2.0**-k
    bottom = lambda k, j: 2.0**-j
    rows, total = stratum_estimates([], [], [], [], top, bottom)
    assert rows == [] and total == 0.0
    rows, total = stratum_estimates(["Q"], [0.5], [0.3], [0.5 * 0.3 * 0.25], top, bottom)
    assert len(rows) == 1 and rows[0]["s"] == pytest.approx(0.5 * 0.3 * 0.25)
    assert (rows[0]["k"], rows[0]["j"]) == (1, 1)
    assert rows[0]["envelope"] == min(rows[0]["top"], rows[0]["bottom"])


def test_strata_sum_consistency_everywhere():
    scs = [
        scenario(id="a", u={"kind": "power", "a": -0.25}, f={"kind": "random", "seed": 1}, family={"kind": "chain"}),
        scenario(id="b", theorem=2, u={"kind": "step", "values": [1, 3, 2, 5]}, v={"kind": "power", "a": -0.25},
                 f={"kind": "random", "seed": 2}),
        scenario(id="c", operator={"kind": "commutator", "m": 1}, f={"kind": "random", "seed": 3}),
    ]
    for sc in scs:
        rep = run_scenario(sc)
        assert rep.checks["strata_sum"]
        assert math.isfinite(rep.measured) and math.isfinite(rep.theoretical)


def test_chain_with_nonempty_good_set_has_strata():
    sc = scenario(theorem=1, u={"kind": "power", "a": -0.25}, f={"kind": "indicator", "lo": 0, "hi": 0.5},
                  family={"kind": "chain"}, tgrid={"kind": "log", "min": 6.0, "max": 8.0, "count": 5})
    rep = endpoint_ratio_cz(sc)
    assert rep.details["uv_G"] > 0
    assert rep.strata
    assert rep.checks["chain_operator"] and rep.checks["chain_weight"]


def test_weight_generators():
    spec = GridSpec(2, 4)
    w = random_martingale(spec, 3, 4, 0.5)
    assert w.is_weight and w.values.mean() == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        power_weight(G6, -1.0)
    with pytest.raises(ConfigError):
        step_weight(G6, [1.0, 2.0, 3.0])
    with pytest.raises(ConfigError):
        random_martingale(G6, 0, 3, 1.0)


def test_eps_sensitivity_recorded():
    sc = scenario(u={"kind": "power", "a": -0.5}, f={"kind": "random", "seed": 1}, sensitivity=True)
    rep = run_scenario(sc)
    assert {"measured_eps_L", "measured_eps_3L"} <= set(rep.details)


def test_config_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match=r"line 3, column"):
        parse_config('{\n "grid": {"n": 1, "L": 4},\n "scenarios": [,]\n}')
    text = '{\n "grid": {"n": 1, "L": 4},\n "scenarios": [\n  {"id": "bad",\n   "operator": {"kind": "nope"}}\n ]\n}'
    with pytest.raises(ConfigError, match=r"line 4: .*bad"):
        parse_config(text)
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(json.dumps({"scenarios": [{"id": "a"}, {"id": "a"}]}))
    with pytest.raises(ConfigError, match="no calibration"):
        run(parse_config(json.dumps({"grid": {"n": 1, "L": 4}, "scenarios": [
            {"id": "a", "cpolicy": {"kind": "fit", "group": "g", "role": "holdout"}}]})))


def test_empty_config_runs():
    assert run(parse_config('{"grid": {"n": 1, "L": 4}, "scenarios": []}')) == []
    assert reports_to_csv([]).strip() == ",".join(CSV_COLUMNS)


def test_smoke_config_reports_and_json_round_trip(monkeypatch):
    reps = run(smoke_config_path())
    assert len(reps) == 3
    assert all(r.passed for r in reps)
    back = [BoundReport.from_json(json.loads(json.dumps(r.to_json()))) for r in reps]
    assert reports_to_csv(back) == reports_to_csv(reps)
    monkeypatch.setenv("THREADS", "3")
    assert reports_to_csv(run(smoke_config_path())) == reports_to_csv(reps)
