import numpy as np
import pytest

from sparsemix.experiments import power_weight
from sparsemix.grid import CellSet, DyadicCube, GridFunction, GridSpec, base_cube
from sparsemix.orlicz import LLogL, Power, luxemburg_norm
from sparsemix.sparse import (
    SparseError,
    SparseFamily,
    commutator_sparse,
    cz_stopping_family,
    default_selection,
    disjointify,
    dyadic_bin,
    layer_decompose,
    minimal_decay_depth,
    orlicz_maximal_weaktype_check,
    rough_bilinear,
    sparse_operator,
    stratify,
    union_mass_check,
    verify_sparseness,
)


def chain(depth, n=1):
    return [DyadicCube(l, (0,) * n) for l in range(depth + 1)]


def test_sparseness_examples():
    spec = GridSpec(1, 4)
    anti = [DyadicCube(2, (0,)), DyadicCube(2, (3,))]
    sel = {Q: CellSet.from_cube(spec, Q) for Q in anti}
    assert verify_sparseness(spec, anti, sel, 1.0).achieved_eta == 1.0
    cubes = chain(2)
    sel = {Q: CellSet.from_cube(spec, Q) - (CellSet.from_cube(spec, R) if R else CellSet.empty(spec))
           for Q, R in zip(cubes, cubes[1:] + [None])}
    rep = verify_sparseness(spec, cubes, sel, 0.5)
    assert rep.ok and rep.achieved_eta == 0.5
    _, eta = default_selection(spec, anti)
    assert eta == 1.0
    _, eta = default_selection(spec, chain(3))
    assert eta == 0.5


def test_stopping_family_examples():
    spec = GridSpec(1, 6)
    assert cz_stopping_family(GridFunction.constant(spec, 1.0), 2.0).cubes == [base_cube(1)]
    f = GridFunction(spec, (spec.midpoints()[0] < 2**-3).astype(float), nonneg=True)
    S = cz_stopping_family(f, 2.0, strict=False)
    assert S.cubes == chain(3)
    rng = np.random.default_rng(0)
    for _ in range(100):
        g = GridFunction(spec, rng.exponential(size=spec.shape) * (rng.random(spec.shape) < 0.3), nonneg=True)
        if not g.values.any():
            continue
        S = cz_stopping_family(g, 2.0)
        assert S.achieved_eta >= 0.5


def test_sparse_operator_examples():
    spec = GridSpec(1, 6)
    x = GridFunction.from_callable(spec, lambda x: x, nonneg=True)
    S = SparseFamily(spec, [base_cube(1)])
    assert np.allclose(sparse_operator(S, x).values, x.values.mean())
    S2 = SparseFamily(spec, [DyadicCube(1, (0,)), DyadicCube(2, (3,))])
    out = sparse_operator(S2, x).values
    assert np.allclose(out[:32], x.values[:32].mean())
    assert np.allclose(out[48:], x.values[48:].mean())
    assert np.all(out[32:48] == 0)
    S3 = SparseFamily(spec, chain(6))
    ref = np.zeros(spec.shape)
    for Q in S3.cubes:
        sl = Q.slices(spec)
        ref[sl] += x.values[sl].mean()
    assert np.allclose(sparse_operator(S3, x).values, ref, rtol=1e-13)


def test_commutator_examples():
    spec = GridSpec(1, 5)
    S = SparseFamily(spec, chain(3))
    rng = np.random.default_rng(1)
    f = GridFunction(spec, rng.random(spec.shape), nonneg=True)
    assert np.all(commutator_sparse(S, GridFunction.constant(spec, 2.0), f, 1, 0).values == 0)
    assert np.allclose(commutator_sparse(S, f, f, 0, 0).values, sparse_operator(S, f).values)
    b = GridFunction(spec, (spec.midpoints()[0] < 0.5).astype(float))
    single = SparseFamily(spec, [base_cube(1)])
    assert np.allclose(commutator_sparse(single, b, GridFunction.constant(spec, 1.0), 1, 0).values, 0.5)


def test_rough_bilinear_examples():
    spec = GridSpec(1, 5)
    one = GridFunction.constant(spec, 1.0)
    single = SparseFamily(spec, [base_cube(1)])
    assert rough_bilinear(single, one, one, 2.0) == pytest.approx(1.0)
    E = GridFunction(spec, (spec.midpoints()[0] < 0.25).astype(float))
    assert rough_bilinear(single, one, E, 3.0) == pytest.approx(0.25 ** (1 / 3))
    rng = np.random.default_rng(2)
    for _ in range(10):
        g0 = GridFunction(spec, rng.random(spec.shape) * (rng.random(spec.shape) < 0.4), nonneg=True)
        if not g0.values.any():
            continue
        S = cz_stopping_family(g0, 2.0)
        f = GridFunction(spec, rng.normal(size=spec.shape))
        g = GridFunction(spec, rng.normal(size=spec.shape))
        r = float(rng.uniform(1.1, 3))
        ref = 0.0
        for Q in S.cubes:
            sl = Q.slices(spec)
            vol = Q.volume(spec)
            ref += np.abs(f.values[sl]).mean() * (np.abs(g.values[sl]) ** r).mean() ** (1 / r) * vol
        assert rough_bilinear(S, f, g, r) == pytest.approx(ref, rel=1e-12)


def test_bins_and_stratify():
    assert dyadic_bin(0.6) == 0
    assert dyadic_bin(0.25) == 2
    assert dyadic_bin(1.0) == 0
    with pytest.raises(SparseError):
        dyadic_bin(0.0)
    spec = GridSpec(1, 5)
    S = SparseFamily(spec, chain(5))
    rng = np.random.default_rng(3)
    vals1 = rng.uniform(1e-3, 1, len(S.cubes))
    vals2 = rng.uniform(1e-3, 1, len(S.cubes))
    st = stratify(S, list(vals1), list(vals2))
    assert len(st) == len(S.cubes)


def test_layers():
    spec = GridSpec(1, 4)
    assert len(layer_decompose([DyadicCube(2, (i,)) for i in range(4)])) == 1
    assert len(layer_decompose(chain(4))) == 5
    tree = [base_cube(1)] + [DyadicCube(1, (i,)) for i in range(2)] + [DyadicCube(2, (i,)) for i in range(4)]
    L = layer_decompose(tree)
    assert [len(x) for x in L.layers] == [1, 2, 4]


def _stratum_function(spec, cubes, A, w):
    # a function whose Luxemburg averages over the chain all sit in stratum j = 1
    f = GridFunction.constant(spec, 1.0)
    norms = [luxemburg_norm(f, A, w, Q).value for Q in cubes]
    return f * (0.375 / max(norms))


def test_disjointify_chain_overlap():
    spec = GridSpec(1, 7)
    cubes = chain(5)
    w = GridFunction.constant(spec, 1.0)
    f = _stratum_function(spec, cubes, Power(1.0), w)
    rep = disjointify(cubes, f, Power(1.0), w, 1, 2)
    assert rep.max_overlap == 2
    assert rep.inequality_ok
    anti = [DyadicCube(3, (i,)) for i in range(0, 8, 2)]
    rep = disjointify(anti, f, Power(1.0), w, 1, 4)
    assert rep.max_overlap == 1
    assert all(r.holds for r in rep.rows)


def test_minimal_decay_depth_grows_with_ainf():
    spec = GridSpec(1, 10)
    cubes = chain(9)
    A = LLogL(0.5)
    depths = []
    for a in (0.0, 0.25, 0.5):
        w = power_weight(spec, -a)
        f = _stratum_function(spec, cubes, A, w)
        depths.append(minimal_decay_depth(cubes, f, A, w, 1))
    assert depths[0] <= depths[1] <= depths[2]


def test_union_mass_examples():
    spec = GridSpec(1, 6)
    w = GridFunction.constant(spec, 1.0)
    S = SparseFamily(spec, chain(4))
    chk = union_mass_check(S, w)
    assert chk.lhs == pytest.approx(sum(2.0**-i for i in range(5)))
    assert chk.lhs < 2 and chk.rhs == pytest.approx(2.0)
    anti = SparseFamily(spec, [DyadicCube(2, (0,)), DyadicCube(2, (2,))])
    chk = union_mass_check(anti, power_weight(spec, -0.5))
    assert chk.holds


def test_weaktype_examples():
    spec = GridSpec(1, 5)
    one = GridFunction.constant(spec, 1.0)
    chk = orlicz_maximal_weaktype_check(one, Power(1.0), one, [0], 0.5)
    assert chk.lhs == pytest.approx(1.0) and chk.rhs == pytest.approx(2.0)
    zero = GridFunction.constant(spec, 0.0)
    assert orlicz_maximal_weaktype_check(zero, Power(1.0), one, [0], 0.5).lhs == 0.0
    rng = np.random.default_rng(4)
    for _ in range(100):
        f = GridFunction(spec, rng.exponential(size=spec.shape), nonneg=True)
        w = GridFunction(spec, rng.lognormal(size=spec.shape), nonneg=True)
        t = float(rng.uniform(0.1, 3))
        assert orlicz_maximal_weaktype_check(f, LLogL(0.5), w, [0], t).holds
    # several lattices use the enlarged constant
    assert orlicz_maximal_weaktype_check(f, LLogL(0.5), w, [0, 1, 2, 3], 1.0).holds


def test_family_json_round_trip():
    spec = GridSpec(1, 5)
    S = SparseFamily(spec, chain(3))
    T = SparseFamily.from_json(spec, S.to_json())
    assert T.cubes == S.cubes and T.achieved_eta == S.achieved_eta
