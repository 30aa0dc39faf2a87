"""Measured endpoint quantity against the mixed weak-type bound for one
sparse family, as the weight singularity sharpens.

Run with ``python demos/endpoint_ratio.py``.
"""
from sparsemix.experiments import Scenario, run_scenario
from sparsemix.grid import GridSpec

grid = GridSpec(1, 8)
print(f"{'a':>6} {'measured':>10} {'bound':>10} {'ratio':>7} {'t*':>9}")
for a in (0.0, -0.25, -0.5, -0.75):
    sc = Scenario.from_dict({
        "id": f"power{a}",
        "u": {"kind": "power", "a": a},
        "v": {"kind": "power", "a": a},
        "f": {"kind": "random", "seed": 3},
        "family": {"kind": "stopping", "a": 2.0},
    }, grid)
    rep = run_scenario(sc)
    print(f"{a:6.2f} {rep.measured:10.4f} {rep.theoretical:10.4f} "
          f"{rep.measured / rep.theoretical:7.4f} {rep.t_star:9.4g}")
