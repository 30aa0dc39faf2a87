"""How the weight constants of x^a grow as the grid is refined.

Run with ``python demos/weight_constants.py``.
"""
from sparsemix.experiments import power_weight
from sparsemix.grid import GridSpec
from sparsemix.weights import a1_constant, ainf_fujii, ap_constant

print(f"{'a':>6} {'L':>3} {'[w]A1':>9} {'[w]Ainf':>9} {'[w]A2':>9}")
for a in (-0.25, -0.5, -0.75):
    for L in (4, 7, 10):
        w = power_weight(GridSpec(1, L), a)
        print(f"{a:6.2f} {L:3d} {a1_constant(w).value:9.4f} {ainf_fujii(w).value:9.4f} "
              f"{ap_constant(w, 2).value:9.4f}")
# each constant increases with L; A1 of x^a stays below its continuous value 1/(1+a)
