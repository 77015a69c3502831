"""
A code for unresolvable ensembles
=================================

The two-level code with M1 = 5, M2 = 2 in the J = 10 block survives every
single individual or collective error and single spin losses.  Knill-Laflamme
conditions are checked numerically, then a small search shows that no
smaller J block supports such a code.
"""

import warnings

from spinqec.codes import build_kraus_set, build_two_level_code, code_search, kl_check
from spinqec.dynamics import NoiseModel

code = build_two_level_code(10, 5, 2)
print("branch levels (2M):", code.levels)
print("amplitudes:", code.amplitudes)

everything = NoiseModel(1, 1, 1, 1, 1, 1, 1)
ks = build_kraus_set(20, 10, everything, dt=1e-3)
rep = kl_check(code, ks)
print(f"{len(ks.ops)} Kraus operators, passed={rep.passed}, violation={rep.max_violation:.1e}")

# levels too close together break the conditions
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    bad = build_two_level_code(10, 3, 1)
print("M1=3, M2=1 passes:", kl_check(bad, ks).passed)

for j in (3.5, 4, 4.5):
    found = code_search(j, channels=("all",), budget=2)
    print(f"J={j}: {len(found)} codes")
