"""
Hilbert-Schmidt norms of the smoothed noise
===========================================

The regularity of the stochastic convolution is governed by the series
s_q(t) = sum_j lambda_j^(-q) exp(-2 t lambda_j) with lambda_j = j^(2/d).
The library returns certified enclosures of this series, checks the small
time behaviour in every regime and decides admissibility of (d, p, q, H).
"""

import math

import numpy as np

from stochns import check_admissibility, hs_norm_S_Phi, s_q_series, verify_hs_regime

iv = s_q_series(0.1, 0.0, 2)
print(f"s_0(0.1) in [{iv.lower:.12f}, {iv.upper:.12f}] with {iv.n_terms} terms")
print(f"closed form 1/(e^0.2 - 1) = {1 / math.expm1(0.2):.12f}")

# Small-time shape: t * s_0(t) tends to 1/2 in two dimensions.
report = verify_hs_regime(0.0, 2, np.geomspace(1e-6, 1, 31))
print(f"regime {report.regime}: sup ratio {report.sup_ratio:.6f}, slope {report.slope:.2e}, pass {report.passed}")

for q in (1.0, 1.5):
    r = verify_hs_regime(q, 3 if q == 1.5 else 2, np.geomspace(1e-6, 1, 31))
    print(f"q={q}: regime {r.regime}, pass {r.passed}")

n = hs_norm_S_Phi(0.5, 0.5, 2)
print(f"||S(0.5) A^(-1/4)||_HS in [{n.lower:.6f}, {n.upper:.6f}]")

# The admissibility decision uses exact rational arithmetic.
for args in [(2, 4, 0, 0.8), (2, 4, 0, 0.75), (3, 4, 0, 0.99), (3, 4, 1, 0.7)]:
    rep = check_admissibility(*args)
    print(args, "admissible" if rep.admissible else "inadmissible", f"margin {rep.margin:+.3f}", *rep.notes)
