"""How close to a boundary can a layer potential be trusted?

Run with ``python demos/near_evaluation.py``.  Takes a few seconds.
"""
# %% A density with a known field
import numpy as np

from elastmob import quadrature as Q
from elastmob.geometry import Disc, Panel, discretize

# On the unit circle the single layer of cos(k s) is cos(k s) r^-k / (2k)
# outside the circle, which gives an exact reference at every distance.
k = 3
disc = discretize(Disc(), Panel(16, 16))
mu = np.cos(k * disc.params)
s0 = 0.1234


def exact(r):
    return np.cos(k * s0) * r**-k / (2 * k)


# %% Plain quadrature versus the near-boundary rules
# The plain Gauss rule loses accuracy once the target is closer than a panel
# length.  The adaptive graded rule and the local expansion keep it.
print("distance   plain      adaptive   expansion")
for dist in 10.0 ** -np.arange(1, 9):
    r = 1 + dist
    x = np.array([[r * np.cos(s0), r * np.sin(s0)]])
    plain = Q.eval_laplace_single(disc, mu, Q.EvalPlan(x, near_factor=1e-12))[0]
    adapt = Q.eval_laplace_single(disc, mu, Q.EvalPlan(x))[0]
    qbx = Q.eval_laplace_single(disc, mu, Q.EvalPlan(x, method="qbx", order=12))[0]
    errs = [abs(v - exact(r)) for v in (plain, adapt, qbx)]
    print(f"{dist:8.0e}   " + "   ".join(f"{e:.1e}" for e in errs))
