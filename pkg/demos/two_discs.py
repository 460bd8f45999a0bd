"""Two unit discs: charges, potentials, forces and torques as the gap closes.

Run with ``python demos/two_discs.py``.  Takes about a minute.
"""
# %% Setup
import numpy as np

from elastmob import problems as P
from elastmob.linsolve import SolverConfig

data = P.load_data("two_disc")
phi = data["potentials"]
cfg = SolverConfig(tol=1e-8)

# %% Capacitance then elastance
# Holding the discs at fixed potentials gives charges; feeding those charges
# back into the elastance solver should return the potentials we started from.
# The exact exterior potential is a pair of image logarithms, so the charge
# strength can be checked against a closed form as well.
print("gap      nodes  log-strength  closed form   e1        e2")
for d in data["gaps"]:
    disc = P.two_disc_discretization(d)
    rt = P.roundtrip_elastance(disc, phi, cfg)
    s = rt.first.outputs["log_strength"][0]
    exact = P.two_disc_log_strength(d, *phi)
    print(f"{d:<8} {disc.n_nodes:<6} {s:+.7f}   {exact:+.7f}   {rt.errors[0]:.1e}   {rt.errors[1]:.1e}")

# %% The potential in the gap
# Along the line joining the centres the potential drops from phi_1 to phi_2.
# Off-surface evaluation stays accurate right up to the boundary.
d = 0.05
disc = P.two_disc_discretization(d)
cap = P.solve_capacitance(disc, phi, cfg)
x = np.linspace(-d / 2 * 0.99, d / 2 * 0.99, 7)
pts = np.stack([x, np.zeros_like(x)], 1)
u = P.field_at(cap, pts)
ex = P.two_disc_exact(d, *phi, pts)
print("\npotential across the gap at d = 0.05")
for xi, ui, ei in zip(x, u, ex):
    print(f"  x = {xi:+.5f}   u = {ui:+.8f}   exact = {ei:+.8f}")

# %% Resistance then mobility
# Rigid motions in, forces and torques out; then the reverse.  Lubrication
# makes the forces grow sharply as the gap closes.
v, om = data["velocities"], data["angular_velocities"]
print("\ngap      F_1            T_1         T_2         iterations  e1       e2")
for d in data["gaps"]:
    disc = P.two_disc_discretization(d)
    rt = P.roundtrip_mobility(disc, v, om, cfg)
    F, T = rt.first.outputs["F"], rt.first.outputs["T"]
    print(f"{d:<8} ({F[0, 0]:9.3f}, {F[0, 1]:8.3f})  {T[0]:+9.5f}  {T[1]:+9.5f}  "
          f"{rt.second.stats.iterations:<10}  {rt.errors[0]:.1e}  {rt.errors[1]:.1e}")
