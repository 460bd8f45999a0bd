"""Five wavy bodies: elastance and mobility round trips plus a field grid.

Run with ``python demos/splash.py``.  Takes a few minutes.
"""
# %% Geometry
import numpy as np

from elastmob import problems as P
from elastmob.geometry import resolution_estimate

data = P.load_data("splash")
curves = P.splash_curves()
# Each boundary is a Fourier star with twelve modes.  The spectral tail of the
# sampled curve shows how many points it needs.
for i, c in enumerate(curves):
    print(f"body {i}: tail ratio at 256 points {resolution_estimate(c, 256):.1e}")
disc = P.splash_discretization()
print(f"{disc.n_bodies} bodies, {disc.n_nodes} nodes")

# %% Electrostatics
rt = P.roundtrip_elastance(disc, data["potentials"])
print("\ncharges      ", np.round(rt.first.outputs["q"], 6))
print("potentials in", data["potentials"])
print("potentials out", np.round(rt.second.outputs["phi"], 6))
print(f"max boundary error {rt.errors.max():.1e}, {rt.second.stats.iterations} GMRES iterations")

# %% Stokes flow
rt = P.roundtrip_mobility(disc, data["velocities"], data["angular_velocities"])
print("\nforces\n", np.round(rt.first.outputs["F"], 5))
print("torques", np.round(rt.first.outputs["T"], 5))
print(f"max boundary error {rt.errors.max():.1e}, {rt.second.stats.iterations} GMRES iterations")

# %% Velocity on a coarse grid
# Grid points inside a particle are masked; outside, the speed is evaluated
# with the near-boundary quadrature.
X, Y, U, inside = P.evaluate_field_grid(rt.second, (-3, -6, 3, 2), 25, 33)
speed = np.hypot(U[..., 0], U[..., 1])
print(f"\n{(inside >= 0).sum()} of {inside.size} grid points lie inside a particle")
print(f"largest exterior speed {np.nanmax(speed):.4f}")
