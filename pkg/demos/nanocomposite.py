"""Effective capacitance of a parallel-plate cell filled with elliptic inclusions.

Run with ``python demos/nanocomposite.py``.  Add ``--rows 4`` for the four-row
lattice (about two minutes per aspect ratio).
"""
# %% Setup
import argparse

from elastmob import problems as P

ap = argparse.ArgumentParser()
ap.add_argument("--rows", type=int, default=1)
rows = ap.parse_args().rows
ref = P.load_data("nanocomposite")["reference"]

# %% Empty cell
# Two rounded bars carry charges +1 and -1.  The capacitance is the charge
# divided by the potential difference between them.
C0, _ = P.effective_capacitance(0)
print(f"no inclusions: C = {C0:.5f}   (tabulated {ref['0']['-']})")

# %% Inclusions
# The total inclusion area is fixed; the aspect ratio A stretches each ellipse
# horizontally (A > 1) or vertically (A < 1).  Upright ellipses span more of
# the gap and raise the capacitance the most.
print(f"\n{rows} row(s) of 10 ellipses")
for A in (0.25, 0.5, 1.0, 2.0, 4.0):
    C, rep = P.effective_capacitance(rows, A)
    tab = ref.get(str(rows), {}).get(str(A))
    note = f"(tabulated {tab})" if tab else ""
    print(f"  A = {A:<5} C = {C:.5f}  {rep.stats.iterations} iterations  {note}")
