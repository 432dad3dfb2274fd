"""Best-path field value per unit time under a jump budget.

Shows the square-root growth of the grid supremum in the jump rate r,
and the effect of the discrete-monitoring correction.

Run with ``python demos/field_supremum.py``. Takes about half a minute.
"""
import numpy as np

from ctpolymer.fieldopt import ConstraintSpec, GridEnvironment, TimeGrid, dp_sup_field, estimate_F

rates = [0.5, 1.0, 2.0, 4.0]
tables = [estimate_F(r, [16], K_per_unit_time=8, n_env=16, seed=3) for r in rates]

print(f"{'r':>5} {'F_hat':>7} {'se':>6} {'F_grid':>7} {'F/sqrt(r)':>9}")
for r, tab in zip(rates, tables):
    row = tab.rows[-1]
    print(f"{r:5.1f} {row.F_hat:7.3f} {row.se:6.3f} {row.F_grid:7.3f} {row.F_hat / np.sqrt(r):9.3f}")

# a single maximizing path on a small window
grid = TimeGrid(4.0, 32)
genv = GridEnvironment.sample(grid, 4, 1, seed=11)
best = dp_sup_field(genv, ConstraintSpec.from_rates(1.0, 4.0, grid.dt))
path = best.to_jump_path(grid)
print("\nmaximizer on [0, 4] with at most 4 jumps")
print("  value     ", round(best.value, 4))
print("  jump times", np.round(path.jump_times, 3))
print("  positions ", path.positions[:, 0])
