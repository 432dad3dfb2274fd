"""Quenched free energy against the annealed bound for a few inverse temperatures.

Run with ``python demos/annealed_vs_quenched.py``. Takes about a minute.
"""
import numpy as np

from ctpolymer.gibbs import ModelParams, free_energy_point

d, t = 1, 8.0
betas = np.array([0.5, 1.0, 2.0, 4.0])

print(f"{'beta':>6} {'p_hat':>8} {'se':>7} {'beta^2/2':>9} {'ratio':>6}")
for beta in betas:
    # transfer-matrix estimate; dt shrinks with beta to resolve the field
    pt = free_energy_point(ModelParams(d, beta, t), n_env=16, seed=1, method="transfer",
                           dt=min(0.05, 0.2 / beta ** 2))
    ann = beta ** 2 / 2
    print(f"{beta:6.2f} {pt.p_hat:8.4f} {pt.std_error:7.4f} {ann:9.4f} {pt.p_hat / ann:6.3f}")
