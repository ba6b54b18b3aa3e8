"""From a price path to its band-exit ladder and the retired-walk measures.

The ladder records the first grid times at which the path leaves the
multiplicative band around its previous anchor; the marks behave like a
random walk on the geometric grid that eventually retires. Retirement
probabilities pin down a martingale measure in closed form.
"""

import numpy as np

import cpslab as cl

EPS = 0.1
grid = cl.TimeGrid.uniform(1.0, 2000)
path = cl.sample_gbm(0.0, 0.3, 100.0, grid, 1, seed=3)[0]

sk = cl.extract_ladder(path, EPS)
print(f"ladder with eps={EPS}: {sk.n_stops} stops, retired at index {sk.retired_at}")
for n in range(min(6, len(sk.times))):
    mark = "-" if n == 0 else f"{sk.marks[n - 1]:+d}"
    print(f"  stop {n}: t={sk.times[n]:.4f}  anchor={sk.anchors[n, 0]:9.4f}  mark={mark}")

# Every non-retired anchor sits exactly on the geometric grid.
levels = sk.levels[: sk.n_stops]
print("levels:", levels[:10], "... anchors snap to 100*(1.1)^k exactly")

# --- one-step measures ------------------------------------------------
for alpha in (0.0, 0.5, 0.9):
    sm = cl.step_measure(alpha, EPS)
    print(f"alpha={alpha:.1f}: (down, retire, up) = "
          f"({sm.lam:.6f}, {sm.alpha:.6f}, {sm.mu:.6f}), residuals {sm.residuals()}")

# --- the exact tree under a constant retirement schedule --------------
tree = cl.enumerate_tree(cl.ConstantSchedule(0.5), EPS, 1.0, 12)
print(f"depth-12 tree: martingale residual {tree.martingale_residuals():.2e}, "
      f"leaf mass {tree.leaf_mass():.12f}")

# --- the normalization condition --------------------------------------
rep = cl.verify_density_normalizes(cl.ConstantSchedule(0.5), EPS)
print(f"surviving mass decay: {np.round(rep.residuals[:6], 4)} -> passes: {rep.passed}")
rep0 = cl.verify_density_normalizes(cl.ConstantSchedule(0.0), EPS, max_horizon=50)
print(f"alpha=0 never retires: residual stays {rep0.final_residual:.1f}, "
      f"passes: {rep0.passed}")
