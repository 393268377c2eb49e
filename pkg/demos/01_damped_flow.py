"""
A damped flow settling into its absorbing ball
==============================================

Integrate the forced, damped system on a 16^3 periodic box and watch the
energy, the energy-balance residual and the a priori bounds.
"""

import math

import numpy as np

from bfeda.bounds import compute_bounds
from bfeda.diagnostics import make_record, monitor_bounds
from bfeda.dynamics import (BfedParams, ForcingSpec, Solver, VelocityState,
                            energy_balance_residual, energy_sample)
from bfeda.spectral import Grid, solenoidal_random_coeffs

grid = Grid(16)
params = BfedParams(nu=1.0, a=1.0, b=-0.5, alpha=1.5, beta=0.5,
                    forcing=ForcingSpec("band_limited_random", amplitude=0.5, kmax=2, seed=1))
forcing = params.forcing.coeffs(grid)
f_norm = math.sqrt(grid.norm_sq(forcing))

# start well outside the ball: three times the forcing scale
c = solenoidal_random_coeffs(grid, 3, np.random.default_rng(0))
u = VelocityState(grid, c * (3 * f_norm / math.sqrt(grid.norm_sq(c))))
report = compute_bounds(params, f_norm, u0_l2=math.sqrt(grid.norm_sq(u.coeffs)),
                        u0_grad=math.sqrt(grid.grad_norm_sq(u.coeffs)))
print(f"|f| = {f_norm:.3f}, rho0^2 = {report.rho0 ** 2:.1f}, K = {report.K:.1f}")

solver = Solver(grid, params)
dt = 1e-3
prev = energy_sample(u, params, forcing)
print(f"{'t':>5} {'|u|^2':>10} {'ball rhs':>10} {'residual':>10}")
for i in range(1, 2001):
    u = solver.step(u, dt)
    cur = energy_sample(u, params, forcing)
    res = energy_balance_residual(prev, cur)
    prev = cur
    if i % 250 == 0:
        rec = make_record(u, params, report, res)
        flags = monitor_bounds(rec, report)
        print(f"{u.time:5.2f} {rec.l2 ** 2:10.3f} {rec.l2 ** 2 + rec.absorbing_ball_margin:10.1f} "
              f"{res:10.2e} {'VIOLATION' if flags else ''}")
