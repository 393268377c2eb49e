"""
Finite-time blow-up of the profile equation
===========================================

With a < 0 the reaction term feeds growth. Once the sine moment m exceeds
m*, it obeys a Riccati-type inequality, and the time at which its lower bound
diverges bounds the blow-up time from above.
"""

import math

from bfeda.blowup import (ChannelConfig, compute_m_star, detect_blowup, m_star_closed_form,
                          moment_bound_rhs, positivity_check, predict_blowup_bound)

cfg = ChannelConfig(L=math.pi, nu=1.0, a=-1.0, b=0.2, alpha=1.0, beta=0.0, n_z=256, dt=1e-4)
m_star = compute_m_star(cfg)
print(f"m* = {m_star:.6f}  (b = 0 closed form: {m_star_closed_form(ChannelConfig(b=0.0)):.6f})")

cfg.m0 = 2.5 * m_star
bound = predict_blowup_bound(cfg.m0, cfg)
res = detect_blowup(cfg, 2 * bound)
print(f"m0 = {cfg.m0:.4f}, predicted upper bound T* <= {bound:.4f}")
for r in res.runs:
    print(f"  dt = {r.dt:.1e}: t_detect = {r.t_detect:.6f}, {len(r.times)} steps")

run = res.final
print("positivity:", positivity_check(run))
d = run.dm_dt()
for i in range(0, len(run.times), max(1, len(run.times) // 8)):
    m = run.moments[i]
    print(f"  t={run.times[i]:.5f}  m={m:10.4g}  dm/dt={d[i]:10.4g}  "
          f"bound rhs={moment_bound_rhs(m, cfg):10.4g}")
