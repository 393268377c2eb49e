"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (also collected into
the pytest terminal summary). The 48^3 twin experiments dominate the runtime.
"""
import functools
import json
import math

import numpy as np
import pytest

from bfeda.assimilation import NudgingConfig, TwinScenario, run_twin_experiment
from bfeda.blowup import (ChannelConfig, ChannelSolver, compute_m_star, detect_blowup,
                          m_star_closed_form, moment_bound_rhs, positivity_check,
                          predict_blowup_bound)
from bfeda.bounds import A1, check_gates, compute_bounds, eta0
from bfeda.cli import main
from bfeda.diagnostics import read_csv_columns
from bfeda.dynamics import Solver, VelocityState
from bfeda.interpolants import (InterpolantSpec, estimate_interpolant_constants,
                                random_test_fields)
from bfeda.spectral import Grid

from conftest import ACCEPTANCE_LINES, canonical_params, make_params, random_velocity
from test_bounds import DAMPING, PUMPING


def criterion(number, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            detail = ""
            try:
                detail = fn(*args, **kwargs) or ""
            except BaseException as exc:
                line = f"criterion {number:2d}: FAIL  {title}  ({type(exc).__name__}: {exc})"
                ACCEPTANCE_LINES.append(line.splitlines()[0])
                print(line)
                raise
            line = f"criterion {number:2d}: PASS  {title}  {detail}"
            ACCEPTANCE_LINES.append(line)
            print(line)
        return run
    return wrap


CANONICAL = """
[grid]
n = 32
[params]
nu = 1.0
a = 1.0
b = -0.5
alpha = 1.5
beta = 0.5
[forcing]
kind = band_limited_random
amplitude = 0.5
kmax = 2
seed = 1
[integrator]
dt = 1e-3
horizon = 5
sample_interval = 0.01
checkpoint = no
[run]
seed = 3
"""


def shear_state(grid, profile):
    vals = np.zeros((3,) + grid.shape)
    vals[0] = profile(grid.mesh[2])
    return VelocityState.from_physical(grid, vals)


def l2(grid, c):
    return math.sqrt(grid.norm_sq(c))


# 1

def _shear_error(grid, params, dt, horizon, u0):
    s = Solver(grid, params).advance(u0, dt, int(round(horizon / dt)))
    return s


@criterion(1, "exact decay of a shear mode, second order in dt")
def test_criterion_1_exact_decay():
    g = Grid(32)
    u0 = shear_state(g, np.sin)
    heat = make_params(a=0.0, b=0.0)
    exact = l2(g, u0.coeffs) * math.exp(-1.0)
    errs = []
    for dt in (1e-3, 5e-4):
        u = _shear_error(g, heat, dt, 1.0, u0)
        errs.append(abs(l2(g, u.coeffs) - exact) / exact)
    assert max(errs) <= 1e-5
    # The linear part is integrated exactly, so the shear-mode error above is
    # round-off. Order is measured with the damping switched on, where the
    # shear stays a shear but the explicit stage truncates.
    damped = make_params(a=1.0, b=0.0, alpha=1.5, beta=0.0)
    u1 = shear_state(g, lambda z: 2 * np.sin(z))
    ref = _shear_error(g, damped, 0.01 / 16, 1.0, u1).coeffs
    e = [l2(g, _shear_error(g, damped, dt, 1.0, u1).coeffs - ref) for dt in (0.01, 0.005)]
    ratio = e[0] / e[1]
    assert 3.5 <= ratio <= 4.5
    return f"heat rel err {max(errs):.2e}; damped error ratio on halving dt {ratio:.3f}"


# 2 and 3

def _simulate(tmp_path, text, name):
    cfg = tmp_path / f"{name}.ini"
    cfg.write_text(text)
    out = tmp_path / name
    assert main(["simulate", "--config", str(cfg), "--output", str(out)]) == 0
    return read_csv_columns(out / "diagnostics.csv"), json.loads((out / "manifest.json").read_text())


@pytest.mark.slow
@criterion(2, "energy balance residual on the canonical run")
def test_criterion_2_energy_balance(tmp_path):
    d, _ = _simulate(tmp_path, CANONICAL, "energy")
    res, grad = d["energy_residual"][1:], d["h1_semi"][1:]
    scale = np.maximum(grad ** 2, 1.0)
    worst = float(np.max(np.abs(res) / scale))
    assert np.isfinite(res).all() and len(res) == 500
    assert worst <= 1e-4
    return f"max |residual|/max(nu|grad u|^2, 1) = {worst:.2e} over {len(res)} samples"


@pytest.mark.slow
@criterion(3, "absorbing ball from a 3x initial state")
def test_criterion_3_absorbing_ball(tmp_path):
    text = CANONICAL + "[initial]\nkind = random\nkmax = 3\nnorm_factor = 3\n"
    d, man = _simulate(tmp_path, text, "ball")
    margin = d["absorbing_ball_margin"]
    assert (margin >= 0).all()
    assert man["results"]["violations"] == []
    return f"min ball margin {margin.min():.4g}, 0 monitor violations"


# 4

@functools.lru_cache(maxsize=None)
def fitted_constants(kind, n=48):
    g = Grid(n)
    cells = (4, 8, 16)
    if kind == "modal":
        specs = [InterpolantSpec.from_cutoff(k) for k in cells]
    else:
        specs = [InterpolantSpec.from_cells(kind, c) for c in cells]
    ensemble = random_test_fields(g, 100, seed=11)
    holdout = random_test_fields(g, 50, seed=12)
    return estimate_interpolant_constants(specs, ensemble, holdout)


@criterion(4, "interpolant inequality: modal ratio and volume constant")
def test_criterion_4_interpolant_inequality():
    modal = fitted_constants("modal")
    assert max(modal.c0_by_h.values()) <= 1.0
    vol = fitted_constants("volume")
    vals = list(vol.c0_by_h.values())
    spread = max(vals) / min(vals)
    assert spread <= 1.2
    assert vol.holdout_ok
    return (f"modal max ratio {max(modal.c0_by_h.values()):.4f}; volume c0 by h "
            f"{', '.join(f'{v:.4f}' for v in vals)} (spread {spread:.3f}), "
            f"holdout ratio {vol.holdout_max_ratio:.3f}")


# 5 and 6

def twin(kind, spec, c0=None, c1=None, n=48, horizon=20.0, dt=0.01):
    g = Grid(n)
    p = canonical_params()
    f_norm = l2(g, p.forcing.coeffs(g))
    u0 = random_velocity(g, kmax=2, norm=f_norm, seed=5)
    nc = NudgingConfig(0.0, spec, c0=c0, c1=c1)
    nc.mu = 0.8 * nc.gate(p.nu).mu_max_for(kind)
    sc = TwinScenario(g, p, nc, u0, np.zeros_like(u0), dt, horizon, 0.05, energy=False)
    return run_twin_experiment(sc)


@pytest.mark.slow
@criterion(5, "modal twin experiment converges exponentially")
def test_criterion_5_modal_twin():
    res = twin("modal", InterpolantSpec.from_cutoff(8))
    err, lu = res.column("l2_err"), res.column("l2_u")
    assert res.verdict.ok_for("modal")
    assert res.mu == pytest.approx(25.6)
    decades = math.log10(err[0] / max(err[-1], 1e-300))
    assert decades >= 6 or err[-1] <= 1e-10 * lu[-1]
    assert res.fit is not None and res.fit.rate > 0
    # the fit is on squared error; the L2 error rate is half of it
    return (f"mu={res.mu:.2f}, {min(decades, 99):.1f} decades, final {err[-1]:.2e}; "
            f"fitted L2 rate {res.fit.rate / 2:.3f} vs mu/2 = {res.reference_rate:.2f}")


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["volume", "nodal"])
def test_criterion_6_robustness(kind):
    @criterion(6, f"{kind} twin experiment with fitted constants")
    def body():
        est = fitted_constants(kind)
        res = twin(kind, InterpolantSpec.from_cells(kind, 16), est.gate_c0, est.gate_c1)
        err = res.column("l2_err")
        assert res.verdict.ok_for(kind)
        decades = math.log10(err[0] / max(err[-1], 1e-300))
        assert decades >= 4
        return (f"c0={est.gate_c0:.4f}, c1={est.gate_c1:.4f}, mu={res.mu:.3f}, "
                f"{min(decades, 99):.1f} decades")
    body()


# 7

@criterion(7, "zero innovation keeps the nudged copy on the reference")
def test_criterion_7_fixed_point():
    g = Grid(16)
    p = canonical_params()
    u0 = random_velocity(g, kmax=2, norm=l2(g, p.forcing.coeffs(g)), seed=2)
    nc = NudgingConfig(0.0, InterpolantSpec.from_cutoff(4))
    nc.mu = 0.8 * nc.gate(p.nu).mu_max_for("modal")
    sc = TwinScenario(g, p, nc, u0, u0.copy(), 1e-3, 10.0, 0.1, energy=False)
    res = run_twin_experiment(sc)
    rel = res.column("l2_err") / res.column("l2_u")
    assert len(rel) == 101 and res.final_u.time == pytest.approx(10.0)
    assert rel.max() <= 1e-12
    return f"10^4 steps, max relative deviation {rel.max():.2e}"


# 8

@criterion(8, "1D blow-up before the predicted time")
def test_criterion_8_blowup():
    cfg = ChannelConfig(L=math.pi, nu=1.0, a=-1.0, b=0.2, alpha=1.0, beta=0.0, n_z=256)
    ms = compute_m_star(cfg)
    check = ChannelConfig(L=math.pi, nu=1.0, a=-1.0, b=0.0, alpha=1.0, beta=0.0, n_z=256)
    assert abs(compute_m_star(check) - math.sqrt(16 / 3)) <= 1e-10
    assert m_star_closed_form(check) == pytest.approx(math.sqrt(16 / 3), rel=1e-15)
    cfg.m0 = 2.5 * ms
    bound = predict_blowup_bound(cfg.m0, cfg)
    res = detect_blowup(cfg, 2 * bound)
    assert res.blew_up and res.t_detect <= bound
    run = res.final
    assert positivity_check(run).passed
    m, d = run.moments, run.dm_dt()
    rhs = np.array([moment_bound_rhs(x, cfg) for x in m])
    sel = m >= ms
    slack = float(np.min(d[sel] - rhs[sel]))
    assert slack >= 0
    return (f"m*={ms:.6f}, t_detect={res.t_detect:.6f} <= bound {bound:.6f}, "
            f"min phi {run.min_val.min():.3g}, min(dm/dt - rhs) {slack:.3g}")


# 9

@criterion(9, "3D shear flow matches the periodic 1D solver")
def test_criterion_9_shear_cross_oracle():
    n, dt = 32, 1e-3
    phi0 = lambda z: 1.5 * np.sin(z) + 0.7 * np.cos(2 * z) + 0.3 * np.sin(3 * z) + 0.2
    g = Grid(n)
    s = shear_state(g, phi0)
    solver = Solver(g, make_params(a=1.0, b=0.0, alpha=1.5, beta=0.0))
    cfg = ChannelConfig(L=2 * math.pi, a=1.0, b=0.0, alpha=1.5, beta=0.0, n_z=n, dt=dt,
                        phi0=phi0, bc="periodic")
    cs = ChannelSolver(cfg)
    y = cs.to_state(cfg.initial_profile())
    worst = 0.0
    for i in range(1, 1001):
        s = solver.step(s, dt)
        y = cs.step(y, dt)
        if i % 50 == 0:
            vals = np.zeros((3,) + g.shape)
            vals[0] = cs.to_profile(y)[None, None, :]
            ref = VelocityState.from_physical(g, vals).coeffs
            worst = max(worst, l2(g, s.coeffs - ref) / l2(g, ref))
    assert worst <= 1e-6
    return f"max relative L2 gap {worst:.2e} over T=1"


# 10

@criterion(10, "bounds calculator golden values and worked examples")
def test_criterion_10_bounds():
    n = 0
    for case in (PUMPING, DAMPING):
        r = compute_bounds(make_params(**case["params"]), **case["data"])
        for key, want in case["gold"].items():
            got = getattr(r.gate, key) if key.startswith("mu_max") else getattr(r, key)
            assert got == pytest.approx(want, rel=1e-12, abs=1e-12), key
            n += 1
    assert eta0(make_params(nu=1.0, a=2.0, b=1.0, alpha=2.0, beta=0.5,
                            box_length=1.0)) == pytest.approx(1.0, rel=1e-12)
    assert A1(make_params(nu=1.0, a=1.0, b=0.5, alpha=2.0, beta=0.5)) == pytest.approx(0.8, rel=1e-12)
    g = check_gates(1.0, 100.0, 0.05, c0=1.0, c1=1.0)
    assert g.mu_max_grad == pytest.approx(200.0, rel=1e-12)
    assert g.mu_max_nodal == pytest.approx(80 / 3, rel=1e-12)
    return f"{n} golden values and 4 worked examples to 1e-12"
