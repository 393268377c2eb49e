import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bfeda.blowup import (BLOWUP_COLUMNS, ChannelConfig, ChannelSolver, c_gamma,
                          compute_m_star, detect_blowup, m_star_closed_form, moment,
                          moment_bound_rhs, positivity_check, predict_blowup_bound,
                          run_channel, sine_moment_inequality_check, step_1d)
from bfeda.dynamics import Solver, VelocityState
from bfeda.spectral import Grid

from conftest import make_params


def canonical_channel(**kw):
    base = dict(L=math.pi, nu=1.0, a=-1.0, b=0.2, alpha=1.0, beta=0.0, n_z=256, dt=1e-4)
    base.update(kw)
    return ChannelConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(alpha=0.5, beta=1.0)
    with pytest.raises(ValueError):
        ChannelConfig(nu=0.0)
    with pytest.raises(ValueError):
        ChannelConfig(bc="neumann")
    with pytest.raises(ValueError):
        ChannelConfig(bc="periodic", n_z=33)


def test_zero_profile_stays_zero():
    cfg = canonical_channel(m0=0.0)
    run = run_channel(cfg, 0.05)
    assert not run.blew_up
    assert np.all(run.final_profile == 0.0)
    rep = positivity_check(run)
    assert rep.passed and rep.min_value == 0.0
    assert not detect_blowup(cfg, 0.05).blew_up


@pytest.mark.parametrize("diffusion", ["spectral", "fd"])
def test_heat_eigenmode(diffusion):
    cfg = canonical_channel(a=0.0, b=0.0, diffusion=diffusion, phi0=lambda z: np.sin(z))
    run = run_channel(cfg, 0.5)
    rate = 1.0 if diffusion == "spectral" else (4 / cfg.dz ** 2) * math.sin(math.pi / (2 * cfg.n_z)) ** 2
    expect = math.exp(-rate * 0.5) * np.sin(cfg.z)
    assert np.max(np.abs(run.final_profile - expect)) < 1e-12
    assert positivity_check(run).passed


def test_step_keeps_dirichlet_ends():
    cfg = canonical_channel(phi0=lambda z: z * (math.pi - z))
    prof = step_1d(cfg.initial_profile(), cfg)
    # unknowns are the interior points; the ends are zero by construction
    assert prof.shape == (cfg.n_z - 1,)
    assert cfg.z[0] == cfg.dz and cfg.z[-1] == pytest.approx(cfg.L - cfg.dz)
    assert np.allclose(prof, prof[::-1], atol=1e-14)


def test_damped_norm_non_increasing():
    cfg = canonical_channel(a=1.0, b=0.0, alpha=1.0, phi0=lambda z: 3 * np.sin(z) + np.sin(3 * z))
    s = ChannelSolver(cfg)
    y = cfg.initial_profile()
    prev = np.sum(y ** 2)
    for _ in range(500):
        y = s.step(y, 1e-3)
        cur = np.sum(y ** 2)
        assert cur <= prev * (1 + 1e-14)
        prev = cur


def test_moment_of_sine():
    cfg = canonical_channel(phi0=lambda z: np.sin(z))
    assert abs(moment(cfg.initial_profile(), cfg) - math.pi / 2) < 1e-12
    cfg2 = canonical_channel(m0=3.7)
    assert abs(moment(cfg2.initial_profile(), cfg2) - 3.7) < 1e-12


def test_c_gamma():
    assert c_gamma(3, math.pi) == pytest.approx(4.0, rel=1e-15)
    assert c_gamma(1, 7.0) == 1.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), gamma=st.sampled_from([1.5, 2.0, 3.0]))
def test_sine_moment_inequality_on_random_profiles(seed, gamma):
    cfg = canonical_channel(n_z=128)
    rng = np.random.default_rng(seed)
    prof = rng.random(cfg.z.size) ** rng.uniform(0.5, 4)
    assert sine_moment_inequality_check(prof, cfg, gamma) <= 1 + 1e-12


def test_sine_moment_check_edge_cases():
    cfg = canonical_channel(n_z=16)
    with pytest.raises(ValueError):
        sine_moment_inequality_check(np.ones(15), cfg, 0.5)
    assert math.isnan(sine_moment_inequality_check(-np.ones(15), cfg, 2))
    assert sine_moment_inequality_check(np.zeros(15), cfg, 2) == 0.0


def test_m_star_matches_closed_form():
    cfg = canonical_channel(b=0.0)
    assert abs(compute_m_star(cfg) - math.sqrt(16 / 3)) < 1e-10
    assert m_star_closed_form(cfg) == pytest.approx(math.sqrt(16 / 3), rel=1e-15)


def test_m_star_scaling_with_a():
    m1 = compute_m_star(canonical_channel(b=0.0, a=-1.0))
    m2 = compute_m_star(canonical_channel(b=0.0, a=-2.0))
    assert m2 ** 2 == pytest.approx(m1 ** 2 / 2, rel=1e-10)


def test_m_star_pumping_raises_threshold():
    assert compute_m_star(canonical_channel()) > compute_m_star(canonical_channel(b=0.0))


def test_m_star_error_paths():
    with pytest.raises(ValueError):
        compute_m_star(canonical_channel(a=1.0))
    with pytest.raises(ValueError):
        compute_m_star(canonical_channel(a=-1.0, b=1e30, alpha=1.0, beta=0.999))


def test_blowup_bound_examples():
    cfg = canonical_channel(b=0.0)
    assert predict_blowup_bound(10.0, cfg) == pytest.approx(0.08, rel=1e-14)
    assert predict_blowup_bound(20.0, cfg) == pytest.approx(0.08 / 4, rel=1e-14)
    ms = compute_m_star(cfg)
    with pytest.raises(ValueError, match="below 2 m"):
        predict_blowup_bound(2 * ms - 1e-9, cfg)


def test_damped_channel_does_not_blow_up():
    cfg = canonical_channel(a=1.0, b=0.0, m0=50.0)
    res = detect_blowup(cfg, 0.5)
    assert not res.blew_up and res.t_detect is None


@pytest.mark.parametrize("diffusion", ["spectral", "fd"])
def test_canonical_blowup_before_bound(diffusion):
    cfg = canonical_channel(diffusion=diffusion)
    ms = compute_m_star(cfg)
    cfg.m0 = 2.5 * ms
    bound = predict_blowup_bound(cfg.m0, cfg)
    res = detect_blowup(cfg, 2 * bound)
    assert res.blew_up
    assert res.t_detect <= bound
    run = res.final
    assert positivity_check(run).passed
    d, m = run.dm_dt(), run.moments
    rhs = np.array([moment_bound_rhs(x, cfg) for x in m])
    sel = m >= ms
    assert sel.sum() > 10
    assert np.all(d[sel] >= rhs[sel])
    assert np.all(np.diff(m[sel]) > 0)


def test_detect_refines_until_settled():
    cfg = canonical_channel()
    cfg.m0 = 2.5 * compute_m_star(cfg)
    res = detect_blowup(cfg, 1.0, rel_tol=0.01)
    a, b = res.runs[-2].t_detect, res.runs[-1].t_detect
    assert abs(a - b) < 0.01 * b
    assert res.runs[-1].dt == res.runs[0].dt / 2 ** (len(res.runs) - 1)


def test_csv_columns(tmp_path):
    cfg = canonical_channel(m0=1.0)
    run = run_channel(cfg, 0.01)
    p = tmp_path / "b.csv"
    run.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0].split(",") == list(BLOWUP_COLUMNS)
    assert len(lines) == len(run.times) + 1


def test_periodic_variant_matches_shear_flow():
    n, dt = 16, 2e-3
    phi0 = lambda z: 1.2 * np.sin(z) + 0.5 * np.cos(2 * z) + 0.3
    g = Grid(n)
    vals = np.zeros((3,) + g.shape)
    vals[0] = phi0(g.mesh[2])
    s = VelocityState.from_physical(g, vals)
    solver = Solver(g, make_params(a=1.0, b=0.0, alpha=1.5, beta=0.0))
    cfg = ChannelConfig(L=2 * math.pi, a=1.0, b=0.0, alpha=1.5, beta=0.0, n_z=n, dt=dt,
                        phi0=phi0, bc="periodic")
    cs = ChannelSolver(cfg)
    y = cs.to_state(cfg.initial_profile())
    for _ in range(50):
        s = solver.step(s, dt)
        y = cs.step(y, dt)
    line = s.physical()[0][0, 0, :]
    prof = cs.to_profile(y)
    assert np.max(np.abs(line - prof)) < 1e-12 * np.max(np.abs(prof))
