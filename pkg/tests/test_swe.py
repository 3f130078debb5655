import numpy as np
import pytest

from ldtprob.errors import CFLError, ConfigError, PositivityError
from ldtprob.swe import (
    Bathymetry,
    Mesh,
    ObservationWindow,
    builtin_profile,
    lax_friedrichs_constant,
    load_bathymetry_csv,
    numerical_flux,
    observe,
    semidiscrete_rhs,
    solve_forward,
    solve_observable,
    ssp_rk2_step,
    stable_dt,
    time_grid,
)

FLAT_DEPTH = 100.0
WINDOW = ObservationWindow(20e3, 30e3)


def bump_run(K, dt, T=300.0, eps=0.0, amp=0.5, backend=None):
    m = Mesh(0.0, 100e3, K)
    x = m.nodes
    B0 = np.full_like(x, -FLAT_DEPTH)
    B = B0 + amp * np.exp(-(((x - 50e3) / 8e3) ** 2))
    return solve_forward(Bathymetry(B, B0), m, T, dt, eps, WINDOW, backend=backend)


def test_lake_at_rest_is_exact():
    m = Mesh(0.0, 400e3, 64)
    B0 = builtin_profile("tohoku", m.nodes)
    dt = stable_dt(m, B0)
    tr = solve_forward(Bathymetry.at_rest(B0), m, 1500.0, dt, 1e3, ObservationWindow(40e3, 44e3))
    for level in (0, tr.nsteps // 2, tr.nsteps):
        assert np.max(np.abs(tr.surface(level))) <= 1e-8
        assert np.max(np.abs(tr.V[level])) <= 1e-8
    assert abs(tr.mass(tr.nsteps) - tr.mass(0)) <= 1e-8 * tr.mass(0)
    np.testing.assert_allclose(tr.fobs, 0.0, atol=1e-8)


def test_rhs_vanishes_at_rest():
    m = Mesh(0.0, 400e3, 32)
    B0 = builtin_profile("tohoku", m.nodes)
    dh, dv, _ = semidiscrete_rhs(m.to_dg(-B0), np.zeros((32, 2)), Bathymetry.at_rest(B0), m, 100.0)
    assert np.max(np.abs(dh)) == 0.0
    assert np.max(np.abs(dv)) <= 1e-9


@pytest.mark.parametrize("eps", [0.0, 500.0])
def test_mass_is_conserved_with_reflective_walls(eps):
    tr = bump_run(100, 2.0, T=3000.0, eps=eps)
    masses = np.array([tr.mass(n) for n in range(0, tr.nsteps + 1, 50)])
    assert np.max(np.abs(masses - masses[0])) <= 1e-12 * masses[0]


def test_mirror_symmetry_is_preserved():
    tr = bump_run(80, 2.0, T=1200.0, eps=300.0)
    for n in (100, tr.nsteps):
        np.testing.assert_allclose(tr.H[n], tr.H[n, ::-1, ::-1], rtol=0, atol=1e-11)
        np.testing.assert_allclose(tr.V[n], -tr.V[n, ::-1, ::-1], rtol=0, atol=1e-11)


def test_second_order_in_time():
    f = [bump_run(200, dt).fobs[-1] for dt in (4.0, 2.0, 1.0, 0.5)]
    d = np.abs(np.diff(f))
    rates = np.log2(d[:-1] / d[1:])
    assert np.all(rates > 1.8), rates


def test_second_order_in_space():
    c = np.sqrt(9.81 * FLAT_DEPTH)
    f = [bump_run(K, 0.25 * 100e3 / K / c).fobs[-1] for K in (50, 100, 200, 400)]
    d = np.abs(np.diff(f))
    rates = np.log2(d[:-1] / d[1:])
    assert np.all(rates > 1.7), rates


def test_observable_matches_window_average():
    tr = bump_run(100, 2.0, T=200.0)
    n = tr.nsteps
    m = tr.mesh
    # window edges fall on nodes, so the average is a sum of element means
    eta = tr.surface(n)
    inside = (m.dg_nodes[:, 0] >= WINDOW.c) & (m.dg_nodes[:, 1] <= WINDOW.d)
    exact = np.sum(eta[inside].mean(axis=1)) * m.hbar / (WINDOW.d - WINDOW.c)
    assert observe(tr, WINDOW, n) == pytest.approx(exact, rel=1e-12)
    # an off-node window cuts elements and still integrates P1 exactly
    off = ObservationWindow(20.3e3, 29.6e3)
    total = 0.0
    for kk in range(int(off.c // m.hbar), int(off.d // m.hbar) + 1):
        lo, hi = max(off.c, m.nodes[kk]), min(off.d, m.nodes[kk + 1])
        tl, th = (lo - m.nodes[kk]) / m.hbar, (hi - m.nodes[kk]) / m.hbar
        vl = (1 - tl) * eta[kk, 0] + tl * eta[kk, 1]
        vh = (1 - th) * eta[kk, 0] + th * eta[kk, 1]
        total += 0.5 * (vl + vh) * (hi - lo)
    assert observe(tr, off, n) == pytest.approx(total / (off.d - off.c), rel=1e-12)
    assert tr.fobs[n] == pytest.approx(observe(tr, WINDOW, n), rel=1e-12)


def test_observable_only_solve_matches_full_solve():
    tr = bump_run(64, 3.0, T=600.0)
    m = tr.mesh
    f = solve_observable(tr.bathymetry, m, 600.0, 3.0, 0.0, WINDOW)
    np.testing.assert_array_equal(f, tr.fobs)


def test_time_grid_ends_at_final_time():
    n, dt = time_grid(100.0, 3.0)
    assert n == 34 and n * dt == pytest.approx(100.0)
    assert time_grid(100.0, 2.5) == (40, 2.5)
    with pytest.raises(ConfigError):
        time_grid(-1.0, 1.0)


def test_cfl_violation_is_config_error():
    m = Mesh(0.0, 100e3, 100)
    B0 = np.full(101, -FLAT_DEPTH)
    with pytest.raises(ConfigError, match="CFL"):
        solve_forward(Bathymetry.at_rest(B0), m, 100.0, 20.0, 0.0)


def test_growing_wave_speed_raises_cfl_error():
    m = Mesh(0.0, 100e3, 50)
    x = m.nodes
    B0 = np.full_like(x, -10.0)
    B = B0 + 9.0 * np.exp(-(((x - 50e3) / 3e3) ** 2))
    with pytest.raises((CFLError, PositivityError)):
        solve_forward(Bathymetry(B, B0), m, 2000.0, 0.3 * m.hbar / np.sqrt(9.81 * 10.0), 0.0)


def test_positivity_error_carries_location():
    with pytest.raises(PositivityError):
        lax_friedrichs_constant(np.array([[1.0, 1.0], [1.0, -1.0]]), np.zeros((2, 2)), time=3.0)
    m = Mesh(0.0, 10e3, 20)
    x = m.nodes
    B0 = np.full_like(x, -1.0)
    B = B0 + 0.9 * np.exp(-(((x - 5e3) / 1e3) ** 2))
    with pytest.raises(PositivityError) as err:
        solve_forward(Bathymetry(B, B0), m, 3000.0, 5.0, 0.0)
    assert 0 <= err.value.element < m.K


def test_bathymetry_must_be_wet_and_match_mesh():
    with pytest.raises(ConfigError):
        Bathymetry.at_rest(np.array([-1.0, 0.0]))
    m = Mesh(0.0, 1.0, 4)
    with pytest.raises(ConfigError):
        solve_forward(Bathymetry.at_rest(-np.ones(4)), m, 1.0, 0.01, 0.0)
    with pytest.raises(ConfigError):
        Mesh(1.0, 0.0, 4)
    with pytest.raises(ConfigError):
        builtin_profile("nowhere", np.zeros(2))


def test_bathymetry_csv(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("x,B\n0,-10\n100,-20\n")
    np.testing.assert_allclose(load_bathymetry_csv(p, np.array([0.0, 50.0, 100.0])), [-10, -15, -20])
    with pytest.raises(ConfigError, match="cover"):
        load_bathymetry_csv(p, np.array([0.0, 200.0]))
    p.write_text("x,depth\n0,1\n1,2\n")
    with pytest.raises(ConfigError, match="'B'"):
        load_bathymetry_csv(p, np.array([0.0]))


def test_numerical_flux_is_consistent_and_upwinds():
    assert numerical_flux(2.0, 2.0, 5.0, 5.0, 3.0) == 5.0
    # advection f = q with C = 1 picks the upwind state
    assert numerical_flux(1.0, 4.0, 1.0, 4.0, 1.0) == pytest.approx(1.0)


def test_ssp_rk2_is_second_order_on_ode():
    def err(n):
        u = np.array([1.0])
        for _ in range(n):
            u = ssp_rk2_step(u, 1.0 / n, lambda y: -y)
        return abs(u[0] - np.exp(-1.0))

    assert np.log2(err(50) / err(100)) == pytest.approx(2.0, abs=0.05)
    h, v = ssp_rk2_step((np.ones(1), np.zeros(1)), 0.1, lambda s: (s[1], -s[0]))
    assert h[0] == pytest.approx(np.cos(0.1), abs=1e-3)
