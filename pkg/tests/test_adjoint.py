from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldtprob import adjoint
from ldtprob.adjoint import (
    ObjectiveSpec,
    f_gamma,
    f_gamma_weights,
    gradient_check,
    hessian_vector_product,
    solve_adjoint,
    time_derivative,
    trapezoid_weights,
)
from ldtprob.swe import Bathymetry, Mesh, ObservationWindow, get_kernels
from ldtprob.tsunami import TsunamiModel, TsunamiSetup


def sample_point(model, rng):
    return model.measure.sqrt_cov @ rng.standard_normal(model.n_s)


@pytest.mark.parametrize("backend", ["numpy", "cython"])
def test_rhs_vjp_is_transpose_of_jacobian(rng, backend):
    kern = get_kernels(backend)
    K = 12
    m = Mesh(0.0, 12e3, K)
    B = -50.0 - 10.0 * np.cos(m.nodes / 3e3)
    h = m.to_dg(-B) + 0.3 * rng.standard_normal((K, 2))
    v = 2.0 * rng.standard_normal((K, 2))
    dq = rng.standard_normal((2, K, 2))
    qb = rng.standard_normal((2, K, 2))

    def F(hh, vv):
        out = [np.empty((K, 2)) for _ in range(3)]
        kern.rhs(hh, vv, B, m.hbar, 40.0, 9.81, *out)
        return out[0], out[1]

    e = 1e-6
    plus, minus = F(h + e * dq[0], v + e * dq[1]), F(h - e * dq[0], v - e * dq[1])
    jvp = [(p - q) / (2 * e) for p, q in zip(plus, minus)]
    hb, vb, pb = np.zeros((K, 2)), np.zeros((K, 2)), np.empty((K, 2))
    kern.rhs_vjp(h, v, B, m.hbar, 40.0, 9.81, qb[0], qb[1], hb, vb, pb)
    lhs = np.sum(qb[0] * jvp[0]) + np.sum(qb[1] * jvp[1])
    rhs = np.sum(hb * dq[0]) + np.sum(vb * dq[1])
    assert lhs == pytest.approx(rhs, rel=1e-6)


@pytest.mark.parametrize("kind", ["regularized", "timeopt"])
def test_gradient_matches_finite_differences(coarse_model, rng, kind):
    S = sample_point(coarse_model, rng)
    level = int(np.argmax(coarse_model.observable(S))) if kind == "timeopt" else None
    lam = 5.0
    g = coarse_model.J_grad(S, lam, kind, level)
    check = gradient_check(lambda t: coarse_model.J(t, lam, kind, level), g, S, rng.standard_normal((3, S.size)))
    assert check.worst <= 1e-6, check.min_errors


def test_value_grad_is_event_gradient(coarse_model, rng):
    S = sample_point(coarse_model, rng)
    F, g = coarse_model.value_grad(S)
    assert F == pytest.approx(coarse_model.F(S), rel=1e-13)
    lam = 3.0
    np.testing.assert_allclose(
        coarse_model.J_grad(S, lam), coarse_model.measure.rate_grad(S) - lam * g, rtol=1e-10, atol=1e-14
    )


def test_zero_lambda_gradient_is_prior_term(coarse_model, rng):
    S = sample_point(coarse_model, rng)
    g = coarse_model.J_grad(S, 0.0)
    np.testing.assert_array_equal(g, coarse_model.measure.precision @ S)
    check = gradient_check(lambda t: coarse_model.J(t, 0.0), g, S, rng.standard_normal((2, S.size)))
    assert check.worst <= 1e-10


def test_broken_flux_transpose_is_caught(rng, monkeypatch):
    """Flip the sign of the mass-flux transpose; the check must fail loudly."""
    model = TsunamiModel.from_setup(TsunamiSetup(K=64, T_F=800.0), backend="numpy")
    S = sample_point(model, rng)
    good = model.J_grad(S, 5.0)
    check = gradient_check(lambda t: model.J(t, 5.0), good, S, rng.standard_normal((2, S.size)))
    assert check.worst <= 1e-6

    kern = get_kernels("numpy")
    original = kern.rhs_vjp

    def broken(h, v, B, hbar, eps, g, dhb, dvb, hb, vb, phib):
        return original(h, v, B, hbar, eps, g, -dhb, dvb, hb, vb, phib)

    monkeypatch.setattr(kern, "rhs_vjp", broken)
    bad = model.J_grad(S, 5.0)
    check = gradient_check(lambda t: model.J(t, 5.0), bad, S, rng.standard_normal((2, S.size)))
    assert check.worst > 1e-5


def test_adjoint_seeds_follow_objective(coarse_model, rng):
    S = sample_point(coarse_model, rng)
    traj = coarse_model.forward(S)
    adj = solve_adjoint(traj, coarse_model.spec("regularized", 2.0))
    assert adj.seeds.sum() == pytest.approx(2.0)
    adj = solve_adjoint(traj, coarse_model.spec("timeopt", 2.0))
    assert adj.level == int(np.argmax(traj.fobs))
    assert np.count_nonzero(adj.seeds) == 1
    with pytest.raises(ValueError):
        solve_adjoint(traj, coarse_model.spec("timeopt", 1.0, level=traj.nsteps + 1))


def test_objective_spec_validation(coarse_model):
    with pytest.raises(ValueError):
        ObjectiveSpec("mean", 1.0, coarse_model.window)
    with pytest.raises(ValueError):
        ObjectiveSpec("regularized", 1.0, coarse_model.window, gamma=0.0)
    with pytest.raises(ValueError):
        ObjectiveSpec("timeopt", -1.0, coarse_model.window)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), gamma=st.floats(1e-4, 1.0))
def test_f_gamma_is_bounded_soft_maximum(seed, gamma):
    rng = np.random.default_rng(seed)
    n, dt = 50, 2.0
    f = rng.standard_normal(n + 1) * 0.1
    F = f_gamma(f, dt, gamma)
    # a trapezoid-weighted mean of exp(f/gamma) lies below exp(max f / gamma)
    assert F <= f.max() + 1e-12
    w = trapezoid_weights(n, dt)
    assert F >= gamma * np.log(w.max() / (n * dt)) + f.max() - 1e-12
    weights = f_gamma_weights(f, dt, gamma)
    assert weights.sum() == pytest.approx(1.0)
    assert np.all(weights >= 0)


def test_f_gamma_weights_are_its_gradient(rng):
    f = 0.05 * rng.standard_normal(31)
    dt, gamma = 3.0, 0.003
    e = 1e-8
    fd = np.array([(f_gamma(f + e * d, dt, gamma) - f_gamma(f - e * d, dt, gamma)) / (2 * e) for d in np.eye(31)])
    np.testing.assert_allclose(f_gamma_weights(f, dt, gamma), fd, rtol=1e-5, atol=1e-9)


def test_f_gamma_tends_to_maximum():
    t = np.linspace(0, 1, 2001)
    f = np.exp(-((t - 0.3) / 0.05) ** 2)
    errs = [f.max() - f_gamma(f, t[1], g) for g in (1e-1, 1e-2, 1e-3)]
    assert errs[0] > errs[1] > errs[2] > 0
    with pytest.raises(ValueError):
        f_gamma(f, t[1], 0.0)


def test_time_derivative_of_linear_momentum():
    m = Mesh(0.0, 100e3, 50)
    window = ObservationWindow(20e3, 30e3)
    V = m.to_dg(3e-4 * m.nodes - 1.0)[None]
    traj = SimpleNamespace(mesh=m, V=V)
    assert time_derivative(traj, window, 2.0, 0) == pytest.approx(2.0 * 3e-4, rel=1e-12)
    traj = SimpleNamespace(mesh=m, V=np.zeros_like(V))
    assert time_derivative(traj, window, 2.0, 0) == 0.0


def test_time_derivative_tracks_observable_rate():
    """dJ/dt = -lambda df/dt up to the interface penalty of the DG flux."""
    model = TsunamiModel.from_setup(TsunamiSetup(K=200, T_F=2500.0))
    traj = model.forward(model.measure.sqrt_cov @ np.random.default_rng(5).standard_normal(model.n_s))
    fd = -np.gradient(traj.fobs, traj.dt)
    exact = np.array([time_derivative(traj, model.window, 1.0, n) for n in range(traj.nsteps + 1)])
    assert np.corrcoef(fd, exact)[0, 1] > 0.9
    big = np.abs(fd) > 0.3 * np.abs(fd).max()
    # the trace formula lags slightly near zero crossings
    assert np.mean(np.sign(fd[big]) == np.sign(exact[big])) > 0.95
    # the sign flips where the observable peaks
    k = int(np.argmax(traj.fobs))
    assert exact[k - 5] < 0 < exact[k + 5]


def test_hessian_vector_product_on_quadratic(rng):
    A = rng.standard_normal((4, 4))
    A = A + A.T
    d = rng.standard_normal(4)
    np.testing.assert_allclose(hessian_vector_product(lambda x: A @ x, rng.standard_normal(4), d), A @ d, rtol=1e-9)
    with pytest.raises(ValueError):
        hessian_vector_product(lambda x: x, np.zeros(2), np.ones(2), step=0.0)


def test_gradient_check_reports_table():
    J = lambda x: float(x @ x)  # noqa: E731
    check = gradient_check(J, np.array([2.0, 0.0]), np.array([1.0, 0.0]), np.eye(2), steps=(1e-3, 1e-5))
    assert len(check.table) == 4
    assert check.worst < 1e-8
    wrong = gradient_check(J, np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.eye(2)[:1])
    assert wrong.worst == pytest.approx(1.0)


def test_bathymetry_sensitivity_matches_direct_perturbation(coarse_model, rng):
    """Bbar contracted with a nodal perturbation equals the FD of F along it."""
    S = sample_point(coarse_model, rng)
    traj = coarse_model.forward(S)
    spec = coarse_model.spec("regularized", 1.0)
    Bbar = adjoint.bathymetry_sensitivity(traj, solve_adjoint(traj, spec))
    dB = np.zeros(coarse_model.mesh.K + 1)
    dB[20:30] = rng.standard_normal(10)
    B = coarse_model.bathymetry(S).B
    e = 1e-4

    def F(Bn):
        from ldtprob.swe import solve_forward

        tr = solve_forward(Bathymetry(Bn, coarse_model.B0), coarse_model.mesh, coarse_model.T_F,
                           coarse_model.dt, coarse_model.eps, coarse_model.window)
        return adjoint.objective_value(tr, spec)

    fd = (F(B + e * dB) - F(B - e * dB)) / (2 * e)
    assert float(Bbar @ dB) == pytest.approx(fd, rel=1e-6)
