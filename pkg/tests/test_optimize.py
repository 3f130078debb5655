import numpy as np
import pytest

from ldtprob.errors import NumericalError
from ldtprob.measures import GaussianMeasure
from ldtprob.optimize import (
    Problem,
    TimeProblem,
    find_local_optima,
    is_distinct,
    kkt_residual,
    minimize_hamiltonian,
    minimize_timeopt,
    second_order_check,
    solve_at_level,
    sweep_lambda,
)
from ldtprob.toys import LinearToy, ParabolicToy


def random_linear(rng, n):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    C = (Q * np.exp(rng.uniform(-1, 2, n))) @ Q.T
    return LinearToy(rng.standard_normal(n), GaussianMeasure(rng.standard_normal(n), C))


@pytest.mark.parametrize("n", [1, 5, 20])
def test_linear_problem_is_solved_in_one_step(rng, n):
    toy = random_linear(rng, n)
    lam = 2.5
    rec = minimize_hamiltonian(toy.problem(), lam)
    expected = toy.measure.mean + lam * toy.measure.cov @ toy.a
    assert rec.converged and rec.iterations <= 2
    np.testing.assert_allclose(rec.theta, expected, rtol=1e-12, atol=1e-12)
    assert rec.kkt <= 1e-13
    assert rec.z == pytest.approx(toy.F(expected))
    assert rec.I == pytest.approx(toy.rate(rec.z))


def test_parabolic_optimizer_before_split():
    toy = ParabolicToy(0.1)
    for z in (1.0, 3.0, 4.5):
        rec = minimize_hamiltonian(toy.problem(), toy.lam(z), start=[0.1, 0.3], tol=1e-7)
        assert rec.converged
        np.testing.assert_allclose(rec.theta, toy.optimizers(z)[0], atol=1e-4)
        assert rec.I == pytest.approx(toy.rate(z), rel=1e-6)
        assert second_order_check(toy.problem(), rec).ok


def test_parabolic_second_order_fails_past_split():
    toy = ParabolicToy(0.1)
    # (z, 0) is a KKT point beyond the split but not a minimizer
    rec = toy.records(4.0)[0]
    rec.theta = np.array([6.0, 0.0])
    rec.lam = 6.0
    assert kkt_residual(toy.problem(), rec.theta, rec.lam) == pytest.approx(0.0, abs=1e-15)
    report = second_order_check(toy.problem(), rec)
    assert not report.ok and report.min_value < 0


def test_nonlinear_convergence_and_kkt(rng):
    m = GaussianMeasure(np.zeros(3), np.diag([1.0, 4.0, 0.25]))
    w = np.array([1.0, 0.5, -2.0])

    def vg(th):
        s = float(w @ th)
        return s + 0.2 * np.sin(s), (1 + 0.2 * np.cos(s)) * w

    rec = minimize_hamiltonian(Problem(m, vg), 0.8)
    assert rec.converged
    assert rec.kkt <= 1e-5
    # history is monotone in H
    H = [h[0] for h in rec.history]
    assert all(b <= a + 1e-14 for a, b in zip(H, H[1:]))


def test_warm_sweep_is_monotone_and_cold_matches():
    toy = ParabolicToy(0.1)
    lams = [0.5, 1.0, 2.0, 3.0, 4.0]
    warm = sweep_lambda(toy.problem(), lams, warm=True)
    cold = sweep_lambda(toy.problem(), lams, warm=False)
    assert warm.monotone and np.all(np.diff(warm.z) > 0)
    np.testing.assert_allclose(warm.z, lams, rtol=1e-5)
    np.testing.assert_allclose(cold.z, warm.z, rtol=1e-5)
    np.testing.assert_allclose(warm.I, 0.5 * np.array(lams) ** 2, rtol=1e-5)
    assert warm.lams.tolist() == lams


def test_sweep_rejects_bad_grid():
    toy = LinearToy.standard(2)
    with pytest.raises(ValueError):
        sweep_lambda(toy.problem(), [1.0, 1.0])
    with pytest.raises(ValueError):
        sweep_lambda(toy.problem(), [-1.0, 2.0])
    with pytest.raises(ValueError):
        minimize_hamiltonian(toy.problem(), 0.0)


def test_sweep_records_numerical_failure():
    m = GaussianMeasure.isotropic(2)

    def vg(th):
        if th[0] > 0.5:
            raise NumericalError("solver blew up")
        return float(th[0]), np.array([1.0, 0.0])

    def minimize(p, lam, start):
        if lam > 1.0:
            raise NumericalError("diverged")
        return minimize_hamiltonian(p, lam, start)

    res = sweep_lambda(Problem(m, vg), [0.2, 2.0], minimize=minimize)
    assert res.records[0].converged
    assert not res.records[1].converged and np.isnan(res.records[1].z)


def test_line_search_treats_solver_failure_as_rejection():
    m = GaussianMeasure.isotropic(1)

    def value(th):
        if th[0] > 1.2:
            raise NumericalError("positivity")
        return float(th[0])

    p = Problem(m, lambda th: (value(th), np.ones(1)), value=value)
    rec = minimize_hamiltonian(p, 1.0, max_iter=200)
    # the unconstrained optimum 1.0 is reachable without crossing the failure region
    assert rec.theta[0] == pytest.approx(1.0, abs=1e-5)


def test_unconverged_run_is_flagged():
    m = GaussianMeasure(np.zeros(2), np.diag([1.0, 1e-4]))

    def vg(th):
        return float(np.sin(th[0]) + th[1] ** 3), np.array([np.cos(th[0]), 3 * th[1] ** 2])

    rec = minimize_hamiltonian(Problem(m, vg), 3.0, start=[0.3, 0.1], max_iter=1, tol=1e-12)
    assert rec.iterations == 1 and not rec.converged


def test_timeopt_on_moving_bump():
    """Observable ``f_m = a_m^T theta`` with a peak in time; argmax level is found."""
    n_t, dim = 41, 3
    rng = np.random.default_rng(1)
    A = rng.standard_normal((n_t, dim)) * np.exp(-((np.arange(n_t) - 25) / 4.0) ** 2)[:, None]
    m = GaussianMeasure.isotropic(dim)
    tp = TimeProblem(m, lambda th: A @ th, lambda th, k: (float(A[k] @ th), A[k].copy()),
                     lambda th, k: 0.0, dt=1.0)
    rec = minimize_timeopt(tp, 2.0)
    k = int(np.argmax(np.linalg.norm(A, axis=1)))
    assert rec.converged
    assert rec.level == k
    np.testing.assert_allclose(rec.theta, 2.0 * A[k], rtol=1e-10)
    assert rec.t_star == k


def two_branch_problem():
    """``F = sqrt(theta_1^2 + 1) + 0.2 theta_1``: optimizers on both sides of the mean."""
    m = GaussianMeasure.isotropic(2)
    F = lambda t: float(np.sqrt(t[0] ** 2 + 1.0) + 0.2 * t[0])
    grad = lambda t: np.array([t[0] / np.sqrt(t[0] ** 2 + 1.0) + 0.2, 0.0])
    problem = Problem.from_functions(m, F, grad)
    return m, (lambda lam, start=None: minimize_hamiltonian(problem, lam, start, tol=1e-10))


def test_multistart_finds_the_mirror_branch():
    m, minimize = two_branch_problem()
    main = minimize(3.0)
    assert main.theta[0] > 0
    found = find_local_optima(minimize, m, 3.0, [main.theta], [2 * m.mean - main.theta, 1.1 * main.theta])
    assert len(found) == 1
    other = found[0]
    assert other.theta[0] < 0 and other.H > main.H
    assert not is_distinct(m, 1.01 * main.theta, [main.theta])


def test_solve_at_level_follows_a_branch():
    m, minimize = two_branch_problem()
    main = minimize(3.0)
    other = find_local_optima(minimize, m, 3.0, [main.theta], [-main.theta])[0]
    at = solve_at_level(minimize, main.z, 3.0 * main.z / other.z, other.theta)
    assert at.z == pytest.approx(main.z, rel=1e-4)
    assert at.theta[0] < 0 and at.I > main.I
    # on this branch F = sqrt(t^2 + 1) - 0.2 |t| = z has the closed form below
    t = (0.2 * main.z + np.sqrt(main.z**2 - 0.96)) / 0.96
    assert -at.theta[0] == pytest.approx(t, rel=1e-3)
    with pytest.raises(ValueError):
        solve_at_level(minimize, 0.0, 1.0, other.theta)
    with pytest.raises(NumericalError):
        solve_at_level(minimize, main.z, 3.0, other.theta, max_solves=1)
