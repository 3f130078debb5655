import numpy as np
import pytest

from ldtprob.errors import ConfigError
from ldtprob.measures import gaussian_rate
from ldtprob.source import (
    BasisFormatError,
    SlipBasis,
    SlipPrior,
    analytic_surrogate_basis,
    bathymetry_from_slips,
    load_basis_from_file,
    slip_rate,
    write_basis_csv,
    write_slip_samples,
)
from ldtprob.swe import Mesh, builtin_profile


@pytest.fixture(scope="module")
def mesh():
    return Mesh(0.0, 400e3, 400)


@pytest.fixture(scope="module")
def basis(mesh):
    return analytic_surrogate_basis(mesh, width=5e3, amplitude=0.25)


def test_zero_slip_gives_reference_bathymetry(mesh, basis):
    B0 = builtin_profile("tohoku", mesh.nodes)
    B = bathymetry_from_slips(basis, np.zeros(20), B0)
    np.testing.assert_array_equal(B.B, B0)


def test_perturbation_is_linear(mesh, basis, rng):
    B0 = builtin_profile("tohoku", mesh.nodes)
    S1, S2 = rng.standard_normal((2, 20))
    a, b = 1.7, -0.3
    lhs = bathymetry_from_slips(basis, a * S1 + b * S2, B0).B
    rhs = a * basis.perturbation(S1) + b * basis.perturbation(S2) + B0
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)
    np.testing.assert_allclose(basis.perturbation(2 * S1), 2 * basis.perturbation(S1), rtol=1e-15, atol=1e-300)


def test_unit_slip_reproduces_basis_column(basis):
    e = np.zeros(20)
    e[9] = 1.0
    np.testing.assert_array_equal(basis.perturbation(e), basis.O[:, 9])


def test_perturbation_rejects_wrong_length(basis):
    with pytest.raises(ValueError):
        basis.perturbation(np.zeros(19))


@pytest.mark.parametrize(
    "S, expected",
    [(np.zeros(20), 0.0), (np.r_[10.0, np.zeros(19)], 0.5), (np.full(20, 10.0), 10.0)],
)
def test_slip_rate_examples(S, expected):
    prior = SlipPrior.isotropic(20, 10.0)
    assert slip_rate(prior, S) == pytest.approx(expected)
    assert slip_rate(prior, S) == gaussian_rate(prior.measure, S)


def test_surrogate_basis_invariants(mesh, basis):
    basis.check(strict=True)
    x = mesh.nodes
    for i in range(basis.n_s):
        col = basis.O[:, i]
        assert np.max(np.abs(col)) == pytest.approx(0.25, rel=0.02)
        assert abs(np.trapezoid(col, x)) <= 0.05 * np.trapezoid(np.abs(col), x)
    # shoreward uplift, seaward downlift for positive slip
    c = basis.centers[10]
    col = basis.O[:, 10]
    assert col[np.argmin(np.abs(x - (c - 5e3)))] > 0
    assert col[np.argmin(np.abs(x - (c + 5e3)))] < 0


def test_neighbouring_columns_are_translates():
    # patch spacing equals the element size
    mesh = Mesh(0.0, 400e3, 800)
    lo = 178e3
    hi = lo + 19 * 500.0
    b = analytic_surrogate_basis(mesh, (lo, hi), 20, width=2e3)
    shift = int(round(500.0 / mesh.hbar))
    for i in range(3, 16):
        np.testing.assert_allclose(b.O[shift:, i + 1], b.O[:-shift, i], atol=1e-12)


def test_single_patch_is_exactly_zero_mean():
    mesh = Mesh(0.0, 400e3, 800)
    b = analytic_surrogate_basis(mesh, (180e3, 180e3), 1, width=5e3)
    assert abs(np.trapezoid(b.O[:, 0], mesh.nodes)) < 1e-12


def test_surrogate_default_width_is_twice_spacing(mesh):
    b = analytic_surrogate_basis(mesh, n_s=4, segment=(150e3, 180e3))
    tau_peak = mesh.nodes[np.argmax(b.O[:, 0])] - b.centers[0]
    assert tau_peak == pytest.approx(-20e3, abs=mesh.hbar)


def test_segment_outside_domain_is_config_error(mesh):
    with pytest.raises(ConfigError):
        analytic_surrogate_basis(mesh, (390e3, 410e3))
    with pytest.raises(ConfigError):
        analytic_surrogate_basis(mesh, n_s=0)


def test_basis_file_round_trip(tmp_path, mesh, basis):
    p = tmp_path / "basis.csv"
    write_basis_csv(basis, p)
    again = load_basis_from_file(p, mesh)
    np.testing.assert_allclose(again.O, basis.O, rtol=0, atol=1e-10)
    assert again.provenance == "file"


def test_file_is_interpolated_linearly(tmp_path):
    # a two-row file cannot satisfy the support check, so use a hat
    mesh = Mesh(0.0, 10.0, 5)
    p = tmp_path / "b.csv"
    p.write_text("x,O_1\n0,0\n5,1\n10,0\n")
    with pytest.warns(UserWarning):
        b = load_basis_from_file(p, mesh)
    np.testing.assert_allclose(b.O[:, 0], 1.0 - np.abs(mesh.nodes - 5.0) / 5.0)


def test_two_row_file_fails_support_check(tmp_path):
    mesh = Mesh(0.0, 10.0, 5)
    p = tmp_path / "b.csv"
    p.write_text("x,O_1\n0,1\n10,-1\n")
    with pytest.raises(BasisFormatError, match="decay"):
        load_basis_from_file(p, mesh)


def test_missing_column_names_the_column(tmp_path, mesh):
    p = tmp_path / "b.csv"
    p.write_text("x,O_1,O_3\n0,0,0\n400000,0,0\n")
    with pytest.raises(BasisFormatError) as err:
        load_basis_from_file(p, mesh)
    assert err.value.column == "O_2"
    assert "O_2" in str(err.value)


@pytest.mark.parametrize(
    "text, column",
    [("y,O_1\n0,0\n1,0\n", "x"), ("x,O_1\n0,0\n-1,0\n", "x"), ("x,O_1\n0,0\n100,0\n", "x")],
)
def test_malformed_files(tmp_path, mesh, text, column):
    p = tmp_path / "b.csv"
    p.write_text(text)
    with pytest.raises(BasisFormatError) as err:
        load_basis_from_file(p, mesh)
    assert err.value.column == column


def test_slip_samples_csv(tmp_path):
    p = tmp_path / "s.csv"
    write_slip_samples(np.arange(6.0).reshape(2, 3), p)
    lines = p.read_text().splitlines()
    assert lines[0] == "sample_id,s_1,s_2,s_3"
    assert lines[2].split(",")[0] == "1"


def test_bathymetry_field_is_gaussian(mesh, basis):
    prior = SlipPrior.isotropic(20, 10.0)
    S = prior.measure.sample(3, 100_000)
    i, j = np.argmin(np.abs(mesh.nodes - 180e3)), np.argmin(np.abs(mesh.nodes - 183e3))
    P = S @ basis.O[[i, j]].T
    emp = np.cov(P.T)
    exact = basis.O[[i, j]] @ prior.cov @ basis.O[[i, j]].T
    np.testing.assert_allclose(emp, exact, rtol=0.05)


def test_check_rejects_nonzero_mean_column():
    x = np.linspace(0, 1, 11)
    O = np.zeros((11, 1))
    O[3:8, 0] = 1.0
    b = SlipBasis(x, O, "file")
    with pytest.raises(ValueError):
        b.check(strict=True)
    with pytest.warns(UserWarning):
        b.check(strict=False)
