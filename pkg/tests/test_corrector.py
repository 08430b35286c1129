import numpy as np
import pytest

from homolab.corrector import (
    MinimalRadiusConfig,
    build_flux_corrector,
    build_potential,
    linearized_coefficient,
    load_corrector_set,
    localization_gap,
    minimal_radius,
    save_corrector_set,
    solve_linearized_corrector,
    solve_localized_corrector,
    solve_periodic_corrector,
)
from homolab.grid import DiscreteField, PeriodicGrid, div_backward, grad_forward
from homolab.material import make_rational_isotropic, scalar_linear_family
from homolab.randomfield import ParameterField, sample_parameter_field

from conftest import constant_field, layered_field


@pytest.fixture(scope="module")
def sample_cs():
    grid = PeriodicGrid(d=2, n=64, L=1.0)
    fam = make_rational_isotropic(d=2)
    omega = sample_parameter_field(grid, 1 / 8, seed=17)
    cs = solve_periodic_corrector(omega, fam, np.array([[1.0, 0.5]]), tol=1e-11)
    build_flux_corrector(cs)
    build_potential(cs)
    return cs


def test_constant_medium_has_zero_corrector():
    grid = PeriodicGrid(d=2, n=16, L=1.0)
    fam = make_rational_isotropic(d=2)
    cs = solve_periodic_corrector(constant_field(grid, 0.3), fam, np.array([[1.0, 0.0]]),
                                  tol=1e-12)
    assert np.max(np.abs(cs.phi.values)) <= 1e-10
    # the flux is then the constant A(omega, xi)
    assert np.ptp(cs.q.values[..., 0, 0]) <= 1e-9


def test_zero_slope_short_circuits():
    grid = PeriodicGrid(d=1, n=16)
    fam = make_rational_isotropic()
    cs = solve_periodic_corrector(constant_field(grid), fam, np.array([[0.0]]))
    assert np.all(cs.phi.values == 0.0) and np.all(cs.q.values == 0.0)
    assert cs.result.newton_iterations == 0


def test_layered_medium_gradient_is_exact_cellwise():
    # layered a in {1, 2}: the flux is the constant harmonic mean and the
    # corrected slope satisfies xi + phi' = q / a(x) sitewise
    grid = PeriodicGrid(d=1, n=128, L=1.0)
    fam = scalar_linear_family(1.5, 0.5)
    omega = layered_field(grid, block=16)
    cs = solve_periodic_corrector(omega, fam, np.array([[1.0]]), tol=1e-12)
    q = cs.q.site_mean()[0, 0]
    assert q == pytest.approx(4.0 / 3.0, abs=1e-10)
    a_site = 1.5 + 0.5 * omega.values[:, 0]
    slope = 1.0 + cs.gradient()[:, 0, 0]
    np.testing.assert_allclose(slope, q / a_site, atol=1e-10)


def test_slope_shape_is_validated():
    grid = PeriodicGrid(d=2, n=16)
    fam = make_rational_isotropic(d=2)
    with pytest.raises(ValueError, match="shape"):
        solve_periodic_corrector(constant_field(grid), fam, np.array([[1.0]]))


def test_flux_is_divergence_free_and_energy_orthogonal(sample_cs):
    grid = sample_cs.grid
    div_q = div_backward(grid, sample_cs.q.values[..., 0, :])
    scale = np.sqrt(np.mean(sample_cs.q.values**2)) / grid.h
    assert np.sqrt(np.mean(div_q**2)) <= 1e-7 * scale
    # <A(xi + grad phi), grad phi> = 0 follows from the discrete equation
    inner = np.mean(np.sum(sample_cs.q.values * sample_cs.gradient(), axis=(-2, -1)))
    assert abs(inner) <= 1e-9


def test_energy_bound_diagnostic(sample_cs):
    assert sample_cs.diagnostics["energy_density"] <= sample_cs.diagnostics["energy_bound"]


def test_sigma_is_exactly_skew_and_identity_is_small(sample_cs):
    assert sample_cs.diagnostics["sigma_skew_max"] == 0.0
    assert sample_cs.diagnostics["sigma_identity_relative"] <= 0.5
    assert sample_cs.theta is not None
    assert sample_cs.diagnostics["theta_identity_relative"] <= 0.5


def test_corrector_uniqueness_from_different_starts():
    grid = PeriodicGrid(d=1, n=256, L=1.0)
    fam = make_rational_isotropic()
    omega = sample_parameter_field(grid, 1 / 16, seed=23)
    xi = np.array([[1.0]])
    tol = 1e-10
    a = solve_periodic_corrector(omega, fam, xi, tol=tol)
    from homolab.corrector import _solve_corrector

    u0 = np.random.default_rng(0).normal(scale=0.1, size=grid.shape + (1,))
    u0 -= u0.mean(axis=0)
    b = _solve_corrector(omega, fam, xi, np.inf, tol, u0=u0)
    diff = DiscreteField(grid, a.phi.values - b.phi.values).l2_norm()
    assert diff <= 10 * tol


def test_corrector_is_stationary_under_lattice_translation():
    grid = PeriodicGrid(d=1, n=256, L=1.0)
    fam = make_rational_isotropic()
    omega = sample_parameter_field(grid, 1 / 16, seed=29)
    xi = np.array([[1.0]])
    a = solve_periodic_corrector(omega, fam, xi, tol=1e-11)
    b = solve_periodic_corrector(omega.translated((37,)), fam, xi, tol=1e-11)
    np.testing.assert_allclose(np.roll(a.phi.values, 37, axis=0), b.phi.values, atol=1e-8)


def test_localized_corrector_converges_to_periodic_as_T_grows():
    grid = PeriodicGrid(d=1, n=512, L=1.0)
    fam = make_rational_isotropic()
    omega = sample_parameter_field(grid, 1 / 32, seed=31)
    xi = np.array([[1.0]])
    per = solve_periodic_corrector(omega, fam, xi, tol=1e-11)
    dists = []
    for T in (0.25, 1.0, 4.0):
        loc = solve_localized_corrector(omega, fam, xi, T, tol=1e-11)
        shift = loc.phi.values.mean(axis=0)  # gauge: the periodic one is mean-free
        dists.append(DiscreteField(grid, loc.phi.values - shift - per.phi.values).l2_norm())
    assert dists[0] > dists[1] > dists[2]


def test_localized_corrector_validation_and_warning():
    grid = PeriodicGrid(d=1, n=64, L=1.0)
    fam = make_rational_isotropic()
    omega = sample_parameter_field(grid, 1 / 8, seed=1)
    with pytest.raises(ValueError, match="below 2"):
        solve_localized_corrector(omega, fam, np.array([[1.0]]), T=1e-5)
    with pytest.raises(ValueError, match="finite"):
        solve_localized_corrector(omega, fam, np.array([[1.0]]), T=np.inf)
    with pytest.warns(UserWarning, match="torus edge"):
        solve_localized_corrector(omega, fam, np.array([[1.0]]), T=1.0)


def test_linearized_corrector_of_linear_family_is_slope_independent():
    # for a linear family the corrector map is linear in xi, so the linearized
    # corrector in direction Xi equals the corrector at slope Xi itself
    grid = PeriodicGrid(d=1, n=256, L=1.0)
    fam = scalar_linear_family(1.5, 0.5)
    omega = sample_parameter_field(grid, 1 / 16, seed=37)
    cs = solve_periodic_corrector(omega, fam, np.array([[2.0]]), tol=1e-12)
    Xi = np.array([[1.0]])
    psi = solve_linearized_corrector(cs, Xi, tol=1e-12)
    direct = solve_periodic_corrector(omega, fam, Xi, tol=1e-12)
    np.testing.assert_allclose(psi.phi.values, direct.phi.values, atol=1e-9)


def test_adjoint_coefficient_is_the_pointwise_transpose(sample_cs):
    a = linearized_coefficient(sample_cs, adjoint=False)
    at = linearized_coefficient(sample_cs, adjoint=True)
    rng = np.random.default_rng(2)
    x = rng.normal(size=a.shape[:2] + (1, 2))
    y = rng.normal(size=a.shape[:2] + (1, 2))
    lhs = np.sum(np.einsum("...abcd,...cd->...ab", a, x) * y)
    rhs = np.sum(x * np.einsum("...abcd,...cd->...ab", at, y))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
    with pytest.raises(ValueError, match="direction"):
        solve_linearized_corrector(sample_cs, np.array([[1.0]]))


def test_minimal_radius_on_a_trivial_medium():
    grid = PeriodicGrid(d=1, n=256, L=4.0)
    fam = make_rational_isotropic()
    cs = solve_localized_corrector(constant_field(grid, 0.2, epsilon=1 / 8), fam,
                                   np.array([[1.0]]), T=0.25, tol=1e-11)
    res = minimal_radius(cs)
    assert res.radius == cs.omega.epsilon  # phi = 0: every radius qualifies
    assert not res.capped
    assert np.all(res.oscillation_ok) and np.all(res.mass_ok)


def test_minimal_radius_validation():
    grid = PeriodicGrid(d=1, n=64, L=1.0)
    fam = make_rational_isotropic()
    cs = solve_periodic_corrector(constant_field(grid), fam, np.array([[0.0]]))
    with pytest.raises(ValueError, match="zero slope"):
        minimal_radius(cs)
    assert MinimalRadiusConfig().K_mass == 8.0


def test_localization_gap_is_positive_and_shrinks_with_T():
    grid = PeriodicGrid(d=1, n=1024, L=2.0)
    fam = make_rational_isotropic()
    omega = sample_parameter_field(grid, 1 / 128, seed=41)
    xi = np.array([[1.0]])
    eps2 = (1 / 128) ** 2
    g1 = localization_gap(omega, fam, xi, 8 * eps2, tol=1e-10)
    g2 = localization_gap(omega, fam, xi, 128 * eps2, tol=1e-10)
    assert g1.gap > 0 and g2.gap > 0
    assert g2.gap < g1.gap
    assert g1.radius == pytest.approx(np.sqrt(8 * eps2))


def test_save_and_load_roundtrip(tmp_path, sample_cs):
    save_corrector_set(tmp_path / "cs", sample_cs)
    back = load_corrector_set(tmp_path / "cs", sample_cs.fam)
    np.testing.assert_array_equal(back.phi.values, sample_cs.phi.values)
    np.testing.assert_array_equal(back.q.values, sample_cs.q.values)
    np.testing.assert_array_equal(back.sigma.values, sample_cs.sigma.values)
    np.testing.assert_array_equal(back.theta.values, sample_cs.theta.values)
    np.testing.assert_array_equal(back.omega.values, sample_cs.omega.values)
    assert back.T == sample_cs.T and back.grid == sample_cs.grid
    assert back.diagnostics["sigma_skew_max"] == 0.0


def test_perturbation_response_decays_away_from_the_flip():
    grid = PeriodicGrid(d=1, n=1024, L=8.0)
    fam = scalar_linear_family(0.3, 0.1)
    omega = sample_parameter_field(grid, 1 / 32, seed=43)
    from homolab.corrector import perturbation_response

    pr = perturbation_response(omega, fam, np.array([[1.0]]), T=0.09, tol=1e-12,
                               far_factor=10.0)
    assert pr.gamma_hat > 0
    assert pr.far_response < pr.origin_response
    with pytest.raises(ValueError, match="too small"):
        perturbation_response(omega, fam, np.array([[1.0]]), T=4.0)
