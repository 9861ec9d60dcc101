# tests/test_model.py
import numpy as np
import pytest

from model import (
    AssumptionViolation,
    Forcing,
    NonlinearityProfile,
    ProfileNotAudited,
    SourceTerm,
    audit_assumptions,
    audited,
    default_audit_grid,
    dissipation_density,
    energy,
)
from spectral_domain import SpectralState, build_basis, lp_norm, to_physical


def _audit(g_linear, g_quintic, f_terms, lambda1=1.0):
    return audit_assumptions(NonlinearityProfile.from_terms(g_linear, g_quintic, f_terms), lambda1)


class TestAudit:
    def test_quintic_source_and_damping(self):
        report = _audit(0.0, 1.0, [(1.0, 5.0)])
        assert report.kappa0 == pytest.approx(5.0)
        assert report.kappa1 == pytest.approx(5.0)
        assert report.kappa2 == 0.0
        assert report.nu == 0.0
        assert report.C_nu == 0.0
        assert report.omega == 1.0
        assert report.L_f == pytest.approx(20.0)
        assert report.C_f == pytest.approx(5.0)
        assert report.mu == 0.0
        assert report.K_f == 0.0
        assert report.satisfies_assumption

    def test_linear_damping_keeps_quintic_constants(self):
        report = _audit(1.0, 1.0, [(1.0, 5.0)])
        assert report.kappa2 == 1.0
        assert report.kappa0 == pytest.approx(5.0)
        assert report.kappa1 == pytest.approx(5.0)

    def test_negative_linear_source(self):
        report = _audit(0.0, 1.0, [(-0.5, 1.0)])
        assert report.nu == pytest.approx(0.5)
        assert report.omega == pytest.approx(0.5)
        assert report.C_nu == pytest.approx(0.0, abs=1e-12)
        assert report.mu == pytest.approx(1.05 * 0.5)
        assert report.K_f == pytest.approx(report.mu)

    def test_dissipativity_violation(self):
        with pytest.raises(AssumptionViolation) as excinfo:
            _audit(0.0, 1.0, [(-2.0, 1.0)])
        assert excinfo.value.inequality == "hyp-inf-f"
        assert excinfo.value.name == "dissipativity"

    def test_double_well_needs_lambda1_above_one(self):
        with pytest.raises(AssumptionViolation) as excinfo:
            _audit(1.0, 1.0, [(1.0, 3.0), (-1.0, 1.0)], lambda1=1.0)
        assert excinfo.value.inequality == "hyp_f2"
        assert excinfo.value.name == "potential_bounds"

        report = _audit(1.0, 1.0, [(1.0, 3.0), (-1.0, 1.0)], lambda1=2.0)
        assert report.nu == pytest.approx(1.0)
        assert report.omega == pytest.approx(0.5)
        assert report.C_nu == pytest.approx(0.0, abs=1e-12)
        assert report.mu == pytest.approx(1.05, rel=1e-6)

    def test_unbounded_curvature_rejected(self):
        grid = default_audit_grid()
        grid[grid.size // 2] = 0.0
        profile = NonlinearityProfile.from_terms(0.0, 1.0, [(1.0, 1.5)])
        with pytest.raises(AssumptionViolation) as excinfo:
            audit_assumptions(profile, 1.0, grid)
        assert excinfo.value.inequality == "hyp_f''"
        assert excinfo.value.name == "source_curvature"

    def test_negative_damping_rejected(self):
        with pytest.raises(AssumptionViolation) as excinfo:
            _audit(-1.0, 1.0, [])
        assert excinfo.value.inequality == "hyp_g'"
        assert excinfo.value.name == "damping_monotone"

    def test_zero_quintic_damping_is_reported_not_raised(self):
        report = _audit(1.0, 0.0, [])
        assert report.damping_coercive is False
        assert not report.satisfies_assumption

    def test_grid_too_small(self):
        profile = NonlinearityProfile.from_terms(0.0, 1.0, [])
        with pytest.raises(ValueError):
            audit_assumptions(profile, 1.0, np.linspace(-5.0, 5.0, 20001))
        with pytest.raises(ValueError):
            audit_assumptions(profile, 1.0, np.linspace(-10.0, 10.0, 500))

    def test_source_exponent_range(self):
        with pytest.raises(ValueError):
            SourceTerm(1.0, 6.0)
        with pytest.raises(ValueError):
            SourceTerm(1.0, 0.5)


class TestNonlinearities:
    def test_damping_identity_and_monotonicity(self):
        profile = audited(NonlinearityProfile.from_terms(1.0, 1.0, []), 1.0)
        kappa0 = profile.audit.kappa0
        rng = np.random.default_rng(0)
        s = rng.uniform(-3.0, 3.0, 10_000)
        r = rng.uniform(-3.0, 3.0, 10_000)
        assert np.allclose(profile.eval_g(s) * s, s ** 2 + s ** 6)
        lhs = (profile.eval_g(r) - profile.eval_g(s)) * (r - s)
        rhs = (r - s) ** 2 + 0.1 * kappa0 * (r ** 4 + s ** 4) * (r - s) ** 2
        assert np.all(lhs >= rhs - 1e-9 * (1.0 + np.abs(lhs)))

    def test_potential_matches_source(self):
        profile = NonlinearityProfile.from_terms(0.0, 1.0, [(1.0, 5.0), (-0.5, 1.0)])
        s = np.array([-2.0, -0.5, 0.0, 0.7, 1.5])
        assert np.allclose(profile.eval_F(s), s ** 6 / 6.0 - 0.25 * s ** 2)
        assert np.allclose(profile.eval_f(s), s ** 5 - 0.5 * s)
        assert np.allclose(profile.eval_fp(s), 5.0 * s ** 4 - 0.5)

    def test_unaudited_profile_is_refused(self):
        basis = build_basis(1, 4)
        profile = NonlinearityProfile.from_terms(0.0, 1.0, [(1.0, 5.0)])
        assert not profile.is_audited
        with pytest.raises(ProfileNotAudited):
            energy(SpectralState.zeros(basis), profile, Forcing.zero(basis), basis)

    def test_describe_contains_constants_once_audited(self):
        profile = audited(NonlinearityProfile.from_terms(0.0, 1.0, [(1.0, 5.0)]), 1.0)
        info = profile.describe()
        assert info["f_terms"] == [[1.0, 5.0]]
        assert info["constants"]["omega"] == 1.0
        assert info["satisfies_assumption"] is True

    def test_describe_lists_labelled_checks_and_tail_notes(self):
        profile = audited(NonlinearityProfile.from_terms(1.0, 1.0, [(1.0, 3.0), (-1.0, 1.0)]), 2.0)
        info = profile.describe()
        labels = {c["name"]: c["inequality"] for c in info["checks"]}
        assert labels["dissipativity"] == "hyp-inf-f"
        assert labels["potential_bounds"] == "hyp_f2"
        assert labels["damping_growth"] == "hyp_g'"
        assert info["tail_notes"] == list(profile.audit.tail_notes)
        assert any("nu >= -a_1" in note for note in info["tail_notes"])

    def test_derivatives_match_finite_differences(self):
        profile = NonlinearityProfile.from_terms(0.5, 2.0, [(1.0, 5.0), (-0.5, 1.0), (2.0, 3.0)])
        s = np.array([-1.7, -0.6, 0.3, 0.9, 1.4])
        h = 1e-5
        fp_fd = (profile.eval_f(s + h) - profile.eval_f(s - h)) / (2.0 * h)
        fpp_fd = (profile.eval_fp(s + h) - profile.eval_fp(s - h)) / (2.0 * h)
        gp_fd = (profile.eval_g(s + h) - profile.eval_g(s - h)) / (2.0 * h)
        F_fd = (profile.eval_F(s + h) - profile.eval_F(s - h)) / (2.0 * h)
        assert profile.eval_fp(s) == pytest.approx(fp_fd, rel=1e-7)
        assert profile.eval_fpp(s) == pytest.approx(fpp_fd, rel=1e-7)
        assert profile.eval_gp(s) == pytest.approx(gp_fd, rel=1e-7)
        assert profile.eval_f(s) == pytest.approx(F_fd, rel=1e-7)


class TestForcingAndEnergy:
    def test_forcing_presets(self):
        basis = build_basis(1, 4)
        assert Forcing.zero(basis).norm == 0.0
        h = Forcing.mode(basis, 0.5)
        assert h.norm == pytest.approx(0.5)
        assert h.h_coeffs[0] == 0.5
        with pytest.raises(ValueError):
            h.check_basis(build_basis(1, 5))

    def test_forcing_from_function(self):
        basis = build_basis(1, 6)
        h = Forcing.from_function(lambda x: np.sin(x), basis)
        expected = np.zeros(6)
        expected[0] = np.sqrt(np.pi / 2.0)
        assert np.allclose(h.h_coeffs, expected, atol=1e-12)

    def test_non_finite_forcing_rejected(self):
        with pytest.raises(ValueError):
            Forcing(np.array([1.0, np.inf]))

    def test_energy_components(self):
        basis = build_basis(1, 4)
        profile = audited(NonlinearityProfile.from_terms(0.0, 1.0, [(1.0, 5.0)]), basis.lambda1)
        forcing = Forcing.mode(basis, 0.5)
        assert energy(SpectralState.zeros(basis), profile, forcing, basis).total == 0.0

        state = SpectralState([0.3, 0.0, 0.1, 0.0], [1.0, 0.0, 0.0, 0.0])
        snap = energy(state, profile, forcing, basis)
        u_grid = to_physical(state.u_coeffs, basis)
        assert snap.kinetic == pytest.approx(0.5)
        assert snap.gradient == pytest.approx(0.5 * (0.09 + 9.0 * 0.01))
        assert snap.potential == pytest.approx(lp_norm(u_grid, 6, basis) ** 6 / 6.0)
        assert snap.forcing_term == pytest.approx(0.15)
        assert snap.total == pytest.approx(snap.kinetic + snap.gradient + snap.potential - 0.15)

    def test_dissipation_density_quintic(self):
        basis = build_basis(1, 4)
        profile = audited(NonlinearityProfile.from_terms(0.0, 1.0, []), basis.lambda1)
        v_grid = to_physical(np.array([0.5, 0.2, 0.0, 0.1]), basis)
        assert dissipation_density(v_grid, profile, basis) == pytest.approx(lp_norm(v_grid, 6, basis) ** 6)

    def test_dissipation_density_of_first_mode(self):
        basis = build_basis(1, 4)
        v_grid = np.sin(basis.quad_nodes)
        quintic = audited(NonlinearityProfile.from_terms(0.0, 1.0, []), basis.lambda1)
        linear = audited(NonlinearityProfile.from_terms(1.0, 0.0, []), basis.lambda1)
        assert dissipation_density(v_grid, quintic, basis) == pytest.approx(5.0 * np.pi / 16.0, rel=1e-12)
        assert dissipation_density(v_grid, linear, basis) == pytest.approx(np.pi / 2.0, rel=1e-12)

    def test_energy_of_first_mode_with_quintic_source(self):
        basis = build_basis(1, 4)
        profile = audited(NonlinearityProfile.from_terms(0.0, 1.0, [(1.0, 5.0)]), basis.lambda1)
        u = np.zeros(4)
        u[0] = np.sqrt(np.pi / 2.0)
        snap = energy(SpectralState(u, np.zeros(4)), profile, Forcing.zero(basis), basis)
        assert snap.gradient == pytest.approx(np.pi / 4.0, rel=1e-12)
        assert snap.potential == pytest.approx(5.0 * np.pi / 96.0, rel=1e-12)
        assert snap.total == pytest.approx(np.pi / 4.0 + 5.0 * np.pi / 96.0, rel=1e-12)
