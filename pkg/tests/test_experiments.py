# tests/test_experiments.py
import numpy as np
import pytest

from experiments import (
    H2_QUANTITIES,
    ExperimentError,
    QuasiStabilityRefused,
    absorbing_ball,
    absorbing_radius_sq,
    attractor_sample,
    ball_pairs,
    continuous_dependence,
    entry_time,
    fractal_dimension_estimate,
    h2_against_stationary,
    h2_tracking,
    holder_weak_norm,
    member_rngs,
    nakao_constant,
    parallel_map,
    quasi_stability_fit,
    run_selftest,
    solve_stationary,
    stationary_experiment,
    worker_count,
)
from galerkin_solver import random_initial_state, simulate
from model import Forcing, NonlinearityProfile, audited
from models import SolverConfig
from spectral_domain import SpectralState, build_basis


def _profile(g_linear, g_quintic, f_terms, basis):
    return audited(NonlinearityProfile.from_terms(g_linear, g_quintic, f_terms), basis.lambda1)


# -----------------------
# Helpers
# -----------------------

def test_parallel_map_preserves_order():
    items = list(range(20))
    assert parallel_map(lambda x: x * x, items, workers=4) == [x * x for x in items]


def test_worker_count_from_environment(monkeypatch):
    monkeypatch.setenv("WAVELAB_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("WAVELAB_THREADS", "many")
    with pytest.raises(ValueError):
        worker_count()


def test_member_rngs_are_reproducible():
    a = [r.standard_normal() for r in member_rngs(42, 3)]
    b = [r.standard_normal() for r in member_rngs(42, 3)]
    assert a == b
    assert len(set(a)) == 3


# -----------------------
# Lipschitz dependence
# -----------------------

class TestContinuousDependence:
    def test_envelope_and_first_order_scaling(self):
        basis = build_basis(1, 8)
        profile = _profile(0.0, 1.0, [(1.0, 5.0)], basis)
        rng = np.random.default_rng(0)
        a = random_initial_state(basis, rng, 1.0)
        direction = random_initial_state(basis, rng, 1.0)
        b = SpectralState(a.u_coeffs + 1e-4 * direction.u_coeffs, a.v_coeffs + 1e-4 * direction.v_coeffs)
        result = continuous_dependence(a, b, profile, Forcing.zero(basis), basis,
                                       SolverConfig(dt=0.01, t_end=1.0), rescaled_gap=1e-5)
        assert result.rho[0] == pytest.approx(1.0)
        assert result.scaling_change is not None and result.scaling_change <= 0.01
        assert result.report.passed
        names = {b.name for b in result.report.bounds}
        assert names == {"exponential_envelope", "first_order_scaling"}

    def test_linear_wave_keeps_ratio_one(self):
        basis = build_basis(1, 4)
        profile = _profile(0.0, 0.0, [], basis)
        rng = np.random.default_rng(4)
        a = random_initial_state(basis, rng, 1.0)
        b = random_initial_state(basis, rng, 0.5)
        result = continuous_dependence(a, b, profile, Forcing.zero(basis), basis,
                                       SolverConfig(dt=0.05, t_end=2.0))
        assert np.allclose(result.rho, 1.0, rtol=1e-10)
        assert result.fitted_C == pytest.approx(0.0, abs=1e-9)
        assert result.report.passed

    def test_identical_data_rejected(self):
        basis = build_basis(1, 4)
        profile = _profile(0.0, 1.0, [(1.0, 5.0)], basis)
        a = random_initial_state(basis, np.random.default_rng(1), 1.0)
        with pytest.raises(ExperimentError):
            continuous_dependence(a, a.copy(), profile, Forcing.zero(basis), basis, SolverConfig())


# -----------------------
# Absorbing ball
# -----------------------

class TestAbsorbingBall:
    def test_entry_time(self):
        times = np.arange(6.0)
        assert entry_time(times, np.array([5.0, 0.5, 5.0, 0.5, 0.5, 0.5]), 1.0, 2.0) == 3
        assert entry_time(times, np.array([5.0, 5.0, 5.0, 5.0, 0.5, 0.5]), 1.0, 2.0) is None

    def test_nakao_constant_for_geometric_decay(self):
        times = np.arange(6.0)
        J = 100.0 * 0.5 ** times
        assert nakao_constant(times, J, 0.0) == pytest.approx(2.0 * 100.0 ** 2)
        assert nakao_constant(times, J[::-1], 0.0) is None

    def test_radius_formula(self):
        basis = build_basis(1, 4)
        profile = _profile(0.0, 1.0, [(1.0, 5.0)], basis)
        radius_sq = absorbing_radius_sq(profile, Forcing.mode(basis, 0.5), basis)
        assert radius_sq == pytest.approx(2.0 ** (14.0 / 3.0) * 0.25)

    def test_trivial_attractor_decay(self):
        basis = build_basis(1, 8)
        profile = _profile(1.0, 1.0, [(1.0, 5.0)], basis)
        result = absorbing_ball(profile, Forcing.zero(basis), basis, SolverConfig(dt=0.02, t_end=8.0),
                                ensemble_size=2, R0=1.0, seed=3, residual_tol=1e-3)
        assert result.radius_sq == 0.0
        assert result.level == 0.0
        assert len(result.members) == 2
        bounds = {b.name: b for b in result.report.bounds}
        assert bounds["trivial_attractor_decay"].passed
        assert bounds["functional_coercivity"].passed
        assert bounds["gradient_system"].passed
        assert set(result.series) == {"time", "member_0", "member_1"}

    def test_forced_members_enter_and_stay(self):
        basis = build_basis(1, 8)
        profile = _profile(1.0, 1.0, [(1.0, 5.0)], basis)
        forcing = Forcing.mode(basis, 0.5)
        result = absorbing_ball(profile, forcing, basis, SolverConfig(dt=0.02, t_end=4.0),
                                ensemble_size=3, R0=1.0, seed=5)
        assert result.level == pytest.approx(0.25)
        assert result.radius_sq == pytest.approx(2.0 ** (14.0 / 3.0) * 0.25)
        assert all(m.stays_inside and m.entry_time == 0.0 for m in result.members)
        bounds = {b.name: b for b in result.report.bounds}
        assert "trivial_attractor_decay" not in bounds
        assert bounds["entry_and_stay"].passed
        assert bounds["limsup_proxy"].passed
        assert bounds["functional_coercivity"].passed


# -----------------------
# Quasi-stability
# -----------------------

class TestQuasiStability:
    def test_refused_without_linear_damping(self):
        basis = build_basis(1, 4)
        profile = _profile(0.0, 1.0, [(1.0, 5.0)], basis)
        pairs = ball_pairs(basis, 0, 1, 1.0)
        with pytest.raises(QuasiStabilityRefused):
            quasi_stability_fit(pairs, profile, Forcing.zero(basis), basis, SolverConfig())

    def test_envelope_decays(self):
        basis = build_basis(1, 4)
        profile = _profile(1.0, 1.0, [(1.0, 5.0)], basis)
        pairs = ball_pairs(basis, 7, 2, 1.0)
        result = quasi_stability_fit(pairs, profile, Forcing.zero(basis), basis,
                                     SolverConfig(dt=0.02, t_end=8.0))
        assert result.c_hat >= 0.0
        assert np.all(np.diff(result.envelope) <= 0.0)
        assert result.rate is None or result.rate > 0.0
        assert any(b.name == "envelope_decay" and b.passed for b in result.report.bounds)

    def test_log_linear_envelope(self):
        basis = build_basis(1, 4)
        profile = _profile(1.0, 1.0, [(1.0, 5.0)], basis)
        pairs = ball_pairs(basis, 7, 2, 0.5)
        result = quasi_stability_fit(pairs, profile, Forcing.zero(basis), basis,
                                     SolverConfig(dt=0.04, t_end=16.0), blocks=6)
        assert result.rate is not None and result.rate > 0.0
        assert result.r_squared >= 0.9
        bounds = {b.name: b for b in result.report.bounds}
        assert bounds["log_linear_fit"].passed
        assert result.report.constants["c_hat"] == result.c_hat


# -----------------------
# Stationary states
# -----------------------

class TestStationary:
    def test_forced_quintic_source(self):
        basis = build_basis(1, 8)
        profile = _profile(1.0, 1.0, [(1.0, 5.0)], basis)
        result = stationary_experiment(profile, Forcing.mode(basis, 0.5), basis, seed=1)
        base = result.states[0]
        assert base.residual <= 1e-9
        assert base.h1_ok and base.h2_ok
        assert base.h2_bound == pytest.approx(0.25)
        assert result.unique is True
        assert result.report.passed

    @pytest.mark.parametrize("norm", [0.0, 0.1, 0.5, 1.0, 2.0])
    def test_forcing_sweep(self, norm):
        basis = build_basis(1, 8)
        profile = _profile(1.0, 1.0, [(1.0, 5.0)], basis)
        result = stationary_experiment(profile, Forcing.mode(basis, norm), basis, seed=2)
        base = result.states[0]
        assert base.residual <= 1e-9
        assert base.h1_ok and base.h2_ok
        assert base.h1_bound == pytest.approx(norm ** 2)
        assert base.h2_bound == pytest.approx(norm ** 2)
        assert result.unique is True
        assert result.report.passed

    def test_double_well_source_with_forcing(self):
        basis = build_basis(2, 3)
        profile = _profile(1.0, 1.0, [(1.0, 3.0), (-1.0, 1.0)], basis)
        forcing = Forcing.mode(basis, 0.3)
        result = stationary_experiment(profile, forcing, basis, seed=3)
        base = result.states[0]
        assert base.residual <= 1e-9
        assert base.h1_ok and base.h2_ok
        assert base.h1_bound == pytest.approx(0.09 / (0.25 * 2.0))
        assert result.unique is None
        assert "uniqueness" not in {b.name for b in result.report.bounds}

    def test_zero_forcing_gives_zero_state(self):
        basis = build_basis(2, 3)
        profile = _profile(1.0, 1.0, [(1.0, 3.0), (-1.0, 1.0)], basis)
        state = solve_stationary(profile, Forcing.zero(basis), basis)
        assert np.allclose(state.u_coeffs, 0.0)
        assert state.iterations == 0


# -----------------------
# Attractor, regularity, dimension
# -----------------------

class TestAttractor:
    def test_trivial_attractor_sample(self):
        basis = build_basis(1, 4)
        profile = _profile(1.0, 1.0, [(1.0, 5.0)], basis)
        ensemble = [random_initial_state(basis, rng, 1.0) for rng in member_rngs(0, 2)]
        sample = attractor_sample(profile, Forcing.zero(basis), basis, SolverConfig(dt=0.02, t_end=10.0),
                                  ensemble, burn_in=8.0, sample_count=50, starts=2, residual_tol=1e-3)
        assert sample.cloud.shape[1] == 2 * basis.size
        assert sample.cloud.shape[0] <= 50
        assert len(sample.stationary) == 1
        assert sample.max_distance < 0.05
        assert sample.energy_monotone
        assert sample.report.constants["stationary_h2_bound"] == 0.0
        assert sample.report.constants["sup_lap_sq"] < 0.05

    def test_burn_in_beyond_horizon(self):
        basis = build_basis(1, 2)
        profile = _profile(1.0, 1.0, [], basis)
        with pytest.raises(ValueError):
            attractor_sample(profile, Forcing.zero(basis), basis, SolverConfig(t_end=1.0),
                             [SpectralState.zeros(basis)], burn_in=2.0, sample_count=10)

    def test_h2_tracking_bounded_for_decaying_run(self):
        basis = build_basis(1, 6)
        profile = _profile(1.0, 1.0, [(1.0, 5.0)], basis)
        start = random_initial_state(basis, np.random.default_rng(2), 1.0)
        traj = simulate(start, profile, Forcing.zero(basis), basis, SolverConfig(dt=0.02, t_end=4.0))
        track = h2_tracking(traj, basis)
        assert track.bounded
        assert set(track.window_sup) == set(H2_QUANTITIES)
        assert all(track.window_sup[name].size == 4 for name in H2_QUANTITIES)
        assert track.sup["lap_sq"] == pytest.approx(float(np.max(track.lap_sq)))
        assert track.sup["vel_h1_sq"] == pytest.approx(float(np.max(track.vel_h1_sq)))
        assert track.sup["acc_sq"] == pytest.approx(float(np.max(track.acc_sq)))
        assert track.slope == max(track.slopes.values())
        assert track.lap_sq.shape == traj.times.shape

    def test_h2_tracking_respects_burn_in(self):
        basis = build_basis(1, 4)
        profile = _profile(1.0, 1.0, [(1.0, 5.0)], basis)
        start = random_initial_state(basis, np.random.default_rng(6), 1.0)
        traj = simulate(start, profile, Forcing.zero(basis), basis, SolverConfig(dt=0.05, t_end=4.0))
        track = h2_tracking(traj, basis, burn_in=2.0)
        late = traj.times - traj.times[0] >= 2.0
        assert track.sup["lap_sq"] == pytest.approx(float(np.max(track.lap_sq[late])))
        assert track.sup["vel_h1_sq"] == pytest.approx(float(np.max(track.vel_h1_sq[late])))

    def test_h2_against_stationary_bound(self):
        basis = build_basis(1, 4)
        profile = _profile(1.0, 1.0, [(1.0, 5.0)], basis)
        out = h2_against_stationary(0.05, profile, Forcing.mode(basis, 0.5), basis)
        assert out["stationary_h2_bound"] == pytest.approx(0.25)
        assert out["sup_lap_sq_over_bound"] == pytest.approx(0.2)
        zero = h2_against_stationary(0.0, profile, Forcing.zero(basis), basis)
        assert zero["stationary_h2_bound"] == 0.0
        assert zero["sup_lap_sq_over_bound"] == 0.0


class TestDimension:
    def test_line_segment(self):
        t = np.linspace(0.0, 1.0, 1200)
        cloud = np.stack([t, 2.0 * t, np.zeros_like(t)], axis=1)
        est = fractal_dimension_estimate(cloud)
        assert est.dimension == pytest.approx(1.0, abs=0.2)
        assert not est.degenerate
        assert est.band[0] <= est.dimension <= est.band[1]

    def test_collapsed_cloud(self):
        est = fractal_dimension_estimate(np.zeros((1000, 4)))
        assert est.dimension == 0.0
        assert est.degenerate

    def test_radii_above_diameter(self):
        cloud = np.random.default_rng(0).uniform(0.0, 1e-3, (1000, 2))
        est = fractal_dimension_estimate(cloud, radii=[0.1, 0.2, 0.4])
        assert est.dimension == 0.0
        assert est.degenerate

    def test_too_few_points(self):
        with pytest.raises(ExperimentError):
            fractal_dimension_estimate(np.zeros((10, 2)))


class TestHolder:
    def test_smooth_trajectory_exponent(self):
        basis = build_basis(1, 6)
        profile = _profile(1.0, 1.0, [(1.0, 5.0)], basis)
        start = random_initial_state(basis, np.random.default_rng(3), 1.0)
        traj = simulate(start, profile, Forcing.zero(basis), basis, SolverConfig(dt=0.01, t_end=1.0))
        est = holder_weak_norm(traj, s_exponent=1.0)
        assert est.gamma is not None
        assert est.gamma >= est.threshold
        assert est.threshold == pytest.approx(1.0 / 6.0 - 0.05)
        assert est.passed
        assert est.gaps.tolist() == pytest.approx([0.01, 0.02, 0.04, 0.08, 0.16])

    def test_stationary_trajectory_has_no_exponent(self):
        basis = build_basis(1, 4)
        profile = _profile(1.0, 1.0, [], basis)
        traj = simulate(SpectralState.zeros(basis), profile, Forcing.zero(basis), basis,
                        SolverConfig(dt=0.05, t_end=1.0))
        est = holder_weak_norm(traj)
        assert est.gamma is None
        assert est.passed

    def test_invalid_inputs(self):
        basis = build_basis(1, 4)
        profile = _profile(1.0, 1.0, [], basis)
        traj = simulate(SpectralState.zeros(basis), profile, Forcing.zero(basis), basis,
                        SolverConfig(dt=0.01, t_end=1.0, observer_stride=3))
        with pytest.raises(ValueError):
            holder_weak_norm(traj, s_exponent=1.5)
        with pytest.raises(ValueError):
            holder_weak_norm(traj)
        short = simulate(SpectralState.zeros(basis), profile, Forcing.zero(basis), basis,
                         SolverConfig(dt=0.1, t_end=0.5))
        with pytest.raises(ExperimentError):
            holder_weak_norm(short)


def test_selftest_passes():
    report = run_selftest(seed=0)
    assert report.experiment == "selftest"
    assert report.passed, [b for b in report.bounds if not b.passed]
    assert {"projection_1d", "parseval_2d", "dealiasing_1d", "energy_order",
            "newton_dt_max", "self_convergence"} <= {b.name for b in report.bounds}
