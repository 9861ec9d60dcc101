from __future__ import annotations

# experiments.py

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist

from diagnostics import EnergyLedger, energy_audit, energy_order_study, galerkin_self_convergence
from fitting import block_maxima, first_passing, is_nonincreasing, line_fit, loglog_fit, running_sup
from galerkin_solver import NewtonDivergence, Trajectory, newton_dt_max, random_initial_state, simulate
from model import Forcing, NonlinearityProfile, audited
from models import ExperimentReport, SolverConfig
from spectral_domain import (
    SpectralBasis,
    SpectralState,
    build_basis,
    energy_norm_sq,
    lp_norm,
    to_modal,
    to_physical,
)

logger = logging.getLogger(__name__)

THREADS_ENV = "WAVELAB_THREADS"
NAKAO_EXPONENT = 14.0 / 3.0
QUASI_C_CANDIDATES = 121
QUASI_C_SPAN = 1e-8

T = TypeVar("T")
R = TypeVar("R")


class ExperimentError(RuntimeError):
    pass


class QuasiStabilityRefused(ExperimentError):
    pass


# ----------------------------------------------------
# Helpers
# ----------------------------------------------------

def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer (got {raw!r})")
    return max(1, n)


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: Optional[int] = None) -> List[R]:
    """Order-preserving map over ensemble members."""
    workers = worker_count() if workers is None else max(1, int(workers))
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def member_rngs(seed: int, count: int) -> List[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def h_coordinates(u: np.ndarray, v: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    """Map (u, v) to Euclidean coordinates whose distance is the H-norm distance."""
    return np.concatenate([np.sqrt(basis.eigenvalues) * u, v], axis=-1)


def _inputs(profile: NonlinearityProfile, forcing: Forcing, basis: SpectralBasis) -> Dict:
    return {
        "basis": basis.descriptor(),
        "profile": profile.describe(),
        "forcing_norm": forcing.norm,
    }


def _scheme_level_note(report: ExperimentReport, basis: SpectralBasis) -> None:
    if basis.dim == 3:
        report.notes.append("3D desk-scale run: scheme-level checks only")


# ----------------------------------------------------
# Lipschitz dependence
# ----------------------------------------------------

@dataclass
class LipschitzResult:
    times: np.ndarray
    rho: np.ndarray
    fitted_C: float
    radius: float
    rescaled_rho: Optional[np.ndarray]
    scaling_change: Optional[float]
    report: ExperimentReport


def _difference_ratio(a: Trajectory, b: Trajectory, gap0: float) -> np.ndarray:
    return np.sqrt(energy_norm_sq(a.u - b.u, a.v - b.v, a.basis)) / gap0


def continuous_dependence(U0_a: SpectralState, U0_b: SpectralState, profile: NonlinearityProfile,
                          forcing: Forcing, basis: SpectralBasis, config: SolverConfig,
                          rescaled_gap: Optional[float] = None) -> LipschitzResult:
    """rho(t) = ||U_a(t) - U_b(t)||_H / ||U_a(0) - U_b(0)||_H and C = max log(rho)/t."""
    profile.require_audit()
    du = U0_a.u_coeffs - U0_b.u_coeffs
    dv = U0_a.v_coeffs - U0_b.v_coeffs
    gap0 = float(np.sqrt(energy_norm_sq(du, dv, basis)))
    if gap0 == 0.0:
        raise ExperimentError("initial data coincide; the Lipschitz ratio is undefined")
    radius = max(float(np.sqrt(energy_norm_sq(s.u_coeffs, s.v_coeffs, basis))) for s in (U0_a, U0_b))

    runs = parallel_map(lambda s: simulate(s, profile, forcing, basis, config), [U0_a, U0_b])
    times = runs[0].times - runs[0].times[0]
    rho = _difference_ratio(runs[0], runs[1], gap0)
    positive = times > 0
    with np.errstate(divide="ignore"):
        logs = np.log(rho[positive]) / times[positive]
    fitted_C = float(np.max(logs)) if logs.size else 0.0

    report = ExperimentReport(experiment="lipschitz", inputs=_inputs(profile, forcing, basis))
    report.inputs.update({"radius": radius, "initial_gap": gap0})
    report.constants["C"] = fitted_C
    envelope = np.exp(fitted_C * times)
    report.add_bound(
        "exponential_envelope", "rho(t) <= exp(C t)",
        float(np.min(envelope - rho)), 0.0,
        bool(np.all(np.isfinite(rho)) and np.all(rho <= envelope * (1.0 + 1e-12))),
    )

    rescaled_rho: Optional[np.ndarray] = None
    change: Optional[float] = None
    if rescaled_gap is not None:
        factor = rescaled_gap / gap0
        U0_c = SpectralState(U0_b.u_coeffs + (1.0 - factor) * du,
                             U0_b.v_coeffs + (1.0 - factor) * dv, U0_b.time)
        run_c = simulate(U0_c, profile, forcing, basis, config)
        rescaled_rho = _difference_ratio(runs[0], run_c, gap0 * factor)
        change = float(np.max(np.abs(rescaled_rho / rho - 1.0)))
        report.constants["scaling_change"] = change
        report.add_bound("first_order_scaling", "max |rho_rescaled / rho - 1| <= 0.01",
                         0.01, change, change <= 0.01)
    _scheme_level_note(report, basis)
    logger.info("lipschitz: C=%.4g over t=%.3g", fitted_C, times[-1])
    return LipschitzResult(times, rho, fitted_C, radius, rescaled_rho, change, report)


# ----------------------------------------------------
# Absorbing ball
# ----------------------------------------------------

def absorbing_level(profile: NonlinearityProfile, forcing: Forcing, basis: SpectralBasis) -> float:
    """L = ||h||^2 / (omega lambda1) + C_nu |Omega|."""
    audit = profile.require_audit()
    return forcing.norm ** 2 / (audit.omega * audit.lambda1) + audit.C_nu * basis.domain_volume


def absorbing_radius_sq(profile: NonlinearityProfile, forcing: Forcing, basis: SpectralBasis) -> float:
    audit = profile.require_audit()
    return 2.0 ** NAKAO_EXPONENT * absorbing_level(profile, forcing, basis) / audit.omega


@dataclass
class MemberRecord:
    initial_norm_sq: float
    final_norm_sq: float
    entry_time: Optional[float]
    stays_inside: bool
    limsup_proxy: float
    coercive: bool
    nakao_C0: Optional[float]
    energy_nonincreasing: bool
    max_residual: float


@dataclass
class AbsorbingResult:
    radius_sq: float
    level: float
    members: List[MemberRecord]
    report: ExperimentReport
    series: Dict[str, np.ndarray] = field(default_factory=dict)


def entry_time(times: np.ndarray, norms_sq: np.ndarray, threshold: float, dwell: float) -> Optional[int]:
    """First index after which the norm stays <= threshold for at least ``dwell``."""
    inside = norms_sq <= threshold
    for i in range(times.size):
        if not inside[i]:
            continue
        j = int(np.searchsorted(times, times[i] + dwell - 1e-12))
        if j >= times.size:
            return None
        if np.all(inside[i:j + 1]):
            return i
    return None


def nakao_constant(times: np.ndarray, J: np.ndarray, level: float) -> Optional[float]:
    """Smallest C0 with J(t)^3 <= C0 [J(t) - J(t+1)] + (2^{8/3} L)^3 on unit-spaced samples."""
    floor = (2.0 ** (8.0 / 3.0) * level) ** 3
    C0 = 0.0
    t = times
    for i in range(t.size):
        j = int(np.searchsorted(t, t[i] + 1.0 - 1e-9))
        if j >= t.size:
            break
        excess = J[i] ** 3 - floor
        if excess <= 0.0:
            continue
        drop = J[i] - J[j]
        if drop <= 0.0:
            return None
        C0 = max(C0, excess / drop)
    return float(C0)


def absorbing_ball(profile: NonlinearityProfile, forcing: Forcing, basis: SpectralBasis,
                   config: SolverConfig, ensemble_size: int, R0: float, seed: int = 0,
                   dwell: float = 1.0, residual_tol: float = 1e-6) -> AbsorbingResult:
    audit = profile.require_audit()
    level = absorbing_level(profile, forcing, basis)
    radius_sq = absorbing_radius_sq(profile, forcing, basis)
    rngs = member_rngs(seed, ensemble_size)
    initials = [random_initial_state(basis, rng, R0 * float(np.sqrt(rng.uniform(0.25, 1.0))))
                for rng in rngs]

    def run_member(state: SpectralState) -> Tuple[Trajectory, EnergyLedger]:
        traj = simulate(state, profile, forcing, basis, config)
        return traj, energy_audit(traj, profile, forcing, basis)

    outcomes = parallel_map(run_member, initials)
    members: List[MemberRecord] = []
    series: Dict[str, np.ndarray] = {}
    T_end = config.t_end
    for k, (traj, ledger) in enumerate(outcomes):
        t = traj.times - traj.times[0]
        norms = traj.energy_norms_sq()
        if k == 0:
            series["time"] = t
        series[f"member_{k}"] = norms
        idx = entry_time(t, norms, radius_sq, dwell) if radius_sq > 0.0 else None
        stays = idx is not None and bool(np.all(norms[idx:] <= radius_sq * (1.0 + 1e-6)))
        tail = t >= 0.9 * T_end
        J = ledger.total + level
        coercive = bool(np.all(J >= 0.25 * audit.omega * norms - 1e-12))
        steps = np.diff(ledger.total)
        d_steps = np.diff(ledger.dissipation_cum)
        members.append(MemberRecord(
            initial_norm_sq=float(norms[0]),
            final_norm_sq=float(norms[-1]),
            entry_time=float(t[idx]) if idx is not None else None,
            stays_inside=stays,
            limsup_proxy=float(np.max(norms[tail])),
            coercive=coercive,
            nakao_C0=nakao_constant(t, J, level),
            energy_nonincreasing=bool(np.all(steps <= np.abs(np.diff(ledger.residual)) + 1e-12)
                                      and np.all(d_steps >= -1e-14)),
            max_residual=ledger.max_residual,
        ))

    report = ExperimentReport(experiment="absorb", inputs=_inputs(profile, forcing, basis))
    report.inputs.update({"ensemble_size": ensemble_size, "R0": R0, "T": T_end, "dwell": dwell})
    report.constants.update({"L": level, "radius_sq": radius_sq, "omega": audit.omega})
    limsup = max(m.limsup_proxy for m in members)
    if radius_sq > 0.0:
        report.add_bound("entry_and_stay", "every member enters ||U||^2 <= 2^(14/3) L / omega and stays",
                         radius_sq, float(sum(m.stays_inside for m in members)),
                         all(m.stays_inside for m in members))
        report.add_bound("limsup_proxy", "max_{t in [0.9T, T]} ||U(t)||^2 <= 2^(14/3) L / omega",
                         radius_sq, limsup, limsup <= radius_sq)
    else:
        worst = max((m.final_norm_sq / m.initial_norm_sq for m in members if m.initial_norm_sq > 0),
                    default=0.0)
        report.add_bound("trivial_attractor_decay", "||U(T)||^2 <= 1e-2 ||U(0)||^2",
                         1e-2, worst, worst <= 1e-2)
    report.add_bound("functional_coercivity", "E + L >= (omega/4) ||U||^2",
                     0.0, float(sum(not m.coercive for m in members)), all(m.coercive for m in members))
    fitted = [m.nakao_C0 for m in members if m.nakao_C0 is not None]
    report.constants["nakao_C0"] = max(fitted) if fitted else None
    worst_res = max(m.max_residual for m in members)
    report.add_bound("gradient_system", "E(t) + D(0,t) = E(0) and E nonincreasing",
                     residual_tol, worst_res,
                     worst_res <= residual_tol and all(m.energy_nonincreasing for m in members))
    _scheme_level_note(report, basis)
    logger.info("absorbing ball: R^2=%.4g, limsup proxy %.4g", radius_sq, limsup)
    return AbsorbingResult(radius_sq, level, members, report, series)


# ----------------------------------------------------
# Quasi-stability
# ----------------------------------------------------

@dataclass
class QuasiStabilityResult:
    c_hat: float
    rate: Optional[float]
    r_squared: Optional[float]
    block_times: np.ndarray
    envelope: np.ndarray
    report: ExperimentReport


def ball_pairs(basis: SpectralBasis, seed: int, count: int,
               radius: float) -> List[Tuple[SpectralState, SpectralState]]:
    rngs = member_rngs(seed, 2 * count)
    states = [random_initial_state(basis, rng, radius * float(np.sqrt(rng.uniform(0.25, 1.0))))
              for rng in rngs]
    return [(states[2 * i], states[2 * i + 1]) for i in range(count)]


def quasi_stability_fit(pairs: Sequence[Tuple[SpectralState, SpectralState]],
                        profile: NonlinearityProfile, forcing: Forcing, basis: SpectralBasis,
                        config: SolverConfig, blocks: int = 8) -> QuasiStabilityResult:
    """Fit the decaying part of ||S_t U1 - S_t U2||_H^2 modulo c sup ||z||^2.

    z = u1 - u2 measured in L2. c is the smallest constant for which the block
    maxima of Q on [T/4, T] are nonincreasing.
    """
    profile.require_audit()
    if profile.g_linear <= 0.0:
        raise QuasiStabilityRefused(
            "quasi-stability requires linear damping g'(0) = kappa2 > 0 (got kappa2 = "
            f"{profile.g_linear})"
        )

    def run_pair(pair: Tuple[SpectralState, SpectralState]):
        a = simulate(pair[0], profile, forcing, basis, config)
        b = simulate(pair[1], profile, forcing, basis, config)
        d2 = energy_norm_sq(a.u - b.u, a.v - b.v, basis)
        z2 = np.sum((a.u - b.u) ** 2, axis=1)
        return a.times - a.times[0], d2, running_sup(z2)

    runs = parallel_map(run_pair, list(pairs))
    times = runs[0][0]
    window = times >= 0.25 * times[-1]

    def Q(c: float, d2: np.ndarray, sup_z: np.ndarray) -> np.ndarray:
        if d2[0] == 0.0:
            return np.zeros_like(d2)
        return np.maximum(d2 - c * sup_z, 0.0) / d2[0]

    def envelope(c: float) -> Tuple[np.ndarray, np.ndarray]:
        maxima: List[np.ndarray] = []
        starts = np.array([])
        for _, d2, sup_z in runs:
            starts, m = block_maxima(times[window], Q(c, d2, sup_z)[window], blocks)
            maxima.append(m)
        return starts, np.max(np.array(maxima), axis=0)

    def passes(c: float) -> bool:
        return is_nonincreasing(envelope(c)[1], atol=0.0)

    c_hi = 0.0
    for _, d2, sup_z in runs:
        ok = sup_z > 0.0
        if np.any(ok):
            c_hi = max(c_hi, float(np.max(d2[ok] / sup_z[ok])))
    # passes(c) need not be monotone in c
    candidates = [0.0]
    if c_hi > 0.0:
        candidates += list(np.geomspace(c_hi * QUASI_C_SPAN, c_hi, QUASI_C_CANDIDATES))
    c_hat = first_passing(passes, candidates)
    starts, env = envelope(c_hat)

    report = ExperimentReport(experiment="quasistab", inputs=_inputs(profile, forcing, basis))
    report.inputs.update({"pairs": len(pairs), "T": float(times[-1]), "blocks": blocks})
    report.constants["c_hat"] = c_hat
    positive = env > 0.0
    rate: Optional[float] = None
    r2: Optional[float] = None
    if np.count_nonzero(positive) >= 2:
        fit = line_fit(starts[positive], np.log(env[positive]))
        rate, r2 = -fit.slope, fit.r_squared
        report.constants.update({"rate": rate, "r_squared": r2})
        report.add_bound("envelope_decay", "fitted rate > 0", 0.0, rate, rate > 0.0)
        report.add_bound("log_linear_fit", "R^2 >= 0.9", 0.9, r2, r2 >= 0.9)
    else:
        report.notes.append("Q vanishes on the fit window; decay holds trivially")
        report.add_bound("envelope_decay", "Q -> 0", 0.0, float(np.max(env)), True)
    _scheme_level_note(report, basis)
    logger.info("quasi-stability: c=%.4g rate=%s", c_hat, rate)
    return QuasiStabilityResult(c_hat, rate, r2, starts, env, report)


# ----------------------------------------------------
# Stationary solutions
# ----------------------------------------------------

@dataclass
class StationaryState:
    u_coeffs: np.ndarray
    residual: float
    grad_sq: float
    lap_sq: float
    iterations: int
    h1_bound: float
    h2_bound: float

    @property
    def h1_ok(self) -> bool:
        return self.grad_sq <= self.h1_bound * (1.0 + 1e-12)

    @property
    def h2_ok(self) -> bool:
        return self.lap_sq <= self.h2_bound * (1.0 + 1e-12)


def stationary_bounds(profile: NonlinearityProfile, forcing: Forcing,
                      basis: SpectralBasis) -> Tuple[float, float]:
    """H1 bound ||h||^2/(omega^2 lambda1) + 2 C_nu |Omega|/omega and the H2 bound built on it."""
    audit = profile.require_audit()
    h2 = forcing.norm ** 2
    h1_bound = h2 / (audit.omega ** 2 * audit.lambda1) + 2.0 * audit.C_nu * basis.domain_volume / audit.omega
    h2_bound = h2 / audit.omega ** 2 + (2.0 * audit.K_f / audit.omega) * h1_bound
    return h1_bound, h2_bound


def stationary_residual(u: np.ndarray, profile: NonlinearityProfile, forcing: Forcing,
                        basis: SpectralBasis) -> np.ndarray:
    """Modal residual of -Laplace u + f(u) - h."""
    return basis.eigenvalues * u + to_modal(profile.eval_f(to_physical(u, basis)), basis) - forcing.h_coeffs


def _newton_stationary(u: np.ndarray, profile: NonlinearityProfile, forcing: Forcing,
                       basis: SpectralBasis, tol: float, max_iters: int) -> Tuple[np.ndarray, float, int]:
    lam_diag = np.diag(basis.eigenvalues)
    R = stationary_residual(u, profile, forcing, basis)
    norm = float(np.linalg.norm(R))
    for it in range(max_iters):
        if norm <= tol:
            return u, norm, it
        jac = lam_diag + basis.weighted_gram(profile.eval_fp(to_physical(u, basis)))
        try:
            direction = -linalg.solve(jac, R)
        except linalg.LinAlgError:
            break
        alpha = 1.0
        while alpha > 1e-10:
            trial = u + alpha * direction
            R_trial = stationary_residual(trial, profile, forcing, basis)
            n_trial = float(np.linalg.norm(R_trial))
            if np.isfinite(n_trial) and n_trial <= (1.0 - 1e-4 * alpha) * norm:
                break
            alpha *= 0.5
        else:
            break
        u, R, norm = trial, R_trial, n_trial
    if norm <= tol:
        return u, norm, max_iters
    raise NewtonDivergence(max_iters, norm)


def solve_stationary(profile: NonlinearityProfile, forcing: Forcing, basis: SpectralBasis,
                     initial_guess: Optional[np.ndarray] = None, tol: float = 1e-9,
                     max_iters: int = 100, restarts: int = 10,
                     rng: Optional[np.random.Generator] = None) -> StationaryState:
    """Damped Newton (Armijo backtracking) for -Laplace u + f(u) = h."""
    profile.require_audit()
    forcing.check_basis(basis)
    rng = np.random.default_rng(0) if rng is None else rng
    guess = np.zeros(basis.size) if initial_guess is None else np.asarray(initial_guess, dtype=float)
    scale = 1.0 + forcing.norm / basis.lambda1
    last: Optional[NewtonDivergence] = None
    for attempt in range(restarts + 1):
        try:
            u, res, iters = _newton_stationary(guess, profile, forcing, basis, tol, max_iters)
            break
        except NewtonDivergence as exc:
            last = exc
            logger.warning("stationary Newton attempt %d failed: %s", attempt, exc)
            guess = rng.standard_normal(basis.size) * scale / basis.eigenvalues
    else:
        assert last is not None
        raise last
    h1_bound, h2_bound = stationary_bounds(profile, forcing, basis)
    lam = basis.eigenvalues
    return StationaryState(
        u_coeffs=u,
        residual=res,
        grad_sq=float(np.dot(lam * u, u)),
        lap_sq=float(np.dot(lam * lam * u, u)),
        iterations=iters,
        h1_bound=h1_bound,
        h2_bound=h2_bound,
    )


@dataclass
class StationaryResult:
    states: List[StationaryState]
    unique: Optional[bool]
    uniqueness_gap: Optional[float]
    report: ExperimentReport


def stationary_experiment(profile: NonlinearityProfile, forcing: Forcing, basis: SpectralBasis,
                          seed: int = 0, uniqueness_starts: int = 3) -> StationaryResult:
    """Solve from zero; for monotone sources confirm uniqueness from random starts."""
    base = solve_stationary(profile, forcing, basis)
    states = [base]
    unique: Optional[bool] = None
    gap: Optional[float] = None
    if profile.is_monotone_source:
        gap = 0.0
        scale = 1.0 + forcing.norm
        for rng in member_rngs(seed, uniqueness_starts):
            guess = rng.standard_normal(basis.size) * scale / basis.eigenvalues
            other = solve_stationary(profile, forcing, basis, initial_guess=guess, rng=rng)
            states.append(other)
            gap = max(gap, float(np.max(np.abs(other.u_coeffs - base.u_coeffs))))
        unique = gap <= 1e-7

    report = ExperimentReport(experiment="stationary", inputs=_inputs(profile, forcing, basis))
    report.add_bound("residual", "||-Laplace u + f(u) - h|| <= 1e-9", 1e-9,
                     max(s.residual for s in states), all(s.residual <= 1e-9 for s in states))
    report.add_bound("h1_bound", "||grad u||^2 <= ||h||^2/(omega^2 lambda1) + 2 C_nu |Omega|/omega",
                     base.h1_bound, base.grad_sq, all(s.h1_ok for s in states))
    report.add_bound("h2_bound",
                     "||Laplace u||^2 <= ||h||^2/omega^2 + (2 K_f/omega) * h1_bound",
                     base.h2_bound, base.lap_sq, all(s.h2_ok for s in states))
    if unique is not None:
        report.add_bound("uniqueness", "random starts agree within 1e-7", 1e-7, gap, unique)
    report.constants.update({"grad_sq": base.grad_sq, "lap_sq": base.lap_sq,
                             "iterations": base.iterations})
    _scheme_level_note(report, basis)
    return StationaryResult(states, unique, gap, report)


def stationary_set(profile: NonlinearityProfile, forcing: Forcing, basis: SpectralBasis,
                   seed: int = 0, starts: int = 16, dedupe_tol: float = 1e-6) -> List[StationaryState]:
    """Distinct stationary states from the zero start plus ``starts`` random starts."""
    found: List[StationaryState] = []
    guesses = [np.zeros(basis.size)]
    scale = 1.0 + forcing.norm
    for rng in member_rngs(seed, starts):
        guesses.append(rng.standard_normal(basis.size) * scale / basis.eigenvalues)
    for guess in guesses:
        try:
            st = solve_stationary(profile, forcing, basis, initial_guess=guess, restarts=0)
        except NewtonDivergence:
            continue
        lam = basis.eigenvalues
        if all(np.sqrt(np.dot(lam * (st.u_coeffs - o.u_coeffs), st.u_coeffs - o.u_coeffs)) > dedupe_tol
               for o in found):
            found.append(st)
    return found


# ----------------------------------------------------
# Attractor sampling
# ----------------------------------------------------

@dataclass
class AttractorSample:
    cloud: np.ndarray
    stationary: List[StationaryState]
    distances: np.ndarray
    energy_monotone: bool
    max_residual: float
    report: ExperimentReport

    @property
    def max_distance(self) -> float:
        return float(np.max(self.distances)) if self.distances.size else 0.0


def attractor_sample(profile: NonlinearityProfile, forcing: Forcing, basis: SpectralBasis,
                     config: SolverConfig, ensemble: Sequence[SpectralState], burn_in: float,
                     sample_count: int, seed: int = 0, starts: int = 16,
                     residual_tol: float = 1e-6) -> AttractorSample:
    """Evolve an ensemble past ``burn_in`` and collect up to ``sample_count`` states.

    The cloud is stored in H-coordinates (sqrt(lambda) u, v).
    """
    profile.require_audit()
    if burn_in > config.t_end:
        raise ValueError("burn_in exceeds the integration horizon")

    def run_member(state: SpectralState) -> Tuple[Trajectory, EnergyLedger]:
        traj = simulate(state, profile, forcing, basis, config)
        return traj, energy_audit(traj, profile, forcing, basis)

    outcomes = parallel_map(run_member, list(ensemble))
    chunks: List[np.ndarray] = []
    monotone = True
    worst = 0.0
    sup_lap = 0.0
    for traj, ledger in outcomes:
        keep = traj.times - traj.times[0] >= burn_in
        if np.any(keep):
            sup_lap = max(sup_lap, float(np.max(np.sum(basis.eigenvalues ** 2 * traj.u[keep] ** 2, axis=1))))
        chunks.append(h_coordinates(traj.u[keep], traj.v[keep], basis))
        steps = np.diff(ledger.total)
        monotone &= bool(np.all(steps <= np.abs(np.diff(ledger.residual)) + 1e-12))
        worst = max(worst, ledger.max_residual)
    cloud = np.concatenate(chunks, axis=0)
    if cloud.shape[0] > sample_count:
        cloud = cloud[np.linspace(0, cloud.shape[0] - 1, sample_count).astype(int)]

    stationary = stationary_set(profile, forcing, basis, seed=seed, starts=starts)
    if stationary:
        anchors = np.array([h_coordinates(s.u_coeffs, np.zeros(basis.size), basis) for s in stationary])
        distances = np.min(np.linalg.norm(cloud[:, None, :] - anchors[None, :, :], axis=2), axis=1)
    else:
        distances = np.full(cloud.shape[0], np.inf)

    report = ExperimentReport(experiment="attractor", inputs=_inputs(profile, forcing, basis))
    report.inputs.update({"ensemble": len(ensemble), "burn_in": burn_in,
                          "sample_count": int(cloud.shape[0])})
    report.constants.update({
        "stationary_states": len(stationary),
        "max_distance": float(np.max(distances)) if distances.size else 0.0,
    })
    report.constants.update(h2_against_stationary(sup_lap, profile, forcing, basis))
    report.add_bound("energy_monotone", "E(t_{n+1}) <= E(t_n) + |residual increment|",
                     0.0, 0.0 if monotone else 1.0, monotone)
    report.add_bound("gradient_system", "|E(t) + D(0,t) - E(0)| <= tol", residual_tol, worst,
                     worst <= residual_tol)
    _scheme_level_note(report, basis)
    return AttractorSample(cloud, stationary, distances, monotone, worst, report)


# ----------------------------------------------------
# Regularity, dimension and Hoelder diagnostics
# ----------------------------------------------------

H2_QUANTITIES = ("lap_sq", "vel_h1_sq", "acc_sq")


@dataclass
class H2Tracking:
    times: np.ndarray
    lap_sq: np.ndarray
    vel_h1_sq: np.ndarray
    acc_sq: np.ndarray
    window_sup: Dict[str, np.ndarray]
    sup: Dict[str, float]
    slopes: Dict[str, float]
    slope: float
    bounded: bool


def h2_tracking(trajectory: Trajectory, basis: SpectralBasis, burn_in: float = 0.0,
                windows: int = 4, tol: float = 1e-2) -> H2Tracking:
    """||Laplace u||^2, ||u_t||_{H1}^2 and finite-difference ||u_tt||^2 with a growth-trend test.

    Each quantity gets its own supremum and windowed log-slope after ``burn_in``;
    the run counts as bounded when no slope exceeds ``tol``.
    """
    lam = basis.eigenvalues
    lap = np.sum(lam ** 2 * trajectory.u ** 2, axis=1)
    vel = np.sum(lam * trajectory.v ** 2, axis=1)
    if len(trajectory) >= 3:
        acc = np.sum(np.gradient(trajectory.v, trajectory.times, axis=0, edge_order=2) ** 2, axis=1)
    else:
        acc = np.zeros(len(trajectory))
    t = trajectory.times - trajectory.times[0]
    mask = t >= burn_in
    window_sup: Dict[str, np.ndarray] = {}
    sup: Dict[str, float] = {}
    slopes: Dict[str, float] = {}
    for name, series in zip(H2_QUANTITIES, (lap, vel, acc)):
        tail = series[mask]
        _, sups = block_maxima(t[mask], tail, windows)
        window_sup[name] = sups
        sup[name] = float(np.max(tail)) if tail.size else 0.0
        slopes[name] = 0.0
        if sups.size >= 2 and np.all(sups > 0.0):
            slopes[name] = line_fit(np.arange(sups.size, dtype=float), np.log(sups)).slope
    slope = max(slopes.values())
    return H2Tracking(trajectory.times.copy(), lap, vel, acc, window_sup, sup, slopes,
                      float(slope), slope <= tol)


def h2_against_stationary(sup_lap_sq: float, profile: NonlinearityProfile, forcing: Forcing,
                          basis: SpectralBasis) -> Dict[str, float]:
    """Compare an observed sup ||Laplace u||^2 with the stationary-set H2 bound."""
    _, rho = stationary_bounds(profile, forcing, basis)
    return {
        "sup_lap_sq": float(sup_lap_sq),
        "stationary_h2_bound": float(rho),
        "sup_lap_sq_over_bound": float(sup_lap_sq / rho) if rho > 0.0 else 0.0,
    }


@dataclass
class DimensionEstimate:
    dimension: float
    stderr: float
    band: Tuple[float, float]
    radii: np.ndarray
    correlation: np.ndarray
    degenerate: bool


def fractal_dimension_estimate(cloud: np.ndarray, radii: Optional[Sequence[float]] = None,
                               radii_count: int = 12, min_points: int = 1000) -> DimensionEstimate:
    """Correlation-sum slope log C(r) / log r in the Euclidean (H-norm) metric."""
    pts = np.asarray(cloud, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < min_points:
        raise ExperimentError(f"dimension estimate needs at least {min_points} points")
    d = pdist(pts)
    if radii is None:
        positive = d[d > 0.0]
        if positive.size == 0:
            return DimensionEstimate(0.0, 0.0, (0.0, 0.0), np.array([]), np.array([]), True)
        r_lo, r_hi = np.quantile(positive, [0.01, 0.25])
        if r_hi <= r_lo:
            return DimensionEstimate(0.0, 0.0, (0.0, 0.0), np.array([]), np.array([]), True)
        r = np.geomspace(r_lo, r_hi, radii_count)
    else:
        r = np.asarray(radii, dtype=float)
        if np.max(d) < np.min(r):
            return DimensionEstimate(0.0, 0.0, (0.0, 0.0), r, np.ones_like(r), True)
    corr = np.array([np.mean(d < ri) for ri in r])
    fit = loglog_fit(r, corr)
    band = (fit.slope - 2.0 * fit.stderr, fit.slope + 2.0 * fit.stderr)
    return DimensionEstimate(fit.slope, fit.stderr, band, r, corr, False)


@dataclass
class HolderEstimate:
    gamma: Optional[float]
    threshold: float
    gaps: np.ndarray
    increments: np.ndarray

    @property
    def passed(self) -> bool:
        return self.gamma is None or self.gamma >= self.threshold


def holder_weak_norm(trajectory: Trajectory, s_exponent: float = 1.0,
                     min_pairs: int = 10) -> HolderEstimate:
    """Hoelder exponent of t -> U(t) in H^{1-s} x H^{-s} from sup increments over dyadic gaps."""
    if not 0.0 < s_exponent <= 1.0:
        raise ValueError("s_exponent must lie in (0, 1]")
    if len(trajectory) - 1 < min_pairs:
        raise ExperimentError(f"need at least {min_pairs} snapshot pairs")
    if not trajectory.is_uniform():
        raise ValueError("Hoelder estimate needs uniformly spaced snapshots")
    lam = trajectory.basis.eigenvalues
    wu = np.sqrt(lam ** (1.0 - s_exponent))
    wv = np.sqrt(lam ** (-s_exponent))
    z = np.concatenate([wu * trajectory.u, wv * trajectory.v], axis=1)
    K = z.shape[0]
    gaps, incs = [], []
    m = 1
    while m <= max(1, (K - 1) // 4):
        incs.append(float(np.max(np.linalg.norm(z[m:] - z[:-m], axis=1))))
        gaps.append(m * trajectory.spacing)
        m *= 2
    gaps_arr, inc_arr = np.array(gaps), np.array(incs)
    threshold = s_exponent / 6.0 - 0.05
    if np.count_nonzero(inc_arr > 0.0) < 2:
        return HolderEstimate(None, threshold, gaps_arr, inc_arr)
    gamma = loglog_fit(gaps_arr, inc_arr).slope
    return HolderEstimate(float(gamma), threshold, gaps_arr, inc_arr)


# ----------------------------------------------------
# Built-in self test
# ----------------------------------------------------

def run_selftest(seed: int = 0) -> ExperimentReport:
    """Projection, Parseval, dealiasing and energy-order checks on a small built-in case."""
    rng = np.random.default_rng(seed)
    report = ExperimentReport(experiment="selftest")
    for dim, n in ((1, 8), (2, 4)):
        basis = build_basis(dim, n)
        c = rng.standard_normal(basis.size)
        roundtrip = float(np.max(np.abs(to_modal(to_physical(c, basis), basis) - c)))
        report.add_bound(f"projection_{dim}d", "max |to_modal(to_physical(c)) - c| <= 1e-12",
                         1e-12, roundtrip, roundtrip <= 1e-12)
        parseval = abs(lp_norm(to_physical(c, basis), 2, basis) - float(np.linalg.norm(c)))
        report.add_bound(f"parseval_{dim}d", "| ||c||_L2 - |c| | <= 1e-10", 1e-10, parseval,
                         parseval <= 1e-10)
        fine = build_basis(dim, n, 2 * basis.quad_oversample)
        p3 = to_modal(to_physical(c, basis) ** 5, basis)
        p6 = to_modal(to_physical(c, fine) ** 5, fine)
        alias = float(np.max(np.abs(p3 - p6)))
        report.add_bound(f"dealiasing_{dim}d", "quintic projection 3x vs 6x grid <= 1e-10",
                         1e-10, alias, alias <= 1e-10 * max(1.0, float(np.max(np.abs(p6)))))

    basis = build_basis(1, 8)
    profile = audited(NonlinearityProfile.from_terms(0.0, 1.0, [(1.0, 5.0)]), basis.lambda1)
    start = random_initial_state(basis, rng, 1.0, velocity_only=True)
    config = SolverConfig(dt=0.02, t_end=1.0, newton_tol=1e-12)
    study = energy_order_study(start, profile, Forcing.zero(basis), basis, config,
                               dts=(0.02, 0.01, 0.005))
    report.constants["energy_order"] = study.order
    report.add_bound("energy_order", "energy residual order >= 1.9", 1.9, study.order,
                     study.order >= 1.9)

    dt_max = newton_dt_max(start, profile, Forcing.zero(basis), basis, config)
    report.constants["newton_dt_max"] = dt_max
    report.add_bound("newton_dt_max", "midpoint Newton converges from the predictor for dt >= 1e-3",
                     1e-3, dt_max, dt_max >= 1e-3)

    gaps = galerkin_self_convergence(start, profile, Forcing.zero, basis,
                                     config.model_copy(update={"t_end": 0.5}), levels=(4, 8))
    report.constants["self_convergence_gaps"] = {str(n): g for n, g in gaps.items()}
    report.add_bound("self_convergence", "||U_N - U_2N||_H shrinks from N=4 to N=8", gaps[4], gaps[8],
                     gaps[8] < gaps[4])
    return report
