from __future__ import annotations

# diagnostics.py

import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from fitting import is_nonincreasing, loglog_fit, observed_order
from galerkin_solver import Trajectory, simulate
from model import Forcing, NonlinearityProfile
from models import SolverConfig
from spectral_domain import (
    SpectralBasis,
    SpectralState,
    build_basis,
    embed,
    energy_norm_sq,
    to_physical,
)

logger = logging.getLogger(__name__)

# int ||u_t||_6^6 has converged when the second half adds at most this share
L6_TAIL_MAX = 0.05

LEDGER_COLUMNS = (
    "time", "E", "kinetic", "gradient", "potential", "forcing", "D_cum", "residual", "l6_budget",
)


def _grid_integrals(values: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    """Quadrature over the trailing grid axes of a batch of collocated fields."""
    axes = tuple(range(-basis.dim, 0))
    return basis.cell_volume * np.sum(values, axis=axes)


# ----------------------------------------------------
# Energy ledger
# ----------------------------------------------------

@dataclass(eq=False)
class EnergyLedger:
    times: np.ndarray
    total: np.ndarray
    kinetic: np.ndarray
    gradient: np.ndarray
    potential: np.ndarray
    forcing: np.ndarray
    dissipation_cum: np.ndarray
    residual: np.ndarray
    l6_cum: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0

    def dissipation_between(self, i: int, j: int) -> float:
        return float(self.dissipation_cum[j] - self.dissipation_cum[i])

    def rows(self) -> List[List[float]]:
        cols = [self.times, self.total, self.kinetic, self.gradient, self.potential,
                self.forcing, self.dissipation_cum, self.residual, self.l6_cum]
        return [list(map(float, r)) for r in zip(*cols)]


def identity_tolerance(e0: float, rtol: float) -> float:
    """Tolerance rtol * |E(0)| for the energy identity; rtol itself when E(0) = 0."""
    return rtol * abs(e0) if e0 != 0.0 else rtol


def l6_tail_fraction(times: np.ndarray, l6_cum: np.ndarray) -> float:
    """Share of int ||u_t||_6^6 accumulated over the second half of the run."""
    final = float(l6_cum[-1])
    if final <= 0.0:
        return 0.0
    t = np.asarray(times, dtype=float)
    half = int(np.searchsorted(t, t[0] + 0.5 * (t[-1] - t[0])))
    return (final - float(l6_cum[half])) / final


def energy_audit(trajectory: Trajectory, profile: NonlinearityProfile, forcing: Forcing,
                 basis: SpectralBasis) -> EnergyLedger:
    """Energy identity residual r(0, t) = E(t) + D(0, t) - E(0) at every snapshot."""
    profile.require_audit()
    lam = basis.eigenvalues
    kinetic = 0.5 * np.sum(trajectory.v ** 2, axis=1)
    gradient = 0.5 * np.sum(lam * trajectory.u ** 2, axis=1)
    potential = _grid_integrals(profile.eval_F(to_physical(trajectory.u, basis)), basis)
    forcing_term = trajectory.u @ forcing.h_coeffs
    total = kinetic + gradient + potential - forcing_term
    residual = total + trajectory.dissipation_cum - total[0]
    ledger = EnergyLedger(
        times=trajectory.times.copy(),
        total=total,
        kinetic=kinetic,
        gradient=gradient,
        potential=potential,
        forcing=forcing_term,
        dissipation_cum=trajectory.dissipation_cum.copy(),
        residual=residual,
        l6_cum=trajectory.l6_cum.copy(),
    )
    logger.info("energy audit: E(0)=%.6g, max |residual|=%.3e", total[0], ledger.max_residual)
    return ledger


class OrderStudy(NamedTuple):
    dts: np.ndarray
    max_residuals: np.ndarray
    order: float
    initial_energy: float


def energy_order_study(initial: SpectralState, profile: NonlinearityProfile, forcing: Forcing,
                       basis: SpectralBasis, config: SolverConfig,
                       dts: Sequence[float] = (1e-2, 5e-3, 2.5e-3)) -> OrderStudy:
    """Max identity residual for each dt; order from a log-log fit."""
    residuals: List[float] = []
    e0 = 0.0
    for dt in dts:
        cfg = config.model_copy(update={"dt": float(dt), "observer_stride": 1})
        ledger = energy_audit(simulate(initial, profile, forcing, basis, cfg), profile, forcing, basis)
        residuals.append(ledger.max_residual)
        e0 = float(ledger.total[0])
    order = observed_order(dts, residuals)
    logger.info("energy residual order %.3f over dt=%s", order, list(dts))
    return OrderStudy(np.asarray(dts, dtype=float), np.asarray(residuals), order, e0)


@dataclass
class BudgetReport:
    bound: float
    observed_max: float
    within_bound: bool
    dissipation_monotone: bool
    l6_tail_fraction: float
    window_holder_ok: bool
    window_count: int
    notes: List[str] = field(default_factory=list)


def a_priori_budget(trajectory: Trajectory, ledger: EnergyLedger, profile: NonlinearityProfile,
                    forcing: Forcing, basis: SpectralBasis, rtol: float = 1e-6) -> BudgetReport:
    """Check ||U(t)||_H^2 against the bound implied by E(0), plus the unit-window budgets.

    With h = 0 the bound is (2/omega)(E(0) + C_nu |Omega|), which reduces to
    ||U(0)||_H^2 for velocity-only data when C_nu = 0 and omega = 1.
    """
    audit = profile.require_audit()
    e0 = float(ledger.total[0])
    vol = basis.domain_volume
    if forcing.norm == 0.0:
        bound = (2.0 / audit.omega) * (e0 + audit.C_nu * vol)
    else:
        bound = (4.0 / audit.omega) * (
            e0 + audit.C_nu * vol + forcing.norm ** 2 / (audit.omega * audit.lambda1)
        )
    norms = trajectory.energy_norms_sq()
    observed = float(np.max(norms))
    within = observed <= bound * (1.0 + rtol) + 1e-14

    d_mono = is_nonincreasing(-ledger.dissipation_cum, atol=1e-14)
    t = ledger.times
    tail = l6_tail_fraction(t, ledger.l6_cum)

    # int_t^{t+1} ||u_t||^2 <= |Omega|^{2/3} (int_t^{t+1} ||u_t||_6^6)^{1/3}
    vel_sq = np.sum(trajectory.v ** 2, axis=1)
    holder_ok = True
    windows = 0
    for i, ti in enumerate(t):
        j = int(np.searchsorted(t, ti + 1.0 - 1e-9))
        if j >= t.size:
            break
        windows += 1
        lhs = trapezoid(vel_sq[i:j + 1], t[i:j + 1])
        rhs = vol ** (2.0 / 3.0) * max(ledger.l6_cum[j] - ledger.l6_cum[i], 0.0) ** (1.0 / 3.0)
        if lhs > rhs * (1.0 + 1e-3) + 1e-12:
            holder_ok = False
    return BudgetReport(bound, observed, bool(within), d_mono, float(tail), holder_ok, windows)


# ----------------------------------------------------
# Steklov differences
# ----------------------------------------------------

class SteklovDifference(NamedTuple):
    plus: np.ndarray
    minus: np.ndarray
    central: np.ndarray


def _shift_count(eps: float, spacing: float) -> int:
    m = int(round(eps / spacing))
    if m < 1 or abs(m * spacing - eps) > 1e-9 * max(eps, spacing):
        raise ValueError(f"epsilon={eps} is not a positive multiple of the sample spacing {spacing}")
    return m


def steklov_difference(samples: np.ndarray, eps: float, spacing: float) -> SteklovDifference:
    """v+, v- and D_eps v on uniformly spaced samples (time on axis 0).

    The signal is extended by v(0) before the first and v(T) after the last sample.
    """
    v = np.asarray(samples, dtype=float)
    m = _shift_count(eps, spacing)
    k = np.arange(v.shape[0])
    ahead = v[np.clip(k + m, 0, v.shape[0] - 1)]
    behind = v[np.clip(k - m, 0, v.shape[0] - 1)]
    plus = ahead - v
    minus = v - behind
    return SteklovDifference(plus, minus, (plus + minus) / (2.0 * eps))


@dataclass
class SteklovReport:
    eps: np.ndarray
    gap_a: np.ndarray
    gap_c: np.ndarray
    target_a: float
    target_c: float
    rate_a: Optional[float]
    rate_c: Optional[float]

    @property
    def monotone_a(self) -> bool:
        return bool(np.all(np.diff(np.abs(self.gap_a)) < 0.0))

    @property
    def monotone_c(self) -> bool:
        return bool(np.all(np.diff(np.abs(self.gap_c)) < 0.0))


def steklov_limit_check(trajectory: Trajectory, eps_sequence: Sequence[float]) -> SteklovReport:
    """Gaps of the two Steklov pairing identities along a decreasing epsilon sequence.

    The H1 pairing int (u, D_eps u)_{H1} dt uses the left rectangle rule; the
    velocity pairing int (u_tt, D_eps u) dt uses second-order u_tt and trapezoid.
    """
    if not trajectory.is_uniform():
        raise ValueError("Steklov differences need uniformly spaced snapshots")
    basis = trajectory.basis
    lam = basis.eigenvalues
    h = trajectory.spacing
    u, v = trajectory.u, trajectory.v
    u_tt = np.gradient(v, h, axis=0, edge_order=2)
    target_a = 0.5 * (float(np.dot(lam * u[-1], u[-1])) - float(np.dot(lam * u[0], u[0])))
    target_c = 0.5 * (float(np.dot(v[-1], v[-1])) - float(np.dot(v[0], v[0])))
    gaps_a, gaps_c = [], []
    for eps in eps_sequence:
        d = steklov_difference(u, eps, h).central
        lhs_a = h * float(np.sum(lam * u * d))
        lhs_c = float(trapezoid(np.sum(u_tt * d, axis=1), dx=h))
        gaps_a.append(lhs_a - target_a)
        gaps_c.append(lhs_c - target_c)
    eps_arr = np.asarray(eps_sequence, dtype=float)
    gap_a, gap_c = np.array(gaps_a), np.array(gaps_c)

    def _rate(g: np.ndarray) -> Optional[float]:
        if np.count_nonzero(np.abs(g) > 0) < 2:
            return None
        return loglog_fit(eps_arr, np.abs(g)).slope

    return SteklovReport(eps_arr, gap_a, gap_c, target_a, target_c, _rate(gap_a), _rate(gap_c))


# ----------------------------------------------------
# Perturbed Lyapunov functional
# ----------------------------------------------------

class LyapunovValue(NamedTuple):
    V: float
    L: float
    M: float

    @property
    def H(self) -> float:
        return self.L + self.M


def default_lyapunov_eps(profile: NonlinearityProfile) -> float:
    audit = profile.require_audit()
    return audit.omega * audit.lambda1 / 4.0


def perturbed_lyapunov(state: SpectralState, profile: NonlinearityProfile, forcing: Forcing,
                       basis: SpectralBasis, eps: Optional[float] = None) -> LyapunovValue:
    """V = E + eps (u_t, u) and the split H = L + M of dV/dt + eps V."""
    eps = default_lyapunov_eps(profile) if eps is None else float(eps)
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    values = _lyapunov_series(state.u_coeffs[None, :], state.v_coeffs[None, :],
                              profile, forcing, basis, eps)
    return LyapunovValue(float(values["V"][0]), float(values["L"][0]), float(values["M"][0]))


def _lyapunov_series(u: np.ndarray, v: np.ndarray, profile: NonlinearityProfile,
                     forcing: Forcing, basis: SpectralBasis, eps: float) -> Dict[str, np.ndarray]:
    profile.require_audit()
    lam = basis.eigenvalues
    u_grid = to_physical(u, basis)
    v_grid = to_physical(v, basis)
    grad_sq = np.sum(lam * u * u, axis=1)
    vel_sq = np.sum(v * v, axis=1)
    uv = np.sum(u * v, axis=1)
    F_int = _grid_integrals(profile.eval_F(u_grid), basis)
    fu_u = _grid_integrals(profile.eval_f(u_grid) * u_grid, basis)
    g_v = profile.eval_g(v_grid)
    gv_v = _grid_integrals(g_v * v_grid, basis)
    gv_u = _grid_integrals(g_v * u_grid, basis)
    E = 0.5 * (grad_sq + vel_sq) + F_int - u @ forcing.h_coeffs
    V = E + eps * uv
    L = -gv_v + 1.5 * eps * vel_sq
    M = -eps * (fu_u - F_int) - 0.5 * eps * grad_sq - eps * gv_u + eps ** 2 * uv
    return {"V": V, "L": L, "M": M}


class LyapunovIdentity(NamedTuple):
    times: np.ndarray
    V: np.ndarray
    H: np.ndarray
    residual: np.ndarray
    eps: float

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))


def lyapunov_identity(trajectory: Trajectory, profile: NonlinearityProfile, forcing: Forcing,
                      basis: SpectralBasis, eps: Optional[float] = None) -> LyapunovIdentity:
    """Residual of V(t) = e^{-eps t} V(0) + int_0^t e^{-eps (t - s)} H(s) ds."""
    eps = default_lyapunov_eps(profile) if eps is None else float(eps)
    series = _lyapunov_series(trajectory.u, trajectory.v, profile, forcing, basis, eps)
    t = trajectory.times - trajectory.times[0]
    H = series["L"] + series["M"]
    integral = cumulative_trapezoid(np.exp(eps * t) * H, t, initial=0.0)
    predicted = np.exp(-eps * t) * (series["V"][0] + integral)
    return LyapunovIdentity(trajectory.times.copy(), series["V"], H, series["V"] - predicted, eps)


# ----------------------------------------------------
# Galerkin self-convergence
# ----------------------------------------------------

def galerkin_self_convergence(initial: SpectralState, profile: NonlinearityProfile,
                              forcing_fn, basis: SpectralBasis, config: SolverConfig,
                              levels: Sequence[int]) -> Dict[int, float]:
    """H-norm gap at t_end between N-mode and 2N-mode runs for each N in ``levels``.

    ``forcing_fn(basis)`` builds the forcing on each resolution; ``initial`` is
    given on ``basis`` and embedded into the others.
    """
    gaps: Dict[int, float] = {}
    for n in levels:
        coarse = build_basis(basis.dim, n, basis.quad_oversample)
        fine = build_basis(basis.dim, 2 * n, basis.quad_oversample)
        finals: List[SpectralState] = []
        for b in (coarse, fine):
            start = SpectralState(embed(initial.u_coeffs, basis, b),
                                  embed(initial.v_coeffs, basis, b), initial.time)
            finals.append(simulate(start, profile, forcing_fn(b), b, config).final)
        du = embed(finals[0].u_coeffs, coarse, fine) - finals[1].u_coeffs
        dv = embed(finals[0].v_coeffs, coarse, fine) - finals[1].v_coeffs
        gaps[n] = float(np.sqrt(energy_norm_sq(du, dv, fine)))
    return gaps
