from __future__ import annotations

# galerkin_solver.py

import logging
from dataclasses import dataclass
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from model import Forcing, NonlinearityProfile
from models import SolverConfig
from spectral_domain import (
    NonFiniteStateError,
    SpectralBasis,
    SpectralState,
    energy_norm_sq,
    integrate,
    to_modal,
    to_physical,
)

logger = logging.getLogger(__name__)


class NewtonDivergence(RuntimeError):
    def __init__(self, iters: int, residual: float, dt: Optional[float] = None):
        self.iters = iters
        self.residual = float(residual)
        self.dt = dt
        super().__init__(
            f"Newton did not converge after {iters} iterations "
            f"(residual {self.residual:.3e}, dt={dt})"
        )


class StepResult(NamedTuple):
    u: np.ndarray
    v: np.ndarray
    dissipation: float
    l6: float
    halvings: int


# ----------------------------------------------------
# Trajectory record
# ----------------------------------------------------

@dataclass(eq=False)
class Trajectory:
    """Snapshots every ``stride`` steps plus per-step dissipation bookkeeping.

    ``dissipation_cum[i]`` and ``l6_cum[i]`` are the time integrals of
    int g(u_t) u_t and ||u_t||_6^6 from the first snapshot up to ``times[i]``.
    """

    basis: SpectralBasis
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    dissipation_cum: np.ndarray
    l6_cum: np.ndarray
    step_dissipation: np.ndarray
    step_l6: np.ndarray
    dt: float
    stride: int
    scheme: str = "implicit_midpoint"
    halvings: int = 0

    def __len__(self) -> int:
        return int(self.times.size)

    def state(self, i: int) -> SpectralState:
        return SpectralState(self.u[i], self.v[i], float(self.times[i]))

    def states(self) -> Iterator[SpectralState]:
        for i in range(len(self)):
            yield self.state(i)

    @property
    def initial(self) -> SpectralState:
        return self.state(0)

    @property
    def final(self) -> SpectralState:
        return self.state(len(self) - 1)

    @property
    def spacing(self) -> float:
        return self.dt * self.stride

    def is_uniform(self) -> bool:
        if len(self) < 3:
            return True
        gaps = np.diff(self.times)
        return bool(np.allclose(gaps, gaps[0], rtol=1e-9, atol=1e-12))

    def energy_norms_sq(self) -> np.ndarray:
        return energy_norm_sq(self.u, self.v, self.basis)


# ----------------------------------------------------
# Right-hand side
# ----------------------------------------------------

def _projected_nonlinear(u: np.ndarray, v: np.ndarray, profile: NonlinearityProfile,
                         basis: SpectralBasis) -> Tuple[np.ndarray, np.ndarray]:
    pg = to_modal(profile.eval_g(to_physical(v, basis)), basis)
    pf = to_modal(profile.eval_f(to_physical(u, basis)), basis)
    return pg, pf


def rhs(state: SpectralState, profile: NonlinearityProfile, forcing: Forcing,
        basis: SpectralBasis) -> Tuple[np.ndarray, np.ndarray]:
    """Galerkin vector field: du = v, dv = -lambda u - P g(v) - P f(u) + h."""
    profile.require_audit()
    state.check_basis(basis)
    forcing.check_basis(basis)
    pg, pf = _projected_nonlinear(state.u_coeffs, state.v_coeffs, profile, basis)
    dv = -basis.eigenvalues * state.u_coeffs - pg - pf + forcing.h_coeffs
    if not np.all(np.isfinite(dv)):
        raise NonFiniteStateError(f"non-finite vector field at t={state.time}")
    return state.v_coeffs.copy(), dv


# ----------------------------------------------------
# Single steps
# ----------------------------------------------------

def _midpoint_step(u: np.ndarray, v: np.ndarray, dt: float, profile: NonlinearityProfile,
                   forcing: Forcing, basis: SpectralBasis, config: SolverConfig) -> StepResult:
    # unknown is the midpoint velocity v_m; u_m = u + dt/2 v_m, v_new = 2 v_m - v
    lam = basis.eigenvalues
    h = forcing.h_coeffs
    half = 0.5 * dt
    pg, pf = _projected_nonlinear(u, v, profile, basis)
    vm = v + half * (-lam * u - pg - pf + h)
    eye = np.eye(basis.size)
    residual = np.inf
    for it in range(config.newton_max_iters + 1):
        um = u + half * vm
        v_grid = to_physical(vm, basis)
        u_grid = to_physical(um, basis)
        pg = to_modal(profile.eval_g(v_grid), basis)
        pf = to_modal(profile.eval_f(u_grid), basis)
        R = vm - v + half * (lam * um + pg + pf - h)
        residual = float(np.max(np.abs(R)))
        if not np.isfinite(residual):
            raise NewtonDivergence(it, residual, dt)
        if residual <= config.newton_tol:
            break
        if it == config.newton_max_iters:
            raise NewtonDivergence(it, residual, dt)
        jac = eye + half * (
            np.diag(half * lam)
            + basis.weighted_gram(profile.eval_gp(v_grid))
            + half * basis.weighted_gram(profile.eval_fp(u_grid))
        )
        vm = vm - linalg.solve(jac, R)
    logger.debug("midpoint step dt=%g converged in %d iterations (residual %.2e)", dt, it, residual)
    dissipation = dt * float(np.dot(pg, vm))
    l6 = dt * integrate(np.abs(v_grid) ** 6, basis)
    return StepResult(u + dt * vm, 2.0 * vm - v, dissipation, l6, 0)


def _imex_step(u: np.ndarray, v: np.ndarray, dt: float, profile: NonlinearityProfile,
               forcing: Forcing, basis: SpectralBasis) -> StepResult:
    # linear wave operator and kappa2 by the midpoint rule; quintic damping and f explicit
    lam = basis.eigenvalues
    v_grid = to_physical(v, basis)
    quintic = profile.g_quintic * v_grid ** 5
    explicit = to_modal(quintic, basis) + to_modal(profile.eval_f(to_physical(u, basis)), basis)
    kappa2 = profile.g_linear
    vm = (2.0 * v / dt - lam * u - explicit + forcing.h_coeffs) / (2.0 / dt + 0.5 * dt * lam + kappa2)
    if not np.all(np.isfinite(vm)):
        raise NonFiniteStateError(f"IMEX step produced non-finite values (dt={dt})")
    p_quintic = to_modal(quintic, basis)
    dissipation = dt * float(kappa2 * np.dot(vm, vm) + np.dot(p_quintic, vm))
    l6 = dt * integrate(np.abs(to_physical(vm, basis)) ** 6, basis)
    return StepResult(u + dt * vm, 2.0 * vm - v, dissipation, l6, 0)


def _advance(u: np.ndarray, v: np.ndarray, dt: float, profile: NonlinearityProfile,
             forcing: Forcing, basis: SpectralBasis, config: SolverConfig,
             depth: int = 0) -> StepResult:
    if config.scheme == "semi_implicit_imex":
        return _imex_step(u, v, dt, profile, forcing, basis)
    try:
        return _midpoint_step(u, v, dt, profile, forcing, basis, config)
    except NewtonDivergence as exc:
        if depth >= config.max_halvings:
            raise
        logger.warning("%s; retrying with dt=%g", exc, 0.5 * dt)
    first = _advance(u, v, 0.5 * dt, profile, forcing, basis, config, depth + 1)
    second = _advance(first.u, first.v, 0.5 * dt, profile, forcing, basis, config, depth + 1)
    return StepResult(
        second.u,
        second.v,
        first.dissipation + second.dissipation,
        first.l6 + second.l6,
        1 + first.halvings + second.halvings,
    )


def step(state: SpectralState, profile: NonlinearityProfile, forcing: Forcing,
         basis: SpectralBasis, config: SolverConfig, dt: Optional[float] = None) -> SpectralState:
    """Advance one step. ``dt`` overrides config.dt (negative values step backwards)."""
    profile.require_audit()
    state.check_basis(basis)
    forcing.check_basis(basis)
    dt = config.dt if dt is None else float(dt)
    res = _advance(state.u_coeffs, state.v_coeffs, dt, profile, forcing, basis, config)
    return SpectralState(res.u, res.v, state.time + dt)


# ----------------------------------------------------
# Time loop
# ----------------------------------------------------

def step_count(config: SolverConfig) -> int:
    n = int(round(config.t_end / config.dt))
    if abs(n * config.dt - config.t_end) > 1e-9 * max(1.0, config.t_end):
        raise ValueError(f"t_end={config.t_end} is not a multiple of dt={config.dt}")
    return n


def simulate(initial: SpectralState, profile: NonlinearityProfile, forcing: Forcing,
             basis: SpectralBasis, config: SolverConfig,
             on_snapshot: Optional[Callable[[SpectralState], None]] = None) -> Trajectory:
    """Integrate from ``initial`` to ``initial.time + t_end``."""
    profile.require_audit()
    initial.check_basis(basis)
    forcing.check_basis(basis)
    n_steps = step_count(config)
    u, v = initial.u_coeffs.copy(), initial.v_coeffs.copy()
    t0 = initial.time

    times: List[float] = [t0]
    us: List[np.ndarray] = [u.copy()]
    vs: List[np.ndarray] = [v.copy()]
    d_cum: List[float] = [0.0]
    l6_cum: List[float] = [0.0]
    step_diss = np.zeros(n_steps)
    step_l6 = np.zeros(n_steps)
    total_d = 0.0
    total_l6 = 0.0
    halvings = 0

    for n in range(n_steps):
        res = _advance(u, v, config.dt, profile, forcing, basis, config)
        u, v = res.u, res.v
        step_diss[n] = res.dissipation
        step_l6[n] = res.l6
        total_d += res.dissipation
        total_l6 += res.l6
        halvings += res.halvings
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise NonFiniteStateError(f"non-finite state after step {n + 1}")
        if (n + 1) % config.observer_stride == 0 or n + 1 == n_steps:
            t = t0 + (n + 1) * config.dt
            times.append(t)
            us.append(u.copy())
            vs.append(v.copy())
            d_cum.append(total_d)
            l6_cum.append(total_l6)
            if on_snapshot is not None:
                on_snapshot(SpectralState(u, v, t))

    logger.info(
        "simulated %d steps of dt=%g (%s): %d snapshots, %d halvings, dissipation %.6g",
        n_steps, config.dt, config.scheme, len(times), halvings, total_d,
    )
    return Trajectory(
        basis=basis,
        times=np.array(times),
        u=np.array(us),
        v=np.array(vs),
        dissipation_cum=np.array(d_cum),
        l6_cum=np.array(l6_cum),
        step_dissipation=step_diss,
        step_l6=step_l6,
        dt=config.dt,
        stride=config.observer_stride,
        scheme=config.scheme,
        halvings=halvings,
    )


def newton_dt_max(state: SpectralState, profile: NonlinearityProfile, forcing: Forcing,
                  basis: SpectralBasis, config: SolverConfig,
                  candidates: Sequence[float] = (0.1, 0.05, 0.02, 0.01, 5e-3, 2e-3, 1e-3)) -> float:
    """Largest candidate dt whose midpoint step converges from the predictor without halving."""
    profile.require_audit()
    for dt in sorted(candidates, reverse=True):
        try:
            _midpoint_step(state.u_coeffs, state.v_coeffs, dt, profile, forcing, basis, config)
        except NewtonDivergence:
            continue
        return float(dt)
    return 0.0


# ----------------------------------------------------
# Initial data
# ----------------------------------------------------

def random_initial_state(basis: SpectralBasis, rng: np.random.Generator, radius: float,
                         velocity_only: bool = False) -> SpectralState:
    """Gaussian modal data with std ~ 1/lambda_k, rescaled so ||U||_H = radius."""
    scale = 1.0 / basis.eigenvalues
    u = np.zeros(basis.size) if velocity_only else rng.standard_normal(basis.size) * scale
    v = rng.standard_normal(basis.size) * scale
    norm = float(np.sqrt(energy_norm_sq(u, v, basis)))
    if radius == 0.0 or norm == 0.0:
        return SpectralState.zeros(basis)
    return SpectralState(u * (radius / norm), v * (radius / norm))


def project_initial(u_fn: Callable[..., np.ndarray], v_fn: Optional[Callable[..., np.ndarray]],
                    basis: SpectralBasis) -> SpectralState:
    axes = np.meshgrid(*([basis.quad_nodes] * basis.dim), indexing="ij")
    u = to_modal(u_fn(*axes), basis)
    v = to_modal(v_fn(*axes), basis) if v_fn is not None else np.zeros(basis.size)
    return SpectralState(u, v)
