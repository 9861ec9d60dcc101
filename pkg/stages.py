# stages.py
from __future__ import annotations

import logging
from typing import Any, Dict, Optional

import numpy as np

from diagnostics import (
    L6_TAIL_MAX,
    LEDGER_COLUMNS,
    a_priori_budget,
    energy_audit,
    energy_order_study,
    identity_tolerance,
    lyapunov_identity,
    steklov_difference,
    steklov_limit_check,
)
from engine import PipelineDefinition
from experiments import (
    ExperimentError,
    H2_QUANTITIES,
    absorbing_ball,
    attractor_sample,
    ball_pairs,
    continuous_dependence,
    fractal_dimension_estimate,
    h2_against_stationary,
    h2_tracking,
    holder_weak_norm,
    member_rngs,
    quasi_stability_fit,
    run_selftest,
    stationary_experiment,
)
from galerkin_solver import newton_dt_max, random_initial_state, simulate
from model import Forcing, NonlinearityProfile, audited, default_audit_grid, energy
from models import (
    BasisBlock,
    ExperimentReport,
    ForcingBlock,
    InitialBlock,
    ProfileBlock,
    RunConfig,
)
from spectral_domain import SpectralBasis, SpectralState, build_basis, energy_norm_sq
from storage import ArtifactStore, read_checkpoint

logger = logging.getLogger(__name__)

TRAJECTORY_EXPERIMENTS = ("simulate", "energy-audit", "steklov", "holder")
REPORT_NAME = "report.json"


# ----------------------------------------------------
# Builders: config blocks -> domain objects
# ----------------------------------------------------

def basis_from(block: BasisBlock) -> SpectralBasis:
    return build_basis(block.dim, block.modes_per_axis, block.quad_oversample)


def profile_from(block: ProfileBlock, basis: SpectralBasis) -> NonlinearityProfile:
    """Build and audit; raises AssumptionViolation when an inequality fails."""
    raw = NonlinearityProfile.from_terms(block.g_linear, block.g_quintic, block.f_terms)
    grid = default_audit_grid(block.audit_range, block.audit_samples)
    return audited(raw, basis.lambda1, grid)


def _smooth_profile(*axes: np.ndarray) -> np.ndarray:
    out = np.ones_like(axes[0])
    for x in axes:
        out = out * x * (np.pi - x)
    return out


def forcing_from(block: ForcingBlock, basis: SpectralBasis) -> Forcing:
    if block.coefficients is not None:
        h = np.asarray(block.coefficients, dtype=float)
        if h.size != basis.size:
            raise ValueError(f"forcing.coefficients has {h.size} entries, basis has {basis.size} modes")
        return Forcing(h)
    if block.preset in (None, "zero") or block.norm == 0.0:
        return Forcing.zero(basis)
    if block.preset == "mode1":
        return Forcing.mode(basis, block.norm)
    shape = Forcing.from_function(_smooth_profile, basis)
    return Forcing(shape.h_coeffs * (block.norm / shape.norm))


def initial_from(block: InitialBlock, basis: SpectralBasis, seed: int) -> SpectralState:
    if block.kind == "checkpoint":
        return resume_state(str(block.path), basis)
    if block.kind == "zero" or block.radius == 0.0:
        return SpectralState.zeros(basis)
    if block.kind == "random":
        rng = np.random.default_rng(seed)
        return random_initial_state(basis, rng, block.radius, velocity_only=block.velocity_only)
    # lowest sine mode with ||U||_H = radius
    u = np.zeros(basis.size)
    v = np.zeros(basis.size)
    if block.velocity_only:
        v[0] = block.radius
    else:
        u[0] = block.radius / np.sqrt(basis.eigenvalues[0])
    return SpectralState(u, v)


def resume_state(path: str, basis: SpectralBasis) -> SpectralState:
    """Final state of an earlier run; the checkpoint must use the same basis."""
    saved_basis, _, _, state = read_checkpoint(path)
    if saved_basis.descriptor() != basis.descriptor():
        raise ValueError(f"checkpoint {path} has basis {saved_basis.descriptor()}, "
                         f"run uses {basis.descriptor()}")
    logger.info("resuming from %s at t=%g", path, state.time)
    return state


# ----------------------------------------------------
# Stages
# ----------------------------------------------------

def _cfg(ctx: Dict[str, Any]) -> RunConfig:
    return ctx["config"]


def _report(ctx: Dict[str, Any]) -> ExperimentReport:
    return ctx["report"]


def prepare(ctx: Dict[str, Any]) -> Dict[str, Any]:
    cfg = _cfg(ctx)
    basis = basis_from(cfg.basis)
    profile = ctx.get("profile") or profile_from(cfg.profile, basis)
    forcing = forcing_from(cfg.forcing, basis)
    initial = initial_from(cfg.initial, basis, cfg.seed)
    report = ExperimentReport(experiment=cfg.experiment.name)
    report.inputs.update({
        "basis": basis.descriptor(),
        "profile": profile.describe(),
        "solver": cfg.solver.model_dump(),
        "seed": cfg.seed,
        "forcing_norm": forcing.norm,
    })
    report.constants.update(profile.require_audit().constants())
    ctx.update({"basis": basis, "profile": profile, "forcing": forcing,
                "initial": initial, "report": report})
    return ctx


def run_trajectory(ctx: Dict[str, Any]) -> Dict[str, Any]:
    cfg = _cfg(ctx)
    store: ArtifactStore = ctx["store"]
    basis, profile, forcing = ctx["basis"], ctx["profile"], ctx["forcing"]
    traj = simulate(ctx["initial"], profile, forcing, basis, cfg.solver)
    dt_max: Optional[float] = None
    if cfg.solver.scheme == "implicit_midpoint":
        dt_max = newton_dt_max(ctx["initial"], profile, forcing, basis, cfg.solver)
    lam = basis.eigenvalues
    store.write_columns("trajectory.csv", {
        "time": traj.times,
        "norm_sq": traj.energy_norms_sq(),
        "grad_sq": np.sum(lam * traj.u ** 2, axis=1),
        "vel_sq": np.sum(traj.v ** 2, axis=1),
        "D_cum": traj.dissipation_cum,
        "l6_budget": traj.l6_cum,
    })
    store.write_checkpoint("checkpoint.json", basis, profile, cfg.solver, traj.final)
    report = _report(ctx)
    report.constants.update({
        "final_time": float(traj.times[-1]),
        "final_norm_sq": float(traj.energy_norms_sq()[-1]),
        "final_energy": energy(traj.final, profile, forcing, basis).total,
        "dissipation_total": float(traj.dissipation_cum[-1]),
        "halvings": traj.halvings,
        "newton_dt_max": dt_max,
    })
    ctx["trajectory"] = traj
    return ctx


def regularity(ctx: Dict[str, Any]) -> Dict[str, Any]:
    cfg = _cfg(ctx)
    exp = cfg.experiment
    basis = ctx["basis"]
    track = h2_tracking(ctx["trajectory"], basis, burn_in=exp.burn_in, tol=exp.h2_tolerance)
    ctx["store"].write_columns("regularity.csv", {
        "time": track.times,
        "lap_sq": track.lap_sq,
        "vel_h1_sq": track.vel_h1_sq,
        "acc_sq": track.acc_sq,
    })
    report = _report(ctx)
    for name in H2_QUANTITIES:
        report.constants[f"sup_{name}"] = track.sup[name]
        report.constants[f"slope_{name}"] = track.slopes[name]
    comparison = h2_against_stationary(track.sup["lap_sq"], ctx["profile"], ctx["forcing"], basis)
    report.constants["stationary_h2_bound"] = comparison["stationary_h2_bound"]
    report.notes.append(
        f"sup ||Laplace u||^2 = {comparison['sup_lap_sq']:.6g} after burn-in; "
        f"stationary-set H2 bound = {comparison['stationary_h2_bound']:.6g}"
    )
    report.add_bound("h2_bounded", "largest log-slope of the windowed sups of the H2 quantities <= tol",
                     exp.h2_tolerance, track.slope, track.bounded)
    return ctx


def audit_energy(ctx: Dict[str, Any]) -> Dict[str, Any]:
    cfg = _cfg(ctx)
    exp = cfg.experiment
    basis, profile, forcing = ctx["basis"], ctx["profile"], ctx["forcing"]
    traj = ctx["trajectory"]
    ledger = energy_audit(traj, profile, forcing, basis)
    ctx["store"].write_csv("energy_ledger.csv", LEDGER_COLUMNS, ledger.rows())
    report = _report(ctx)

    e0 = float(ledger.total[0])
    tol = identity_tolerance(e0, exp.residual_tol)
    report.add_bound("energy_identity", "max |E(t) + D(0,t) - E(0)| <= residual_tol * |E(0)|",
                     tol, ledger.max_residual, ledger.max_residual <= tol)
    budget = a_priori_budget(traj, ledger, profile, forcing, basis)
    report.add_bound("a_priori_bound", "sup ||U(t)||_H^2 <= bound from E(0), C_nu, ||h||",
                     budget.bound, budget.observed_max, budget.within_bound)
    report.add_bound("dissipation_monotone", "D(0,t) nondecreasing", 0.0, 0.0,
                     budget.dissipation_monotone)
    if budget.window_count:
        report.add_bound("window_holder", "int ||u_t||^2 <= |Omega|^(2/3) (int ||u_t||_6^6)^(1/3)",
                         float(budget.window_count), float(budget.window_count),
                         budget.window_holder_ok)
    report.constants["l6_tail_fraction"] = budget.l6_tail_fraction
    report.add_bound("l6_convergence", "second-half share of int ||u_t||_6^6 <= 0.05", L6_TAIL_MAX,
                     budget.l6_tail_fraction, budget.l6_tail_fraction <= L6_TAIL_MAX)
    if forcing.norm == 0.0:
        increase = float(np.max(np.diff(ledger.total))) if ledger.total.size > 1 else 0.0
        report.add_bound("energy_nonincreasing", "E(t_{n+1}) - E(t_n) <= tol", tol, increase,
                         increase <= tol)

    if exp.dt_study:
        study = energy_order_study(ctx["initial"], profile, forcing, basis, cfg.solver,
                                   dts=exp.dt_study)
        ctx["store"].write_columns("energy_order.csv",
                                   {"dt": study.dts, "max_residual": study.max_residuals})
        report.constants["energy_order"] = study.order
        report.add_bound("energy_order", "observed residual order >= 1.9", 1.9, study.order,
                         study.order >= 1.9)
    return ctx


def steklov(ctx: Dict[str, Any]) -> Dict[str, Any]:
    cfg = _cfg(ctx)
    exp = cfg.experiment
    traj = ctx["trajectory"]
    base, levels = exp.steklov_base_steps, exp.steklov_levels
    if base % 2 ** (levels - 1):
        raise ValueError(f"steklov_base_steps={base} is not divisible by 2^(levels-1)={2 ** (levels - 1)}")
    h = traj.spacing
    eps_seq = [base * h / 2 ** j for j in range(levels)]
    result = steklov_limit_check(traj, eps_seq)
    store: ArtifactStore = ctx["store"]
    store.write_columns("steklov.csv", {"eps": result.eps, "gap_a": result.gap_a, "gap_c": result.gap_c})
    report = _report(ctx)
    report.constants.update({"steklov_rate_a": result.rate_a, "steklov_rate_c": result.rate_c,
                             "target_a": result.target_a, "target_c": result.target_c})
    report.add_bound("steklov_a", "|gap_a| strictly decreasing in eps", 0.0,
                     float(np.abs(result.gap_a[-1])), result.monotone_a)
    report.add_bound("steklov_c", "|gap_c| strictly decreasing in eps", 0.0,
                     float(np.abs(result.gap_c[-1])), result.monotone_c)

    # D_eps is exact on quadratics away from the ends
    t = traj.times - traj.times[0]
    m = int(round(eps_seq[-1] / h))
    quad = steklov_difference(t ** 2, eps_seq[-1], h).central
    inner = slice(m, t.size - m)
    quad_err = float(np.max(np.abs(quad[inner] - 2.0 * t[inner]))) if t.size > 2 * m else 0.0
    report.add_bound("quadratic_exactness", "D_eps t^2 = 2t on the interior", 1e-9, quad_err,
                     quad_err <= 1e-9 * max(1.0, float(t[-1])))

    ident = lyapunov_identity(traj, ctx["profile"], ctx["forcing"], ctx["basis"], exp.lyapunov_eps)
    store.write_columns("lyapunov.csv", {"time": ident.times, "V": ident.V, "H": ident.H,
                                         "residual": ident.residual})
    scale = max(1.0, float(np.max(np.abs(ident.V))))
    report.constants.update({"lyapunov_eps": ident.eps, "lyapunov_residual": ident.max_residual})
    report.add_bound("lyapunov_identity", "|V - e^{-eps t} V(0) - int e^{-eps(t-s)} H| <= 1e-3 max|V|",
                     1e-3 * scale, ident.max_residual, ident.max_residual <= 1e-3 * scale)
    return ctx


def holder(ctx: Dict[str, Any]) -> Dict[str, Any]:
    exp = _cfg(ctx).experiment
    est = holder_weak_norm(ctx["trajectory"], exp.s_exponent)
    ctx["store"].write_columns("holder.csv", {"gap": est.gaps, "sup_increment": est.increments})
    report = _report(ctx)
    report.constants["gamma"] = est.gamma
    if est.gamma is None:
        report.notes.append("trajectory is stationary in the weak norm; no exponent fitted")
    report.add_bound("holder_exponent", "gamma >= s/6 - 0.05", est.threshold,
                     est.gamma if est.gamma is not None else float("inf"), est.passed)
    return ctx


def _merge(ctx: Dict[str, Any], sub: ExperimentReport) -> None:
    report = _report(ctx)
    report.inputs.update(sub.inputs)
    report.constants.update(sub.constants)
    report.bounds.extend(sub.bounds)
    report.notes.extend(sub.notes)


def lipschitz(ctx: Dict[str, Any]) -> Dict[str, Any]:
    cfg = _cfg(ctx)
    exp = cfg.experiment
    basis = ctx["basis"]
    a: SpectralState = ctx["initial"]
    rng = member_rngs(cfg.seed, 2)[1]
    du = rng.standard_normal(basis.size) / basis.eigenvalues
    dv = rng.standard_normal(basis.size) / basis.eigenvalues
    scale = exp.gap / float(np.sqrt(energy_norm_sq(du, dv, basis)))
    b = SpectralState(a.u_coeffs + scale * du, a.v_coeffs + scale * dv, a.time)
    rescaled = exp.rescaled_gap if exp.rescaled_gap is not None and exp.rescaled_gap < exp.gap else None
    result = continuous_dependence(a, b, ctx["profile"], ctx["forcing"], basis, cfg.solver, rescaled)
    columns = {"time": result.times, "rho": result.rho}
    if result.rescaled_rho is not None:
        columns["rho_rescaled"] = result.rescaled_rho
    ctx["store"].write_columns("lipschitz.csv", columns)
    _merge(ctx, result.report)
    return ctx


def absorb(ctx: Dict[str, Any]) -> Dict[str, Any]:
    cfg = _cfg(ctx)
    exp = cfg.experiment
    result = absorbing_ball(ctx["profile"], ctx["forcing"], ctx["basis"], cfg.solver,
                            exp.ensemble_size, cfg.initial.radius, seed=cfg.seed, dwell=exp.dwell,
                            residual_tol=exp.residual_tol)
    ctx["store"].write_columns("absorb.csv", result.series)
    _merge(ctx, result.report)
    _report(ctx).constants["members"] = [vars(m) for m in result.members]
    ctx["absorbing_radius_sq"] = result.radius_sq
    return ctx


def quasistab(ctx: Dict[str, Any]) -> Dict[str, Any]:
    cfg = _cfg(ctx)
    exp = cfg.experiment
    pairs = ball_pairs(ctx["basis"], cfg.seed, exp.pairs, max(cfg.initial.radius, 1e-12))
    result = quasi_stability_fit(pairs, ctx["profile"], ctx["forcing"], ctx["basis"], cfg.solver)
    ctx["store"].write_columns("quasistab.csv", {"block_start": result.block_times,
                                                 "envelope": result.envelope})
    _merge(ctx, result.report)
    return ctx


def stationary(ctx: Dict[str, Any]) -> Dict[str, Any]:
    cfg = _cfg(ctx)
    result = stationary_experiment(ctx["profile"], ctx["forcing"], ctx["basis"], seed=cfg.seed)
    base = result.states[0]
    ctx["store"].write_columns("stationary.csv", {
        "eigenvalue": ctx["basis"].eigenvalues, "u": base.u_coeffs,
    })
    _merge(ctx, result.report)
    return ctx


def attractor(ctx: Dict[str, Any]) -> Dict[str, Any]:
    cfg = _cfg(ctx)
    exp = cfg.experiment
    basis = ctx["basis"]
    ensemble = [random_initial_state(basis, rng, cfg.initial.radius * float(np.sqrt(rng.uniform(0.25, 1.0))))
                for rng in member_rngs(cfg.seed, exp.ensemble_size)]
    sample = attractor_sample(ctx["profile"], ctx["forcing"], basis, cfg.solver, ensemble,
                              exp.burn_in, exp.sample_count, seed=cfg.seed, starts=exp.restarts,
                              residual_tol=exp.residual_tol)
    ctx["store"].write_columns("attractor_distances.csv", {"distance": sample.distances})
    _merge(ctx, sample.report)
    ctx["cloud"] = sample.cloud
    return ctx


def dimension(ctx: Dict[str, Any]) -> Dict[str, Any]:
    exp = _cfg(ctx).experiment
    cloud = ctx.get("cloud")
    if cloud is None:
        raise ExperimentError("no attractor sample available for the dimension estimate")
    est = fractal_dimension_estimate(cloud, radii_count=exp.radii_count)
    if est.radii.size:
        ctx["store"].write_columns("correlation_sum.csv", {"radius": est.radii, "C": est.correlation})
    report = _report(ctx)
    report.constants.update({"dimension": est.dimension, "dimension_stderr": est.stderr,
                             "dimension_band": list(est.band), "degenerate": est.degenerate})
    report.notes.append("correlation-sum slope is a heuristic estimate, not a rigorous bound")
    return ctx


def selftest(ctx: Dict[str, Any]) -> Dict[str, Any]:
    _merge(ctx, run_selftest(_cfg(ctx).seed))
    return ctx


def finalize(ctx: Dict[str, Any]) -> Dict[str, Any]:
    store: ArtifactStore = ctx["store"]
    report = _report(ctx)
    report.inputs["config_hash"] = ctx.get("config_hash")
    report.artifacts = sorted(set(store.artifacts) | {REPORT_NAME})
    store.write_json(REPORT_NAME, report.model_dump(mode="json"))
    store.write_manifest()
    ctx["passed"] = report.passed
    logger.info("%s finished: %d bounds, passed=%s", report.experiment, len(report.bounds), report.passed)
    return ctx


# ----------------------------------------------------
# Pipeline
# ----------------------------------------------------

STAGE_FUNCTIONS = {
    "prepare": prepare,
    "simulate": run_trajectory,
    "regularity": regularity,
    "energy_audit": audit_energy,
    "steklov": steklov,
    "holder": holder,
    "lipschitz": lipschitz,
    "absorb": absorb,
    "quasistab": quasistab,
    "stationary": stationary,
    "attractor": attractor,
    "dimension": dimension,
    "selftest": selftest,
    "finalize": finalize,
}


def _experiment_is(*names: str):
    return lambda ctx: _cfg(ctx).experiment.name in names


def build_pipeline() -> PipelineDefinition:
    drivers = ["selftest", "simulate", "lipschitz", "absorb", "quasistab", "stationary", "attractor"]
    edges = {
        "prepare": drivers,
        "simulate": ["regularity", "energy_audit", "steklov", "holder"],
        "attractor": ["dimension", "finalize"],
    }
    conditions = {
        "prepare->selftest": _experiment_is("selftest"),
        "prepare->simulate": _experiment_is(*TRAJECTORY_EXPERIMENTS),
        "prepare->attractor": _experiment_is("attractor", "dimension"),
        "simulate->regularity": _experiment_is("simulate"),
        "simulate->energy_audit": _experiment_is("energy-audit"),
        "simulate->steklov": _experiment_is("steklov"),
        "simulate->holder": _experiment_is("holder"),
        "attractor->dimension": _experiment_is("dimension"),
    }
    for name in ("lipschitz", "absorb", "quasistab", "stationary"):
        conditions[f"prepare->{name}"] = _experiment_is(name)
    for name in STAGE_FUNCTIONS:
        if name not in edges and name != "finalize":
            edges[name] = ["finalize"]
    return PipelineDefinition(
        stages=list(STAGE_FUNCTIONS),
        edges=edges,
        start_stage="prepare",
        conditions=conditions,
    )
