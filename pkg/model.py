from __future__ import annotations

# model.py

import logging
from dataclasses import dataclass, field, replace, asdict
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from spectral_domain import (
    SpectralBasis,
    SpectralState,
    h_norms,
    integrate,
    to_modal,
    to_physical,
)

logger = logging.getLogger(__name__)

AUDIT_RANGE = 10.0
AUDIT_SAMPLES = 20001
K_F_SAFETY = 1.05


# descriptive check name -> label of the structural inequality it tests
INEQUALITY_LABELS: Dict[str, str] = {
    "damping_monotone": "hyp_g'",
    "damping_growth": "hyp_g'",
    "source_curvature": "hyp_f''",
    "source_slope": "hyp_f'",
    "dissipativity": "hyp-inf-f",
    "potential_bounds": "hyp_f2",
}


def inequality_label(name: str) -> str:
    return INEQUALITY_LABELS.get(name, name)


class AssumptionViolation(ValueError):
    """A structural inequality on (f, g) fails.

    ``inequality`` is the label of the violated inequality (e.g. ``hyp-inf-f``),
    ``name`` the descriptive check name and ``witness`` a sample point where it fails.
    """

    def __init__(self, name: str, witness: float, detail: str = ""):
        self.name = name
        self.inequality = inequality_label(name)
        self.witness = float(witness)
        self.detail = detail
        msg = f"{self.inequality} ({name}) violated at s={self.witness:.6g}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ProfileNotAudited(RuntimeError):
    pass


# ----------------------------------------------------
# Audit results
# ----------------------------------------------------

@dataclass(frozen=True)
class InequalityCheck:
    name: str
    passed: bool
    detail: str = ""

    @property
    def label(self) -> str:
        return inequality_label(self.name)


@dataclass(frozen=True)
class AuditReport:
    lambda1: float
    kappa0: float
    kappa1: float
    kappa2: float
    L_f: float
    C_f: float
    nu: float
    C_nu: float
    omega: float
    mu: float
    N_threshold: float
    K_f: float
    damping_coercive: bool
    checks: Tuple[InequalityCheck, ...] = ()
    tail_notes: Tuple[str, ...] = ()

    @property
    def satisfies_assumption(self) -> bool:
        return self.damping_coercive and all(c.passed for c in self.checks)

    def constants(self) -> Dict[str, float]:
        return {
            "lambda1": self.lambda1,
            "kappa0": self.kappa0,
            "kappa1": self.kappa1,
            "kappa2": self.kappa2,
            "L_f": self.L_f,
            "C_f": self.C_f,
            "nu": self.nu,
            "C_nu": self.C_nu,
            "omega": self.omega,
            "mu": self.mu,
            "N_threshold": self.N_threshold,
            "K_f": self.K_f,
        }


# ----------------------------------------------------
# Nonlinearities
# ----------------------------------------------------

@dataclass(frozen=True)
class SourceTerm:
    """One term a * |s|^(p-1) * s of the source f."""

    coefficient: float
    exponent: float

    def __post_init__(self):
        if not 1.0 <= self.exponent <= 5.0:
            raise ValueError(f"source exponent must lie in [1, 5] (got {self.exponent})")


@dataclass(frozen=True)
class NonlinearityProfile:
    """g(s) = kappa2*s + kappa*|s|^4*s and f(s) = sum a_i |s|^(p_i-1) s.

    Solvers only accept an audited profile (see ``audited``).
    """

    g_linear: float = 0.0
    g_quintic: float = 0.0
    f_terms: Tuple[SourceTerm, ...] = ()
    audit: Optional[AuditReport] = None

    @classmethod
    def from_terms(cls, g_linear: float, g_quintic: float,
                   f_terms: Sequence[Tuple[float, float]] = ()) -> "NonlinearityProfile":
        return cls(float(g_linear), float(g_quintic),
                   tuple(SourceTerm(float(a), float(p)) for a, p in f_terms))

    # -----------------------
    # Pointwise evaluations
    # -----------------------
    def eval_f(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for t in self.f_terms:
            out = out + t.coefficient * np.abs(s) ** (t.exponent - 1.0) * s
        return out

    def eval_fp(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for t in self.f_terms:
            out = out + t.coefficient * t.exponent * np.abs(s) ** (t.exponent - 1.0)
        return out

    def eval_fpp(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for t in self.f_terms:
            p = t.exponent
            if p == 1.0:
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                term = t.coefficient * p * (p - 1.0) * np.sign(s) * np.abs(s) ** (p - 2.0)
            if p < 2.0:
                # f'' blows up at the origin for 1 < p < 2
                term = np.where(s == 0.0, np.inf, term)
            out = out + term
        return out

    def eval_F(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for t in self.f_terms:
            out = out + t.coefficient * np.abs(s) ** (t.exponent + 1.0) / (t.exponent + 1.0)
        return out

    def eval_g(self, s):
        s = np.asarray(s, dtype=float)
        return self.g_linear * s + self.g_quintic * s ** 5

    def eval_gp(self, s):
        s = np.asarray(s, dtype=float)
        return self.g_linear + 5.0 * self.g_quintic * s ** 4

    # -----------------------
    # Audit gate
    # -----------------------
    @property
    def is_audited(self) -> bool:
        return self.audit is not None

    def require_audit(self) -> AuditReport:
        if self.audit is None:
            raise ProfileNotAudited("nonlinearity profile must be audited before use")
        return self.audit

    @property
    def is_monotone_source(self) -> bool:
        return all(t.coefficient >= 0.0 for t in self.f_terms)

    def describe(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "g_linear": self.g_linear,
            "g_quintic": self.g_quintic,
            "f_terms": [[t.coefficient, t.exponent] for t in self.f_terms],
        }
        if self.audit is not None:
            out["constants"] = self.audit.constants()
            out["satisfies_assumption"] = self.audit.satisfies_assumption
            out["checks"] = [
                {"name": c.name, "inequality": c.label, "passed": c.passed, "detail": c.detail}
                for c in self.audit.checks
            ]
            out["tail_notes"] = list(self.audit.tail_notes)
        return out


def default_audit_grid(S: float = AUDIT_RANGE, samples: int = AUDIT_SAMPLES) -> np.ndarray:
    return np.linspace(-S, S, samples)


def _combined_terms(profile: NonlinearityProfile) -> Dict[float, float]:
    combined: Dict[float, float] = {}
    for t in profile.f_terms:
        combined[t.exponent] = combined.get(t.exponent, 0.0) + t.coefficient
    return {p: a for p, a in combined.items() if a != 0.0}


def audit_assumptions(profile: NonlinearityProfile, lambda1: float,
                      s_grid: Optional[np.ndarray] = None,
                      nu_resolution: int = 1000) -> AuditReport:
    """Measure the growth/dissipativity constants of (f, g) on a sample grid.

    Sampled extrema are combined with the closed-form limits |s| -> inf of each
    power sum, so constants that are only attained asymptotically are still
    reported exactly. Raises AssumptionViolation with the failing inequality.
    """
    s = default_audit_grid() if s_grid is None else np.asarray(s_grid, dtype=float)
    S = min(-float(np.min(s)), float(np.max(s)))
    if S < AUDIT_RANGE or s.size < 10_000:
        raise ValueError("audit grid must span [-10, 10] with at least 1e4 samples")
    lambda1 = float(lambda1)
    notes: List[str] = []
    checks: List[InequalityCheck] = []

    # -----------------------
    # damping
    # -----------------------
    kappa2, kappa = profile.g_linear, profile.g_quintic
    if kappa2 < 0.0:
        raise AssumptionViolation("damping_monotone", 0.0, "g'(0) = kappa2 < 0")
    if kappa < 0.0:
        raise AssumptionViolation("damping_monotone", float(np.max(s)), "quintic damping coefficient < 0")
    gp = profile.eval_gp(s)
    nz = s != 0.0
    kappa0 = min(float(np.min(gp[nz] / s[nz] ** 4)), 5.0 * kappa)
    kappa1 = max(float(np.max(gp / (1.0 + s ** 4))), 5.0 * kappa)
    damping_coercive = kappa > 0.0
    checks.append(InequalityCheck(
        "damping_growth", damping_coercive,
        f"kappa0={kappa0:.6g} |s|^4 <= g'(s) <= kappa1={kappa1:.6g} (1+|s|^4)",
    ))
    notes.append("g'(s)/|s|^4 -> 5*kappa and g'(s)/(1+|s|^4) -> 5*kappa as |s| -> inf")

    # -----------------------
    # source growth
    # -----------------------
    terms = _combined_terms(profile)
    fpp = profile.eval_fpp(s)
    bad = ~np.isfinite(fpp)
    if np.any(bad):
        raise AssumptionViolation("source_curvature", float(s[np.argmax(bad)]),
                                  "f'' is unbounded (exponent in (1, 2))")
    a5 = terms.get(5.0, 0.0)
    L_f = max(float(np.max(np.abs(fpp) / (1.0 + np.abs(s) ** 3))), abs(20.0 * a5))
    fp = profile.eval_fp(s)
    C_f = max(float(np.max(np.abs(fp) / (1.0 + s ** 4))), abs(5.0 * a5))
    checks.append(InequalityCheck("source_curvature", True, f"|f''(s)| <= {L_f:.6g} (1+|s|^3)"))
    checks.append(InequalityCheck("source_slope", True, f"|f'(s)| <= {C_f:.6g} (1+|s|^4)"))
    notes.append("only quintic terms survive in f''/(1+|s|^3) and f'/(1+|s|^4) at infinity")

    # -----------------------
    # dissipativity: lim f(s)/s > -lambda1
    # -----------------------
    top = max(terms) if terms else None
    if top is None:
        limit = 0.0
    elif top > 1.0:
        limit = np.inf if terms[top] > 0.0 else -np.inf
    else:
        limit = terms[top]
    if not limit > -lambda1:
        raise AssumptionViolation("dissipativity", float(np.max(s)),
                                  f"lim f(s)/s = {limit} <= -lambda1 = {-lambda1}")
    checks.append(InequalityCheck("dissipativity", True, f"lim f(s)/s = {limit} > {-lambda1}"))

    # -----------------------
    # potential bounds: -C_nu - nu s^2/2 <= F(s) <= f(s)s + nu s^2/2
    # -----------------------
    nu_floor = max(0.0, -terms.get(1.0, 0.0)) if top == 1.0 else 0.0
    grid_nus = lambda1 * np.arange(nu_resolution) / nu_resolution
    candidates = np.unique(np.concatenate([[nu_floor], grid_nus]))
    candidates = candidates[(candidates >= nu_floor) & (candidates < lambda1)]
    F = profile.eval_F(s)
    fs = profile.eval_f(s) * s
    scale = 1.0 + np.abs(F) + np.abs(fs)
    nu = None
    gap = None
    for cand in candidates:
        gap = F - fs - 0.5 * cand * s ** 2
        if np.all(gap <= 1e-12 * scale):
            nu = float(cand)
            break
    if nu is None:
        witness = float(s[np.argmax(gap)]) if gap is not None else 0.0
        raise AssumptionViolation("potential_bounds", witness,
                                  "no nu in [0, lambda1) gives F(s) <= f(s)s + nu s^2/2")
    C_nu = max(0.0, -float(np.min(F + 0.5 * nu * s ** 2)))
    omega = 1.0 - nu / lambda1
    checks.append(InequalityCheck("potential_bounds", True, f"nu={nu:.6g}, C_nu={C_nu:.6g}"))
    if top == 1.0:
        notes.append("linear leading term: tail of F + nu s^2/2 requires nu >= -a_1")

    # -----------------------
    # lower bound of f' -> K_f
    # -----------------------
    j = int(np.argmin(fp))
    fmin = float(fp[j])
    spacing = float(np.max(np.diff(np.sort(s))))
    r0 = abs(float(s[j]))
    refined = minimize_scalar(lambda r: float(profile.eval_fp(np.array(r))),
                              bounds=(max(0.0, r0 - spacing), r0 + spacing), method="bounded")
    if refined.success:
        fmin = min(fmin, float(refined.fun))
    mu = K_F_SAFETY * max(0.0, -fmin)
    # global lower bound: the |s| <= N region is empty
    N_threshold = 0.0
    K_f = mu if N_threshold == 0.0 else max(mu, C_f * (1.0 + N_threshold ** 4))

    report = AuditReport(
        lambda1=lambda1, kappa0=kappa0, kappa1=kappa1, kappa2=kappa2,
        L_f=L_f, C_f=C_f, nu=nu, C_nu=C_nu, omega=omega,
        mu=mu, N_threshold=N_threshold, K_f=K_f,
        damping_coercive=damping_coercive,
        checks=tuple(checks), tail_notes=tuple(notes),
    )
    logger.debug("audit constants: %s", report.constants())
    return report


def audited(profile: NonlinearityProfile, lambda1: float,
            s_grid: Optional[np.ndarray] = None) -> NonlinearityProfile:
    return replace(profile, audit=audit_assumptions(profile, lambda1, s_grid))


# ----------------------------------------------------
# Forcing
# ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class Forcing:
    h_coeffs: np.ndarray

    def __post_init__(self):
        h = np.array(self.h_coeffs, dtype=float).reshape(-1)
        if not np.all(np.isfinite(h)):
            raise ValueError("forcing coefficients must be finite")
        object.__setattr__(self, "h_coeffs", h)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.h_coeffs))

    @classmethod
    def zero(cls, basis: SpectralBasis) -> "Forcing":
        return cls(np.zeros(basis.size))

    @classmethod
    def mode(cls, basis: SpectralBasis, norm: float, index: int = 0) -> "Forcing":
        h = np.zeros(basis.size)
        h[index] = norm
        return cls(h)

    @classmethod
    def from_function(cls, fn: Callable[..., np.ndarray], basis: SpectralBasis) -> "Forcing":
        axes = np.meshgrid(*([basis.quad_nodes] * basis.dim), indexing="ij")
        return cls(to_modal(fn(*axes), basis))

    def check_basis(self, basis: SpectralBasis) -> None:
        if self.h_coeffs.size != basis.size:
            raise ValueError(f"forcing has {self.h_coeffs.size} modes, basis expects {basis.size}")


# ----------------------------------------------------
# Energy
# ----------------------------------------------------

@dataclass(frozen=True)
class EnergySnapshot:
    total: float
    kinetic: float
    gradient: float
    potential: float
    forcing_term: float


def energy(state: SpectralState, profile: NonlinearityProfile, forcing: Forcing,
           basis: SpectralBasis) -> EnergySnapshot:
    """E = 1/2 ||U||_H^2 + int F(u) - int h u."""
    profile.require_audit()
    norms = h_norms(state, basis)
    forcing.check_basis(basis)
    u_grid = to_physical(state.u_coeffs, basis)
    potential = integrate(profile.eval_F(u_grid), basis)
    forcing_term = float(np.dot(forcing.h_coeffs, state.u_coeffs))
    kinetic = 0.5 * norms.vel_sq
    gradient = 0.5 * norms.grad_sq
    total = kinetic + gradient + potential - forcing_term
    return EnergySnapshot(total, kinetic, gradient, potential, forcing_term)


def dissipation_density(v_grid: np.ndarray, profile: NonlinearityProfile,
                        basis: SpectralBasis) -> float:
    """int g(u_t) u_t dx on the collocation grid."""
    profile.require_audit()
    v = np.asarray(v_grid, dtype=float)
    return integrate(profile.eval_g(v) * v, basis)
