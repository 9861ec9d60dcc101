from __future__ import annotations

# spectral_domain.py

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Tuple

import numpy as np
from scipy import fft

SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


class NonFiniteStateError(FloatingPointError):
    """Raised when a modal state or a collocated field contains NaN/Inf."""


# ----------------------------------------------------
# Basis
# ----------------------------------------------------

@dataclass(frozen=True)
class SpectralBasis:
    """Dirichlet sine eigenbasis of -Laplace on the box (0, pi)^dim.

    Modal vectors are flat arrays of length ``modes_per_axis ** dim`` stored in
    lexicographic order of the multi-index (k_1, ..., k_d), k_i = 1..N.
    Physical fields live on the interior DST-I grid with
    ``quad_oversample * modes_per_axis`` nodes per axis.
    """

    dim: int
    modes_per_axis: int
    quad_oversample: int = 3

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3 (got {self.dim})")
        if self.modes_per_axis < 1:
            raise ValueError(f"modes_per_axis must be >= 1 (got {self.modes_per_axis})")
        if self.quad_oversample < 3:
            raise ValueError(
                f"quad_oversample must be >= 3 for alias-free quintic products "
                f"(got {self.quad_oversample})"
            )

    # -----------------------
    # Index sets and spectrum
    # -----------------------
    @property
    def size(self) -> int:
        return self.modes_per_axis ** self.dim

    @property
    def modal_shape(self) -> Tuple[int, ...]:
        return (self.modes_per_axis,) * self.dim

    @property
    def points_per_axis(self) -> int:
        return self.quad_oversample * self.modes_per_axis

    @property
    def grid_shape(self) -> Tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @cached_property
    def multi_indices(self) -> np.ndarray:
        ks = range(1, self.modes_per_axis + 1)
        return np.array(list(itertools.product(ks, repeat=self.dim)), dtype=int)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """lambda_k = sum k_i^2, in storage (lexicographic) order."""
        return np.sum(self.multi_indices.astype(float) ** 2, axis=1)

    @cached_property
    def sorted_eigenvalues(self) -> np.ndarray:
        return np.sort(self.eigenvalues)

    @property
    def lambda1(self) -> float:
        return float(self.dim)

    @property
    def domain_volume(self) -> float:
        return float(np.pi ** self.dim)

    # -----------------------
    # Quadrature
    # -----------------------
    @cached_property
    def quad_nodes(self) -> np.ndarray:
        m = self.points_per_axis
        return np.pi * np.arange(1, m + 1) / (m + 1)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        m = self.points_per_axis
        return np.full(m, np.pi / (m + 1))

    @property
    def cell_volume(self) -> float:
        return float((np.pi / (self.points_per_axis + 1)) ** self.dim)

    @cached_property
    def axis_functions(self) -> np.ndarray:
        """phi_k(x_j) = sqrt(2/pi) sin(k x_j), shape (points, modes)."""
        ks = np.arange(1, self.modes_per_axis + 1)
        return SQRT_2_OVER_PI * np.sin(np.outer(self.quad_nodes, ks))

    @cached_property
    def _product_tensor(self) -> np.ndarray:
        # w_j phi_k(x_j) phi_l(x_j), shape (points, modes, modes)
        phi = self.axis_functions
        return self.quad_weights[:, None, None] * phi[:, :, None] * phi[:, None, :]

    def descriptor(self) -> dict:
        return {
            "dim": self.dim,
            "modes_per_axis": self.modes_per_axis,
            "quad_oversample": self.quad_oversample,
        }

    def weighted_gram(self, weight_grid: np.ndarray) -> np.ndarray:
        """Matrix of integral(w * phi_k * phi_l) over the box, shape (size, size).

        Used for Newton Jacobians of collocated nonlinear terms; the tensor
        structure keeps the cost far below a dense physical-by-modal product.
        """
        w = np.asarray(weight_grid, dtype=float)
        if w.shape != self.grid_shape:
            raise ValueError(f"weight grid shape {w.shape} does not match {self.grid_shape}")
        p = self._product_tensor
        n = self.size
        if self.dim == 1:
            gram = np.einsum("akl,a->kl", p, w, optimize=True)
        elif self.dim == 2:
            gram = np.einsum("akl,bmn,ab->kmln", p, p, w, optimize=True)
        else:
            gram = np.einsum("akl,bmn,cpq,abc->kmplnq", p, p, p, w, optimize=True)
        return gram.reshape(n, n)


def build_basis(dim: int, modes_per_axis: int, quad_oversample: int = 3) -> SpectralBasis:
    return SpectralBasis(dim=int(dim), modes_per_axis=int(modes_per_axis),
                         quad_oversample=int(quad_oversample))


# ----------------------------------------------------
# State
# ----------------------------------------------------

@dataclass(eq=False)
class SpectralState:
    """Modal pair U = (u, u_t) at a given time."""

    u_coeffs: np.ndarray
    v_coeffs: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.u_coeffs = np.array(self.u_coeffs, dtype=float).reshape(-1)
        self.v_coeffs = np.array(self.v_coeffs, dtype=float).reshape(-1)
        if self.u_coeffs.shape != self.v_coeffs.shape:
            raise ValueError(
                f"u and v coefficient vectors differ in size "
                f"({self.u_coeffs.size} vs {self.v_coeffs.size})"
            )
        if not (np.all(np.isfinite(self.u_coeffs)) and np.all(np.isfinite(self.v_coeffs))):
            raise NonFiniteStateError(f"non-finite modal coefficients at t={self.time}")
        self.time = float(self.time)

    @classmethod
    def zeros(cls, basis: SpectralBasis, time: float = 0.0) -> "SpectralState":
        return cls(np.zeros(basis.size), np.zeros(basis.size), time)

    def check_basis(self, basis: SpectralBasis) -> None:
        if self.u_coeffs.size != basis.size:
            raise ValueError(
                f"state has {self.u_coeffs.size} modes, basis expects {basis.size}"
            )

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u_coeffs, self.v_coeffs])

    def copy(self) -> "SpectralState":
        return SpectralState(self.u_coeffs.copy(), self.v_coeffs.copy(), self.time)


class HNorms(NamedTuple):
    grad_sq: float
    vel_sq: float
    energy_sq: float
    lap_sq: float


# ----------------------------------------------------
# Transforms and norms
# ----------------------------------------------------

def _check_modal(coeffs: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    if c.ndim == 0 or c.shape[-1] != basis.size:
        raise ValueError(f"modal array of shape {c.shape} does not match basis size {basis.size}")
    return c


def to_physical(coeffs: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    """Evaluate modal vectors (leading batch axes allowed) on the quadrature grid."""
    c = _check_modal(coeffs, basis)
    batch = c.shape[:-1]
    d = basis.dim
    padded = np.zeros(batch + basis.grid_shape)
    padded[(Ellipsis,) + tuple(slice(0, basis.modes_per_axis) for _ in range(d))] = (
        c.reshape(batch + basis.modal_shape)
    )
    # scipy's DST-I carries a factor 2 per axis
    values = fft.dstn(padded, type=1, axes=tuple(range(-d, 0)))
    return values * (SQRT_2_OVER_PI / 2.0) ** d


def to_modal(grid_values: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    """Project grid values onto the first N sine modes per axis."""
    g = np.asarray(grid_values, dtype=float)
    d = basis.dim
    if g.ndim < d or g.shape[-d:] != basis.grid_shape:
        raise ValueError(f"grid of shape {g.shape} does not match {basis.grid_shape}")
    batch = g.shape[:-d]
    spec = fft.dstn(g, type=1, axes=tuple(range(-d, 0)))
    spec = spec[(Ellipsis,) + tuple(slice(0, basis.modes_per_axis) for _ in range(d))]
    h = np.pi / (basis.points_per_axis + 1)
    return (spec * (h * SQRT_2_OVER_PI / 2.0) ** d).reshape(batch + (basis.size,))


def integrate(grid_values: np.ndarray, basis: SpectralBasis) -> float:
    g = np.asarray(grid_values, dtype=float)
    if g.shape != basis.grid_shape:
        raise ValueError(f"grid of shape {g.shape} does not match {basis.grid_shape}")
    return float(basis.cell_volume * np.sum(g))


def lp_norm(grid_values: np.ndarray, p: float, basis: SpectralBasis) -> float:
    g = np.asarray(grid_values, dtype=float)
    return integrate(np.abs(g) ** p, basis) ** (1.0 / p)


def h_norms(state: SpectralState, basis: SpectralBasis) -> HNorms:
    state.check_basis(basis)
    lam = basis.eigenvalues
    u, v = state.u_coeffs, state.v_coeffs
    grad_sq = float(np.dot(lam * u, u))
    vel_sq = float(np.dot(v, v))
    lap_sq = float(np.dot(lam * lam * u, u))
    return HNorms(grad_sq, vel_sq, grad_sq + vel_sq, lap_sq)


def energy_norm_sq(u_coeffs: np.ndarray, v_coeffs: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    """||U||_H^2 for stacked modal arrays (leading axes are kept)."""
    u = np.asarray(u_coeffs)
    v = np.asarray(v_coeffs)
    return np.sum(basis.eigenvalues * u * u, axis=-1) + np.sum(v * v, axis=-1)


def embed(coeffs: np.ndarray, source: SpectralBasis, target: SpectralBasis) -> np.ndarray:
    """Zero-pad (or truncate) a modal vector to another basis of the same dimension."""
    if source.dim != target.dim:
        raise ValueError("bases differ in dimension")
    c = _check_modal(coeffs, source).reshape(source.modal_shape)
    out = np.zeros(target.modal_shape)
    m = min(source.modes_per_axis, target.modes_per_axis)
    window = tuple(slice(0, m) for _ in range(source.dim))
    out[window] = c[window]
    return out.reshape(-1)


__all__ = [
    "NonFiniteStateError",
    "SpectralBasis",
    "SpectralState",
    "HNorms",
    "build_basis",
    "to_physical",
    "to_modal",
    "integrate",
    "lp_norm",
    "h_norms",
    "energy_norm_sq",
    "embed",
]
