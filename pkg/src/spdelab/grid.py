"""Space/time/noise-interval discretization and the deterministic heat backbone.

Everything downstream (stochastic stepping, controlled solves, rate
functionals) runs on the uniform truncated grid defined here.  The heat
semigroup is available in two independent forms: an exact Gaussian
convolution (`heat_flow_exact`, used as an oracle) and an implicit
finite-difference step (`heat_step`, used by the solvers).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import solve_banded

BC_NEUMANN = "neumann"
BC_DIRICHLET_PINNED = "dirichlet_pinned"
_BCS = (BC_NEUMANN, BC_DIRICHLET_PINNED)


@dataclass(frozen=True)
class Grid:
    """Uniform discretization of [-L, L] x [0, T] x [a_min, a_max].

    Parameters
    ----------
    L : float
        Spatial half-width; space is truncated to [-L, L].
    ny : int
        Number of spatial points (>= 3); dx = 2 L / (ny - 1).
    T : float
        Time horizon (the natural horizon for all experiments is 1).
    nt : int
        Number of time steps; dt = T / nt.
    a_min, a_max : float
        Bounds of the noise interval.
    na : int
        Number of noise cells; da = (a_max - a_min) / na.
    bc : str
        Spatial boundary condition for the heat operator: "neumann"
        (no flux, the natural choice for anchored mass functions) or
        "dirichlet_pinned" (endpoint values held fixed, the natural
        choice for distribution functions pinned at 0 and 1).
    """

    L: float = 8.0
    ny: int = 321
    T: float = 1.0
    nt: int = 200
    a_min: float = 0.0
    a_max: float = 1.0
    na: int = 32
    bc: str = BC_NEUMANN

    def __post_init__(self):
        if self.ny < 3:
            raise ValueError(f"ny must be >= 3, got {self.ny}")
        if self.nt < 1:
            raise ValueError(f"nt must be >= 1, got {self.nt}")
        if self.na < 1:
            raise ValueError(f"na must be >= 1, got {self.na}")
        if not (self.L > 0 and self.T > 0):
            raise ValueError("L and T must be positive")
        if not self.a_min < self.a_max:
            raise ValueError(f"need a_min < a_max, got [{self.a_min}, {self.a_max}]")
        if self.bc not in _BCS:
            raise ValueError(f"bc must be one of {_BCS}, got {self.bc!r}")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (self.ny - 1)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def da(self) -> float:
        return (self.a_max - self.a_min) / self.na

    @cached_property
    def y(self) -> np.ndarray:
        """Spatial points, shape (ny,)."""
        return np.linspace(-self.L, self.L, self.ny)

    @cached_property
    def times(self) -> np.ndarray:
        """Time levels 0, dt, ..., T, shape (nt + 1,)."""
        return np.linspace(0.0, self.T, self.nt + 1)

    @cached_property
    def a_edges(self) -> np.ndarray:
        """Noise-cell edges, shape (na + 1,)."""
        return np.linspace(self.a_min, self.a_max, self.na + 1)

    @cached_property
    def a_mid(self) -> np.ndarray:
        """Noise-cell midpoints, shape (na,)."""
        return self.a_edges[:-1] + 0.5 * self.da

    @cached_property
    def trap_weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights on the spatial grid, shape (ny,)."""
        w = np.full(self.ny, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    def with_bc(self, bc: str) -> "Grid":
        return Grid(self.L, self.ny, self.T, self.nt,
                    self.a_min, self.a_max, self.na, bc)


@dataclass
class Field:
    """A spatial slice u_t(.) sampled on the grid."""

    values: np.ndarray
    grid: Grid
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.ny,):
            raise ValueError(
                f"field has {self.values.shape} values, grid has ny={self.grid.ny}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


class PathField:
    """Full time-indexed solution: nt + 1 spatial slices at times 0, dt, ..., T.

    Stored as a dense (nt + 1, ny) array; `slice_at(n)` returns a Field view.
    """

    def __init__(self, values: np.ndarray, grid: Grid, diagnostics=None):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.nt + 1, grid.ny):
            raise ValueError(
                f"path shape {values.shape} != (nt+1, ny) = {(grid.nt + 1, grid.ny)}")
        self.values = values
        self.grid = grid
        self.diagnostics = diagnostics

    def slice_at(self, n: int) -> Field:
        return Field(self.values[n], self.grid, t=self.grid.times[n])

    @property
    def fields(self):
        return [self.slice_at(n) for n in range(self.grid.nt + 1)]

    def terminal(self) -> Field:
        return self.slice_at(self.grid.nt)

    def __len__(self):
        return self.values.shape[0]


def heat_kernel(t: float, x) -> np.ndarray:
    """Gaussian heat kernel p_t(x) = exp(-x^2 / (2 t)) / sqrt(2 pi t).

    The fundamental solution of du/dt = (1/2) u''.  Requires t > 0.
    """
    if t <= 0:
        raise ValueError(f"heat_kernel requires t > 0, got t={t}")
    x = np.asarray(x, dtype=float)
    return np.exp(-(x * x) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)


def heat_flow_exact(u0: Field, t: float) -> Field:
    """Evolve a field by exact Gaussian convolution (trapezoidal quadrature).

    Serves as the mild-form reference oracle for `heat_step`: the
    convolution integral is truncated at the grid bounds, so fields are
    expected to be negligible near +-L relative to the target accuracy.
    """
    if t < 0:
        raise ValueError(f"heat_flow_exact requires t >= 0, got t={t}")
    if t == 0:
        return Field(u0.values.copy(), u0.grid, t=u0.t)
    g = u0.grid
    kernel = heat_kernel(t, g.y[:, None] - g.y[None, :])  # (target, source)
    out = kernel @ (g.trap_weights * u0.values)
    return Field(out, g, t=u0.t + t)


def heat_bands(grid: Grid, dt: float) -> np.ndarray:
    """Banded form of A = I - (dt/2) Lap for `scipy.linalg.solve_banded`.

    Lap is the (1, -2, 1)/dx^2 second-difference operator with the grid's
    boundary condition: mirror ghost points for "neumann" (which makes the
    implicit step conserve the trapezoidal integral exactly), identity
    rows at both ends for "dirichlet_pinned".
    """
    if dt <= 0:
        raise ValueError(f"heat step requires dt > 0, got {dt}")
    ny = grid.ny
    c = 0.5 * dt / grid.dx ** 2
    ab = np.zeros((3, ny))
    ab[0, 1:] = -c          # upper diagonal
    ab[1, :] = 1.0 + 2.0 * c
    ab[2, :-1] = -c         # lower diagonal
    if grid.bc == BC_NEUMANN:
        ab[0, 1] = -2.0 * c
        ab[2, -2] = -2.0 * c
    else:  # dirichlet_pinned: keep both endpoint values fixed
        ab[1, 0] = ab[1, -1] = 1.0
        ab[0, 1] = 0.0
        ab[2, -2] = 0.0
    return ab


def transpose_bands(ab: np.ndarray) -> np.ndarray:
    """Banded form of A^T given the banded form of tridiagonal A."""
    out = np.zeros_like(ab)
    out[1, :] = ab[1, :]
    out[0, 1:] = ab[2, :-1]
    out[2, :-1] = ab[0, 1:]
    return out


def solve_tridiag(ab: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve the banded tridiagonal system for one rhs vector or a stack.

    `rhs` may be (ny,) or (ny, k); the system is strictly diagonally
    dominant for every dt > 0, so the solve cannot break down.
    """
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def heat_step(u: Field, dt: float) -> Field:
    """One implicit (backward Euler) step of the drift (1/2) Lap.

    Solves (I - (dt/2) Lap) u_next = u.  Unconditionally stable, exact to
    linear-algebra precision, conserves the trapezoidal integral under
    "neumann" and satisfies the discrete maximum principle.
    """
    ab = heat_bands(u.grid, dt)
    out = solve_tridiag(ab, u.values)
    return Field(out, u.grid, t=u.t + dt)
