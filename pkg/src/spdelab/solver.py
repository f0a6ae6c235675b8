"""Time stepping for the stochastic, controlled, and deterministic equations.

One generalized equation is stepped:

    u <- heat_step( u + theta * stochastic_increment + control_drift * dt )

which covers the noisy equation (theta = sqrt(epsilon), no control), the
controlled deterministic equation (theta = 0, control given), and the
deterministic limit (both absent).  Lie splitting with the implicit heat
step is unconditionally stable and has a clean discrete adjoint.

For the built-in monotone models every slice is passed through the
isotonic projection, which repairs the occasional discretization-induced
monotonicity violation without touching the coefficient structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from . import models
from .grid import Field, Grid, PathField, heat_bands, solve_tridiag, transpose_bands
from .noise import NoiseStream


class BlowUpError(RuntimeError):
    """The solution became non-finite."""


class NoiseWindowError(RuntimeError):
    """The solution left the covered noise window (sbm only)."""


@dataclass
class SolveDiagnostics:
    """Health counters accumulated over one solve."""

    projection_l1: float = 0.0      # discrete L1 of all isotonic corrections
    projection_linf: float = 0.0
    projected_steps: int = 0


def _pava(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators: L2-nearest nondecreasing sequence."""
    means = []
    counts = []
    for v in y:
        m, c = float(v), 1
        while means and means[-1] > m:
            pm, pc = means.pop(), counts.pop()
            m = (pm * pc + m * c) / (pc + c)
            c += pc
        means.append(m)
        counts.append(c)
    out = np.empty(len(y))
    pos = 0
    for m, c in zip(means, counts):
        out[pos:pos + c] = m
        pos += c
    return out


def monotone_project(u: Field, kind: str, return_correction: bool = False):
    """Project a slice onto the admissible set of its model kind.

    sbm: nondecreasing (isotonic L2 projection).  fvp: nondecreasing,
    clamped to [0, 1], endpoints re-pinned to 0 and 1.  Other kinds pass
    through unchanged.  Already-admissible input is returned as is, so the
    projection is an exact fixed point there.
    """
    if kind not in (models.SBM, models.FVP):
        return (u, 0.0) if return_correction else u
    values = u.values
    out = _project_rows(values[None, :], kind)
    if out is None:
        return (u, 0.0) if return_correction else u
    proj = Field(out[0], u.grid, t=u.t)
    if return_correction:
        return proj, float(np.sum(np.abs(out[0] - values)) * u.grid.dx)
    return proj


def _project_rows(u: np.ndarray, kind: str) -> Optional[np.ndarray]:
    """Project each row of (B, ny); returns None when nothing changed."""
    bad = np.any(np.diff(u, axis=1) < 0.0, axis=1)
    if kind == models.FVP:
        bad |= (np.min(u, axis=1) < 0.0) | (np.max(u, axis=1) > 1.0)
        bad |= (u[:, 0] != 0.0) | (u[:, -1] != 1.0)
    if not np.any(bad):
        return None
    out = u.copy()
    for r in np.flatnonzero(bad):
        row = _pava(out[r])
        if kind == models.FVP:
            np.clip(row, 0.0, 1.0, out=row)
            row[0], row[-1] = 0.0, 1.0
        out[r] = row
    return out


def _indicator_increments(kind: str, grid: Grid, u: np.ndarray,
                          xi: np.ndarray) -> np.ndarray:
    """sqrt(dt da) sum_k G(a_k, ., u) xi_k for the indicator models.

    Uses per-row prefix sums of xi instead of a dense coefficient matrix;
    agrees with the direct sum up to summation order.  u: (B, ny),
    xi: (B, na) -> (B, ny).
    """
    scale = np.sqrt(grid.dt * grid.da)
    cums = np.zeros((xi.shape[0], grid.na + 1))
    np.cumsum(xi, axis=1, out=cums[:, 1:])
    mid = grid.a_mid
    if kind == models.FVP:
        idx = np.searchsorted(mid, u, side="left")
        c_at_u = np.take_along_axis(cums, idx, axis=1)
        total = cums[:, -1][:, None]
        return scale * (c_at_u - u * total)
    # sbm: sum over midpoints strictly between 0 and u, signed
    i0_left = int(np.searchsorted(mid, 0.0, side="left"))
    i0_right = int(np.searchsorted(mid, 0.0, side="right"))
    c_left = np.take_along_axis(cums, np.searchsorted(mid, u, side="left"), axis=1)
    c_right = np.take_along_axis(cums, np.searchsorted(mid, u, side="right"), axis=1)
    pos = c_left - cums[:, i0_right][:, None]
    neg = cums[:, i0_left][:, None] - c_right
    return scale * np.where(u > 0.0, pos, np.where(u < 0.0, -neg, 0.0))


def _noise_increments(model, grid: Grid, u: np.ndarray, xi: np.ndarray) -> np.ndarray:
    if model.kind in (models.SBM, models.FVP):
        return _indicator_increments(model.kind, grid, u, xi)
    coeff = models.g_eval(model, grid.a_mid[None, None, :],
                          grid.y[None, :, None], u[:, :, None])
    return np.sqrt(grid.dt * grid.da) * np.einsum("bya,ba->by", coeff, xi)


def _control_drift(model, grid: Grid, u: np.ndarray, h_row: np.ndarray) -> np.ndarray:
    """Drift integral of G against one step of the control; (B, ny)."""
    out = np.empty_like(u)
    for b in range(u.shape[0]):
        cells = models.coefficient_cell_integrals(model, u[b], grid)
        out[b] = cells @ h_row
    return out


@dataclass
class _Run:
    """Shared stepping loop over a (B, ny) state block."""

    model: object
    grid: Grid
    theta: float
    control_values: Optional[np.ndarray]
    project: bool
    diagnostics: SolveDiagnostics = dc_field(default_factory=SolveDiagnostics)

    def __post_init__(self):
        g = self.grid
        self.ab = heat_bands(g, g.dt)
        self.check_window = self.model.kind == models.SBM
        self.kind = self.model.kind

    def step(self, u: np.ndarray, n: int, xi: Optional[np.ndarray]) -> np.ndarray:
        g = self.grid
        v = u
        if self.theta > 0.0:
            v = v + self.theta * _noise_increments(self.model, g, u, xi)
        if self.control_values is not None:
            v = v + g.dt * _control_drift(self.model, g, u, self.control_values[n])
        v = solve_tridiag(self.ab, v.T).T
        if self.project and self.kind in (models.SBM, models.FVP):
            proj = _project_rows(v, self.kind)
            if proj is not None:
                d = self.diagnostics
                d.projection_l1 += float(np.sum(np.abs(proj - v)) * g.dx)
                d.projection_linf = max(d.projection_linf,
                                        float(np.max(np.abs(proj - v))))
                d.projected_steps += 1
                v = proj
        if not np.all(np.isfinite(v)):
            raise BlowUpError(f"solution became non-finite at step {n + 1}")
        if self.check_window:
            lo, hi = float(np.min(v)), float(np.max(v))
            if lo < g.a_min or hi > g.a_max:
                raise NoiseWindowError(
                    f"solution range [{lo:.4g}, {hi:.4g}] left the noise window "
                    f"[{g.a_min:.4g}, {g.a_max:.4g}] at step {n + 1}")
        return v


def _validate_setup(model, grid: Grid, theta: float, control) -> None:
    if theta < 0:
        raise ValueError(f"theta must be >= 0, got {theta}")
    if model.kind == models.FVP and (grid.a_min, grid.a_max) != (0.0, 1.0):
        raise ValueError("fvp solves require the grid noise window (0, 1)")
    if theta > 0 and grid.dt > grid.dx * (1 + 1e-12):
        raise ValueError(
            f"noise quality gate dt <= dx violated: dt={grid.dt:.4g} > dx={grid.dx:.4g}")
    if control is not None and control.values.shape != (grid.nt, grid.na):
        raise ValueError(
            f"control shape {control.values.shape} != (nt, na) = {(grid.nt, grid.na)}")


def solve_spde(model, theta: float, control, stream: Optional[NoiseStream],
               grid: Grid, *, project: bool = True) -> PathField:
    """Step the generalized equation; returns the full nt + 1 slice path.

    theta scales the stochastic term (sqrt(epsilon) for the noisy
    equation); `control` (or None) adds the deterministic control drift.
    With theta = 0 and no control this is exactly the deterministic heat
    evolution of the initial datum.
    """
    _validate_setup(model, grid, theta, control)
    if theta > 0 and stream is None:
        raise ValueError("theta > 0 requires a noise stream")
    f0 = models.initial_field(model, grid)
    noise = stream.path_normals(grid.nt, grid.na) if theta > 0 else None
    run = _Run(model, grid, theta,
               control.values if control is not None else None, project)
    path = np.empty((grid.nt + 1, grid.ny))
    u = f0.values[None, :].copy()
    path[0] = u[0]
    for n in range(grid.nt):
        xi = noise[n][None, :] if noise is not None else None
        u = run.step(u, n, xi)
        path[n + 1] = u[0]
    return PathField(path, grid, diagnostics=run.diagnostics)


def deterministic_limit(model, grid: Grid) -> PathField:
    """Pure heat evolution of the initial datum (the small-noise center)."""
    return solve_spde(model, 0.0, None, None, grid)


@dataclass
class BatchResult:
    terminal: np.ndarray                      # (B, ny)
    sup_weighted_dev: Optional[np.ndarray]    # (B,) when a reference was given
    diagnostics: SolveDiagnostics
    snapshots: Optional[np.ndarray] = None    # (B, len(snapshot_steps), ny)


def solve_spde_batch(model, theta: float, grid: Grid, root_seed: int,
                     indices, *, control=None, project: bool = True,
                     reference: Optional[PathField] = None,
                     beta: float = 1.0, snapshot_steps=None) -> BatchResult:
    """Run many realizations at once; row r reproduces
    solve_spde(..., NoiseStream(root_seed, indices[r]), ...) bit for bit.

    With `reference` given, also tracks per realization the path deviation
    sup over (t, y) of exp(-beta |y|) |u - reference|.  `snapshot_steps`
    (step indices into 0..nt) requests intermediate slices.
    """
    _validate_setup(model, grid, theta, control)
    indices = np.asarray(list(indices), dtype=np.int64)
    B = len(indices)
    f0 = models.initial_field(model, grid)
    noise = None
    if theta > 0:
        noise = np.empty((B, grid.nt, grid.na))
        for r, idx in enumerate(indices):
            noise[r] = NoiseStream(root_seed, int(idx)).path_normals(grid.nt, grid.na)
    run = _Run(model, grid, theta,
               control.values if control is not None else None, project)
    u = np.repeat(f0.values[None, :], B, axis=0)
    dev = None
    weight = np.exp(-beta * np.abs(grid.y)) if reference is not None else None
    if reference is not None:
        dev = np.max(weight[None, :] * np.abs(u - reference.values[0][None, :]),
                     axis=1)
    snaps = None
    snap_lookup = {}
    if snapshot_steps is not None:
        snapshot_steps = [int(s) for s in snapshot_steps]
        snaps = np.empty((B, len(snapshot_steps), grid.ny))
        snap_lookup = {s: i for i, s in enumerate(snapshot_steps)}
        if 0 in snap_lookup:
            snaps[:, snap_lookup[0], :] = u
    for n in range(grid.nt):
        xi = noise[:, n, :] if noise is not None else None
        u = run.step(u, n, xi)
        if reference is not None:
            step_dev = np.max(
                weight[None, :] * np.abs(u - reference.values[n + 1][None, :]), axis=1)
            np.maximum(dev, step_dev, out=dev)
        if n + 1 in snap_lookup:
            snaps[:, snap_lookup[n + 1], :] = u
    return BatchResult(terminal=u, sup_weighted_dev=dev, diagnostics=run.diagnostics,
                       snapshots=snaps)


def linearized_variance(model, grid: Grid, y_index: int,
                        t_index: Optional[int] = None) -> float:
    """Leading-order variance of u_t(y) per unit epsilon.

    First-order expansion of the scheme around the deterministic path:
    the noise injected at step n is propagated to the target time by the
    remaining implicit heat solves, so the variance is the sum over steps
    and noise cells of the squared propagated coefficient.  Computed with
    one backward (adjoint) sweep; independent of any sampled realization.
    """
    t_index = grid.nt if t_index is None else t_index
    path0 = deterministic_limit(model, grid)
    ab_t = transpose_bands(heat_bands(grid, grid.dt))
    adj = np.zeros(grid.ny)
    adj[y_index] = 1.0
    var = 0.0
    for n in range(t_index - 1, -1, -1):
        adj = solve_tridiag(ab_t, adj)
        coeff = models.g_eval(model, grid.a_mid[None, :], grid.y[:, None],
                              path0.values[n][:, None])
        proj = adj @ coeff
        var += grid.dt * grid.da * float(np.dot(proj, proj))
    return var
