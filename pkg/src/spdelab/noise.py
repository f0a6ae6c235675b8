"""Discretized space-time white noise with addressable, reproducible streams.

A `NoiseStream` is a pure descriptor (root seed + realization index).  The
per-step standard normals are produced by a counter-based generator
(Philox) through the fixed-width inverse-CDF map, so that

* the same (root_seed, realization_index, step) always yields the same
  values, on any platform, without storing anything, and
* querying step-by-step is bit-identical to generating the whole
  (nt, na) noise array in one shot.

Realization keys are derived from (root_seed, realization_index) with the
SplitMix64 mixing function, so distinct indices give statistically
independent streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .grid import Field, Grid
from . import models

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    """One round of the SplitMix64 mixer (public-domain constants)."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _fold_tag(tag: str) -> int:
    """Deterministic 64-bit digest of a short ASCII tag."""
    h = 0
    for b in tag.encode("utf-8"):
        h = _splitmix64(h ^ b)
    return h


def stream_key(root_seed: int, realization_index: int, tag: str = "") -> int:
    """128-bit Philox key for one realization (and optional purpose tag)."""
    lo = _splitmix64((root_seed & _MASK64) ^ _splitmix64(realization_index & _MASK64))
    hi = _splitmix64(lo ^ _GOLDEN)
    if tag:
        t = _fold_tag(tag)
        lo = _splitmix64(lo ^ t)
        hi = _splitmix64(hi ^ _splitmix64(t))
    return lo | (hi << 64)


def _normals_from_raw(raw: np.ndarray) -> np.ndarray:
    # 53-bit uniform strictly inside (0, 1), then the inverse normal CDF.
    u = (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -53 + 2.0 ** -54
    return ndtri(u)


@dataclass(frozen=True)
class NoiseStream:
    """Descriptor of one noise realization; sampling is a pure function."""

    root_seed: int
    realization_index: int = 0

    @property
    def key(self) -> int:
        return stream_key(self.root_seed, self.realization_index)

    def step_normals(self, step: int, na: int) -> np.ndarray:
        """Standard normals for one time step, one per noise cell."""
        if step < 0:
            raise ValueError(f"step must be >= 0, got {step}")
        blocks = (na + 3) // 4
        bg = np.random.Philox(key=self.key, counter=step * blocks)
        raw = bg.random_raw(4 * blocks)[:na]
        return _normals_from_raw(raw)

    def path_normals(self, nt: int, na: int) -> np.ndarray:
        """All (nt, na) step normals in one call; row n equals step_normals(n, na)."""
        blocks = (na + 3) // 4
        bg = np.random.Philox(key=self.key)
        raw = bg.random_raw(nt * 4 * blocks).reshape(nt, 4 * blocks)[:, :na]
        return _normals_from_raw(raw)

    def generator(self, tag: str) -> np.random.Generator:
        """Sequential generator for simulations with data-dependent draw counts.

        Tagged so it is independent of the step-addressed field noise of
        the same realization.
        """
        return np.random.Generator(
            np.random.Philox(key=stream_key(self.root_seed, self.realization_index, tag)))


def sample_step_noise(stream: NoiseStream, step: int, na: int) -> np.ndarray:
    """I.i.d. standard normals for (stream, step); re-querying is identical."""
    return stream.step_normals(step, na)


def stochastic_increment(model: "models.ModelSpec", u: Field, xi: np.ndarray,
                         dt: float, da: float) -> Field:
    """One-step discrete stochastic integral of the noise coefficient.

    increment(y) = sqrt(dt * da) * sum_k G(a_k, y, u(y)) xi_k with a_k the
    noise-cell midpoints of the field's grid.  The same xi drives every
    spatial point, which reproduces the continuum covariance: conditional
    on u, Cov(increment(y1), increment(y2)) equals dt times the
    cell-midpoint quadrature of the coefficient cross-product.  The
    noise-intensity factor (sqrt(epsilon) or theta) is applied by the
    caller.
    """
    g = u.grid
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (g.na,):
        raise ValueError(f"xi has shape {xi.shape}, grid has na={g.na}")
    coeff = models.g_eval(model, g.a_mid[None, :], g.y[:, None], u.values[:, None])
    out = np.sqrt(dt * da) * (coeff @ xi)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise ArithmeticError(
            f"non-finite stochastic increment at y={g.y[bad]:.6g} (index {bad})")
    return Field(out, g, t=u.t)


def brownian_basis(stream: NoiseStream, j: int, grid: Grid) -> np.ndarray:
    """Path of the j-th basis Brownian motion at the nt + 1 grid times.

    With the normalized-indicator basis on noise cells, integrating the
    white noise against basis element j gives B^j_t = cumulative sum of
    sqrt(dt) * xi_j over steps; distinct j are independent.
    """
    if not 0 <= j < grid.na:
        raise ValueError(f"cell index {j} outside [0, {grid.na})")
    xi = stream.path_normals(grid.nt, grid.na)[:, j]
    out = np.empty(grid.nt + 1)
    out[0] = 0.0
    np.cumsum(np.sqrt(grid.dt) * xi, out=out[1:])
    return out
