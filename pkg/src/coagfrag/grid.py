"""Uniform cell-centred grids on intervals and rectangles with Neumann walls.

A field is a plain ``ndarray`` whose trailing axes match ``grid.shape``;
any leading axes (typically the species index) are carried along, so the
same routines act on one concentration or on the whole state at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Grid:
    dim: int
    lengths: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        lengths = tuple(float(v) for v in _as_tuple(self.lengths))
        cells = tuple(int(v) for v in _as_tuple(self.cells))
        if len(lengths) != self.dim or len(cells) != self.dim:
            raise ValueError("lengths and cells need one entry per axis")
        if any(not v > 0 for v in lengths):
            raise ValueError("domain lengths must be positive")
        if any(v < 1 for v in cells):
            raise ValueError("cell counts must be positive")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "cells", cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def ncells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / N for L, N in zip(self.lengths, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @cached_property
    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinates along each axis."""
        return tuple((np.arange(N) + 0.5) * h for N, h in zip(self.cells, self.spacing))

    def mesh(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(*self.centers, indexing="ij")

    def to_dict(self) -> dict:
        return {"dim": self.dim, "lengths": list(self.lengths), "cells": list(self.cells)}


def _as_tuple(v) -> tuple:
    if isinstance(v, (list, tuple, np.ndarray)):
        return tuple(v)
    return (v,)


def _spatial_axes(f: np.ndarray, grid: Grid) -> tuple[int, ...]:
    if f.shape[f.ndim - grid.dim:] != grid.shape:
        raise ValueError(f"field shape {f.shape} does not end with grid shape {grid.shape}")
    return tuple(range(f.ndim - grid.dim, f.ndim))


def integrate(f: np.ndarray, grid: Grid):
    """Midpoint-rule integral over the domain (per leading index)."""
    f = np.asarray(f, dtype=float)
    return grid.cell_volume * np.sum(f, axis=_spatial_axes(f, grid))


def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Second-order 3-point / 5-point Laplacian with reflective ghost cells."""
    f = np.asarray(f, dtype=float)
    axes = _spatial_axes(f, grid)
    out = np.zeros_like(f)
    for ax, h in zip(axes, grid.spacing):
        if f.shape[ax] == 1:
            continue
        # ghost cells mirror the boundary value, which encodes a zero normal flux
        padded = np.concatenate(
            [np.take(f, [0], axis=ax), f, np.take(f, [-1], axis=ax)], axis=ax
        )
        n = f.shape[ax]
        lo = np.take(padded, np.arange(0, n), axis=ax)
        hi = np.take(padded, np.arange(2, n + 2), axis=ax)
        out += (lo - 2.0 * f + hi) / (h * h)
    return out


def neumann_eigenvalue(k: int, N: int, h: float) -> float:
    """Eigenvalue of the 1-D discrete Neumann Laplacian for ``cos(k pi x / L)``."""
    return -(2.0 / h**2) * (1.0 - np.cos(k * np.pi / N))


def _thomas_neumann(rhs: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Solve ``(I - r D2) x = rhs`` along the last axis, D2 the Neumann stencil.

    ``r`` broadcasts against ``rhs[..., 0]``. The matrix is a symmetric
    M-matrix with unit row sums, so the solve conserves sums and keeps
    nonnegative data nonnegative.
    """
    N = rhs.shape[-1]
    if N == 1:
        return rhs.copy()
    r = np.broadcast_to(np.asarray(r, dtype=float), rhs.shape[:-1])
    cp = np.empty(rhs.shape)
    dp = np.empty(rhs.shape)
    denom = 1.0 + r
    cp[..., 0] = -r / denom
    dp[..., 0] = rhs[..., 0] / denom
    for k in range(1, N):
        diag = 1.0 + (r if k == N - 1 else 2.0 * r)
        denom = diag + r * cp[..., k - 1]
        cp[..., k] = -r / denom
        dp[..., k] = (rhs[..., k] + r * dp[..., k - 1]) / denom
    x = np.empty(rhs.shape)
    x[..., N - 1] = dp[..., N - 1]
    for k in range(N - 2, -1, -1):
        x[..., k] = dp[..., k] - cp[..., k] * x[..., k + 1]
    return x


def diffuse(f: np.ndarray, grid: Grid, d, dt: float) -> np.ndarray:
    """Backward-Euler diffusion step ``(I - dt d Lap_h) g = f``.

    ``d`` is a scalar or an array matching the leading (species) axes of
    ``f``. In 2-D the implicit operator is factored into an x-solve followed
    by a y-solve; each factor conserves the cell sum and positivity.
    """
    f = np.asarray(f, dtype=float)
    axes = _spatial_axes(f, grid)
    if not np.all(np.isfinite(f)):
        raise ValueError("diffuse: non-finite input field")
    if not dt > 0:
        raise ValueError(f"diffuse: dt must be positive, got {dt}")
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise ValueError("diffuse: diffusion coefficients must be positive")
    lead = f.ndim - grid.dim
    if d.ndim > lead:
        raise ValueError("diffusion coefficients have too many axes for this field")
    d = d.reshape(d.shape + (1,) * (lead - d.ndim)) if d.ndim else d

    g = f
    for ax, h in zip(axes, grid.spacing):
        if f.shape[ax] == 1:
            continue
        moved = np.moveaxis(g, ax, -1)
        # r must broadcast over the other spatial axis as well
        r = dt * d / (h * h)
        r = np.reshape(r, np.shape(r) + (1,) * (moved.ndim - 1 - np.ndim(r)))
        g = np.moveaxis(_thomas_neumann(moved, r), -1, ax)
    return np.array(g, copy=True) if g is f else g


def cosine_mode(grid: Grid, modes: Sequence[int]) -> np.ndarray:
    """Product of ``cos(k_a pi x_a / L_a)`` sampled at cell centres."""
    out = np.ones(grid.shape)
    for ax, (k, x, L) in enumerate(zip(modes, grid.centers, grid.lengths)):
        shape = [1] * grid.dim
        shape[ax] = -1
        out = out * np.cos(k * np.pi * x / L).reshape(shape)
    return out
