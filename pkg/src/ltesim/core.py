"""Domains, space-time grids and the grid step functions."""

import math
from dataclasses import dataclass

import numpy as np

from .rng import RngStream, derive_stream

__all__ = ["Domain", "Grid", "build_grid", "kappa", "ell", "RngStream",
           "derive_stream", "ulp_slack"]


def ulp_slack(a, b, ulps=64):
    """Floating-noise allowance around ``[a, b]``."""
    return ulps * np.spacing(max(abs(a), abs(b), 1.0))


@dataclass(frozen=True)
class Domain:
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"empty domain [{self.a}, {self.b}]")

    def contains(self, values, slack=0.0):
        v = np.asarray(values)
        return bool(np.all((v >= self.a - slack) & (v <= self.b + slack)))


@dataclass(frozen=True)
class Grid:
    N: int
    M: int
    T: float

    @property
    def dx(self):
        return 1.0 / self.N

    @property
    def dt(self):
        return self.T / self.M

    def x(self, n):
        return n / self.N

    def t(self, m):
        return m * self.T / self.M

    @property
    def xs(self):
        return np.arange(self.N + 1) / self.N

    @property
    def ts(self):
        return np.arange(self.M + 1) * self.T / self.M

    @property
    def interior(self):
        """Interior grid points x(1)..x(N-1)."""
        return np.arange(1, self.N) / self.N


def build_grid(N, M, T):
    if int(N) != N or N < 2:
        raise ValueError(f"need N >= 2 for an interior point, got {N}")
    if int(M) != M or M < 1:
        raise ValueError(f"need M >= 1, got {M}")
    if not (T > 0 and math.isfinite(T)):
        raise ValueError(f"horizon must be positive, got {T}")
    return Grid(int(N), int(M), float(T))


def kappa(grid, x):
    """Left space-grid point of the cell containing ``x``; ``kappa(1) = 1``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    if x == 1.0:
        return 1.0
    n = math.floor(x * grid.N)
    # x*N can round up across a cell boundary
    if grid.x(n) > x:
        n -= 1
    elif n + 1 <= grid.N and grid.x(n + 1) <= x:
        n += 1
    return grid.x(n)


def ell(grid, t):
    """Left time-grid point of the cell containing ``t``; ``ell(T) = T``."""
    if not 0.0 <= t <= grid.T:
        raise ValueError(f"t={t} outside [0, {grid.T}]")
    if t == grid.T:
        return grid.T
    m = math.floor(t / grid.dt)
    if grid.t(m) > t:
        m -= 1
    elif m + 1 <= grid.M and grid.t(m + 1) <= t:
        m += 1
    return grid.t(m)
