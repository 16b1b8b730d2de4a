"""Time integrators on one space-time grid: LTE and the EM/SEM/EXP baselines.

States are ``(N - 1)``-vectors of interior values in working coordinates.
Batched steppers advance a ``(B, N - 1)`` block in place; row ``b`` carries
sample ``sample_ids[b]`` and every component draws from its own
``(sample_id, m, n)`` substream, so a block can be split or reordered freely.
"""

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import Grid, RngStream
from .exactsim import (DEFAULT_MAX_TRIES, DEFAULT_NU, RetryCapExceeded, exact_step_grid,
                       lamperti_bounds)
from .rng import normals_grid
from .semigroup import (FAST_TRANSFORM_N, DomainViolation, SemigroupApplicator,
                        apply_scaled_laplacian, applicator, clip_to_domain)

SCHEMES = ("lte", "em", "sem", "exp")


def check_scheme(name):
    key = str(name).lower()
    if key not in SCHEMES:
        raise ValueError(f"unknown scheme {name!r}; expected one of {SCHEMES}")
    return key


def stream_label(*parts):
    """Stable 64-bit stream id for a tuple of labels (not Python's salted ``hash``)."""
    text = "/".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def initial_state(model, grid):
    """Initial profile at the interior nodes, in working coordinates."""
    # kappa^N(x_n) = x_n at grid nodes
    u0 = model.to_working(model.initial_profile(grid.interior))
    return np.asarray(u0, dtype=float)


# ---------------------------------------------------------------------------
# tridiagonal solves


@njit(cache=True)
def thomas_solve(lower, diag, upper, rhs):
    """Solve a tridiagonal system; ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = diag.size
    c = np.empty(n)
    d = np.empty(n)
    beta = diag[0]
    if beta == 0.0:
        raise ZeroDivisionError("zero pivot in tridiagonal solve")
    c[0] = upper[0] / beta if n > 1 else 0.0
    d[0] = rhs[0] / beta
    for i in range(1, n):
        beta = diag[i] - lower[i] * c[i - 1]
        if beta == 0.0:
            raise ZeroDivisionError("zero pivot in tridiagonal solve")
        c[i] = upper[i] / beta if i < n - 1 else 0.0
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / beta
    x = np.empty(n)
    x[n - 1] = d[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


@njit(cache=True)
def _implicit_heat_factors(r, n):
    """Forward-sweep factors of ``tridiag(-r, 1 + 2r, -r)``."""
    c = np.empty(n)
    inv = np.empty(n)
    beta = 1.0 + 2.0 * r
    inv[0] = 1.0 / beta
    c[0] = -r * inv[0]
    for i in range(1, n):
        beta = 1.0 + 2.0 * r + r * c[i - 1]
        inv[i] = 1.0 / beta
        c[i] = -r * inv[i]
    return c, inv


@njit(cache=True, nogil=True)
def _implicit_heat_solve(r, c, inv, rhs):
    """In-place batched solve of ``(I - r D) u = rhs`` along the last axis."""
    n = rhs.shape[1]
    for b in range(rhs.shape[0]):
        row = rhs[b]
        row[0] = row[0] * inv[0]
        for i in range(1, n):
            row[i] = (row[i] + r * row[i - 1]) * inv[i]
        for i in range(n - 2, -1, -1):
            row[i] -= c[i] * row[i + 1]


@njit(cache=True, nogil=True)
def _rowwise_matvec(St, U):
    """``U @ St`` with a fixed summation order per row (BLAS varies with batch size)."""
    n = St.shape[0]
    out = np.zeros_like(U)
    for b in range(U.shape[0]):
        row = out[b]
        for j in range(n):
            u = U[b, j]
            for i in range(n):
                row[i] += u * St[j, i]
    return out


# ---------------------------------------------------------------------------
# batched steppers


class Stepper:
    """Advance ``(B, N - 1)`` blocks one time step in place.

    ``lambda_scale`` multiplies ``g``; ``key`` is the Philox key of the run.
    Baselines never raise on blow-up (the boundary table counts it), while
    LTE raises on a retry-cap hit or a domain violation.
    """

    def __init__(self, scheme, model, grid, lambda_scale=1.0, key=(0, 0), nu=DEFAULT_NU,
                 max_tries=DEFAULT_MAX_TRIES):
        self.scheme = check_scheme(scheme)
        if lambda_scale < 0:
            raise ValueError(f"lambda must be >= 0, got {lambda_scale}")
        if not 0.0 < nu < 1.0:
            raise ValueError(f"nu must lie in (0, 1), got {nu}")
        self.base_model = model
        self.model = model.with_noise_scale(lambda_scale)
        self.grid = grid
        self.lambda_scale = float(lambda_scale)
        self.key = (np.uint64(key[0]), np.uint64(key[1]))
        self.nu = float(nu)
        self.max_tries = int(max_tries)
        N, dt = grid.N, grid.dt
        self.sqrt_n = math.sqrt(N)
        self.app = applicator(N)
        if N <= FAST_TRANSFORM_N:
            self._heat = np.ascontiguousarray(self.app.matrix(dt).T)
        else:
            self._heat = None
        self.mu = self.sqrt_n * self.model.noise_shape_constant
        self.bounds = lamperti_bounds(self.model.rho0, self.model.rho1, self.mu) \
            if self.mu > 0 else (0.0, 0.0)
        if self.scheme == "sem":
            self._r = dt * N * N
            self._c, self._inv = _implicit_heat_factors(self._r, N - 1)

    def heat(self, U):
        """Exact heat flow over one ``dt`` applied to every row."""
        if self._heat is not None:
            return _rowwise_matvec(self._heat, np.ascontiguousarray(U, dtype=float))
        return self.app.apply(self.grid.dt, U)

    def noise(self, m, sample_ids, shape):
        """``dW`` with ``N(0, dt)`` entries from substreams ``(sample, m, n)``."""
        Z = np.empty(shape)
        normals_grid(self.key[0], self.key[1], sample_ids, m, Z)
        Z *= math.sqrt(self.grid.dt)
        return Z

    def _explicit_increment(self, U, m, sample_ids):
        dt = self.grid.dt
        dW = self.noise(m, sample_ids, U.shape)
        return dt * self.model.f(U) + self.sqrt_n * self.model.g(U) * dW

    def step(self, U, m, sample_ids):
        """Return the state after step ``m -> m + 1`` (``U`` may be reused)."""
        sample_ids = np.asarray(sample_ids, dtype=np.uint64)
        if self.scheme == "lte":
            return self._lte(U, m, sample_ids)
        with np.errstate(all="ignore"):
            if self.scheme == "em":
                inc = self._explicit_increment(U, m, sample_ids)
                return U + self.grid.dt * apply_scaled_laplacian(U, self.grid.N) + inc
            if self.scheme == "sem":
                rhs = U + self._explicit_increment(U, m, sample_ids)
                _implicit_heat_solve(self._r, self._c, self._inv, rhs)
                return rhs
            return self.heat(U + self._explicit_increment(U, m, sample_ids))

    def _lte(self, U, m, sample_ids):
        model = self.model
        if self.mu == 0.0:
            V = model.flow(U, self.grid.dt)
        else:
            V = np.array(U, dtype=float, order="C", copy=True)
            k1, k2 = self.bounds
            fails = exact_step_grid(V, self.key[0], self.key[1], sample_ids, int(m), self.mu,
                                    self.grid.dt, model.rho0, model.rho1, k1, k2, self.nu,
                                    self.max_tries)
            if fails:
                b, j = np.argwhere(np.isnan(V))[0]
                raise RetryCapExceeded(
                    f"exact step hit the retry cap at sample {int(sample_ids[b])}, "
                    f"m={m}, n={j + 1}")
        V = self.heat(V)
        try:
            return clip_to_domain(V, model.domain)
        except DomainViolation as exc:
            raise DomainViolation(f"step m={m}: {exc}") from None


# ---------------------------------------------------------------------------
# single-step API


def _as_state(state, grid):
    u = np.array(state, dtype=float)
    if u.shape != (grid.N - 1,):
        raise ValueError(f"state must have length {grid.N - 1}, got shape {u.shape}")
    return u


def _single(scheme, model, grid, state, rng, m, sample_id, **kw):
    u = _as_state(state, grid)
    if np.isnan(u).any():
        raise ValueError(f"NaN in state before step {m}")
    stepper = Stepper(scheme, model, grid, 1.0, rng.key, **kw)
    out = stepper.step(u[None, :], m, np.array([sample_id], dtype=np.uint64))[0]
    if np.isnan(out).any():
        n = int(np.flatnonzero(np.isnan(out))[0]) + 1
        raise FloatingPointError(f"{scheme} produced NaN at step m={m}, n={n}")
    return out


def lte_step(model, grid, state, applicator_, rng, m=0, sample_id=0, nu=DEFAULT_NU):
    """Exact reaction-noise substep with ``kappa = sqrt(N)``, then the heat semigroup."""
    if applicator_ is not None and applicator_.N != grid.N:
        raise ValueError("applicator does not match the grid")
    u = _as_state(state, grid)
    if not model.domain.contains(u):
        raise ValueError("LTE state must lie in the model domain")
    return _single("lte", model, grid, u, rng, m, sample_id, nu=nu)


def em_step(model, grid, state, rng, m=0, sample_id=0):
    return _single("em", model, grid, state, rng, m, sample_id)


def sem_step(model, grid, state, rng, m=0, sample_id=0):
    """Implicit diffusion, explicit drift and noise, both evaluated at the current iterate."""
    return _single("sem", model, grid, state, rng, m, sample_id)


def exp_step(model, grid, state, applicator_, rng, m=0, sample_id=0):
    if applicator_ is not None and applicator_.N != grid.N:
        raise ValueError("applicator does not match the grid")
    return _single("exp", model, grid, state, rng, m, sample_id)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    grid: Grid
    states: np.ndarray
    metadata: dict = field(default_factory=dict)

    def original(self, model):
        """States mapped back to the model's original coordinates."""
        return model.from_working(self.states)


def simulate_path(scheme, model, grid, lambda_scale, seed, sample_id, nu=DEFAULT_NU):
    """One full trajectory; ``states[m]`` is the interior state at time ``t_m``."""
    scheme = check_scheme(scheme)
    key = (seed, stream_label("path", scheme))
    states = np.empty((grid.M + 1, grid.N - 1))
    states[0] = initial_state(model, grid)
    stepper = Stepper(scheme, model, grid, lambda_scale, key, nu=nu) if grid.M else None
    sid = np.array([sample_id], dtype=np.uint64)
    U = states[0][None, :]
    for m in range(grid.M):
        U = stepper.step(U, m, sid)
        if np.isnan(U).any():
            n = int(np.flatnonzero(np.isnan(U[0]))[0]) + 1
            raise FloatingPointError(f"{scheme} produced NaN at step m={m}, n={n}")
        states[m + 1] = U[0]
    meta = {"scheme": scheme, "model": model.name, "lambda": lambda_scale, "seed": seed,
            "sample_id": sample_id}
    return Trajectory(grid, states, meta)


__all__ = ["SCHEMES", "Stepper", "Trajectory", "check_scheme", "em_step", "exp_step",
           "initial_state", "lte_step", "sem_step", "simulate_path", "stream_label",
           "thomas_solve", "SemigroupApplicator", "RngStream"]
