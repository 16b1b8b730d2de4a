"""Exact-in-law sampling of one step of a bounded scalar SDE.

The SDE ``dX = f(X) dt + mu (1 - X^2) dB`` on ``(-1, 1)`` with
``f(x) = (1 - x^2) (rho0 + rho1 x)`` is handled in three moves:

* time change ``t -> t / mu^2`` so the noise is ``(1 - X^2) dB`` and the
  horizon becomes ``mu^2 dt``;
* Lamperti map ``w = atanh(x) - atanh(x0)``, giving unit additive noise and
  drift ``alpha(w) = beta tanh(w + s) + delta`` with ``s = atanh(x0)``,
  ``beta = 1 + rho1 / mu^2``, ``delta = rho0 / mu^2``;
* rejection on paths: the endpoint is drawn from
  ``h(w) ~ exp(A(w) - w^2 / 2T)`` and the Brownian-bridge proposal is kept iff
  no point of a unit-rate Poisson process on ``[0, T] x [0, k2 - k1]`` falls
  below the graph of ``phi = alpha'/2 + alpha^2/2 - k1``.

All randomness is drawn from the Philox state arrays of :mod:`ltesim.rng`.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .rng import STATE_SIZE, next_normal, next_poisson, next_uniform, reset_substream

DEFAULT_NU = 0.5
DEFAULT_MAX_TRIES = 1_000_000
_LOG2 = math.log(2.0)


class RetryCapExceeded(RuntimeError):
    """Rejection ran past its retry cap: the bound ``K`` or ``phi`` is wrong."""


def time_changed_horizon(kappa, dt):
    """Horizon ``kappa^2 dt`` of the unit-noise problem equivalent to ``dt``."""
    if kappa <= 0 or dt <= 0:
        raise ValueError("kappa and dt must be positive")
    return kappa * kappa * dt


def lamperti_bounds(rho0, rho1, mu):
    """``(k1, k2)`` with ``k1 <= alpha'/2 + alpha^2/2 <= k2`` on the real line.

    Uses ``0 <= alpha' <= beta`` and ``alpha^2 <= (beta + |delta|)^2``.
    """
    beta = 1.0 + rho1 / (mu * mu)
    delta = rho0 / (mu * mu)
    return 0.0, 0.5 * beta + 0.5 * (beta + abs(delta)) ** 2


@dataclass(frozen=True)
class LampertiMachine:
    """Lamperti data of the time-changed SDE started at ``x0`` in ``(-1, 1)``.

    ``mu`` is the effective noise multiplier (the constant in front of
    ``1 - x^2``); ``rho0 + rho1 x`` is the drift divided by ``1 - x^2``.
    """

    x0: float
    mu: float
    rho0: float
    rho1: float
    k1: float = field(default=None)
    k2: float = field(default=None)

    def __post_init__(self):
        if not -1.0 < self.x0 < 1.0:
            raise ValueError(f"base point {self.x0} must be interior")
        if not self.mu > 0:
            raise ValueError(f"noise multiplier must be positive, got {self.mu}")
        if self.k1 is None or self.k2 is None:
            k1, k2 = lamperti_bounds(self.rho0, self.rho1, self.mu)
            object.__setattr__(self, "k1", k1)
            object.__setattr__(self, "k2", k2)

    @property
    def beta(self):
        return 1.0 + self.rho1 / self.mu ** 2

    @property
    def delta(self):
        return self.rho0 / self.mu ** 2

    @property
    def tilt(self):
        """Exponent ``beta - 1`` separating the target from the proposal."""
        return self.rho1 / self.mu ** 2

    @property
    def shift(self):
        return float(np.arctanh(self.x0))

    def forward(self, x):
        return np.arctanh(x) - self.shift

    def inverse(self, w):
        return np.tanh(np.asarray(w) + self.shift)

    def alpha(self, w):
        return self.beta * np.tanh(np.asarray(w) + self.shift) + self.delta

    def alpha_prime(self, w):
        return self.beta / np.cosh(np.asarray(w) + self.shift) ** 2

    def phi(self, w):
        return 0.5 * self.alpha_prime(w) + 0.5 * self.alpha(w) ** 2 - self.k1

    def log_mix(self, w):
        """``log((1 + x0) e^w + (1 - x0) e^-w)``."""
        w = np.asarray(w, dtype=float)
        return np.logaddexp(math.log1p(self.x0) + w, math.log1p(-self.x0) - w)

    def antiderivative(self, w):
        """``A(w)``: integral of ``alpha`` from 0 to ``w``."""
        w = np.asarray(w, dtype=float)
        return self.beta * (self.log_mix(w) - math.log(2.0)) + self.delta * w

    def log_target(self, w, horizon):
        """``A(w) - w^2 / 2T`` up to the constant ``beta log 2``."""
        w = np.asarray(w, dtype=float)
        return self.beta * self.log_mix(w) + self.delta * w - w * w / (2.0 * horizon)

    def log_proposal(self, w, horizon, nu=DEFAULT_NU):
        """Unnormalized log of the two-Gaussian proposal with tail parameter ``nu``."""
        w = np.asarray(w, dtype=float)
        return self.log_mix(w) + self.delta * w - nu * w * w / (2.0 * horizon)

    def proposal(self, horizon, nu=DEFAULT_NU):
        """``(weight_of_first, mean1, mean2, sd)`` of the proposal mixture.

        With ``tilt == 0`` the target itself is the mixture (``nu = 1``).
        """
        if self.tilt == 0.0:
            nu = 1.0
        return _mixture(self.x0, horizon, self.delta, nu)

    def log_ratio_bound(self, horizon, nu=DEFAULT_NU):
        """``log K`` bounding ``target / proposal`` (both unnormalized)."""
        p = self.tilt
        if p == 0.0:
            return 0.0
        return p * (math.log(2.0) + horizon * p / (2.0 * (1.0 - nu)))


@dataclass
class Skeleton:
    horizon: float
    times: np.ndarray
    values: np.ndarray
    endpoint: float
    accepted: bool
    marks: np.ndarray = None


def max_exact_horizon(machine):
    span = machine.k2 - machine.k1
    if span < 0:
        raise ValueError("k2 < k1")
    return math.inf if span == 0 else 1.0 / span


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True, inline="always")
def _mixture_constants(horizon, delta, nu):
    """``(tilt_factor, mean1, mean2, sd)``; the first weight is
    ``(1 + x0) e / ((1 + x0) e + 1 - x0)`` with ``e = tilt_factor``."""
    e = math.exp(2.0 * delta * horizon / nu)
    return e, (1.0 + delta) * horizon / nu, (delta - 1.0) * horizon / nu, math.sqrt(horizon / nu)


@njit(cache=True)
def _mixture(x0, horizon, delta, nu):
    e, mean1, mean2, sd = _mixture_constants(horizon, delta, nu)
    a = (1.0 + x0) * e
    return a / (a + (1.0 - x0)), mean1, mean2, sd


@njit(cache=True, inline="always")
def _log_mix(x0, w):
    if abs(w) < 300.0:
        ew = math.exp(w)
        return math.log((1.0 + x0) * ew + (1.0 - x0) / ew)
    a = math.log1p(x0) + w
    b = math.log1p(-x0) - w
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True, inline="always")
def _phi(w, s, beta, delta, k1):
    z = w + s
    sech2 = 0.0
    if abs(z) < 350.0:
        c = math.cosh(z)
        sech2 = 1.0 / (c * c)
    a = beta * math.tanh(z) + delta
    return 0.5 * beta * sech2 + 0.5 * a * a - k1


@njit(cache=True, inline="always")
def _endpoint_core(st, x0, e, mean1, mean2, sd, tilt, quad, slack, max_tries):
    log_k = tilt * _LOG2 + slack
    a = (1.0 + x0) * e
    p1 = a / (a + (1.0 - x0))
    if tilt == 0.0:
        if next_uniform(st) < p1:
            return mean1 + sd * next_normal(st)
        return mean2 + sd * next_normal(st)
    for _ in range(max_tries):
        if next_uniform(st) < p1:
            w = mean1 + sd * next_normal(st)
        else:
            w = mean2 + sd * next_normal(st)
        u = next_uniform(st)
        # squeeze: log(S/2) >= -|w| and log(u) <= u - 1
        if tilt > 0.0 and u <= 1.0 - tilt * abs(w) - slack - quad * w * w:
            return w
        log_ratio = tilt * _log_mix(x0, w) - quad * w * w
        if math.log(u) <= log_ratio - log_k:
            return w
    return math.nan


@njit(cache=True, inline="always")
def _endpoint_setup(horizon, delta, tilt, nu):
    """Per-horizon constants of the endpoint sampler."""
    if tilt == 0.0:
        nu = 1.0
    e, mean1, mean2, sd = _mixture_constants(horizon, delta, nu)
    quad = 0.0
    slack = 0.0
    if tilt != 0.0:
        quad = (1.0 - nu) / (2.0 * horizon)
        slack = tilt * tilt * horizon / (2.0 * (1.0 - nu))
    return e, mean1, mean2, sd, quad, slack


@njit(cache=True)
def _endpoint(st, x0, horizon, delta, tilt, nu, max_tries):
    """One draw from the endpoint density; NaN when the retry cap is hit."""
    e, mean1, mean2, sd, quad, slack = _endpoint_setup(horizon, delta, tilt, nu)
    return _endpoint_core(st, x0, e, mean1, mean2, sd, tilt, quad, slack, max_tries)


@njit(cache=True)
def _proposal_fill(st, x0, horizon, delta, nu, out):
    e, mean1, mean2, sd = _mixture_constants(horizon, delta, nu)
    a = (1.0 + x0) * e
    p1 = a / (a + (1.0 - x0))
    for i in range(out.size):
        if next_uniform(st) < p1:
            out[i] = mean1 + sd * next_normal(st)
        else:
            out[i] = mean2 + sd * next_normal(st)


@njit(cache=True, inline="always")
def _fill_bridge(st, y0, y1, horizon, times, out):
    s = 0.0
    ys = y0
    for i in range(times.size):
        u = times[i]
        frac = (u - s) / (horizon - s)
        mean = ys + frac * (y1 - ys)
        var = (u - s) * (horizon - u) / (horizon - s)
        ys = mean + math.sqrt(var) * next_normal(st)
        s = u
        out[i] = ys


@njit(cache=True)
def _thinning(st, y_end, horizon, s, beta, delta, k1, span, record):
    """Poisson thinning test of the bridge 0 -> ``y_end``.

    Returns ``(accepted, times, values, marks)``; the test exits at the first
    hit unless ``record`` is set.
    """
    if span <= 0.0:
        count = 0
    else:
        count = next_poisson(st, horizon * span)
    times = np.empty(count)
    marks = np.empty(count)
    values = np.empty(count)
    if count == 0:
        return True, times, values, marks
    for i in range(count):
        times[i] = horizon * next_uniform(st)
        marks[i] = span * next_uniform(st)
    times.sort()
    _fill_bridge(st, 0.0, y_end, horizon, times, values)
    accepted = True
    for i in range(count):
        if marks[i] < _phi(values[i], s, beta, delta, k1):
            accepted = False
            if not record:
                break
    return accepted, times, values, marks


@njit(cache=True, inline="always")
def _thinning_fast(st, y_end, horizon, x, beta, delta, k1, span, p_empty):
    """Allocation-free test for the common empty Poisson draw.

    Consumes the same draws as :func:`_thinning`; ``p_empty`` is
    ``exp(-horizon * span)``.
    """
    if span <= 0.0:
        return True
    lam = horizon * span
    if lam <= 500.0:
        # first step of the CDF inversion in next_poisson, done inline
        u = next_uniform(st)
        if u <= p_empty:
            return True
        count = 1
        p = p_empty * lam
        cdf = p_empty + p
        while u > cdf:
            count += 1
            p *= lam / count
            cdf += p
            if p == 0.0 and cdf < u:
                break
    else:
        count = next_poisson(st, lam)
        if count == 0:
            return True
    times = np.empty(count)
    marks = np.empty(count)
    for i in range(count):
        times[i] = horizon * next_uniform(st)
        marks[i] = span * next_uniform(st)
    times.sort()
    values = np.empty(count)
    _fill_bridge(st, 0.0, y_end, horizon, times, values)
    s = math.atanh(x)
    for i in range(count):
        if marks[i] < _phi(values[i], s, beta, delta, k1):
            return False
    return True


@njit(cache=True, inline="always")
def _step_setup(mu, dt, rho0, rho1, k1, k2, nu):
    """Constants shared by every exact step with the same parameters."""
    mu2 = mu * mu
    beta = 1.0 + rho1 / mu2
    delta = rho0 / mu2
    tilt = rho1 / mu2
    span = k2 - k1
    total = mu2 * dt
    chunks = 1
    if span > 0.0:
        chunks = max(1, int(math.ceil(total * span)))
    horizon = total / chunks
    p_empty = math.exp(-horizon * span)
    e, mean1, mean2, sd, quad, slack = _endpoint_setup(horizon, delta, tilt, nu)
    return (chunks, horizon, beta, delta, tilt, k1, span, p_empty,
            e, mean1, mean2, sd, quad, slack)


@njit(cache=True, inline="always")
def _exact_step_core(st, x0, c, max_tries):
    chunks, horizon, beta, delta, tilt, k1, span, p_empty, e, mean1, mean2, sd, quad, slack = c
    x = x0
    for _ in range(chunks):
        if x <= -1.0 or x >= 1.0:
            break
        tries = 0
        while True:
            w = _endpoint_core(st, x, e, mean1, mean2, sd, tilt, quad, slack, max_tries)
            if math.isnan(w):
                return math.nan
            if _thinning_fast(st, w, horizon, x, beta, delta, k1, span, p_empty):
                break
            tries += 1
            if tries >= max_tries:
                return math.nan
        # tanh(w + atanh(x)) without the atanh; clamp the rounding
        tw = math.tanh(w)
        x = min(1.0, max(-1.0, (x + tw) / (1.0 + x * tw)))
    return x


@njit(cache=True)
def _exact_step(st, x0, mu, dt, rho0, rho1, k1, k2, nu, max_tries):
    """Exact draw of ``X(dt)`` given ``X(0) = x0``; NaN signals a retry-cap hit."""
    if x0 <= -1.0 or x0 >= 1.0:
        return x0
    c = _step_setup(mu, dt, rho0, rho1, k1, k2, nu)
    return _exact_step_core(st, x0, c, max_tries)


@njit(cache=True, nogil=True)
def exact_step_grid(values, k0, k1key, sample_ids, m, mu, dt, rho0, rho1, k1, k2,
                    nu, max_tries):
    """In-place exact step of every entry of ``values[b, n-1]``.

    Entry ``(b, n)`` draws from substream ``(sample_ids[b], m, n)``.
    Returns the number of entries that hit the retry cap.
    """
    c = _step_setup(mu, dt, rho0, rho1, k1, k2, nu)
    st = np.zeros(STATE_SIZE, dtype=np.uint64)
    um = np.uint64(m)
    failures = 0
    for b in range(values.shape[0]):
        sid = np.uint64(sample_ids[b])
        for j in range(values.shape[1]):
            x = values[b, j]
            if x <= -1.0 or x >= 1.0:
                continue
            reset_substream(st, k0, k1key, sid, um, np.uint64(j + 1))
            x = _exact_step_core(st, x, c, max_tries)
            if math.isnan(x):
                failures += 1
            values[b, j] = x
    return failures


# ---------------------------------------------------------------------------
# Python-level operations


def _check_machine(machine):
    if machine.k2 < machine.k1:
        raise ValueError("invalid bounds k2 < k1")


def sample_endpoint(model, x0, horizon, lambda_eff, rng, nu=DEFAULT_NU,
                    max_tries=DEFAULT_MAX_TRIES):
    """Draw from the endpoint density ``h`` of the unit-noise problem.

    ``x0`` is in working coordinates, ``lambda_eff`` the effective multiplier
    in front of ``1 - x^2``.
    """
    if model.endpoint_sampler is None:
        raise ValueError(f"model {model.name!r} has no endpoint sampler")
    if not 0.0 < nu < 1.0:
        raise ValueError(f"nu must lie in (0, 1), got {nu}")
    machine = model.machine(x0, lambda_eff)
    w = _endpoint(rng.state, machine.x0, float(horizon), machine.delta, machine.tilt,
                  float(nu), int(max_tries))
    if math.isnan(w):
        raise RetryCapExceeded(f"endpoint rejection exceeded {max_tries} tries")
    return w


def sample_proposal(machine, horizon, rng, size, nu=DEFAULT_NU):
    """Draws from the two-Gaussian proposal of the endpoint sampler."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if machine.tilt == 0.0:
        nu = 1.0
    out = np.empty(int(size))
    _proposal_fill(rng.state, machine.x0, float(horizon), machine.delta, float(nu), out)
    return out


def fill_bridge(y_start, y_end, horizon, times, rng):
    times = np.asarray(times, dtype=float)
    if times.size and (np.any(np.diff(times) <= 0) or times[0] <= 0 or times[-1] >= horizon):
        raise ValueError("bridge times must be strictly increasing inside (0, T)")
    out = np.empty(times.size)
    _fill_bridge(rng.state, float(y_start), float(y_end), float(horizon), times, out)
    return out


def thinning_accept(machine, candidate, rng):
    """Poisson-thinning acceptance of the proposal ending at ``candidate = (y_end, T)``."""
    _check_machine(machine)
    y_end, horizon = candidate
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    ok, times, values, marks = _thinning(
        rng.state, float(y_end), float(horizon), machine.shift, machine.beta,
        machine.delta, machine.k1, machine.k2 - machine.k1, True)
    return ok, Skeleton(float(horizon), times, values, float(y_end), bool(ok), marks)


def exact_step(model, kappa, x0, dt, rng, nu=DEFAULT_NU, max_tries=DEFAULT_MAX_TRIES):
    """Exact sample of the SDE ``dX = f dt + kappa g dB`` after time ``dt``."""
    if math.isnan(x0):
        raise ValueError("NaN start value")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    a, b = model.domain.a, model.domain.b
    if not a <= x0 <= b:
        raise ValueError(f"start value {x0} outside [{a}, {b}]")
    if x0 == a or x0 == b:
        return float(x0)
    mu = kappa * model.noise_shape_constant
    if mu == 0:
        return float(model.flow(np.array([x0]), dt)[0])
    k1, k2 = lamperti_bounds(model.rho0, model.rho1, mu)
    x = _exact_step(rng.state, float(x0), float(mu), float(dt), model.rho0, model.rho1,
                    k1, k2, float(nu), int(max_tries))
    if math.isnan(x):
        raise RetryCapExceeded(f"exact step exceeded {max_tries} rejection tries")
    return x
