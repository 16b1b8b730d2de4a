"""Experiment drivers: boundary tables, weak-error studies, CSV output.

Samples are processed in fixed blocks of ``block_size`` consecutive sample
ids.  Blocks may run on any number of threads; their partial sums are merged
in block order, so every number written is independent of the thread count.
"""

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy import stats

from .core import build_grid, ulp_slack
from .exactsim import DEFAULT_NU, exact_step_grid, lamperti_bounds
from .models import get_model
from .rng import make_key
from .schemes import SCHEMES, Stepper, check_scheme, initial_state, stream_label

TEST_FUNCTIONS = ("F1", "F2")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    model: str = "allen-cahn"
    gamma: Optional[float] = None
    schemes: tuple = ("lte",)
    lambdas: tuple = (1.0,)
    T: float = 1.0
    levels: tuple = (2, 3, 4, 5)
    reference_level: int = 7
    samples: int = 2000
    seed: int = 0
    test_function: tuple = ("F1",)
    output_path: Optional[str] = None
    dx: float = 2.0 ** -4
    dt: float = 2.0 ** -2
    nu: float = DEFAULT_NU
    threads: int = 1
    block_size: int = 64
    timings: bool = True

    # JSON/CLI spellings that differ from the field names
    ALIASES = {"lambda": "lambdas", "scheme": "schemes", "ref_level": "reference_level",
               "test_functions": "test_function", "out": "output_path"}

    def __post_init__(self):
        self.schemes = tuple(check_scheme(s) for s in _as_tuple(self.schemes))
        self.lambdas = tuple(float(v) for v in _as_tuple(self.lambdas))
        self.levels = tuple(int(v) for v in _as_tuple(self.levels))
        self.test_function = tuple(str(v).upper() for v in _as_tuple(self.test_function))
        for tf in self.test_function:
            if tf not in TEST_FUNCTIONS:
                raise ValueError(f"unknown test function {tf!r}")
        if self.samples < 0:
            raise ValueError("samples must be >= 0")
        if self.threads < 1 or self.block_size < 1:
            raise ValueError("threads and block_size must be positive")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"T must be positive, got {self.T}")
        if any(lam < 0 for lam in self.lambdas):
            raise ValueError("lambda must be >= 0")

    def build_model(self):
        return get_model(self.model, self.gamma)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            key = cls.ALIASES.get(key, key)
            if key not in names:
                raise ValueError(f"unknown config field {key!r}")
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path, **overrides):
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)


def _as_tuple(value):
    if isinstance(value, str):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    if np.ndim(value) == 0:
        return (value,)
    return tuple(value)


def level_grid(level, T):
    """Grid of level ``l``: ``dx = 2^-l``, ``dt = 4^-l T``."""
    if level < 1:
        raise ValueError(f"level must be >= 1, got {level}")
    return build_grid(2 ** level, 4 ** level, T)


def grid_from_steps(dx, dt, T):
    N = round(1.0 / dx)
    M = round(T / dt)
    if not (math.isclose(N * dx, 1.0) and math.isclose(M * dt, T)):
        raise ValueError(f"dx={dx}, dt={dt} do not divide [0, 1] x [0, {T}]")
    return build_grid(N, M, T)


# ---------------------------------------------------------------------------
# test functions


def _f_working(kind, r):
    a = np.abs(r)
    if kind == "F1":
        return np.exp(-a)
    return 0.5 * (np.sqrt(np.maximum(1.0 - a * a, 0.0)) * a + np.arcsin(np.minimum(a, 1.0)))


def test_function(kind, model, u):
    """``F1(r) = exp(-|r|)`` or ``F2(r) = (sqrt(1 - r^2)|r| + arcsin|r|) / 2``.

    ``u`` is in the model's original coordinates; ``[0, 1]``-valued models are
    first translated by ``r = 2(u - 1/2)``.
    """
    kind = str(kind).upper()
    if kind not in TEST_FUNCTIONS:
        raise ValueError(f"unknown test function {kind!r}")
    r = np.asarray(model.to_working(u), dtype=float)
    if np.isnan(r).any() or np.any(np.abs(r) > 1.0 + ulp_slack(-1.0, 1.0)):
        raise ValueError("test function argument outside [-1, 1]")
    out = _f_working(kind, r)
    return float(out) if out.ndim == 0 else out


# test_function is a library routine, not a pytest test
test_function.__test__ = False


# ---------------------------------------------------------------------------
# block runner


def _blocks(samples, block_size):
    return [(start, min(start + block_size, samples)) for start in range(0, samples, block_size)]


def _run_blocks(fn, samples, config):
    blocks = _blocks(samples, config.block_size)
    if config.threads == 1 or len(blocks) <= 1:
        return [fn(a, b) for a, b in blocks]
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), blocks))


# ---------------------------------------------------------------------------
# boundary table


@dataclass
class BoundaryReport:
    rows: list = field(default_factory=list)

    HEADER = ("model", "scheme", "lambda", "dx", "dt", "T", "samples", "in_domain")

    def count(self, scheme, lam):
        for row in self.rows:
            if row["scheme"] == scheme and row["lambda"] == lam:
                return row["in_domain"]
        raise KeyError((scheme, lam))


def _inside(model, U):
    orig = model.from_working(U)
    dom = model.original_domain
    with np.errstate(invalid="ignore"):
        return np.all(np.isfinite(orig) & (orig >= dom.a) & (orig <= dom.b), axis=1)


def boundary_counts(model, grid, scheme, lam, samples, seed, config):
    """Number of the ``samples`` paths whose values all stay in the original domain."""
    key = make_key(seed, stream_label("boundary", model.name, scheme, lam, grid.N, grid.M))
    stepper = Stepper(scheme, model, grid, lam, key, nu=config.nu)
    u0 = initial_state(model, grid)

    def block(a, b):
        sids = np.arange(a, b, dtype=np.uint64)
        U = np.tile(u0, (b - a, 1))
        ok = _inside(model, U)
        for m in range(grid.M):
            try:
                U = stepper.step(U, m, sids)
            except Exception as exc:
                raise RuntimeError(f"samples {a}..{b - 1}, step {m}: {exc}") from exc
            ok &= _inside(model, U)
        return int(ok.sum())

    return sum(_run_blocks(block, samples, config))


def boundary_table(config):
    model = config.build_model()
    grid = grid_from_steps(config.dx, config.dt, config.T)
    report = BoundaryReport()
    for scheme in config.schemes:
        for lam in config.lambdas:
            count = 0
            if config.samples:
                count = boundary_counts(model, grid, scheme, lam, config.samples, config.seed,
                                        config)
            report.rows.append({"model": model.name, "scheme": scheme, "lambda": lam,
                                "dx": grid.dx, "dt": grid.dt, "T": grid.T,
                                "samples": config.samples, "in_domain": count})
    return report


# ---------------------------------------------------------------------------
# weak error


@dataclass
class NodeMoments:
    """Sums of ``F`` and ``F^2`` over samples at the nodes of a level."""
    level: int
    samples: int
    sums: dict
    squares: dict
    wall_seconds: float = 0.0

    def mean(self, kind):
        return self.sums[kind] / self.samples

    def variance(self, kind):
        mean = self.mean(kind)
        n = self.samples
        if n < 2:
            return np.zeros_like(mean)
        return np.maximum(self.squares[kind] - n * mean * mean, 0.0) / (n - 1)

    def restrict(self, level):
        """Moments at the nodes of a coarser nested ``level``."""
        if level > self.level:
            raise ValueError("can only restrict to a coarser level")
        ts, xs = 4 ** (self.level - level), 2 ** (self.level - level)
        pick = lambda a: a[::ts, xs - 1::xs]
        return NodeMoments(level, self.samples, {k: pick(v) for k, v in self.sums.items()},
                           {k: pick(v) for k, v in self.squares.items()}, self.wall_seconds)


def node_moments(model, level, T, samples, key, kinds, config, record_level=None,
                 sample_offset=0):
    """Run ``samples`` LTE paths at ``level`` and sum ``F`` at the nodes of ``record_level``.

    Nodes are ``(t_m, x_n)`` with ``n = 1..N-1`` of the recording level (the
    Dirichlet nodes carry no randomness).
    """
    record_level = level if record_level is None else record_level
    if record_level > level:
        raise ValueError("recording level must not be finer than the simulated level")
    grid = level_grid(level, T)
    tstride, xstride = 4 ** (level - record_level), 2 ** (level - record_level)
    rows = 4 ** record_level + 1
    cols = 2 ** record_level - 1
    stepper = Stepper("lte", model, grid, 1.0, key, nu=config.nu)
    u0 = initial_state(model, grid)

    def accumulate(U, s, q, row):
        V = U[:, xstride - 1::xstride]
        for kind in kinds:
            F = _f_working(kind, V)
            s[kind][row] = F.sum(axis=0)
            q[kind][row] = (F * F).sum(axis=0)

    def block(a, b):
        sids = np.arange(sample_offset + a, sample_offset + b, dtype=np.uint64)
        s = {k: np.empty((rows, cols)) for k in kinds}
        q = {k: np.empty((rows, cols)) for k in kinds}
        U = np.tile(u0, (b - a, 1))
        accumulate(U, s, q, 0)
        for m in range(grid.M):
            U = stepper.step(U, m, sids)
            if (m + 1) % tstride == 0:
                accumulate(U, s, q, (m + 1) // tstride)
        return s, q

    start = time.perf_counter()
    parts = _run_blocks(block, samples, config)
    sums = {k: np.zeros((rows, cols)) for k in kinds}
    squares = {k: np.zeros((rows, cols)) for k in kinds}
    for s, q in parts:
        for k in kinds:
            sums[k] += s[k]
            squares[k] += q[k]
    return NodeMoments(record_level, samples, sums, squares, time.perf_counter() - start)


def compare_moments(test, reference, kind):
    """``(sup |mean difference|, max per-node two-sample standard error)``."""
    ref = reference.restrict(test.level)
    diff = np.abs(test.mean(kind) - ref.mean(kind))
    se = np.sqrt(test.variance(kind) / test.samples + ref.variance(kind) / ref.samples)
    return float(diff.max()), float(se.max())


def fit_slope(dts, errors):
    """Least-squares line through ``(log dt, log error)``: ``(slope, intercept, residual)``.

    ``residual`` is the root-mean-square deviation of the fit in log space.
    """
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if dts.shape != errors.shape or dts.size < 2:
        raise ValueError("need at least two (dt, error) pairs")
    if np.any(dts <= 0) or np.any(errors <= 0) or not np.all(np.isfinite(errors)):
        raise ValueError("dt and error values must be positive")
    x, y = np.log(dts), np.log(errors)
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    return float(slope), float(intercept), float(np.sqrt(np.mean(resid ** 2)))


@dataclass
class WeakErrorReport:
    test_function: str
    rows: list = field(default_factory=list)
    slope: float = math.nan
    intercept: float = math.nan
    residual: float = math.nan

    HEADER = ("level", "dx", "dt", "test_function", "weak_error", "std_error", "wall_seconds")


def _check_levels(config):
    if not config.levels:
        raise ValueError("no levels given")
    if min(config.levels) < 1:
        raise ValueError("levels must be >= 1")
    if config.reference_level <= max(config.levels):
        raise ValueError("reference level must be finer than every tested level "
                         "(grids must nest)")


def weak_error_experiments(config):
    """Weak errors of LTE for every configured test function, sharing the simulations."""
    _check_levels(config)
    model = config.build_model()
    kinds = config.test_function
    finest = max(config.levels)
    ref_key = make_key(config.seed, stream_label("weak-reference", model.name,
                                                 config.reference_level))
    reference = node_moments(model, config.reference_level, config.T, config.samples, ref_key,
                             kinds, config, record_level=finest)
    reports = {k: WeakErrorReport(k) for k in kinds}
    for level in sorted(config.levels):
        key = make_key(config.seed, stream_label("weak-level", model.name, level))
        mom = node_moments(model, level, config.T, config.samples, key, kinds, config)
        grid = level_grid(level, config.T)
        for k in kinds:
            err, se = compare_moments(mom, reference, k)
            reports[k].rows.append({"level": level, "dx": grid.dx, "dt": grid.dt,
                                    "test_function": k, "weak_error": err, "std_error": se,
                                    "wall_seconds": mom.wall_seconds if config.timings
                                    else math.nan})
    for rep in reports.values():
        if len(rep.rows) >= 2 and all(r["weak_error"] > 0 for r in rep.rows):
            rep.slope, rep.intercept, rep.residual = fit_slope(
                [r["dt"] for r in rep.rows], [r["weak_error"] for r in rep.rows])
    return reports


def weak_error_experiment(config):
    """Weak-error report for the first configured test function."""
    return weak_error_experiments(config)[config.test_function[0]]


# ---------------------------------------------------------------------------
# exact-step oracle


def euler_oracle(model, x0, dt, samples, h=1e-5, seed=0, kappa=1.0, chunk=20000):
    """Fine-step Euler-Maruyama samples of ``dX = f dt + kappa g dB`` (independent RNG)."""
    rng = np.random.default_rng(seed)
    steps = int(round(dt / h))
    h = dt / steps
    out = np.empty(samples)
    for a in range(0, samples, chunk):
        x = np.full(min(chunk, samples - a), float(x0))
        for _ in range(steps):
            x += model.f(x) * h + kappa * model.g(x) * math.sqrt(h) * rng.standard_normal(x.size)
        out[a:a + x.size] = x
    return out


def exact_samples(model, x0, dt, samples, seed=0, kappa=1.0, nu=DEFAULT_NU):
    mu = kappa * model.noise_shape_constant
    k1, k2 = lamperti_bounds(model.rho0, model.rho1, mu)
    X = np.full((samples, 1), float(x0))
    k0, kk = make_key(seed, stream_label("exactsim-check", model.name))
    fails = exact_step_grid(X, k0, kk, np.arange(samples, dtype=np.uint64), 0, mu, dt,
                            model.rho0, model.rho1, k1, k2, nu, 10 ** 6)
    if fails:
        raise RuntimeError(f"{fails} exact steps hit the retry cap")
    return X[:, 0]


def _var_se(x):
    d = x - x.mean()
    m2 = np.mean(d * d)
    return math.sqrt(max(np.mean(d ** 4) - m2 * m2, 0.0) / x.size)


def exactsim_check(model, x0=0.2, dt=0.05, samples=100_000, h=1e-5, seed=0, kappa=1.0,
                   nu=DEFAULT_NU):
    """Compare ``exact_step`` draws with a fine Euler-Maruyama oracle."""
    a = exact_samples(model, x0, dt, samples, seed, kappa, nu)
    b = euler_oracle(model, x0, dt, samples, h, seed + 1, kappa)
    se_mean = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    se_var = math.hypot(_var_se(a), _var_se(b))
    return {
        "model": model.name, "x0": x0, "dt": dt, "samples": samples,
        "mean_exact": float(a.mean()), "mean_oracle": float(b.mean()),
        "mean_z": float((a.mean() - b.mean()) / se_mean),
        "var_exact": float(a.var(ddof=1)), "var_oracle": float(b.var(ddof=1)),
        "var_z": float((a.var(ddof=1) - b.var(ddof=1)) / se_var),
        "ks": float(stats.ks_2samp(a, b).statistic),
    }


# ---------------------------------------------------------------------------
# CSV


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(report, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(report.HEADER)
    for row in report.rows:
        writer.writerow([_fmt(row[h]) for h in report.HEADER])
    if isinstance(report, WeakErrorReport):
        fh.write(f"# slope={_fmt(report.slope)} residual={_fmt(report.residual)}\n")


def emit_csv(report, path):
    """Write a report in its CSV format (UTF-8, header row, ``repr`` floats)."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            write_csv(report, fh)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_trajectory_csv(trajectory, model, fh):
    """``t,x,value`` rows in original coordinates, Dirichlet nodes included."""
    grid = trajectory.grid
    orig = model.from_working(trajectory.states)
    bval = float(model.boundary_value)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("t", "x", "value"))
    for m, t in enumerate(grid.ts):
        row = np.concatenate([[bval], orig[m], [bval]])
        for x, v in zip(grid.xs, row):
            writer.writerow((repr(float(t)), repr(float(x)), repr(float(v))))


def emit_trajectory_csv(trajectory, model, path):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            write_trajectory_csv(trajectory, model, fh)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


__all__ = ["BoundaryReport", "ExperimentConfig", "NodeMoments", "SCHEMES", "TEST_FUNCTIONS",
           "WeakErrorReport", "boundary_counts", "boundary_table", "compare_moments",
           "emit_csv", "emit_trajectory_csv", "write_csv", "write_trajectory_csv", "euler_oracle", "exact_samples",
           "exactsim_check", "fit_slope", "grid_from_steps", "level_grid", "node_moments",
           "test_function", "weak_error_experiment", "weak_error_experiments"]
