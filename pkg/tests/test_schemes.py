import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ltesim.core import RngStream, build_grid
from ltesim.models import get_model, heat_stub
from ltesim.schemes import (Stepper, em_step, exp_step, initial_state, lte_step, sem_step,
                            simulate_path, stream_label, thomas_solve)
from ltesim.semigroup import applicator, apply_semigroup, laplacian_matrix


def test_thomas_matches_dense():
    rng = np.random.default_rng(0)
    for n in (1, 2, 5, 40):
        lower, upper = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
        diag = 4 + rng.uniform(0, 1, n)
        rhs = rng.standard_normal(n)
        A = np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)
        assert np.abs(thomas_solve(lower, diag, upper, rhs) - np.linalg.solve(A, rhs)).max() < 1e-12


def test_two_point_grid_baselines():
    stub = heat_stub()
    grid = build_grid(2, 10, 1.0)
    dt = grid.dt
    rng = RngStream(0)
    assert em_step(stub, grid, [0.3], rng)[0] == pytest.approx(0.3 * (1 - 8 * dt))
    assert sem_step(stub, grid, [0.3], rng)[0] == pytest.approx(0.3 / (1 + 8 * dt))


@pytest.mark.parametrize("N", [4, 16, 256])
def test_heat_stub_reductions(N):
    stub = heat_stub()
    grid = build_grid(N, 8, 0.05)
    app = applicator(N)
    u = np.sin(np.pi * grid.interior) * 0.9
    ref = apply_semigroup(app, grid.dt, u)
    rng = RngStream(1)
    assert np.abs(exp_step(stub, grid, u, app, rng) - ref).max() < 1e-12
    assert np.abs(lte_step(stub, grid, u, app, rng) - ref).max() < 1e-12
    dense = (np.eye(N - 1) + grid.dt * N * N * laplacian_matrix(N)) @ u
    assert np.abs(em_step(stub, grid, u, rng) - dense).max() < 1e-9


def test_sem_matches_dense_solve():
    model = get_model("allen-cahn")
    grid = build_grid(16, 4, 1.0)
    u = initial_state(model, grid)
    st = Stepper("sem", model, grid, 0.0)
    got = st.step(u[None, :].copy(), 0, [0])[0]
    A = np.eye(15) - grid.dt * 256 * laplacian_matrix(16)
    ref = np.linalg.solve(A, u + grid.dt * model.f(u))
    assert np.abs(got - ref).max() < 1e-12


def test_sem_stable_without_noise():
    grid = build_grid(64, 10, 1.0)
    out = Stepper("sem", heat_stub(), grid, 0.0).step(np.ones((1, 63)), 0, [0])
    assert np.all(np.abs(out) <= 1.0)


@pytest.mark.parametrize("name", ["allen-cahn", "nagumo", "sis"])
def test_lte_stays_in_domain(name):
    model = get_model(name)
    grid = build_grid(16, 1000, 1000 / 256)
    traj = simulate_path("lte", model, grid, 3.0, seed=5, sample_id=0)
    assert np.all(np.abs(traj.states) <= 1.0)
    orig = traj.original(model)
    dom = model.original_domain
    assert np.all((orig >= dom.a) & (orig <= dom.b))


def test_lte_rejects_out_of_domain_state():
    grid = build_grid(4, 1, 0.1)
    with pytest.raises(ValueError):
        lte_step(get_model("allen-cahn"), grid, [0.0, 1.5, 0.0], None, RngStream(0))
    with pytest.raises(ValueError):
        em_step(get_model("allen-cahn"), grid, [0.0, np.nan, 0.0], RngStream(0))
    with pytest.raises(ValueError):
        lte_step(get_model("allen-cahn"), grid, [0.0, 0.0], None, RngStream(0))


def test_noise_free_lte_converges():
    model = get_model("allen-cahn")
    N, T = 16, 0.25
    A = N * N * laplacian_matrix(N)
    u0 = initial_state(model, build_grid(N, 1, T))
    ref = solve_ivp(lambda t, u: A @ u + model.f(u), (0, T), u0, method="Radau",
                    rtol=1e-11, atol=1e-12).y[:, -1]
    errs = []
    for M in (4 ** 2, 4 ** 3, 4 ** 4):
        traj = simulate_path("lte", model, build_grid(N, M, T), 0.0, seed=0, sample_id=0)
        errs.append(np.abs(traj.states[-1] - ref).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3


def test_simulate_path_basics():
    model = get_model("nagumo")
    grid = build_grid(8, 16, 0.5)
    a = simulate_path("lte", model, grid, 1.0, seed=3, sample_id=2)
    b = simulate_path("lte", model, grid, 1.0, seed=3, sample_id=2)
    c = simulate_path("lte", model, grid, 1.0, seed=3, sample_id=1)
    assert a.states.shape == (17, 7)
    assert np.array_equal(a.states[0], initial_state(model, grid))
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)
    empty = simulate_path("em", model, build_grid(8, 1, 0.5).__class__(8, 0, 0.5), 1.0, 0, 0)
    assert empty.states.shape == (1, 7)


@pytest.mark.parametrize("scheme", ["lte", "em", "sem", "exp"])
def test_block_split_invariance(scheme):
    model = get_model("allen-cahn")
    grid = build_grid(16, 4, 1.0)
    st = Stepper(scheme, model, grid, 2.0, (9, stream_label("x")))
    U = np.tile(initial_state(model, grid), (6, 1))
    ids = np.arange(10, 16)
    whole = st.step(U.copy(), 3, ids)
    parts = np.vstack([st.step(U[i:i + 1].copy(), 3, ids[i:i + 1]) for i in (4, 0, 5, 2, 1, 3)])
    order = [4, 0, 5, 2, 1, 3]
    assert np.array_equal(whole[order], parts)


def test_unknown_scheme():
    with pytest.raises(ValueError):
        Stepper("rk4", get_model("sis"), build_grid(4, 1, 1.0))


def test_stream_label_stable():
    assert stream_label("a", 1) == stream_label("a", 1)
    assert stream_label("a", 1) != stream_label("a", 2)
    assert 0 <= stream_label("x") < 2 ** 64
