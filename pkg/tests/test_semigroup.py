import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from ltesim.core import Domain
from ltesim.semigroup import (DomainViolation, SemigroupApplicator, applicator,
                              apply_scaled_laplacian, apply_semigroup, clip_to_domain,
                              domain_clip_check, eigenvalue, kernel_value, laplacian_matrix)

UNIT = Domain(-1.0, 1.0)


def test_eigenvalue_examples():
    assert eigenvalue(2, 1) == pytest.approx(-8.0, rel=1e-14)
    for j in range(1, 16):
        assert -4 * 16 ** 2 <= eigenvalue(16, j) < 0
    with pytest.raises(ValueError):
        eigenvalue(4, 4)


@pytest.mark.parametrize("N", [2, 3, 4, 7, 16, 32])
def test_spectral_reconstruction(N):
    app = SemigroupApplicator(N)
    V = app.basis / np.sqrt(N)
    assert np.allclose(V.T @ V, np.eye(N - 1), atol=1e-12)
    A = V @ np.diag(app.eigenvalues) @ V.T
    assert np.allclose(A, N * N * laplacian_matrix(N), atol=1e-9 * N * N)


@pytest.mark.parametrize("N", [2, 4, 8, 16, 32, 64])
def test_apply_matches_expm(N):
    rng = np.random.default_rng(N)
    v = rng.standard_normal(N - 1)
    for t in (1e-4, 1e-2, 0.3):
        ref = expm(t * N * N * laplacian_matrix(N)) @ v
        assert np.abs(applicator(N).apply(t, v) - ref).max() < 1e-10


def test_two_point_grid():
    app = applicator(2)
    assert app.apply(0.1, np.array([0.7]))[0] == pytest.approx(0.7 * np.exp(-0.8), rel=1e-14)


def test_zero_time_is_identity():
    v = np.linspace(-1, 1, 15)
    out = apply_semigroup(applicator(16), 0.0, v)
    assert np.array_equal(out, v)
    assert out is not v


def test_fast_transform_matches_direct():
    N = 256
    rng = np.random.default_rng(0)
    v = rng.standard_normal((3, N - 1))
    fast = applicator(N).apply(1e-4, v)
    app = applicator(N)
    direct = (v @ app.basis * np.exp(app.eigenvalues * 1e-4)) @ app.basis.T / N
    assert np.abs(fast - direct).max() < 1e-12


def test_scaled_laplacian_matches_matrix():
    u = np.random.default_rng(1).standard_normal((4, 9))
    assert np.allclose(apply_scaled_laplacian(u, 10), u @ (100 * laplacian_matrix(10)).T)


def test_kernel_value():
    assert kernel_value(8, 0.0, 3, 3) == pytest.approx(8.0)
    assert kernel_value(8, 0.0, 3, 4) == pytest.approx(0.0, abs=1e-13)
    E = expm(0.01 * 64 * laplacian_matrix(8))
    assert kernel_value(8, 0.01, 2, 5) == pytest.approx(8 * E[1, 4], abs=1e-12)
    assert kernel_value(8, 0.01, 2, 5) == pytest.approx(kernel_value(8, 0.01, 5, 2))
    with pytest.raises(IndexError):
        kernel_value(8, 0.01, 0, 1)
    with pytest.raises(ValueError):
        applicator(8).apply(-1.0, np.zeros(7))
    with pytest.raises(ValueError):
        applicator(8).apply(1.0, np.zeros(6))


def test_domain_clip_check():
    eps = np.spacing(1.0)
    assert domain_clip_check([1.0 + 10 * eps, -1.0], UNIT)
    assert not domain_clip_check([1.0 + 1e-10], UNIT)
    v = np.array([1.0 + 10 * eps, -1.0 - 3 * eps, 0.5])
    assert np.array_equal(clip_to_domain(v, UNIT), [1.0, -1.0, 0.5])
    with pytest.raises(DomainViolation):
        clip_to_domain(np.array([1.001]), UNIT)


def test_semigroup_preserves_domain_random():
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        N = int(rng.integers(2, 40))
        t = float(10 ** rng.uniform(-6, 0))
        v = rng.uniform(-1, 1, N - 1)
        assert domain_clip_check(applicator(N).apply(t, v), UNIT)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 64), st.floats(1e-5, 0.5), st.floats(1e-5, 0.5))
def test_semigroup_law(N, t, s):
    app = applicator(N)
    v = np.cos(np.arange(1, N))
    assert np.abs(app.apply(t, app.apply(s, v)) - app.apply(t + s, v)).max() < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 128), st.floats(1e-6, 1.0))
def test_sub_stochastic(N, t):
    S = applicator(N).matrix(t)
    assert S.min() >= -1e-13
    assert S.sum(axis=1).max() <= 1.0 + 1e-12
