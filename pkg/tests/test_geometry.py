import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landmark_bridge import (
    DegenerateMetricError,
    InvalidArgumentError,
    KernelParams,
    LandmarkConfig,
    brownian_drift,
    christoffel,
    cometric,
    cometric_derivative,
    cometric_sqrt,
    kernel_scalar,
)
from landmark_bridge.geometry import Cometric

import oracles


def random_config(rng, n, d, min_sep=0.3, scale=1.0):
    while True:
        q = rng.uniform(-scale, scale, size=(n, d))
        dist = np.linalg.norm(q[:, None] - q[None], axis=-1)
        if n == 1 or dist[np.triu_indices(n, 1)].min() >= min_sep:
            return q


configs = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s))


# --- types -----------------------------------------------------------------

def test_landmark_config_flat_round_trip():
    q = LandmarkConfig(np.arange(6.0).reshape(3, 2))
    back = LandmarkConfig.from_flat(q.flat, 2)
    assert np.array_equal(back.positions, q.positions)
    assert q.n_landmarks == 3 and q.dim == 2 and len(q) == 6


@pytest.mark.parametrize("bad", [np.zeros((0, 2)), np.zeros(3), [[np.nan, 0.0]], [[np.inf]]])
def test_landmark_config_rejects_bad_input(bad):
    with pytest.raises(InvalidArgumentError):
        LandmarkConfig(bad)


def test_landmark_config_is_read_only():
    q = LandmarkConfig(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        q.positions[0, 0] = 1.0


@pytest.mark.parametrize("alpha, sigma", [
    (0.0, np.eye(2)), (-1.0, np.eye(2)), (1.0, [[1.0, 0.5], [0.0, 1.0]]),
    (1.0, [[0.0, 0.0], [0.0, 1.0]]), (1.0, np.ones(3)), (np.nan, np.eye(2)),
])
def test_kernel_params_validation(alpha, sigma):
    with pytest.raises(InvalidArgumentError):
        KernelParams(alpha, sigma)


def test_kernel_params_covariance_is_spd():
    p = KernelParams(1.0, [[2.0, 0.0], [0.7, 0.5]])
    assert np.allclose(p.covariance, p.covariance.T)
    assert np.all(np.linalg.eigvalsh(p.covariance) > 0)
    assert np.allclose(p.precision @ p.covariance, np.eye(2))


# --- kernel_scalar ---------------------------------------------------------

def test_kernel_scalar_at_zero_is_alpha():
    assert kernel_scalar(0.0, KernelParams(0.01, np.eye(2))) == 0.01
    assert kernel_scalar(0.0, KernelParams(3.7, np.eye(1))) == 3.7


def test_kernel_scalar_unit_distance():
    assert kernel_scalar(1.0, KernelParams(1.0, np.eye(2))) == pytest.approx(0.6065306597, abs=1e-10)


@pytest.mark.parametrize("r2", [-1e-3, math.nan, math.inf])
def test_kernel_scalar_rejects_bad_distance(r2):
    with pytest.raises(InvalidArgumentError):
        kernel_scalar(r2, KernelParams(1.0, np.eye(2)))


# --- cometric --------------------------------------------------------------

def test_cometric_single_landmark():
    K = cometric(LandmarkConfig([[0.3, -2.0]]), KernelParams(0.5, np.eye(2)))
    assert np.array_equal(K.matrix, 0.5 * np.eye(2))


def test_cometric_two_landmarks_unit_distance():
    K = cometric(LandmarkConfig([[0.0], [1.0]]), KernelParams(1.0, np.eye(1)))
    e = math.exp(-0.5)
    assert np.allclose(K.matrix, [[1.0, e], [e, 1.0]], atol=1e-15)
    assert np.allclose(cometric_sqrt(K), oracles.cholesky_recurrence(K.matrix), atol=1e-14)


def test_cometric_uses_inverse_covariance():
    # widening sigma widens the kernel
    q = LandmarkConfig([[0.0, 0.0], [2.0, 0.0]])
    narrow = cometric(q, KernelParams(1.0, np.eye(2))).matrix[0, 2]
    wide = cometric(q, KernelParams(1.0, 2.0 * np.eye(2))).matrix[0, 2]
    assert narrow == pytest.approx(math.exp(-2.0))
    assert wide == pytest.approx(math.exp(-0.5))


def test_cometric_coincident_landmarks_is_degenerate():
    K = cometric(LandmarkConfig([[0.5, 0.5], [0.5, 0.5]]), KernelParams(1.0, np.eye(2)))
    assert np.allclose(K.matrix, np.kron(np.ones((2, 2)), np.eye(2)))
    assert K.is_degenerate
    with pytest.raises(DegenerateMetricError):
        cometric_sqrt(K)
    with pytest.raises(DegenerateMetricError):
        K.inverse


def test_cometric_sqrt_of_scaled_identity():
    K = Cometric(0.49 * np.eye(4), 2)
    assert np.allclose(cometric_sqrt(K), 0.7 * np.eye(4), atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(configs, st.integers(1, 4), st.integers(1, 3), st.floats(0.05, 5.0))
def test_cometric_matches_loop_oracle(rng, n, d, alpha):
    q = random_config(rng, n, d)
    L = np.tril(rng.uniform(-0.5, 0.5, (d, d)), -1) + np.diag(rng.uniform(0.5, 2.0, d))
    K = cometric(LandmarkConfig(q), KernelParams(alpha, L))
    assert np.allclose(K.matrix, oracles.cometric_loop(q, alpha, L), rtol=1e-13, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(configs, st.integers(1, 5), st.integers(1, 3))
def test_cometric_symmetric_pd_and_cholesky_residual(rng, n, d):
    q = random_config(rng, n, d)
    K = cometric(LandmarkConfig(q), KernelParams(1.0, np.eye(d)))
    M = K.matrix
    assert np.array_equal(M, M.T)
    assert np.all(np.linalg.eigvalsh(M) > 0)
    L = cometric_sqrt(K)
    assert np.array_equal(L, np.tril(L))
    assert np.abs(L @ L.T - M).max() <= 1e-10 * np.abs(M).max()
    # block (i, j) equals block (j, i)
    for i in range(n):
        for j in range(n):
            assert np.array_equal(M[i * d:(i + 1) * d, j * d:(j + 1) * d],
                                  M[j * d:(j + 1) * d, i * d:(i + 1) * d])


@settings(max_examples=30, deadline=None)
@given(configs, st.integers(1, 4), st.floats(-10, 10), st.floats(-10, 10))
def test_cometric_translation_invariance(rng, n, cx, cy):
    q = random_config(rng, n, 2)
    p = KernelParams(0.7, [[1.0, 0.0], [0.3, 0.8]])
    a = cometric(LandmarkConfig(q), p).matrix
    b = cometric(LandmarkConfig(q + [cx, cy]), p).matrix
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


# --- derivatives -----------------------------------------------------------

def test_cometric_derivative_single_landmark_is_zero():
    dK = cometric_derivative(LandmarkConfig([[1.0, 2.0]]), KernelParams(1.0, np.eye(2)))
    assert dK.shape == (2, 2, 2)
    assert not np.any(dK)


def test_cometric_derivative_two_landmarks_vs_fd():
    q = np.array([[0.0], [1.0]])
    dK = cometric_derivative(LandmarkConfig(q), KernelParams(1.0, np.eye(1)))
    assert np.abs(dK - oracles.fd_cometric_derivative(q, 1.0, np.eye(1))).max() <= 1e-6


def test_cometric_derivative_antisymmetry_between_landmarks():
    q = np.array([[0.0, 0.0], [0.7, -0.4]])
    dK = cometric_derivative(LandmarkConfig(q), KernelParams(1.0, np.eye(2)))
    # off-diagonal block (0, 1): moving landmark 0 vs landmark 1
    for a in range(2):
        assert np.allclose(dK[0 + a, 0:2, 2:4], -dK[2 + a, 0:2, 2:4], atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(configs, st.integers(2, 4), st.integers(1, 2))
def test_cometric_derivative_matches_fd(rng, n, d):
    q = random_config(rng, n, d, min_sep=0.1)
    L = np.diag(rng.uniform(0.5, 1.5, d))
    dK = cometric_derivative(LandmarkConfig(q), KernelParams(0.8, L))
    assert np.abs(dK - oracles.fd_cometric_derivative(q, 0.8, L)).max() <= 1e-6


# --- Christoffel symbols and drift -------------------------------------------

def test_christoffel_single_landmark_is_zero():
    q = LandmarkConfig([[0.3, 0.1]])
    p = KernelParams(2.0, np.eye(2))
    ch = christoffel(q, p)
    assert not np.any(ch.gamma)
    assert not np.any(ch.contracted)
    assert not np.any(brownian_drift(q, p))


def test_christoffel_two_landmarks_unit_separation():
    q = np.array([[0.0], [1.0]])
    ch = christoffel(LandmarkConfig(q), KernelParams(1.0, np.eye(1)))
    assert np.abs(ch.gamma - oracles.fd_christoffel(q, 1.0, np.eye(1))).max() <= 1e-4


@settings(max_examples=15, deadline=None)
@given(configs)
def test_christoffel_symmetric_in_lower_indices(rng):
    q = random_config(rng, 3, 2)
    gamma = christoffel(LandmarkConfig(q), KernelParams(1.0, np.eye(2))).gamma
    assert np.array_equal(gamma, np.swapaxes(gamma, -1, -2))


@settings(max_examples=10, deadline=None)
@given(configs, st.floats(0.1, 2.0))
def test_christoffel_matches_fd_with_anisotropic_sigma(rng, alpha):
    q = random_config(rng, 3, 2)
    L = np.array([[1.2, 0.0], [0.4, 0.7]])
    gamma = christoffel(LandmarkConfig(q), KernelParams(alpha, L)).gamma
    assert np.abs(gamma - oracles.fd_christoffel(q, alpha, L)).max() <= 1e-4


@settings(max_examples=10, deadline=None)
@given(configs, st.integers(2, 3), st.integers(1, 2))
def test_drift_equals_contracted_christoffel(rng, n, d):
    q = random_config(rng, n, d)
    p = KernelParams(0.6, np.eye(d))
    ch = christoffel(LandmarkConfig(q), p)
    drift = brownian_drift(LandmarkConfig(q), p).reshape(-1)
    assert np.allclose(drift, -0.5 * ch.contracted, atol=1e-12)
    assert np.allclose(drift, oracles.fd_drift(q, 0.6, np.eye(d)), atol=1e-6)


def test_christoffel_rejects_coincident_landmarks():
    with pytest.raises(DegenerateMetricError):
        christoffel(LandmarkConfig([[0.0, 0.0], [0.0, 0.0]]), KernelParams(1.0, np.eye(2)))


def test_dimension_mismatch_is_rejected():
    with pytest.raises(InvalidArgumentError):
        cometric(LandmarkConfig([[0.0, 0.0]]), KernelParams(1.0, np.eye(3)))
