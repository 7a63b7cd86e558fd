import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landmark_bridge import (
    DegenerateMetricError,
    FrameState,
    InvalidArgumentError,
    KernelParams,
    LandmarkConfig,
    TimeGrid,
    brownian_drift,
    cometric,
    euler_brownian_step,
    heun_frame_step,
    horizontal_fields,
    initial_frame,
    sample_brownian,
    sample_wiener,
    simulate_brownian,
    simulate_frame_bundle,
)
from landmark_bridge.geometry import christoffel_array
from landmark_bridge.sde import _euler_batch, wiener_batch


def test_time_grid():
    g = TimeGrid(2.0, 8)
    assert g.dt == 0.25
    assert g.times[0] == 0.0 and g.times[-1] == 2.0
    assert np.allclose(np.diff(g.times), 0.25)


@pytest.mark.parametrize("T, n", [(0.0, 10), (-1.0, 10), (1.0, 0), (1.0, 2.5), (math.inf, 3)])
def test_time_grid_validation(T, n):
    with pytest.raises(InvalidArgumentError):
        TimeGrid(T, n)


# --- Wiener increments ---------------------------------------------------------

def test_wiener_same_seed_bit_exact():
    g = TimeGrid(1.0, 50)
    assert np.array_equal(sample_wiener(g, 4, 11).increments, sample_wiener(g, 4, 11).increments)


def test_wiener_different_seeds_differ():
    g = TimeGrid(1.0, 50)
    assert not np.array_equal(sample_wiener(g, 4, 1).increments, sample_wiener(g, 4, 2).increments)


def test_wiener_streams_are_independent_of_batch_size():
    g = TimeGrid(1.0, 20)
    q0 = LandmarkConfig([[0.0, 0.0]])
    p = KernelParams(0.5, np.eye(2))
    few = sample_brownian(q0, g, p, 3, seed=5).endpoints
    many = sample_brownian(q0, g, p, 10, seed=5).endpoints
    assert np.array_equal(few, many[:3])


def test_wiener_variance():
    g = TimeGrid(1.0, 1000)
    z = sample_wiener(g, 100, 3).increments.reshape(-1)
    n = z.size
    var = z.var()
    # sample variance of N(0, dt) has standard error dt * sqrt(2 / n)
    assert abs(var - g.dt) < 3 * g.dt * math.sqrt(2 / n)
    assert abs(z.mean()) < 3 * math.sqrt(g.dt / n)


# --- Euler-Maruyama -------------------------------------------------------------

def test_euler_step_flat_zero_noise():
    q = LandmarkConfig([[0.2, -0.3]])
    out = euler_brownian_step(q, np.zeros(2), 0.1, KernelParams(1.0, np.eye(2)))
    assert np.array_equal(out.positions, q.positions)


def test_euler_step_flat_scaled_noise():
    q = LandmarkConfig([[1.0, 2.0]])
    h = 0.3
    out = euler_brownian_step(q, [h, 0.0], 0.1, KernelParams(0.25, np.eye(2)))
    assert np.allclose(out.positions, [[1.0 + 0.5 * h, 2.0]], atol=1e-15)


def test_euler_step_zero_dt_identity():
    q = LandmarkConfig([[0.0, 0.0], [0.5, 0.2]])
    out = euler_brownian_step(q, np.zeros(4), 0.0, KernelParams(1.0, np.eye(2)))
    assert np.array_equal(out.positions, q.positions)


def test_simulate_single_deterministic_step():
    q0 = LandmarkConfig([[0.0, 0.0], [0.6, 0.1]])
    p = KernelParams(0.3, np.eye(2))
    g = TimeGrid(0.5, 1)
    path = simulate_brownian(q0, g, p, seed=0, increments=np.zeros((1, 4)))
    b = brownian_drift(q0, p).reshape(-1)
    assert np.array_equal(path[0], q0.flat)
    assert np.allclose(path[1], q0.flat + 0.5 * b, atol=1e-15)


def test_simulate_brownian_deterministic():
    q0 = LandmarkConfig([[0.0, 0.0], [1.0, 0.0]])
    p = KernelParams(0.1, np.eye(2))
    g = TimeGrid(1.0, 30)
    assert np.array_equal(simulate_brownian(q0, g, p, 7), simulate_brownian(q0, g, p, 7))


def test_simulate_brownian_reports_degenerate_step():
    q0 = LandmarkConfig([[0.0], [0.0]])
    with pytest.raises(DegenerateMetricError, match="time index 0"):
        simulate_brownian(q0, TimeGrid(1.0, 5), KernelParams(1.0, np.eye(1)), 0)


def test_flat_endpoint_law():
    q0 = LandmarkConfig([[0.5, -1.0]])
    alpha, T, n = 0.5, 1.0, 10_000
    batch = sample_brownian(q0, TimeGrid(T, 10), KernelParams(alpha, np.eye(2)), n, seed=1)
    x = batch.endpoints
    se_mean = math.sqrt(alpha * T / n)
    assert np.all(np.abs(x.mean(axis=0) - q0.flat) < 3 * se_mean)
    cov = np.cov(x.T)
    se_var = alpha * T * math.sqrt(2 / (n - 1))
    assert np.all(np.abs(np.diag(cov) - alpha * T) < 3 * se_var)
    assert abs(cov[0, 1]) < 3 * alpha * T / math.sqrt(n)


def test_flat_endpoint_law_independent_of_step_count():
    # one step or many: a flat Euler path sums the same increments
    q0 = LandmarkConfig([[0.0, 0.0]])
    p = KernelParams(0.5, np.eye(2))
    inc = sample_wiener(TimeGrid(1.0, 40), 2, 3).increments
    coarse_inc = inc.reshape(20, 2, 2).sum(axis=1)
    fine = simulate_brownian(q0, TimeGrid(1.0, 40), p, 0, increments=inc)
    coarse = simulate_brownian(q0, TimeGrid(1.0, 20), p, 0, increments=coarse_inc)
    assert np.allclose(fine[-1], coarse[-1], atol=1e-14)


def test_sample_brownian_zero_samples():
    batch = sample_brownian(LandmarkConfig([[0.0, 0.0]]), TimeGrid(1.0, 5),
                            KernelParams(1.0, np.eye(2)), 0, seed=0, keep_paths=True)
    assert batch.endpoints.shape == (0, 2) and batch.paths.shape == (0, 6, 2)


def test_sample_brownian_flags_degenerate_samples():
    batch = sample_brownian(LandmarkConfig([[0.0], [0.0]]), TimeGrid(1.0, 5),
                            KernelParams(1.0, np.eye(1)), 3, seed=0)
    assert batch.aborted.all()
    assert np.isnan(batch.endpoints).all()


def test_sample_brownian_matches_single_path():
    q0 = LandmarkConfig([[0.0, 0.0], [0.8, 0.3]])
    p = KernelParams(0.05, np.eye(2))
    g = TimeGrid(1.0, 25)
    batch = sample_brownian(q0, g, p, 4, seed=9, keep_paths=True)
    inc = sample_wiener(g, 4, 9, key=(2,)).increments
    assert np.allclose(batch.paths[2], simulate_brownian(q0, g, p, 9, increments=inc), atol=1e-14)


# --- frame bundle -----------------------------------------------------------------

def test_initial_frame_is_orthonormal():
    q = LandmarkConfig([[0.0, 0.0], [0.7, 0.2], [0.1, 0.9]])
    p = KernelParams(0.8, np.eye(2))
    u = initial_frame(q, p)
    g = cometric(q, p).inverse
    assert np.abs(u.frame.T @ g @ u.frame - np.eye(6)).max() < 1e-6


def test_horizontal_fields_flat():
    u = FrameState(LandmarkConfig([[0.0, 0.0]]), np.array([[2.0, 0.0], [0.5, 1.0]]))
    base, frame_motion = horizontal_fields(u, KernelParams(1.0, np.eye(2)))
    assert np.array_equal(base, u.frame)
    assert not np.any(frame_motion)


def test_horizontal_fields_linear_in_frame():
    q = LandmarkConfig([[0.0, 0.0], [0.7, 0.2]])
    p = KernelParams(1.0, np.eye(2))
    u = initial_frame(q, p)
    b1, f1 = horizontal_fields(u, p)
    b2, f2 = horizontal_fields(FrameState(q, 3.0 * u.frame), p)
    assert np.allclose(b2, 3.0 * b1)
    assert np.allclose(f2, 9.0 * f1)


def test_horizontal_transport_preserves_metric_to_first_order():
    q = np.array([[0.0, 0.0], [0.7, 0.2]])
    p = KernelParams(1.0, np.eye(2))
    u = initial_frame(LandmarkConfig(q), p)
    _, frame_motion = horizontal_fields(u, p)

    def gram(base, frame):
        return frame.T @ cometric(LandmarkConfig(base), p).inverse @ frame

    g0 = gram(q, u.frame)
    for i in range(4):
        errs = []
        for h in (1e-3, 5e-4):
            base = q + h * u.frame[:, i].reshape(q.shape)
            errs.append(np.abs(gram(base, u.frame + h * frame_motion[i]) - g0).max())
        # error is O(h^2): halving h quarters it
        assert errs[1] < 0.3 * errs[0]
        assert errs[0] < 1e-4


def test_heun_flat_is_exact():
    q = LandmarkConfig([[1.0, -1.0]])
    p = KernelParams(0.25, np.eye(2))
    u = initial_frame(q, p)
    dW = np.array([0.3, -0.2])
    out = heun_frame_step(u, dW, p)
    assert np.allclose(out.base.positions, q.positions + (u.frame @ dW).reshape(1, 2), atol=1e-15)
    assert np.array_equal(out.frame, u.frame)


def test_heun_zero_noise_is_identity():
    q = LandmarkConfig([[0.0, 0.0], [0.7, 0.2]])
    p = KernelParams(1.0, np.eye(2))
    u = initial_frame(q, p)
    out = heun_frame_step(u, np.zeros(4), p)
    assert np.array_equal(out.base.positions, q.positions)
    assert np.array_equal(out.frame, u.frame)


def test_heun_matches_manual_predictor_corrector():
    q = np.array([[0.0], [0.8]])
    p = KernelParams(0.5, np.eye(1))
    u = initial_frame(LandmarkConfig(q), p)
    dW = np.array([0.1, -0.05])

    def drive(base, frame):
        gamma = christoffel_array(base, p)
        w = frame @ dW
        return w, -np.einsum("mkl,k,lj->mj", gamma, w, frame)

    vq, vf = drive(q, u.frame)
    wq, wf = drive(q + vq.reshape(q.shape), u.frame + vf)
    out = heun_frame_step(u, dW, p)
    assert np.allclose(out.base.flat, q.reshape(-1) + 0.5 * (vq + wq), atol=1e-14)
    assert np.allclose(out.frame, u.frame + 0.5 * (vf + wf), atol=1e-14)


def test_frame_bundle_batch_matches_single_path():
    q0 = LandmarkConfig([[0.0], [1.0]])
    p = KernelParams(0.25, np.eye(1))
    g = TimeGrid(0.5, 20)
    batch = sample_brownian(q0, g, p, 3, seed=4, keep_paths=True, scheme="heun")
    inc = sample_wiener(g, 2, 4, key=(1,)).increments
    assert np.allclose(batch.paths[1], simulate_frame_bundle(q0, g, p, 4, increments=inc), atol=1e-13)


def test_unknown_scheme():
    with pytest.raises(InvalidArgumentError):
        sample_brownian(LandmarkConfig([[0.0]]), TimeGrid(), KernelParams(1.0, np.eye(1)), 2, 0,
                        scheme="milstein")


def test_step_refinement_shrinks_moment_changes():
    # two-landmark endpoint means under successive halvings of dt, driven by
    # one fine Brownian path per sample so only the discretization changes
    pos = np.array([[0.0], [1.0]])
    p = KernelParams(0.25, np.eye(1))
    fine_n, m = 160, 2000
    fine = wiener_batch(TimeGrid(0.5, fine_n), 2, 2, [(s,) for s in range(m)]).reshape(m, fine_n, 2, 1)
    means = []
    for n in (20, 40, 80, 160):
        noise = fine.reshape(m, n, fine_n // n, 2, 1).sum(axis=2)
        paths, aborted = _euler_batch(pos, noise, TimeGrid(0.5, n), p)
        assert not aborted.any()
        means.append(paths[:, -1].mean(axis=0))
    diffs = [np.abs(means[i + 1] - means[i]).max() for i in range(3)]
    assert diffs[0] > diffs[1] > diffs[2]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**63), st.integers(1, 30))
def test_same_seed_same_path(seed, n):
    q0 = LandmarkConfig([[0.0, 0.0], [1.0, 0.5]])
    p = KernelParams(0.01, np.eye(2))
    g = TimeGrid(1.0, n)
    assert np.array_equal(simulate_brownian(q0, g, p, seed), simulate_brownian(q0, g, p, seed))
