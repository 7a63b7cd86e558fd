"""Guided landmark bridges and Monte Carlo transition densities.

A guided process adds the attraction ``-(y - v) / (T - t)`` to the Brownian
SDE so that every path hits the target ``v`` at time ``T``. Weighting the
guided paths by the Delyon-Hu correction factor ``phi`` recovers the
conditioned process, and ``E[phi]`` times a Gaussian prefactor is the
transition density.

Conventions: the last step lands on ``v`` exactly, and ``log phi`` sums the
discretized increments over steps ``0 .. n_steps - 2`` (the final step, where
``1 / (T - t)`` is singular, is excluded).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateMetricError, EstimationFailedError, InvalidArgumentError
from .geometry import KernelParams, LandmarkConfig, _as_positions, _cholesky, kernel_matrix, local_geometry
from .sde import TimeGrid, sample_wiener, wiener_batch


@dataclass(frozen=True, eq=False)
class BridgePath:
    path: np.ndarray          # (n_steps + 1, Nd)
    target: LandmarkConfig
    log_phi: float
    seed: int


@dataclass(frozen=True)
class DensityEstimate:
    """Monte Carlo estimate of ``p_T(v)``.

    ``std_error`` is the standard error of the estimated density value (not of
    its log). It is ``inf`` for a single sample unless the correction factor
    is identically one.
    """

    log_value: float
    std_error: float
    n_samples: int
    n_aborted: int = 0

    @property
    def value(self) -> float:
        return _exp(self.log_value)


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


# ---------------------------------------------------------------------------
# single-step operations

def _attraction(y, v, t, dt, T):
    return -(y - v) * (dt / (T - t))


def guided_step(y: LandmarkConfig, v: LandmarkConfig, t: float, dt: float, dW,
                params: KernelParams, T: float) -> LandmarkConfig:
    """One Euler step of the guided SDE; the step ending at ``T`` returns ``v``."""
    if t >= T:
        raise InvalidArgumentError(f"t={t} must be before T={T}")
    pos, target = _as_positions(y, params), _as_positions(v, params)
    if t + dt >= T * (1 - 1e-12):
        local_geometry(pos, params)  # still reject a degenerate starting point
        return LandmarkConfig(target)
    geo = local_geometry(pos, params)
    dW = np.asarray(dW, dtype=float).reshape(pos.shape)
    nxt = pos + geo.drift * dt + _attraction(pos, target, t, dt, T) + geo.chol @ dW
    return LandmarkConfig(nxt)


def _log_phi_increment(ytil, ytil_next, kinv, kinv_next, drift, t, dt, T):
    """Batched increment of ``log phi`` in the kron-reduced form.

    With ``A = kron(kinv, Id_d)`` and ``Y`` the ``(N, d)`` view of ``ytil``:
    ``ytil^T A b = sum(Y * (kinv @ B))`` and similarly for the ``dA`` terms.
    """
    dkinv = kinv_next - kinv
    drift_term = np.sum(ytil * (kinv @ drift), axis=(-2, -1))
    da_term = np.sum(ytil * (dkinv @ ytil), axis=(-2, -1))
    # sum_ij dA^ij * d(ytil^i ytil^j)
    qv_term = np.sum(ytil_next * (dkinv @ ytil_next), axis=(-2, -1)) - da_term
    return -drift_term * dt / (T - t) - 0.5 * (da_term + qv_term) / (T - t)


def log_phi_increment(y: LandmarkConfig, y_next: LandmarkConfig, v: LandmarkConfig,
                      t: float, dt: float, params: KernelParams, T: float) -> float:
    """Discretized increment of ``log phi`` over ``[t, t + dt]`` (requires ``t + dt < T``)."""
    if not t + dt < T:
        raise InvalidArgumentError("the increment over the final step is excluded")
    pos, nxt, target = (_as_positions(x, params) for x in (y, y_next, v))
    geo = local_geometry(pos, params)
    geo_next = local_geometry(nxt, params)
    return float(_log_phi_increment(pos - target, nxt - target, geo.kinv, geo_next.kinv,
                                    geo.drift, t, dt, T))


# ---------------------------------------------------------------------------
# batched engine

def run_bridges(q0: np.ndarray, targets: np.ndarray, noise: np.ndarray, grid: TimeGrid,
                params: KernelParams, keep_paths: bool = False):
    """Simulate guided bridges for a batch of targets.

    ``q0`` is ``(N, d)``, ``targets`` and ``noise`` share a batch shape ``B``:
    ``targets`` is ``B + (N, d)`` and ``noise`` is ``B + (n_steps, N, d)``.
    Returns ``(log_phi, aborted, paths)`` with ``paths`` ``None`` unless
    requested. Aborted entries have ``log_phi = nan``.
    """
    batch = targets.shape[:-2]
    n, d = q0.shape
    m = int(np.prod(batch, dtype=int))
    v = targets.reshape(m, n, d)
    dW = noise.reshape(m, grid.n_steps, n, d)
    T, dt = grid.T, grid.dt

    y = np.broadcast_to(q0, (m, n, d)).copy()
    paths = None
    if keep_paths:
        paths = np.empty((m, grid.n_steps + 1, n, d))
        paths[:, 0] = y
    geo = local_geometry(y, params, mask=True)
    aborted = geo.bad.copy()
    log_phi = np.zeros(m)
    for step in range(grid.n_steps):
        t = step * dt
        if step == grid.n_steps - 1:
            y = v.copy()
        else:
            y_next = y + geo.drift * dt + _attraction(y, v, t, dt, T) + geo.chol @ dW[:, step]
            geo_next = local_geometry(y_next, params, mask=True)
            log_phi += _log_phi_increment(y - v, y_next - v, geo.kinv, geo_next.kinv,
                                          geo.drift, t, dt, T)
            aborted |= geo_next.bad | ~np.isfinite(log_phi)
            y, geo = y_next, geo_next
        if keep_paths:
            paths[:, step + 1] = y
    log_phi[aborted] = np.nan
    if keep_paths:
        paths = paths.reshape(batch + (grid.n_steps + 1, n * d))
    return log_phi.reshape(batch), aborted.reshape(batch), paths


def log_prefactor(q0: np.ndarray, targets: np.ndarray, grid: TimeGrid, params: KernelParams) -> np.ndarray:
    """Log of the Gaussian leading factor for each target.

    ``-(Nd/2) log(2 pi T) - 1/2 log|K(v, v)| - (q0 - v)^T K(q0, q0)^{-1} (q0 - v) / (2T)``
    """
    n, d = q0.shape
    chol_v = _cholesky(kernel_matrix(targets, params))
    logdet_v = 2.0 * d * np.sum(np.log(np.diagonal(chol_v, axis1=-2, axis2=-1)), axis=-1)
    k0inv = local_geometry(q0, params).kinv
    r = q0 - targets
    quad = np.sum(r * (k0inv @ r), axis=(-2, -1))
    return -0.5 * n * d * math.log(2 * math.pi * grid.T) - 0.5 * logdet_v - quad / (2 * grid.T)


def average_phi(log_phi: np.ndarray, aborted: np.ndarray, log_pre: float) -> DensityEstimate:
    """Combine per-sample ``log phi`` into a density estimate (log-sum-exp)."""
    good = log_phi[~aborted]
    if good.size == 0:
        raise EstimationFailedError("all bridge samples were aborted")
    log_mean = logsumexp(good) - math.log(good.size)
    if good.size > 1:
        shift = good.max()
        w = np.exp(good - shift)
        spread = float(np.std(w, ddof=1))
        se = _exp(math.log(spread) - 0.5 * math.log(good.size) + shift + log_pre) if spread > 0 else 0.0
    else:
        se = 0.0 if good[0] == 0.0 else math.inf
    return DensityEstimate(float(log_pre + log_mean), se, int(good.size), int(aborted.sum()))


# ---------------------------------------------------------------------------
# public operations

def simulate_bridge(q0: LandmarkConfig, v: LandmarkConfig, grid: TimeGrid, params: KernelParams,
                    seed: int, increments: np.ndarray | None = None) -> BridgePath:
    pos, target = _as_positions(q0, params), _as_positions(v, params)
    if pos.shape != target.shape:
        raise InvalidArgumentError(f"q0 shape {pos.shape} does not match target shape {target.shape}")
    if increments is None:
        increments = sample_wiener(grid, pos.size, seed).increments
    noise = np.asarray(increments, dtype=float).reshape((1, grid.n_steps) + pos.shape)
    log_phi, aborted, paths = run_bridges(pos, target[None], noise, grid, params, keep_paths=True)
    if aborted[0]:
        raise DegenerateMetricError("bridge aborted: degenerate metric or non-finite state along the path")
    return BridgePath(paths[0], LandmarkConfig(target), float(log_phi[0]), int(seed))


def estimate_density(q0: LandmarkConfig, v: LandmarkConfig, grid: TimeGrid, params: KernelParams,
                     J: int = 100, master_seed: int = 0,
                     increments: np.ndarray | None = None) -> DensityEstimate:
    """Monte Carlo estimate of the Brownian transition density ``p_T(v)`` from ``q0``.

    Bridge ``j`` draws its Wiener increments from stream ``(master_seed, j)``
    unless ``increments`` of shape ``(J, n_steps, Nd)`` are supplied.
    """
    pos, target = _as_positions(q0, params), _as_positions(v, params)
    if pos.shape != target.shape:
        raise InvalidArgumentError(f"q0 shape {pos.shape} does not match target shape {target.shape}")
    if J < 1:
        raise InvalidArgumentError(f"J must be at least 1, got {J}")
    if increments is None:
        increments = wiener_batch(grid, pos.size, master_seed, [(j,) for j in range(J)])
    noise = np.asarray(increments, dtype=float).reshape((1, J, grid.n_steps) + pos.shape)
    targets = np.broadcast_to(target, (1, J) + pos.shape)
    log_phi, aborted, _ = run_bridges(pos, targets, noise, grid, params)
    log_pre = float(log_prefactor(pos, target, grid, params))
    return average_phi(log_phi[0], aborted[0], log_pre)
