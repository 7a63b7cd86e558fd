"""Forward simulation of landmark Brownian motion.

Two schemes are provided: explicit Euler-Maruyama on the coordinate Ito
equation, and a Heun integrator for the Stratonovich equation of the
orthonormal frame bundle (Eells-Elworthy-Malliavin construction). Both target
the diffusion with generator one half the Laplace-Beltrami operator.

Randomness comes from counter-based Philox streams keyed by
``(seed, *key)`` so that every sample path can be regenerated independently of
how many other paths were drawn or in which order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMetricError, InvalidArgumentError
from .geometry import (
    KernelParams,
    LandmarkConfig,
    _as_positions,
    christoffel_array,
    expand_blocks,
    local_geometry,
)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k T / n_steps`` on ``[0, T]``."""

    T: float = 1.0
    n_steps: int = 100

    def __post_init__(self):
        if not np.isfinite(self.T) or self.T <= 0:
            raise InvalidArgumentError(f"T must be positive, got {self.T!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidArgumentError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True, eq=False)
class WienerPath:
    increments: np.ndarray  # (n_steps, dim), entries N(0, dt)
    seed: int


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for stream ``key`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def sample_wiener(grid: TimeGrid, dim: int, seed: int, key: tuple[int, ...] = ()) -> WienerPath:
    if dim < 1:
        raise InvalidArgumentError(f"dim must be positive, got {dim}")
    z = rng_stream(seed, *key).standard_normal((grid.n_steps, dim))
    return WienerPath(z * np.sqrt(grid.dt), int(seed))


def wiener_batch(grid: TimeGrid, dim: int, seed: int, keys) -> np.ndarray:
    """Stack of increments ``(len(keys), n_steps, dim)``, one stream per key."""
    keys = list(keys)
    out = np.empty((len(keys), grid.n_steps, dim))
    for idx, key in enumerate(keys):
        out[idx] = sample_wiener(grid, dim, seed, tuple(key)).increments
    return out


# ---------------------------------------------------------------------------
# Euler-Maruyama (Ito, coordinates)

def _euler_step(q, dW, dt, params, mask=False):
    geo = local_geometry(q, params, mask=mask)
    q_next = q + geo.drift * dt + geo.chol @ dW
    return q_next, geo.bad


def euler_brownian_step(q: LandmarkConfig, dW, dt: float, params: KernelParams) -> LandmarkConfig:
    """One explicit Euler-Maruyama step ``q + b(q) dt + sqrt(K(q)) dW``."""
    pos = _as_positions(q, params)
    dW = np.asarray(dW, dtype=float).reshape(pos.shape)
    q_next, _ = _euler_step(pos, dW, float(dt), params)
    return LandmarkConfig(q_next)


def simulate_brownian(
    q0: LandmarkConfig,
    grid: TimeGrid,
    params: KernelParams,
    seed: int,
    increments: np.ndarray | None = None,
) -> np.ndarray:
    """Euler-Maruyama path, shape ``(n_steps + 1, Nd)``.

    ``increments`` overrides the seeded Wiener increments.
    """
    pos = _as_positions(q0, params)
    n, d = pos.shape
    if increments is None:
        increments = sample_wiener(grid, n * d, seed).increments
    increments = np.asarray(increments, dtype=float).reshape(grid.n_steps, n, d)
    path = np.empty((grid.n_steps + 1, n, d))
    path[0] = pos
    for step in range(grid.n_steps):
        try:
            path[step + 1], _ = _euler_step(path[step], increments[step], grid.dt, params)
        except DegenerateMetricError as exc:
            raise DegenerateMetricError("degenerate metric during Brownian simulation", step) from exc
        if not np.all(np.isfinite(path[step + 1])):
            raise DegenerateMetricError("non-finite state during Brownian simulation", step)
    return path.reshape(grid.n_steps + 1, n * d)


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Endpoints (and optionally full paths) of independently seeded samples.

    Aborted samples (degenerate metric or non-finite state) are flagged and
    their rows hold NaN.
    """

    endpoints: np.ndarray             # (n_samples, Nd)
    aborted: np.ndarray               # (n_samples,) bool
    paths: np.ndarray | None = None   # (n_samples, n_steps + 1, Nd)


def sample_brownian(
    q0: LandmarkConfig,
    grid: TimeGrid,
    params: KernelParams,
    n_samples: int,
    seed: int,
    keep_paths: bool = False,
    scheme: str = "euler",
) -> SampleBatch:
    """Simulate ``n_samples`` Brownian paths; sample ``s`` uses stream ``(seed, s)``.

    ``scheme`` is ``"euler"`` (Ito coordinates) or ``"heun"`` (frame bundle).
    """
    pos = _as_positions(q0, params)
    n, d = pos.shape
    if n_samples < 0:
        raise InvalidArgumentError("n_samples must be nonnegative")
    if n_samples == 0:
        empty = np.empty((0, n * d))
        return SampleBatch(empty, np.zeros(0, dtype=bool),
                           np.empty((0, grid.n_steps + 1, n * d)) if keep_paths else None)
    noise = wiener_batch(grid, n * d, seed, [(s,) for s in range(n_samples)])
    noise = noise.reshape(n_samples, grid.n_steps, n, d)
    if scheme == "euler":
        paths, aborted = _euler_batch(pos, noise, grid, params)
    elif scheme == "heun":
        paths, aborted = _heun_batch(pos, noise, grid, params)
    else:
        raise InvalidArgumentError(f"unknown scheme {scheme!r}")
    paths = paths.reshape(n_samples, grid.n_steps + 1, n * d)
    paths[aborted] = np.nan
    return SampleBatch(paths[:, -1].copy(), aborted, paths if keep_paths else None)


def _euler_batch(pos, noise, grid, params):
    m = noise.shape[0]
    paths = np.empty((m, grid.n_steps + 1) + pos.shape)
    paths[:, 0] = pos
    aborted = np.zeros(m, dtype=bool)
    q = paths[:, 0]
    for step in range(grid.n_steps):
        q, bad = _euler_step(q, noise[:, step], grid.dt, params, mask=True)
        aborted |= bad | ~np.isfinite(q).all(axis=(-2, -1))
        q = np.where(aborted[:, None, None], pos, q)
        paths[:, step + 1] = q
    return paths, aborted


# ---------------------------------------------------------------------------
# frame bundle (Stratonovich, Heun)

@dataclass(frozen=True, eq=False)
class FrameState:
    """Base configuration plus a frame whose columns span the tangent space."""

    base: LandmarkConfig
    frame: np.ndarray  # (Nd, Nd), column i is frame vector e_i


def initial_frame(q: LandmarkConfig, params: KernelParams) -> FrameState:
    """Frame given by the Cholesky factor of the cometric; its columns are
    orthonormal for the metric ``g = K^{-1}``."""
    pos = _as_positions(q, params)
    geo = local_geometry(pos, params)
    return FrameState(LandmarkConfig(pos), expand_blocks(geo.chol, pos.shape[-1]))


def horizontal_fields(u: FrameState, params: KernelParams) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal vector fields ``H_i`` at ``u``.

    Returns ``(base_motion, frame_motion)`` where ``base_motion[:, i] = e_i``
    and ``frame_motion[i]`` is the ``Nd x Nd`` velocity of the frame along
    ``H_i``: column ``j`` is ``-Gamma^m_{kl} e_i^k e_j^l``.
    """
    gamma = christoffel_array(u.base.positions, params)
    e = np.asarray(u.frame, dtype=float)
    frame_motion = -np.einsum("mkl,ki,lj->imj", gamma, e, e)
    return e.copy(), frame_motion


def _drive(q, frame, dW, params):
    """``H_i(u) dW^i`` for batched flat states; returns base and frame velocity."""
    n, d = q.shape[-2:]
    gamma = christoffel_array(q, params)
    w = np.einsum("...mi,...i->...m", frame, dW)
    # contract Gamma^m_{kl} with w^k, then with the frame columns
    gw = (w[..., None, None, :] @ gamma)[..., 0, :]
    dframe = -(gw @ frame)
    return w.reshape(q.shape), dframe


def _heun(q, frame, dW, params):
    vq, vf = _drive(q, frame, dW, params)
    wq, wf = _drive(q + vq, frame + vf, dW, params)
    return q + 0.5 * (vq + wq), frame + 0.5 * (vf + wf)


def heun_frame_step(u: FrameState, dW, params: KernelParams) -> FrameState:
    """Predictor ``v = H_i(u) dW^i``; corrector ``u + (v + H_i(u + v) dW^i) / 2``."""
    pos = u.base.positions
    dW = np.asarray(dW, dtype=float).reshape(-1)
    q_next, f_next = _heun(pos, np.asarray(u.frame, dtype=float), dW, params)
    return FrameState(LandmarkConfig(q_next), f_next)


def simulate_frame_bundle(
    q0: LandmarkConfig,
    grid: TimeGrid,
    params: KernelParams,
    seed: int,
    increments: np.ndarray | None = None,
) -> np.ndarray:
    """Base-point path of the frame-bundle Brownian motion, ``(n_steps + 1, Nd)``."""
    u = initial_frame(q0, params)
    n, d = u.base.positions.shape
    if increments is None:
        increments = sample_wiener(grid, n * d, seed).increments
    increments = np.asarray(increments, dtype=float).reshape(grid.n_steps, n * d)
    path = np.empty((grid.n_steps + 1, n * d))
    path[0] = u.base.flat
    q, frame = u.base.positions, u.frame
    for step in range(grid.n_steps):
        try:
            q, frame = _heun(q, frame, increments[step], params)
        except DegenerateMetricError as exc:
            raise DegenerateMetricError("degenerate metric during frame-bundle simulation", step) from exc
        path[step + 1] = q.reshape(-1)
    return path


def _heun_batch(pos, noise, grid, params):
    m = noise.shape[0]
    n, d = pos.shape
    frame0 = initial_frame(LandmarkConfig(pos), params).frame
    paths = np.empty((m, grid.n_steps + 1) + pos.shape)
    paths[:, 0] = pos
    q = paths[:, 0].copy()
    frame = np.broadcast_to(frame0, (m, n * d, n * d)).copy()
    flat_noise = noise.reshape(m, grid.n_steps, n * d)
    aborted = np.zeros(m, dtype=bool)
    for step in range(grid.n_steps):
        try:
            q, frame = _heun(q, frame, flat_noise[:, step], params)
        except DegenerateMetricError:
            # redo the step sample by sample to isolate the offenders
            q_new, f_new = q.copy(), frame.copy()
            for idx in np.flatnonzero(~aborted):
                try:
                    q_new[idx], f_new[idx] = _heun(q[idx], frame[idx], flat_noise[idx, step], params)
                except DegenerateMetricError:
                    aborted[idx] = True
            q, frame = q_new, f_new
        aborted |= ~np.isfinite(q).all(axis=(-2, -1))
        q[aborted], frame[aborted] = pos, frame0
        paths[:, step + 1] = q
    return paths, aborted
