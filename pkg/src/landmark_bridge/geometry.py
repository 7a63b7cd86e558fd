"""Gaussian landmark kernel, cometric, and the Levi-Civita connection.

Configurations of ``N`` landmarks in ``R^d`` are handled internally as arrays
of shape ``(..., N, d)``; leading axes are batch axes and every array-level
function here broadcasts over them. The flat coordinate vector in ``R^{Nd}``
is landmark-major, so flat index ``i*d + a`` is axis ``a`` of landmark ``i``.

Because the kernel is ``Id_d`` times a scalar, the ``Nd x Nd`` cometric is
``kron(k, Id_d)`` for the ``N x N`` scalar kernel matrix ``k``. The fast paths
(Cholesky factor, inverse, Brownian drift) work with ``k`` directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import DegenerateMetricError, InvalidArgumentError


@dataclass(frozen=True, eq=False)
class LandmarkConfig:
    """A point of the landmark manifold: ``N`` positions in ``R^d``."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[0] < 1 or pos.shape[1] < 1:
            raise InvalidArgumentError(
                f"positions must be an N x d array with N, d >= 1, got shape {pos.shape}"
            )
        if not np.all(np.isfinite(pos)):
            raise InvalidArgumentError("landmark coordinates must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @classmethod
    def from_flat(cls, flat, d: int) -> LandmarkConfig:
        flat = np.asarray(flat, dtype=float)
        if flat.ndim != 1 or d < 1 or flat.size % d:
            raise InvalidArgumentError(f"cannot unflatten vector of size {flat.size} with d={d}")
        return cls(flat.reshape(-1, d))

    @property
    def n_landmarks(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.positions.reshape(-1)

    def __len__(self) -> int:
        return self.positions.size

    def __repr__(self) -> str:
        return f"LandmarkConfig(N={self.n_landmarks}, d={self.dim})"


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Amplitude ``alpha`` and lower-triangular square root ``sigma`` of the
    spatial covariance ``Sigma = sigma sigma^T``."""

    alpha: float
    sigma: np.ndarray

    def __post_init__(self):
        alpha = float(self.alpha)
        sigma = np.atleast_2d(np.array(self.sigma, dtype=float))
        if not np.isfinite(alpha) or alpha <= 0:
            raise InvalidArgumentError(f"alpha must be positive and finite, got {self.alpha!r}")
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise InvalidArgumentError(f"sigma must be a square matrix, got shape {sigma.shape}")
        if not np.all(np.isfinite(sigma)):
            raise InvalidArgumentError("sigma must be finite")
        if np.any(np.triu(sigma, 1) != 0):
            raise InvalidArgumentError("sigma must be lower triangular")
        if np.any(np.diag(sigma) <= 0):
            raise InvalidArgumentError("sigma must have a positive diagonal")
        sigma.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def isotropic(cls, alpha: float, scale: float, d: int) -> KernelParams:
        return cls(alpha, scale * np.eye(d))

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        return self.sigma @ self.sigma.T

    @cached_property
    def precision(self) -> np.ndarray:
        """``Sigma^{-1}``, exactly symmetric."""
        sinv = np.linalg.inv(self.sigma)
        p = sinv.T @ sinv
        return 0.5 * (p + p.T)

    def __repr__(self) -> str:
        return f"KernelParams(alpha={self.alpha!r}, sigma={self.sigma.tolist()!r})"


@dataclass(frozen=True, eq=False)
class Cometric:
    """The ``Nd x Nd`` cometric ``K(q, q)`` with lazily computed factorizations."""

    matrix: np.ndarray
    dim: int

    @cached_property
    def cholesky(self) -> np.ndarray:
        return _cholesky(self.matrix)

    @cached_property
    def inverse(self) -> np.ndarray:
        """The metric ``A = K^{-1}``."""
        linv = np.linalg.inv(self.cholesky)
        a = linv.T @ linv
        return 0.5 * (a + a.T)

    @property
    def is_degenerate(self) -> bool:
        try:
            self.cholesky
        except DegenerateMetricError:
            return True
        return False


@dataclass(frozen=True, eq=False)
class ChristoffelTensor:
    """``gamma[i, k, l]`` is ``Gamma^i_{kl}``; ``contracted[i]`` is
    ``g^{kl} Gamma^i_{kl}``."""

    gamma: np.ndarray
    contracted: np.ndarray


# ---------------------------------------------------------------------------
# array-level kernels

def _as_positions(q, params: KernelParams | None = None) -> np.ndarray:
    if isinstance(q, LandmarkConfig):
        q = q.positions
    q = np.asarray(q, dtype=float)
    if q.ndim < 2:
        raise InvalidArgumentError(f"expected positions of shape (..., N, d), got {q.shape}")
    if params is not None and q.shape[-1] != params.dim:
        raise InvalidArgumentError(
            f"landmark dimension {q.shape[-1]} does not match kernel dimension {params.dim}"
        )
    return q


def pairwise(q: np.ndarray, params: KernelParams) -> tuple[np.ndarray, np.ndarray]:
    """Scalar kernel matrix ``k[..., i, j]`` and ``Sigma^{-1}(q_i - q_j)``.

    The second array has shape ``(..., N, N, d)``.
    """
    diff = q[..., :, None, :] - q[..., None, :, :]
    pdiff = diff @ params.precision
    r2 = np.einsum("...k,...k->...", diff, pdiff)
    return params.alpha * np.exp(-0.5 * r2), pdiff


def kernel_matrix(q, params: KernelParams) -> np.ndarray:
    return pairwise(_as_positions(q, params), params)[0]


def expand_blocks(k: np.ndarray, d: int) -> np.ndarray:
    """``kron(k, Id_d)`` over the trailing two axes."""
    n = k.shape[-1]
    eye = np.eye(d)
    full = k[..., :, None, :, None] * eye[:, None, :]
    return full.reshape(k.shape[:-2] + (n * d, n * d))


def _cholesky(k: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        raise DegenerateMetricError("cometric is not positive definite") from None
    if not np.all(np.isfinite(chol)):
        raise DegenerateMetricError("cometric factorization is not finite")
    return chol


def _cholesky_masked(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched Cholesky that flags failures instead of raising.

    Failed entries get an identity factor so downstream arithmetic stays finite;
    the boolean mask over the batch shape marks them.
    """
    batch = k.shape[:-2]
    try:
        chol = np.linalg.cholesky(k)
        bad = ~np.isfinite(chol).all(axis=(-2, -1))
    except np.linalg.LinAlgError:
        flat = k.reshape((-1,) + k.shape[-2:])
        chol = np.empty_like(flat)
        bad = np.zeros(flat.shape[0], dtype=bool)
        for idx, mat in enumerate(flat):
            try:
                chol[idx] = np.linalg.cholesky(mat)
            except np.linalg.LinAlgError:
                bad[idx] = True
        chol = chol.reshape(k.shape)
        bad = bad.reshape(batch) | ~np.isfinite(chol).all(axis=(-2, -1))
    if np.any(bad):
        chol[bad] = np.eye(k.shape[-1])
    return chol, bad


class LocalGeometry(NamedTuple):
    """Per-configuration quantities shared by the simulation schemes."""

    k: np.ndarray        # (..., N, N) scalar kernel matrix
    chol: np.ndarray     # (..., N, N) lower Cholesky factor of k
    kinv: np.ndarray     # (..., N, N) inverse of k
    drift: np.ndarray    # (..., N, d) Ito drift of Brownian motion
    bad: np.ndarray      # (...) degenerate-metric flags (all False when raising)


def local_geometry(q: np.ndarray, params: KernelParams, mask: bool = False) -> LocalGeometry:
    """Factorize the kernel matrix at ``q`` and evaluate the Brownian drift.

    With ``mask=False`` a degenerate configuration raises
    :class:`DegenerateMetricError`; with ``mask=True`` it is flagged in
    ``bad`` and given harmless placeholder values.
    """
    k, pdiff = pairwise(q, params)
    if mask:
        chol, bad = _cholesky_masked(k)
    else:
        chol = _cholesky(k)
        bad = np.zeros(k.shape[:-2], dtype=bool)
    kinv = np.linalg.inv(chol)
    kinv = np.swapaxes(kinv, -1, -2) @ kinv
    if np.any(bad):
        k = k.copy()
        k[bad] = np.eye(k.shape[-1])
    drift = _drift_from(k, kinv, pdiff, q.shape[-1])
    return LocalGeometry(k, chol, kinv, drift, bad)


def _drift_from(k, kinv, pdiff, d):
    # Ito drift -1/2 g^{kl} Gamma^i_{kl} = 1/2 div_j K^{ij} - 1/4 K^{ij} d_j log det K
    dk = k[..., None] * pdiff                       # dk[i, j] = d k_ij / d q_j
    div = dk.sum(axis=-2)
    grad_logdet = -2.0 * d * np.einsum("...pj,...pjg->...pg", kinv, dk)
    return 0.5 * div - 0.25 * (k @ grad_logdet)


def brownian_drift(q, params: KernelParams) -> np.ndarray:
    """Ito drift of Riemannian Brownian motion, shape ``(..., N, d)``.

    Uses the divergence form ``1/2 |g|^{-1/2} d_j(|g|^{1/2} g^{ij})`` which
    equals ``-1/2 g^{kl} Gamma^i_{kl}`` and costs O(N^3) instead of O((Nd)^3).
    """
    q = _as_positions(q, params)
    return local_geometry(q, params).drift


def cometric_derivative_array(q: np.ndarray, params: KernelParams) -> np.ndarray:
    """``dK[..., m, a, b] = d K^{ab} / d q^m`` over flat indices."""
    n, d = q.shape[-2:]
    k, pdiff = pairwise(q, params)
    dk = k[..., None] * pdiff                       # d k_ij / d q_j; d k_ij / d q_i = -dk
    eye = np.eye(n)
    # dkmat[p, g, i, j] = d k_ij / d q_{p, g}
    dkmat = np.einsum("pj,...ijg->...pgij", eye, dk) - np.einsum("pi,...ijg->...pgij", eye, dk)
    full = expand_blocks(dkmat, d)                  # (..., N, d, Nd, Nd)
    return full.reshape(q.shape[:-2] + (n * d, n * d, n * d))


def christoffel_array(q: np.ndarray, params: KernelParams) -> np.ndarray:
    """``Gamma[..., i, k, l]`` of the metric ``g = K^{-1}``."""
    d = q.shape[-1]
    geo = local_geometry(q, params)
    cometric = expand_blocks(geo.k, d)
    g = expand_blocks(geo.kinv, d)
    dK = cometric_derivative_array(q, params)
    gb = g[..., None, :, :]
    dg = -(gb @ dK @ gb)
    dg = 0.5 * (dg + np.swapaxes(dg, -1, -2))
    # dg[m, a, b] = d_m g_ab;  Gamma^i_kl = 1/2 g^im (d_k g_ml + d_l g_mk - d_m g_kl)
    lowered = dg.swapaxes(-3, -2) + np.einsum("...lmk->...mkl", dg) - dg
    nd = cometric.shape[-1]
    flat = lowered.reshape(lowered.shape[:-2] + (nd * nd,))
    gamma = 0.5 * (cometric @ flat).reshape(lowered.shape)
    return 0.5 * (gamma + np.swapaxes(gamma, -1, -2))


# ---------------------------------------------------------------------------
# public operations

def kernel_scalar(r2: float, params: KernelParams) -> float:
    """Gaussian kernel ``alpha * exp(-r2 / 2)`` of a squared Sigma-distance."""
    r2 = float(r2)
    if not np.isfinite(r2) or r2 < 0:
        raise InvalidArgumentError(f"r2 must be finite and nonnegative, got {r2!r}")
    return params.alpha * float(np.exp(-0.5 * r2))


def cometric(q: LandmarkConfig, params: KernelParams) -> Cometric:
    pos = _as_positions(q, params)
    return Cometric(expand_blocks(kernel_matrix(pos, params), pos.shape[-1]), pos.shape[-1])


def cometric_sqrt(K: Cometric) -> np.ndarray:
    """Lower-triangular ``L`` with ``L L^T = K``."""
    return K.cholesky


def cometric_derivative(q: LandmarkConfig, params: KernelParams) -> np.ndarray:
    """Analytic derivative ``dK[m, i, j] = d K^{ij} / d q^m``."""
    return cometric_derivative_array(_as_positions(q, params), params)


def christoffel(q: LandmarkConfig, params: KernelParams) -> ChristoffelTensor:
    pos = _as_positions(q, params)
    gamma = christoffel_array(pos, params)
    K = expand_blocks(kernel_matrix(pos, params), pos.shape[-1])
    contracted = np.einsum("...kl,...ikl->...i", K, gamma)
    return ChristoffelTensor(gamma, contracted)
