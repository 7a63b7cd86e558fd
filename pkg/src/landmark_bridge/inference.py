"""Maximum-likelihood estimation of the starting configuration and kernel.

The log-likelihood of i.i.d. observations is the sum of Monte Carlo log
transition densities. Gradients are central finite differences under common
random numbers: one set of Wiener increments is drawn per iteration and reused
for every parameter perturbation, so the estimator is a smooth deterministic
function of ``theta`` within an iteration. Iterations draw fresh increments
(stochastic gradient ascent).

Ascent steps are taken in unconstrained coordinates (``log alpha``,
``log sigma_ii``, and length-normalized ``q0`` and off-diagonal ``sigma``)
and preconditioned by the Fisher information of the Gaussian approximation
``N(q0, T K(q0, q0))`` of one observation. With this scaling a unit step is
roughly a Newton step, and the step size ``epsilon`` is halved whenever the
fixed-seed likelihood fails to increase.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bridge import DensityEstimate, average_phi, log_prefactor, run_bridges
from .errors import EstimationFailedError, InvalidArgumentError, LandmarkError
from .geometry import KernelParams, LandmarkConfig, expand_blocks, kernel_matrix
from .sde import TimeGrid, wiener_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ThetaParams:
    q0: LandmarkConfig
    kernel: KernelParams

    def __post_init__(self):
        if self.q0.dim != self.kernel.dim:
            raise InvalidArgumentError("q0 and kernel dimensions differ")

    def to_dict(self) -> dict:
        return {
            "q0": self.q0.positions.tolist(),
            "alpha": self.kernel.alpha,
            "sigma": self.kernel.sigma.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> ThetaParams:
        try:
            return cls(LandmarkConfig(np.asarray(doc["q0"], dtype=float)),
                       KernelParams(doc["alpha"], np.asarray(doc["sigma"], dtype=float)))
        except (KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"malformed theta document: {exc}") from None


@dataclass(frozen=True, eq=False)
class ObservationSet:
    observations: tuple[LandmarkConfig, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        obs = tuple(self.observations)
        if not obs:
            raise InvalidArgumentError("need at least one observation")
        shape = obs[0].positions.shape
        if any(o.positions.shape != shape for o in obs):
            raise InvalidArgumentError("observations have inconsistent shapes")
        if self.labels is not None and len(self.labels) != len(obs):
            raise InvalidArgumentError("labels and observations differ in length")
        object.__setattr__(self, "observations", obs)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))

    @classmethod
    def from_array(cls, arr, labels=None) -> ObservationSet:
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 3:
            raise InvalidArgumentError(f"expected (n_obs, N, d) array, got shape {arr.shape}")
        return cls(tuple(LandmarkConfig(a) for a in arr), labels)

    @property
    def array(self) -> np.ndarray:
        return np.stack([o.positions for o in self.observations])

    def mean(self) -> LandmarkConfig:
        """Pointwise (per-landmark) mean of the observations."""
        return LandmarkConfig(self.array.mean(axis=0))

    def label(self, i: int) -> str:
        return self.labels[i] if self.labels is not None else f"#{i}"

    def __len__(self) -> int:
        return len(self.observations)


@dataclass(frozen=True)
class ParamMask:
    """Which parameter groups are optimized. ``sigma`` covers the diagonal of
    ``sigma``; ``sigma_offdiag`` additionally frees its strictly lower part."""

    q0: bool = True
    alpha: bool = True
    sigma: bool = True
    sigma_offdiag: bool = False


@dataclass(frozen=True)
class OptimizerConfig:
    step_size: float = 1.0
    max_iters: int = 100
    J: int = 100
    master_seed: int = 0
    param_mask: ParamMask = field(default_factory=ParamMask)
    convergence_tol: float = 1e-6
    patience: int = 3
    fd_step: float = 1e-4
    max_halvings: int = 10

    def __post_init__(self):
        if not self.step_size > 0:
            raise InvalidArgumentError("step_size must be positive")
        if self.J < 1:
            raise InvalidArgumentError("J must be at least 1")
        if self.max_iters < 1:
            raise InvalidArgumentError("max_iters must be positive")
        if not self.convergence_tol > 0:
            raise InvalidArgumentError("convergence_tol must be positive")


@dataclass
class IterationRecord:
    iteration: int
    theta: ThetaParams
    log_likelihood: float
    grad_norm: float | None
    std_errors: tuple[float, ...]
    step_size: float | None

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "theta": self.theta.to_dict(),
            "log_likelihood": self.log_likelihood,
            "grad_norm": self.grad_norm,
            "std_errors": [None if not math.isfinite(s) else s for s in self.std_errors],
            "step_size": self.step_size,
        }


@dataclass
class InferenceTrace:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    error: str | None = None

    def to_list(self) -> list[dict]:
        return [r.to_dict() for r in self.records]


# ---------------------------------------------------------------------------
# parameter vectors

def _sigma_entries(d: int, mask: ParamMask) -> list[tuple[int, int]]:
    entries = []
    if mask.sigma:
        entries += [(i, i) for i in range(d)]
    if mask.sigma_offdiag:
        entries += [(i, j) for i in range(d) for j in range(i)]
    return entries


def parameter_names(theta: ThetaParams, mask: ParamMask) -> list[str]:
    n, d = theta.q0.positions.shape
    names = []
    if mask.q0:
        names += [f"q{i}_{a}" for i in range(n) for a in range(d)]
    if mask.alpha:
        names.append("alpha")
    names += [f"sigma_{i}{j}" for i, j in _sigma_entries(d, mask)]
    return names


def pack(theta: ThetaParams, mask: ParamMask) -> np.ndarray:
    """Active natural parameters in the order of :func:`parameter_names`."""
    parts = []
    if mask.q0:
        parts.append(theta.q0.flat)
    if mask.alpha:
        parts.append([theta.kernel.alpha])
    parts.append([theta.kernel.sigma[i, j] for i, j in _sigma_entries(theta.q0.dim, mask)])
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def unpack(vec: np.ndarray, template: ThetaParams, mask: ParamMask) -> ThetaParams:
    vec = np.asarray(vec, dtype=float)
    q0 = template.q0.positions
    d = template.q0.dim
    pos = 0
    if mask.q0:
        q0 = vec[:q0.size].reshape(q0.shape)
        pos = q0.size
    alpha = template.kernel.alpha
    if mask.alpha:
        alpha = vec[pos]
        pos += 1
    sigma = template.kernel.sigma.copy()
    for i, j in _sigma_entries(d, mask):
        sigma[i, j] = vec[pos]
        pos += 1
    return ThetaParams(LandmarkConfig(q0), KernelParams(alpha, sigma))


def _length_scale(theta: ThetaParams) -> float:
    return float(np.mean(np.diag(theta.kernel.sigma)))


def _coordinate_kinds(theta: ThetaParams, mask: ParamMask) -> np.ndarray:
    """Per active parameter: 0 = length-like, 1 = positive (log-transformed)."""
    d = theta.q0.dim
    kinds = []
    if mask.q0:
        kinds += [0] * theta.q0.positions.size
    if mask.alpha:
        kinds.append(1)
    kinds += [1 if i == j else 0 for i, j in _sigma_entries(d, mask)]
    return np.array(kinds, dtype=int)


# ---------------------------------------------------------------------------
# likelihood and gradient

def observation_noise(grid: TimeGrid, data: ObservationSet, J: int, seed: int) -> np.ndarray:
    """Wiener increments ``(n_obs, J, n_steps, N, d)``; bridge ``j`` of
    observation ``i`` uses stream ``(seed, i, j)``."""
    n_obs = len(data)
    shape = data.observations[0].positions.shape
    keys = [(i, j) for i in range(n_obs) for j in range(J)]
    noise = wiener_batch(grid, int(np.prod(shape)), seed, keys)
    return noise.reshape((n_obs, J, grid.n_steps) + shape)


def _log_likelihood(theta, obs, grid, noise, data):
    q0 = theta.q0.positions
    n_obs, J = noise.shape[:2]
    targets = np.broadcast_to(obs[:, None], (n_obs, J) + q0.shape)
    log_phi, aborted, _ = run_bridges(q0, targets, noise, grid, theta.kernel)
    log_pre = log_prefactor(q0, obs, grid, theta.kernel)
    estimates = []
    for i in range(n_obs):
        try:
            estimates.append(average_phi(log_phi[i], aborted[i], float(log_pre[i])))
        except EstimationFailedError:
            raise EstimationFailedError(
                f"all bridges to observation {data.label(i)} were aborted") from None
    return math.fsum(e.log_value for e in estimates), estimates


def log_likelihood(theta: ThetaParams, data: ObservationSet, grid: TimeGrid, J: int = 100,
                   seed: int = 0, noise: np.ndarray | None = None
                   ) -> tuple[float, list[DensityEstimate]]:
    """Sum of per-observation log density estimates, with the estimates."""
    if noise is None:
        noise = observation_noise(grid, data, J, seed)
    return _log_likelihood(theta, data.array, grid, noise, data)


def _fd_steps(theta: ThetaParams, mask: ParamMask, rel_step: float) -> np.ndarray:
    values = pack(theta, mask)
    scale = np.where(_coordinate_kinds(theta, mask) == 1, np.abs(values),
                     np.maximum(np.abs(values), _length_scale(theta)))
    return rel_step * scale


def grad_log_likelihood(theta: ThetaParams, data: ObservationSet, grid: TimeGrid, J: int = 100,
                        seed: int = 0, mask: ParamMask = ParamMask(), rel_step: float = 1e-4,
                        noise: np.ndarray | None = None) -> np.ndarray:
    """Central-difference gradient of the fixed-seed log-likelihood.

    The result is with respect to the natural parameters listed by
    :func:`parameter_names` (``q0`` coordinates, ``alpha``, ``sigma`` entries).
    Every perturbed evaluation reuses the same Wiener increments.
    """
    if noise is None:
        noise = observation_noise(grid, data, J, seed)
    obs = data.array
    base = pack(theta, mask)
    steps = _fd_steps(theta, mask, rel_step)
    grad = np.empty_like(base)
    for p, h in enumerate(steps):
        up, down = base.copy(), base.copy()
        up[p] += h
        down[p] -= h
        f_up, _ = _log_likelihood(unpack(up, theta, mask), obs, grid, noise, data)
        f_down, _ = _log_likelihood(unpack(down, theta, mask), obs, grid, noise, data)
        grad[p] = (f_up - f_down) / (up[p] - down[p])
    return grad


# ---------------------------------------------------------------------------
# optimizer

def _to_unconstrained(theta, mask, ell):
    vals = pack(theta, mask)
    kinds = _coordinate_kinds(theta, mask)
    return np.where(kinds == 1, np.log(np.where(kinds == 1, vals, 1.0)), vals / ell)


def _from_unconstrained(u, template, mask, ell):
    kinds = _coordinate_kinds(template, mask)
    return unpack(np.where(kinds == 1, np.exp(u), u * ell), template, mask)


def _fisher_step(theta: ThetaParams, mask: ParamMask, grad_u: np.ndarray, ell: float, T: float) -> np.ndarray:
    """Precondition an unconstrained-coordinate gradient by the per-observation
    Fisher information of ``N(q0, T K(q0, q0))``."""
    q0 = theta.q0.positions
    n, d = q0.shape
    step = np.zeros_like(grad_u)
    pos = 0
    if mask.q0:
        K = expand_blocks(kernel_matrix(q0, theta.kernel), d)
        step[:n * d] = (T / ell**2) * (K @ grad_u[:n * d])
        pos = n * d
    n_kernel = grad_u.size - pos
    if n_kernel == 0:
        return step
    # derivatives of the scalar kernel matrix with respect to the kernel coordinates
    u0 = _to_unconstrained(theta, mask, ell)
    k0 = kernel_matrix(q0, theta.kernel)
    dks = []
    for p in range(pos, grad_u.size):
        h = 1e-6
        up, down = u0.copy(), u0.copy()
        up[p] += h
        down[p] -= h
        k_up = kernel_matrix(q0, _from_unconstrained(up, theta, mask, ell).kernel)
        k_down = kernel_matrix(q0, _from_unconstrained(down, theta, mask, ell).kernel)
        dks.append(np.linalg.solve(k0, (k_up - k_down) / (2 * h)))
    fisher = np.array([[0.5 * d * np.trace(a @ b) for b in dks] for a in dks])
    step[pos:] = np.linalg.pinv(fisher, rcond=1e-10, hermitian=True) @ grad_u[pos:]
    return step


def iteration_seed(master_seed: int, iteration: int) -> int:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(iteration),))
    return int(ss.generate_state(1, np.uint64)[0])


def infer(data: ObservationSet, init: ThetaParams, grid: TimeGrid,
          config: OptimizerConfig = OptimizerConfig()) -> tuple[ThetaParams, InferenceTrace]:
    """Stochastic gradient ascent on the Monte Carlo log-likelihood.

    Returns the iterate with the highest recorded log-likelihood and the
    trace. Numerical failure (non-finite likelihood, aborted estimates) stops
    the loop and is reported in ``trace.error`` rather than raised.
    """
    mask = config.param_mask
    if data.observations[0].positions.shape != init.q0.positions.shape:
        raise InvalidArgumentError("initial q0 does not match the observation shape")
    n_obs = len(data)
    ell = _length_scale(init)
    trace = InferenceTrace()
    theta = init
    eps = config.step_size
    stalls = 0

    for it in range(config.max_iters):
        noise = observation_noise(grid, data, config.J, iteration_seed(config.master_seed, it))
        try:
            ll, estimates = log_likelihood(theta, data, grid, noise=noise)
            if not math.isfinite(ll):
                raise EstimationFailedError("non-finite log-likelihood")
            grad = grad_log_likelihood(theta, data, grid, mask=mask, rel_step=config.fd_step, noise=noise)
        except LandmarkError as exc:
            trace.error = f"iteration {it}: {exc}"
            logger.warning("inference stopped: %s", trace.error)
            break
        trace.records.append(IterationRecord(it, theta, ll, float(np.linalg.norm(grad)),
                                             tuple(e.std_error for e in estimates), eps))
        logger.info("iter %d  loglik %.6g  |grad| %.3g  eps %.3g  alpha %.4g", it, ll,
                    np.linalg.norm(grad), eps, theta.kernel.alpha)

        values = pack(theta, mask)
        kinds = _coordinate_kinds(theta, mask)
        grad_u = grad * np.where(kinds == 1, values, ell)
        direction = _fisher_step(theta, mask, grad_u, ell, grid.T) / n_obs
        u = _to_unconstrained(theta, mask, ell)

        accepted = False
        for _ in range(config.max_halvings + 1):
            try:
                candidate = _from_unconstrained(u + eps * direction, theta, mask, ell)
                ll_new, _ = log_likelihood(candidate, data, grid, noise=noise)
            except LandmarkError:
                ll_new = -math.inf
            if math.isfinite(ll_new) and ll_new >= ll:
                accepted = True
                break
            eps *= 0.5
        if accepted:
            gain = (ll_new - ll) / max(abs(ll), 1.0)
            theta = candidate
            eps = min(2.0 * eps, config.step_size)
        else:
            gain = 0.0
            eps = config.step_size
        stalls = stalls + 1 if gain < config.convergence_tol else 0
        if stalls >= config.patience:
            trace.converged = True
            break

    if trace.error is None:
        final_it = len(trace.records)
        try:
            ll, estimates = log_likelihood(theta, data, grid, config.J,
                                           iteration_seed(config.master_seed, final_it))
            trace.records.append(IterationRecord(final_it, theta, ll, None,
                                                 tuple(e.std_error for e in estimates), None))
        except LandmarkError as exc:
            trace.error = f"final evaluation: {exc}"
    if not trace.records:
        return init, trace
    best = max(trace.records, key=lambda r: r.log_likelihood)
    return best.theta, trace


def density_frechet_mean(data: ObservationSet, kernel: KernelParams, init_q0: LandmarkConfig,
                         grid: TimeGrid, config: OptimizerConfig = OptimizerConfig()) -> LandmarkConfig:
    """Minimizer over ``q0`` of ``-(2/n) sum_i log p_T(q^i)`` with the kernel held fixed."""
    config = replace(config, param_mask=ParamMask(q0=True, alpha=False, sigma=False))
    theta, trace = infer(data, ThetaParams(init_q0, kernel), grid, config)
    if trace.error is not None and len(trace.records) == 0:
        raise EstimationFailedError(trace.error)
    return theta.q0
