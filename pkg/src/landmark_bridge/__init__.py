"""Brownian motion of landmark configurations under a Gaussian-kernel
cometric, guided bridges, transition densities and parameter inference."""

from .bridge import BridgePath, DensityEstimate, estimate_density, guided_step, log_phi_increment, simulate_bridge
from .datasets import make_ellipse, mean_interpoint_distance, synthetic_cardiac
from .errors import DegenerateMetricError, EstimationFailedError, InvalidArgumentError, LandmarkError
from .geometry import (
    ChristoffelTensor,
    Cometric,
    KernelParams,
    LandmarkConfig,
    brownian_drift,
    christoffel,
    cometric,
    cometric_derivative,
    cometric_sqrt,
    kernel_scalar,
)
from .inference import (
    InferenceTrace,
    IterationRecord,
    ObservationSet,
    OptimizerConfig,
    ParamMask,
    ThetaParams,
    density_frechet_mean,
    grad_log_likelihood,
    infer,
    log_likelihood,
)
from .sde import (
    FrameState,
    SampleBatch,
    TimeGrid,
    WienerPath,
    euler_brownian_step,
    heun_frame_step,
    horizontal_fields,
    initial_frame,
    sample_brownian,
    sample_wiener,
    simulate_brownian,
    simulate_frame_bundle,
)

__version__ = "0.1.0"

__all__ = [
    "BridgePath",
    "DensityEstimate",
    "estimate_density",
    "guided_step",
    "log_phi_increment",
    "simulate_bridge",
    "make_ellipse",
    "mean_interpoint_distance",
    "synthetic_cardiac",
    "DegenerateMetricError",
    "EstimationFailedError",
    "InvalidArgumentError",
    "LandmarkError",
    "ChristoffelTensor",
    "Cometric",
    "KernelParams",
    "LandmarkConfig",
    "brownian_drift",
    "christoffel",
    "cometric",
    "cometric_derivative",
    "cometric_sqrt",
    "kernel_scalar",
    "InferenceTrace",
    "IterationRecord",
    "ObservationSet",
    "OptimizerConfig",
    "ParamMask",
    "ThetaParams",
    "density_frechet_mean",
    "grad_log_likelihood",
    "infer",
    "log_likelihood",
    "FrameState",
    "SampleBatch",
    "TimeGrid",
    "WienerPath",
    "euler_brownian_step",
    "heun_frame_step",
    "horizontal_fields",
    "initial_frame",
    "sample_brownian",
    "sample_wiener",
    "simulate_brownian",
    "simulate_frame_bundle",
]
