"""Landmark dataset CSV files and JSON run configuration.

Dataset layout::

    # N=10,d=2
    q0_x,q0_y,q1_x,q1_y,...
    0.10000000000000001,...

One row per configuration, landmark-major columns. An optional leading
``label`` column carries identifiers. Values are written with 17 significant
digits so a save/load round trip is exact.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .datasets import mean_interpoint_distance
from .geometry import KernelParams, LandmarkConfig
from .inference import OptimizerConfig, ParamMask
from .sde import TimeGrid

_AXES = "xyz"
_COLUMN = re.compile(r"^q(\d+)_(\w+)$")


class ConfigError(InvalidArgumentError):
    """Invalid configuration or input file."""


def _fmt(x: float) -> str:
    return "%.17g" % x


def axis_name(a: int, d: int) -> str:
    return _AXES[a] if d <= len(_AXES) else str(a)


def column_names(n: int, d: int) -> list[str]:
    return [f"q{i}_{axis_name(a, d)}" for i in range(n) for a in range(d)]


def write_dataset(path, arr: np.ndarray, labels=None) -> None:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim != 3:
        raise InvalidArgumentError(f"expected (n_obs, N, d) array, got shape {arr.shape}")
    n_obs, n, d = arr.shape
    lines = [f"# N={n},d={d}"]
    header = column_names(n, d)
    if labels is not None:
        header = ["label"] + header
    lines.append(",".join(header))
    for idx, row in enumerate(arr.reshape(n_obs, n * d)):
        cells = [_fmt(x) for x in row]
        if labels is not None:
            cells = [str(labels[idx])] + cells
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def read_dataset(path) -> tuple[np.ndarray, list[str] | None]:
    """Load ``(array (n_obs, N, d), labels or None)`` from a dataset CSV."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc.strerror}") from None
    meta = {}
    rows = []
    header = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for item in line[1:].split(","):
                if "=" in item:
                    key, val = item.split("=", 1)
                    meta[key.strip()] = val.strip()
            continue
        if header is None:
            header = [c.strip() for c in line.split(",")]
            continue
        rows.append((lineno, [c.strip() for c in line.split(",")]))
    if header is None:
        raise ConfigError(f"{path}: missing header row")
    has_label = header[0] == "label"
    coords = header[1:] if has_label else header
    parsed = [_COLUMN.match(c) for c in coords]
    if not coords or not all(parsed):
        raise ConfigError(f"{path}: header columns must be named q<i>_<axis>")
    n = max(int(m.group(1)) for m in parsed) + 1
    if len(coords) % n:
        raise ConfigError(f"{path}: column count {len(coords)} is not a multiple of N={n}")
    d = len(coords) // n
    if coords != column_names(n, d):
        raise ConfigError(f"{path}: columns are not in landmark-major order")
    if "N" in meta and int(meta["N"]) != n or "d" in meta and int(meta["d"]) != d:
        raise ConfigError(f"{path}: header metadata does not match columns")
    labels = [] if has_label else None
    values = np.empty((len(rows), n * d))
    for r, (lineno, cells) in enumerate(rows):
        if len(cells) != len(header):
            raise ConfigError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        if has_label:
            labels.append(cells[0])
            cells = cells[1:]
        try:
            values[r] = [float(c) for c in cells]
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: non-numeric value") from None
    if not np.all(np.isfinite(values)):
        raise ConfigError(f"{path}: non-finite coordinates")
    return values.reshape(len(rows), n, d), labels


def write_trajectories(path, paths: np.ndarray, times: np.ndarray, n: int, d: int) -> None:
    """Per-sample path table with columns ``sample,step,t,q<i>_<axis>...``."""
    lines = [f"# N={n},d={d}", ",".join(["sample", "step", "t"] + column_names(n, d))]
    for s, sample in enumerate(paths):
        for k, row in enumerate(sample):
            lines.append(",".join([str(s), str(k), _fmt(times[k])] + [_fmt(x) for x in row]))
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def _clean(obj):
    """Replace non-finite floats by ``None`` so the document is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dump_json(doc, path=None) -> str:
    text = json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path is not None:
        Path(path).write_text(text, newline="\n")
    return text


# ---------------------------------------------------------------------------
# run configuration

@dataclass
class RunConfig:
    alpha: float = 0.01
    sigma: list | float | None = None  # None: mean inter-point distance of q0
    T: float = 1.0
    n_steps: int = 100
    J: int = 100
    samples: int = 64
    seed: int = 0
    optimizer: dict = field(default_factory=dict)

    def kernel(self, q: LandmarkConfig) -> KernelParams:
        """Kernel parameters for configurations shaped like ``q``; an absent
        ``sigma`` defaults to the mean inter-point distance of ``q``."""
        d = q.dim
        sigma = self.sigma
        if sigma is None:
            if q.n_landmarks < 2:
                raise ConfigError("kernel.sigma is required for a single landmark")
            sigma = mean_interpoint_distance(q)
        arr = np.asarray(sigma, dtype=float)
        if arr.ndim == 0:
            arr = float(arr) * np.eye(d)
        elif arr.ndim == 1:
            arr = np.diag(arr)
        if arr.shape != (d, d):
            raise ConfigError(f"kernel.sigma must be a scalar, a length-{d} diagonal or a {d}x{d} matrix")
        try:
            return KernelParams(self.alpha, arr)
        except InvalidArgumentError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def grid(self) -> TimeGrid:
        try:
            return TimeGrid(self.T, self.n_steps)
        except InvalidArgumentError as exc:
            raise ConfigError(str(exc)) from None

    def optimizer_config(self) -> OptimizerConfig:
        opts = dict(self.optimizer)
        mask = opts.pop("param_mask", {})
        known = {"step_size", "max_iters", "convergence_tol", "patience", "fd_step", "max_halvings"}
        unknown = set(opts) - known
        if unknown:
            raise ConfigError(f"unknown optimizer settings: {sorted(unknown)}")
        try:
            return OptimizerConfig(J=self.J, master_seed=self.seed,
                                   param_mask=ParamMask(**mask), **opts)
        except TypeError as exc:
            raise ConfigError(f"bad optimizer settings: {exc}") from None
        except InvalidArgumentError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path=None) -> RunConfig:
    """Read a JSON run configuration; missing sections take defaults."""
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    cfg = RunConfig()
    for section in ("kernel", "grid", "sampler", "optimizer"):
        if not isinstance(doc.get(section, {}), dict):
            raise ConfigError(f"config section {section!r} must be an object")
    kernel = doc.get("kernel", {})
    grid = doc.get("grid", {})
    sampler = doc.get("sampler", {})
    try:
        if "alpha" in kernel:
            cfg.alpha = float(kernel["alpha"])
        if "sigma" in kernel:
            cfg.sigma = kernel["sigma"]
        if "T" in grid:
            cfg.T = float(grid["T"])
        if "n_steps" in grid:
            cfg.n_steps = _as_int(grid["n_steps"], "grid.n_steps")
        if "J" in sampler:
            cfg.J = _as_int(sampler["J"], "sampler.J")
        if "samples" in sampler:
            cfg.samples = _as_int(sampler["samples"], "sampler.samples")
        if "seed" in sampler:
            cfg.seed = _as_int(sampler["seed"], "sampler.seed")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None
    cfg.optimizer = dict(doc.get("optimizer", {}))
    return cfg


def _as_int(value, name: str) -> int:
    if isinstance(value, bool) or int(value) != value:
        raise ConfigError(f"{name} must be an integer")
    return int(value)
