"""Command-line driver: ``landmark-bridge <command> [options]``.

Exit codes: 0 on success, 2 for configuration or input errors, 3 for
numerical failures. Errors are reported on stderr as one line of JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .bridge import estimate_density, simulate_bridge
from .datasets import make_ellipse, mean_interpoint_distance, synthetic_cardiac
from .errors import InvalidArgumentError, LandmarkError
from .geometry import LandmarkConfig
from .inference import ObservationSet, ThetaParams, infer
from .sde import sample_brownian

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(EXIT_CONFIG, "usage", message)


def _fail(code: int, kind: str, message: str):
    sys.stderr.write(json.dumps({"error": kind, "message": str(message), "exit_code": code}) + "\n")
    raise SystemExit(code)


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=_u64, help="master seed (overrides sampler.seed)")
    p.add_argument("--out", type=Path, help="output file (default: stdout where sensible)")
    p.add_argument("--steps", type=int, help="number of time steps (overrides grid.n_steps)")
    p.add_argument("--samples", "-J", type=int, dest="samples",
                   help="sample count or bridges per density (overrides sampler)")
    p.add_argument("--T", type=float, dest="T", help="time horizon (overrides grid.T)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="landmark-bridge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-ellipse", parents=[common], help="landmarks on an ellipse")
    p.add_argument("--n-landmarks", type=int, default=10)
    p.add_argument("--axes", type=float, nargs=2, default=(1.0, 0.5), metavar=("A", "B"))
    p.add_argument("--center", type=float, nargs=2, default=(0.0, 0.0), metavar=("X", "Y"))

    p = sub.add_parser("make-cardiac", parents=[common], help="synthetic stand-in for outline data")
    p.add_argument("--n-configs", type=int, default=14)
    p.add_argument("--n-landmarks", type=int, default=17)
    p.add_argument("--noise", type=float, default=0.03)

    p = sub.add_parser("sample", parents=[common], help="endpoint samples of landmark Brownian motion")
    p.add_argument("q0", type=Path)
    p.add_argument("--trajectories", type=Path, help="also write every path to this CSV")
    p.add_argument("--scheme", choices=("euler", "heun"), default="euler")

    p = sub.add_parser("bridge", parents=[common], help="one guided bridge q0 -> target")
    p.add_argument("q0", type=Path)
    p.add_argument("target", type=Path)

    p = sub.add_parser("density", parents=[common], help="Monte Carlo transition density")
    p.add_argument("q0", type=Path)
    p.add_argument("target", type=Path)

    p = sub.add_parser("infer", parents=[common], help="estimate q0 and kernel parameters")
    p.add_argument("data", type=Path)
    p.add_argument("--init", type=Path, help="initial theta JSON (default: sample mean)")

    p = sub.add_parser("model-check", parents=[common],
                       help="per-landmark moments of data vs samples from theta")
    p.add_argument("data", type=Path)
    p.add_argument("theta", type=Path, nargs="?")
    p.add_argument("--compare", type=Path, help="compare against this dataset instead of simulating")
    p.add_argument("--csv", type=Path, help="also write the moment table as CSV")
    p.add_argument("--scheme", choices=("euler", "heun"), default="euler")
    return parser


# ---------------------------------------------------------------------------
# helpers

def _settings(args) -> io.RunConfig:
    cfg = io.load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.steps is not None:
        cfg.n_steps = args.steps
    if args.T is not None:
        cfg.T = args.T
    return cfg


def _single(path: Path) -> LandmarkConfig:
    arr, _ = io.read_dataset(path)
    if arr.shape[0] != 1:
        raise io.ConfigError(f"{path}: expected exactly one configuration, found {arr.shape[0]}")
    return LandmarkConfig(arr[0])


def _emit(doc, out: Path | None):
    text = io.dump_json(doc, out)
    if out is None:
        sys.stdout.write(text)


def _need_out(args, what: str) -> Path:
    if args.out is None:
        raise io.ConfigError(f"--out is required for {what}")
    return args.out


def _moments(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-landmark means ``(N, d)`` and covariances ``(N, d, d)``."""
    mean = points.mean(axis=0)
    centred = points - mean
    cov = np.einsum("sia,sib->iab", centred, centred) / max(points.shape[0] - 1, 1)
    return mean, cov


# ---------------------------------------------------------------------------
# commands

def cmd_make_ellipse(args):
    q = make_ellipse(args.n_landmarks, tuple(args.axes), tuple(args.center))
    out = _need_out(args, "make-ellipse")
    io.write_dataset(out, q.positions[None])
    _emit({"n_landmarks": q.n_landmarks, "mean_interpoint_distance": mean_interpoint_distance(q)}, None)


def cmd_make_cardiac(args):
    cfg = _settings(args)
    arr = synthetic_cardiac(args.n_configs, args.n_landmarks, cfg.seed, args.noise)
    io.write_dataset(_need_out(args, "make-cardiac"), arr,
                     labels=[f"c{i:02d}" for i in range(arr.shape[0])])


def cmd_sample(args):
    cfg = _settings(args)
    q0 = _single(args.q0)
    params = cfg.kernel(q0)
    grid = cfg.grid
    n = cfg.samples if args.samples is None else args.samples
    if n < 0:
        raise io.ConfigError("--samples must be nonnegative")
    out = _need_out(args, "sample")
    batch = sample_brownian(q0, grid, params, n, cfg.seed,
                            keep_paths=args.trajectories is not None, scheme=args.scheme)
    keep = ~batch.aborted
    labels = [f"s{s}" for s in np.flatnonzero(keep)]
    io.write_dataset(out, batch.endpoints[keep].reshape((-1,) + q0.positions.shape), labels=labels)
    if args.trajectories is not None:
        io.write_trajectories(args.trajectories, batch.paths[keep], grid.times, q0.n_landmarks, q0.dim)
    aborted = [int(s) for s in np.flatnonzero(batch.aborted)]
    _emit({"samples": n, "written": int(keep.sum()), "aborted": aborted}, None)


def cmd_bridge(args):
    cfg = _settings(args)
    q0, target = _single(args.q0), _single(args.target)
    if q0.positions.shape != target.positions.shape:
        raise io.ConfigError("q0 and target have different shapes")
    params = cfg.kernel(q0)
    grid = cfg.grid
    out = _need_out(args, "bridge")
    if out.suffix == ".json":
        raise io.ConfigError("--out names the trajectory CSV; the sidecar gets the .json suffix")
    path = simulate_bridge(q0, target, grid, params, cfg.seed)
    io.write_trajectories(out, path.path[None], grid.times, q0.n_landmarks, q0.dim)
    io.dump_json({"log_phi": path.log_phi, "seed": cfg.seed, "n_steps": grid.n_steps},
                 out.with_suffix(".json"))


def cmd_density(args):
    cfg = _settings(args)
    q0, target = _single(args.q0), _single(args.target)
    if q0.positions.shape != target.positions.shape:
        raise io.ConfigError("q0 and target have different shapes")
    params = cfg.kernel(q0)
    grid = cfg.grid
    J = cfg.J if args.samples is None else args.samples
    if J < 1:
        raise io.ConfigError("J must be at least 1")
    est = estimate_density(q0, target, grid, params, J, cfg.seed)
    _emit({"log_value": est.log_value, "value": est.value, "std_error": est.std_error,
           "J": J, "n_steps": grid.n_steps, "aborted": est.n_aborted}, args.out)


def cmd_infer(args):
    cfg = _settings(args)
    if args.samples is not None:
        cfg.J = args.samples
    arr, labels = io.read_dataset(args.data)
    if arr.shape[0] == 0:
        raise io.ConfigError(f"{args.data}: no observations")
    data = ObservationSet.from_array(arr, labels)
    grid = cfg.grid
    opt = cfg.optimizer_config()
    if args.init is not None:
        try:
            init = ThetaParams.from_dict(json.loads(args.init.read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise io.ConfigError(f"cannot read initial theta: {exc}") from None
    else:
        mean = data.mean()
        init = ThetaParams(mean, cfg.kernel(mean))
    theta, trace = infer(data, init, grid, opt)
    if not trace.records:
        raise LandmarkError(trace.error or "inference produced no iterations")
    _emit({"theta_hat": theta.to_dict(), "trace": trace.to_list(), "converged": trace.converged,
           "error": trace.error, "J": opt.J, "n_steps": grid.n_steps,
           "master_seed": opt.master_seed}, args.out)


def cmd_model_check(args):
    cfg = _settings(args)
    arr, _ = io.read_dataset(args.data)
    if arr.shape[0] < 2:
        raise io.ConfigError("model-check needs at least two observations")
    n_landmarks, d = arr.shape[1:]
    if args.compare is not None:
        other, _ = io.read_dataset(args.compare)
        if other.shape[1:] != arr.shape[1:] or other.shape[0] < 2:
            raise io.ConfigError(f"{args.compare}: incompatible with {args.data}")
        source = str(args.compare)
    elif args.theta is not None:
        try:
            theta = ThetaParams.from_dict(json.loads(args.theta.read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise io.ConfigError(f"cannot read theta: {exc}") from None
        if theta.q0.positions.shape != arr.shape[1:]:
            raise io.ConfigError("theta does not match the data shape")
        grid = cfg.grid
        n = arr.shape[0] if args.samples is None else args.samples
        if n < 2:
            raise io.ConfigError("need at least two simulated samples")
        batch = sample_brownian(theta.q0, grid, theta.kernel, n, cfg.seed, scheme=args.scheme)
        other = batch.endpoints[~batch.aborted].reshape((-1,) + arr.shape[1:])
        if other.shape[0] < 2:
            raise LandmarkError("too few simulated samples survived")
        source = "model"
    else:
        raise io.ConfigError("give a theta file or --compare")

    tables = {"data": _moments(arr), "model": _moments(other)}
    counts = {"data": arr.shape[0], "model": other.shape[0]}
    landmarks = []
    for i in range(n_landmarks):
        landmarks.append({"landmark": i, **{
            name: {"mean": m[i].tolist(), "cov": c[i].tolist(), "n": counts[name]}
            for name, (m, c) in tables.items()}})
    _emit({"source": source, "landmarks": landmarks}, args.out)

    if args.csv is not None:
        axes = [io.axis_name(a, d) for a in range(d)]
        header = (["source", "landmark", "n"] + [f"mean_{a}" for a in axes]
                  + [f"cov_{axes[a]}{axes[b]}" for a in range(d) for b in range(a, d)])
        lines = [",".join(header)]
        for name, (m, c) in tables.items():
            for i in range(n_landmarks):
                cells = [name, str(i), str(counts[name])] + [io._fmt(x) for x in m[i]]
                cells += [io._fmt(c[i, a, b]) for a in range(d) for b in range(a, d)]
                lines.append(",".join(cells))
        args.csv.write_text("\n".join(lines) + "\n", newline="\n")


COMMANDS = {
    "make-ellipse": cmd_make_ellipse,
    "make-cardiac": cmd_make_cardiac,
    "sample": cmd_sample,
    "bridge": cmd_bridge,
    "density": cmd_density,
    "infer": cmd_infer,
    "model-check": cmd_model_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except (InvalidArgumentError, OSError) as exc:
        _fail(EXIT_CONFIG, "config", exc)
    except LandmarkError as exc:
        _fail(EXIT_NUMERICAL, "numerical", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
