"""Command-line runner for the bundled experiments.

Example:

    diffppl run thermometer --seed 0 --output-dir out --emit-plots

Each run writes ``result.json`` and ``trace.csv`` (and SVG plots on request)
to the output directory. With ``--n-seeds k`` the run is repeated for seeds
``seed .. seed+k-1``, one subdirectory each, spread over ``--jobs`` worker
processes.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Any

import jax
import jax.numpy as jnp
import numpy as np

import diffppl
from diffppl import hmc, optimize, plots
from diffppl.autodiff import NonFiniteError
from diffppl.models import color, tables, thermometer

SCHEMA_VERSION = 1
EXPERIMENTS = ("thermometer", "color", "tables", "gradcheck")
# fields that depend on the clock rather than on (config, seed)
WALL_CLOCK_FIELDS = ("wall_clock_seconds",)
MAX_SEED = 2**63 - 1
GRADCHECK_TOLERANCE = 0.05

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_OUTPUT = 4

_MODEL_DEFAULTS = {
    "thermometer": (thermometer.PAPER_HYPER, thermometer.DEFAULT_GD),
    "color": (color.DEFAULT_HYPER, color.DEFAULT_GD),
    "tables": (tables.DEFAULT_HYPER, tables.DEFAULT_GD),
}
_HMC_FLAGS = {"n_samples": "n_samples", "leapfrog_steps": "n_leapfrog", "eps": "eps", "skip": "skip"}
_GD_FLAGS = {"gd_steps": "steps", "lr": "learning_rate", "momentum": "momentum"}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment invocation.

    Sampler and descent settings are stored as overrides on top of each
    model's defaults, so ``gradcheck`` (which touches every model) can share
    them.
    """

    experiment: str
    seed: int = 0
    output_dir: Path = Path("results")
    emit_plots: bool = False
    lambda_distinct: float = color.DEFAULT_LAMBDA
    hmc_overrides: dict[str, Any] = field(default_factory=dict)
    gd_overrides: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if not 0 <= int(self.seed) <= MAX_SEED:
            raise ValueError(f"seed must lie in [0, 2**63 - 1], got {self.seed}")
        if not self.lambda_distinct >= 0:
            raise ValueError("lambda-distinct must be non-negative")
        for model in self.models():
            self.hyper(model)
            self.gd(model)

    def models(self) -> tuple[str, ...]:
        return tuple(_MODEL_DEFAULTS) if self.experiment == "gradcheck" else (self.experiment,)

    def hyper(self, model: str) -> hmc.HmcHyperparams:
        return dataclasses.replace(_MODEL_DEFAULTS[model][0], **self.hmc_overrides)

    def gd(self, model: str) -> optimize.GdConfig:
        return dataclasses.replace(_MODEL_DEFAULTS[model][1], **self.gd_overrides)

    def echo(self) -> dict:
        out = {
            "experiment": self.experiment,
            "seed": int(self.seed),
            "emit_plots": self.emit_plots,
            "hmc": {m: dataclasses.asdict(self.hyper(m)) for m in self.models()},
            "gd": {m: dataclasses.asdict(self.gd(m)) for m in self.models()},
        }
        if "color" in self.models():
            out["lambda_distinct"] = self.lambda_distinct
        return out


def _floats(x):
    """Nested Python floats/lists from arrays, for JSON."""
    return np.asarray(x, dtype=float).tolist()


def _summary(values) -> dict:
    values = np.asarray(values, dtype=float)
    return {
        "mean": _floats(values.mean(axis=0)),
        "stddev": _floats(values.std(axis=0, ddof=1)),
        "count": int(values.shape[0]),
    }


def _trace_record(trace: optimize.OptimizationTrace) -> dict:
    return {"losses": [float(v) for v in trace.losses], "gradient_norms": [float(v) for v in trace.gradient_norms]}


def _run_thermometer(config: ExperimentConfig, key):
    hyper, gd = config.hyper("thermometer"), config.gd("thermometer")
    loss = lambda m, k: thermometer.thermometer_loss(m, k, hyper=hyper)
    trace = optimize.gradient_descent(loss, thermometer.INITIAL_READING, gd, key)
    m = float(trace.final)
    model = thermometer.thermometer_model()
    ss = hmc.hmc_sample(model, jnp.asarray(m), hyper=hyper, key=key)
    samples = np.asarray(hmc.sample_values(model, ss, jnp.asarray(m), hyper=hyper))
    record = {
        "final_parameters": {"m": m},
        "inferred": {"T": float(samples.mean())},
        "closed_form": {"m": 524 / 5, "posterior_mean": thermometer.posterior_mean(m)},
        "samples": _summary(samples),
    }
    extra = {
        "posterior_hist.svg": lambda p: plots.posterior_hist(
            samples, p, mean=thermometer.posterior_mean(m), stddev=thermometer.posterior_stddev()
        )
    }
    return trace, record, extra


def _run_color(config: ExperimentConfig, key):
    hyper, gd, lam = config.hyper("color"), config.gd("color"), config.lambda_distinct
    objective = lambda u, k: color.color_objective(u, k, hyper=hyper, lam=lam)
    trace = optimize.gradient_descent(objective, color.random_initial_params(config.seed), gd, key)
    temp, brightness, c1, c2 = color.scene_from_params(jnp.asarray(trace.final))
    img = color.render_patches(color.planck_rgb_unchecked(temp) * brightness, c1, c2)
    model = color.color_model(img)
    ss = hmc.hmc_sample(model, img, hyper=hyper, key=key)
    seen1, seen2 = hmc.sample_values(model, ss, img, hyper=hyper)
    record = {
        "final_parameters": {
            "temp": float(temp),
            "brightness": float(brightness),
            "color1": _floats(c1),
            "color2": _floats(c2),
        },
        "inferred": {"color1": _floats(np.mean(seen1, axis=0)), "color2": _floats(np.mean(seen2, axis=0))},
        "samples": {"color1": _summary(seen1), "color2": _summary(seen2)},
    }
    return trace, record, {}


def _run_tables(config: ExperimentConfig, key):
    hyper, gd = config.hyper("tables"), config.gd("tables")
    objective = lambda u, k: tables.tables_objective(u, k, hyper=hyper)
    trace = optimize.gradient_descent(objective, tables.random_initial_params(config.seed), gd, key)
    cam, sizes, positions = tables.scene_from_params(jnp.asarray(trace.final), tables.N_TABLES)
    observed = tables.render_tables(tables.make_camera_at(*cam), sizes, positions)
    model = tables.tables_model(observed)
    ss = hmc.hmc_sample(model, observed, hyper=hyper, key=key)
    seen_sizes, seen_positions = hmc.sample_values(model, ss, observed, hyper=hyper)
    record = {
        "final_parameters": {
            "camera": {"r": float(cam[0]), "theta": float(cam[1]), "h": float(cam[2])},
            "sizes": _floats(sizes),
            "positions": _floats(positions),
        },
        "inferred": {"sizes": _floats(np.mean(seen_sizes, axis=0)), "positions": _floats(np.mean(seen_positions, axis=0))},
        "samples": {"sizes": _summary(seen_sizes), "positions": _summary(seen_positions)},
    }
    return trace, record, {}


def gradcheck_points(config: ExperimentConfig) -> dict:
    """(loss, point, finite-difference step) per model."""
    lam = config.lambda_distinct
    h_t, h_c, h_s = (config.hyper(m) for m in ("thermometer", "color", "tables"))
    return {
        "thermometer": (
            lambda m, k: thermometer.thermometer_loss(m, k, hyper=h_t),
            jnp.asarray(thermometer.INITIAL_READING),
            0.1,
        ),
        "color": (
            lambda u, k: color.color_objective(u, k, hyper=h_c, lam=lam),
            color.random_initial_params(config.seed),
            1e-4,
        ),
        "tables": (
            lambda u, k: tables.tables_objective(u, k, hyper=h_s),
            tables.random_initial_params(config.seed),
            1e-4,
        ),
    }


def _run_gradcheck(config: ExperimentConfig, key):
    rows, ok = {}, True
    for name, (loss, x, h) in gradcheck_points(config).items():
        checks = optimize.gradient_check(loss, x, h, key)
        rows[name] = [dataclasses.asdict(r) for r in checks]
        ok &= all(r.relative_error < GRADCHECK_TOLERANCE for r in checks if r.checked)
    return None, {"gradcheck": rows, "tolerance": GRADCHECK_TOLERANCE, "passed": ok}, {}


_RUNNERS = {"thermometer": _run_thermometer, "color": _run_color, "tables": _run_tables, "gradcheck": _run_gradcheck}


def write_trace_csv(trace: optimize.OptimizationTrace, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss", "gradient_norm"])
        for i, (loss, g) in enumerate(zip(trace.losses, trace.gradient_norms)):
            w.writerow([i, repr(float(loss)), repr(float(g))])


def format_gradcheck(rows: dict) -> str:
    lines = [f"{'model':<12} {'i':>3} {'analytic':>14} {'finite diff':>14} {'rel err':>10}"]
    for name, model_rows in rows.items():
        for r in model_rows:
            flag = "" if r["checked"] else "  (below threshold)"
            lines.append(
                f"{name:<12} {r['index']:>3} {r['analytic']:>14.6g} {r['finite_difference']:>14.6g} "
                f"{r['relative_error']:>10.2e}{flag}"
            )
    return "\n".join(lines)


def run(config: ExperimentConfig) -> dict:
    """Run one experiment and write its files; returns the result record."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    start = time.perf_counter()
    key = jax.random.PRNGKey(int(config.seed))
    trace, body, extra_plots = _RUNNERS[config.experiment](config, key)
    record = {
        "schema_version": SCHEMA_VERSION,
        "artifact_version": diffppl.__version__,
        "config": config.echo(),
    }
    if trace is not None:
        record.update(_trace_record(trace))
    record.update(body)
    if trace is not None:
        write_trace_csv(trace, out / "trace.csv")
        if config.emit_plots:
            plots.loss_curve(trace.losses, out / "loss_curve.svg", title=config.experiment)
            for name, draw in extra_plots.items():
                draw(out / name)
    record["wall_clock_seconds"] = time.perf_counter() - start
    with open(out / "result.json", "w") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")
    return record


def _run_one(config: ExperimentConfig) -> tuple[int, int, str]:
    """Worker entry point: (seed, exit status, diagnostic)."""
    try:
        record = run(config)
    except (NonFiniteError, hmc.ReconstructionError) as e:
        return config.seed, EXIT_NUMERICAL, f"seed {config.seed}: numerical failure: {e}"
    except OSError as e:
        return config.seed, EXIT_OUTPUT, f"seed {config.seed}: cannot write results: {e}"
    if config.experiment == "gradcheck":
        msg = format_gradcheck(record["gradcheck"])
        return config.seed, EXIT_OK if record["passed"] else EXIT_CHECK_FAILED, msg
    return config.seed, EXIT_OK, f"seed {config.seed}: final loss {record['losses'][-1]!r}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffppl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-seeds", type=int, default=1, help="sweep seeds seed .. seed+n-1")
    p.add_argument("--n-samples", type=int, help="HMC trajectories N")
    p.add_argument("--leapfrog-steps", type=int, help="leapfrog steps per trajectory L")
    p.add_argument("--eps", type=float, help="leapfrog step size")
    p.add_argument("--skip", type=int, help="burn-in samples dropped")
    p.add_argument("--gd-steps", type=int, help="gradient-descent steps")
    p.add_argument("--lr", type=float, help="gradient-descent learning rate")
    p.add_argument("--momentum", type=float, help="heavy-ball momentum coefficient")
    p.add_argument("--lambda-distinct", type=float, default=color.DEFAULT_LAMBDA, help="color distinctness weight")
    p.add_argument("--output-dir", type=Path, default=Path("results"))
    p.add_argument("--emit-plots", action="store_true")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for seed sweeps")
    return parser


def config_from_args(args: argparse.Namespace, seed: int, output_dir: Path) -> ExperimentConfig:
    hmc_over = {f: getattr(args, a) for a, f in _HMC_FLAGS.items() if getattr(args, a) is not None}
    gd_over = {f: getattr(args, a) for a, f in _GD_FLAGS.items() if getattr(args, a) is not None}
    return ExperimentConfig(
        experiment=args.experiment,
        seed=seed,
        output_dir=output_dir,
        emit_plots=args.emit_plots,
        lambda_distinct=args.lambda_distinct,
        hmc_overrides=hmc_over,
        gd_overrides=gd_over,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.n_seeds < 1 or args.jobs < 1:
        parser.error("--n-seeds and --jobs must be positive")
    seeds = [args.seed + i for i in range(args.n_seeds)]
    try:
        configs = [
            config_from_args(args, s, args.output_dir if len(seeds) == 1 else args.output_dir / f"seed-{s}")
            for s in seeds
        ]
    except ValueError as e:
        parser.error(str(e))

    if len(configs) == 1 or args.jobs == 1:
        results = [_run_one(c) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs, mp_context=get_context("spawn")) as pool:
            results = list(pool.map(_run_one, configs))

    status = EXIT_OK
    for _, code, msg in results:
        print(msg, file=sys.stdout if code == EXIT_OK else sys.stderr)
        status = max(status, code)
    if len(configs) > 1:
        summary = [{"seed": s, "exit_status": c} for s, c, _ in results]
        with open(args.output_dir / "sweep.json", "w") as fh:
            json.dump({"schema_version": SCHEMA_VERSION, "runs": summary}, fh, indent=2)
            fh.write("\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
