import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from qvol.config import (
    DEFAULT_BURN_IN,
    DEFAULT_N,
    DEFAULT_SEED,
    DEFAULT_SWEEPS,
    DEFAULT_T,
    DEFAULT_THIN,
    DEFAULT_U,
    KERNEL_NODES,
    MIN_NODES,
)
from qvol.errors import ConfigurationError, QvolError, ResourceError
from qvol.run import persist_run, write_csv
from qvol.services import kernel, limit_shape, mcmc_sampler, moments, plots, stats_harness, transfer_exact
from qvol.services.partitions import ModularData, SliceObservable
from qvol.services.verify import SUITES, run_suite

logger = logging.getLogger(__name__)

COMMANDS = ["verify", "sample", "limitshape", "moments", "greens", "kernel", "exact"]
LIMIT_SHAPE_POINTS = 201
LIMIT_SHAPE_TOP = 3.0
DEFAULT_KERNEL_WINDOW = 4


class RunConfig(BaseModel):
    """Every parameter of one command; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    command: str
    suite: Optional[str] = None
    n: int = Field(default=DEFAULT_N, ge=1)
    t: float = Field(default=DEFAULT_T, gt=0.0, lt=1.0)
    u: float = Field(default=DEFAULT_U, gt=0.0)
    k: int = Field(default=1, ge=1)
    tau: list[float] = Field(default_factory=lambda: [1.0])
    seed: int = Field(default=DEFAULT_SEED, ge=0)
    sweeps: int = Field(default=DEFAULT_SWEEPS, ge=1)
    burn_in: int = Field(default=DEFAULT_BURN_IN, ge=0)
    thin: int = Field(default=DEFAULT_THIN, ge=1)
    box_l: Optional[int] = Field(default=None, ge=1)
    box_r: Optional[int] = Field(default=None, ge=1)
    chains: int = Field(default=1, ge=1)
    threads: int = Field(default=1, ge=1)
    nodes: Optional[int] = Field(default=None, ge=MIN_NODES)
    out: Optional[str] = None

    @field_validator("tau", mode="before")
    @classmethod
    def listify_tau(cls, tau):
        return [tau] if isinstance(tau, (int, float)) else tau

    @field_validator("tau")
    @classmethod
    def check_tau(cls, tau: list[float]) -> list[float]:
        if not tau or any(not 0.0 < value <= 1.0 for value in tau):
            raise ValueError(f"every tau must lie in (0, 1], got {tau}")
        return tau

    @property
    def modular(self) -> ModularData:
        return ModularData(self.t, self.n, self.u)

    @property
    def slices(self) -> list[SliceObservable]:
        return [SliceObservable(tau, self.k) for tau in self.tau]

    def record(self) -> dict:
        """Plain mapping written to config.yaml and every output header."""
        return self.model_dump(exclude_none=True)


def _normalize_keys(values: dict) -> dict:
    return {str(key).replace("-", "_"): value for key, value in values.items()}


def load_config(path: str | Path) -> dict:
    """Read a YAML mapping, or `key = value` lines with `#` comments and YAML scalar values.

    Raises:
        ConfigurationError: If the file is neither a mapping nor well-formed `key = value` lines
    """
    with open(path, "r") as f:
        text = f.read()
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError:
        document = None
    if isinstance(document, dict):
        return _normalize_keys(document)

    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{path}:{number}: expected key = value, got {raw.strip()!r}")
        try:
            values[key.strip()] = yaml.safe_load(value.strip())
        except yaml.YAMLError as e:
            raise ConfigurationError(f"{path}:{number}: cannot parse value: {e}") from e
    return _normalize_keys(values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qvol", description="Numerics for q^vol lozenge tilings of a cylinder.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("suite", nargs="?", choices=sorted(SUITES), help="suite for `verify`")
    parser.add_argument("--n", type=int)
    parser.add_argument("--t", type=float)
    parser.add_argument("--u", type=float)
    parser.add_argument("--k", type=int)
    parser.add_argument("--tau", type=float, action="append")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--sweeps", type=int)
    parser.add_argument("--burn-in", type=int)
    parser.add_argument("--thin", type=int)
    parser.add_argument("--box-l", type=int)
    parser.add_argument("--box-r", type=int)
    parser.add_argument("--chains", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--nodes", type=int)
    parser.add_argument("--out")
    parser.add_argument("--config", help="YAML mapping or key = value lines; flags take precedence")
    parser.add_argument("--verbose", action="store_true")
    return parser


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge the config file and the flags, flags last, and validate.

    Raises:
        ConfigurationError: If a value is out of range or a key is unknown
    """
    values = load_config(args.config) if args.config else {}
    flags = {
        key: value
        for key, value in vars(args).items()
        if key not in ("config", "verbose") and value is not None
    }
    values.update(flags)
    if values["command"] == "verify" and not values.get("suite"):
        raise ConfigurationError(f"verify needs a suite, one of {sorted(SUITES)}")
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e


def _box(config: RunConfig, md: ModularData) -> mcmc_sampler.SamplerBox:
    default = mcmc_sampler.SamplerBox.default(md)
    return mcmc_sampler.SamplerBox(config.box_l or default.box_l, config.box_r or default.box_r)


def cmd_verify(config: RunConfig, run_dir: Path) -> int:
    return 0 if run_suite(config.suite, config.record(), run_dir) else 1


def cmd_sample(config: RunConfig, run_dir: Path) -> int:
    md = config.modular
    record = config.record()
    results = mcmc_sampler.run_chains(
        md,
        chains=config.chains,
        box=_box(config, md),
        sweeps=config.sweeps,
        burn_in=config.burn_in,
        thin=config.thin,
        seed=config.seed,
        threads=config.threads,
    )
    mcmc_sampler.dump_samples(run_dir / "samples.txt", record, results, shifted=True)
    write_csv(
        run_dir / "chains.csv",
        record,
        ["chain", "samples", "acceptance", "iat", "boundary_occupancy"],
        ([i, r.count, r.acceptance, r.iat, r.boundary_occupancy] for i, r in enumerate(results)),
    )
    samples = np.concatenate([r.samples for r in results])
    shifts = np.concatenate([r.shifts for r in results])
    profile = stats_harness.height_profile(samples, md, config.tau[0])
    stats_harness.dump_profile(run_dir / "profile.csv", record, profile)
    plots.plot_height_profile(run_dir / "profile.svg", record, profile, md.t, md.n)
    try:
        moments_report = stats_harness.slice_moments(samples, md, config.slices)
        stats_harness.dump_slice_moments(run_dir / "slices.csv", record, moments_report)
    except QvolError as e:
        logger.warning(f"Failed to estimate slice moments: {e}")
    spec = mcmc_sampler.DiscreteGaussianSpec.from_modular(md)
    report = stats_harness.shift_statistics(shifts, spec)
    write_csv(
        run_dir / "shifts.csv",
        record,
        ["chi_square", "dof", "p_value", "mean", "variance", "expected_mean", "expected_variance"],
        [[report.chi_square, report.dof, report.p_value, report.mean, report.variance, report.expected_mean, report.expected_variance]],
    )
    return 0


def cmd_limitshape(config: RunConfig, run_dir: Path) -> int:
    record = config.record()
    edge = limit_shape.liquid_lower_edge(config.t)
    logger.info(f"Frozen/liquid boundary at y={edge:.6g}")
    ys = np.linspace(edge - 0.5, LIMIT_SHAPE_TOP, LIMIT_SHAPE_POINTS)
    rows = limit_shape.limit_shape_grid(config.t, config.tau, ys)
    limit_shape.dump_grid(run_dir / "grid.csv", record, rows)
    plots.plot_limit_shape(run_dir / "limit_shape.svg", record, config.t, ys)
    return 0


def _contours(config: RunConfig, slices: list[SliceObservable]) -> moments.ContourSpec | None:
    if config.nodes is None:
        return None
    return moments.ContourSpec.for_slices(slices, config.modular, config.nodes)


def cmd_moments(config: RunConfig, run_dir: Path) -> int:
    md = config.modular
    record = config.record()
    slices = config.slices
    rows = []
    for s in slices:
        rows.append(moments.moment_row([s], md, moments.contour_moment([s], md, _contours(config, [s]))))
    spec = _contours(config, slices)
    if len(slices) > 1:
        rows.append(moments.moment_row(slices, md, moments.contour_moment(slices, md, spec)))
    moments.dump_moments(run_dir / "moments.csv", record, rows)
    shift_mixed = moments.shift_mixed_moment(slices, md, spec)
    moments.dump_moments(run_dir / "shift_mixed.csv", record, [moments.moment_row(slices, md, shift_mixed)])

    summary = [
        ["mean_asymptotic", config.k, moments.mean_asymptotic(config.k, md.t)],
        ["prelimit_mean", config.k, moments.prelimit_mean(config.k, md).value],
        ["wallis_moment", config.k, moments.wallis_moment(config.k, md.t)],
    ]
    first = slices[0]
    for s in slices:
        summary.append([f"prelimit_covariance_{first.tau}_{s.tau}", config.k, moments.prelimit_covariance(first, s, md).value])
        summary.append([f"covariance_asymptotic_{first.tau}_{s.tau}", config.k, moments.covariance_asymptotic(first, s, md)])
        summary.append([f"greens_covariance_{first.tau}_{s.tau}", config.k, moments.greens_covariance(first, s, md)])
    write_csv(run_dir / "asymptotics.csv", record, ["quantity", "k", "value"], summary)
    return 0


def cmd_greens(config: RunConfig, run_dir: Path) -> int:
    record = config.record()
    tau = config.tau[0]
    values = plots.greens_grid(tau, 0.0, config.t)
    size = values.shape[0]
    period = -np.log(config.t) / (2 * np.pi)
    xs = (np.arange(size) + 0.5) / (2 * size)
    heights = ((np.arange(size) + 0.5) * period / size)[::-1]
    write_csv(
        run_dir / "greens.csv",
        record,
        ["re_eta", "im_eta", "G"],
        ([float(x), float(y), float(values[i, j])] for i, y in enumerate(heights) for j, x in enumerate(xs)),
    )
    plots.greens_heatmap(run_dir / "greens", record, tau, 0.0, config.t, size)
    return 0


def cmd_kernel(config: RunConfig, run_dir: Path) -> int:
    md = config.modular
    reach = config.box_l or DEFAULT_KERNEL_WINDOW
    window = np.arange(-reach, reach) + 0.5
    cache = kernel.KernelCache(md, window, nodes=config.nodes or KERNEL_NODES).build(config.threads)
    cache.dump(run_dir / "kernel.csv", config.record())
    return 0


def cmd_exact(config: RunConfig, run_dir: Path) -> int:
    md = config.modular
    record = config.record()
    if config.box_l and config.box_r:
        trunc = transfer_exact.BoxTruncation(config.box_l, config.box_r)
    else:
        trunc = transfer_exact.default_truncation(md)
    slices = config.slices
    summary = [
        ["partition_function", transfer_exact.partition_function(trunc, md)],
        ["truncation_tail", transfer_exact.truncation_tail(trunc, md)],
        ["configurations", transfer_exact.config_count(trunc, md.n)],
        ["observable_expectation", transfer_exact.exact_observable_expectation(trunc, md, slices)],
        ["shift_mixed_expectation", transfer_exact.exact_observable_expectation(trunc, md, slices, shifted=True)],
    ]
    write_csv(run_dir / "exact.csv", record, ["quantity", "value"], summary)
    try:
        rows = transfer_exact.enumerate_configs(trunc, md)
        transfer_exact.dump_configs(run_dir / "configs.csv", record, rows)
    except ResourceError as e:
        logger.warning(f"Skipping the enumeration: {e}")
    return 0


HANDLERS = {
    "verify": cmd_verify,
    "sample": cmd_sample,
    "limitshape": cmd_limitshape,
    "moments": cmd_moments,
    "greens": cmd_greens,
    "kernel": cmd_kernel,
    "exact": cmd_exact,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        config = build_config(args)
        run_dir = persist_run(config.record(), config.out)
        return HANDLERS[config.command](config, run_dir)
    except QvolError as e:
        logger.error(f"{config_label(args)} failed: {e}")
        return 1


def config_label(args: argparse.Namespace) -> str:
    return f"{args.command} {args.suite}" if args.suite else args.command


if __name__ == "__main__":
    sys.exit(main())
