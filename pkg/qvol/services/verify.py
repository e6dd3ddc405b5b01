import logging
import math
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from qvol.config import KERNEL_NODES
from qvol.errors import QvolError
from qvol.run import write_csv, write_lines
from qvol.services import kernel, limit_shape, mcmc_sampler, moments, partitions, special_functions, stats_harness
from qvol.services import transfer_exact
from qvol.services.partitions import ModularData, SliceObservable

logger = logging.getLogger(__name__)

CHECK_COLUMNS = ["name", "passed", "detail"]
EXACT_BOX = 5
IDENTITY_RATIOS = (0.3, 0.6, 0.9)


class Check(NamedTuple):
    name: str
    passed: bool
    detail: str


def _relative(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def _compare(name: str, value: float, reference: float, tolerance: float, relative: bool = False) -> Check:
    error = _relative(value, reference) if relative else abs(value - reference)
    return Check(name, bool(error < tolerance), f"value={value:.12g} reference={reference:.12g} error={error:.3e}")


# Identities


def _height_observable_checks(rng: np.random.Generator) -> list[Check]:
    worst = 0.0
    for n in (1, 2, 3):
        for cfg in partitions.random_configs(n, 6, 67, rng):
            shift = int(rng.integers(-3, 4))
            for la in cfg.lambdas:
                for r in IDENTITY_RATIOS:
                    direct = partitions.height_observable_sum(la, r, shift)
                    closed = -math.sqrt(r) / (1 - r) * partitions.observable_F(la, r, shift)
                    worst = max(worst, _relative(direct, closed))
    return [Check("height_observable_identity", worst < 1e-12, f"max relative error {worst:.3e}")]


def _theta_checks(rng: np.random.Generator) -> list[Check]:
    checks = []
    for t in (0.3, 0.6):
        z = np.exp(rng.uniform(-1.0, 1.0, 50) * -math.log(t) + 1j * rng.uniform(-math.pi, math.pi, 50))
        sums = np.asarray(special_functions.theta1(z, t))
        products = np.asarray(special_functions.theta1_product(z, t))
        worst = float(np.max(np.abs(sums - products) / np.maximum(np.abs(sums), 1e-300)))
        checks.append(Check(f"theta1_sum_product_t{t}", worst < 1e-11, f"max relative error {worst:.3e}"))
        sums = np.asarray(special_functions.theta3(z, t))
        products = np.asarray(special_functions.theta3_product(z, t))
        worst = float(np.max(np.abs(sums - products) / np.maximum(np.abs(sums), 1e-300)))
        checks.append(Check(f"theta3_sum_product_t{t}", worst < 1e-11, f"max relative error {worst:.3e}"))
        zeros = np.abs(np.asarray(special_functions.theta1(t ** np.arange(-3.0, 4.0), t)))
        checks.append(Check(f"theta1_zeros_t{t}", bool(zeros.max() < 1e-12), f"max |theta1(t^n)| {zeros.max():.3e}"))
        lhs = np.asarray(special_functions.theta1_reduced(t * z, t))
        rhs = -np.asarray(special_functions.theta1_reduced(z, t)) / (t * z)
        worst = float(np.max(np.abs(lhs - rhs) / np.abs(rhs)))
        checks.append(Check(f"theta1_quasi_periodicity_t{t}", worst < 1e-11, f"max relative error {worst:.3e}"))
        lhs = np.asarray(special_functions.theta3(t * z, t))
        rhs = np.asarray(special_functions.theta3(z, t)) / (math.sqrt(t) * z)
        worst = float(np.max(np.abs(lhs - rhs) / np.abs(rhs)))
        checks.append(Check(f"theta3_quasi_periodicity_t{t}", worst < 1e-11, f"max relative error {worst:.3e}"))
    return checks


def _green_checks(rng: np.random.Generator) -> list[Check]:
    checks = []
    for t in (0.3, 0.6):
        period = -math.log(t) / (2 * math.pi)
        omega = 1j * period
        a = rng.uniform(0.05, 0.45, 20) + 1j * rng.uniform(0.1, 0.9, 20) * period
        b = rng.uniform(0.05, 0.45, 20) + 1j * rng.uniform(0.1, 0.9, 20) * period
        g = np.asarray(special_functions.greens(a, b, omega))
        symmetry = float(np.max(np.abs(g - np.asarray(special_functions.greens(b, a, omega)))))
        checks.append(Check(f"greens_symmetry_t{t}", symmetry < 1e-12, f"max error {symmetry:.3e}"))
        shifted = float(np.max(np.abs(g - np.asarray(special_functions.greens(a + 1.0, b, omega)))))
        checks.append(Check(f"greens_periodicity_t{t}", shifted < 1e-12, f"max error {shifted:.3e}"))
        edge = np.concatenate([1j * a.imag, 0.5 + 1j * a.imag])
        boundary = float(np.max(np.abs(np.asarray(special_functions.greens(edge, np.resize(b, 40), omega)))))
        checks.append(Check(f"greens_boundary_t{t}", boundary < 1e-9, f"max |G| on Re eta in {{0, 1/2}}: {boundary:.3e}"))

    # harmonic away from the pole: the five-point Laplacian shrinks like h^2
    omega = 1j * -math.log(0.3) / (2 * math.pi)
    source, point = 0.25 + 0.05j, 0.1 + 0.12j

    def laplacian(h: float) -> float:
        ring = point + h * np.array([1, -1, 1j, -1j])
        values = np.asarray(special_functions.greens(ring, source, omega))
        return float((values.sum() - 4 * special_functions.greens(point, source, omega)) / h**2)

    ratio = laplacian(0.02) / laplacian(0.01)
    checks.append(Check("greens_harmonic", 3.5 < ratio < 4.5, f"laplacian ratio at h, h/2: {ratio:.4f}"))

    def regular(d: float) -> float:
        return float(special_functions.greens(source + d, source, omega)) + math.log(d) / (2 * math.pi)

    drift = abs(regular(1e-3) - regular(1e-5))
    checks.append(Check("greens_log_singularity", drift < 1e-3, f"regular part drift {drift:.3e}"))
    return checks


def _misc_identity_checks(rng: np.random.Generator) -> list[Check]:
    checks = []
    for u, t in ((1.0, 0.5), (1.7, 0.3)):
        table = special_functions.discrete_gaussian_table(u, t)
        checks.append(
            _compare(f"shift_normalizer_u{u}_t{t}", table.normalizer, special_functions.theta3(u, t).real, 1e-12, True)
        )
    t, u = 0.4, 1.3
    r = rng.uniform(0.4, 0.9, 3)
    z = np.exp(1j * rng.uniform(-math.pi, math.pi, 3))
    det = special_functions.frobenius_determinant(u, r, z, t)
    product = special_functions.frobenius_product(u, r, z, t)
    error = abs(det - product) / abs(product)
    checks.append(Check("elliptic_cauchy_determinant", error < 1e-10, f"relative error {error:.3e}"))
    return checks


def identities_suite(config: dict) -> list[Check]:
    rng = np.random.default_rng(config.get("seed", 7))
    return (
        _height_observable_checks(rng)
        + _theta_checks(rng)
        + _green_checks(rng)
        + _misc_identity_checks(rng)
    )


# Exact layer


EXACT_CASES = (
    (2, 1e-4, [(1.0, 1)]),
    (3, 1e-6, [(1.0, 1)]),
    (3, 1e-6, [(1.0, 2)]),
    (3, 1e-6, [(0.5, 1), (1.0, 1)]),
)


def exact_suite(config: dict) -> list[Check]:
    checks = []
    trunc = transfer_exact.BoxTruncation(EXACT_BOX, EXACT_BOX)
    for n, t, pairs in EXACT_CASES:
        md = ModularData(t, n, 1.3)
        slices = [SliceObservable(tau, k) for tau, k in pairs]
        tail = abs(transfer_exact.truncation_tail(trunc, md))
        label = "_".join(f"tau{tau}k{k}" for tau, k in pairs)
        exact = transfer_exact.exact_observable_expectation(trunc, md, slices)
        contour = moments.contour_moment(slices, md)
        checks.append(_compare(f"moment_N{n}_{label}", contour.value, exact, 1e-4 + tail + contour.error))
        exact = transfer_exact.exact_observable_expectation(trunc, md, slices, shifted=True)
        contour = moments.shift_mixed_moment(slices, md)
        checks.append(_compare(f"shift_mixed_moment_N{n}_{label}", contour.value, exact, 1e-4 + tail + contour.error))

    md = ModularData(0.3, 2, 1.3)
    table = special_functions.discrete_gaussian_table(md.u, md.t, 1e-16)
    product = md.r(1) * md.r(2)
    direct = float(np.dot(table.probabilities, product ** table.shifts.astype(np.float64)))
    checks.append(_compare("shift_ratio_identity", moments.shift_ratio(product, md), direct, 1e-10, True))

    md = ModularData(1e-4, 2)
    small = transfer_exact.BoxTruncation(3, 3)
    z = transfer_exact.partition_function(small, md)
    rotated = [transfer_exact.partition_function_rotated(small, md, c) for c in range(2 * md.n)]
    spread = max(_relative(z, value) for value in rotated)
    checks.append(Check("partition_function_rotation", spread < 1e-12, f"max relative spread {spread:.3e}"))
    rows = transfer_exact.enumerate_configs(small, md)
    total = math.fsum(p for _, p in rows)
    checks.append(_compare("enumeration_normalized", total, 1.0, 1e-12))
    weights = math.fsum(md.q ** partitions.volume(cfg) for cfg, _ in rows)
    checks.append(_compare("enumeration_partition_function", weights, z, 1e-10, True))
    return checks


# Kernel


KERNEL_CASES = ((1, 0.01), (2, 1e-4))
KERNEL_TUPLES = 30


def kernel_suite(config: dict) -> list[Check]:
    rng = np.random.default_rng(config.get("seed", 7))
    checks = []
    for n, t in KERNEL_CASES:
        md = ModularData(t, n, config.get("u", 1.0))
        trunc = transfer_exact.BoxTruncation(EXACT_BOX, EXACT_BOX)
        window = np.arange(-3, 3) + 0.5
        cache = kernel.KernelCache(md, window, nodes=config.get("nodes", KERNEL_NODES)).build(config.get("threads", 1))
        worst_one = worst_two = 0.0
        for _ in range(KERNEL_TUPLES):
            tau = int(rng.integers(1, 2 * n + 1))
            x = float(rng.choice(window))
            point = [(tau, x)]
            worst_one = max(worst_one, abs(cache.correlation(point) - transfer_exact.exact_correlation(trunc, md, point, True)))
            other = (int(rng.integers(1, 2 * n + 1)), float(rng.choice(window)))
            if other == point[0]:
                continue
            pair = point + [other]
            worst_two = max(worst_two, abs(cache.correlation(pair) - transfer_exact.exact_correlation(trunc, md, pair, True)))
        checks.append(Check(f"kernel_density_N{n}", worst_one < 1e-5, f"max |det K - rho_1| {worst_one:.3e}"))
        checks.append(Check(f"kernel_pair_N{n}", worst_two < 1e-5, f"max |det K - rho_2| {worst_two:.3e}"))
    return checks


# Moments


def moments_suite(config: dict) -> list[Check]:
    checks = []
    md = ModularData(0.3, 4, 1.0)
    s1, s2 = SliceObservable(0.25, 1), SliceObservable(0.75, 1)
    m1 = moments.contour_moment([s1], md).value
    m2 = moments.contour_moment([s2], md).value
    m12 = moments.contour_moment([s1, s2], md)
    cumulant = moments.joint_cumulant([s1, s2], md)
    checks.append(_compare("cumulant_from_moments", cumulant.value, m12.value - m1 * m2, 1e-8 + m12.error, True))

    spec = moments.ContourSpec.for_slices([s1, s2], md)
    stretched = moments.ContourSpec((spec.radii[0] * spec.ratio**0.1, spec.radii[1]), spec.nodes)
    try:
        stretched.validate([s1, s2], md)
        other = moments.contour_moment([s1, s2], md, stretched).value
        checks.append(_compare("contour_deformation", other, m12.value, 1e-8, True))
    except QvolError as e:
        checks.append(Check("contour_deformation", False, str(e)))

    try:
        moments.contour_moment([SliceObservable(1.0, 2)], ModularData(0.5, 2))
        checks.append(Check("infeasible_contours_rejected", False, "no error for k = N"))
    except QvolError as e:
        checks.append(Check("infeasible_contours_rejected", True, str(e)))

    for t in (0.3, 0.6):
        md = ModularData(t, 8, 1.0)
        for taus in ((0.3, 0.3), (0.3, 0.7)):
            for k1 in (1, 2):
                for k2 in (1, 2):
                    a, b = SliceObservable(taus[0], k1), SliceObservable(taus[1], k2)
                    checks.append(
                        _compare(
                            f"covariance_t{t}_tau{taus[0]}_{taus[1]}_k{k1}{k2}",
                            moments.covariance_asymptotic(a, b, md),
                            moments.greens_covariance(a, b, md),
                            1e-6,
                        )
                    )
    return checks


# Asymptotics


CONVERGENCE_SIZES = (25, 50, 100, 200)


def asymptotics_suite(config: dict) -> list[Check]:
    checks = []
    t = config.get("t", 0.5)
    errors = [
        abs(moments.prelimit_mean(1, ModularData(t, n)).value - moments.mean_asymptotic(1, t))
        for n in CONVERGENCE_SIZES
    ]
    slope = -float(np.polyfit(np.log(CONVERGENCE_SIZES), np.log(errors), 1)[0])
    checks.append(Check("mean_convergence_order", 0.7 <= slope <= 1.3, f"order {slope:.3f}, errors {errors}"))

    for k in range(1, 6):
        checks.append(
            _compare(f"wallis_k{k}", moments.wallis_quadrature(k, t), moments.wallis_moment(k, t, False), 1e-10)
        )
    for value in (0.3, 0.5, 0.8):
        checks.append(_compare(f"dirichlet_energy_t{value}", limit_shape.dirichlet_energy(value), -math.log(value) / 2, 1e-8))

    for value in (0.3, 0.6):
        edge = limit_shape.liquid_lower_edge(value)
        taus = np.linspace(0.05, 1.0, 20)
        ys = edge + (np.arange(20) + 0.5) / 20 * (3.0 - edge)
        worst = max(
            limit_shape.ko_conformal_check(limit_shape.LiquidPoint(float(tau), float(y)), value)
            for tau in taus
            for y in ys
        )
        checks.append(Check(f"ko_residuals_t{value}", worst < 1e-12, f"max residual {worst:.3e}"))
        worst = 0.0
        for y in ys:
            densities = limit_shape.lozenge_densities(limit_shape.LiquidPoint(0.5, float(y)), value)
            total = densities.horizontal + densities.left + densities.right
            worst = max(worst, abs(total - 1.0), abs(densities.horizontal - (1.0 - limit_shape.H_prime(y, value))))
        checks.append(Check(f"lozenge_densities_t{value}", worst < 1e-10, f"max error {worst:.3e}"))
    return checks


# Monte Carlo


PROFILE_SEEDS = 3
PROFILE_DISTANCE = 0.08
STANDARD_ERRORS = 3.0
KAPPA3_RATIO = 0.2


def _chains(config: dict, n: int, seed: int) -> list[mcmc_sampler.ChainResult]:
    md = ModularData(config.get("t", 0.5), n, config.get("u", 1.0))
    box = None
    if config.get("box_l") and config.get("box_r"):
        box = mcmc_sampler.SamplerBox(config["box_l"], config["box_r"])
    return mcmc_sampler.run_chains(
        md,
        chains=config.get("chains", 1),
        box=box,
        sweeps=config.get("sweeps", 20_000),
        burn_in=config.get("burn_in", 2_000),
        thin=config.get("thin", 10),
        seed=seed,
        threads=config.get("threads", 1),
    )


def _stacked(results: list[mcmc_sampler.ChainResult]) -> tuple[np.ndarray, np.ndarray]:
    return np.concatenate([r.samples for r in results]), np.concatenate([r.shifts for r in results])


def mcmc_suite(config: dict) -> list[Check]:
    checks = []
    n = config.get("n", 32)
    t = config.get("t", 0.5)
    seed = config.get("seed", 7)
    small = max(1, n // 4)
    distances = []
    for offset in range(PROFILE_SEEDS):
        pair = []
        for size in (small, n):
            samples, _ = _stacked(_chains(config, size, seed + offset))
            pair.append(stats_harness.height_profile(samples, ModularData(t, size), 1.0).sup_distance)
        distances.append(pair)
    decreasing = all(large < smaller for smaller, large in distances)
    close = n < 32 or all(large < PROFILE_DISTANCE for _, large in distances)
    checks.append(Check("limit_shape_profile", decreasing and close, f"sup distances N={small} vs N={n}: {distances}"))

    md = ModularData(t, n, config.get("u", 1.0))
    results = _chains(config, n, seed)
    samples, shifts = _stacked(results)
    s = SliceObservable(1.0, 1)
    statistic = stats_harness.SliceStatistic.from_samples(samples, md, s)
    variance = statistic.variance()
    exact = moments.prelimit_covariance(s, s, md).value
    limit = moments.greens_covariance(s, s, md)
    checks.append(
        Check(
            "slice_variance",
            abs(float(variance.mean) - exact) < STANDARD_ERRORS * float(variance.error),
            f"sample {float(variance.mean):.6g} +- {float(variance.error):.2g}, finite N {exact:.6g}, limit {limit:.6g}",
        )
    )
    step = max(1, math.ceil(np.nanmax([r.iat for r in results])))
    normality = stats_harness.normality_diagnostics(statistic.values[::step])
    checks.append(
        Check(
            "slice_normality",
            normality.passed,
            f"z skewness {normality.z_skewness:.3f}, z kurtosis {normality.z_kurtosis:.3f}",
        )
    )
    ratio = abs(float(statistic.third_cumulant().mean)) / float(variance.mean) ** 1.5
    checks.append(Check("slice_third_cumulant", ratio < KAPPA3_RATIO, f"|kappa3|/kappa2^1.5 = {ratio:.4f}"))

    spec = mcmc_sampler.DiscreteGaussianSpec.from_modular(md)
    shifted = stats_harness.SliceStatistic.from_samples(samples, md, s, shifts).values
    report = stats_harness.shift_statistics(shifts, spec, shifted, statistic.values, moments.wallis_moment(1, t))
    checks.append(Check("shift_chi_square", report.passed, f"chi2={report.chi_square:.3f} dof={report.dof} p={report.p_value:.4f}"))
    decomposition = report.decomposition
    checks.append(
        Check(
            "shift_variance_decomposition",
            abs(decomposition.difference - decomposition.predicted) < STANDARD_ERRORS * decomposition.error,
            f"difference {decomposition.difference:.6g}, predicted {decomposition.predicted:.6g}, error {decomposition.error:.2g}",
        )
    )
    occupancy = max(r.boundary_occupancy for r in results)
    checks.append(Check("box_boundary", occupancy < 1e-3, f"max wall occupancy {occupancy:.3e}"))
    return checks


SUITES: dict[str, Callable[[dict], list[Check]]] = {
    "identities": identities_suite,
    "exact": exact_suite,
    "kernel": kernel_suite,
    "moments": moments_suite,
    "asymptotics": asymptotics_suite,
    "mcmc": mcmc_suite,
}


def verdict_lines(suite: str, checks: list[Check]) -> list[str]:
    failed = [c for c in checks if not c.passed]
    lines = [f"suite {suite}: {'PASS' if not failed else 'FAIL'} ({len(checks) - len(failed)}/{len(checks)} checks)"]
    lines += [f"  FAIL {c.name}: {c.detail}" for c in failed]
    return lines


def run_suite(suite: str, config: dict, run_dir: Path) -> bool:
    """Run one suite, write checks.csv and verdict.txt, and report whether every check passed."""
    checks = SUITES[suite](config)
    write_csv(run_dir / "checks.csv", config, CHECK_COLUMNS, checks)
    lines = verdict_lines(suite, checks)
    write_lines(run_dir / "verdict.txt", config, lines)
    for line in lines:
        logger.info(line)
    return all(c.passed for c in checks)
