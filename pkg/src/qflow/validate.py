"""Verifiable consistency experiments on a packet's trajectory flow.

Each check compares two independently computed routes to the same quantity:
the density along a trajectory against the density reconstructed from the
exponent sums, the exponent sums against the node-avoidance limit, the
transported ensemble against the evolved density, the exponent against
re-runs with jittered accuracy, and trajectory separation under a tiny
L2 perturbation of the packet coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .flow import IntegratorConfig, flow_map_ensemble
from .lyapunov import (
    BggsRun,
    Integration,
    LyapunovConfig,
    VerdictKind,
    classify,
    llsa,
)
from .qle import SamplingRegion, sample_initial_conditions
from .wavepacket import (
    WavepacketFlow,
    WavepacketSpec,
    field_arrays,
    sample_field,
)


@dataclass(frozen=True)
class CheckOutcome:
    """Result of one consistency experiment."""

    name: str
    statistic: float
    tolerance: float
    passed: bool
    series: dict = field(default_factory=dict, repr=False)
    details: dict = field(default_factory=dict)


def _outcome(name, statistic, tolerance, series=None, details=None, larger_ok=False):
    statistic = float(statistic)
    ok = statistic >= tolerance if larger_ok else statistic <= tolerance
    return CheckOutcome(
        name=name,
        statistic=statistic,
        tolerance=float(tolerance),
        passed=bool(ok),
        series=series or {},
        details=details or {},
    )


def density_relation_check(
    spec: WavepacketSpec,
    r0,
    t_max: float,
    flow_cfg: Optional[IntegratorConfig] = None,
    renorm_interval: float = 1.0,
    tolerance: float = 1e-2,
    t0: float = 0.0,
) -> CheckOutcome:
    """Density along the trajectory vs rho_0 * exp(-sum_i lambda_i t).

    The exponent sums are accumulated through the tangent-frame route, so the
    comparison exercises the full chain from the linearized dynamics back to
    the wave packet.  Statistic: max relative error over the horizon.
    """
    flow_cfg = flow_cfg or IntegratorConfig()
    provider = WavepacketFlow(spec)
    lyap_cfg = LyapunovConfig(renorm_interval=renorm_interval)
    run = BggsRun(provider, r0, lyap_cfg, flow_cfg, t0=t0)
    run.extend_to(t0 + t_max)
    series = run.series()
    rho0 = float(sample_field(spec, np.asarray(r0, dtype=float), t0).rho)
    direct = series.densities
    reconstructed = rho0 * np.exp(-series.sums() * series.times)
    rel = np.abs(reconstructed - direct) / np.abs(direct)
    return _outcome(
        "density_relation",
        float(np.max(rel)),
        tolerance,
        series={
            "t": series.times,
            "rho_direct": direct,
            "rho_reconstructed": reconstructed,
            "rel_error": rel,
        },
    )


def sum_rule_check(
    spec: WavepacketSpec,
    r0,
    t_max: float,
    flow_cfg: Optional[IntegratorConfig] = None,
    renorm_interval: float = 1.0,
    tolerance: float = 1e-3,
    t0: float = 0.0,
) -> CheckOutcome:
    """|sum of the three exponents| at the horizon; trajectories avoid nodes.

    Equivalent to boundedness of ln rho along the path, so the running series
    must trend to zero.  Statistic: |sum(t_max)|.
    """
    flow_cfg = flow_cfg or IntegratorConfig()
    provider = WavepacketFlow(spec)
    lyap_cfg = LyapunovConfig(renorm_interval=renorm_interval)
    run = BggsRun(provider, r0, lyap_cfg, flow_cfg, t0=t0)
    run.extend_to(t0 + t_max)
    series = run.series()
    sums = series.sums()
    return _outcome(
        "sum_rule",
        abs(float(sums[-1])),
        tolerance,
        series={
            "t": series.times,
            "lambda1": series.lambdas[:, 0],
            "lambda2": series.lambdas[:, 1],
            "lambda3": series.lambdas[:, 2],
            "sum": sums,
        },
    )


def measure_invariance_check(
    spec: WavepacketSpec,
    region: SamplingRegion,
    n_points: int,
    t: float,
    bins: int = 20,
    seed: int = 0,
    flow_cfg: Optional[IntegratorConfig] = None,
    tolerance: float = 0.05,
) -> CheckOutcome:
    """Transported sample vs evolved density, compared bin by bin.

    Points drawn from rho(., 0) are advanced to time t; their histogram over
    the region is compared with the density rho(., t) integrated over the
    same bins (3-point Gauss-Legendre per axis).  Statistic: total variation
    distance between the two normalized bin distributions.  Points that fail
    to integrate are dropped; more than 5 percent of them invalidates the
    check.
    """
    flow_cfg = flow_cfg or IntegratorConfig(rel_tol=1e-6, abs_tol=1e-6)
    provider = WavepacketFlow(spec)
    pts = sample_initial_conditions(spec, region, n_points, seed)
    moved, alive = flow_map_ensemble(
        provider, pts, t, flow_cfg, node_threshold=provider.node_threshold
    )
    n_failed = int(np.count_nonzero(~alive))
    moved = moved[alive]

    lo, hi = region.lows, region.highs
    edges = [np.linspace(lo[i], hi[i], bins + 1) for i in range(3)]
    hist, _ = np.histogramdd(moved, bins=edges)
    inside = hist.sum()
    if inside == 0:
        raise RuntimeError("no transported points landed inside the region")
    p = hist / inside

    # density mass per bin via tensor-product Gauss-Legendre quadrature
    nodes, weights = np.polynomial.legendre.leggauss(3)
    axes_pts = []
    axes_wts = []
    for i in range(3):
        centers = 0.5 * (edges[i][1:] + edges[i][:-1])
        half = 0.5 * (edges[i][1:] - edges[i][:-1])
        axes_pts.append((centers[:, None] + half[:, None] * nodes[None, :]).ravel())
        axes_wts.append((half[:, None] * weights[None, :]).ravel())
    gx, gy, gz = np.meshgrid(axes_pts[0], axes_pts[1], axes_pts[2], indexing="ij")
    grid = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    rho = field_arrays(spec, grid, t)[1].reshape(bins * 3, bins * 3, bins * 3)
    wx, wy, wz = axes_wts
    mass = np.einsum(
        "abc,a,b,c->abc",
        rho,
        wx,
        wy,
        wz,
    )
    mass = mass.reshape(bins, 3, bins, 3, bins, 3).sum(axis=(1, 3, 5))
    q = mass / mass.sum()

    tv = 0.5 * float(np.abs(p - q).sum())
    failed_frac = n_failed / n_points
    outcome = _outcome(
        "measure_invariance",
        tv,
        tolerance,
        details={"n_failed": n_failed, "failed_fraction": failed_frac},
    )
    if failed_frac > 0.05:
        outcome = CheckOutcome(
            name=outcome.name,
            statistic=outcome.statistic,
            tolerance=outcome.tolerance,
            passed=False,
            series=outcome.series,
            details={**outcome.details, "invalid": True},
        )
    return outcome


@dataclass(frozen=True)
class JitterConfig:
    """Multiplicative jitter ranges for the robustness histogram."""

    tol_factor: float = 2.0
    renorm_factor: float = 1.25


def exponent_robustness_histogram(
    spec: WavepacketSpec,
    r0,
    n_repeats: int = 100,
    jitter: Optional[JitterConfig] = None,
    lyap_cfg: Optional[LyapunovConfig] = None,
    flow_cfg: Optional[IntegratorConfig] = None,
    seed: int = 0,
    tolerance: float = 0.10,
    parallelism: int = 1,
) -> CheckOutcome:
    """Distribution of the exponent under jittered accuracy parameters.

    Each repeat re-runs the fixed-horizon slope estimate with tolerances and
    renorm interval scaled by random factors and a fresh random seed frame.
    Statistic: relative standard deviation sigma / mean.
    """
    jitter = jitter or JitterConfig()
    lyap_cfg = lyap_cfg or LyapunovConfig()
    flow_cfg = flow_cfg or IntegratorConfig()
    provider = WavepacketFlow(spec)
    provider.rhs_factory(3)
    root = np.random.SeedSequence(seed, spawn_key=(2,))
    streams = root.spawn(n_repeats)

    def one(i: int) -> float:
        rng = np.random.default_rng(streams[i])
        tol_scale = jitter.tol_factor ** rng.uniform(-1.0, 1.0)
        ren_scale = jitter.renorm_factor ** rng.uniform(-1.0, 1.0)
        fcfg = IntegratorConfig(
            rel_tol=flow_cfg.rel_tol * tol_scale,
            abs_tol=flow_cfg.abs_tol * tol_scale,
            initial_step=flow_cfg.initial_step,
            max_step=flow_cfg.max_step,
            max_time=flow_cfg.max_time,
        )
        lcfg = LyapunovConfig(
            renorm_interval=lyap_cfg.renorm_interval * ren_scale,
            t1=lyap_cfg.t1,
            growth=lyap_cfg.growth,
            max_time=lyap_cfg.max_time,
            regular_threshold=lyap_cfg.regular_threshold,
            rmse_fraction=lyap_cfg.rmse_fraction,
            window_start_frac=lyap_cfg.window_start_frac,
            subintervals=lyap_cfg.subintervals,
        )
        from .lyapunov import random_orthonormal_frame

        seeds = random_orthonormal_frame(rng)
        run = BggsRun(provider, r0, lcfg, fcfg, seeds=seeds)
        run.extend_to(lcfg.t1)
        series = run.series()
        slope, _, _ = llsa(
            series.times,
            series.lambda1() * series.times,
            window=(lcfg.window_start_frac * lcfg.t1, lcfg.t1),
        )
        return slope

    if parallelism > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            values = np.array(list(pool.map(one, range(n_repeats))))
    else:
        values = np.array([one(i) for i in range(n_repeats)])
    mean = float(np.mean(values))
    sigma = float(np.std(values))
    stat = sigma / abs(mean) if mean != 0 else math.inf
    return _outcome(
        "exponent_robustness",
        stat,
        tolerance,
        series={"lambda1": values},
        details={"mean": mean, "sigma": sigma},
    )


def perturbed_spec(
    spec: WavepacketSpec,
    size: float,
    index: int = 0,
    mode: str = "magnitude",
    inject_qn=None,
) -> WavepacketSpec:
    """Packet at exact L2 distance ``size`` from ``spec``.

    mode "magnitude" stretches one coefficient along its own phase; mode
    "inject" adds a new eigenstate term with amplitude ``size`` (this changes
    the velocity field even for single-term packets, whose field is invariant
    under coefficient scaling).
    """
    if size < 0:
        raise ValueError("perturbation size must be >= 0")
    if mode == "magnitude":
        if size == 0:
            return spec
        alpha, _ = spec.terms[index]
        direction = alpha / abs(alpha) if alpha != 0 else 1.0
        return spec.with_coefficient(index, alpha + direction * size)
    if mode == "inject":
        if inject_qn is None:
            raise ValueError("mode 'inject' needs inject_qn")
        if size == 0:
            return spec
        if any(qn == inject_qn for _, qn in spec.terms):
            raise ValueError("inject_qn already present; use mode='magnitude'")
        return spec.with_extra_term(size, inject_qn)
    raise ValueError(f"unknown perturbation mode {mode!r}")


def wavefunction_sensitivity(
    spec: WavepacketSpec,
    perturbation_size: float,
    r0,
    t_max: float,
    flow_cfg: Optional[IntegratorConfig] = None,
    sample_dt: float = 1.0,
    mode: str = "magnitude",
    index: int = 0,
    inject_qn=None,
    reference_lambda1: Optional[float] = None,
    lyap_cfg: Optional[LyapunovConfig] = None,
    fit_floor: float = 1e-7,
    saturation: float = 0.5,
    rate_factor: float = 2.0,
    t0: float = 0.0,
) -> CheckOutcome:
    """Separation of twin trajectories under a tiny packet perturbation.

    Both trajectories start from the same r0 but follow the original and the
    perturbed packet.  The statistic is the fitted exponential rate of the
    separation over the pre-saturation window; for a chaotic start it must
    lie within ``rate_factor`` of the trajectory's own exponent (computed on
    the fly when not supplied).
    """
    flow_cfg = flow_cfg or IntegratorConfig()
    spec_b = perturbed_spec(spec, perturbation_size, index=index, mode=mode, inject_qn=inject_qn)
    actual = spec.l2_distance(spec_b)
    if perturbation_size > 0 and not math.isclose(
        actual, perturbation_size, rel_tol=1e-12, abs_tol=0.0
    ):
        raise AssertionError("perturbation did not hit the requested L2 distance")
    prov_a = WavepacketFlow(spec)
    prov_b = WavepacketFlow(spec_b)
    r0 = np.asarray(r0, dtype=float)
    run_a = Integration(prov_a, r0.copy(), t0, flow_cfg, n_columns=0)
    run_b = Integration(prov_b, r0.copy(), t0, flow_cfg, n_columns=0)
    n_out = int(round(t_max / sample_dt))
    times = np.empty(n_out)
    sep = np.empty(n_out)
    for k in range(n_out):
        tk = t0 + (k + 1) * sample_dt
        ya = run_a.advance_to(tk)
        yb = run_b.advance_to(tk)
        times[k] = tk - t0
        sep[k] = float(np.linalg.norm(ya[0:3] - yb[0:3]))

    if perturbation_size == 0:
        stat = float(np.max(sep))
        return _outcome(
            "wavefunction_sensitivity",
            stat,
            0.0,
            series={"t": times, "separation": sep},
            details={"rate": 0.0, "window": (0.0, 0.0)},
        )

    grow = (sep > fit_floor) & (sep < saturation)
    if np.count_nonzero(grow) < 2:
        raise RuntimeError("no usable pre-saturation window for the separation fit")
    t_fit = times[grow]
    rate, _, _ = llsa(t_fit, np.log(sep[grow]))

    if reference_lambda1 is None:
        lyap_cfg = lyap_cfg or LyapunovConfig()
        from .lyapunov import estimate_lambda1

        verdict, _ = estimate_lambda1(prov_a, r0, lyap_cfg, flow_cfg, t0=t0)
        reference_lambda1 = verdict.lambda1_estimate
        if verdict.kind != VerdictKind.CHAOTIC:
            reference_lambda1 = math.nan

    if reference_lambda1 is not None and math.isfinite(reference_lambda1):
        ratio = rate / reference_lambda1
        ok = (1.0 / rate_factor) <= ratio <= rate_factor
        stat = ratio
    else:
        ok = True
        stat = rate
    outcome = CheckOutcome(
        name="wavefunction_sensitivity",
        statistic=float(stat),
        tolerance=rate_factor,
        passed=bool(ok),
        series={"t": times, "separation": sep},
        details={
            "rate": float(rate),
            "reference_lambda1": float(reference_lambda1)
            if reference_lambda1 is not None
            else math.nan,
            "window": (float(t_fit[0]), float(t_fit[-1])),
        },
    )
    return outcome
