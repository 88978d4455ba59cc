"""Density-weighted averaging of the leading exponent over an ensemble.

Initial conditions are drawn from the packet density rho_0 restricted to a
box (rejection sampling under a scanned envelope), each trajectory is
classified by the doubling-horizon criteria, and the surviving per-trajectory
exponents are averaged.  Because the sample already follows rho_0 /
integral(rho_0), the plain mean estimates the normalized density-weighted
integral of lambda_1 regardless of the packet's coefficient norm.

Determinism: every trajectory draws its randomness from a stream keyed by
(seed, index) and the reduction runs in index order, so reports are
bit-identical for any worker count.
"""

from __future__ import annotations

import csv
import hashlib
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .flow import IntegratorConfig, StepUnderflow
from .lyapunov import (
    ConvergenceVerdict,
    LyapunovConfig,
    VerdictKind,
    estimate_lambda1,
    random_orthonormal_frame,
)
from .wavepacket import NodeProximity, WavepacketFlow, WavepacketSpec, field_arrays

#: Exponents in (0, this bound) count as mildly chaotic; above as chaotic.
MILDLY_CHAOTIC_BOUND = 1e-2

#: Per-trajectory exponents below this would violate the boundedness of the
#: density along trajectories and abort the run.
LAMBDA1_FLOOR = -1e-3

REGION_CLASSES = ("regular", "mildly_chaotic", "chaotic")


@dataclass(frozen=True)
class SamplingRegion:
    """Axis-aligned box of initial conditions."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    z_lo: float
    z_hi: float

    def __post_init__(self):
        for lo, hi, name in (
            (self.x_lo, self.x_hi, "x"),
            (self.y_lo, self.y_hi, "y"),
            (self.z_lo, self.z_hi, "z"),
        ):
            if not lo < hi:
                raise ValueError(f"{name} bounds must satisfy lo < hi")

    @classmethod
    def default(cls) -> "SamplingRegion":
        """Standard box capturing essentially all of the benchmark densities."""
        return cls(-9.0, 9.0, -6.0, 6.0, -8.0, 8.0)

    @property
    def lows(self) -> np.ndarray:
        return np.array([self.x_lo, self.y_lo, self.z_lo])

    @property
    def highs(self) -> np.ndarray:
        return np.array([self.x_hi, self.y_hi, self.z_hi])

    @property
    def volume(self) -> float:
        return float(np.prod(self.highs - self.lows))

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.all((pts >= self.lows) & (pts <= self.highs), axis=-1)

    def as_tuple(self) -> tuple:
        return (self.x_lo, self.x_hi, self.y_lo, self.y_hi, self.z_lo, self.z_hi)


@dataclass(frozen=True)
class SamplingStats:
    """Bookkeeping from one rejection-sampling pass."""

    n_proposed: int
    n_accepted: int
    envelope: float
    region_volume: float

    @property
    def acceptance(self) -> float:
        return self.n_accepted / self.n_proposed if self.n_proposed else 0.0

    @property
    def normalization_estimate(self) -> float:
        """Monte Carlo estimate of the density mass inside the region."""
        return self.acceptance * self.envelope * self.region_volume


def _density_fn(spec_or_density, t: float):
    """Normalize the sampler input: a packet spec or a plain density callable."""
    if callable(spec_or_density) and not isinstance(spec_or_density, WavepacketSpec):
        return lambda pts: np.asarray(spec_or_density(pts), dtype=float)
    spec = spec_or_density
    return lambda pts: field_arrays(spec, pts, t)[1]


def region_mass(
    spec: WavepacketSpec, region: SamplingRegion, t: float = 0.0, nodes: int = 80
) -> float:
    """Density mass inside the region by tensor Gauss-Legendre quadrature.

    Deterministic, so reports built on it stay bit-identical.  The mass is
    invariant in time along the flow, but the quadrature is evaluated at the
    requested instant.
    """
    lo, hi = region.lows, region.highs
    xs, ws = [], []
    for i in range(3):
        x, w = np.polynomial.legendre.leggauss(nodes)
        xs.append(0.5 * (hi[i] + lo[i]) + 0.5 * (hi[i] - lo[i]) * x)
        ws.append(0.5 * (hi[i] - lo[i]) * w)
    gx, gy, gz = np.meshgrid(*xs, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    rho = field_arrays(spec, pts, t)[1].reshape(nodes, nodes, nodes)
    return float(np.einsum("abc,a,b,c->", rho, ws[0], ws[1], ws[2]))


def scan_density_max(
    spec_or_density,
    region: SamplingRegion,
    t: float = 0.0,
    coarse: int = 40,
    refine_points: int = 9,
) -> float:
    """Two-stage grid scan for the density maximum over the region.

    The refinement stage re-scans one coarse cell around the argmax with a
    fine grid, so sharp peaks (atomic-scale cusps) are captured well enough
    for an envelope with a modest safety margin.
    """
    density = _density_fn(spec_or_density, t)
    lo, hi = region.lows, region.highs
    axes = [np.linspace(lo[i], hi[i], coarse) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    rho = density(grid)
    best = int(np.argmax(rho))
    best_val = float(rho[best])
    center = grid[best]
    span = (hi - lo) / (coarse - 1)
    fine_axes = [
        np.linspace(
            max(lo[i], center[i] - span[i]),
            min(hi[i], center[i] + span[i]),
            2 * refine_points + 1,
        )
        for i in range(3)
    ]
    fine = np.stack(np.meshgrid(*fine_axes, indexing="ij"), axis=-1).reshape(-1, 3)
    rho_fine = density(fine)
    return max(best_val, float(np.max(rho_fine)))


def sample_initial_conditions(
    spec_or_density,
    region: SamplingRegion,
    count: int,
    rng_seed: int,
    t: float = 0.0,
    margin: float = 0.2,
    chunk: int = 8192,
    return_stats: bool = False,
):
    """Draw ``count`` points distributed as rho(., t) restricted to the region.

    Rejection sampling under the envelope (1 + margin) * scanned maximum;
    deterministic for a fixed rng_seed.  A proposal whose density exceeds the
    envelope aborts the run: the scan grid was too coarse for this packet.
    ``spec_or_density`` is a packet spec or any nonnegative density callable
    over (N, 3) points.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    density = _density_fn(spec_or_density, t)
    envelope = (1.0 + margin) * scan_density_max(spec_or_density, region, t)
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed, spawn_key=(0,)))
    lo, hi = region.lows, region.highs
    out = np.empty((count, 3))
    got = 0
    n_proposed = 0
    while got < count:
        pts = rng.uniform(lo, hi, size=(chunk, 3))
        u = rng.uniform(0.0, 1.0, size=chunk)
        rho = density(pts)
        n_proposed += chunk
        if np.any(rho > envelope):
            worst = float(np.max(rho))
            raise RuntimeError(
                f"density {worst:.3e} exceeds envelope {envelope:.3e}; "
                "the scan grid is too coarse for this packet (raise margin or grid)"
            )
        acc = pts[u * envelope <= rho]
        take = min(count - got, acc.shape[0])
        out[got : got + take] = acc[:take]
        got += take
    stats = SamplingStats(
        n_proposed=n_proposed,
        n_accepted=got,
        envelope=envelope,
        region_volume=region.volume,
    )
    if return_stats:
        return out, stats
    return out


def region_class(lambda1: float) -> str:
    """Three-way label by exponent value."""
    if lambda1 <= 0.0:
        return "regular"
    if lambda1 < MILDLY_CHAOTIC_BOUND:
        return "mildly_chaotic"
    return "chaotic"


@dataclass(frozen=True)
class TrajectoryRecord:
    """One ensemble member: start point, verdict and exponent."""

    index: int
    r0: tuple
    status: str  # ok | node | step_underflow | undecided
    verdict: Optional[str]
    lambda1: float
    region_class: Optional[str]
    wall_time: float
    seed: int

    @property
    def included(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class QleReport:
    """Density-weighted average of the leading exponent over the region.

    ``lambda1_mean`` is the estimate of the region integral of
    lambda_1 * rho_0 divided by the packet norm: the conditional sample mean
    scaled by the region's density mass.  ``sample_mean`` is the raw
    conditional mean over the included trajectories.
    """

    lambda1_mean: float
    std_error: float
    sample_mean: float
    region_mass: float
    n_samples: int
    n_included: int
    n_excluded: int
    class_counts: dict
    config_digest: str
    invalid: bool
    records: tuple = field(default_factory=tuple, repr=False)

    def to_json(self) -> str:
        """Canonical JSON (stable key order, shortest round-trip floats)."""
        import json

        payload = {
            "lambda1_mean": self.lambda1_mean,
            "std_error": self.std_error,
            "sample_mean": self.sample_mean,
            "region_mass": self.region_mass,
            "n_samples": self.n_samples,
            "n_included": self.n_included,
            "n_excluded": self.n_excluded,
            "class_counts": {k: self.class_counts[k] for k in REGION_CLASSES},
            "config_digest": self.config_digest,
            "invalid": self.invalid,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _spec_fingerprint(spec: WavepacketSpec) -> str:
    rows = [
        (a.real, a.imag, qn.n, qn.l, qn.m) for a, qn in spec.terms
    ]
    spin = spec.spin.s if spec.spin is not None else None
    return repr((tuple(rows), spin))


def config_digest(
    spec: WavepacketSpec,
    region: SamplingRegion,
    lyap_cfg: LyapunovConfig,
    flow_cfg: IntegratorConfig,
    rng_seed: int,
    jacobian_scheme: Optional[str],
    fd_step: float,
) -> str:
    payload = "|".join(
        [
            _spec_fingerprint(spec),
            repr(region.as_tuple()),
            repr(lyap_cfg),
            repr(flow_cfg),
            repr(int(rng_seed)),
            repr(jacobian_scheme),
            repr(float(fd_step)),
        ]
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _trajectory_seed(rng_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(rng_seed, spawn_key=(1, index))


def run_trajectory(
    provider: WavepacketFlow,
    index: int,
    r0: np.ndarray,
    rng_seed: int,
    lyap_cfg: LyapunovConfig,
    flow_cfg: IntegratorConfig,
) -> TrajectoryRecord:
    """Classify one trajectory with its own deterministic seed frame."""
    ss = _trajectory_seed(rng_seed, index)
    traj_seed = int(ss.generate_state(1)[0])
    rng = np.random.default_rng(ss)
    seeds = random_orthonormal_frame(rng)
    start = time.perf_counter()
    status = "ok"
    verdict_kind: Optional[str] = None
    lambda1 = math.nan
    try:
        verdict, _ = estimate_lambda1(
            provider, r0, lyap_cfg, flow_cfg, seeds=seeds
        )
        verdict_kind = verdict.kind.value
        if verdict.kind == VerdictKind.UNDECIDED:
            status = "undecided"
        else:
            lambda1 = verdict.lambda1_estimate
    except NodeProximity:
        status = "node"
    except StepUnderflow:
        status = "step_underflow"
    wall = time.perf_counter() - start
    if status == "ok":
        if lambda1 < LAMBDA1_FLOOR:
            raise RuntimeError(
                f"trajectory {index}: exponent {lambda1} violates the sum-rule floor"
            )
        if lambda1 < 0.0:
            warnings.warn(
                f"trajectory {index}: clamping slightly negative exponent {lambda1}"
            )
            lambda1 = 0.0
        rclass = region_class(lambda1)
    else:
        rclass = None
        lambda1 = math.nan
    return TrajectoryRecord(
        index=index,
        r0=tuple(float(c) for c in r0),
        status=status,
        verdict=verdict_kind,
        lambda1=lambda1,
        region_class=rclass,
        wall_time=wall,
        seed=traj_seed,
    )


def estimate_qle(
    spec: WavepacketSpec,
    region: SamplingRegion,
    n_samples: int,
    lyap_cfg: Optional[LyapunovConfig] = None,
    flow_cfg: Optional[IntegratorConfig] = None,
    rng_seed: int = 0,
    parallelism: int = 1,
    jacobian_scheme: Optional[str] = None,
    fd_step: float = 1e-5,
    existing: Optional[dict] = None,
    on_record=None,
) -> QleReport:
    """Monte Carlo estimate of the density-weighted leading exponent.

    ``existing`` maps trajectory index to a previously computed record
    (checkpoint resume); those indices are not recomputed, and the final
    report is identical to an uninterrupted run.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    lyap_cfg = lyap_cfg or LyapunovConfig()
    flow_cfg = flow_cfg or IntegratorConfig()
    provider = WavepacketFlow(spec, jacobian_scheme=jacobian_scheme, fd_step=fd_step)
    digest = config_digest(
        spec, region, lyap_cfg, flow_cfg, rng_seed, provider.jacobian_scheme, fd_step
    )
    points = sample_initial_conditions(spec, region, n_samples, rng_seed)
    provider.rhs_factory(3)  # compile before any worker threads share the cache

    existing = existing or {}
    todo = [i for i in range(n_samples) if i not in existing]
    records_by_index: dict = dict(existing)

    def work(i: int) -> TrajectoryRecord:
        return run_trajectory(provider, i, points[i], rng_seed, lyap_cfg, flow_cfg)

    if parallelism > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            for rec in pool.map(work, todo):
                records_by_index[rec.index] = rec
                if on_record is not None:
                    on_record(rec)
    else:
        for i in todo:
            rec = work(i)
            records_by_index[rec.index] = rec
            if on_record is not None:
                on_record(rec)

    records = tuple(records_by_index[i] for i in range(n_samples))
    included = [r.lambda1 for r in records if r.included]
    n_inc = len(included)
    n_exc = n_samples - n_inc
    # the sample follows rho_0 conditioned on the region, so the region
    # integral is the conditional mean times the region's share of the mass
    mass = region_mass(spec, region) / spec.norm_squared
    if n_inc == 0:
        cond = math.nan
        mean = math.nan
        sem = math.nan
    else:
        cond = float(np.mean(included))
        mean = cond * mass
        sem = (
            float(np.std(included, ddof=1) / math.sqrt(n_inc)) * mass
            if n_inc > 1
            else 0.0
        )
    counts = {name: 0 for name in REGION_CLASSES}
    for r in records:
        if r.included:
            counts[r.region_class] += 1
    return QleReport(
        lambda1_mean=mean,
        std_error=sem,
        sample_mean=cond,
        region_mass=mass,
        n_samples=n_samples,
        n_included=n_inc,
        n_excluded=n_exc,
        class_counts=counts,
        config_digest=digest,
        invalid=n_exc > 0.05 * n_samples,
        records=records,
    )


def classification_map(
    records: Iterable[TrajectoryRecord], axis: str = "x", lo: float = -0.5, hi: float = 0.5
) -> list:
    """Project start points inside a slab onto the other two axes.

    Returns (coord_a, coord_b, region_class) triples for included records,
    with the remaining axes ordered x < y < z.
    """
    axes = {"x": 0, "y": 1, "z": 2}
    if axis not in axes:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    k = axes[axis]
    keep = [i for i in range(3) if i != k]
    out = []
    for rec in records:
        if not rec.included:
            continue
        if lo < rec.r0[k] < hi:
            out.append((rec.r0[keep[0]], rec.r0[keep[1]], rec.region_class))
    return out


@dataclass(frozen=True)
class RobustnessResult:
    """Reports from repeated runs under different accuracy settings."""

    reports: tuple
    spread: float


def robustness_study(
    spec: WavepacketSpec,
    region: SamplingRegion,
    n_samples: int,
    accuracy_variants: Sequence[tuple],
    rng_seed: int = 0,
    parallelism: int = 1,
    jacobian_scheme: Optional[str] = None,
    fd_step: float = 1e-5,
) -> RobustnessResult:
    """Re-estimate the ensemble average under each (flow_cfg, lyap_cfg) variant.

    All variants consume the same seed stream, so differences isolate the
    accuracy parameters.  The spread is max |L_i - L_j| / mean.
    """
    if len(accuracy_variants) < 2:
        raise ValueError("need at least two accuracy variants")
    reports = []
    for flow_cfg, lyap_cfg in accuracy_variants:
        reports.append(
            estimate_qle(
                spec,
                region,
                n_samples,
                lyap_cfg=lyap_cfg,
                flow_cfg=flow_cfg,
                rng_seed=rng_seed,
                parallelism=parallelism,
                jacobian_scheme=jacobian_scheme,
                fd_step=fd_step,
            )
        )
    values = np.array([r.lambda1_mean for r in reports])
    mean = float(np.mean(values))
    spread = float(np.max(values) - np.min(values)) / mean if mean != 0 else 0.0
    return RobustnessResult(reports=tuple(reports), spread=spread)


_RECORD_FIELDS = (
    "index",
    "x0",
    "y0",
    "z0",
    "status",
    "verdict",
    "lambda1",
    "region_class",
    "seed",
    "wall_time",
)


def records_to_csv(records: Iterable[TrajectoryRecord], path) -> None:
    """Write trajectory records; every column except wall_time is deterministic."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_RECORD_FIELDS)
        for r in records:
            writer.writerow(
                [
                    r.index,
                    repr(r.r0[0]),
                    repr(r.r0[1]),
                    repr(r.r0[2]),
                    r.status,
                    r.verdict if r.verdict is not None else "",
                    repr(r.lambda1),
                    r.region_class if r.region_class is not None else "",
                    r.seed,
                    f"{r.wall_time:.3f}",
                ]
            )


def records_from_csv(path) -> dict:
    """Read records back as {index: TrajectoryRecord} for checkpoint resume."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            idx = int(row["index"])
            out[idx] = TrajectoryRecord(
                index=idx,
                r0=(float(row["x0"]), float(row["y0"]), float(row["z0"])),
                status=row["status"],
                verdict=row["verdict"] or None,
                lambda1=float(row["lambda1"]),
                region_class=row["region_class"] or None,
                wall_time=float(row["wall_time"]),
                seed=int(row["seed"]),
            )
    return out
