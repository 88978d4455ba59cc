"""Lyapunov spectrum estimation and convergence classification.

The spectrum estimator propagates an orthonormal frame of tangent vectors
with the trajectory, reorthonormalizes it on a fixed time grid (modified
Gram-Schmidt) and accumulates the log column norms; the partial sums of the
accumulated rates equal the log volume growth of the corresponding tangent
parallelepiped at every recorded time.  A singular-value route over the flow
matrix provides an independent short-horizon check.

Classification of a trajectory follows two least-squares criteria applied on
the trailing window [0.4 t_k, t_k]: decreasing piecewise fits of lambda_1(t)
with a small terminal value mark a regular trajectory (exponent exactly 0);
a low-residual linear fit of lambda_1(t) * t marks a chaotic one, with the
fitted slope as the exponent.  Anything else is undecided and the horizon is
doubled, up to a cap.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .flow import Integration, IntegratorConfig


class VerdictKind(str, enum.Enum):
    REGULAR = "regular"
    CHAOTIC = "chaotic"
    UNDECIDED = "undecided"


@dataclass(frozen=True)
class LyapunovConfig:
    """Spectrum and classification settings.

    The time horizon schedule starts at t1 and doubles (factor ``growth``)
    whenever classification stays undecided, capped at max_time.
    """

    renorm_interval: float = 1.0
    t1: float = 2000.0
    growth: float = 2.0
    max_time: float = 64000.0
    regular_threshold: float = 2e-3
    rmse_fraction: float = 0.05
    window_start_frac: float = 0.4
    subintervals: int = 5

    def __post_init__(self):
        if self.renorm_interval <= 0:
            raise ValueError("renorm_interval must be positive")
        if not 0 < self.window_start_frac < 1:
            raise ValueError("window_start_frac must lie in (0, 1)")


@dataclass(frozen=True)
class ConvergenceVerdict:
    """Outcome of the two-criteria classification on one window."""

    kind: VerdictKind
    lambda1_estimate: float
    fit_rmse: float
    window: tuple

    def __post_init__(self):
        if self.kind == VerdictKind.REGULAR and self.lambda1_estimate != 0.0:
            raise ValueError("regular verdicts carry a zero exponent")
        if self.kind == VerdictKind.CHAOTIC and not self.lambda1_estimate > 0.0:
            raise ValueError("chaotic verdicts need a positive exponent")


@dataclass(frozen=True)
class ExponentSeries:
    """Finite-time spectrum along one trajectory, recorded at renorm times.

    ``lambdas[k]`` holds the three exponents at elapsed time ``times[k]``,
    sorted descending.  ``frame_lambdas`` keeps them in seed-vector order
    (the raw accumulators, whose first column matches the single-vector
    running mean exactly); orderings can cross during early transients.
    ``logdet_u`` is only filled when the run tracked the full flow matrix
    alongside the frame.
    """

    times: np.ndarray
    lambdas: np.ndarray
    renorm_interval: float
    seed_vectors: np.ndarray
    positions: np.ndarray
    densities: np.ndarray
    frame_lambdas: Optional[np.ndarray] = None
    logdet_u: Optional[np.ndarray] = None

    def sums(self) -> np.ndarray:
        """Sum of the three exponents at each recorded time."""
        return self.lambdas.sum(axis=1)

    def lambda1(self) -> np.ndarray:
        return self.lambdas[:, 0]


def random_orthonormal_frame(rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random orthonormal 3-frame with a deterministic sign fix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    return q * np.sign(np.diag(r))


def _check_orthonormal(seeds: np.ndarray):
    gram = seeds.T @ seeds
    if not np.allclose(gram, np.eye(3), atol=1e-10):
        raise ValueError("seed vectors must be orthonormal")


class BggsRun:
    """Incremental spectrum estimation, extendable in time.

    The combined state holds the position, the tangent frame (columns), an
    optional flow-matrix block, and the divergence accumulator; everything
    advances under the same accepted steps.
    """

    def __init__(
        self,
        provider,
        r0,
        lyap_cfg: LyapunovConfig,
        int_cfg: IntegratorConfig,
        seeds: Optional[np.ndarray] = None,
        t0: float = 0.0,
        track_flow_matrix: bool = False,
        prefer_compiled: bool = True,
    ):
        if seeds is None:
            seeds = np.eye(3)
        seeds = np.asarray(seeds, dtype=float)
        _check_orthonormal(seeds)
        self.lyap_cfg = lyap_cfg
        self.t0 = float(t0)
        self.track = bool(track_flow_matrix)
        self._p = 6 if self.track else 3
        blocks = [np.asarray(r0, dtype=float)]
        frame = seeds.copy()
        if self.track:
            m = np.hstack([frame, np.eye(3)])
        else:
            m = frame
        blocks.append(m.ravel())
        blocks.append([0.0])
        y0 = np.concatenate(blocks)
        self._run = Integration(
            provider, y0, self.t0, int_cfg, n_columns=self._p, prefer_compiled=prefer_compiled
        )
        self._density = getattr(provider, "density", None)
        self._seeds = seeds.copy()
        self._accum = np.zeros(3)
        self._k = 0
        self._times: list = []
        self._lambdas: list = []
        self._frame_lambdas: list = []
        self._positions: list = []
        self._densities: list = []
        self._logdets: list = []

    @property
    def elapsed(self) -> float:
        return self._run.t - self.t0

    def _renormalize(self) -> None:
        p = self._p
        y = self._run.y
        m = y[3 : 3 + 3 * p].reshape(3, p)
        frame = m[:, 0:3]
        for j in range(3):
            w = frame[:, j]
            for i in range(j):
                w -= (w @ frame[:, i]) * frame[:, i]
            norm = float(np.linalg.norm(w))
            self._accum[j] += math.log(norm)
            frame[:, j] = w / norm

    def _record(self) -> None:
        elapsed = self.elapsed
        raw = self._accum / elapsed
        self._times.append(elapsed)
        self._frame_lambdas.append(raw.copy())
        self._lambdas.append(np.sort(raw)[::-1])
        pos = self._run.y[0:3].copy()
        self._positions.append(pos)
        if self._density is not None:
            self._densities.append(float(self._density(pos, self._run.t)))
        else:
            self._densities.append(math.nan)
        if self.track:
            p = self._p
            u = self._run.y[3 : 3 + 3 * p].reshape(3, p)[:, 3:6]
            sign, logdet = np.linalg.slogdet(u)
            self._logdets.append(logdet if sign > 0 else math.nan)

    def extend_to(self, t_target: float) -> None:
        """Advance through renorm times up to (and including) t_target."""
        dt = self.lyap_cfg.renorm_interval
        k_end = int(math.floor((t_target - self.t0) / dt + 1e-9))
        while self._k < k_end:
            self._k += 1
            self._run.advance_to(self.t0 + self._k * dt)
            self._renormalize()
            self._record()

    def series(self) -> ExponentSeries:
        return ExponentSeries(
            times=np.array(self._times),
            lambdas=np.array(self._lambdas).reshape(len(self._times), 3),
            renorm_interval=self.lyap_cfg.renorm_interval,
            seed_vectors=self._seeds.copy(),
            positions=np.array(self._positions).reshape(len(self._times), 3),
            densities=np.array(self._densities),
            frame_lambdas=np.array(self._frame_lambdas).reshape(len(self._times), 3),
            logdet_u=np.array(self._logdets) if self.track else None,
        )


def bggs_spectrum(
    provider,
    r0,
    t_max: float,
    renorm_interval: float = 1.0,
    seeds: Optional[np.ndarray] = None,
    cfg: Optional[IntegratorConfig] = None,
    t0: float = 0.0,
    track_flow_matrix: bool = False,
) -> ExponentSeries:
    """Full-spectrum estimate up to t_max with periodic reorthonormalization."""
    cfg = cfg or IntegratorConfig()
    lyap_cfg = LyapunovConfig(renorm_interval=renorm_interval)
    run = BggsRun(
        provider,
        r0,
        lyap_cfg,
        cfg,
        seeds=seeds,
        t0=t0,
        track_flow_matrix=track_flow_matrix,
    )
    run.extend_to(t0 + t_max)
    return run.series()


def spectrum_via_svd(u: np.ndarray, t: float) -> np.ndarray:
    """Finite-time exponents from the singular values of the flow matrix."""
    if t <= 0:
        raise ValueError("t must be positive")
    u = np.asarray(u, dtype=float)
    sigma = np.linalg.svd(u, compute_uv=False)
    if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
        raise ValueError("flow matrix is numerically singular")
    return np.log(sigma) / t


def llsa(times, values, window: Optional[tuple] = None):
    """Ordinary least-squares line fit; returns (slope, intercept, rmse).

    rmse is the root of the mean squared residual over the fitted points.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if window is not None:
        lo, hi = window
        sel = (t >= lo) & (t <= hi)
        t = t[sel]
        y = y[sel]
    if t.size < 2:
        raise ValueError("need at least two points for a line fit")
    tm = t.mean()
    ym = y.mean()
    dt = t - tm
    denom = float(dt @ dt)
    if denom == 0.0:
        raise ValueError("degenerate abscissae in line fit")
    slope = float(dt @ (y - ym)) / denom
    intercept = ym - slope * tm
    resid = y - (intercept + slope * t)
    rmse = math.sqrt(float(resid @ resid) / t.size)
    return slope, intercept, rmse


def classify(
    series: ExponentSeries, t1: float, cfg: Optional[LyapunovConfig] = None
) -> ConvergenceVerdict:
    """Apply the regular and chaotic criteria on the window [0.4 t1, t1]."""
    cfg = cfg or LyapunovConfig()
    w_lo = cfg.window_start_frac * t1
    w_hi = t1
    window = (w_lo, w_hi)
    t = series.times
    lam1 = series.lambda1()
    sel = (t >= w_lo - 1e-9) & (t <= w_hi + 1e-9)
    tw = t[sel]
    yw = lam1[sel]
    if tw.size < 2 * cfg.subintervals:
        return ConvergenceVerdict(VerdictKind.UNDECIDED, math.nan, math.nan, window)

    # Regular criterion: all piecewise fits decreasing and terminal value small.
    edges = np.linspace(w_lo, w_hi, cfg.subintervals + 1)
    all_decreasing = True
    for i in range(cfg.subintervals):
        sub = (tw >= edges[i] - 1e-9) & (tw <= edges[i + 1] + 1e-9)
        if np.count_nonzero(sub) < 2:
            all_decreasing = False
            break
        slope, _, _ = llsa(tw[sub], yw[sub])
        # non-increasing qualifies (a flat zero series is regular); the tiny
        # absolute allowance keeps 1e-17-scale roundoff on exactly static
        # fields from flipping the criterion
        if slope > 1e-12:
            all_decreasing = False
            break
    if all_decreasing and float(yw.min()) < cfg.regular_threshold:
        _, _, rmse = llsa(tw, yw)
        return ConvergenceVerdict(VerdictKind.REGULAR, 0.0, rmse, window)

    # Chaotic criterion: low-residual linear growth of lambda1(t) * t.
    slope, _, rmse = llsa(tw, yw * tw)
    if slope > 0.0 and rmse < cfg.rmse_fraction * slope * (w_hi - w_lo):
        return ConvergenceVerdict(VerdictKind.CHAOTIC, slope, rmse, window)
    return ConvergenceVerdict(VerdictKind.UNDECIDED, math.nan, rmse, window)


def estimate_lambda1(
    provider,
    r0,
    lyap_cfg: Optional[LyapunovConfig] = None,
    int_cfg: Optional[IntegratorConfig] = None,
    seeds: Optional[np.ndarray] = None,
    t0: float = 0.0,
    prefer_compiled: bool = True,
):
    """Run the doubling-horizon classification loop for one trajectory.

    Returns (verdict, series); the verdict may stay undecided at the horizon
    cap, in which case callers decide how to treat the trajectory.
    """
    lyap_cfg = lyap_cfg or LyapunovConfig()
    int_cfg = int_cfg or IntegratorConfig()
    run = BggsRun(
        provider,
        r0,
        lyap_cfg,
        int_cfg,
        seeds=seeds,
        t0=t0,
        prefer_compiled=prefer_compiled,
    )
    tk = lyap_cfg.t1
    while True:
        run.extend_to(t0 + tk)
        verdict = classify(run.series(), tk, lyap_cfg)
        if verdict.kind != VerdictKind.UNDECIDED:
            return verdict, run.series()
        tk_next = tk * lyap_cfg.growth
        if tk_next > lyap_cfg.max_time * (1.0 + 1e-9):
            return verdict, run.series()
        tk = tk_next
