"""Trajectory and variational-equation integration.

Integrates dr/dt = v(r, t) together with dM/dt = J(r, t) M for a block M of
tangent columns (the flow matrix, or the frame tracked by the spectrum
estimator) and a divergence accumulator q, all in one state vector so every
quantity sees exactly the same accepted steps.  The stepper is an embedded
Dormand-Prince 5(4) pair with PI step-size control; the same source runs
either as plain Python (for ad-hoc providers) or numba-compiled (for packet
kernels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from .wavepacket import NodeProximity

#: Required step below this aborts integration (near-singular field).
STEP_FLOOR = 1e-14

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_PI_ALPHA = 0.7 / 5.0
_PI_BETA = 0.4 / 5.0

_STATUS_OK = 0
_STATUS_NODE = 1
_STATUS_UNDERFLOW = 2


class StepUnderflow(RuntimeError):
    """Raised when the controller would need steps below STEP_FLOOR."""

    def __init__(self, t: float):
        self.t = float(t)
        super().__init__(f"step size underflow at t = {self.t:.6g}")


@runtime_checkable
class VelocityProvider(Protocol):
    """Anything that can serve a velocity field and its spatial Jacobian."""

    def velocity(self, r, t: float) -> np.ndarray: ...

    def jacobian(self, r, t: float) -> np.ndarray: ...


@dataclass(frozen=True)
class IntegratorConfig:
    """Error control and horizon settings for the adaptive stepper."""

    rel_tol: float = 1e-9
    abs_tol: float = 1e-9
    initial_step: float = 1e-3
    max_step: float = 1.0
    max_time: float = 64000.0

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.initial_step <= 0 or self.max_step <= 0:
            raise ValueError("step bounds must be positive")


@dataclass(frozen=True)
class FlowState:
    """Position, flow matrix and time along one trajectory."""

    r: np.ndarray
    U: np.ndarray
    t: float

    @classmethod
    def initial(cls, r0, t: float = 0.0) -> "FlowState":
        return cls(r=np.asarray(r0, dtype=float).copy(), U=np.eye(3), t=float(t))


class LinearFlow:
    """Test field v = A r with constant Jacobian A."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float).reshape(3, 3)
        self._rhs_cache: dict = {}

    def velocity(self, r, t: float) -> np.ndarray:
        return np.asarray(r, dtype=float) @ self.matrix.T

    def jacobian(self, r, t: float) -> np.ndarray:
        return self.matrix.copy()

    def divergence(self, r, t: float) -> float:
        return float(np.trace(self.matrix))

    def velocity_batch(self, pts, t: float):
        v = np.asarray(pts, dtype=float) @ self.matrix.T
        return v, np.full(np.shape(pts)[:-1], np.inf)

    def rhs_factory(self, n_columns: int):
        if n_columns not in self._rhs_cache:
            from . import kernels

            self._rhs_cache[n_columns] = kernels.make_linear_rhs(self.matrix, n_columns)
        return self._rhs_cache[n_columns]


class LorenzFlow:
    """Lorenz benchmark field; a standard target for spectrum estimators."""

    def __init__(self, sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0):
        self.sigma = float(sigma)
        self.rho = float(rho)
        self.beta = float(beta)
        self._rhs_cache: dict = {}

    def velocity(self, r, t: float) -> np.ndarray:
        x, y, z = np.asarray(r, dtype=float)
        return np.array(
            [self.sigma * (y - x), x * (self.rho - z) - y, x * y - self.beta * z]
        )

    def jacobian(self, r, t: float) -> np.ndarray:
        x, y, z = np.asarray(r, dtype=float)
        return np.array(
            [
                [-self.sigma, self.sigma, 0.0],
                [self.rho - z, -1.0, -x],
                [y, x, -self.beta],
            ]
        )

    def divergence(self, r, t: float) -> float:
        return -self.sigma - 1.0 - self.beta

    def rhs_factory(self, n_columns: int):
        if n_columns not in self._rhs_cache:
            from . import kernels

            self._rhs_cache[n_columns] = kernels.make_lorenz_rhs(
                self.sigma, self.rho, self.beta, n_columns
            )
        return self._rhs_cache[n_columns]


# Dormand-Prince 5(4) tableau and error weights.
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = (
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
)
_A61, _A62, _A63, _A64, _A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
_B1, _B3, _B4, _B5, _B6 = (
    35.0 / 384.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
)
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)


def _dp54_core(rhs, t0, y0, t_end, rtol, atol, h0, hmax, node_thr, err_prev0):
    """Advance y from t0 to t_end; shared source for the Python and jit paths.

    Returns (status, t, y, h, err_prev, t_fail, rho_fail, n_steps, n_rejected,
    n_rhs).  On a NODE or UNDERFLOW status, (t, y) hold the last accepted
    point and t_fail the failure time.
    """
    y = y0.copy()
    t = t0
    k1, rho = rhs(t, y)
    nrhs = 1
    if rho < node_thr:
        return _STATUS_NODE, t, y, h0, err_prev0, t, rho, 0, 0, nrhs
    h = h0
    if h <= 0.0:
        h = 1e-3
    if h > hmax:
        h = hmax
    err_prev = err_prev0
    nsteps = 0
    nrej = 0
    while t < t_end:
        if h > t_end - t:
            h = t_end - t
        if h < STEP_FLOOR:
            return _STATUS_UNDERFLOW, t, y, h, err_prev, t, rho, nsteps, nrej, nrhs
        bad_rho = -1.0
        t_fail = t
        k2, r2 = rhs(t + _C2 * h, y + h * (_A21 * k1))
        if r2 < node_thr:
            bad_rho = r2
            t_fail = t + _C2 * h
        k3, r3 = rhs(t + _C3 * h, y + h * (_A31 * k1 + _A32 * k2))
        if bad_rho < 0.0 and r3 < node_thr:
            bad_rho = r3
            t_fail = t + _C3 * h
        k4, r4 = rhs(t + _C4 * h, y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3))
        if bad_rho < 0.0 and r4 < node_thr:
            bad_rho = r4
            t_fail = t + _C4 * h
        k5, r5 = rhs(
            t + _C5 * h, y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4)
        )
        if bad_rho < 0.0 and r5 < node_thr:
            bad_rho = r5
            t_fail = t + _C5 * h
        k6, r6 = rhs(
            t + h, y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5)
        )
        if bad_rho < 0.0 and r6 < node_thr:
            bad_rho = r6
            t_fail = t + h
        ynew = y + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
        k7, r7 = rhs(t + h, ynew)
        if bad_rho < 0.0 and r7 < node_thr:
            bad_rho = r7
            t_fail = t + h
        nrhs += 6
        if bad_rho >= 0.0:
            return (
                _STATUS_NODE,
                t,
                y,
                h,
                err_prev,
                t_fail,
                bad_rho,
                nsteps,
                nrej,
                nrhs,
            )
        escale = h * (
            _E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7
        )
        err = 0.0
        n = y.shape[0]
        finite = True
        for i in range(n):
            ya = abs(y[i])
            yb = abs(ynew[i])
            big = ya if ya > yb else yb
            sc = atol + rtol * big
            e = escale[i] / sc
            if not np.isfinite(e):
                finite = False
                break
            err += e * e
        if finite:
            err = np.sqrt(err / n)
        else:
            err = 1e10
        if err <= 1.0:
            t = t + h
            y = ynew
            k1 = k7
            rho = r7
            nsteps += 1
            if err < 1e-10:
                fac = _MAX_FACTOR
            else:
                fac = _SAFETY * err ** (-_PI_ALPHA) * err_prev ** _PI_BETA
                if fac > _MAX_FACTOR:
                    fac = _MAX_FACTOR
                elif fac < _MIN_FACTOR:
                    fac = _MIN_FACTOR
            err_prev = err if err > 1e-10 else 1e-10
            h = h * fac
            if h > hmax:
                h = hmax
        else:
            nrej += 1
            fac = _SAFETY * err ** (-0.2)
            if fac < _MIN_FACTOR:
                fac = _MIN_FACTOR
            h = h * fac
    return _STATUS_OK, t, y, h, err_prev, t, rho, nsteps, nrej, nrhs


_CORE_JIT = None


def _get_core(jitted: bool):
    global _CORE_JIT
    if not jitted:
        return _dp54_core
    if _CORE_JIT is None:
        import numba

        _CORE_JIT = numba.njit(nogil=True, cache=False)(_dp54_core)
    return _CORE_JIT


def _is_compiled(fn) -> bool:
    return hasattr(fn, "py_func")


def _python_rhs(provider, n_columns: int):
    """Generic rhs built from a provider's velocity/jacobian methods."""
    p = int(n_columns)
    density = getattr(provider, "density", None)

    def rhs(t, y):
        r = y[0:3]
        rho = float(density(r, t)) if density is not None else np.inf
        if p == 0:
            return np.asarray(provider.velocity(r, t), dtype=float), rho
        n = y.shape[0]
        dy = np.empty(n)
        dy[0:3] = provider.velocity(r, t)
        jac = np.asarray(provider.jacobian(r, t), dtype=float)
        m = y[3 : 3 + 3 * p].reshape(3, p)
        dy[3 : 3 + 3 * p] = (jac @ m).ravel()
        dy[n - 1] = jac[0, 0] + jac[1, 1] + jac[2, 2]
        return dy, rho

    return rhs


class Integration:
    """Stateful integration of one combined system, resumable by time.

    Holds the PI controller memory across successive ``advance_to`` calls so
    that renormalization pauses do not reset the step size.
    """

    def __init__(
        self,
        provider,
        y0: np.ndarray,
        t0: float,
        cfg: IntegratorConfig,
        n_columns: int,
        node_threshold: Optional[float] = None,
        prefer_compiled: bool = True,
    ):
        self.provider = provider
        self.cfg = cfg
        self.y = np.asarray(y0, dtype=float).copy()
        self.t = float(t0)
        if prefer_compiled and hasattr(provider, "rhs_factory"):
            self._rhs = provider.rhs_factory(n_columns)
        else:
            self._rhs = _python_rhs(provider, n_columns)
        self._core = _get_core(_is_compiled(self._rhs))
        self._h = cfg.initial_step
        self._err_prev = 1e-4
        if node_threshold is None:
            node_threshold = getattr(provider, "node_threshold", 0.0)
        self._node_thr = float(node_threshold)
        self.n_steps = 0
        self.n_rejected = 0
        self.n_rhs = 0

    def advance_to(self, t_target: float) -> np.ndarray:
        t_target = float(t_target)
        if t_target < self.t:
            raise ValueError(f"target time {t_target} is before current time {self.t}")
        if t_target == self.t:
            return self.y
        status, t, y, h, err_prev, t_fail, rho_fail, ns, nr, ne = self._core(
            self._rhs,
            self.t,
            self.y,
            t_target,
            self.cfg.rel_tol,
            self.cfg.abs_tol,
            self._h,
            self.cfg.max_step,
            self._node_thr,
            self._err_prev,
        )
        self.t = t
        self.y = y
        self._h = h
        self._err_prev = err_prev
        self.n_steps += ns
        self.n_rejected += nr
        self.n_rhs += ne
        if status == _STATUS_NODE:
            raise NodeProximity(rho_fail, y[0:3], t_fail)
        if status == _STATUS_UNDERFLOW:
            raise StepUnderflow(t_fail)
        return self.y


def advance(
    provider, state: FlowState, t_target: float, cfg: IntegratorConfig
) -> FlowState:
    """Advance position and flow matrix to t_target under shared step control."""
    if t_target < state.t:
        raise ValueError("t_target must not precede state.t")
    y0 = np.concatenate([state.r, state.U.ravel(), [0.0]])
    run = Integration(provider, y0, state.t, cfg, n_columns=3)
    y = run.advance_to(t_target)
    u = y[3:12].reshape(3, 3).copy()
    sign, _ = np.linalg.slogdet(u)
    if sign <= 0:
        raise RuntimeError("flow matrix lost orientation (det U <= 0)")
    return FlowState(r=y[0:3].copy(), U=u, t=run.t)


def flow_map(
    provider, r0, t: float, cfg: IntegratorConfig, t0: float = 0.0
) -> np.ndarray:
    """Position reached at time t by the trajectory through r0 at time t0."""
    if t == t0:
        return np.asarray(r0, dtype=float).copy()
    run = Integration(provider, np.asarray(r0, dtype=float), t0, cfg, n_columns=0)
    return run.advance_to(t)[0:3].copy()


@dataclass(frozen=True)
class LocalRateSeries:
    """Per-interval expansion rates along one trajectory.

    rates[k] is the interval rate over [t0 + k dt, t0 + (k+1) dt]; the running
    mean at index k equals the finite-time largest exponent at times[k].
    """

    times: np.ndarray
    rates: np.ndarray
    running_mean: np.ndarray
    positions: np.ndarray
    densities: np.ndarray


def local_rates(
    provider,
    r0,
    dt: float,
    k_max: int,
    cfg: IntegratorConfig,
    xi0=None,
    t0: float = 0.0,
) -> LocalRateSeries:
    """Expansion rate of one propagated tangent vector per time interval."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if xi0 is None:
        xi0 = np.array([1.0, 0.0, 0.0])
    xi0 = np.asarray(xi0, dtype=float)
    xi0 = xi0 / np.linalg.norm(xi0)
    y0 = np.concatenate([np.asarray(r0, dtype=float), xi0, [0.0]])
    run = Integration(provider, y0, t0, cfg, n_columns=1)
    density = getattr(provider, "density", None)
    times = np.empty(k_max)
    rates = np.empty(k_max)
    positions = np.empty((k_max, 3))
    densities = np.full(k_max, np.nan)
    for k in range(k_max):
        y = run.advance_to(t0 + (k + 1) * dt)
        xi = y[3:6]
        norm = float(np.linalg.norm(xi))
        rates[k] = math.log(norm) / dt
        y[3:6] = xi / norm
        times[k] = run.t
        positions[k] = y[0:3]
        if density is not None:
            densities[k] = density(y[0:3], run.t)
    running_mean = np.cumsum(rates) / np.arange(1, k_max + 1)
    return LocalRateSeries(
        times=times,
        rates=rates,
        running_mean=running_mean,
        positions=positions,
        densities=densities,
    )


def liouville_check(
    provider, r0, t: float, cfg: IntegratorConfig, t0: float = 0.0
) -> tuple:
    """(ln det U(t), integral of div v along the trajectory).

    The two sides solve the same growth equation through different
    accumulators, so their gap measures integration consistency.
    """
    y0 = np.concatenate([np.asarray(r0, dtype=float), np.eye(3).ravel(), [0.0]])
    run = Integration(provider, y0, t0, cfg, n_columns=3)
    y = run.advance_to(t)
    u = y[3:12].reshape(3, 3)
    sign, logdet = np.linalg.slogdet(u)
    if sign <= 0:
        raise RuntimeError("flow matrix lost orientation (det U <= 0)")
    return float(logdet), float(y[12])


def flow_map_ensemble(
    provider,
    points,
    t: float,
    cfg: IntegratorConfig,
    t0: float = 0.0,
    node_threshold: float = 0.0,
):
    """Vectorized position-only transport of many points with a shared step.

    Returns (final_points, alive_mask); points whose density falls below the
    node threshold (or whose velocity turns non-finite) freeze in place and
    are flagged dead.  Deterministic: the step sequence depends only on the
    ensemble and tolerances.
    """
    pts = np.array(points, dtype=float)
    n = pts.shape[0]
    alive = np.ones(n, dtype=bool)
    if t == t0:
        return pts, alive

    def rhs(tt, yy):
        v, rho = provider.velocity_batch(yy, tt)
        v = np.asarray(v, dtype=float)
        bad = ~np.isfinite(v).all(axis=1) | (rho < node_threshold) | ~np.isfinite(rho)
        if np.any(bad):
            v[bad] = 0.0
        return v, bad

    h = cfg.initial_step
    err_prev = 1e-4
    tt = t0
    k1, bad = rhs(tt, pts)
    alive &= ~bad
    while tt < t:
        h = min(h, t - tt, cfg.max_step)
        if h < STEP_FLOOR:
            raise StepUnderflow(tt)
        k2, b2 = rhs(tt + _C2 * h, pts + h * (_A21 * k1))
        k3, b3 = rhs(tt + _C3 * h, pts + h * (_A31 * k1 + _A32 * k2))
        k4, b4 = rhs(tt + _C4 * h, pts + h * (_A41 * k1 + _A42 * k2 + _A43 * k3))
        k5, b5 = rhs(
            tt + _C5 * h, pts + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4)
        )
        k6, b6 = rhs(
            tt + h,
            pts + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5),
        )
        pnew = pts + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
        k7, b7 = rhs(tt + h, pnew)
        stage_bad = b2 | b3 | b4 | b5 | b6 | b7
        esc = h * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
        sc = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(pts), np.abs(pnew))
        ratio = esc / sc
        per_point = np.sqrt(np.mean(ratio * ratio, axis=1))
        per_point = np.where(np.isfinite(per_point), per_point, 1e10)
        mask = alive & ~stage_bad
        err = float(np.max(per_point[mask])) if np.any(mask) else 0.0
        if err <= 1.0:
            newly_dead = alive & stage_bad
            # dead points freeze at their pre-step position
            pts = np.where((alive & ~newly_dead)[:, None], pnew, pts)
            alive &= ~stage_bad
            tt += h
            k1 = k7
            if err < 1e-10:
                fac = _MAX_FACTOR
            else:
                fac = _SAFETY * err ** (-_PI_ALPHA) * err_prev ** _PI_BETA
                fac = min(_MAX_FACTOR, max(_MIN_FACTOR, fac))
            err_prev = max(err, 1e-10)
            h = h * fac
        else:
            h = h * max(_MIN_FACTOR, _SAFETY * err ** (-0.2))
    return pts, alive
