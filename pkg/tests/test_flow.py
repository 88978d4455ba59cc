import math

import numpy as np
import pytest

from qflow.flow import (
    FlowState,
    IntegratorConfig,
    LinearFlow,
    LorenzFlow,
    StepUnderflow,
    advance,
    flow_map,
    flow_map_ensemble,
    liouville_check,
    local_rates,
)
from qflow.hydrogen import QuantumNumbers
from qflow.wavepacket import NodeProximity, WavepacketFlow, WavepacketSpec

A3 = 1.0 / math.sqrt(3.0)


def benchmark_flow():
    spec = WavepacketSpec(
        terms=(
            (A3, QuantumNumbers(1, 0, 0)),
            (A3, QuantumNumbers(2, 0, 0)),
            (A3, QuantumNumbers(2, 1, 1)),
        )
    )
    return WavepacketFlow(spec)


def ground_flow():
    return WavepacketFlow(WavepacketSpec(terms=((1.0, QuantumNumbers(1, 0, 0)),)))


def flow_211():
    return WavepacketFlow(WavepacketSpec(terms=((1.0, QuantumNumbers(2, 1, 1)),)))


DIAG = LinearFlow(np.diag([0.1, 0.0, -0.1]))
CFG = IntegratorConfig()


class PurePythonLinear:
    """Provider without a compiled rhs, to exercise the generic path."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)

    def velocity(self, r, t):
        return self.matrix @ np.asarray(r, dtype=float)

    def jacobian(self, r, t):
        return self.matrix.copy()


class TestConfigValidation:
    def test_rejects_bad_tolerances(self):
        with pytest.raises(ValueError):
            IntegratorConfig(rel_tol=0.0)

    def test_rejects_bad_steps(self):
        with pytest.raises(ValueError):
            IntegratorConfig(initial_step=-1.0)


class TestAdvance:
    def test_static_field_fixed_point(self):
        state = FlowState.initial([1.0, -2.0, 0.5])
        out = advance(ground_flow(), state, 50.0, CFG)
        assert np.allclose(out.r, state.r, atol=1e-12)
        assert np.allclose(out.U, np.eye(3), atol=1e-12)
        assert out.t == 50.0

    def test_linear_field_closed_form(self):
        state = FlowState.initial([1.0, 1.0, 1.0])
        out = advance(DIAG, state, 10.0, CFG)
        expected_r = np.array([math.e, 1.0, 1.0 / math.e])
        assert np.allclose(out.r, expected_r, rtol=1e-6)
        assert np.allclose(out.U, np.diag(expected_r), rtol=1e-6)

    def test_circular_orbit_conservation(self):
        # azimuthal shear flow: cylindrical radius and z conserved 10 periods
        provider = flow_211()
        state = FlowState.initial([1.0, 0.0, 0.0])
        out = advance(provider, state, 10 * 2 * math.pi, CFG)
        assert abs(np.linalg.norm(out.r) - 1.0) < 1e-8
        assert abs(out.r[2]) < 1e-8

    def test_rejects_backward_target(self):
        state = FlowState.initial([1.0, 0.0, 0.0], t=5.0)
        with pytest.raises(ValueError):
            advance(DIAG, state, 1.0, CFG)

    def test_python_path_matches_compiled(self):
        # same stepper source runs interpreted for providers without kernels
        from qflow.flow import Integration

        y0 = np.concatenate([[1.0, 1.0, 1.0], np.eye(3).ravel(), [0.0]])
        jit = Integration(DIAG, y0, 0.0, CFG, n_columns=3)
        py = Integration(PurePythonLinear(np.diag([0.1, 0.0, -0.1])), y0, 0.0, CFG, n_columns=3)
        ya = jit.advance_to(5.0)
        yb = py.advance_to(5.0)
        assert np.allclose(ya, yb, rtol=1e-12, atol=1e-14)


class TestFlowMap:
    def test_identity_at_t0(self):
        r0 = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(flow_map(DIAG, r0, 0.0, CFG), r0)

    def test_chain_rule(self):
        provider = benchmark_flow()
        r0 = np.array([1.0, 0.5, 2.0])
        direct = flow_map(provider, r0, 2.0, CFG)
        mid = flow_map(provider, r0, 1.0, CFG)
        chained = flow_map(provider, mid, 2.0, CFG, t0=1.0)
        assert np.linalg.norm(direct - chained) < 1e-6

    def test_half_period_of_circle(self):
        out = flow_map(flow_211(), [1.0, 0.0, 0.0], math.pi, CFG)
        assert np.allclose(out, [-1.0, 0.0, 0.0], atol=1e-6)

    def test_node_failure_carries_time(self):
        # the axis is a node line of the m=1 state; starting near it with an
        # inward spiral is impossible, so force a node by zero density packet
        provider = flow_211()
        with pytest.raises(NodeProximity) as err:
            flow_map(provider, [0.0, 0.0, 1.0], 1.0, CFG)
        assert err.value.t >= 0.0


class TestLocalRates:
    def test_zero_field(self):
        series = local_rates(ground_flow(), [1.0, 0.0, 0.0], 1.0, 20, CFG)
        assert np.allclose(series.rates, 0.0, atol=1e-12)

    def test_constant_jacobian_rate(self):
        series = local_rates(DIAG, [1.0, 1.0, 1.0], 0.5, 40, CFG, xi0=[1.0, 0.0, 0.0])
        assert np.allclose(series.rates, 0.1, atol=1e-8)
        assert series.running_mean[-1] == pytest.approx(0.1, abs=1e-8)

    def test_matches_spectrum_running_mean(self):
        # single-vector interval rates against the frame-based estimator
        from qflow.lyapunov import bggs_spectrum

        provider = benchmark_flow()
        r0 = np.array([1.0, 0.5, 2.0])
        seeds = np.eye(3)
        series = local_rates(provider, r0, 1.0, 50, CFG, xi0=seeds[:, 0])
        spectrum = bggs_spectrum(provider, r0, 50.0, 1.0, seeds=seeds, cfg=CFG)
        # the first frame vector is only normalized, never rotated, so the
        # lambda_1 accumulations agree exactly up to roundoff
        assert np.allclose(series.running_mean, spectrum.frame_lambdas[:, 0], atol=1e-6)


class TestLiouville:
    def test_zero_field(self):
        lhs, rhs = liouville_check(ground_flow(), [1.0, 0.0, 0.0], 10.0, CFG)
        assert lhs == pytest.approx(0.0, abs=1e-12)
        assert rhs == pytest.approx(0.0, abs=1e-12)

    def test_traceless_linear_field(self):
        lhs, rhs = liouville_check(DIAG, [1.0, 1.0, 1.0], 5.0, CFG)
        assert lhs == pytest.approx(0.0, abs=1e-9)
        assert rhs == pytest.approx(0.0, abs=1e-9)

    def test_chaotic_trajectory(self):
        lhs, rhs = liouville_check(benchmark_flow(), [1.0, 0.5, 2.0], 100.0, CFG)
        assert abs(lhs - rhs) < 1e-3

    def test_lorenz_contraction(self):
        # horizon short enough that the smallest singular value stays within
        # float range relative to the largest (ln det from U needs that)
        provider = LorenzFlow()
        lhs, rhs = liouville_check(provider, [1.0, 1.0, 20.0], 1.5, CFG)
        expected = (-10.0 - 1.0 - 8.0 / 3.0) * 1.5
        assert rhs == pytest.approx(expected, rel=1e-9)
        assert lhs == pytest.approx(expected, rel=1e-6)


class TestToleranceBehavior:
    def test_tolerance_monotonicity(self):
        # halving rel_tol must not worsen the error of a regular trajectory
        provider = flow_211()
        r0 = [1.0, 0.0, 0.0]
        t = 4 * math.pi
        exact = np.array([1.0, 0.0, 0.0])
        errs = []
        for tol in (1e-6, 1e-8, 1e-10):
            cfg = IntegratorConfig(rel_tol=tol, abs_tol=tol)
            errs.append(np.linalg.norm(flow_map(provider, r0, t, cfg) - exact))
        assert errs[1] <= errs[0]
        assert errs[2] <= errs[1]

    def test_step_underflow_is_reported(self):
        class Spiky:
            def velocity(self, r, t):
                return np.array([1.0 / max(1e-300, abs(1.0 - t)) ** 2, 0.0, 0.0])

            def jacobian(self, r, t):
                return np.zeros((3, 3))

        with pytest.raises(StepUnderflow):
            flow_map(Spiky(), [0.0, 0.0, 0.0], 2.0, IntegratorConfig())


class TestDensityAlongOrbit:
    def test_stationary_flow_stays_on_level_set(self):
        provider = flow_211()
        r0 = np.array([1.3, 0.0, 0.7])
        rho0 = provider.density(r0, 0.0)
        for t in (2.0, 5.0, 9.0):
            rt = flow_map(provider, r0, t, CFG)
            assert provider.density(rt, t) == pytest.approx(rho0, rel=1e-7)


class TestEnsembleTransport:
    def test_matches_single_trajectories(self):
        provider = benchmark_flow()
        rng = np.random.default_rng(123)
        pts = rng.normal(scale=1.5, size=(8, 3))
        cfg = IntegratorConfig(rel_tol=1e-9, abs_tol=1e-9)
        moved, alive = flow_map_ensemble(provider, pts, 5.0, cfg)
        assert alive.all()
        for i in range(8):
            single = flow_map(provider, pts[i], 5.0, cfg)
            assert np.linalg.norm(moved[i] - single) < 1e-6

    def test_dead_points_freeze(self):
        provider = flow_211()
        pts = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])  # second sits on the node line
        moved, alive = flow_map_ensemble(
            provider, pts, 1.0, CFG, node_threshold=provider.node_threshold
        )
        assert alive[0] and not alive[1]
        assert np.allclose(moved[1], pts[1])
