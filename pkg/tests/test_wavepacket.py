import math

import numpy as np
import pytest

from qflow.hydrogen import QuantumNumbers
from qflow.wavepacket import (
    FieldSample,
    NodeProximity,
    SpinConfig,
    WavepacketFlow,
    WavepacketSpec,
    divergence_of_spin_term,
    sample_field,
    velocity,
    velocity_arrays,
    velocity_jacobian,
)

A3 = 1.0 / math.sqrt(3.0)


def benchmark_packet(spin=None):
    """The standard chaotic three-state superposition."""
    return WavepacketSpec(
        terms=(
            (A3, QuantumNumbers(1, 0, 0)),
            (A3, QuantumNumbers(2, 0, 0)),
            (A3, QuantumNumbers(2, 1, 1)),
        ),
        spin=spin,
    )


def spin_packet():
    """Three-state superposition with a 2p_z component and +z polarization."""
    return WavepacketSpec(
        terms=(
            (A3, QuantumNumbers(1, 0, 0)),
            (A3, QuantumNumbers(2, 1, 0)),
            (A3, QuantumNumbers(2, 1, 1)),
        ),
        spin=SpinConfig((0.0, 0.0, 1.0)),
    )


def ground_state():
    return WavepacketSpec(terms=((1.0, QuantumNumbers(1, 0, 0)),))


def single_211():
    return WavepacketSpec(terms=((1.0, QuantumNumbers(2, 1, 1)),))


class TestSpecValidation:
    def test_needs_terms(self):
        with pytest.raises(ValueError):
            WavepacketSpec(terms=())

    def test_spin_must_be_unit(self):
        with pytest.raises(ValueError):
            SpinConfig((0.0, 0.0, 2.0))

    def test_from_rows(self):
        spec = WavepacketSpec.from_rows([(0.5, 0.5, 2, 1, -1)], spin=(0, 0, 1))
        assert spec.terms[0][0] == 0.5 + 0.5j
        assert spec.terms[0][1] == QuantumNumbers(2, 1, -1)
        assert spec.spin.s == (0.0, 0.0, 1.0)

    def test_norm_squared(self):
        assert benchmark_packet().norm_squared == pytest.approx(1.0)

    def test_l2_distance_from_coefficients(self):
        a = benchmark_packet()
        b = a.with_coefficient(0, A3 + 1e-4)
        assert a.l2_distance(b) == pytest.approx(1e-4, rel=1e-12)


class TestSampleField:
    def test_ground_state_density(self):
        # |phi_100|^2 at r = 1 is exp(-2)/pi; the spatial part is real so grad S = 0
        out = sample_field(ground_state(), [1.0, 0.0, 0.0], t=0.3)
        assert out.rho == pytest.approx(math.exp(-2.0) / math.pi, rel=1e-12)
        assert np.allclose(out.grad_s, 0.0, atol=1e-12)

    def test_rho_is_abs_psi_squared(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(scale=2.0, size=(50, 3))
        out = sample_field(benchmark_packet(), pts, t=1.7)
        assert np.allclose(out.rho, np.abs(out.psi) ** 2, rtol=1e-13)

    def test_packet_near_2s_node_sphere(self):
        # pinned against an exact symbolic evaluation of the packet
        out = sample_field(benchmark_packet(), [2.0, 0.1, 0.3], t=0.5)
        assert out.rho == pytest.approx(1.901073761052377e-4, rel=1e-10)
        assert np.allclose(
            out.grad_s,
            [1.683723462777579, -0.8859857364444603, 0.17626179361458116],
            rtol=1e-9,
        )

    def test_node_raises(self):
        # phi_211 vanishes on the z-axis
        with pytest.raises(NodeProximity) as err:
            sample_field(single_211(), [0.0, 0.0, 2.0])
        assert err.value.rho < 1e-30

    def test_returns_field_sample(self):
        out = sample_field(benchmark_packet(), [1.0, 1.0, 1.0])
        assert isinstance(out, FieldSample)


class TestVelocity:
    def test_real_packet_is_static(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            pt = rng.normal(scale=2.0, size=3)
            v = velocity(ground_state(), pt, t=rng.uniform(0, 10))
            assert np.allclose(v, 0.0, atol=1e-12)

    def test_azimuthal_flow_of_211(self):
        v = velocity(single_211(), [1.0, 0.0, 0.0])
        assert np.allclose(v, [0.0, 1.0, 0.0], atol=1e-12)
        # general pattern (-y, x, 0) / (x^2 + y^2)
        rng = np.random.default_rng(5)
        for _ in range(10):
            pt = rng.normal(scale=2.0, size=3)
            v = velocity(single_211(), pt)
            x, y = pt[0], pt[1]
            expect = np.array([-y, x, 0.0]) / (x * x + y * y)
            assert np.allclose(v, expect, rtol=1e-10, atol=1e-12)

    def test_spin_flow_of_ground_state(self):
        spec = WavepacketSpec(
            terms=((1.0, QuantumNumbers(1, 0, 0)),), spin=SpinConfig((0.0, 0.0, 1.0))
        )
        v = velocity(spec, [1.0, 0.0, 0.0])
        assert np.allclose(v, [0.0, 1.0, 0.0], rtol=1e-12)
        rng = np.random.default_rng(6)
        for _ in range(10):
            pt = rng.normal(scale=1.5, size=3)
            r = np.linalg.norm(pt)
            expect = np.array([-pt[1], pt[0], 0.0]) / r
            assert np.allclose(velocity(spec, pt), expect, rtol=1e-10)

    def test_spin_flip_negates_spin_velocity(self):
        up = spin_packet()
        down = WavepacketSpec(terms=up.terms, spin=SpinConfig((0.0, 0.0, -1.0)))
        base = up.without_spin()
        rng = np.random.default_rng(7)
        for _ in range(5):
            pt = rng.normal(scale=2.0, size=3)
            t = rng.uniform(0, 5)
            v0 = velocity(base, pt, t)
            vu = velocity(up, pt, t) - v0
            vd = velocity(down, pt, t) - v0
            assert np.allclose(vu, -vd, rtol=1e-9, atol=1e-12)

    def test_spin_leaves_density_unchanged(self):
        up = spin_packet()
        base = up.without_spin()
        pt = np.array([1.2, -0.7, 2.0])
        a = sample_field(up, pt, t=2.0)
        b = sample_field(base, pt, t=2.0)
        assert a.rho == b.rho
        assert np.allclose(a.grad_rho, b.grad_rho)
        assert np.allclose(a.grad_s, b.grad_s)


class TestVelocityJacobian:
    def test_ground_state_zero(self):
        jac = velocity_jacobian(ground_state(), [1.0, 2.0, 0.5])
        assert np.allclose(jac, 0.0, atol=1e-12)

    def test_211_closed_form(self):
        jac = velocity_jacobian(single_211(), [1.0, 0.0, 0.0])
        expect = np.array([[0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        assert np.allclose(jac, expect, atol=1e-10)

    def test_analytic_vs_finite_difference(self):
        # cross-scheme agreement on the benchmark packet at 50 random points
        rng = np.random.default_rng(8)
        spec = benchmark_packet()
        count = 0
        worst = 0.0
        while count < 50:
            pt = rng.normal(scale=2.5, size=3)
            t = rng.uniform(0.0, 20.0)
            ja = velocity_jacobian(spec, pt, t, scheme="analytic")
            jf = velocity_jacobian(spec, pt, t, scheme="fd", fd_step=1e-5)
            scale = np.max(np.abs(ja))
            if scale < 1e-3:
                continue
            worst = max(worst, np.max(np.abs(ja - jf)) / scale)
            count += 1
        assert worst < 1e-4

    def test_analytic_rejects_spin(self):
        with pytest.raises(ValueError):
            velocity_jacobian(spin_packet(), [1.0, 0.0, 0.0], scheme="analytic")

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            velocity_jacobian(ground_state(), [1.0, 0.0, 0.0], scheme="exact")


class TestContinuityEquation:
    @pytest.mark.parametrize("make_spec", [benchmark_packet, spin_packet])
    def test_residual_small(self, make_spec):
        # d rho / dt + div(rho v) = 0 by central finite differences
        spec = make_spec()
        rng = np.random.default_rng(11)
        hs = 1e-4
        ht = 1e-4
        checked = 0
        while checked < 12:
            pt = rng.normal(scale=2.0, size=3)
            t = rng.uniform(0.1, 10.0)
            rho0 = sample_field(spec, pt, t).rho
            if rho0 < 1e-6:
                continue
            drho_dt = (
                sample_field(spec, pt, t + ht).rho - sample_field(spec, pt, t - ht).rho
            ) / (2 * ht)
            div = 0.0
            for j in range(3):
                dp = np.zeros(3)
                dp[j] = hs
                sp = sample_field(spec, pt + dp, t)
                sm = sample_field(spec, pt - dp, t)
                vp = velocity(spec, pt + dp, t)
                vm = velocity(spec, pt - dp, t)
                div += (sp.rho * vp[j] - sm.rho * vm[j]) / (2 * hs)
            assert abs(drho_dt + div) < 1e-4 * max(1.0, abs(drho_dt))
            checked += 1

    def test_stationary_states_are_static(self):
        spec = single_211()
        pt = np.array([1.0, 0.4, -0.3])
        s0 = sample_field(spec, pt, t=0.0)
        s1 = sample_field(spec, pt, t=57.3)
        assert s0.rho == pytest.approx(s1.rho, rel=1e-14)
        assert np.allclose(velocity(spec, pt, 0.0), velocity(spec, pt, 57.3))


class TestSpinCurrentConservation:
    def test_divergence_free_ground_state(self):
        spec = WavepacketSpec(
            terms=((1.0, QuantumNumbers(1, 0, 0)),), spin=SpinConfig((0.0, 0.0, 1.0))
        )
        rng = np.random.default_rng(12)
        for _ in range(5):
            pt = rng.normal(scale=1.5, size=3)
            assert abs(divergence_of_spin_term(spec, pt)) < 1e-6

    def test_divergence_free_spin_packet(self):
        spec = spin_packet()
        rng = np.random.default_rng(13)
        for _ in range(5):
            pt = rng.normal(scale=2.0, size=3)
            assert abs(divergence_of_spin_term(spec, pt, t=1.0)) < 1e-6

    def test_requires_spin(self):
        with pytest.raises(ValueError):
            divergence_of_spin_term(ground_state(), [1.0, 0.0, 0.0])


class TestProviderAndKernels:
    def test_kernel_matches_reference_path(self):
        # compiled combined rhs vs the plain numpy evaluation; the finite
        # difference scheme amplifies last-bit noise by 1/(2 h), so the spin
        # packet gets a correspondingly looser absolute tolerance
        for spec, jac_atol in ((benchmark_packet(), 1e-12), (spin_packet(), 5e-9)):
            provider = WavepacketFlow(spec)
            rhs = provider.rhs_factory(3)
            rng = np.random.default_rng(14)
            for _ in range(15):
                r = rng.normal(scale=2.5, size=3)
                t = rng.uniform(0.0, 20.0)
                y = np.concatenate([r, np.eye(3).ravel(), [0.0]])
                dy, rho = rhs(t, y)
                v = velocity(spec, r, t)
                jac = velocity_jacobian(
                    spec, r, t, scheme=provider.jacobian_scheme, fd_step=provider.fd_step
                )
                assert np.allclose(dy[0:3], v, rtol=1e-12, atol=1e-13)
                assert np.allclose(dy[3:12].reshape(3, 3), jac, rtol=1e-9, atol=jac_atol)
                assert dy[12] == pytest.approx(np.trace(jac), rel=1e-9)
                center_rho = float(sample_field(spec, r, t).rho)
                if provider.jacobian_scheme == "fd":
                    # fd kernels report the stencil minimum for node detection
                    assert rho <= center_rho * (1 + 1e-12)
                    assert rho == pytest.approx(center_rho, rel=1e-3)
                else:
                    assert rho == pytest.approx(center_rho, rel=1e-9)

    def test_velocity_batch_matches_scalar(self):
        spec = benchmark_packet()
        rng = np.random.default_rng(15)
        pts = rng.normal(scale=2.0, size=(20, 3))
        v, rho = velocity_arrays(spec, pts, 1.0)
        for i in range(20):
            assert np.allclose(v[i], velocity(spec, pts[i], 1.0), rtol=1e-12)

    def test_default_jacobian_scheme(self):
        assert WavepacketFlow(benchmark_packet()).jacobian_scheme == "analytic"
        assert WavepacketFlow(spin_packet()).jacobian_scheme == "fd"
