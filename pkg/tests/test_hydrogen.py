import math

import numpy as np
import pytest
import scipy.special as sp

from qflow.hydrogen import (
    ComplexField3,
    QuantumNumbers,
    energy,
    eval_eigenstate,
    evaluate_tables,
    tables_for,
)

SQRT_PI = math.sqrt(math.pi)


def reference_state(n, l, m, pts):
    """Independent evaluation via scipy special functions."""
    pts = np.asarray(pts, dtype=float)
    r = np.linalg.norm(pts, axis=-1)
    theta = np.arccos(np.clip(pts[..., 2] / r, -1, 1))
    phi = np.arctan2(pts[..., 1], pts[..., 0])
    norm = np.sqrt(
        (2.0 / n) ** 3 * math.factorial(n - l - 1) / (2 * n * math.factorial(n + l))
    )
    xr = 2.0 * r / n
    radial = norm * xr**l * sp.eval_genlaguerre(n - l - 1, 2 * l + 1, xr) * np.exp(-r / n)
    with np.errstate(all="ignore"):
        harm = sp.sph_harm_y(l, m, theta, phi)
    return radial * harm


def all_quantum_numbers():
    return [
        QuantumNumbers(n, l, m)
        for n in range(1, 5)
        for l in range(n)
        for m in range(-l, l + 1)
    ]


class TestQuantumNumbers:
    def test_valid_construction(self):
        qn = QuantumNumbers(3, 2, -2)
        assert (qn.n, qn.l, qn.m) == (3, 2, -2)

    @pytest.mark.parametrize(
        "n,l,m",
        [(0, 0, 0), (-1, 0, 0), (2, 2, 0), (2, -1, 0), (1, 0, 1), (3, 1, -2), (5, 0, 0)],
    )
    def test_invalid_rejected(self, n, l, m):
        with pytest.raises(ValueError):
            QuantumNumbers(n, l, m)

    def test_non_integer_rejected(self):
        with pytest.raises(TypeError):
            QuantumNumbers(1.0, 0, 0)


class TestEnergy:
    def test_ground_state(self):
        assert energy(1) == -0.5

    def test_first_excited(self):
        assert energy(2) == -0.125

    def test_n3_closed_form(self):
        assert energy(3) == pytest.approx(-1.0 / 18.0, rel=0, abs=1e-15)

    def test_invalid(self):
        with pytest.raises(ValueError):
            energy(0)


class TestValues:
    def test_ground_state_at_origin(self):
        out = eval_eigenstate(QuantumNumbers(1, 0, 0), [0.0, 0.0, 0.0])
        assert out.value == pytest.approx(1.0 / SQRT_PI, rel=1e-9)

    def test_origin_gradient_limit(self):
        # limit along the conventional +z path: d/dr (2 e^-r) * Y00 = -1/sqrt(pi)
        out = eval_eigenstate(QuantumNumbers(1, 0, 0), [0.0, 0.0, 0.0])
        assert np.allclose(out.gradient, [0.0, 0.0, -1.0 / SQRT_PI], atol=1e-9)
        # along an explicit path the direction follows the point
        out_x = eval_eigenstate(QuantumNumbers(1, 0, 0), [1e-13, 0.0, 0.0])
        assert out_x.gradient[0] == pytest.approx(-1.0 / SQRT_PI, rel=1e-9)

    def test_vanishes_on_axis_for_m1(self):
        out = eval_eigenstate(QuantumNumbers(2, 1, 1), [0.0, 0.0, 3.0])
        assert out.value == 0.0

    def test_radial_node_of_2s(self):
        out = eval_eigenstate(QuantumNumbers(2, 0, 0), [2.0, 0.0, 0.0])
        assert abs(out.value) < 1e-15

    @pytest.mark.parametrize("qn", all_quantum_numbers(), ids=str)
    def test_matches_scipy(self, qn):
        rng = np.random.default_rng(hash((qn.n, qn.l, qn.m)) % 2**32)
        pts = rng.normal(scale=3.0, size=(40, 3))
        ref = reference_state(qn.n, qn.l, qn.m, pts)
        got = eval_eigenstate(qn, pts).value
        assert np.allclose(got, ref, rtol=1e-11, atol=1e-13)

    def test_batch_shape(self):
        pts = np.zeros((4, 5, 3)) + np.array([1.0, 0.5, -0.2])
        out = eval_eigenstate(QuantumNumbers(2, 1, 0), pts)
        assert out.value.shape == (4, 5)
        assert out.gradient.shape == (4, 5, 3)


class TestGradients:
    def test_gradient_against_finite_differences(self):
        # 100 random points with r > 0.1, relative error < 1e-6
        rng = np.random.default_rng(7)
        pts = rng.normal(scale=2.5, size=(200, 3))
        pts = pts[np.linalg.norm(pts, axis=1) > 0.1][:100]
        assert pts.shape[0] == 100
        h = 1e-5
        for qn in (QuantumNumbers(1, 0, 0), QuantumNumbers(2, 1, 1), QuantumNumbers(3, 2, -1)):
            got = eval_eigenstate(qn, pts).gradient
            scale = np.max(np.abs(got))
            for j in range(3):
                dp = np.zeros(3)
                dp[j] = h
                fd = (
                    eval_eigenstate(qn, pts + dp).value
                    - eval_eigenstate(qn, pts - dp).value
                ) / (2 * h)
                assert np.max(np.abs(got[:, j] - fd)) / scale < 1e-6

    def test_hessian_against_finite_differences(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(scale=2.0, size=(30, 3))
        pts = pts[np.linalg.norm(pts, axis=1) > 0.3]
        qn = QuantumNumbers(4, 3, 2)
        tabs = tables_for(qn)
        _, _, hess = evaluate_tables(tabs, pts, want_hessian=True)
        h = 1e-5
        scale = np.max(np.abs(hess))
        for j in range(3):
            dp = np.zeros(3)
            dp[j] = h
            fd = (
                evaluate_tables(tabs, pts + dp)[1] - evaluate_tables(tabs, pts - dp)[1]
            ) / (2 * h)
            assert np.max(np.abs(hess[..., :, j] - fd)) / scale < 1e-5


class TestOrthonormality:
    def test_packet_states_orthonormal(self):
        # product quadrature: Gauss-Legendre radial x Gauss-Legendre in cos(theta)
        # x trapezoid in phi (exact for the azimuthal harmonics involved)
        states = [
            QuantumNumbers(1, 0, 0),
            QuantumNumbers(2, 0, 0),
            QuantumNumbers(2, 1, 0),
            QuantumNumbers(2, 1, 1),
        ]
        nr, nc, nphi = 160, 24, 16
        xr, wr = np.polynomial.legendre.leggauss(nr)
        rmax = 60.0
        r = 0.5 * rmax * (xr + 1.0)
        wr = 0.5 * rmax * wr
        xc, wc = np.polynomial.legendre.leggauss(nc)
        phi = 2.0 * np.pi * np.arange(nphi) / nphi
        wphi = 2.0 * np.pi / nphi
        ct = xc
        st = np.sqrt(1.0 - ct**2)
        R, CT, PHI = np.meshgrid(r, ct, phi, indexing="ij")
        ST = np.sqrt(1.0 - CT**2)
        pts = np.stack(
            [R * ST * np.cos(PHI), R * ST * np.sin(PHI), R * CT], axis=-1
        )
        weight = (R**2) * wr[:, None, None] * wc[None, :, None] * wphi
        vals = {qn: eval_eigenstate(qn, pts).value for qn in states}
        for i, qi in enumerate(states):
            for j, qj in enumerate(states):
                overlap = np.sum(np.conj(vals[qi]) * vals[qj] * weight)
                expected = 1.0 if i == j else 0.0
                assert abs(overlap - expected) < 1e-3


class TestEigenvalueResidual:
    def test_pointwise_schroedinger_residual(self):
        # finite-difference Laplacian of the closed form vs -1/(2 n^2)
        rng = np.random.default_rng(9)
        h = 1e-3
        offsets = np.array(
            [
                [h, 0, 0],
                [-h, 0, 0],
                [0, h, 0],
                [0, -h, 0],
                [0, 0, h],
                [0, 0, -h],
            ]
        )
        for qn in (QuantumNumbers(1, 0, 0), QuantumNumbers(2, 1, 1), QuantumNumbers(3, 1, 0)):
            pts = rng.normal(scale=2.0, size=(40, 3))
            pts = pts[np.linalg.norm(pts, axis=1) > 0.5][:20]
            val = eval_eigenstate(qn, pts).value
            keep = np.abs(val) > 1e-3  # stay away from nodes for the relative test
            pts = pts[keep]
            val = val[keep]
            lap = -6.0 * val
            for off in offsets:
                lap = lap + eval_eigenstate(qn, pts + off).value
            lap = lap / h**2
            r = np.linalg.norm(pts, axis=1)
            lhs = -0.5 * lap - val / r
            rel = np.abs(lhs - qn.energy * val) / np.abs(qn.energy * val)
            assert np.max(rel) < 1e-4


class TestComplexField3:
    def test_is_dataclass_with_value_and_gradient(self):
        out = eval_eigenstate(QuantumNumbers(1, 0, 0), [1.0, 0.0, 0.0])
        assert isinstance(out, ComplexField3)
        assert out.gradient.shape == (3,)
