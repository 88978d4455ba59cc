"""Wave packets over hydrogen eigenstates and the velocity field they induce.

A packet is ``psi(x, t) = sum_k alpha_k phi_k(x) exp(-i E_k t)``.  From it we
expose the probability density rho = |psi|^2, the phase gradient
``grad S = Im(grad psi / psi)`` (well defined wherever rho > 0, no branch
cuts), the velocity field ``v = grad S`` in atomic units (m = 1), and, for a
packet carrying a fixed spin polarization ``s``, the extra divergence-free
term ``grad rho x s / (2 rho)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .hydrogen import QuantumNumbers, evaluate_tables, tables_for

#: Densities below this raise NodeProximity.  Far below any density reached
#: on computed orbits; purely a numerical guard against node crossings.
NODE_THRESHOLD = 1e-30

#: Default step for finite-difference velocity Jacobians (a.u.).
FD_STEP = 1e-5


class NodeProximity(RuntimeError):
    """Raised when an evaluation lands (numerically) on a node of psi."""

    def __init__(self, rho: float, point, t: float):
        self.rho = float(rho)
        self.point = np.asarray(point, dtype=float)
        self.t = float(t)
        super().__init__(
            f"density {self.rho:.3e} below node threshold at point "
            f"{self.point.tolist()} (t={self.t:.6g})"
        )


@dataclass(frozen=True)
class SpinConfig:
    """Fixed spin polarization direction; must be a unit vector."""

    s: tuple

    def __post_init__(self):
        vec = np.asarray(self.s, dtype=float)
        if vec.shape != (3,):
            raise ValueError("spin direction must be a 3-vector")
        norm = float(np.linalg.norm(vec))
        if not math.isclose(norm, 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError(f"spin direction must be a unit vector, |s| = {norm}")
        object.__setattr__(self, "s", tuple(float(c) for c in vec))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.s, dtype=float)


@dataclass(frozen=True)
class WavepacketSpec:
    """Superposition of hydrogen eigenstates with optional spin polarization.

    ``terms`` is a sequence of (coefficient, QuantumNumbers) pairs.  The
    coefficient norm need not be 1; density-weighted averages downstream
    divide by the sampled normalization.
    """

    terms: tuple
    spin: Optional[SpinConfig] = None

    def __post_init__(self):
        if len(self.terms) == 0:
            raise ValueError("a wave packet needs at least one term")
        norm_terms = []
        for alpha, qn in self.terms:
            if not isinstance(qn, QuantumNumbers):
                qn = QuantumNumbers(*qn)
            norm_terms.append((complex(alpha), qn))
        object.__setattr__(self, "terms", tuple(norm_terms))

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence], spin=None) -> "WavepacketSpec":
        """Build from (re, im, n, l, m) rows, e.g. straight out of a config file."""
        terms = [
            (complex(float(re), float(im)), QuantumNumbers(int(n), int(l), int(m)))
            for re, im, n, l, m in rows
        ]
        spin_cfg = None if spin is None else SpinConfig(tuple(spin))
        return cls(terms=tuple(terms), spin=spin_cfg)

    @property
    def norm_squared(self) -> float:
        """Sum |alpha_k|^2 = squared L2 norm of the packet (states are orthonormal)."""
        return float(sum(abs(a) ** 2 for a, _ in self.terms))

    def l2_distance(self, other: "WavepacketSpec") -> float:
        """Exact L2 distance between two packets from their coefficients."""
        amps: dict = {}
        for a, qn in self.terms:
            amps[qn] = amps.get(qn, 0j) + a
        for a, qn in other.terms:
            amps[qn] = amps.get(qn, 0j) - a
        return math.sqrt(sum(abs(v) ** 2 for v in amps.values()))

    def with_coefficient(self, index: int, alpha: complex) -> "WavepacketSpec":
        terms = list(self.terms)
        terms[index] = (complex(alpha), terms[index][1])
        return WavepacketSpec(terms=tuple(terms), spin=self.spin)

    def with_extra_term(self, alpha: complex, qn: QuantumNumbers) -> "WavepacketSpec":
        return WavepacketSpec(terms=self.terms + ((complex(alpha), qn),), spin=self.spin)

    def without_spin(self) -> "WavepacketSpec":
        return WavepacketSpec(terms=self.terms, spin=None)


@dataclass(frozen=True)
class FieldSample:
    """Pointwise sample of the packet: psi, rho = |psi|^2, grad rho, grad S."""

    psi: np.ndarray
    rho: np.ndarray
    grad_rho: np.ndarray
    grad_s: np.ndarray


def _packet_eval(spec: WavepacketSpec, points, t: float, want_hessian: bool = False):
    """psi, grad psi and optionally the psi Hessian, summed over packet terms."""
    psi = None
    grad = None
    hess = None
    for alpha, qn in spec.terms:
        phase = alpha * np.exp(-1j * qn.energy * t)
        v, g, h = evaluate_tables(tables_for(qn), points, want_hessian=want_hessian)
        psi = phase * v if psi is None else psi + phase * v
        grad = phase * g if grad is None else grad + phase * g
        if want_hessian:
            hess = phase * h if hess is None else hess + phase * h
    return psi, grad, hess


def field_arrays(spec: WavepacketSpec, points, t: float = 0.0):
    """(psi, rho, grad_rho, grad_S) without node checking; vectorized over points.

    grad_S entries where rho == 0 come out non-finite; callers that cannot
    tolerate nodes should use :func:`sample_field`.
    """
    psi, grad, _ = _packet_eval(spec, points, t)
    rho = np.abs(psi) ** 2
    grad_rho = 2.0 * np.real(np.conj(psi)[..., None] * grad)
    with np.errstate(divide="ignore", invalid="ignore"):
        grad_s = np.imag(grad / psi[..., None])
    return psi, rho, grad_rho, grad_s


def sample_field(spec: WavepacketSpec, point, t: float = 0.0) -> FieldSample:
    """Evaluate psi, rho, grad rho and grad S at a point (or batch).

    Raises NodeProximity if any requested point sits below the node threshold.
    """
    psi, rho, grad_rho, grad_s = field_arrays(spec, point, t)
    if np.any(rho < NODE_THRESHOLD):
        idx = np.unravel_index(int(np.argmin(rho)), np.shape(rho)) if np.ndim(rho) else ()
        bad_point = np.asarray(point, dtype=float)[idx] if np.ndim(rho) else point
        raise NodeProximity(float(np.min(rho)), bad_point, t)
    return FieldSample(psi=psi, rho=rho, grad_rho=grad_rho, grad_s=grad_s)


def _spin_term(rho, grad_rho, s: np.ndarray):
    """(grad rho x s) / (2 rho); the hbar/(2 m) prefactor in atomic units."""
    cross = np.cross(grad_rho, s)
    return cross / (2.0 * rho[..., None])


def velocity(spec: WavepacketSpec, point, t: float = 0.0) -> np.ndarray:
    """Velocity field at a point: grad S, plus the spin term when configured."""
    sample = sample_field(spec, point, t)
    v = sample.grad_s
    if spec.spin is not None:
        v = v + _spin_term(sample.rho, sample.grad_rho, spec.spin.as_array())
    return v


def velocity_arrays(spec: WavepacketSpec, points, t: float = 0.0):
    """(velocity, rho) without node raising; non-finite where rho == 0."""
    _, rho, grad_rho, grad_s = field_arrays(spec, points, t)
    v = grad_s
    if spec.spin is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            v = v + _spin_term(rho, grad_rho, spec.spin.as_array())
    return v, rho


def velocity_jacobian(
    spec: WavepacketSpec,
    point,
    t: float = 0.0,
    scheme: str = "analytic",
    fd_step: float = FD_STEP,
) -> np.ndarray:
    """Matrix dv_i/dr_j at a point.

    scheme "analytic" uses Im(H(psi)/psi - w w^T) with w = grad psi / psi and
    the closed-form Hessian (spinless packets only); scheme "fd" uses central
    differences of :func:`velocity` with step ``fd_step``.
    """
    if scheme == "analytic":
        if spec.spin is not None:
            raise ValueError("analytic Jacobian covers spinless packets; use scheme='fd'")
        psi, grad, hess = _packet_eval(spec, point, t, want_hessian=True)
        rho = np.abs(psi) ** 2
        if np.any(rho < NODE_THRESHOLD):
            raise NodeProximity(float(np.min(rho)), point, t)
        w = grad / psi[..., None]
        return np.imag(hess / psi[..., None, None] - w[..., :, None] * w[..., None, :])
    if scheme == "fd":
        point = np.asarray(point, dtype=float)
        jac = np.empty(point.shape[:-1] + (3, 3))
        for j in range(3):
            dp = np.zeros(3)
            dp[j] = fd_step
            vp = velocity(spec, point + dp, t)
            vm = velocity(spec, point - dp, t)
            jac[..., :, j] = (vp - vm) / (2.0 * fd_step)
        return jac
    raise ValueError(f"unknown Jacobian scheme {scheme!r}; expected 'analytic' or 'fd'")


def divergence_of_spin_term(
    spec: WavepacketSpec, point, t: float = 0.0, step: float = 1e-4
) -> float:
    """div(grad rho x s) by central differences; identically zero in exact arithmetic."""
    if spec.spin is None:
        raise ValueError("packet has no spin configuration")
    s = spec.spin.as_array()
    point = np.asarray(point, dtype=float)
    total = 0.0
    for j in range(3):
        dp = np.zeros(3)
        dp[j] = step
        wp = np.cross(sample_field(spec, point + dp, t).grad_rho, s)
        wm = np.cross(sample_field(spec, point - dp, t).grad_rho, s)
        total += (wp[j] - wm[j]) / (2.0 * step)
    return float(total)


class WavepacketFlow:
    """Velocity provider backed by a wave packet.

    Exposes the plain-Python evaluation surface used by tests and ensemble
    code, plus a factory of compiled right-hand sides consumed by the flow
    integrator.  Instances are immutable and safe to share across threads.
    """

    def __init__(
        self,
        spec: WavepacketSpec,
        jacobian_scheme: Optional[str] = None,
        fd_step: float = FD_STEP,
        node_threshold: float = NODE_THRESHOLD,
    ):
        if jacobian_scheme is None:
            jacobian_scheme = "analytic" if spec.spin is None else "fd"
        if jacobian_scheme == "analytic" and spec.spin is not None:
            raise ValueError("analytic Jacobian covers spinless packets; use 'fd'")
        if jacobian_scheme not in ("analytic", "fd"):
            raise ValueError(f"unknown Jacobian scheme {jacobian_scheme!r}")
        self.spec = spec
        self.jacobian_scheme = jacobian_scheme
        self.fd_step = float(fd_step)
        self.node_threshold = float(node_threshold)
        self._rhs_cache: dict = {}

    def velocity(self, r, t: float) -> np.ndarray:
        return velocity(self.spec, r, t)

    def jacobian(self, r, t: float) -> np.ndarray:
        return velocity_jacobian(
            self.spec, r, t, scheme=self.jacobian_scheme, fd_step=self.fd_step
        )

    def divergence(self, r, t: float) -> float:
        return float(np.trace(self.jacobian(r, t)))

    def density(self, r, t: float) -> np.ndarray:
        return sample_field(self.spec, r, t).rho

    def velocity_batch(self, pts, t: float):
        return velocity_arrays(self.spec, pts, t)

    def rhs_factory(self, n_columns: int):
        """Compiled combined right-hand side for [r, M(3 x n_columns), q] states."""
        key = int(n_columns)
        if key not in self._rhs_cache:
            from . import kernels

            self._rhs_cache[key] = kernels.make_packet_rhs(
                self.spec,
                n_columns=key,
                jacobian_scheme=self.jacobian_scheme,
                fd_step=self.fd_step,
            )
        return self._rhs_cache[key]
