"""Compiled right-hand sides for the flow integrator.

The combined state is ``[r (3), M (3 x p, row-major), q]`` where the columns
of M evolve under the linearized dynamics dM/dt = J(r, t) M and q accumulates
the velocity divergence along the trajectory.  With p = 0 the state is just
the position.  Every factory returns a numba-compiled ``rhs(t, y) -> (dy,
rho)``; rho is the probability density at the evaluation point (a huge
sentinel for fields without nodes) and is what the integrator uses for node
detection.

numba freezes closure variables, so each factory call compiles a kernel
specialized to one packet; providers cache them.
"""

from __future__ import annotations

import numpy as np

from .hydrogen import tables_for
from .wavepacket import WavepacketSpec

#: Sentinel density for velocity fields that have no nodes.
NO_NODES = 1e300


def _packet_arrays(spec: WavepacketSpec):
    """Padded per-term coefficient arrays consumed by the kernels."""
    terms = spec.terms
    nk = len(terms)
    tabs = [tables_for(qn) for _, qn in terms]
    dmax = max(t.rad0.shape[0] for t in tabs)
    mmax = max(t.mono_coef.shape[0] for t in tabs)
    alpha = np.array([a for a, _ in terms], complex)
    energies = np.array([qn.energy for _, qn in terms])
    dec = np.array([t.decay for t in tabs])
    rad0 = np.zeros((nk, dmax))
    rad1 = np.zeros((nk, dmax))
    rad2 = np.zeros((nk, dmax))
    rcnt = np.zeros(nk, np.int64)
    mc = np.zeros((nk, mmax), complex)
    mp = np.zeros((nk, mmax, 3), np.int64)
    mcnt = np.zeros(nk, np.int64)
    for k, t in enumerate(tabs):
        d = t.rad0.shape[0]
        rad0[k, :d] = t.rad0
        rad1[k, :d] = t.rad1
        rad2[k, :d] = t.rad2
        rcnt[k] = d
        m = t.mono_coef.shape[0]
        mc[k, :m] = t.mono_coef
        mp[k, :m] = t.mono_pow
        mcnt[k] = m
    return alpha, energies, dec, rad0, rad1, rad2, rcnt, mc, mp, mcnt


def make_packet_rhs(
    spec: WavepacketSpec,
    n_columns: int,
    jacobian_scheme: str = "analytic",
    fd_step: float = 1e-5,
):
    """Compiled combined rhs for a wave-packet velocity field."""
    import numba

    ALPHA, ENERGY, DEC, RAD0, RAD1, RAD2, RCNT, MC, MP, MCNT = _packet_arrays(spec)
    NK = len(spec.terms)
    HAS_SPIN = spec.spin is not None
    SX, SY, SZ = spec.spin.as_array() if HAS_SPIN else (0.0, 0.0, 0.0)
    FD_MODE = jacobian_scheme == "fd"
    if not FD_MODE and HAS_SPIN:
        raise ValueError("analytic Jacobian covers spinless packets only")
    H = float(fd_step)
    P = int(n_columns)

    @numba.njit(nogil=True, cache=False)
    def _eval_vg(t, x, y, z):
        """psi and grad psi at one point (origin-guarded)."""
        r = np.sqrt(x * x + y * y + z * z)
        if r < 1e-12:
            if r == 0.0:
                ux, uy, uz = 0.0, 0.0, 1.0
            else:
                ux, uy, uz = x / r, y / r, z / r
            r = 1e-12
            x = ux * r
            y = uy * r
            z = uz * r
        else:
            ux, uy, uz = x / r, y / r, z / r
        psi = 0.0 + 0.0j
        gx = 0.0 + 0.0j
        gy = 0.0 + 0.0j
        gz = 0.0 + 0.0j
        for k in range(NK):
            ph = ALPHA[k] * np.exp(-1j * ENERGY[k] * t)
            ex = np.exp(-DEC[k] * r)
            nr = RCNT[k]
            g0 = RAD0[k, nr - 1]
            g1 = RAD1[k, nr - 1]
            for j in range(nr - 2, -1, -1):
                g0 = g0 * r + RAD0[k, j]
                g1 = g1 * r + RAD1[k, j]
            g0 *= ex
            g1 *= ex
            S = 0.0 + 0.0j
            Sx = 0.0 + 0.0j
            Sy = 0.0 + 0.0j
            Sz = 0.0 + 0.0j
            for mi in range(MCNT[k]):
                c = MC[k, mi]
                a = MP[k, mi, 0]
                b = MP[k, mi, 1]
                d = MP[k, mi, 2]
                mono = 1.0
                for _ in range(a):
                    mono *= x
                for _ in range(b):
                    mono *= y
                for _ in range(d):
                    mono *= z
                S += c * mono
                if a > 0:
                    q = float(a)
                    for _ in range(a - 1):
                        q *= x
                    for _ in range(b):
                        q *= y
                    for _ in range(d):
                        q *= z
                    Sx += c * q
                if b > 0:
                    q = float(b)
                    for _ in range(a):
                        q *= x
                    for _ in range(b - 1):
                        q *= y
                    for _ in range(d):
                        q *= z
                    Sy += c * q
                if d > 0:
                    q = float(d)
                    for _ in range(a):
                        q *= x
                    for _ in range(b):
                        q *= y
                    for _ in range(d - 1):
                        q *= z
                    Sz += c * q
            psi += ph * (g0 * S)
            gx += ph * (g1 * ux * S + g0 * Sx)
            gy += ph * (g1 * uy * S + g0 * Sy)
            gz += ph * (g1 * uz * S + g0 * Sz)
        return psi, gx, gy, gz

    @numba.njit(nogil=True, cache=False)
    def _eval_vgh(t, x, y, z):
        """psi, grad psi and the six independent Hessian components."""
        r = np.sqrt(x * x + y * y + z * z)
        if r < 1e-12:
            if r == 0.0:
                ux, uy, uz = 0.0, 0.0, 1.0
            else:
                ux, uy, uz = x / r, y / r, z / r
            r = 1e-12
            x = ux * r
            y = uy * r
            z = uz * r
        else:
            ux, uy, uz = x / r, y / r, z / r
        psi = 0.0 + 0.0j
        gx = 0.0 + 0.0j
        gy = 0.0 + 0.0j
        gz = 0.0 + 0.0j
        hxx = 0.0 + 0.0j
        hxy = 0.0 + 0.0j
        hxz = 0.0 + 0.0j
        hyy = 0.0 + 0.0j
        hyz = 0.0 + 0.0j
        hzz = 0.0 + 0.0j
        for k in range(NK):
            ph = ALPHA[k] * np.exp(-1j * ENERGY[k] * t)
            ex = np.exp(-DEC[k] * r)
            nr = RCNT[k]
            g0 = RAD0[k, nr - 1]
            g1 = RAD1[k, nr - 1]
            g2 = RAD2[k, nr - 1]
            for j in range(nr - 2, -1, -1):
                g0 = g0 * r + RAD0[k, j]
                g1 = g1 * r + RAD1[k, j]
                g2 = g2 * r + RAD2[k, j]
            g0 *= ex
            g1 *= ex
            g2 *= ex
            g1r = g1 / r
            S = 0.0 + 0.0j
            Sx = 0.0 + 0.0j
            Sy = 0.0 + 0.0j
            Sz = 0.0 + 0.0j
            Sxx = 0.0 + 0.0j
            Sxy = 0.0 + 0.0j
            Sxz = 0.0 + 0.0j
            Syy = 0.0 + 0.0j
            Syz = 0.0 + 0.0j
            Szz = 0.0 + 0.0j
            for mi in range(MCNT[k]):
                c = MC[k, mi]
                a = MP[k, mi, 0]
                b = MP[k, mi, 1]
                d = MP[k, mi, 2]
                # power products; exponents never exceed 3
                xa = 1.0
                for _ in range(a):
                    xa *= x
                yb = 1.0
                for _ in range(b):
                    yb *= y
                zd = 1.0
                for _ in range(d):
                    zd *= z
                xa1 = 1.0
                for _ in range(a - 1):
                    xa1 *= x
                yb1 = 1.0
                for _ in range(b - 1):
                    yb1 *= y
                zd1 = 1.0
                for _ in range(d - 1):
                    zd1 *= z
                S += c * (xa * yb * zd)
                if a > 0:
                    Sx += c * a * (xa1 * yb * zd)
                if b > 0:
                    Sy += c * b * (xa * yb1 * zd)
                if d > 0:
                    Sz += c * d * (xa * yb * zd1)
                if a > 1:
                    xa2 = 1.0
                    for _ in range(a - 2):
                        xa2 *= x
                    Sxx += c * a * (a - 1) * (xa2 * yb * zd)
                if b > 1:
                    yb2 = 1.0
                    for _ in range(b - 2):
                        yb2 *= y
                    Syy += c * b * (b - 1) * (xa * yb2 * zd)
                if d > 1:
                    zd2 = 1.0
                    for _ in range(d - 2):
                        zd2 *= z
                    Szz += c * d * (d - 1) * (xa * yb * zd2)
                if a > 0 and b > 0:
                    Sxy += c * a * b * (xa1 * yb1 * zd)
                if a > 0 and d > 0:
                    Sxz += c * a * d * (xa1 * yb * zd1)
                if b > 0 and d > 0:
                    Syz += c * b * d * (xa * yb1 * zd1)
            rad = g2 - g1r
            psi += ph * (g0 * S)
            gx += ph * (g1 * ux * S + g0 * Sx)
            gy += ph * (g1 * uy * S + g0 * Sy)
            gz += ph * (g1 * uz * S + g0 * Sz)
            hxx += ph * (rad * ux * ux * S + g1r * S + 2.0 * g1 * ux * Sx + g0 * Sxx)
            hyy += ph * (rad * uy * uy * S + g1r * S + 2.0 * g1 * uy * Sy + g0 * Syy)
            hzz += ph * (rad * uz * uz * S + g1r * S + 2.0 * g1 * uz * Sz + g0 * Szz)
            hxy += ph * (rad * ux * uy * S + g1 * (ux * Sy + uy * Sx) + g0 * Sxy)
            hxz += ph * (rad * ux * uz * S + g1 * (ux * Sz + uz * Sx) + g0 * Sxz)
            hyz += ph * (rad * uy * uz * S + g1 * (uy * Sz + uz * Sy) + g0 * Syz)
        return psi, gx, gy, gz, hxx, hxy, hxz, hyy, hyz, hzz

    @numba.njit(nogil=True, cache=False)
    def _vel(t, x, y, z):
        """Velocity components and density at one point."""
        psi, gx, gy, gz = _eval_vg(t, x, y, z)
        rho = psi.real * psi.real + psi.imag * psi.imag
        if rho < 5e-301:
            return 0.0, 0.0, 0.0, rho
        # Im(g / psi) = Im(g * conj(psi)) / rho
        vx = (gx.imag * psi.real - gx.real * psi.imag) / rho
        vy = (gy.imag * psi.real - gy.real * psi.imag) / rho
        vz = (gz.imag * psi.real - gz.real * psi.imag) / rho
        if HAS_SPIN:
            rx = 2.0 * (psi.real * gx.real + psi.imag * gx.imag)
            ry = 2.0 * (psi.real * gy.real + psi.imag * gy.imag)
            rz = 2.0 * (psi.real * gz.real + psi.imag * gz.imag)
            inv = 0.5 / rho
            vx += (ry * SZ - rz * SY) * inv
            vy += (rz * SX - rx * SZ) * inv
            vz += (rx * SY - ry * SX) * inv
        return vx, vy, vz, rho

    if P == 0:

        @numba.njit(nogil=True, cache=False)
        def rhs0(t, yv):
            dy = np.empty(3)
            vx, vy, vz, rho = _vel(t, yv[0], yv[1], yv[2])
            dy[0] = vx
            dy[1] = vy
            dy[2] = vz
            return dy, rho

        return rhs0

    @numba.njit(nogil=True, cache=False)
    def rhs(t, yv):
        n = yv.shape[0]
        dy = np.empty(n)
        J = np.empty((3, 3))
        if FD_MODE:
            vx, vy, vz, rho = _vel(t, yv[0], yv[1], yv[2])
            if rho < 5e-301:
                dy[:] = 0.0
                return dy, rho
            rmin = rho
            for axis in range(3):
                x0, y0, z0 = yv[0], yv[1], yv[2]
                if axis == 0:
                    ax, ay, az, ra = _vel(t, x0 + H, y0, z0)
                    bx, by, bz, rb = _vel(t, x0 - H, y0, z0)
                elif axis == 1:
                    ax, ay, az, ra = _vel(t, x0, y0 + H, z0)
                    bx, by, bz, rb = _vel(t, x0, y0 - H, z0)
                else:
                    ax, ay, az, ra = _vel(t, x0, y0, z0 + H)
                    bx, by, bz, rb = _vel(t, x0, y0, z0 - H)
                inv = 0.5 / H
                J[0, axis] = (ax - bx) * inv
                J[1, axis] = (ay - by) * inv
                J[2, axis] = (az - bz) * inv
                if ra < rmin:
                    rmin = ra
                if rb < rmin:
                    rmin = rb
            rho = rmin
        else:
            psi, gx, gy, gz, hxx, hxy, hxz, hyy, hyz, hzz = _eval_vgh(
                t, yv[0], yv[1], yv[2]
            )
            rho = psi.real * psi.real + psi.imag * psi.imag
            if rho < 5e-301:
                dy[:] = 0.0
                return dy, rho
            wx = gx / psi
            wy = gy / psi
            wz = gz / psi
            vx = wx.imag
            vy = wy.imag
            vz = wz.imag
            J[0, 0] = (hxx / psi - wx * wx).imag
            J[0, 1] = (hxy / psi - wx * wy).imag
            J[0, 2] = (hxz / psi - wx * wz).imag
            J[1, 0] = J[0, 1]
            J[1, 1] = (hyy / psi - wy * wy).imag
            J[1, 2] = (hyz / psi - wy * wz).imag
            J[2, 0] = J[0, 2]
            J[2, 1] = J[1, 2]
            J[2, 2] = (hzz / psi - wz * wz).imag
        dy[0] = vx
        dy[1] = vy
        dy[2] = vz
        p = (n - 4) // 3
        for i in range(3):
            for j in range(p):
                acc = (
                    J[i, 0] * yv[3 + j]
                    + J[i, 1] * yv[3 + p + j]
                    + J[i, 2] * yv[3 + 2 * p + j]
                )
                dy[3 + i * p + j] = acc
        dy[n - 1] = J[0, 0] + J[1, 1] + J[2, 2]
        return dy, rho

    return rhs


def make_linear_rhs(matrix: np.ndarray, n_columns: int):
    """Compiled rhs for the constant-Jacobian test field v = A r."""
    import numba

    A = np.ascontiguousarray(matrix, dtype=float)
    if A.shape != (3, 3):
        raise ValueError("linear field matrix must be 3 x 3")
    P = int(n_columns)

    @numba.njit(nogil=True, cache=False)
    def rhs(t, yv):
        n = yv.shape[0]
        dy = np.empty(n)
        for i in range(3):
            dy[i] = A[i, 0] * yv[0] + A[i, 1] * yv[1] + A[i, 2] * yv[2]
        if n > 3:
            p = (n - 4) // 3
            for i in range(3):
                for j in range(p):
                    dy[3 + i * p + j] = (
                        A[i, 0] * yv[3 + j]
                        + A[i, 1] * yv[3 + p + j]
                        + A[i, 2] * yv[3 + 2 * p + j]
                    )
            dy[n - 1] = A[0, 0] + A[1, 1] + A[2, 2]
        return dy, NO_NODES

    return rhs


def make_lorenz_rhs(sigma: float, rho_par: float, beta: float, n_columns: int):
    """Compiled rhs for the Lorenz benchmark field."""
    import numba

    SIG = float(sigma)
    RHO = float(rho_par)
    BET = float(beta)

    @numba.njit(nogil=True, cache=False)
    def rhs(t, yv):
        n = yv.shape[0]
        dy = np.empty(n)
        x, y, z = yv[0], yv[1], yv[2]
        dy[0] = SIG * (y - x)
        dy[1] = x * (RHO - z) - y
        dy[2] = x * y - BET * z
        if n > 3:
            p = (n - 4) // 3
            # rows of the Jacobian [[-sig, sig, 0], [rho - z, -1, -x], [y, x, -beta]]
            for j in range(p):
                m0 = yv[3 + j]
                m1 = yv[3 + p + j]
                m2 = yv[3 + 2 * p + j]
                dy[3 + j] = -SIG * m0 + SIG * m1
                dy[3 + p + j] = (RHO - z) * m0 - m1 - x * m2
                dy[3 + 2 * p + j] = y * m0 + x * m1 - BET * m2
            dy[n - 1] = -SIG - 1.0 - BET
        return dy, NO_NODES

    return rhs
