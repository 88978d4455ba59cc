"""Hydrogen bound eigenstates in closed form, atomic units throughout.

Each state is factored as ``phi(x, y, z) = g(r) * S(x, y, z)`` where ``S`` is
the solid harmonic ``r**l * Y_lm`` (complex, Condon-Shortley phase) expanded
into Cartesian monomials, and ``g(r) = R_nl(r) / r**l`` is a polynomial times
``exp(-r/n)``.  Both factors are smooth, so values, gradients and Hessians
come out in closed form and vectorize over trailing point axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

import numpy as np

#: Largest principal quantum number with generated closed forms.
MAX_N = 4

#: Radius below which evaluation snaps to the guard sphere (keeps the radial
#: unit vector well defined; bound orbits never come this close to a node).
ORIGIN_GUARD = 1e-12

_ZHAT = np.array([0.0, 0.0, 1.0])


def energy(n: int) -> float:
    """Bound-state energy ``-1/(2 n**2)`` in hartree; phase factor is exp(-i*E*t)."""
    if n < 1:
        raise ValueError(f"principal quantum number must be >= 1, got {n}")
    return -0.5 / (n * n)


@dataclass(frozen=True)
class QuantumNumbers:
    """(n, l, m) labels of a bound state; validated on construction."""

    n: int
    l: int
    m: int

    def __post_init__(self):
        for name in ("n", "l", "m"):
            if not isinstance(getattr(self, name), int):
                raise TypeError(f"quantum number {name} must be an integer")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.n > MAX_N:
            raise ValueError(f"closed forms are generated for n <= {MAX_N}, got n={self.n}")
        if not 0 <= self.l < self.n:
            raise ValueError(f"need 0 <= l < n, got l={self.l}, n={self.n}")
        if abs(self.m) > self.l:
            raise ValueError(f"need |m| <= l, got m={self.m}, l={self.l}")

    @property
    def energy(self) -> float:
        return energy(self.n)


@dataclass(frozen=True)
class ComplexField3:
    """A complex scalar field sample: value plus Cartesian gradient.

    For batched input points both fields carry matching leading axes.
    """

    value: np.ndarray
    gradient: np.ndarray


class EigenstateTables(NamedTuple):
    """Precomputed coefficient tables for one (n, l, m) state."""

    l: int
    decay: float          # exponent rate 1/n in exp(-r/n)
    rad0: np.ndarray      # ascending coefficients of P in g = P(r) exp(-r/n)
    rad1: np.ndarray      # coefficients of P1 with g' = P1(r) exp(-r/n)
    rad2: np.ndarray      # coefficients of P2 with g'' = P2(r) exp(-r/n)
    mono_coef: np.ndarray  # complex monomial coefficients of S
    mono_pow: np.ndarray   # (M, 3) integer exponents of x, y, z


def _binomial_power(a: int, sign: int) -> dict:
    """Monomials of ``(x + sign*i*y)**a`` as {(px, py): (re, im)} Fractions."""
    out = {}
    for i in range(a + 1):
        q = a - i
        c = Fraction(math.comb(a, i))
        re, im = [(1, 0), (0, 1), (-1, 0), (0, -1)][q % 4]
        if sign < 0:
            im = -im
        out[(i, q)] = (c * re, c * im)
    return out


def _poly_mul(pa: dict, pb: dict) -> dict:
    out = {}
    for (ax, ay), (ar, ai) in pa.items():
        for (bx, by), (br, bi) in pb.items():
            key = (ax + bx, ay + by)
            r0, i0 = out.get(key, (Fraction(0), Fraction(0)))
            out[key] = (r0 + ar * br - ai * bi, i0 + ar * bi + ai * br)
    return out


@lru_cache(maxsize=None)
def _solid_harmonic(l: int, m: int) -> tuple:
    """Cartesian monomials of ``r**l * Y_lm`` with Condon-Shortley phase.

    Built exactly with rational arithmetic; a single square-root prefactor is
    applied at the very end.
    """
    acc: dict = {}
    for k in range(max(0, -m), (l - m) // 2 + 1):
        a = m + k
        b = k
        c = l - m - 2 * k
        pref = Fraction((-1) ** a, 2 ** (a + b))
        pref /= math.factorial(a) * math.factorial(b) * math.factorial(c)
        prod = _poly_mul(_binomial_power(a, +1), _binomial_power(b, -1))
        for (px, py), (re, im) in prod.items():
            key = (px, py, c)
            r0, i0 = acc.get(key, (Fraction(0), Fraction(0)))
            acc[key] = (r0 + pref * re, i0 + pref * im)
    scale = math.sqrt(
        (2 * l + 1) / (4 * math.pi) * math.factorial(l + m) * math.factorial(l - m)
    )
    coefs, pows = [], []
    for (px, py, pz), (re, im) in sorted(acc.items()):
        cval = complex(float(re) * scale, float(im) * scale)
        if cval != 0:
            coefs.append(cval)
            pows.append((px, py, pz))
    return np.array(coefs, complex), np.array(pows, np.int64).reshape(len(pows), 3)


@lru_cache(maxsize=None)
def _radial_tables(n: int, l: int) -> tuple:
    """Coefficients of P, P1, P2 with g = P e^{-r/n}, g' = P1 e^{-r/n}, g'' = P2 e^{-r/n}."""
    k = n - l - 1
    p0 = [Fraction(0)] * (k + 1)
    for j in range(k + 1):
        cj = Fraction((-1) ** j * math.comb(n + l, k - j), math.factorial(j))
        p0[j] = cj * Fraction(2, n) ** (j + l)
    norm = math.sqrt(
        (2.0 / n) ** 3 * math.factorial(n - l - 1) / (2 * n * math.factorial(n + l))
    )
    b = Fraction(1, n)

    def diff_minus_decay(p):
        out = [Fraction(0)] * len(p)
        for j in range(len(p) - 1):
            out[j] += (j + 1) * p[j + 1]
        for j in range(len(p)):
            out[j] -= b * p[j]
        return out

    p1 = diff_minus_decay(p0)
    p2 = diff_minus_decay(p1)

    def to_float(p):
        return np.array([float(c) * norm for c in p])

    return to_float(p0), to_float(p1), to_float(p2), float(b)


@lru_cache(maxsize=None)
def tables_for(qn: QuantumNumbers) -> EigenstateTables:
    """Coefficient tables for one state, cached per (n, l, m)."""
    rad0, rad1, rad2, decay = _radial_tables(qn.n, qn.l)
    mono_coef, mono_pow = _solid_harmonic(qn.l, qn.m)
    return EigenstateTables(qn.l, decay, rad0, rad1, rad2, mono_coef, mono_pow)


def _polyval(coefs: np.ndarray, r: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r) + coefs[-1]
    for c in coefs[-2::-1]:
        out = out * r + c
    return out


def _guarded_geometry(points: np.ndarray):
    """Radius, unit vector and effective coordinates with the origin guard.

    Points inside the guard sphere are moved to radius ORIGIN_GUARD along
    their own direction (+z for the exact origin), so the returned geometry
    is the limit along the evaluation path.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != 3:
        raise ValueError(f"points must have a trailing axis of size 3, got {pts.shape}")
    r = np.sqrt(np.sum(pts * pts, axis=-1))
    rr = r[..., None]
    u = np.where(rr > 0.0, pts / np.where(rr == 0.0, 1.0, rr), _ZHAT)
    r_eff = np.maximum(r, ORIGIN_GUARD)
    xyz_eff = u * r_eff[..., None]
    return r_eff, u, xyz_eff


def evaluate_tables(tables: EigenstateTables, points, want_hessian: bool = False):
    """Value, gradient and (optionally) Hessian of the state at ``points``.

    ``points`` has shape (..., 3); outputs broadcast accordingly:
    value (...,), gradient (..., 3), hessian (..., 3, 3) or None.
    """
    r, u, xyz = _guarded_geometry(points)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    decay = np.exp(-tables.decay * r)
    g0 = _polyval(tables.rad0, r) * decay
    g1 = _polyval(tables.rad1, r) * decay
    g2 = _polyval(tables.rad2, r) * decay

    shape = r.shape
    S = np.zeros(shape, complex)
    Sg = np.zeros(shape + (3,), complex)
    Sh = np.zeros(shape + (3, 3), complex) if want_hessian else None

    # Powers up to the maximum exponent in any monomial (l <= 3 so this is tiny).
    pmax = int(tables.mono_pow.max(initial=0))
    base = [x, y, z]
    pw = [[np.ones(shape)] for _ in range(3)]
    for axis in range(3):
        for p in range(1, pmax + 1):
            pw[axis].append(pw[axis][-1] * base[axis])

    for c, (px, py, pz) in zip(tables.mono_coef, tables.mono_pow):
        es = (int(px), int(py), int(pz))
        m = pw[0][es[0]] * pw[1][es[1]] * pw[2][es[2]]
        S = S + c * m
        for axis in range(3):
            e = es[axis]
            if e == 0:
                continue
            rest = 1.0
            for other in range(3):
                rest = rest * pw[other][es[other] - (1 if other == axis else 0)]
            Sg[..., axis] += c * e * rest
        if want_hessian:
            for i in range(3):
                for j in range(i, 3):
                    ei, ej = es[i], es[j]
                    if i == j:
                        if ei < 2:
                            continue
                        coeff = ei * (ei - 1)
                    else:
                        if ei == 0 or ej == 0:
                            continue
                        coeff = ei * ej
                    exps = list(es)
                    exps[i] -= 1
                    exps[j] -= 1
                    term = c * coeff * pw[0][exps[0]] * pw[1][exps[1]] * pw[2][exps[2]]
                    Sh[..., i, j] += term
                    if i != j:
                        Sh[..., j, i] += term

    value = g0 * S
    gradient = g1[..., None] * u * S[..., None] + g0[..., None] * Sg
    if not want_hessian:
        return value, gradient, None

    hess = np.zeros(shape + (3, 3), complex)
    g1_over_r = g1 / r
    rad_term = g2 - g1_over_r
    for i in range(3):
        for j in range(3):
            hess[..., i, j] = (
                rad_term * u[..., i] * u[..., j] * S
                + (g1_over_r * S if i == j else 0.0)
                + g1 * (u[..., i] * Sg[..., j] + u[..., j] * Sg[..., i])
                + g0 * Sh[..., i, j]
            )
    return value, gradient, hess


def eval_eigenstate(qn: QuantumNumbers, point) -> ComplexField3:
    """Evaluate phi_nlm and its gradient at a point (or batch of points)."""
    value, gradient, _ = evaluate_tables(tables_for(qn), point)
    return ComplexField3(value=value, gradient=gradient)
