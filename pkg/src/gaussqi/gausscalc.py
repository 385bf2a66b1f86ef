"""Exact calculus for polynomial-weighted Gaussians.

A :class:`GaussianTerm` is P(x - c) exp(-|x - c|^2 / width).  This class
of functions is closed under differentiation, multiplication and
integration, which is what the local least-squares systems and the
cubature weights are built from.  :class:`QuadExpTerm` extends the same
closure to exponentials of arbitrary quadratic forms; the correlation
kernels at the bottom of the module live in that larger class.

All manipulations are symbolic in the polynomial factor, so results are
exact up to floating-point rounding in the coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .polynomials import MultiIndex, Polynomial, s_beta


@dataclass
class GaussianTerm:
    """P(x - center) * exp(-|x - center|^2 / width)."""

    center: np.ndarray
    width: float
    poly: Polynomial

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=float))
        self.width = float(self.width)
        if self.width <= 0:
            raise ValueError(f"width must be positive, got {self.width}")
        if self.poly.dim != self.center.size:
            raise ValueError(
                f"polynomial dimension {self.poly.dim} does not match center size {self.center.size}"
            )

    @property
    def dim(self) -> int:
        return self.center.size

    @classmethod
    def pure(cls, center, width: float) -> "GaussianTerm":
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(center, width, Polynomial.constant(center.size, 1.0))

    def __call__(self, x):
        if self.dim == 1:
            z = np.asarray(x, dtype=float) - self.center[0]
            return self.poly(z) * np.exp(-(z**2) / self.width)
        z = np.asarray(x, dtype=float) - self.center
        r2 = np.sum(z**2, axis=-1)
        return self.poly(z) * np.exp(-r2 / self.width)


def apply_diffop(op: Polynomial, scale: float, term: GaussianTerm) -> GaussianTerm:
    """Apply the constant-coefficient operator op(scale * d/dx) to a term.

    Returns the resulting GaussianTerm (same center and width; only the
    polynomial factor changes).
    """
    if op.dim != term.dim:
        raise ValueError(f"operator dimension {op.dim} does not match term dimension {term.dim}")
    n = term.dim
    cache: dict[MultiIndex, Polynomial] = {(0,) * n: term.poly}
    total = Polynomial.zero(n)
    for alpha, c in op.terms():
        total = total + (c * scale ** sum(alpha)) * _gauss_partial(alpha, cache, term.width, n)
    return GaussianTerm(term.center, term.width, total)


def _gauss_partial(alpha: MultiIndex, cache, width: float, n: int) -> Polynomial:
    if alpha in cache:
        return cache[alpha]
    i = next(idx for idx, a in enumerate(alpha) if a > 0)
    e_i = tuple(1 if idx == i else 0 for idx in range(n))
    prev = _gauss_partial(tuple(a - e for a, e in zip(alpha, e_i)), cache, width, n)
    # d/dz_i (P exp(-|z|^2/w)) = (dP/dz_i - (2 z_i / w) P) exp(-|z|^2/w)
    out = prev.derivative(i) - (2.0 / width) * (Polynomial.monomial(n, e_i) * prev)
    cache[alpha] = out
    return out


def gaussian_moment(alpha: MultiIndex, width: float) -> float:
    """Integral of x^alpha exp(-|x|^2 / width) over R^n (zero for odd powers)."""
    if width <= 0:
        raise ValueError(f"width must be positive, got {width}")
    out = 1.0
    for a in alpha:
        if a % 2 == 1:
            return 0.0
        k = a // 2
        dfact = math.prod(range(a - 1, 0, -2)) if a > 0 else 1
        out *= width ** (k + 0.5) * math.sqrt(math.pi) * dfact / 2**k
    return out


def term_integral(term: GaussianTerm) -> float:
    """Integral of a GaussianTerm over R^n (center drops out)."""
    return sum(c * gaussian_moment(alpha, term.width) for alpha, c in term.poly.coeffs.items())


def inner_product(a: GaussianTerm, b: GaussianTerm) -> float:
    """L2 inner product of two terms, evaluated in closed form.

    The product of the two Gaussian factors is itself a Gaussian centered
    at the width-weighted average of the centers, carrying the separation
    factor exp(-|c_a - c_b|^2 / (w_a + w_b)); the polynomial factors are
    recentred there and integrated moment by moment.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    wa, wb = a.width, b.width
    w = wa * wb / (wa + wb)
    center = (a.center / wa + b.center / wb) * w
    sep = float(np.sum((a.center - b.center) ** 2))
    factor = math.exp(-sep / (wa + wb))
    pa = a.poly.compose_affine(1.0, center - a.center)
    pb = b.poly.compose_affine(1.0, center - b.center)
    prod = pa * pb
    total = sum(c * gaussian_moment(alpha, w) for alpha, c in prod.coeffs.items())
    return factor * total


@dataclass
class QuadExpTerm:
    """P(z) * exp(z^T quad z) for a symmetric matrix quad."""

    quad: np.ndarray
    poly: Polynomial

    def __post_init__(self):
        self.quad = np.asarray(self.quad, dtype=float)
        m = self.poly.dim
        if self.quad.shape != (m, m):
            raise ValueError(f"quadratic form shape {self.quad.shape} does not match dim {m}")
        if not np.allclose(self.quad, self.quad.T):
            raise ValueError("quadratic form must be symmetric")

    @property
    def dim(self) -> int:
        return self.poly.dim

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        expo = np.einsum("...i,ij,...j->...", z, self.quad, z)
        return self.poly(z) * np.exp(expo)


def apply_diffop_quad(op: Polynomial, scale: float, term: QuadExpTerm) -> QuadExpTerm:
    """Same contract as apply_diffop, for quadratic-form exponentials."""
    if op.dim != term.dim:
        raise ValueError(f"operator dimension {op.dim} does not match term dimension {term.dim}")
    m = term.dim
    cache: dict[MultiIndex, Polynomial] = {(0,) * m: term.poly}
    total = Polynomial.zero(m)
    for alpha, c in op.terms():
        total = total + (c * scale ** sum(alpha)) * _quad_partial(alpha, cache, term.quad, m)
    return QuadExpTerm(term.quad, total)


def _quad_partial(alpha: MultiIndex, cache, quad: np.ndarray, m: int) -> Polynomial:
    if alpha in cache:
        return cache[alpha]
    i = next(idx for idx, a in enumerate(alpha) if a > 0)
    e_i = tuple(1 if idx == i else 0 for idx in range(m))
    prev = _quad_partial(tuple(a - e for a, e in zip(alpha, e_i)), cache, quad, m)
    # d/dz_i (P exp(z^T A z)) = (dP/dz_i + 2 (A z)_i P) exp(z^T A z)
    lin = Polynomial(
        m,
        {
            tuple(1 if idx == j else 0 for idx in range(m)): 2.0 * quad[i, j]
            for j in range(m)
            if quad[i, j] != 0.0
        },
    )
    out = prev.derivative(i) + lin * prev
    cache[alpha] = out
    return out


def _embed(p: Polynomial, m: int, offset: int) -> Polynomial:
    """View a dim-n polynomial as a dim-m polynomial acting on a coordinate block."""
    n = p.dim
    return Polynomial(
        m,
        {(0,) * offset + alpha + (0,) * (m - offset - n): c for alpha, c in p.coeffs.items()},
    )


@lru_cache(maxsize=None)
def _kernel_b_atom(beta: MultiIndex, gamma: MultiIndex) -> GaussianTerm:
    n = len(beta)
    # In the difference variable z = x - y, d/dx maps to d/dz and d/dy to -d/dz.
    op = s_beta(beta).compose_affine(-1.0) * s_beta(gamma)
    return apply_diffop(op, 1.0, GaussianTerm.pure(np.zeros(n), 2.0))


def kernel_B(beta: MultiIndex, gamma: MultiIndex, x, y) -> float:
    """Gram kernel of the derived Gaussian system.

    Applies S_beta(-d/dx) and S_gamma(-d/dy) to exp(-|x - y|^2 / 2); the
    result depends on x - y only.
    """
    beta, gamma = tuple(beta), tuple(gamma)
    if len(beta) != len(gamma):
        raise ValueError(f"index dimensions differ: {beta} vs {gamma}")
    atom = _kernel_b_atom(beta, gamma)
    z = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if atom.dim == 1:
        z = float(np.squeeze(z))
    return float(atom(z))


@lru_cache(maxsize=None)
def _kernel_c_atom(beta: MultiIndex, gamma: MultiIndex, D: float, D0: float) -> QuadExpTerm:
    n = len(beta)
    m = 2 * n
    A = np.zeros((m, m))
    diag = (D - 2.0 * D0) / (2.0 * D0**2)
    cross = D / (2.0 * D0**2)
    for i in range(n):
        A[i, i] = diag
        A[n + i, n + i] = diag
        A[i, n + i] = cross
        A[n + i, i] = cross
    op = _embed(s_beta(beta), m, 0) * _embed(s_beta(gamma), m, n)
    return apply_diffop_quad(op, -math.sqrt(D), QuadExpTerm(A, Polynomial.constant(m, 1.0)))


def kernel_C(beta: MultiIndex, gamma: MultiIndex, x, y, D: float, D0: float) -> float:
    """Correlation kernel of weighted Gaussian least squares.

    Applies S_beta(-sqrt(D) d/dx) and S_gamma(-sqrt(D) d/dy) to

        exp((D - 2 D0)(|x|^2 + |y|^2) / (2 D0^2)) * exp(D (x . y) / D0^2),

    the cross-correlation of two width-D0 Gaussians under the interior
    weight; requires 0 < D0 < D.
    """
    beta, gamma = tuple(beta), tuple(gamma)
    if len(beta) != len(gamma):
        raise ValueError(f"index dimensions differ: {beta} vs {gamma}")
    if not 0 < D0 < D:
        raise ValueError(f"need 0 < D0 < D, got D0={D0}, D={D}")
    atom = _kernel_c_atom(beta, gamma, float(D), float(D0))
    z = np.concatenate([np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))])
    return float(atom(z))
