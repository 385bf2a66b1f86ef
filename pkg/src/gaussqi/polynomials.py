"""Multi-index bookkeeping and a small multivariate polynomial algebra.

Everything downstream (Hermite-type operator polynomials, Gaussian
calculus, local least-squares systems) manipulates polynomials as sparse
coefficient maps keyed by exponent tuples.  Multi-index enumerations are
always in graded lexicographic order, so flattened coefficient vectors
have one documented layout everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

MultiIndex = tuple[int, ...]


def grlex_key(alpha: MultiIndex):
    """Sort key realising graded lexicographic order.

    Indices are compared first by total degree, then lexicographically
    with the leading axis dominant, e.g. for dim 2 degree 2:
    (2,0), (1,1), (0,2).
    """
    return (sum(alpha), tuple(-a for a in alpha))


def enumerate_multiindices(dim: int, min_degree: int, max_degree: int) -> list[MultiIndex]:
    """All multi-indices of the given dimension with min <= |alpha| <= max,
    in graded lexicographic order."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if min_degree < 0 or max_degree < min_degree:
        raise ValueError(f"bad degree range [{min_degree}, {max_degree}]")
    out: list[MultiIndex] = []
    for total in range(min_degree, max_degree + 1):
        out.extend(_fixed_degree(dim, total))
    return out


def _fixed_degree(dim: int, total: int) -> list[MultiIndex]:
    if dim == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        out.extend((first, *rest) for rest in _fixed_degree(dim - 1, total - first))
    return out


def multiindex_factorial(alpha: MultiIndex) -> int:
    out = 1
    for a in alpha:
        out *= math.factorial(a)
    return out


@dataclass
class Polynomial:
    """Sparse multivariate polynomial: {exponent tuple: coefficient}.

    Zero coefficients are dropped on construction so the empty map is the
    canonical zero polynomial.
    """

    dim: int
    coeffs: dict[MultiIndex, float] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for alpha, c in self.coeffs.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.dim:
                raise ValueError(f"exponent {alpha} does not match dim {self.dim}")
            if any(a < 0 for a in alpha):
                raise ValueError(f"negative exponent in {alpha}")
            if c != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + float(c)
        self.coeffs = clean

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, dim: int) -> "Polynomial":
        return cls(dim, {})

    @classmethod
    def constant(cls, dim: int, value: float) -> "Polynomial":
        return cls(dim, {(0,) * dim: value})

    @classmethod
    def monomial(cls, dim: int, alpha: MultiIndex, coeff: float = 1.0) -> "Polynomial":
        return cls(dim, {tuple(alpha): coeff})

    # -- queries -----------------------------------------------------------

    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial reports -1."""
        if not self.coeffs:
            return -1
        return max(sum(a) for a in self.coeffs)

    def terms(self) -> list[tuple[MultiIndex, float]]:
        """(exponent, coefficient) pairs in graded lexicographic order."""
        return sorted(self.coeffs.items(), key=lambda item: grlex_key(item[0]))

    def coeff_vector(self, alphas: list[MultiIndex]) -> np.ndarray:
        return np.array([self.coeffs.get(tuple(a), 0.0) for a in alphas])

    def __call__(self, x):
        """Evaluate at one point or many.

        For dim 1 the argument is interpreted elementwise (scalars and
        arrays of any shape).  For dim >= 2 the last axis holds the
        coordinates, so shapes (dim,) and (m, dim) both work.
        """
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            pts = x.reshape(-1, 1)
            out_shape = x.shape
        else:
            if x.shape[-1] != self.dim:
                raise ValueError(f"point has {x.shape[-1]} coordinates, expected {self.dim}")
            pts = x.reshape(-1, self.dim)
            out_shape = x.shape[:-1]
        out = np.zeros(pts.shape[0])
        for alpha, c in self.coeffs.items():
            term = np.full(pts.shape[0], c)
            for i, a in enumerate(alpha):
                if a:
                    term *= pts[:, i] ** a
            out += term
        out = out.reshape(out_shape)
        return out if out.shape else float(out)

    # -- algebra -----------------------------------------------------------

    def __add__(self, other):
        other = self._coerce(other)
        merged = dict(self.coeffs)
        for alpha, c in other.coeffs.items():
            merged[alpha] = merged.get(alpha, 0.0) + c
        return Polynomial(self.dim, merged)

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        return Polynomial(self.dim, {a: -c for a, c in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if np.isscalar(other):
            return Polynomial(self.dim, {a: c * float(other) for a, c in self.coeffs.items()})
        other = self._coerce(other)
        out: dict[MultiIndex, float] = {}
        for a1, c1 in self.coeffs.items():
            for a2, c2 in other.coeffs.items():
                key = tuple(x + y for x, y in zip(a1, a2))
                out[key] = out.get(key, 0.0) + c1 * c2
        return Polynomial(self.dim, out)

    def __rmul__(self, other):
        return self.__mul__(other)

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.dim != self.dim:
                raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
            return other
        if np.isscalar(other):
            return Polynomial.constant(self.dim, float(other))
        raise TypeError(f"cannot combine Polynomial with {type(other)!r}")

    def derivative(self, axis: int) -> "Polynomial":
        out = {}
        for alpha, c in self.coeffs.items():
            a = alpha[axis]
            if a == 0:
                continue
            key = alpha[:axis] + (a - 1,) + alpha[axis + 1:]
            out[key] = out.get(key, 0.0) + c * a
        return Polynomial(self.dim, out)

    def compose_affine(self, scale: float, shift=None) -> "Polynomial":
        """Return P(scale * x + shift) expanded in the new variable.

        `scale` is a scalar applied to every coordinate; `shift` is a
        vector of length dim (or None for no shift).
        """
        if shift is None:
            shift = np.zeros(self.dim)
        shift = np.asarray(shift, dtype=float).reshape(self.dim)
        out = Polynomial.zero(self.dim)
        for alpha, c in self.coeffs.items():
            term = Polynomial.constant(self.dim, c)
            for i, a in enumerate(alpha):
                if a == 0:
                    continue
                axis_poly = _binomial_power(self.dim, i, float(scale), shift[i], a)
                term = term * axis_poly
            out = out + term
        return out


def _binomial_power(dim: int, axis: int, scale: float, shift: float, power: int) -> Polynomial:
    """(scale * x_axis + shift)^power as a Polynomial."""
    coeffs = {}
    for k in range(power + 1):
        c = math.comb(power, k) * scale**k * shift ** (power - k)
        if c != 0.0:
            alpha = tuple(k if i == axis else 0 for i in range(dim))
            coeffs[alpha] = coeffs.get(alpha, 0.0) + c
    return Polynomial(dim, coeffs)


# -- Hermite-type operator polynomials ------------------------------------


@lru_cache(maxsize=None)
def _hermite_coeffs_1d(k: int) -> tuple[float, ...]:
    """Coefficients of the physicists' Hermite polynomial H_k, index = power.

    Three-term recurrence H_{k+1}(t) = 2 t H_k(t) - 2 k H_{k-1}(t).
    """
    if k == 0:
        return (1.0,)
    if k == 1:
        return (0.0, 2.0)
    prev2 = _hermite_coeffs_1d(k - 2)
    prev1 = _hermite_coeffs_1d(k - 1)
    out = [0.0] * (k + 1)
    for m, c in enumerate(prev1):
        out[m + 1] += 2.0 * c
    for m, c in enumerate(prev2):
        out[m] -= 2.0 * (k - 1) * c
    return tuple(out)


@lru_cache(maxsize=None)
def _s_coeffs_1d(k: int) -> tuple[float, ...]:
    """Coefficients of S_k(t) = (2i)^{-k} H_k(t / 2i); all real.

    H_k has parity k, so each surviving power m has k + m even and the
    factor i^{-(k+m)} collapses to the sign (-1)^{(k+m)/2}.
    """
    h = _hermite_coeffs_1d(k)
    out = [0.0] * (k + 1)
    for m, c in enumerate(h):
        if c == 0.0:
            continue
        out[m] = c * (-1.0) ** ((k + m) // 2) / 2.0 ** (k + m)
    return tuple(out)


def _tensor_from_1d(coeff_lists: list[tuple[float, ...]]) -> Polynomial:
    dim = len(coeff_lists)
    out: dict[MultiIndex, float] = {}
    for combo in product(*(enumerate(cs) for cs in coeff_lists)):
        c = 1.0
        for _, ci in combo:
            c *= ci
        if c != 0.0:
            alpha = tuple(m for m, _ in combo)
            out[alpha] = out.get(alpha, 0.0) + c
    return Polynomial(dim, out)


def hermite(beta: MultiIndex) -> Polynomial:
    """Tensor-product physicists' Hermite polynomial H_beta.

    Satisfies H_beta(t) = exp(|t|^2) (-d/dt)^beta exp(-|t|^2).
    """
    beta = tuple(int(b) for b in beta)
    if any(b < 0 for b in beta):
        raise ValueError(f"negative entry in {beta}")
    return _tensor_from_1d([_hermite_coeffs_1d(b) for b in beta])


def s_beta(beta: MultiIndex) -> Polynomial:
    """Operator polynomial S_beta with x^beta exp(-|x|^2) = S_beta(d/dx) exp(-|x|^2).

    Real rescaling of the Hermite polynomial at imaginary argument:
    S_beta(t) = (2i)^{-|beta|} H_beta(t / 2i).
    """
    beta = tuple(int(b) for b in beta)
    if any(b < 0 for b in beta):
        raise ValueError(f"negative entry in {beta}")
    return _tensor_from_1d([_s_coeffs_1d(b) for b in beta])
