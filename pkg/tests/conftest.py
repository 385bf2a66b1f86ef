"""Shared test helpers.

The Gram positivity checks need more than float64: tight node clusters
push the smallest eigenvalue below machine resolution, where eigvalsh
reports harmless negative noise.  The checker below escalates to a
high-precision Cholesky factorisation (exact reuse of the kernel's
polynomial coefficients) whenever float64 cannot resolve the sign.
"""

import mpmath
import numpy as np

from gaussqi.gausscalc import _kernel_b_atom
from gaussqi.polynomials import enumerate_multiindices


def kernel_b_highprec(beta, gamma, x, y):
    """kernel_B evaluated in mpmath arithmetic (coefficients are exact dyadics)."""
    atom = _kernel_b_atom(tuple(beta), tuple(gamma))
    z = [
        mpmath.mpf(float(a)) - mpmath.mpf(float(b))
        for a, b in zip(np.atleast_1d(x), np.atleast_1d(y))
    ]
    val = mpmath.mpf(0)
    for alpha, c in atom.poly.coeffs.items():
        t = mpmath.mpf(c)
        for zi, a in zip(z, alpha):
            if a:
                t *= zi**a
        val += t
    return val * mpmath.exp(-sum(zi * zi for zi in z) / 2)


def gram_matrix(ys, betas, kernel):
    rows = []
    for yj in ys:
        for b in betas:
            rows.append([kernel(b, g, yj, yk) for yk in ys for g in betas])
    return rows


def gram_smallest_eig_positive(ys, L, kernel_f64) -> bool:
    """True iff the Gram matrix over nodes ys and orders |beta| <= L is PD.

    Uses float64 eigvalsh when the answer is resolvable there, otherwise a
    60-digit Cholesky: for a symmetric matrix the factorisation exists
    exactly when the smallest eigenvalue is positive.
    """
    n = np.atleast_2d(ys).shape[1]
    betas = enumerate_multiindices(n, 0, L)
    M = np.array(gram_matrix(ys, betas, kernel_f64))
    lam = np.linalg.eigvalsh(M).min()
    floor = 100 * np.finfo(float).eps * np.linalg.norm(M, 2)
    if abs(lam) > floor:
        return lam > 0
    with mpmath.workdps(60):
        rows = gram_matrix(ys, betas, kernel_b_highprec)
        size = len(rows)
        Mmp = mpmath.matrix(size, size)
        for i in range(size):
            for j in range(size):
                Mmp[i, j] = rows[i][j]
        try:
            mpmath.cholesky(Mmp)
            return True
        except ValueError:
            return False


def separated_points(rng, m, n, min_dist, lo=-2.0, hi=2.0):
    pts = []
    while len(pts) < m:
        cand = rng.uniform(lo, hi, n)
        if all(np.linalg.norm(cand - p) >= min_dist for p in pts):
            pts.append(cand)
    return np.array(pts)
