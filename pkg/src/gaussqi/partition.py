"""Approximate partition of unity built from polynomial-weighted Gaussians.

The construction runs in three stages.  A lattice (uniform, or refined
inside a region where nodes cluster at a finer spacing) supplies anchor
points whose plain Gaussian sum already stays within a small saturation
bound of 1.  Each anchor atom is then fitted, in the least-squares sense
measured by the quadratic form Q, with Gaussian atoms sitting on a few
nearby scattered nodes and carrying polynomial weights of degree <= L.
Finally the fitted polynomials are accumulated per node, giving

    Theta(x) = (pi D)^(-n/2) sum_j P_j(t_j) exp(-|t_j|^2),
    t_j = (x - x_j) / (h_l sqrt(D)),

where h_l is the scale class of node j.  The normal equations use the
correlation kernel of gausscalc.kernel_C throughout, so no numerical
integration is involved.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np
import scipy.linalg

from .errors import EmptyOmega, IllConditioned, UncoveredNode
from .gausscalc import _kernel_c_atom, kernel_C
from .nodes import IndexBox, NodeSet, box_indices, _uniform_ball
from .polynomials import MultiIndex, Polynomial, enumerate_multiindices

log = logging.getLogger(__name__)

RealBox = tuple[tuple[float, float], ...]


# -- refinement coefficients ----------------------------------------------


def refinement_coeffs(H: float, D: float, n: int):
    """Gaussian refinement weights and their minimal index ball.

    A width-(h1^2 D) Gaussian is a lattice sum of width-(h2^2 D) Gaussians
    at spacing h2 = H*h1 with weights

        a_k = (pi D (1 - H^2))^(-n/2) exp(-H^2 |k|^2 / ((1 - H^2) D)),

    up to a sampling error of order exp(-pi^2 D (1 - H^2)).  S collects
    whole lattice shells by increasing |k| until the dropped mass falls
    below that threshold.  Returns (S, {a_k}) with S sorted.
    """
    if not 0.0 < H < 1.0:
        raise ValueError(f"H must lie in (0, 1), got {H}")
    if D <= 0:
        raise ValueError(f"D must be positive, got {D}")
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    rate = H * H / ((1.0 - H * H) * D)
    norm = (math.pi * D * (1.0 - H * H)) ** (-n / 2)
    tail_bound = math.exp(-math.pi**2 * D * (1.0 - H * H))

    # full lattice sum factorizes over axes; the 1-D series converges fast
    span = int(math.ceil(math.sqrt((math.pi**2 * D * (1.0 - H * H) + 60.0) / rate)))
    line = 1.0 + 2.0 * sum(math.exp(-rate * k * k) for k in range(1, span + 1))
    total = norm * line**n

    shells: dict[int, list[MultiIndex]] = {}
    for k in product(range(-span, span + 1), repeat=n):
        r2 = sum(c * c for c in k)
        if r2 <= span * span:
            shells.setdefault(r2, []).append(k)

    weights: dict[MultiIndex, float] = {}
    covered = 0.0
    for r2 in sorted(shells):
        if total - covered < tail_bound:
            break
        w = norm * math.exp(-rate * r2)
        for k in shells[r2]:
            weights[k] = w
            covered += w
    if total - covered >= tail_bound:
        raise AssertionError("refinement ball enumeration span too small")
    return tuple(sorted(weights)), weights


# -- two-scale grids -------------------------------------------------------


@dataclass(frozen=True)
class TwoScaleGrid:
    """Anchor lattice with an optional refined patch region.

    Coarse anchors sit at h1*m for m in z1; refined anchors at
    h1*m + h2*k for m in z2, k in s_set, each weighted by a[k].  z1 and
    z2 partition the working index box.  omega records the refinement
    region that produced z2 (None for directly constructed grids).
    """

    dim: int
    h1: float
    H: float
    D: float
    box: IndexBox
    omega: RealBox | None
    z1: tuple[MultiIndex, ...]
    z2: tuple[MultiIndex, ...]
    s_set: tuple[MultiIndex, ...]
    a: dict[MultiIndex, float]

    def __post_init__(self):
        if self.h1 <= 0:
            raise ValueError(f"h1 must be positive, got {self.h1}")
        if not 0.0 < self.H < 1.0:
            raise ValueError(f"H must lie in (0, 1), got {self.H}")
        if self.D <= 0:
            raise ValueError(f"D must be positive, got {self.D}")
        z1s, z2s = set(self.z1), set(self.z2)
        if z1s & z2s:
            raise ValueError("z1 and z2 overlap")
        if z1s | z2s != set(box_indices(self.box)):
            raise ValueError("z1 and z2 do not partition the working box")
        if self.z2 and not self.s_set:
            raise ValueError("refined indices present but no refinement ball")

    @property
    def h2(self) -> float:
        return self.H * self.h1

    def __len__(self) -> int:
        return len(self.z1) + len(self.z2) * len(self.s_set)

    @cached_property
    def _flat(self):
        pts, scales, weights, levels = [], [], [], []
        for m in self.z1:
            pts.append(self.h1 * np.asarray(m, dtype=float))
            scales.append(self.h1)
            weights.append(1.0)
            levels.append(1)
        for m in self.z2:
            base = self.h1 * np.asarray(m, dtype=float)
            for k in self.s_set:
                pts.append(base + self.h2 * np.asarray(k, dtype=float))
                scales.append(self.h2)
                weights.append(self.a[k])
                levels.append(2)
        return (
            np.array(pts).reshape(len(pts), self.dim),
            np.array(scales),
            np.array(weights),
            np.array(levels),
        )

    @property
    def centers(self) -> np.ndarray:
        """Anchor coordinates, coarse block first, in index order."""
        return self._flat[0]

    @property
    def scales(self) -> np.ndarray:
        return self._flat[1]

    @property
    def weights(self) -> np.ndarray:
        return self._flat[2]

    @property
    def levels(self) -> np.ndarray:
        return self._flat[3]


def build_two_scale(
    omega,
    h1: float,
    H: float,
    D: float,
    n: int,
    *,
    box: IndexBox | None = None,
    rho_cut: float = 6.0,
) -> TwoScaleGrid:
    """Split a working box into coarse indices and refined patches.

    z2 collects the indices m whose whole refinement patch
    {h1*m + h2*k : k in S} lies inside the closed box omega; the rest of
    the working box is coarse.  When no working box is given it covers
    omega padded by ceil(rho_cut*sqrt(D)) cells, far enough that anchors
    beyond it are invisible at evaluation accuracy.
    """
    if h1 <= 0:
        raise ValueError(f"h1 must be positive, got {h1}")
    s_set, a = refinement_coeffs(H, D, n)
    if omega is None or len(omega) == 0:
        raise EmptyOmega("refinement region is empty")
    omega = tuple((float(lo), float(hi)) for lo, hi in omega)
    if len(omega) != n:
        raise ValueError(f"region has {len(omega)} axes, expected {n}")
    if any(lo > hi for lo, hi in omega):
        raise EmptyOmega(f"refinement region {omega} is empty")

    h2 = H * h1
    reach = [max(abs(k[i]) for k in s_set) for i in range(n)]
    patch_box = []
    for (lo, hi), r in zip(omega, reach):
        mlo = math.ceil((lo + h2 * r) / h1 - 1e-9)
        mhi = math.floor((hi - h2 * r) / h1 + 1e-9)
        patch_box.append((mlo, mhi))
    if any(mlo > mhi for mlo, mhi in patch_box):
        need = tuple(2.0 * h2 * r for r in reach)
        raise EmptyOmega(
            f"region {omega} admits no refinement patch; "
            f"each axis must span at least {need}"
        )

    if box is None:
        pad = int(math.ceil(rho_cut * math.sqrt(D)))
        box = tuple(
            (math.floor(lo / h1) - pad, math.ceil(hi / h1) + pad) for lo, hi in omega
        )
    box = tuple((int(lo), int(hi)) for lo, hi in box)
    z2 = tuple(
        m
        for m in box_indices(tuple(patch_box))
        if all(bl <= mi <= bh for mi, (bl, bh) in zip(m, box))
    )
    z2s = set(z2)
    z1 = tuple(m for m in box_indices(box) if m not in z2s)
    return TwoScaleGrid(
        dim=n, h1=float(h1), H=float(H), D=float(D), box=box,
        omega=omega, z1=z1, z2=z2, s_set=s_set, a=a,
    )


def build_single_scale(
    box: IndexBox, h1: float, D: float, n: int, *, H: float = 0.5
) -> TwoScaleGrid:
    """Uniform anchor lattice over an index box (no refined patches).

    H only parameterizes the unused fine scale; any value in (0, 1) gives
    the same grid.
    """
    box = tuple((int(lo), int(hi)) for lo, hi in box)
    if len(box) != n:
        raise ValueError(f"box has {len(box)} axes, expected {n}")
    z1 = tuple(box_indices(box))
    if not z1:
        raise ValueError(f"index box {box} is empty")
    return TwoScaleGrid(
        dim=n, h1=float(h1), H=float(H), D=float(D), box=box,
        omega=None, z1=z1, z2=(), s_set=(), a={},
    )


def generate_two_scale(grid: TwoScaleGrid, kappa1: float, seed: int) -> NodeSet:
    """Scattered nodes covering a grid: one per anchor, drawn from its ball.

    Node i is uniform in B(g_i, kappa1 * scale_i), so the coverage
    condition holds for both scale classes by construction.  Draw order
    follows the anchor order of the grid.
    """
    if not 0 < kappa1 <= 0.5:
        raise ValueError(f"kappa1 must lie in (0, 1/2], got {kappa1}")
    rng = np.random.default_rng(seed)
    centers, scales = grid.centers, grid.scales
    pts = np.array(
        [c + _uniform_ball(rng, grid.dim, kappa1 * s) for c, s in zip(centers, scales)]
    )
    return NodeSet(
        dim=grid.dim,
        points=pts.reshape(len(centers), grid.dim),
        scales=scales.copy(),
        h=grid.h1,
        kappa1=float(kappa1),
    )


def reference_sum(grid: TwoScaleGrid, x):
    """Plain Gaussian anchor sum (all polynomials identically 1).

    Approximates the constant 1 with an error of order
    exp(-pi^2 D (1 - H^2)) away from the working-box boundary; the fitted
    partition replaces each anchor atom with node atoms but inherits this
    reference level.
    """
    pts = np.asarray(x, dtype=float)
    if grid.dim == 1:
        scalar = pts.ndim == 0
        flat = pts.reshape(-1, 1)
    else:
        if pts.shape[-1] != grid.dim:
            raise ValueError(f"points have last axis {pts.shape[-1]}, expected {grid.dim}")
        scalar = pts.ndim == 1
        flat = pts.reshape(-1, grid.dim)
    out = np.zeros(flat.shape[0])
    for g, s, w in zip(grid.centers, grid.scales, grid.weights):
        d2 = np.einsum("ij,ij->i", flat - g, flat - g)
        out += w * np.exp(-d2 / (s * s * grid.D))
    out *= (math.pi * grid.D) ** (-grid.dim / 2)
    if scalar:
        return float(out[0])
    return out.reshape(pts.shape if grid.dim == 1 else pts.shape[:-1])


# -- node selection --------------------------------------------------------


@dataclass(frozen=True)
class SigmaAssignment:
    """Per-anchor node selections and the inverse node -> anchor map.

    sigma[i] lists the node indices fitted against anchor i, closest
    first; gmap[j] lists the anchors whose selection contains node j.
    """

    count: int
    sigma: tuple[tuple[int, ...], ...]
    gmap: dict[int, tuple[int, ...]]


def assign_sigma(grid: TwoScaleGrid, nodes: NodeSet, count: int) -> SigmaAssignment:
    """Select the `count` nearest nodes of the matching scale class per anchor.

    Coarse anchors draw from nodes at scale h1, refined anchors from
    nodes at scale h2; ties are broken by node index.  Raises
    UncoveredNode if any node ends up in no selection, and ValueError if
    the node set carries kappa1 but some anchor has no selected node
    within kappa1 times its scale.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if nodes.dim != grid.dim:
        raise ValueError(f"node dimension {nodes.dim} != grid dimension {grid.dim}")
    masks = {1: np.isclose(nodes.scales, grid.h1, rtol=1e-9, atol=0.0)}
    if len(grid.z2):
        masks[2] = np.isclose(nodes.scales, grid.h2, rtol=1e-9, atol=0.0)
    for level, mask in masks.items():
        if count > int(mask.sum()):
            raise ValueError(
                f"count {count} exceeds the {int(mask.sum())} nodes of scale class {level}"
            )

    sigma = []
    for g, s, level in zip(grid.centers, grid.scales, grid.levels):
        sel = tuple(nodes.nearest(g, k=count, allowed=masks[int(level)]))
        if nodes.kappa1 is not None:
            closest = float(np.linalg.norm(nodes.points[sel[0]] - g))
            if closest > nodes.kappa1 * s * (1.0 + 1e-9):
                raise ValueError(
                    f"no selected node within kappa1*scale of anchor at {g}"
                    f" (closest {closest:.3e}, allowed {nodes.kappa1 * s:.3e})"
                )
        sigma.append(sel)

    gmap: dict[int, list[int]] = {}
    for gi, sel in enumerate(sigma):
        for j in sel:
            gmap.setdefault(j, []).append(gi)
    missing = sorted(set(range(len(nodes))) - gmap.keys())
    if missing:
        raise UncoveredNode(missing)
    return SigmaAssignment(
        count=count,
        sigma=tuple(sigma),
        gmap={j: tuple(v) for j, v in sorted(gmap.items())},
    )


# -- local least-squares fits ----------------------------------------------


def _local_betas(n: int, L: int) -> list[MultiIndex]:
    return enumerate_multiindices(n, 0, L)


def _betas_for_width(n: int, width: int) -> list[MultiIndex]:
    L = 0
    while True:
        betas = _local_betas(n, L)
        if len(betas) == width:
            return betas
        if len(betas) > width:
            raise ValueError(f"coefficient width {width} matches no degree in dim {n}")
        L += 1


def _normal_system(y: np.ndarray, betas, D: float, D0: float):
    """Gram matrix and right-hand side of the anchor-fit normal equations."""
    m = y.shape[0]
    nb = len(betas)
    size = m * nb
    mat = np.empty((size, size))
    for j in range(m):
        for bi, beta in enumerate(betas):
            row = j * nb + bi
            for k in range(m):
                for gi, gamma in enumerate(betas):
                    col = k * nb + gi
                    if col < row:
                        continue
                    val = kernel_C(beta, gamma, y[j], y[k], D, D0)
                    mat[row, col] = val
                    mat[col, row] = val
    origin = np.zeros(y.shape[1])
    rhs = np.array(
        [kernel_C(beta, (0,) * y.shape[1], y[j], origin, D, D0) for j in range(m) for beta in betas]
    )
    return mat, rhs


def _normal_systems_batched(Y: np.ndarray, betas, D: float, D0: float, *, chunk: int = 4096):
    """Gram matrices and right sides for many anchors in one sweep.

    Y has shape (A, m, n): per-anchor scaled offsets of the selected
    nodes.  All kernel atoms share one quadratic form, so their
    polynomial factors are evaluated together as a coefficient matrix
    times a chunked monomial basis; this is what keeps large 2-D builds
    affordable.  Row ordering matches _normal_system.
    """
    A, m, n = Y.shape
    nb = len(betas)
    keys = [(bi, gi) for bi in range(nb) for gi in range(bi, nb)]
    atoms = [
        _kernel_c_atom(tuple(betas[bi]), tuple(betas[gi]), float(D), float(D0)) for bi, gi in keys
    ]
    zero = (0,) * n
    atoms += [_kernel_c_atom(tuple(b), zero, float(D), float(D0)) for b in betas]

    pair = np.empty((A, m, m, 2 * n))
    pair[..., :n] = Y[:, :, None, :]
    pair[..., n:] = Y[:, None, :, :]
    right = np.zeros((A, m, 2 * n))
    right[..., :n] = Y
    pts = np.concatenate([pair.reshape(-1, 2 * n), right.reshape(-1, 2 * n)])

    support: dict[MultiIndex, int] = {}
    for atom in atoms:
        for alpha in atom.poly.coeffs:
            support.setdefault(alpha, len(support))
    cmat = np.zeros((len(atoms), len(support)))
    for t, atom in enumerate(atoms):
        for alpha, c in atom.poly.coeffs.items():
            cmat[t, support[alpha]] = c
    alphas = list(support)
    maxdeg = [max(a[i] for a in alphas) for i in range(2 * n)]
    quad = atoms[0].quad

    vals = np.empty((len(atoms), pts.shape[0]))
    for lo in range(0, pts.shape[0], chunk):
        blk = pts[lo : lo + chunk]
        pows = []
        for i in range(2 * n):
            tab = np.empty((maxdeg[i] + 1, blk.shape[0]))
            tab[0] = 1.0
            for p in range(1, maxdeg[i] + 1):
                tab[p] = tab[p - 1] * blk[:, i]
            pows.append(tab)
        basis = np.empty((len(alphas), blk.shape[0]))
        for r, alpha in enumerate(alphas):
            acc = pows[0][alpha[0]]
            for i in range(1, 2 * n):
                if alpha[i]:
                    acc = acc * pows[i][alpha[i]]
            basis[r] = acc
        expo = np.exp(np.einsum("pi,ij,pj->p", blk, quad, blk))
        vals[:, lo : lo + chunk] = (cmat @ basis) * expo

    size = m * nb
    cut = A * m * m
    mats = np.empty((A, size, size))
    mv = mats.reshape(A, m, nb, m, nb)
    for t, (bi, gi) in enumerate(keys):
        block = vals[t, :cut].reshape(A, m, m)
        mv[:, :, bi, :, gi] = block
        if gi != bi:
            mv[:, :, gi, :, bi] = block.transpose(0, 2, 1)
    rhs = np.empty((A, size))
    rv = rhs.reshape(A, m, nb)
    for bi in range(nb):
        rv[:, :, bi] = vals[len(keys) + bi, cut:].reshape(A, m)
    return mats, rhs


def _solve_assembled(
    mat: np.ndarray, rhs: np.ndarray, g, cond_limit: float, fallback: bool
) -> np.ndarray:
    eigs = np.linalg.eigvalsh(mat)
    cond = math.inf if eigs[0] <= 0 else float(eigs[-1] / eigs[0])
    if cond > cond_limit:
        if not fallback:
            raise IllConditioned(cond, cond_limit)
        log.warning(
            "normal system at anchor %s has condition %.3e, using least squares",
            np.asarray(g).tolist(), cond,
        )
        return scipy.linalg.lstsq(mat, rhs, lapack_driver="gelsy")[0]
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(mat), rhs)


def solve_local_system(
    sigma_points,
    g,
    h: float,
    D: float,
    D0: float,
    L: int,
    *,
    cond_limit: float = 1e12,
    fallback: bool = False,
) -> np.ndarray:
    """Fit node atoms to the anchor atom at g; returns coefficients (m, nb).

    Row j holds the polynomial coefficients of node j over the degree-L
    multi-indices in graded lexicographic order, in the variable
    (x - x_j)/(h sqrt(D)).  The symmetric positive definite normal system
    is solved by Cholesky after a condition estimate; past cond_limit the
    call raises IllConditioned, or falls back to column-pivoted least
    squares with a logged warning when fallback is set.
    """
    pts = np.atleast_2d(np.asarray(sigma_points, dtype=float))
    if not 0 < D0 < D:
        raise ValueError(f"need 0 < D0 < D, got D0={D0}, D={D}")
    if L < 0:
        raise ValueError(f"degree must be >= 0, got {L}")
    if h <= 0:
        raise ValueError(f"scale must be positive, got {h}")
    m, n = pts.shape
    y = (pts - np.asarray(g, dtype=float).reshape(1, n)) / h
    betas = _local_betas(n, L)
    mat, rhs = _normal_system(y, betas, D, D0)
    coeff = _solve_assembled(mat, rhs, g, cond_limit, fallback)
    return coeff.reshape(m, len(betas))


def q_form_value(c, sigma_points, g, h: float, D: float, D0: float, L: int) -> float:
    """Squared fit error Q(c) of the anchor approximation, up to scaling.

    Q(c) = (pi D / 2)^(n/2) (1 - 2 c.r + c.M.c) with the same Gram data
    as the solver; Q(0) is the squared norm of the anchor atom itself.
    """
    pts = np.atleast_2d(np.asarray(sigma_points, dtype=float))
    m, n = pts.shape
    y = (pts - np.asarray(g, dtype=float).reshape(1, n)) / h
    betas = _local_betas(n, L)
    mat, rhs = _normal_system(y, betas, D, D0)
    cvec = np.asarray(c, dtype=float).reshape(m * len(betas))
    value = 1.0 - 2.0 * float(cvec @ rhs) + float(cvec @ mat @ cvec)
    return (math.pi * D / 2.0) ** (n / 2) * value


# -- assembly and evaluation -----------------------------------------------


@dataclass
class ThetaEntry:
    """One node's contribution: P((x - point)/(scale sqrt(D))) times its Gaussian."""

    node: int
    point: np.ndarray
    scale: float
    poly: Polynomial


@dataclass
class ThetaFunction:
    """Assembled partition sum over polynomial-weighted node Gaussians."""

    dim: int
    D: float
    entries: list[ThetaEntry]

    def __call__(self, x, *, rho_cut: float | None = None):
        """Evaluate Theta at one point or many.

        rho_cut drops node atoms with |x - x_j| > rho_cut * scale * sqrt(D);
        None evaluates every term.
        """
        pts = np.asarray(x, dtype=float)
        if self.dim == 1:
            scalar = pts.ndim == 0
            flat = pts.reshape(-1, 1)
        else:
            if pts.shape[-1] != self.dim:
                raise ValueError(
                    f"points have last axis {pts.shape[-1]}, expected {self.dim}"
                )
            scalar = pts.ndim == 1
            flat = pts.reshape(-1, self.dim)
        out = np.zeros(flat.shape[0])
        lim = None if rho_cut is None else float(rho_cut) ** 2
        root = math.sqrt(self.D)
        for e in self.entries:
            t = (flat - e.point) / (e.scale * root)
            r2 = np.einsum("ij,ij->i", t, t)
            mask = slice(None) if lim is None else r2 <= lim
            arg = t[mask]
            out[mask] += e.poly(arg[:, 0] if self.dim == 1 else arg) * np.exp(-r2[mask])
        out *= (math.pi * self.D) ** (-self.dim / 2)
        if scalar:
            return float(out[0])
        return out.reshape(pts.shape if self.dim == 1 else pts.shape[:-1])

    # -- serialization -----------------------------------------------------

    def to_csv(self, path) -> None:
        """One row per entry: node coordinates, scale, D, then polynomial
        coefficients over graded-lex multi-indices padded to the largest
        degree present."""
        top = max((e.poly.degree for e in self.entries), default=0)
        alphas = enumerate_multiindices(self.dim, 0, max(top, 0))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [f"x{i + 1}" for i in range(self.dim)]
                + ["h", "D"]
                + ["c" + "".join(f"_{a}" for a in alpha) for alpha in alphas]
            )
            for e in self.entries:
                row = [repr(float(v)) for v in e.point]
                row.append(repr(float(e.scale)))
                row.append(repr(float(self.D)))
                row.extend(repr(float(v)) for v in e.poly.coeff_vector(alphas))
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "ThetaFunction":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        dim = 0
        while dim < len(header) and header[dim] == f"x{dim + 1}":
            dim += 1
        if dim == 0 or header[dim : dim + 2] != ["h", "D"]:
            raise ValueError(f"unrecognized partition CSV header: {header}")
        alphas = []
        for name in header[dim + 2 :]:
            parts = name.split("_")
            if parts[0] != "c" or len(parts) != dim + 1:
                raise ValueError(f"unrecognized coefficient column: {name}")
            alphas.append(tuple(int(p) for p in parts[1:]))
        entries = []
        dval = None
        for i, row in enumerate(r for r in rows[1:] if r):
            vals = [float(v) for v in row]
            if dval is None:
                dval = vals[dim + 1]
            elif vals[dim + 1] != dval:
                raise ValueError("rows disagree on D")
            poly = Polynomial(dim, dict(zip(alphas, vals[dim + 2 :])))
            entries.append(
                ThetaEntry(
                    node=i,
                    point=np.array(vals[:dim]),
                    scale=vals[dim],
                    poly=poly,
                )
            )
        if dval is None:
            raise ValueError("partition CSV has no entries")
        return cls(dim=dim, D=dval, entries=entries)


def assemble_theta(
    grid: TwoScaleGrid,
    assignment: SigmaAssignment,
    coeffs,
    nodes: NodeSet,
) -> ThetaFunction:
    """Accumulate local fits into one polynomial per node.

    coeffs[i] is the solve_local_system output for anchor i.  A node
    selected by several anchors sums their polynomials; refined anchors
    contribute with their refinement weight.  Every selected node yields
    exactly one entry.
    """
    acc: dict[int, dict[MultiIndex, float]] = {}
    node_scale: dict[int, float] = {}
    weights, scales = grid.weights, grid.scales
    for gi, sel in enumerate(assignment.sigma):
        c = np.asarray(coeffs[gi], dtype=float)
        if c.shape[0] != len(sel):
            raise ValueError(
                f"anchor {gi}: {c.shape[0]} coefficient rows for {len(sel)} nodes"
            )
        betas = _betas_for_width(grid.dim, c.shape[1])
        w = float(weights[gi])
        for row, j in enumerate(sel):
            bucket = acc.setdefault(j, {})
            for bi, beta in enumerate(betas):
                bucket[beta] = bucket.get(beta, 0.0) + w * c[row, bi]
            node_scale[j] = float(scales[gi])
    entries = [
        ThetaEntry(
            node=j,
            point=nodes.points[j].copy(),
            scale=node_scale[j],
            poly=Polynomial(grid.dim, bucket),
        )
        for j, bucket in sorted(acc.items())
    ]
    return ThetaFunction(dim=grid.dim, D=grid.D, entries=entries)


def build_theta(
    nodes: NodeSet,
    grid: TwoScaleGrid,
    *,
    count: int = 5,
    L: int = 4,
    D0: float | None = None,
    cond_limit: float = 1e12,
    fallback: bool = True,
) -> ThetaFunction:
    """Assignment, local fits, and assembly in one call.

    D0 defaults to 3D/4.  With fallback set (the default here), anchors
    whose normal system is too ill-conditioned for Cholesky are fitted by
    least squares instead of aborting the whole build.
    """
    if D0 is None:
        D0 = 0.75 * grid.D
    if not 0 < D0 < grid.D:
        raise ValueError(f"need 0 < D0 < D, got D0={D0}, D={grid.D}")
    if L < 0:
        raise ValueError(f"degree must be >= 0, got {L}")
    assignment = assign_sigma(grid, nodes, count)
    centers, scales = grid.centers, grid.scales
    sel = np.asarray(assignment.sigma, dtype=int)
    Y = (nodes.points[sel] - centers[:, None, :]) / scales[:, None, None]
    betas = _local_betas(grid.dim, L)
    mats, rhss = _normal_systems_batched(Y, betas, grid.D, D0)
    coeffs = [
        _solve_assembled(mats[a], rhss[a], centers[a], cond_limit, fallback).reshape(
            count, len(betas)
        )
        for a in range(sel.shape[0])
    ]
    return assemble_theta(grid, assignment, coeffs, nodes)


# -- diagnostics -----------------------------------------------------------


@dataclass
class ThetaScan:
    """Dense evaluation of Theta over a box: sample points, values, sup |Theta-1|."""

    points: np.ndarray
    values: np.ndarray
    sup: float


def theta_scan(
    theta: ThetaFunction, box: RealBox, resolution: int, *, rho_cut: float = 6.0
) -> ThetaScan:
    """Evaluate Theta on a uniform grid over a box and report sup |Theta - 1|.

    resolution counts samples per axis, endpoints included.  The caller
    chooses a box away from the node-set boundary; deviations there are
    boundary deficit, not fit error.
    """
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    if len(box) != theta.dim:
        raise ValueError(f"box has {len(box)} axes, expected {theta.dim}")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in box]
    if theta.dim == 1:
        points = axes[0].reshape(-1, 1)
        values = theta(axes[0], rho_cut=rho_cut)
    else:
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([m.ravel() for m in mesh], axis=-1)
        values = theta(points, rho_cut=rho_cut)
    values = np.asarray(values).ravel()
    return ThetaScan(points=points, values=values, sup=float(np.max(np.abs(values - 1.0))))


def saturation_reference(D: float, terms: int):
    """Deviation profile of the exact uniform-grid Gaussian sum.

    Returns x -> 2 sum_{j=1..terms} exp(-pi^2 D j^2) cos(2 pi j x), the
    periodic error of the plain lattice sum against 1; its amplitude is
    the saturation level no fitted partition can beat.
    """
    if terms < 1:
        raise ValueError(f"terms must be >= 1, got {terms}")
    js = np.arange(1, terms + 1, dtype=float)
    amps = 2.0 * np.exp(-math.pi**2 * D * js**2)

    def profile(x):
        arr = np.asarray(x, dtype=float)
        flat = arr.reshape(-1)
        vals = (amps[:, None] * np.cos(2.0 * math.pi * js[:, None] * flat[None, :])).sum(axis=0)
        if arr.ndim == 0:
            return float(vals[0])
        return vals.reshape(arr.shape)

    return profile
